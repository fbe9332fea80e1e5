#pragma once

#include "savime/catalog.hpp"
#include "savime/config.hpp"
#include "savime/engine.hpp"

namespace savime {

struct StatementResult {
  bool is_query = false;
  std::string message;  // DDL acknowledgement
  std::optional<QueryResult> result;
};

// The embedded engine: storage, schema snapshots and statement execution.
// DDL statements are serialized and publish a fresh schema snapshot; queries
// run against the snapshot current when they were parsed.
class Database {
 public:
  explicit Database(Config cfg)
      : cfg_(std::move(cfg)),
        store_(StorageConfig{cfg_.storage_dir, cfg_.effective_temp_dir(),
                             cfg_.max_resident_bytes, cfg_.prefault}) {
    Logger::instance().set_level(parse_log_level(cfg_.log_level));
    schema_ = std::make_shared<TarSchema>(
        load_catalog(cfg_.effective_catalog(), store_));
  }

  const Config& config() const { return cfg_; }
  DatasetStore& store() { return store_; }

  SchemaPtr snapshot() const {
    std::lock_guard<std::mutex> lk(mu_);
    return schema_;
  }

  ExecConfig exec_config() const {
    ExecConfig ec;
    ec.parallel_grain = cfg_.threads;
    ec.post_export_hook = cfg_.post_export_hook;
    return ec;
  }

  StatementResult execute(const std::string& text) {
    SchemaPtr snap = snapshot();
    Statement st = parse(text, *snap);
    StatementResult out;
    if (st.query) {
      out.is_query = true;
      QueryPlan plan = optimize(std::move(*st.query));
      out.result = run_plan(plan, *snap, store_, exec_config());
      return out;
    }
    exec_ddl(*st.ddl, snap, out);
    return out;
  }

  QueryResult query(const std::string& text) {
    StatementResult r = execute(text);
    if (!r.is_query)
      throw Error(ErrorCode::BadValue, "statement is not a query");
    return std::move(*r.result);
  }

  // Registers an ingested dataset file (CLI load-dataset, tests).
  DatasetPtr load_dataset(const std::string& name, const std::string& path,
                          ElemType type, AdoptMode mode = AdoptMode::Copy) {
    std::lock_guard<std::mutex> lk(mu_);
    auto ds = store_.create_dataset(name, path, type, mode);
    save_locked();
    return ds;
  }

  // Registers a dataset pushed over the wire: the payload is written to a
  // scratch file once and adopted without touching elements.
  DatasetPtr push_dataset(const std::string& name, ElemType type,
                          std::span<const std::byte> bytes) {
    std::string scratch = cfg_.effective_temp_dir() + "/push_" + name + ".bin";
    {
      std::ofstream f(scratch, std::ios::trunc | std::ios::binary);
      if (!f) throw Error(ErrorCode::IoError, scratch);
      f.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    }
    std::lock_guard<std::mutex> lk(mu_);
    auto ds = store_.create_dataset(name, scratch, type, AdoptMode::Move);
    save_locked();
    return ds;
  }

  // Applies a schema mutation under the DDL lock and publishes the snapshot.
  template <typename Fn>
  void apply_ddl(Fn&& fn) {
    std::lock_guard<std::mutex> lk(mu_);
    auto next = std::make_shared<TarSchema>(*schema_);
    fn(*next);
    schema_ = std::move(next);
    save_locked();
  }

 private:
  void save_locked() {
    persist_catalog(*schema_, store_, cfg_.effective_catalog());
  }

  static double parse_double(const std::string& s, const std::string& what) {
    try {
      size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadValue, what + ": bad number '" + s + "'");
    }
  }

  static int64_t parse_int(const std::string& s, const std::string& what) {
    try {
      size_t used = 0;
      int64_t v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadValue, what + ": bad integer '" + s + "'");
    }
  }

  // dims: "name,implicit,type,lower,upper,spacing | name,explicit,type,dataset"
  std::vector<DataElement> parse_dims(const std::string& spec) {
    std::vector<DataElement> out;
    for (const auto& part : split(spec, '|')) {
      std::string p = trim(part);
      if (p.empty()) continue;
      auto fields = split(p, ',');
      for (auto& f : fields) f = trim(f);
      if (fields.size() < 4)
        throw Error(ErrorCode::BadValue, "bad dimension spec '" + p + "'");
      DataElement e;
      e.name = fields[0];
      e.kind = ElemKind::Dimension;
      if (!parse_elem_type(fields[2], e.type))
        throw Error(ErrorCode::BadValue, "unknown element type " + fields[2]);
      if (fields[1] == "implicit") {
        if (fields.size() != 6)
          throw Error(ErrorCode::BadValue, "implicit spec needs bounds+spacing");
        e.domain = Domain::implicit(e.type, parse_double(fields[3], e.name),
                                    parse_double(fields[4], e.name),
                                    parse_double(fields[5], e.name));
      } else if (fields[1] == "explicit") {
        e.domain = Domain::explicit_values(e.type, store_.require(fields[3]));
      } else {
        throw Error(ErrorCode::BadValue, "dimension kind must be implicit|explicit");
      }
      out.push_back(std::move(e));
    }
    return out;
  }

  // atts: "name,type | name,type"
  std::vector<DataElement> parse_atts(const std::string& spec) {
    std::vector<DataElement> out;
    for (const auto& part : split(spec, '|')) {
      std::string p = trim(part);
      if (p.empty()) continue;
      auto fields = split(p, ',');
      for (auto& f : fields) f = trim(f);
      if (fields.size() != 2)
        throw Error(ErrorCode::BadValue, "bad attribute spec '" + p + "'");
      DataElement e;
      e.name = fields[0];
      e.kind = ElemKind::Attribute;
      if (!parse_elem_type(fields[1], e.type))
        throw Error(ErrorCode::BadValue, "unknown element type " + fields[1]);
      out.push_back(std::move(e));
    }
    return out;
  }

  // "elem:role, elem:role"
  static std::map<std::string, std::string> parse_role_map(const std::string& s) {
    std::map<std::string, std::string> out;
    for (const auto& part : split(s, ',')) {
      std::string p = trim(part);
      if (p.empty()) continue;
      size_t colon = p.find(':');
      if (colon == std::string::npos)
        throw Error(ErrorCode::BadValue, "role map entries are elem:role");
      out[trim(p.substr(0, colon))] = trim(p.substr(colon + 1));
    }
    return out;
  }

  void exec_ddl(const DdlStatement& d, const SchemaPtr& snap,
                StatementResult& out) {
    using Kind = DdlStatement::Kind;
    switch (d.kind) {
      case Kind::CreateType: {
        auto parse_roles = [](const std::string& csv) {
          std::vector<std::string> roles;
          for (const auto& r : split(csv, ','))
            if (!trim(r).empty()) roles.push_back(trim(r));
          return roles;
        };
        apply_ddl([&](TarSchema& s) {
          s.define_type(d.name, parse_roles(d.mandatory_csv),
                        parse_roles(d.optional_csv));
        });
        out.message = "type " + d.name + " created";
        break;
      }
      case Kind::CreateTar: {
        auto dims = parse_dims(d.dims_spec);
        auto atts = parse_atts(d.atts_spec);
        dims.insert(dims.end(), atts.begin(), atts.end());
        std::optional<std::string> type_name;
        if (!d.type_name.empty() && d.type_name != "*")
          type_name = d.type_name;
        apply_ddl([&](TarSchema& s) {
          s.define_tar(d.name, type_name, dims, parse_role_map(d.role_map_spec));
        });
        out.message = "tar " + d.name + " created";
        break;
      }
      case Kind::CreateDataset: {
        std::lock_guard<std::mutex> lk(mu_);
        store_.create_dataset(d.name, d.payload, d.elem_type);
        save_locked();
        out.message = "dataset " + d.name + " created";
        break;
      }
      case Kind::CreateDatasetLiteral: {
        std::vector<Scalar> values;
        for (const auto& part : split(d.payload, ',')) {
          std::string p = trim(part);
          if (p.empty()) continue;
          if (elem_is_integer(d.elem_type))
            values.push_back(Scalar(parse_int(p, d.name)));
          else
            values.push_back(Scalar(parse_double(p, d.name)));
        }
        std::lock_guard<std::mutex> lk(mu_);
        store_.create_dataset_literal(d.name, d.elem_type, values);
        save_locked();
        out.message = "dataset " + d.name + " created";
        break;
      }
      case Kind::LoadSubtar: {
        std::vector<DimensionSpec> specs;
        for (const auto& part : split(d.dims_spec, '|')) {
          std::string p = trim(part);
          if (p.empty()) continue;
          auto fields = split(p, ',');
          for (auto& f : fields) f = trim(f);
          if (fields.size() < 4)
            throw Error(ErrorCode::BadValue, "bad subtar spec '" + p + "'");
          DimensionSpec spec;
          spec.dimension = fields[0];
          if (fields[1] == "ordered") spec.kind = SpecKind::Ordered;
          else if (fields[1] == "partial") spec.kind = SpecKind::Partial;
          else if (fields[1] == "total") spec.kind = SpecKind::Total;
          else
            throw Error(ErrorCode::BadValue,
                        "spec kind must be ordered|partial|total");
          spec.lower = parse_int(fields[2], spec.dimension);
          spec.upper = parse_int(fields[3], spec.dimension);
          if (spec.kind != SpecKind::Ordered) {
            if (fields.size() != 5)
              throw Error(ErrorCode::BadValue,
                          spec.dimension + ": index dataset required");
            spec.data = store_.require(fields[4]);
          }
          specs.push_back(std::move(spec));
        }
        std::map<std::string, DatasetPtr> atts;
        for (const auto& part : split(d.atts_spec, ',')) {
          std::string p = trim(part);
          if (p.empty()) continue;
          size_t colon = p.find(':');
          if (colon == std::string::npos)
            throw Error(ErrorCode::BadValue, "attribute bindings are att:dataset");
          atts[trim(p.substr(0, colon))] = store_.require(trim(p.substr(colon + 1)));
        }
        apply_ddl([&](TarSchema& s) {
          s.attach_subtar(d.name, specs, atts);
        });
        out.message = "subtar loaded into " + d.name;
        break;
      }
      case Kind::DropTar:
        apply_ddl([&](TarSchema& s) { s.drop_tar(d.name); });
        out.message = "tar " + d.name + " dropped";
        break;
      case Kind::DropDataset: {
        std::lock_guard<std::mutex> lk(mu_);
        if (schema_->uses_dataset(d.name))
          throw Error(ErrorCode::DatasetInUse, d.name);
        store_.drop(d.name);
        save_locked();
        out.message = "dataset " + d.name + " dropped";
        break;
      }
      case Kind::Materialize: {
        QueryResult result = run_plan(*d.subplan, *snap, store_, exec_config());
        materialize_result(d.name, result);
        out.message = "materialized " + d.name + " (" +
                      std::to_string(result.subtars.size()) + " subtars, " +
                      std::to_string(result.total_cells()) + " cells)";
        break;
      }
    }
  }

  // Promotes a query result into a stored TAR: derived datasets are copied
  // into the storage directory under registered names.
  void materialize_result(const std::string& name, const QueryResult& result) {
    std::lock_guard<std::mutex> lk(mu_);
    auto next = std::make_shared<TarSchema>(*schema_);
    std::optional<std::string> type_name;
    std::map<std::string, std::string> role_map;
    if (result.schema->binding) {
      type_name = result.schema->binding->type_name;
      role_map = result.schema->binding->role_map;
    }
    next->define_tar(name, type_name, result.schema->elements, role_map);
    size_t seq = 0;
    auto promote = [&](const DatasetPtr& ds, const std::string& elem) {
      if (ds->origin() != DatasetOrigin::Derived) return ds;
      std::string reg = name + "__s" + std::to_string(seq) + "__" + elem;
      return store_.create_dataset(reg, ds->path(), ds->type());
    };
    for (const auto& sub : result.subtars) {
      std::vector<DimensionSpec> specs = sub->dim_specs;
      for (auto& spec : specs)
        if (spec.data) spec.data = promote(spec.data, spec.dimension);
      std::map<std::string, DatasetPtr> atts;
      for (const auto& [att, ds] : sub->atts) atts[att] = promote(ds, att);
      next->attach_subtar(name, std::move(specs), std::move(atts));
      ++seq;
    }
    schema_ = std::move(next);
    save_locked();
  }

  Config cfg_;
  DatasetStore store_;
  SchemaPtr schema_;
  mutable std::mutex mu_;
};

}  // namespace savime
