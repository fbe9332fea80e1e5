#pragma once

#include <fstream>

#include "json.hpp"
#include "savime/tars.hpp"

namespace savime {

using nlohmann::json;

namespace catalog_detail {

inline const json& need(const json& j, const std::string& key,
                        const std::string& path) {
  if (!j.contains(key))
    throw Error(ErrorCode::CorruptCatalog, "missing key " + path + "." + key);
  return j.at(key);
}

inline std::string need_str(const json& j, const std::string& key,
                            const std::string& path) {
  const json& v = need(j, key, path);
  if (!v.is_string())
    throw Error(ErrorCode::CorruptCatalog, path + "." + key + " must be a string");
  return v.get<std::string>();
}

inline ElemType need_type(const json& j, const std::string& key,
                          const std::string& path) {
  ElemType t;
  if (!parse_elem_type(need_str(j, key, path), t))
    throw Error(ErrorCode::CorruptCatalog, path + "." + key + ": unknown type");
  return t;
}

}  // namespace catalog_detail

inline json domain_to_json(const Domain& d) {
  json j;
  if (d.is_implicit()) {
    j["implicit"] = {{"lower", d.lower()},
                     {"upper", d.upper()},
                     {"spacing", d.spacing()}};
  } else {
    j["dataset"] = d.values()->name();
  }
  return j;
}

inline json schema_to_json(const TarSchema& schema, const DatasetStore& store) {
  json j;
  j["datasets"] = json::array();
  for (const auto& ds : store.list()) {
    j["datasets"].push_back({{"name", ds->name()},
                             {"type", elem_name(ds->type())},
                             {"length", ds->length()},
                             {"path", ds->path()},
                             {"origin", ds->origin() == DatasetOrigin::Ingested
                                            ? "ingested"
                                            : "derived"}});
  }
  j["types"] = json::array();
  for (const auto* t : schema.types()) {
    j["types"].push_back(
        {{"name", t->name},
         {"mandatory", std::vector<std::string>(t->mandatory.begin(),
                                                t->mandatory.end())},
         {"optional", std::vector<std::string>(t->optional.begin(),
                                               t->optional.end())}});
  }
  j["tars"] = json::array();
  for (const auto& tar : schema.tars()) {
    json jt;
    jt["name"] = tar->def->name;
    jt["elements"] = json::array();
    for (const auto& e : tar->def->elements) {
      json je = {{"name", e.name},
                 {"kind", e.is_dimension() ? "dimension" : "attribute"},
                 {"type", elem_name(e.type)}};
      if (e.domain) je["domain"] = domain_to_json(*e.domain);
      jt["elements"].push_back(std::move(je));
    }
    if (tar->def->binding) {
      jt["type"] = {{"name", tar->def->binding->type_name},
                    {"role_map", tar->def->binding->role_map}};
    }
    jt["subtars"] = json::array();
    for (const auto& sub : tar->subtars) {
      json js;
      js["dims"] = json::array();
      for (const auto& spec : sub->dim_specs) {
        json jd = {{"dimension", spec.dimension},
                   {"kind", spec_kind_name(spec.kind)},
                   {"lower", spec.lower},
                   {"upper", spec.upper}};
        if (spec.data) {
          if (spec.data->origin() == DatasetOrigin::Derived)
            throw Error(ErrorCode::CorruptCatalog,
                        tar->def->name + ": subTAR index dataset " +
                            spec.data->name() + " is not registered");
          jd["dataset"] = spec.data->name();
        }
        js["dims"].push_back(std::move(jd));
      }
      js["atts"] = json::object();
      for (const auto& [att, ds] : sub->atts) {
        if (ds->origin() == DatasetOrigin::Derived)
          throw Error(ErrorCode::CorruptCatalog,
                      tar->def->name + ": subTAR dataset " + ds->name() +
                          " is not registered");
        js["atts"][att] = ds->name();
      }
      jt["subtars"].push_back(std::move(js));
    }
    j["tars"].push_back(std::move(jt));
  }
  j["links"] = json::array();
  for (const auto& l : schema.links()) {
    j["links"].push_back({{"left_tar", l.left_tar},
                          {"left_element", l.left_element},
                          {"right_tar", l.right_tar},
                          {"right_element", l.right_element}});
  }
  return j;
}

// Writes the catalog; dataset payloads stay in their files, referenced by
// path. Serialization is deterministic, so saving an unchanged schema is
// byte-stable.
inline void persist_catalog(const TarSchema& schema, const DatasetStore& store,
                            const std::string& path) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, path);
  f << schema_to_json(schema, store).dump(2) << "\n";
}

// Loads the catalog into a fresh schema, registering every dataset in the
// store. A missing file yields an empty schema.
inline TarSchema load_catalog(const std::string& path, DatasetStore& store) {
  TarSchema schema;
  std::ifstream f(path, std::ios::binary);
  if (!f) return schema;
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::CorruptCatalog, e.what());
  }
  using namespace catalog_detail;

  for (const auto& jd : need(j, "datasets", "$")) {
    std::string name = need_str(jd, "name", "$.datasets[]");
    std::string file = need_str(jd, "path", "$.datasets[]");
    if (!std::filesystem::exists(file))
      throw Error(ErrorCode::CorruptCatalog,
                  "dataset " + name + ": missing file " + file);
    store.open_existing(name, file, need_type(jd, "type", "$.datasets[]"));
  }
  for (const auto& jt : need(j, "types", "$")) {
    schema.define_type(need_str(jt, "name", "$.types[]"),
                       need(jt, "mandatory", "$.types[]")
                           .get<std::vector<std::string>>(),
                       need(jt, "optional", "$.types[]")
                           .get<std::vector<std::string>>());
  }
  for (const auto& jt : need(j, "tars", "$")) {
    std::string tar_name = need_str(jt, "name", "$.tars[]");
    std::string tpath = "$.tars[" + tar_name + "]";
    std::vector<DataElement> elements;
    for (const auto& je : need(jt, "elements", tpath)) {
      DataElement e;
      e.name = need_str(je, "name", tpath + ".elements[]");
      e.kind = need_str(je, "kind", tpath + ".elements[]") == "dimension"
                   ? ElemKind::Dimension
                   : ElemKind::Attribute;
      e.type = need_type(je, "type", tpath + ".elements[]");
      if (je.contains("domain")) {
        const json& jd = je.at("domain");
        if (jd.contains("implicit")) {
          const json& ji = jd.at("implicit");
          e.domain = Domain::implicit(e.type, ji.at("lower").get<double>(),
                                      ji.at("upper").get<double>(),
                                      ji.at("spacing").get<double>());
        } else {
          e.domain = Domain::explicit_values(
              e.type, store.require(need_str(jd, "dataset", tpath + ".domain")));
        }
      }
      elements.push_back(std::move(e));
    }
    std::optional<std::string> type_name;
    std::map<std::string, std::string> role_map;
    if (jt.contains("type")) {
      type_name = need_str(jt.at("type"), "name", tpath + ".type");
      role_map = need(jt.at("type"), "role_map", tpath + ".type")
                     .get<std::map<std::string, std::string>>();
    }
    schema.define_tar(tar_name, type_name, std::move(elements), role_map);
    for (const auto& js : need(jt, "subtars", tpath)) {
      std::vector<DimensionSpec> specs;
      for (const auto& jd : need(js, "dims", tpath + ".subtars[]")) {
        DimensionSpec spec;
        spec.dimension = need_str(jd, "dimension", tpath + ".subtars[].dims[]");
        std::string kind = need_str(jd, "kind", tpath + ".subtars[].dims[]");
        if (kind == "ordered") spec.kind = SpecKind::Ordered;
        else if (kind == "partial") spec.kind = SpecKind::Partial;
        else if (kind == "total") spec.kind = SpecKind::Total;
        else
          throw Error(ErrorCode::CorruptCatalog,
                      tpath + ": bad spec kind " + kind);
        spec.lower = need(jd, "lower", tpath).get<int64_t>();
        spec.upper = need(jd, "upper", tpath).get<int64_t>();
        if (jd.contains("dataset"))
          spec.data = store.require(jd.at("dataset").get<std::string>());
        specs.push_back(std::move(spec));
      }
      std::map<std::string, DatasetPtr> atts;
      for (const auto& [att, ds] :
           need(js, "atts", tpath + ".subtars[]").items())
        atts[att] = store.require(ds.get<std::string>());
      schema.attach_subtar(tar_name, std::move(specs), std::move(atts));
    }
  }
  for (const auto& jl : need(j, "links", "$")) {
    Link l;
    l.left_tar = need_str(jl, "left_tar", "$.links[]");
    l.left_element = need_str(jl, "left_element", "$.links[]");
    l.right_tar = need_str(jl, "right_tar", "$.links[]");
    l.right_element = need_str(jl, "right_element", "$.links[]");
    schema.add_link(std::move(l));
  }
  return schema;
}

}  // namespace savime
