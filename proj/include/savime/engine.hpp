#pragma once

#include <deque>
#include <unordered_map>

#include "savime/parser.hpp"
#include "savime/vtk.hpp"

namespace savime {

struct ExecConfig {
  unsigned parallel_grain = 0;  // worker count for cell-range tasks; 0 = cores
  bool verify_outputs = true;   // check emitted subTARs against inferred schemas
  std::string post_export_hook;
};

struct CacheKey {
  int node = 0;
  uint64_t ordinal = 0;
  bool operator<(const CacheKey& o) const {
    return node != o.node ? node < o.node : ordinal < o.ordinal;
  }
};

struct CacheStats {
  uint64_t created = 0;
  uint64_t freed = 0;
  uint64_t live = 0;
  uint64_t peak_live = 0;
  uint64_t release_violations = 0;
  std::map<CacheKey, int> created_per_key;
  std::map<CacheKey, int> freed_per_key;
  std::map<int, int> node_consumers;
};

struct ExecStats {
  LayoutStats layout;
  CacheStats cache;
};

// Stored index value for a real index: logical value for implicit domains,
// the real index itself for explicit ones.
inline Scalar stored_index_value(const Domain& d, int64_t real) {
  return d.is_implicit() ? d.real_to_logical(real) : Scalar(real);
}

inline ElemType stored_index_type(const Domain& d, ElemType dim_type) {
  return d.is_implicit() ? dim_type : ElemType::Int64;
}

// --- per-subTAR row access ----------------------------------------------------

// Resolves a list of element names against one subTAR for repeated per-cell
// reads. Thread-safe for concurrent read() calls.
class CellReader {
 public:
  CellReader(const SubTar& s, const std::vector<std::string>& elements) {
    for (const auto& name : elements) {
      Slot slot;
      const DataElement& e = s.tar->require(name);
      if (!e.is_dimension()) {
        slot.kind = Slot::Kind::Attribute;
        slot.ds = s.atts.at(name);
        slot.constant = slot.ds->length() == 1;
      } else {
        const DimensionSpec* spec = s.spec_for(name);
        slot.spec = spec;
        if (s.is_total()) {
          slot.kind = Slot::Kind::TotalDim;
          slot.ds = spec->data;
        } else {
          slot.kind = Slot::Kind::GridDim;
          int64_t stride = 1;
          bool after = false;
          for (const auto& d : s.dim_specs) {
            if (after) stride *= d.slot_count();
            if (&d == spec) after = true;
          }
          slot.stride = stride;
          slot.count = spec->slot_count();
        }
      }
      slots_.push_back(std::move(slot));
    }
  }

  size_t width() const { return slots_.size(); }

  void read(size_t offset, std::span<Scalar> row) const {
    for (size_t i = 0; i < slots_.size(); ++i) {
      const Slot& s = slots_[i];
      switch (s.kind) {
        case Slot::Kind::Attribute:
          row[i] = s.constant ? s.ds->at(0) : s.ds->at(offset);
          break;
        case Slot::Kind::TotalDim: {
          Scalar stored = s.ds->at(offset);
          row[i] = s.spec->domain->is_implicit()
                       ? stored
                       : s.spec->domain->real_to_logical(stored.as_int64());
          break;
        }
        case Slot::Kind::GridDim: {
          int64_t slot_idx = (static_cast<int64_t>(offset) / s.stride) % s.count;
          row[i] = s.spec->domain->real_to_logical(s.spec->real_at_slot(slot_idx));
          break;
        }
      }
    }
  }

 private:
  struct Slot {
    enum class Kind { Attribute, TotalDim, GridDim } kind = Kind::Attribute;
    DatasetPtr ds;
    bool constant = false;
    const DimensionSpec* spec = nullptr;
    int64_t stride = 1;
    int64_t count = 1;
  };
  std::vector<Slot> slots_;
};

// parallel_for with first-exception capture.
inline void parallel_cells(size_t n, unsigned grain,
                           const std::function<void(size_t, size_t)>& body) {
  std::exception_ptr err;
  std::mutex err_mu;
  parallel_for(n, grain, [&](size_t lo, size_t hi) {
    try {
      body(lo, hi);
    } catch (...) {
      std::lock_guard<std::mutex> lk(err_mu);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);
}

// --- streams and the refcounted cache ------------------------------------------

class NodeRunner {
 public:
  virtual ~NodeRunner() = default;
  virtual SubTarPtr produce() = 0;
};

// Buffers the output of one plan node for its consumers. Every produced
// subTAR enters the cache with a counter equal to the number of consumers;
// each consumer releases it exactly once and the entry is freed when the
// counter reaches zero. Production happens at most once per ordinal.
class SharedStream {
 public:
  SharedStream(int node_id, std::unique_ptr<NodeRunner> producer,
               CacheStats* stats)
      : node_id_(node_id), producer_(std::move(producer)), stats_(stats) {}

  int add_consumer() {
    cursor_.push_back(0);
    finished_.push_back(false);
    stats_->node_consumers[node_id_] = static_cast<int>(cursor_.size());
    return static_cast<int>(cursor_.size()) - 1;
  }

  int node_id() const { return node_id_; }

  struct Pulled {
    SubTarPtr item;
    uint64_t ordinal = 0;
    explicit operator bool() const { return item != nullptr; }
  };

  Pulled next(int consumer) {
    if (finished_[consumer])
      throw Error(ErrorCode::EvaluationError, "pull after finish");
    if (cursor_[consumer] == produced_) {
      if (done_) return {};
      SubTarPtr item;
      try {
        item = producer_->produce();
      } catch (Error& e) {
        if (e.node_id() < 0) e.set_node_id(node_id_);
        throw;
      }
      if (!item) {
        done_ = true;
        return {};
      }
      Entry entry;
      entry.item = std::move(item);
      entry.ordinal = produced_++;
      entry.delivered.assign(cursor_.size(), 0);
      entry.released.assign(cursor_.size(), 0);
      entry.remaining = 0;
      for (size_t c = 0; c < cursor_.size(); ++c) {
        if (finished_[c])
          entry.released[c] = 1;
        else
          ++entry.remaining;
      }
      verify_disjoint(*entry.item);
      live_.push_back(std::move(entry));
      ++stats_->created;
      ++stats_->created_per_key[{node_id_, live_.back().ordinal}];
      if (++stats_->live > stats_->peak_live) stats_->peak_live = stats_->live;
    }
    // the entry cannot have been freed: this consumer never released it
    Entry* e = find(cursor_[consumer]);
    if (!e)
      throw Error(ErrorCode::EvaluationError, "cache entry lost");
    e->delivered[consumer] = 1;
    ++cursor_[consumer];
    return {e->item, e->ordinal};
  }

  void release(int consumer, uint64_t ordinal) {
    Entry* e = find(ordinal);
    if (!e || !e->delivered[consumer] || e->released[consumer]) {
      ++stats_->release_violations;
      throw Error(ErrorCode::DoubleRelease,
                  "node " + std::to_string(node_id_) + " ordinal " +
                      std::to_string(ordinal));
    }
    e->released[consumer] = 1;
    if (--e->remaining == 0) free_entry(ordinal);
  }

  // The consumer will neither pull nor release anything else; its share of
  // all live entries is released implicitly.
  void finish(int consumer) {
    if (finished_[consumer]) return;
    finished_[consumer] = true;
    std::vector<uint64_t> to_free;
    for (auto& e : live_) {
      if (!e.released[consumer]) {
        e.released[consumer] = 1;
        if (--e.remaining == 0) to_free.push_back(e.ordinal);
      }
    }
    for (uint64_t o : to_free) free_entry(o);
  }

  size_t live_entries() const { return live_.size(); }

 private:
  struct Entry {
    SubTarPtr item;
    uint64_t ordinal = 0;
    int remaining = 0;
    std::vector<uint8_t> delivered, released;
  };

  Entry* find(uint64_t ordinal) {
    for (auto& e : live_)
      if (e.ordinal == ordinal) return &e;
    return nullptr;
  }

  void free_entry(uint64_t ordinal) {
    for (auto it = live_.begin(); it != live_.end(); ++it) {
      if (it->ordinal != ordinal) continue;
      for (uint8_t r : it->released)
        if (!r) ++stats_->release_violations;
      live_.erase(it);
      ++stats_->freed;
      ++stats_->freed_per_key[{node_id_, ordinal}];
      --stats_->live;
      return;
    }
  }

  void verify_disjoint(const SubTar& item) {
    for (const auto& prior : extents_) {
      bool disjoint = false;
      for (const auto& spec : item.dim_specs) {
        auto it = prior.find(spec.dimension);
        if (it != prior.end() &&
            (spec.upper < it->second.first || it->second.second < spec.lower)) {
          disjoint = true;
          break;
        }
      }
      if (!disjoint)
        throw Error(ErrorCode::EvaluationError,
                    "node " + std::to_string(node_id_) +
                        " emitted intersecting subTAR extents");
    }
    std::map<std::string, std::pair<int64_t, int64_t>> box;
    for (const auto& spec : item.dim_specs)
      box[spec.dimension] = {spec.lower, spec.upper};
    extents_.push_back(std::move(box));
  }

  int node_id_;
  std::unique_ptr<NodeRunner> producer_;
  CacheStats* stats_;
  std::vector<uint64_t> cursor_;
  std::vector<bool> finished_;
  std::deque<Entry> live_;
  std::vector<std::map<std::string, std::pair<int64_t, int64_t>>> extents_;
  uint64_t produced_ = 0;
  bool done_ = false;
};

struct Port {
  SharedStream* stream = nullptr;
  int cid = -1;

  SharedStream::Pulled next() { return stream->next(cid); }
  void release(uint64_t ordinal) { stream->release(cid, ordinal); }
  void finish() { stream->finish(cid); }
};

struct ExecEnv {
  const TarSchema* schema = nullptr;
  DatasetStore* store = nullptr;
  ExecConfig cfg;
  ExecStats stats;
};

// --- output builders -----------------------------------------------------------

// Accumulates a Total-layout output subTAR: one stored index per dimension
// per cell plus the attribute values.
class TotalOutputBuilder {
 public:
  // dims: (output name, domain, dimension elem type); atts: (name, type)
  TotalOutputBuilder(ExecEnv& env, TarDefPtr schema,
                     std::vector<std::tuple<std::string, DomainPtr, ElemType>> dims,
                     std::vector<std::pair<std::string, ElemType>> atts)
      : schema_(std::move(schema)) {
    for (auto& [name, domain, type] : dims) {
      Dim d;
      d.name = name;
      d.domain = domain;
      d.builder.emplace(env.store->make_builder(stored_index_type(*domain, type)));
      dims_.push_back(std::move(d));
    }
    for (auto& [name, type] : atts) {
      Att a;
      a.name = name;
      a.builder.emplace(env.store->make_builder(type));
      atts_.push_back(std::move(a));
    }
  }

  // location aligned with the dims given at construction (real indexes)
  void add_cell(std::span<const int64_t> location, std::span<const Scalar> att_values) {
    for (size_t d = 0; d < dims_.size(); ++d) {
      dims_[d].builder->push(stored_index_value(*dims_[d].domain, location[d]));
      dims_[d].lo = std::min(dims_[d].lo, location[d]);
      dims_[d].hi = std::max(dims_[d].hi, location[d]);
    }
    for (size_t a = 0; a < atts_.size(); ++a) atts_[a].builder->push(att_values[a]);
    ++count_;
  }

  size_t count() const { return count_; }

  SubTarPtr finish() {
    if (count_ == 0) return nullptr;
    auto sub = std::make_shared<SubTar>();
    sub->tar = schema_;
    for (auto& d : dims_) {
      DimensionSpec spec;
      spec.dimension = d.name;
      spec.domain = d.domain;
      spec.kind = SpecKind::Total;
      spec.lower = d.lo;
      spec.upper = d.hi;
      spec.data = d.builder->seal();
      sub->dim_specs.push_back(std::move(spec));
    }
    for (auto& a : atts_) sub->atts[a.name] = a.builder->seal();
    sub->length = count_;
    return sub;
  }

 private:
  struct Dim {
    std::string name;
    DomainPtr domain;
    std::optional<DatasetBuilder> builder;
    int64_t lo = std::numeric_limits<int64_t>::max();
    int64_t hi = std::numeric_limits<int64_t>::min();
  };
  struct Att {
    std::string name;
    std::optional<DatasetBuilder> builder;
  };
  TarDefPtr schema_;
  std::vector<Dim> dims_;
  std::vector<Att> atts_;
  size_t count_ = 0;
};

// --- runners ---------------------------------------------------------------

// Source node over a stored TAR. An enclosing subset may push its region down
// so that only intersecting subTARs are ever pulled.
class ScanRunner : public NodeRunner {
 public:
  ScanRunner(const PlanNode& node, ExecEnv& env)
      : env_(env), tar_(env.schema->require_tar(node.tar_name)) {}

  void push_region(Region region, bool empty_result) {
    region_ = std::move(region);
    empty_ = empty_result;
    pushed_ = true;
  }

  SubTarPtr produce() override {
    if (empty_) return nullptr;
    while (idx_ < tar_->subtars.size()) {
      SubTarPtr s = tar_->subtars[idx_++];
      if (pushed_ && !extent_intersects_region(*s, region_)) continue;
      ++env_.stats.layout.subtars_touched;
      return s;
    }
    return nullptr;
  }

 private:
  ExecEnv& env_;
  TarPtr tar_;
  size_t idx_ = 0;
  Region region_;
  bool pushed_ = false;
  bool empty_ = false;
};

// Shared machinery: evaluate an expression for every cell of a subTAR.
inline void eval_expr_over(ExecEnv& env, const SubTar& s,
                           const CompiledExpr& expr,
                           const std::function<void(size_t, const Scalar&)>& sink) {
  // sinks must tolerate out-of-order offsets across ranges
  CellReader reader(s, expr.elements());
  parallel_cells(s.length, env.cfg.parallel_grain, [&](size_t lo, size_t hi) {
    std::vector<Scalar> row(reader.width());
    for (size_t i = lo; i < hi; ++i) {
      reader.read(i, row);
      sink(i, expr.eval(row));
    }
  });
}

// Builds a Total subTAR holding the masked cells of an input subTAR,
// carrying all dimensions and attributes through unchanged.
inline SubTarPtr masked_total(ExecEnv& env, const SubTar& s, TarDefPtr schema,
                              const std::vector<uint8_t>& keep, size_t kept) {
  std::vector<std::tuple<std::string, DomainPtr, ElemType>> dims;
  for (const auto& spec : s.dim_specs)
    dims.emplace_back(spec.dimension, spec.domain,
                      s.tar->require(spec.dimension).type);
  std::vector<std::pair<std::string, ElemType>> atts;
  std::vector<std::string> full_atts;  // constants pass through untouched
  std::map<std::string, DatasetPtr> constant_atts;
  for (const auto& [name, ds] : s.atts) {
    if (ds->length() == 1 && s.length != 1) {
      constant_atts[name] = ds;
    } else {
      atts.emplace_back(name, ds->type());
      full_atts.push_back(name);
    }
  }
  TotalOutputBuilder out(env, std::move(schema), std::move(dims), atts);
  std::vector<Scalar> row(full_atts.size());
  enumerate_cells(s, nullptr, nullptr,
                  [&](std::span<const int64_t> loc, size_t offset) {
                    if (!keep[offset]) return;
                    for (size_t a = 0; a < full_atts.size(); ++a)
                      row[a] = s.atts.at(full_atts[a])->at(offset);
                    out.add_cell(loc, row);
                  });
  (void)kept;
  auto sub = out.finish();
  if (sub)
    for (auto& [name, ds] : constant_atts)
      std::const_pointer_cast<SubTar>(sub)->atts[name] = ds;
  return sub;
}

class WhereRunner : public NodeRunner {
 public:
  WhereRunner(const PlanNode& node, ExecEnv& env, Port in)
      : node_(node), env_(env), in_(in) {}

  SubTarPtr produce() override {
    while (auto p = in_.next()) {
      SubTarPtr out = apply(p.item);
      in_.release(p.ordinal);
      if (out) return out;
    }
    return nullptr;
  }

 private:
  SubTarPtr apply(const SubTarPtr& s) {
    CompiledExpr pred(node_.expr, *s->tar);
    std::vector<uint8_t> keep(s->length, 0);
    std::atomic<size_t> kept{0};
    eval_expr_over(env_, *s, pred, [&](size_t i, const Scalar& v) {
      bool k = v.is_integer() ? v.as_int64() != 0 : v.as_double() != 0.0;
      keep[i] = k;
      if (k) kept.fetch_add(1, std::memory_order_relaxed);
    });
    if (kept == 0) return nullptr;
    if (kept == s->length) return s;  // fully surviving: bit-identical pass-through
    return masked_total(env_, *s, node_.schema, keep, kept);
  }

  const PlanNode& node_;
  ExecEnv& env_;
  Port in_;
};

class SelectRunner : public NodeRunner {
 public:
  SelectRunner(const PlanNode& node, ExecEnv& env, Port in)
      : node_(node), env_(env), in_(in) {
    for (const auto& e : node_.schema->elements) keep_.insert(e.name);
    identity_ = true;
    for (const auto& e : node_.inputs[0]->schema->elements)
      if (!keep_.count(e.name)) identity_ = false;
  }

  SubTarPtr produce() override {
    while (auto p = in_.next()) {
      SubTarPtr out = identity_ ? p.item : apply(p.item);
      in_.release(p.ordinal);
      if (out) return out;
    }
    return nullptr;
  }

 private:
  SubTarPtr apply(const SubTarPtr& s) {
    auto sub = std::make_shared<SubTar>();
    sub->tar = node_.schema;
    sub->length = s->length;
    for (const auto& spec : s->dim_specs) {
      if (keep_.count(spec.dimension)) {
        sub->dim_specs.push_back(spec);
      }
      // dropped dimensions have a single slot, so offsets are unchanged
    }
    for (const auto& [name, ds] : s->atts)
      if (keep_.count(name)) sub->atts[name] = ds;
    return sub;
  }

  const PlanNode& node_;
  ExecEnv& env_;
  Port in_;
  std::set<std::string> keep_;
  bool identity_ = false;
};

class SubsetRunner : public NodeRunner {
 public:
  SubsetRunner(const PlanNode& node, ExecEnv& env, Port in)
      : node_(node), env_(env), in_(in) {
    const TarDef& def = *node.inputs[0]->schema;
    for (const auto& b : node.bounds) {
      const DataElement& e = def.require(b.dimension);
      auto range = e.domain->real_range(b.lo.as_double(), b.hi.as_double());
      if (!range) {
        empty_ = true;
        return;
      }
      region_.set(b.dimension, range->first, range->second);
    }
  }

  bool empty_result() const { return empty_; }
  const Region& region() const { return region_; }

  SubTarPtr produce() override {
    if (empty_) return nullptr;
    while (auto p = in_.next()) {
      SubTarPtr out;
      if (extent_intersects_region(*p.item, region_)) out = apply(p.item);
      in_.release(p.ordinal);
      if (out) return out;
    }
    return nullptr;
  }

 private:
  SubTarPtr apply(const SubTarPtr& sp) {
    const SubTar& s = *sp;
    if (extent_within_region(s, region_)) {
      // every cell lies inside the window
      env_.stats.layout.cells_visited += s.length;
      return sp;
    }
    if (s.is_total()) return clip_total(s);
    return clip_grid(s);
  }

  SubTarPtr clip_total(const SubTar& s) {
    std::vector<std::tuple<std::string, DomainPtr, ElemType>> dims;
    for (const auto& spec : s.dim_specs)
      dims.emplace_back(spec.dimension, spec.domain,
                        s.tar->require(spec.dimension).type);
    std::vector<std::pair<std::string, ElemType>> atts;
    std::vector<std::string> names;
    std::map<std::string, DatasetPtr> constants;
    for (const auto& [name, ds] : s.atts) {
      if (ds->length() == 1 && s.length != 1) {
        constants[name] = ds;
      } else {
        atts.emplace_back(name, ds->type());
        names.push_back(name);
      }
    }
    TotalOutputBuilder out(env_, node_.schema, std::move(dims), atts);
    std::vector<Scalar> row(names.size());
    enumerate_cells(s, &region_, &env_.stats.layout,
                    [&](std::span<const int64_t> loc, size_t offset) {
                      for (size_t a = 0; a < names.size(); ++a)
                        row[a] = s.atts.at(names[a])->at(offset);
                      out.add_cell(loc, row);
                    });
    auto sub = out.finish();
    if (sub)
      for (auto& [name, ds] : constants)
        std::const_pointer_cast<SubTar>(sub)->atts[name] = ds;
    return sub;
  }

  // Ordered/Partial layouts clip by slot ranges; spec kinds are preserved and
  // only the window cells are visited.
  SubTarPtr clip_grid(const SubTar& s) {
    auto sub = std::make_shared<SubTar>();
    sub->tar = node_.schema;
    size_t out_len = 1;
    for (const auto& spec : s.dim_specs) {
      auto [lo, hi] = region_.range_for(spec.dimension);
      auto [a, b] = spec.slot_range(lo, hi);
      if (a > b) return nullptr;  // a partial present-set can miss the window
      DimensionSpec out_spec;
      out_spec.dimension = spec.dimension;
      out_spec.domain = spec.domain;
      out_spec.kind = spec.kind;
      out_spec.lower = spec.real_at_slot(a);
      out_spec.upper = spec.real_at_slot(b);
      if (spec.kind == SpecKind::Partial) {
        auto builder = env_.store->make_builder(spec.data->type());
        for (int64_t slot = a; slot <= b; ++slot)
          builder.push(spec.data->at(static_cast<size_t>(slot)));
        out_spec.data = builder.seal();
      }
      out_len *= static_cast<size_t>(b - a + 1);
      sub->dim_specs.push_back(std::move(out_spec));
    }
    sub->length = out_len;
    // gather attribute cells in the clipped row-major order
    std::map<std::string, std::optional<DatasetBuilder>> builders;
    for (const auto& [name, ds] : s.atts) {
      if (ds->length() == 1 && s.length != 1)
        sub->atts[name] = ds;  // TAR property constant
      else
        builders[name].emplace(env_.store->make_builder(ds->type()));
    }
    enumerate_cells(s, &region_, &env_.stats.layout,
                    [&](std::span<const int64_t>, size_t offset) {
                      for (auto& [name, b] : builders)
                        b->push(s.atts.at(name)->at(offset));
                    });
    for (auto& [name, b] : builders) sub->atts[name] = b->seal();
    return sub;
  }

  const PlanNode& node_;
  ExecEnv& env_;
  Port in_;
  Region region_;
  bool empty_ = false;
};

class DeriveRunner : public NodeRunner {
 public:
  DeriveRunner(const PlanNode& node, ExecEnv& env, Port in)
      : node_(node), env_(env), in_(in) {}

  SubTarPtr produce() override {
    auto p = in_.next();
    if (!p) return nullptr;
    SubTarPtr out = apply(p.item);
    in_.release(p.ordinal);
    return out;
  }

 private:
  SubTarPtr apply(const SubTarPtr& s) {
    CompiledExpr expr(node_.expr, *s->tar);
    ElemType out_type = node_.schema->require(node_.new_name).type;
    std::vector<std::byte> buf(s->length * elem_width(out_type));
    eval_expr_over(env_, *s, expr, [&](size_t i, const Scalar& v) {
      if (out_type == ElemType::Int64) {
        int64_t x = v.as_int64();
        std::memcpy(buf.data() + i * 8, &x, 8);
      } else {
        double x = v.as_double();
        std::memcpy(buf.data() + i * 8, &x, 8);
      }
    });
    auto builder = env_.store->make_builder(out_type);
    if (out_type == ElemType::Int64) {
      const int64_t* vals = reinterpret_cast<const int64_t*>(buf.data());
      for (size_t i = 0; i < s->length; ++i) builder.push_raw(vals[i]);
    } else {
      const double* vals = reinterpret_cast<const double*>(buf.data());
      for (size_t i = 0; i < s->length; ++i) builder.push_raw(vals[i]);
    }
    auto sub = std::make_shared<SubTar>(*s);
    sub->tar = node_.schema;
    sub->atts[node_.new_name] = builder.seal();
    return sub;
  }

  const PlanNode& node_;
  ExecEnv& env_;
  Port in_;
};

class CrossJoinRunner : public NodeRunner {
 public:
  CrossJoinRunner(const PlanNode& node, ExecEnv& env, Port left, Port right)
      : node_(node), env_(env), left_(left), right_(right) {}

  SubTarPtr produce() override {
    while (true) {
      if (!left_cur_) {
        left_cur_ = left_.next();
        if (!left_cur_) {
          for (auto& r : rights_) right_.release(r.ordinal);
          rights_.clear();
          return nullptr;
        }
        right_idx_ = 0;
      }
      if (right_idx_ == rights_.size() && !right_done_) {
        auto p = right_.next();
        if (p)
          rights_.push_back(p);
        else
          right_done_ = true;
      }
      if (right_idx_ >= rights_.size()) {
        left_.release(left_cur_.ordinal);
        left_cur_ = {};
        continue;
      }
      const SubTarPtr r = rights_[right_idx_++].item;
      return combine(left_cur_.item, r);
    }
  }

 private:
  std::string out_name(const std::map<std::string, std::string>& rename,
                       const std::string& name) const {
    auto it = rename.find(name);
    return it == rename.end() ? name : it->second;
  }

  SubTarPtr combine(const SubTarPtr& l, const SubTarPtr& r) {
    if (!l->is_total() && !r->is_total()) return combine_grid(*l, *r);
    return combine_total(*l, *r);
  }

  // Non-Total sides concatenate their specs; the joint layout stays
  // row-major with the right side varying fastest.
  SubTarPtr combine_grid(const SubTar& l, const SubTar& r) {
    auto sub = std::make_shared<SubTar>();
    sub->tar = node_.schema;
    sub->length = l.length * r.length;
    for (const auto& spec : l.dim_specs) {
      DimensionSpec out = spec;
      out.dimension = out_name(node_.rename_left, spec.dimension);
      sub->dim_specs.push_back(std::move(out));
    }
    for (const auto& spec : r.dim_specs) {
      DimensionSpec out = spec;
      out.dimension = out_name(node_.rename_right, spec.dimension);
      sub->dim_specs.push_back(std::move(out));
    }
    for (const auto& [name, ds] : l.atts) {
      std::string out = out_name(node_.rename_left, name);
      if (ds->length() == 1 && l.length != 1) {
        sub->atts[out] = ds;
        continue;
      }
      auto b = env_.store->make_builder(ds->type());
      for (size_t i = 0; i < l.length; ++i)
        for (size_t j = 0; j < r.length; ++j) b.push(ds->at(i));
      sub->atts[out] = b.seal();
    }
    for (const auto& [name, ds] : r.atts) {
      std::string out = out_name(node_.rename_right, name);
      if (ds->length() == 1 && r.length != 1) {
        sub->atts[out] = ds;
        continue;
      }
      auto b = env_.store->make_builder(ds->type());
      for (size_t i = 0; i < l.length; ++i)
        for (size_t j = 0; j < r.length; ++j) b.push(ds->at(j));
      sub->atts[out] = b.seal();
    }
    return sub;
  }

  SubTarPtr combine_total(const SubTar& l, const SubTar& r) {
    std::vector<std::tuple<std::string, DomainPtr, ElemType>> dims;
    std::vector<std::pair<std::string, ElemType>> atts;
    // side flag, not a pointer: self-joins hand the same subTAR in twice
    std::vector<std::pair<int, std::string>> att_sources;
    auto add_side = [&](const SubTar& s,
                        const std::map<std::string, std::string>& rename) {
      for (const auto& spec : s.dim_specs)
        dims.emplace_back(out_name(rename, spec.dimension), spec.domain,
                          s.tar->require(spec.dimension).type);
    };
    add_side(l, node_.rename_left);
    add_side(r, node_.rename_right);
    for (const auto& [name, ds] : l.atts) {
      atts.emplace_back(out_name(node_.rename_left, name), ds->type());
      att_sources.emplace_back(0, name);
    }
    for (const auto& [name, ds] : r.atts) {
      atts.emplace_back(out_name(node_.rename_right, name), ds->type());
      att_sources.emplace_back(1, name);
    }
    TotalOutputBuilder out(env_, node_.schema, std::move(dims), atts);
    std::vector<int64_t> loc(l.dim_specs.size() + r.dim_specs.size());
    std::vector<Scalar> row(att_sources.size());
    enumerate_cells(l, nullptr, nullptr, [&](std::span<const int64_t> lloc,
                                             size_t loff) {
      std::copy(lloc.begin(), lloc.end(), loc.begin());
      enumerate_cells(r, nullptr, nullptr, [&](std::span<const int64_t> rloc,
                                               size_t roff) {
        std::copy(rloc.begin(), rloc.end(), loc.begin() + lloc.size());
        for (size_t a = 0; a < att_sources.size(); ++a) {
          const auto& [side, name] = att_sources[a];
          row[a] = side == 0 ? l.att_value(name, loff) : r.att_value(name, roff);
        }
        out.add_cell(loc, row);
      });
    });
    return out.finish();
  }

  const PlanNode& node_;
  ExecEnv& env_;
  Port left_, right_;
  SharedStream::Pulled left_cur_;
  std::vector<SharedStream::Pulled> rights_;
  size_t right_idx_ = 0;
  bool right_done_ = false;
};

class DimJoinRunner : public NodeRunner {
 public:
  DimJoinRunner(const PlanNode& node, ExecEnv& env, Port left, Port right)
      : node_(node), env_(env), left_(left), right_(right) {}

  SubTarPtr produce() override {
    if (!index_built_) build_right_index();
    while (auto p = left_.next()) {
      SubTarPtr out = join_one(*p.item);
      left_.release(p.ordinal);
      if (out) return out;
    }
    for (auto& r : rights_) right_.release(r.ordinal);
    rights_.clear();
    return nullptr;
  }

 private:
  static void append_key(std::string& key, const Scalar& v) {
    if (v.is_integer()) {
      int64_t x = v.as_int64();
      key.append(reinterpret_cast<const char*>(&x), 8);
    } else {
      double x = v.as_double();
      if (x == 0.0) x = 0.0;  // collapse -0.0
      key.append(reinterpret_cast<const char*>(&x), 8);
    }
  }

  // The right side is pulled in full and indexed by its joined-dimension
  // logical values before the left side streams through.
  void build_right_index() {
    index_built_ = true;
    const TarDef& rdef = *node_.inputs[1]->schema;
    while (auto p = right_.next()) rights_.push_back(p);
    for (size_t item = 0; item < rights_.size(); ++item) {
      const SubTar& s = *rights_[item].item;
      std::vector<size_t> key_dims;  // positions in s.dim_specs
      for (const auto& [l, r] : node_.dim_pairs) {
        for (size_t d = 0; d < s.dim_specs.size(); ++d)
          if (s.dim_specs[d].dimension == r) key_dims.push_back(d);
      }
      (void)rdef;
      enumerate_cells(s, nullptr, nullptr,
                      [&](std::span<const int64_t> loc, size_t offset) {
                        std::string key;
                        for (size_t d : key_dims)
                          append_key(key, s.dim_specs[d].domain->real_to_logical(
                                              loc[d]));
                        index_[key].emplace_back(static_cast<uint32_t>(item),
                                                 static_cast<uint32_t>(offset));
                      });
    }
  }

  SubTarPtr join_one(const SubTar& ls) {
    const TarDef& ldef = *node_.inputs[0]->schema;
    const TarDef& rdef = *node_.inputs[1]->schema;
    std::set<std::string> paired_right;
    for (const auto& [l, r] : node_.dim_pairs) paired_right.insert(r);

    // output dims: left dims (left order), then unpaired right dims
    std::vector<std::tuple<std::string, DomainPtr, ElemType>> dims;
    std::vector<size_t> left_dim_pos;  // position in ls.dim_specs
    for (const auto* d : ldef.dimensions()) {
      for (size_t i = 0; i < ls.dim_specs.size(); ++i)
        if (ls.dim_specs[i].dimension == d->name) left_dim_pos.push_back(i);
      dims.emplace_back(out_name(node_.rename_left, d->name),
                        d->domain, d->type);
    }
    std::vector<std::string> right_unpaired;
    for (const auto* d : rdef.dimensions()) {
      if (paired_right.count(d->name)) continue;
      right_unpaired.push_back(d->name);
      dims.emplace_back(out_name(node_.rename_right, d->name), d->domain,
                        d->type);
    }
    std::vector<std::pair<std::string, ElemType>> atts;
    std::vector<std::pair<int, std::string>> att_src;  // 0=left 1=right
    for (const auto* a : ldef.attributes()) {
      atts.emplace_back(out_name(node_.rename_left, a->name), a->type);
      att_src.emplace_back(0, a->name);
    }
    for (const auto* a : rdef.attributes()) {
      atts.emplace_back(out_name(node_.rename_right, a->name), a->type);
      att_src.emplace_back(1, a->name);
    }

    std::vector<size_t> key_dims;  // positions in ls.dim_specs
    for (const auto& [l, r] : node_.dim_pairs)
      for (size_t d = 0; d < ls.dim_specs.size(); ++d)
        if (ls.dim_specs[d].dimension == l) key_dims.push_back(d);

    TotalOutputBuilder out(env_, node_.schema, std::move(dims), atts);
    std::vector<int64_t> loc(left_dim_pos.size() + right_unpaired.size());
    std::vector<Scalar> row(att_src.size());
    enumerate_cells(ls, nullptr, nullptr, [&](std::span<const int64_t> lloc,
                                              size_t loff) {
      std::string key;
      for (size_t d : key_dims)
        append_key(key, ls.dim_specs[d].domain->real_to_logical(lloc[d]));
      auto it = index_.find(key);
      if (it == index_.end()) return;
      for (size_t i = 0; i < left_dim_pos.size(); ++i)
        loc[i] = lloc[left_dim_pos[i]];
      for (const auto& [ritem, roff] : it->second) {
        const SubTar& rs = *rights_[ritem].item;
        std::vector<int64_t> rloc = location_of(rs, roff);
        for (size_t i = 0; i < right_unpaired.size(); ++i) {
          size_t pos = 0;
          for (size_t d = 0; d < rs.dim_specs.size(); ++d)
            if (rs.dim_specs[d].dimension == right_unpaired[i]) pos = d;
          loc[left_dim_pos.size() + i] = rloc[pos];
        }
        for (size_t a = 0; a < att_src.size(); ++a) {
          const auto& [side, name] = att_src[a];
          row[a] = side == 0 ? ls.att_value(name, loff)
                             : rs.att_value(name, roff);
        }
        out.add_cell(loc, row);
      }
    });
    return out.finish();
  }

  std::string out_name(const std::map<std::string, std::string>& rename,
                       const std::string& name) const {
    auto it = rename.find(name);
    return it == rename.end() ? name : it->second;
  }

  const PlanNode& node_;
  ExecEnv& env_;
  Port left_, right_;
  std::vector<SharedStream::Pulled> rights_;
  std::unordered_map<std::string, std::vector<std::pair<uint32_t, uint32_t>>>
      index_;
  bool index_built_ = false;
};

// Blocking: consumes the whole input before emitting its single output
// subTAR.
class AggregateRunner : public NodeRunner {
 public:
  AggregateRunner(const PlanNode& node, ExecEnv& env, Port in)
      : node_(node), env_(env), in_(in) {}

  SubTarPtr produce() override {
    if (done_) return nullptr;
    done_ = true;

    struct Accum {
      int64_t isum = 0;
      double fsum = 0;
      double comp = 0;  // Kahan compensation for the float sum
      int64_t count = 0;
      Scalar min, max;

      void add_float(double x) {
        double y = x - comp;
        double t = fsum + y;
        comp = (t - fsum) - y;
        fsum = t;
      }
    };
    std::map<std::vector<int64_t>, Accum> groups;
    bool int_target = false;

    while (auto p = in_.next()) {
      const SubTar& s = *p.item;
      const DataElement& target = s.tar->require(node_.agg_target);
      int_target = elem_is_integer(target.type);
      std::vector<size_t> group_pos;
      for (const auto& g : node_.agg_groups)
        for (size_t d = 0; d < s.dim_specs.size(); ++d)
          if (s.dim_specs[d].dimension == g) group_pos.push_back(d);
      const DatasetPtr& ds = s.atts.at(node_.agg_target);
      bool constant = ds->length() == 1 && s.length != 1;
      std::vector<int64_t> key(group_pos.size());
      enumerate_cells(s, nullptr, nullptr,
                      [&](std::span<const int64_t> loc, size_t offset) {
                        for (size_t i = 0; i < group_pos.size(); ++i)
                          key[i] = loc[group_pos[i]];
                        Scalar v = constant ? ds->at(0) : ds->at(offset);
                        auto [it, fresh] = groups.try_emplace(key);
                        Accum& a = it->second;
                        if (fresh || a.count == 0) {
                          a.min = v;
                          a.max = v;
                        } else {
                          if (v < a.min) a.min = v;
                          if (a.max < v) a.max = v;
                        }
                        a.isum += v.is_integer() ? v.as_int64() : 0;
                        a.add_float(v.as_double());
                        ++a.count;
                      });
      in_.release(p.ordinal);
    }
    if (groups.empty()) return nullptr;

    const DataElement& out_att = node_.schema->require(node_.agg_out);
    auto value_of = [&](const Accum& a) -> Scalar {
      switch (node_.agg_fn) {
        case AggFn::Count: return Scalar(a.count);
        case AggFn::Sum:
          return int_target ? Scalar(a.isum) : Scalar(a.fsum);
        case AggFn::Avg:
          return Scalar((int_target ? static_cast<double>(a.isum) : a.fsum) /
                        static_cast<double>(a.count));
        case AggFn::Min: return a.min;
        case AggFn::Max: return a.max;
      }
      return Scalar();
    };

    if (node_.agg_groups.empty()) {
      // grand total: one cell on the synthetic unit dimension
      auto sub = std::make_shared<SubTar>();
      sub->tar = node_.schema;
      DimensionSpec spec;
      spec.dimension = "i";
      spec.domain = node_.schema->require("i").domain;
      spec.kind = SpecKind::Ordered;
      spec.lower = 0;
      spec.upper = 0;
      sub->dim_specs.push_back(std::move(spec));
      auto b = env_.store->make_builder(out_att.type);
      b.push(value_of(groups.begin()->second));
      sub->atts[node_.agg_out] = b.seal();
      sub->length = 1;
      return sub;
    }

    std::vector<std::tuple<std::string, DomainPtr, ElemType>> dims;
    for (const auto& g : node_.agg_groups) {
      const DataElement& e = node_.schema->require(g);
      dims.emplace_back(g, e.domain, e.type);
    }
    TotalOutputBuilder out(env_, node_.schema, std::move(dims),
                           {{node_.agg_out, out_att.type}});
    std::vector<Scalar> row(1);
    for (const auto& [key, accum] : groups) {
      row[0] = value_of(accum);
      out.add_cell(key, row);
    }
    return out.finish();
  }

 private:
  const PlanNode& node_;
  ExecEnv& env_;
  Port in_;
  bool done_ = false;
};

// Materializes its inputs, writes the VTK file and emits a one-cell summary.
class CatalyzeRunner : public NodeRunner {
 public:
  CatalyzeRunner(const PlanNode& node, ExecEnv& env, std::vector<Port> inputs)
      : node_(node), env_(env), inputs_(std::move(inputs)) {}

  SubTarPtr produce() override {
    if (done_) return nullptr;
    done_ = true;
    std::vector<std::vector<SharedStream::Pulled>> held(inputs_.size());
    for (size_t i = 0; i < inputs_.size(); ++i)
      while (auto p = inputs_[i].next()) held[i].push_back(p);
    auto as_materialized = [&](size_t i) {
      MaterializedTar m;
      m.def = node_.inputs[i]->schema;
      for (const auto& p : held[i]) m.subtars.push_back(p.item);
      return m;
    };
    MeshBundle bundle;
    bundle.geometry = as_materialized(0);
    bundle.topology = as_materialized(1);
    for (size_t i = 2; i < inputs_.size(); ++i)
      bundle.fields.push_back(as_materialized(i));
    bundle.time_selector = node_.time_selector;
    bundle.trial_selector = node_.trial_selector;
    VtkSummary summary = export_vtk(*env_.schema, bundle, node_.out_path,
                                    env_.cfg.post_export_hook);
    for (size_t i = 0; i < inputs_.size(); ++i)
      for (const auto& p : held[i]) inputs_[i].release(p.ordinal);

    auto sub = std::make_shared<SubTar>();
    sub->tar = node_.schema;
    DimensionSpec spec;
    spec.dimension = "i";
    spec.domain = node_.schema->require("i").domain;
    spec.kind = SpecKind::Ordered;
    spec.lower = 0;
    spec.upper = 0;
    sub->dim_specs.push_back(std::move(spec));
    for (auto [name, value] : std::initializer_list<std::pair<const char*, size_t>>{
             {"points", summary.points}, {"cells", summary.cells},
             {"fields", summary.fields}}) {
      auto b = env_.store->make_builder(ElemType::Int64);
      b.push(Scalar(static_cast<int64_t>(value)));
      sub->atts[name] = b.seal();
    }
    sub->length = 1;
    return sub;
  }

 private:
  const PlanNode& node_;
  ExecEnv& env_;
  std::vector<Port> inputs_;
  bool done_ = false;
};

// --- executor ----------------------------------------------------------------

// Wires a plan into runners and shared streams and drives the root. Every
// stream port (including the driver's) is finished when execution ends, so
// the cache drains even on early termination.
class Executor {
 public:
  Executor(const QueryPlan& plan, const TarSchema& schema, DatasetStore& store,
           ExecConfig cfg = {}) {
    env_.schema = &schema;
    env_.store = &store;
    env_.cfg = cfg;
    auto consumers = plan.consumer_counts();

    std::map<int, ScanRunner*> scans;
    for (const auto& node : plan.nodes) {
      std::vector<Port> ports;
      for (const auto& in : node->inputs) {
        SharedStream* s = streams_.at(in->id).get();
        Port p{s, s->add_consumer()};
        ports_.push_back(p);
        ports.push_back(p);
      }
      std::unique_ptr<NodeRunner> runner;
      switch (node->kind) {
        case OpKind::TarRef: {
          auto scan = std::make_unique<ScanRunner>(*node, env_);
          scans[node->id] = scan.get();
          runner = std::move(scan);
          break;
        }
        case OpKind::Select:
          runner = std::make_unique<SelectRunner>(*node, env_, ports[0]);
          break;
        case OpKind::Where:
          runner = std::make_unique<WhereRunner>(*node, env_, ports[0]);
          break;
        case OpKind::Subset: {
          auto subset = std::make_unique<SubsetRunner>(*node, env_, ports[0]);
          const auto& in = node->inputs[0];
          if (in->kind == OpKind::TarRef && consumers[in->id] == 1) {
            // sole consumer of a stored TAR: push the window down so only
            // intersecting subTARs are pulled at all
            scans.at(in->id)->push_region(subset->region(),
                                          subset->empty_result());
          }
          runner = std::move(subset);
          break;
        }
        case OpKind::Derive:
          runner = std::make_unique<DeriveRunner>(*node, env_, ports[0]);
          break;
        case OpKind::CrossJoin:
          runner = std::make_unique<CrossJoinRunner>(*node, env_, ports[0],
                                                     ports[1]);
          break;
        case OpKind::DimJoin:
          runner = std::make_unique<DimJoinRunner>(*node, env_, ports[0],
                                                   ports[1]);
          break;
        case OpKind::Aggregate:
          runner = std::make_unique<AggregateRunner>(*node, env_, ports[0]);
          break;
        case OpKind::Catalyze:
          runner = std::make_unique<CatalyzeRunner>(*node, env_, ports);
          break;
      }
      streams_[node->id] = std::make_unique<SharedStream>(
          node->id, std::move(runner), &env_.stats.cache);
    }
    root_schema_ = plan.root->schema;
    SharedStream* root = streams_.at(plan.root->id).get();
    driver_ = Port{root, root->add_consumer()};
    ports_.push_back(driver_);
    verify_ = cfg.verify_outputs;
  }

  TarDefPtr schema() const { return root_schema_; }

  // Next root subTAR; the cache entry is released as soon as it is handed
  // over (shared ownership keeps the data alive for the caller).
  SubTarPtr next() {
    auto p = driver_.next();
    if (!p) return nullptr;
    if (verify_) verify_schema(*p.item);
    driver_.release(p.ordinal);
    return p.item;
  }

  void finish() {
    for (auto& p : ports_) p.finish();
  }

  size_t live_cache_entries() const {
    size_t n = 0;
    for (const auto& [id, s] : streams_) n += s->live_entries();
    return n;
  }

  ExecStats& stats() { return env_.stats; }

 private:
  void verify_schema(const SubTar& s) const {
    for (const auto& e : root_schema_->elements) {
      const DataElement* got = s.tar->find(e.name);
      if (!got || got->kind != e.kind || got->type != e.type)
        throw Error(ErrorCode::EvaluationError,
                    "emitted subTAR does not match the inferred schema at " +
                        e.name);
    }
  }

  ExecEnv env_;
  std::map<int, std::unique_ptr<SharedStream>> streams_;
  std::vector<Port> ports_;
  Port driver_;
  TarDefPtr root_schema_;
  bool verify_ = true;
};

struct QueryResult {
  TarDefPtr schema;
  std::vector<SubTarPtr> subtars;
  ExecStats stats;

  size_t total_cells() const {
    size_t n = 0;
    for (const auto& s : subtars) n += s->length;
    return n;
  }
};

inline QueryResult run_plan(const QueryPlan& plan, const TarSchema& schema,
                            DatasetStore& store, ExecConfig cfg = {}) {
  Executor ex(plan, schema, store, cfg);
  QueryResult result;
  result.schema = ex.schema();
  while (auto s = ex.next()) result.subtars.push_back(s);
  ex.finish();
  if (ex.live_cache_entries() != 0)
    throw Error(ErrorCode::EvaluationError, "cache not drained after query");
  result.stats = ex.stats();
  return result;
}

}  // namespace savime
