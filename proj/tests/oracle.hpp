#pragma once

// Brute-force reference implementations used to validate the engine. The
// oracle materializes TARs into dense maps keyed by real-index location and
// reimplements every operator naively over those maps. Ground truth for
// generated TARs is recorded by the generator itself while it lays the data
// out, so reading back through the engine is never part of the reference
// path.

#include <map>
#include <random>
#include <set>

#include "test_support.hpp"

namespace savime::testing {

// location (canonical def-dimension order) -> attribute values
using Cells = std::map<std::vector<int64_t>, std::map<std::string, Scalar>>;

struct OracleTar {
  TarDefPtr def;
  Cells cells;
};

// Element environment of one cell: dimension logical values plus attributes.
inline std::map<std::string, Scalar> oracle_env(const OracleTar& t,
                                                const std::vector<int64_t>& loc,
                                                const std::map<std::string, Scalar>& atts) {
  std::map<std::string, Scalar> env = atts;
  size_t d = 0;
  for (const auto& e : t.def->elements) {
    if (!e.is_dimension()) continue;
    env[e.name] = e.domain->real_to_logical(loc[d]);
    ++d;
  }
  return env;
}

// Independent expression evaluator (map-based, recursive on the parse tree).
inline Scalar oracle_eval(const Expr& e, const std::map<std::string, Scalar>& env) {
  auto truthy = [](const Scalar& v) {
    return v.is_integer() ? v.as_int64() != 0 : v.as_double() != 0.0;
  };
  switch (e.op) {
    case ExprOp::Literal: return e.literal;
    case ExprOp::Element: return env.at(e.element);
    case ExprOp::Neg: {
      Scalar v = oracle_eval(*e.kids[0], env);
      return v.is_integer() ? Scalar(-v.as_int64()) : Scalar(-v.as_double());
    }
    case ExprOp::Not:
      return Scalar(int64_t(!truthy(oracle_eval(*e.kids[0], env))));
    case ExprOp::And:
      return Scalar(int64_t(truthy(oracle_eval(*e.kids[0], env)) &&
                            truthy(oracle_eval(*e.kids[1], env))));
    case ExprOp::Or:
      return Scalar(int64_t(truthy(oracle_eval(*e.kids[0], env)) ||
                            truthy(oracle_eval(*e.kids[1], env))));
    default: break;
  }
  Scalar a = oracle_eval(*e.kids[0], env);
  Scalar b = oracle_eval(*e.kids[1], env);
  int c = a.compare(b);
  switch (e.op) {
    case ExprOp::Eq: return Scalar(int64_t(c == 0));
    case ExprOp::Ne: return Scalar(int64_t(c != 0));
    case ExprOp::Lt: return Scalar(int64_t(c < 0));
    case ExprOp::Le: return Scalar(int64_t(c <= 0));
    case ExprOp::Gt: return Scalar(int64_t(c > 0));
    case ExprOp::Ge: return Scalar(int64_t(c >= 0));
    default: break;
  }
  if (a.is_integer() && b.is_integer()) {
    int64_t x = a.as_int64(), y = b.as_int64();
    switch (e.op) {
      case ExprOp::Add: return Scalar(x + y);
      case ExprOp::Sub: return Scalar(x - y);
      case ExprOp::Mul: return Scalar(x * y);
      default:
        if (y == 0) throw Error(ErrorCode::EvaluationError, "division by zero");
        return Scalar(x / y);
    }
  }
  double x = a.as_double(), y = b.as_double();
  switch (e.op) {
    case ExprOp::Add: return Scalar(x + y);
    case ExprOp::Sub: return Scalar(x - y);
    case ExprOp::Mul: return Scalar(x * y);
    default:
      if (y == 0.0) throw Error(ErrorCode::EvaluationError, "division by zero");
      return Scalar(x / y);
  }
}

// --- naive operators -----------------------------------------------------------

inline std::vector<size_t> dim_positions(const TarDef& def) {
  std::vector<size_t> pos;
  size_t d = 0;
  for (const auto& e : def.elements)
    if (e.is_dimension()) pos.push_back(d++);
  return pos;
}

inline OracleTar o_select(const OracleTar& in, const TarSchema& schema,
                          const std::vector<std::string>& elements) {
  OracleTar out;
  out.def = infer_select(*in.def, schema, elements, "o_select");
  // surviving elements come from the inferred schema (an attribute-only
  // projection keeps every dimension implicitly)
  std::set<std::string> keep;
  for (const auto& e : out.def->elements) keep.insert(e.name);
  std::vector<size_t> survive;
  size_t d = 0;
  for (const auto& e : in.def->elements) {
    if (!e.is_dimension()) continue;
    if (keep.count(e.name)) survive.push_back(d);
    ++d;
  }
  for (const auto& [loc, atts] : in.cells) {
    std::vector<int64_t> out_loc;
    for (size_t i : survive) out_loc.push_back(loc[i]);
    std::map<std::string, Scalar> out_atts;
    for (const auto& [name, v] : atts)
      if (keep.count(name)) out_atts[name] = v;
    out.cells[out_loc] = out_atts;
  }
  return out;
}

inline OracleTar o_where(const OracleTar& in, const ExprPtr& pred) {
  OracleTar out;
  out.def = in.def;
  for (const auto& [loc, atts] : in.cells) {
    Scalar v = oracle_eval(*pred, oracle_env(in, loc, atts));
    bool keep = v.is_integer() ? v.as_int64() != 0 : v.as_double() != 0.0;
    if (keep) out.cells[loc] = atts;
  }
  return out;
}

inline OracleTar o_subset(const OracleTar& in,
                          const std::vector<SubsetBound>& bounds) {
  OracleTar out;
  out.def = in.def;
  for (const auto& [loc, atts] : in.cells) {
    bool inside = true;
    size_t d = 0;
    for (const auto& e : in.def->elements) {
      if (!e.is_dimension()) continue;
      double logical = e.domain->real_to_logical(loc[d]).as_double();
      for (const auto& b : bounds) {
        if (b.dimension == e.name &&
            (logical < b.lo.as_double() || logical > b.hi.as_double()))
          inside = false;
      }
      ++d;
    }
    if (inside) out.cells[loc] = atts;
  }
  return out;
}

inline OracleTar o_derive(const OracleTar& in, const TarSchema& schema,
                          const std::string& name, const ExprPtr& expr) {
  OracleTar out;
  out.def = infer_derive(*in.def, schema, name, expr, "o_derive");
  ElemType t = out.def->require(name).type;
  for (const auto& [loc, atts] : in.cells) {
    Scalar v = oracle_eval(*expr, oracle_env(in, loc, atts));
    auto out_atts = atts;
    out_atts[name] = t == ElemType::Int64 ? Scalar(v.as_int64())
                                          : Scalar(v.as_double());
    out.cells[loc] = out_atts;
  }
  return out;
}

inline std::string renamed(const std::map<std::string, std::string>& m,
                           const std::string& n) {
  auto it = m.find(n);
  return it == m.end() ? n : it->second;
}

inline OracleTar o_cross(const OracleTar& l, const OracleTar& r,
                         const TarSchema& schema) {
  OracleTar out;
  std::map<std::string, std::string> rl, rr;
  out.def = infer_cross_join(*l.def, *r.def, schema, rl, rr, "o_cross");
  for (const auto& [lloc, latts] : l.cells) {
    for (const auto& [rloc, ratts] : r.cells) {
      std::vector<int64_t> loc = lloc;
      loc.insert(loc.end(), rloc.begin(), rloc.end());
      std::map<std::string, Scalar> atts;
      for (const auto& [n, v] : latts) atts[renamed(rl, n)] = v;
      for (const auto& [n, v] : ratts) atts[renamed(rr, n)] = v;
      out.cells[loc] = atts;
    }
  }
  return out;
}

inline OracleTar o_dimjoin(
    const OracleTar& l, const OracleTar& r, const TarSchema& schema,
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  OracleTar out;
  std::map<std::string, std::string> rl, rr;
  out.def = infer_dim_join(*l.def, *r.def, schema, pairs, rl, rr, "o_dimjoin");
  auto ldims = l.def->dimensions();
  auto rdims = r.def->dimensions();
  std::set<std::string> rpaired;
  for (const auto& [a, b] : pairs) rpaired.insert(b);
  for (const auto& [lloc, latts] : l.cells) {
    for (const auto& [rloc, ratts] : r.cells) {
      bool match = true;
      for (const auto& [ld, rd] : pairs) {
        Scalar lv, rv;
        for (size_t i = 0; i < ldims.size(); ++i)
          if (ldims[i]->name == ld) lv = ldims[i]->domain->real_to_logical(lloc[i]);
        for (size_t i = 0; i < rdims.size(); ++i)
          if (rdims[i]->name == rd) rv = rdims[i]->domain->real_to_logical(rloc[i]);
        if (!(lv == rv)) match = false;
      }
      if (!match) continue;
      std::vector<int64_t> loc = lloc;
      for (size_t i = 0; i < rdims.size(); ++i)
        if (!rpaired.count(rdims[i]->name)) loc.push_back(rloc[i]);
      std::map<std::string, Scalar> atts;
      for (const auto& [n, v] : latts) atts[renamed(rl, n)] = v;
      for (const auto& [n, v] : ratts) atts[renamed(rr, n)] = v;
      out.cells[loc] = atts;
    }
  }
  return out;
}

inline OracleTar o_aggregate(const OracleTar& in, const TarSchema& schema,
                             AggFn fn, const std::string& target,
                             const std::string& out_name,
                             const std::vector<std::string>& groups) {
  OracleTar out;
  out.def = infer_aggregate(*in.def, schema, fn, target, out_name, groups,
                            "o_aggregate");
  // canonical positions of the group dimensions, in the listed order
  std::vector<size_t> gpos;
  for (const auto& g : groups) {
    size_t d = 0;
    for (const auto& e : in.def->elements) {
      if (!e.is_dimension()) continue;
      if (e.name == g) gpos.push_back(d);
      ++d;
    }
  }
  struct A {
    long double fsum = 0;
    int64_t isum = 0;
    int64_t count = 0;
    Scalar mn, mx;
  };
  std::map<std::vector<int64_t>, A> acc;
  bool int_target = elem_is_integer(in.def->require(target).type);
  for (const auto& [loc, atts] : in.cells) {
    std::vector<int64_t> key;
    for (size_t i : gpos) key.push_back(loc[i]);
    Scalar v = atts.at(target);
    auto [it, fresh] = acc.try_emplace(key);
    A& a = it->second;
    if (fresh) {
      a.mn = v;
      a.mx = v;
    } else {
      if (v < a.mn) a.mn = v;
      if (a.mx < v) a.mx = v;
    }
    a.fsum += static_cast<long double>(v.as_double());
    a.isum += v.is_integer() ? v.as_int64() : 0;
    ++a.count;
  }
  for (const auto& [key, a] : acc) {
    Scalar v;
    switch (fn) {
      case AggFn::Count: v = Scalar(a.count); break;
      case AggFn::Sum:
        v = int_target ? Scalar(a.isum) : Scalar(double(a.fsum));
        break;
      case AggFn::Avg:
        v = Scalar(double((int_target ? static_cast<long double>(a.isum)
                                      : a.fsum) /
                          static_cast<long double>(a.count)));
        break;
      case AggFn::Min: v = a.mn; break;
      case AggFn::Max: v = a.mx; break;
    }
    std::vector<int64_t> loc = key;
    if (groups.empty()) loc = {0};  // synthetic unit dimension
    out.cells[loc][out_name] = v;
  }
  return out;
}

// --- engine result comparison ---------------------------------------------------

// Reads an engine result into the oracle cell form (canonical dimension
// order of its schema).
inline Cells materialize_result(const QueryResult& r) {
  Cells cells;
  auto dims = r.schema->dimensions();
  auto atts = r.schema->attributes();
  for (const auto& sub : r.subtars) {
    std::vector<size_t> dim_pos;  // canonical dim -> index in dim_specs
    for (const auto* d : dims)
      for (size_t i = 0; i < sub->dim_specs.size(); ++i)
        if (sub->dim_specs[i].dimension == d->name) dim_pos.push_back(i);
    enumerate_cells(*sub, nullptr, nullptr,
                    [&](std::span<const int64_t> loc, size_t offset) {
                      std::vector<int64_t> key;
                      for (size_t i : dim_pos) key.push_back(loc[i]);
                      auto& row = cells[key];
                      for (const auto* a : atts)
                        row[a->name] = sub->att_value(a->name, offset);
                    });
  }
  return cells;
}

inline bool scalar_close(const Scalar& a, const Scalar& b, double rel_tol) {
  if (a.is_integer() && b.is_integer()) return a.as_int64() == b.as_int64();
  double x = a.as_double(), y = b.as_double();
  if (x == y) return true;
  double scale = std::max(std::abs(x), std::abs(y));
  return std::abs(x - y) <= rel_tol * std::max(scale, 1.0);
}

inline bool oracle_matches(const OracleTar& expected, const QueryResult& got,
                           double rel_tol, std::string* diag = nullptr) {
  Cells actual = materialize_result(got);
  if (actual.size() != expected.cells.size()) {
    if (diag)
      *diag = "cell count: engine " + std::to_string(actual.size()) +
              " vs oracle " + std::to_string(expected.cells.size());
    return false;
  }
  auto ai = actual.begin();
  for (auto ei = expected.cells.begin(); ei != expected.cells.end();
       ++ei, ++ai) {
    if (ai->first != ei->first) {
      if (diag) *diag = "location mismatch";
      return false;
    }
    for (const auto& [name, v] : ei->second) {
      auto it = ai->second.find(name);
      if (it == ai->second.end() || !scalar_close(it->second, v, rel_tol)) {
        if (diag) {
          *diag = "value mismatch at " + name + ": engine " +
                  (it == ai->second.end() ? "<missing>" : it->second.to_string()) +
                  " vs oracle " + v.to_string();
        }
        return false;
      }
    }
  }
  return true;
}

// --- random TAR generator (all six layout configurations) --------------------------

struct GeneratedTar {
  std::string name;
  OracleTar truth;
};

struct GenOptions {
  size_t max_dims = 3;
  size_t max_card = 8;        // per-dimension domain cardinality
  size_t max_subtars = 3;
  size_t max_atts = 2;
  bool allow_float_dims = true;
  bool allow_constants = true;
};

// Lays out random subTARs across Ordered/Partial/Total configurations over
// implicit and explicit domains, recording ground truth independently of the
// engine's layout code (its own odometer arithmetic).
inline GeneratedTar gen_random_tar(TarSchema& schema, DatasetStore& store,
                                   std::mt19937_64& rng, const std::string& name,
                                   const GenOptions& opt = {}) {
  auto pick = [&rng](size_t n) { return rng() % n; };

  size_t ndims = 1 + pick(opt.max_dims);
  std::vector<DataElement> elements;
  for (size_t d = 0; d < ndims; ++d) {
    DataElement e;
    e.name = "d" + std::to_string(d);
    e.kind = ElemKind::Dimension;
    bool flt = opt.allow_float_dims && pick(3) == 0;
    size_t card = 2 + pick(opt.max_card - 1);
    if (pick(2) == 0) {
      // implicit domain
      e.type = flt ? ElemType::Float64 : (pick(2) ? ElemType::Int64 : ElemType::Int32);
      double lower = flt ? -2.5 + double(pick(10)) * 0.5 : double(int64_t(pick(7)) - 3);
      double spacing = flt ? (pick(2) ? 0.5 : 2.5) : double(1 + pick(3));
      e.domain = Domain::implicit(e.type, lower,
                                  lower + spacing * double(card - 1), spacing);
    } else {
      // explicit domain: strictly increasing values
      e.type = flt ? ElemType::Float64 : ElemType::Int64;
      std::vector<Scalar> values;
      double v = flt ? -3.7 : -5;
      for (size_t i = 0; i < card; ++i) {
        v += flt ? 0.1 + double(pick(40)) * 0.25 : double(1 + pick(4));
        values.push_back(flt ? Scalar(v) : Scalar(int64_t(v)));
      }
      e.domain = Domain::explicit_values(e.type, store.from_values(e.type, values));
    }
    elements.push_back(std::move(e));
  }
  size_t natts = 1 + pick(opt.max_atts);
  std::vector<ElemType> att_types;
  for (size_t a = 0; a < natts; ++a) {
    DataElement e;
    e.name = "a" + std::to_string(a);
    e.kind = ElemKind::Attribute;
    switch (pick(4)) {
      case 0: e.type = ElemType::Int32; break;
      case 1: e.type = ElemType::Int64; break;
      case 2: e.type = ElemType::Float32; break;
      default: e.type = ElemType::Float64; break;
    }
    att_types.push_back(e.type);
    elements.push_back(std::move(e));
  }
  auto tar = schema.define_tar(name, std::nullopt, elements, {});

  GeneratedTar out;
  out.name = name;
  out.truth.def = tar->def;

  auto rand_value = [&](ElemType t) -> Scalar {
    switch (t) {
      case ElemType::Int32: return Scalar(int32_t(int64_t(pick(101)) - 50));
      case ElemType::Int64: return Scalar(int64_t(pick(101)) - 50);
      case ElemType::Float32:
        return Scalar(float(double(pick(1000)) / 8.0 - 40.0));
      default: return Scalar(double(pick(100000)) / 128.0);
    }
  };

  // disjoint boxes: contiguous segments along dimension 0
  int64_t card0 = tar->def->dimensions()[0]->domain->cardinality();
  size_t nsubs = 1 + pick(opt.max_subtars);
  std::vector<std::pair<int64_t, int64_t>> segments;
  int64_t cursor = 0;
  for (size_t s = 0; s < nsubs && cursor < card0; ++s) {
    int64_t len = 1 + int64_t(pick(size_t(card0 - cursor)));
    len = std::min(len, card0 - cursor);
    segments.emplace_back(cursor, cursor + len - 1);
    cursor += len + int64_t(pick(2));  // occasional gap (empty region)
  }

  auto dims = tar->def->dimensions();
  for (const auto& [seg_lo, seg_hi] : segments) {
    // box bounds per dimension
    std::vector<std::pair<int64_t, int64_t>> box(ndims);
    box[0] = {seg_lo, seg_hi};
    for (size_t d = 1; d < ndims; ++d) {
      int64_t card = dims[d]->domain->cardinality();
      int64_t a = int64_t(pick(size_t(card)));
      int64_t b = a + int64_t(pick(size_t(card - a)));
      box[d] = {a, b};
    }
    // layout order: random permutation of dimensions
    std::vector<size_t> order(ndims);
    for (size_t i = 0; i < ndims; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    int config = int(pick(3));  // 0 ordered, 1 partial, 2 total
    std::vector<DimensionSpec> specs;
    std::vector<std::vector<int64_t>> positions(ndims);  // in layout order

    if (config == 2) {
      // Total: random nonempty subset of the box cells, random storage order
      std::vector<std::vector<int64_t>> all_cells;
      std::vector<int64_t> cur(ndims);
      std::function<void(size_t)> walk = [&](size_t d) {
        if (d == ndims) {
          all_cells.push_back(cur);
          return;
        }
        for (int64_t i = box[d].first; i <= box[d].second; ++i) {
          cur[d] = i;
          walk(d + 1);
        }
      };
      walk(0);
      std::shuffle(all_cells.begin(), all_cells.end(), rng);
      size_t keep = 1 + pick(all_cells.size());
      all_cells.resize(keep);
      // index datasets, one per dimension, in layout order
      for (size_t k = 0; k < ndims; ++k) {
        size_t d = order[k];
        DimensionSpec spec;
        spec.dimension = dims[d]->name;
        spec.kind = SpecKind::Total;
        spec.lower = box[d].first;
        spec.upper = box[d].second;
        std::vector<Scalar> stored;
        for (const auto& cell : all_cells)
          stored.push_back(dims[d]->domain->is_implicit()
                               ? dims[d]->domain->real_to_logical(cell[d])
                               : Scalar(cell[d]));
        spec.data = store.from_values(
            dims[d]->domain->is_implicit() ? dims[d]->type : ElemType::Int64,
            stored);
        specs.push_back(std::move(spec));
      }
      // attributes in the same storage order
      std::map<std::string, DatasetPtr> atts;
      std::vector<std::vector<Scalar>> values(natts);
      for (size_t i = 0; i < all_cells.size(); ++i)
        for (size_t a = 0; a < natts; ++a)
          values[a].push_back(rand_value(att_types[a]));
      for (size_t a = 0; a < natts; ++a) {
        bool constant =
            opt.allow_constants && all_cells.size() > 1 && pick(6) == 0;
        if (constant) {
          Scalar c = values[a][0];
          for (auto& v : values[a]) v = c;
          atts["a" + std::to_string(a)] =
              store.from_values(att_types[a], {c});
        } else {
          atts["a" + std::to_string(a)] =
              store.from_values(att_types[a], values[a]);
        }
      }
      schema.attach_subtar(name, specs, atts);
      for (size_t i = 0; i < all_cells.size(); ++i) {
        auto& row = out.truth.cells[all_cells[i]];
        for (size_t a = 0; a < natts; ++a)
          row["a" + std::to_string(a)] = values[a][i];
      }
      continue;
    }

    // Ordered / Partial: per-dimension filled position lists (layout order)
    for (size_t k = 0; k < ndims; ++k) {
      size_t d = order[k];
      DimensionSpec spec;
      spec.dimension = dims[d]->name;
      spec.lower = box[d].first;
      spec.upper = box[d].second;
      bool partial = config == 1 && pick(2) == 0;
      if (partial) {
        std::vector<int64_t> present;
        for (int64_t i = box[d].first; i <= box[d].second; ++i)
          if (pick(2) == 0) present.push_back(i);
        if (present.empty())
          present.push_back(box[d].first + int64_t(pick(size_t(
                                box[d].second - box[d].first + 1))));
        spec.kind = SpecKind::Partial;
        std::vector<Scalar> stored;
        for (int64_t real : present)
          stored.push_back(dims[d]->domain->is_implicit()
                               ? dims[d]->domain->real_to_logical(real)
                               : Scalar(real));
        spec.data = store.from_values(
            dims[d]->domain->is_implicit() ? dims[d]->type : ElemType::Int64,
            stored);
        positions[k] = present;
      } else {
        spec.kind = SpecKind::Ordered;
        for (int64_t i = box[d].first; i <= box[d].second; ++i)
          positions[k].push_back(i);
      }
      specs.push_back(std::move(spec));
    }
    // enumerate the cross product with our own odometer (layout order,
    // fastest-varying last)
    std::vector<std::vector<int64_t>> cells_in_order;
    std::vector<size_t> idx(ndims, 0);
    while (true) {
      std::vector<int64_t> cell(ndims);
      for (size_t k = 0; k < ndims; ++k) cell[order[k]] = positions[k][idx[k]];
      cells_in_order.push_back(std::move(cell));
      size_t k = ndims;
      bool done = true;
      while (k-- > 0) {
        if (++idx[k] < positions[k].size()) {
          done = false;
          break;
        }
        idx[k] = 0;
        if (k == 0) break;
      }
      if (done) break;
    }
    std::map<std::string, DatasetPtr> atts;
    std::vector<std::vector<Scalar>> values(natts);
    for (size_t i = 0; i < cells_in_order.size(); ++i)
      for (size_t a = 0; a < natts; ++a)
        values[a].push_back(rand_value(att_types[a]));
    for (size_t a = 0; a < natts; ++a) {
      bool constant =
          opt.allow_constants && cells_in_order.size() > 1 && pick(6) == 0;
      if (constant) {
        Scalar c = values[a][0];
        for (auto& v : values[a]) v = c;
        atts["a" + std::to_string(a)] = store.from_values(att_types[a], {c});
      } else {
        atts["a" + std::to_string(a)] = store.from_values(att_types[a], values[a]);
      }
    }
    schema.attach_subtar(name, specs, atts);
    for (size_t i = 0; i < cells_in_order.size(); ++i) {
      auto& row = out.truth.cells[cells_in_order[i]];
      for (size_t a = 0; a < natts; ++a)
        row["a" + std::to_string(a)] = values[a][i];
    }
  }
  return out;
}

}  // namespace savime::testing
