#pragma once

#include <cctype>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "savime/expression.hpp"
#include "savime/tars.hpp"

namespace savime {

// --- tokens -----------------------------------------------------------------

enum class TokKind : uint8_t {
  End,
  Ident,
  Number,
  String,
  LParen,
  RParen,
  Comma,
  Plus,
  Minus,
  Star,
  Slash,
  Eq,
  Ne,
  Lt,
  Le,
  Gt,
  Ge,
};

struct Token {
  TokKind kind = TokKind::End;
  std::string text;
  Scalar number;
  size_t offset = 0;
};

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  size_t i = 0;
  auto is_ident_start = [](char c) {
    return isalpha(static_cast<unsigned char>(c)) || c == '_';
  };
  auto is_ident = [](char c) {
    return isalnum(static_cast<unsigned char>(c)) || c == '_';
  };
  while (i < text.size()) {
    char c = text[i];
    if (isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.offset = i;
    if (is_ident_start(c)) {
      size_t start = i;
      while (i < text.size() && is_ident(text[i])) ++i;
      t.kind = TokKind::Ident;
      t.text = std::string(text.substr(start, i - start));
    } else if (isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < text.size() &&
                isdigit(static_cast<unsigned char>(text[i + 1])))) {
      size_t start = i;
      bool is_float = false;
      while (i < text.size() &&
             (isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.' ||
              text[i] == 'e' || text[i] == 'E' ||
              ((text[i] == '+' || text[i] == '-') && i > start &&
               (text[i - 1] == 'e' || text[i - 1] == 'E')))) {
        if (text[i] == '.' || text[i] == 'e' || text[i] == 'E') is_float = true;
        ++i;
      }
      std::string num(text.substr(start, i - start));
      t.kind = TokKind::Number;
      t.text = num;
      try {
        if (is_float)
          t.number = Scalar(std::stod(num));
        else
          t.number = Scalar(static_cast<int64_t>(std::stoll(num)));
      } catch (const std::exception&) {
        throw Error(ErrorCode::SyntaxError, "bad numeric literal '" + num + "'",
                    static_cast<long>(start));
      }
    } else if (c == '"') {
      size_t start = ++i;
      while (i < text.size() && text[i] != '"') ++i;
      if (i >= text.size())
        throw Error(ErrorCode::SyntaxError, "unterminated string",
                    static_cast<long>(start - 1));
      t.kind = TokKind::String;
      t.text = std::string(text.substr(start, i - start));
      ++i;
    } else {
      switch (c) {
        case '(': t.kind = TokKind::LParen; ++i; break;
        case ')': t.kind = TokKind::RParen; ++i; break;
        case ',': t.kind = TokKind::Comma; ++i; break;
        case '+': t.kind = TokKind::Plus; ++i; break;
        case '-': t.kind = TokKind::Minus; ++i; break;
        case '*': t.kind = TokKind::Star; ++i; break;
        case '/': t.kind = TokKind::Slash; ++i; break;
        case '=': t.kind = TokKind::Eq; ++i; break;
        case '<':
          ++i;
          if (i < text.size() && text[i] == '>') {
            t.kind = TokKind::Ne;
            ++i;
          } else if (i < text.size() && text[i] == '=') {
            t.kind = TokKind::Le;
            ++i;
          } else {
            t.kind = TokKind::Lt;
          }
          break;
        case '>':
          ++i;
          if (i < text.size() && text[i] == '=') {
            t.kind = TokKind::Ge;
            ++i;
          } else {
            t.kind = TokKind::Gt;
          }
          break;
        default:
          throw Error(ErrorCode::SyntaxError,
                      std::string("unexpected character '") + c + "'",
                      static_cast<long>(i));
      }
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.kind = TokKind::End;
  end.offset = text.size();
  out.push_back(end);
  return out;
}

// --- plan -------------------------------------------------------------------

enum class OpKind : uint8_t {
  TarRef,
  Select,
  Where,
  Subset,
  Derive,
  CrossJoin,
  DimJoin,
  Aggregate,
  Catalyze,
};

inline const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::TarRef: return "tar";
    case OpKind::Select: return "select";
    case OpKind::Where: return "where";
    case OpKind::Subset: return "subset";
    case OpKind::Derive: return "derive";
    case OpKind::CrossJoin: return "cross_join";
    case OpKind::DimJoin: return "dimjoin";
    case OpKind::Aggregate: return "aggregate";
    case OpKind::Catalyze: return "catalyze";
  }
  return "?";
}

enum class AggFn : uint8_t { Avg, Sum, Min, Max, Count };

inline const char* agg_fn_name(AggFn f) {
  switch (f) {
    case AggFn::Avg: return "avg";
    case AggFn::Sum: return "sum";
    case AggFn::Min: return "min";
    case AggFn::Max: return "max";
    case AggFn::Count: return "count";
  }
  return "?";
}

struct SubsetBound {
  std::string dimension;
  Scalar lo, hi;
};

struct PlanNode {
  int id = -1;
  OpKind kind = OpKind::TarRef;
  std::string tar_name;                             // TarRef
  std::vector<std::string> elements;                // Select
  ExprPtr expr;                                     // Where / Derive
  std::string new_name;                             // Derive
  std::vector<SubsetBound> bounds;                  // Subset
  std::vector<std::pair<std::string, std::string>> dim_pairs;  // DimJoin
  AggFn agg_fn = AggFn::Sum;                        // Aggregate
  std::string agg_target, agg_out;
  std::vector<std::string> agg_groups;
  std::string out_path;                             // Catalyze
  std::optional<Scalar> time_selector, trial_selector;
  std::map<std::string, std::string> rename_left, rename_right;  // joins
  std::vector<std::shared_ptr<PlanNode>> inputs;
  TarDefPtr schema;  // inferred output schema, fixed at parse time
};

using PlanNodePtr = std::shared_ptr<PlanNode>;

struct QueryPlan {
  PlanNodePtr root;
  std::vector<PlanNodePtr> nodes;  // topological order, inputs first

  // Number of plan-edge consumers of each node (the refcount seeds).
  std::map<int, int> consumer_counts() const {
    std::map<int, int> counts;
    for (const auto& n : nodes)
      for (const auto& in : n->inputs) counts[in->id] += 1;
    return counts;
  }
};

// --- DDL --------------------------------------------------------------------

struct DdlStatement {
  enum class Kind {
    CreateType,
    CreateTar,
    CreateDataset,
    CreateDatasetLiteral,
    LoadSubtar,
    DropTar,
    DropDataset,
    Materialize,
  };
  Kind kind = Kind::CreateType;
  std::string name;
  std::string type_name;       // create_tar TAR type
  ElemType elem_type = ElemType::Float64;  // dataset statements
  std::string mandatory_csv, optional_csv;  // create_type
  std::string dims_spec, atts_spec, role_map_spec;  // create_tar / load_subtar
  std::string payload;         // dataset path or literal values
  std::shared_ptr<QueryPlan> subplan;  // materialize
};

struct Statement {
  std::optional<QueryPlan> query;
  std::optional<DdlStatement> ddl;
};

// --- type propagation ---------------------------------------------------------

// Output TAR type: the input's type survives iff every element fulfilling a
// mandatory role survives the operation; surviving optional-role entries are
// carried over, everything else drops the binding.
inline std::optional<TypeBinding> propagate_binding(
    const TarDef& in, const TarSchema& schema,
    const std::set<std::string>& surviving,
    const std::map<std::string, std::string>& rename = {}) {
  if (!in.binding) return std::nullopt;
  const TarType* type = schema.find_type(in.binding->type_name);
  if (!type) return std::nullopt;
  for (const auto& role : type->mandatory) {
    const DataElement* e = in.element_for_role(role);
    if (!e || !surviving.count(e->name)) return std::nullopt;
  }
  TypeBinding out;
  out.type_name = in.binding->type_name;
  for (const auto& [elem, role] : in.binding->role_map) {
    if (!surviving.count(elem)) continue;
    auto it = rename.find(elem);
    out.role_map[it == rename.end() ? elem : it->second] = role;
  }
  return out;
}

// --- per-operator schema inference -------------------------------------------

namespace detail {

inline std::set<std::string> all_names(const TarDef& def) {
  std::set<std::string> s;
  for (const auto& e : def.elements) s.insert(e.name);
  return s;
}

}  // namespace detail

// A projection that lists no dimension keeps every input dimension; listing
// any dimension makes the dimension set explicit, and dimensions may only be
// dropped when the remaining locations provably stay unique (single-valued
// domains).
inline TarDefPtr infer_select(const TarDef& in, const TarSchema& schema,
                              const std::vector<std::string>& elements,
                              const std::string& node_name) {
  std::set<std::string> keep;
  bool lists_dim = false;
  for (const auto& e : elements) {
    lists_dim |= in.require(e).is_dimension();
    if (!keep.insert(e).second)
      throw Error(ErrorCode::ProjectionError, "duplicate element " + e);
  }
  auto out = std::make_shared<TarDef>();
  out->name = node_name;
  std::set<std::string> surviving;
  bool any_dim = false;
  for (const auto& e : in.elements) {
    bool kept = keep.count(e.name) || (e.is_dimension() && !lists_dim);
    if (kept) {
      out->elements.push_back(e);
      surviving.insert(e.name);
      any_dim |= e.is_dimension();
    } else if (e.is_dimension() && e.domain->cardinality() > 1) {
      // dropping this dimension could collapse distinct locations
      throw Error(ErrorCode::ProjectionError,
                  "cannot drop dimension " + e.name +
                      ": remaining locations would not stay unique");
    }
  }
  if (!any_dim)
    throw Error(ErrorCode::ProjectionError, "at least one dimension required");
  out->binding = propagate_binding(in, schema, surviving);
  return out;
}

inline TarDefPtr infer_replicate(const TarDef& in, const std::string& node_name) {
  auto out = std::make_shared<TarDef>(in);
  out->name = node_name;
  return out;
}

inline TarDefPtr infer_derive(const TarDef& in, const TarSchema& schema,
                              const std::string& new_att, const ExprPtr& expr,
                              const std::string& node_name) {
  if (in.find(new_att))
    throw Error(ErrorCode::BadValue, new_att + " already exists");
  CompiledExpr check(expr, in);  // resolves references
  auto out = std::make_shared<TarDef>(in);
  out->name = node_name;
  DataElement e;
  e.name = new_att;
  e.kind = ElemKind::Attribute;
  e.type = expr_result_type(*expr, in);
  out->elements.push_back(std::move(e));
  (void)schema;
  return out;
}

inline TarDefPtr infer_subset(const TarDef& in,
                              const std::vector<SubsetBound>& bounds,
                              const std::string& node_name) {
  std::set<std::string> seen;
  for (const auto& b : bounds) {
    const DataElement& e = in.require(b.dimension);
    if (!e.is_dimension())
      throw Error(ErrorCode::BoundsError, b.dimension + " is not a dimension");
    if (!seen.insert(b.dimension).second)
      throw Error(ErrorCode::BoundsError, b.dimension + " bounded twice");
    if (b.lo.compare(b.hi) > 0)
      throw Error(ErrorCode::BoundsError,
                  b.dimension + ": lower bound exceeds upper bound");
  }
  return infer_replicate(in, node_name);
}

// Renames colliding element names with left_/right_ prefixes until unique.
inline void plan_collision_renames(const TarDef& left, const TarDef& right,
                                   const std::set<std::string>& right_surviving,
                                   std::map<std::string, std::string>& rename_l,
                                   std::map<std::string, std::string>& rename_r) {
  auto lnames = detail::all_names(left);
  std::set<std::string> rnames;
  for (const auto& e : right.elements)
    if (right_surviving.count(e.name)) rnames.insert(e.name);
  std::set<std::string> used;
  for (const auto& n : lnames)
    if (!rnames.count(n)) used.insert(n);
  for (const auto& n : rnames)
    if (!lnames.count(n)) used.insert(n);
  for (const auto& n : lnames) {
    if (!rnames.count(n)) continue;
    std::string ln = "left_" + n, rn = "right_" + n;
    while (used.count(ln)) ln = "left_" + ln;
    while (used.count(rn)) rn = "right_" + rn;
    used.insert(ln);
    used.insert(rn);
    rename_l[n] = ln;
    rename_r[n] = rn;
  }
}

inline TarDefPtr infer_cross_join(const TarDef& left, const TarDef& right,
                                  const TarSchema& schema,
                                  std::map<std::string, std::string>& rename_l,
                                  std::map<std::string, std::string>& rename_r,
                                  const std::string& node_name) {
  plan_collision_renames(left, right, detail::all_names(right), rename_l,
                         rename_r);
  auto renamed = [](const std::map<std::string, std::string>& m,
                    const DataElement& e) {
    DataElement out = e;
    auto it = m.find(e.name);
    if (it != m.end()) out.name = it->second;
    return out;
  };
  auto out = std::make_shared<TarDef>();
  out->name = node_name;
  for (const auto* d : left.dimensions()) out->elements.push_back(renamed(rename_l, *d));
  for (const auto* d : right.dimensions()) out->elements.push_back(renamed(rename_r, *d));
  for (const auto* a : left.attributes()) out->elements.push_back(renamed(rename_l, *a));
  for (const auto* a : right.attributes()) out->elements.push_back(renamed(rename_r, *a));
  out->binding = propagate_binding(left, schema, detail::all_names(left), rename_l);
  return out;
}

inline TarDefPtr infer_dim_join(
    const TarDef& left, const TarDef& right, const TarSchema& schema,
    const std::vector<std::pair<std::string, std::string>>& pairs,
    std::map<std::string, std::string>& rename_l,
    std::map<std::string, std::string>& rename_r,
    const std::string& node_name) {
  if (pairs.empty())
    throw Error(ErrorCode::ArityError, "dimjoin needs at least one pair");
  std::set<std::string> lseen, rseen;
  for (const auto& [l, r] : pairs) {
    const DataElement& le = left.require(l);
    const DataElement& re = right.require(r);
    if (!le.is_dimension() || !re.is_dimension())
      throw Error(ErrorCode::IncomparableDimensions,
                  l + "/" + r + ": join elements must be dimensions");
    if (le.type != re.type)
      throw Error(ErrorCode::IncomparableDimensions,
                  l + " is " + elem_name(le.type) + " but " + r + " is " +
                      elem_name(re.type));
    if (!lseen.insert(l).second || !rseen.insert(r).second)
      throw Error(ErrorCode::ArityError, "dimension joined twice");
  }
  std::set<std::string> right_surviving;
  for (const auto& e : right.elements)
    if (!(e.is_dimension() && rseen.count(e.name)))
      right_surviving.insert(e.name);
  plan_collision_renames(left, right, right_surviving, rename_l, rename_r);
  auto renamed = [](const std::map<std::string, std::string>& m,
                    const DataElement& e) {
    DataElement out = e;
    auto it = m.find(e.name);
    if (it != m.end()) out.name = it->second;
    return out;
  };
  auto out = std::make_shared<TarDef>();
  out->name = node_name;
  for (const auto* d : left.dimensions()) out->elements.push_back(renamed(rename_l, *d));
  for (const auto* d : right.dimensions())
    if (!rseen.count(d->name)) out->elements.push_back(renamed(rename_r, *d));
  for (const auto* a : left.attributes()) out->elements.push_back(renamed(rename_l, *a));
  for (const auto* a : right.attributes()) out->elements.push_back(renamed(rename_r, *a));
  out->binding = propagate_binding(left, schema, detail::all_names(left), rename_l);
  return out;
}

inline DataElement synthetic_unit_dimension() {
  DataElement d;
  d.name = "i";
  d.kind = ElemKind::Dimension;
  d.type = ElemType::Int64;
  d.domain = Domain::implicit(ElemType::Int64, 0, 0, 1);
  return d;
}

inline TarDefPtr infer_aggregate(const TarDef& in, const TarSchema& schema,
                                 AggFn fn, const std::string& target,
                                 const std::string& out_name,
                                 const std::vector<std::string>& groups,
                                 const std::string& node_name) {
  const DataElement& t = in.require(target);
  if (t.is_dimension())
    throw Error(ErrorCode::TypeMismatch, target + " is a dimension");
  std::set<std::string> gset;
  for (const auto& g : groups) {
    const DataElement& e = in.require(g);
    if (!e.is_dimension())
      throw Error(ErrorCode::TypeMismatch, g + " is not a dimension");
    if (!gset.insert(g).second)
      throw Error(ErrorCode::ArityError, g + " grouped twice");
  }
  auto out = std::make_shared<TarDef>();
  out->name = node_name;
  if (groups.empty()) {
    out->elements.push_back(synthetic_unit_dimension());
    if (out_name == "i")
      throw Error(ErrorCode::BadValue, "output name collides with dimension i");
  } else {
    for (const auto& g : groups) out->elements.push_back(*in.find(g));
    if (gset.count(out_name))
      throw Error(ErrorCode::BadValue, out_name + " collides with a group dim");
  }
  DataElement a;
  a.name = out_name;
  a.kind = ElemKind::Attribute;
  switch (fn) {
    case AggFn::Avg: a.type = ElemType::Float64; break;
    case AggFn::Count: a.type = ElemType::Int64; break;
    case AggFn::Sum:
      a.type = elem_is_integer(t.type) ? ElemType::Int64 : ElemType::Float64;
      break;
    case AggFn::Min:
    case AggFn::Max: a.type = t.type; break;
  }
  out->elements.push_back(std::move(a));
  out->binding = propagate_binding(in, schema, gset);
  return out;
}

inline TarDefPtr infer_catalyze(const std::vector<TarDefPtr>& inputs,
                                const std::string& node_name) {
  if (inputs.size() < 3)
    throw Error(ErrorCode::ArityError,
                "catalyze needs geometry, topology and at least one field");
  auto type_of = [](const TarDef& d) -> std::string {
    return d.binding ? d.binding->type_name : "";
  };
  if (type_of(*inputs[0]) != kGeometryType)
    throw Error(ErrorCode::TypeMismatch,
                "geometry input must be of type cartesian_geometry");
  std::string topo = type_of(*inputs[1]);
  if (topo != kIncidentTopologyType && topo != kAdjacencyTopologyType)
    throw Error(ErrorCode::TypeMismatch,
                "topology input must be a topology-typed TAR");
  for (size_t i = 2; i < inputs.size(); ++i)
    if (type_of(*inputs[i]) != kFieldType)
      throw Error(ErrorCode::TypeMismatch,
                  "field input must be of type time_field");
  auto out = std::make_shared<TarDef>();
  out->name = node_name;
  out->elements.push_back(synthetic_unit_dimension());
  for (const char* n : {"points", "cells", "fields"}) {
    DataElement a;
    a.name = n;
    a.kind = ElemKind::Attribute;
    a.type = ElemType::Int64;
    out->elements.push_back(std::move(a));
  }
  return out;
}

// --- parser -------------------------------------------------------------------

class Parser {
 public:
  Parser(std::string_view text, const TarSchema& schema)
      : schema_(schema), toks_(tokenize(text)) {}

  Statement parse_statement() {
    const Token& t = peek();
    if (t.kind != TokKind::Ident)
      throw syntax("expected a statement", t);
    std::string name = to_lower(t.text);
    Statement out;
    if (name == "create_type" || name == "create_tar" ||
        name == "create_dataset" || name == "create_dataset_literal" ||
        name == "load_subtar" || name == "drop_tar" || name == "drop_dataset" ||
        name == "materialize") {
      out.ddl = parse_ddl(name);
    } else {
      out.query = parse_query();
    }
    expect(TokKind::End, "trailing input after statement");
    return out;
  }

  QueryPlan parse_query() {
    QueryPlan plan;
    plan.root = parse_input(plan);
    if (plan.root->kind == OpKind::TarRef && toks_[pos_].kind != TokKind::End) {
      // a bare name followed by junk reads better as a syntax error here
      throw syntax("expected '(' after operator name", peek());
    }
    return plan;
  }

 private:
  // --- token helpers ---

  const Token& peek(size_t ahead = 0) const {
    size_t i = std::min(pos_ + ahead, toks_.size() - 1);
    return toks_[i];
  }
  const Token& advance() { return toks_[pos_++]; }
  bool accept(TokKind k) {
    if (peek().kind == k) {
      ++pos_;
      return true;
    }
    return false;
  }
  const Token& expect(TokKind k, const std::string& what) {
    if (peek().kind != k) throw syntax(what, peek());
    return advance();
  }
  Error syntax(const std::string& msg, const Token& at) const {
    return Error(ErrorCode::SyntaxError, msg, static_cast<long>(at.offset));
  }

  std::string expect_ident(const std::string& what) {
    return expect(TokKind::Ident, what).text;
  }

  std::string expect_name(const std::string& what) {
    // object names may be written as identifiers or quoted strings
    if (peek().kind == TokKind::String) return advance().text;
    return expect_ident(what).c_str();
  }

  Scalar expect_number(const std::string& what) {
    bool neg = accept(TokKind::Minus);
    const Token& t = expect(TokKind::Number, what);
    if (!neg) return t.number;
    return t.number.is_integer() ? Scalar(-t.number.as_int64())
                                 : Scalar(-t.number.as_double());
  }

  // --- query operators ---

  PlanNodePtr parse_input(QueryPlan& plan) {
    const Token& t = peek();
    if (t.kind != TokKind::Ident)
      throw syntax("expected a TAR name or operator call", t);
    if (peek(1).kind == TokKind::LParen) return parse_call(plan);
    advance();
    // one shared input node per referenced TAR name
    auto it = tar_nodes_.find(t.text);
    if (it != tar_nodes_.end()) return it->second;
    auto tar = schema_.find_tar(t.text);
    if (!tar)
      throw Error(ErrorCode::UnknownTar, t.text);
    auto node = std::make_shared<PlanNode>();
    node->kind = OpKind::TarRef;
    node->tar_name = t.text;
    node->schema = tar->def;
    register_node(plan, node);
    tar_nodes_[t.text] = node;
    return node;
  }

  PlanNodePtr parse_call(QueryPlan& plan) {
    const Token& name_tok = advance();
    std::string name = to_lower(name_tok.text);
    expect(TokKind::LParen, "expected '('");
    auto node = std::make_shared<PlanNode>();
    if (name == "select") {
      node->kind = OpKind::Select;
      node->inputs.push_back(parse_input(plan));
      while (accept(TokKind::Comma)) {
        if (peek().kind == TokKind::RParen) break;  // trailing comma
        node->elements.push_back(expect_ident("expected element name"));
      }
      if (node->elements.empty())
        throw Error(ErrorCode::ArityError, "select needs elements");
    } else if (name == "where") {
      node->kind = OpKind::Where;
      node->inputs.push_back(parse_input(plan));
      expect(TokKind::Comma, "where needs a predicate");
      node->expr = parse_expr();
    } else if (name == "subset") {
      node->kind = OpKind::Subset;
      node->inputs.push_back(parse_input(plan));
      while (accept(TokKind::Comma)) {
        if (peek().kind == TokKind::RParen) break;
        SubsetBound b;
        b.dimension = expect_ident("expected dimension name");
        expect(TokKind::Comma, "expected lower bound");
        b.lo = expect_number("expected lower bound");
        expect(TokKind::Comma, "expected upper bound");
        b.hi = expect_number("expected upper bound");
        node->bounds.push_back(std::move(b));
      }
      if (node->bounds.empty())
        throw Error(ErrorCode::ArityError, "subset needs bounds");
    } else if (name == "derive") {
      node->kind = OpKind::Derive;
      node->inputs.push_back(parse_input(plan));
      expect(TokKind::Comma, "derive needs an attribute name");
      node->new_name = expect_ident("expected new attribute name");
      expect(TokKind::Comma, "derive needs an expression");
      node->expr = parse_expr();
    } else if (name == "cross_join" || name == "cross") {
      node->kind = OpKind::CrossJoin;
      node->inputs.push_back(parse_input(plan));
      expect(TokKind::Comma, "cross_join needs two inputs");
      node->inputs.push_back(parse_input(plan));
    } else if (name == "dimjoin" || name == "dim_join") {
      node->kind = OpKind::DimJoin;
      node->inputs.push_back(parse_input(plan));
      expect(TokKind::Comma, "dimjoin needs two inputs");
      node->inputs.push_back(parse_input(plan));
      while (accept(TokKind::Comma)) {
        if (peek().kind == TokKind::RParen) break;
        std::string l = expect_ident("expected left dimension");
        expect(TokKind::Comma, "expected right dimension");
        std::string r = expect_ident("expected right dimension");
        node->dim_pairs.emplace_back(std::move(l), std::move(r));
      }
      if (node->dim_pairs.empty())
        throw Error(ErrorCode::ArityError, "dimjoin needs dimension pairs");
    } else if (name == "aggregate") {
      node->kind = OpKind::Aggregate;
      node->inputs.push_back(parse_input(plan));
      expect(TokKind::Comma, "aggregate needs a function");
      const Token& fn_tok = peek();
      std::string fn = to_lower(expect_ident("expected aggregation function"));
      if (fn == "avg") node->agg_fn = AggFn::Avg;
      else if (fn == "sum") node->agg_fn = AggFn::Sum;
      else if (fn == "min") node->agg_fn = AggFn::Min;
      else if (fn == "max") node->agg_fn = AggFn::Max;
      else if (fn == "count") node->agg_fn = AggFn::Count;
      else throw syntax("unknown aggregation function '" + fn + "'", fn_tok);
      expect(TokKind::Comma, "aggregate needs a target attribute");
      node->agg_target = expect_ident("expected target attribute");
      expect(TokKind::Comma, "aggregate needs an output name");
      node->agg_out = expect_ident("expected output attribute name");
      while (accept(TokKind::Comma)) {
        if (peek().kind == TokKind::RParen) break;  // grand total spelling
        node->agg_groups.push_back(expect_ident("expected group dimension"));
      }
    } else if (name == "catalyze") {
      node->kind = OpKind::Catalyze;
      node->inputs.push_back(parse_input(plan));
      expect(TokKind::Comma, "catalyze needs a topology input");
      node->inputs.push_back(parse_input(plan));
      expect(TokKind::Comma, "catalyze needs a field input");
      node->inputs.push_back(parse_input(plan));
      while (accept(TokKind::Comma)) {
        if (peek().kind == TokKind::RParen) break;
        if (peek().kind == TokKind::String) {
          node->out_path = advance().text;
          // optional time / trial selectors follow the path
          if (accept(TokKind::Comma) && peek().kind != TokKind::RParen) {
            node->time_selector = expect_number("expected time selector");
            if (accept(TokKind::Comma) && peek().kind != TokKind::RParen)
              node->trial_selector = expect_number("expected trial selector");
          }
          break;
        }
        node->inputs.push_back(parse_input(plan));
      }
      if (node->out_path.empty())
        throw Error(ErrorCode::ArityError, "catalyze needs an output path");
    } else {
      throw syntax("unknown operator '" + name_tok.text + "'", name_tok);
    }
    expect(TokKind::RParen, "expected ')'");
    infer_schema(*node);
    register_node(plan, node);
    return node;
  }

  void infer_schema(PlanNode& n) {
    std::string node_name =
        std::string(op_kind_name(n.kind)) + "_" + std::to_string(next_id_);
    switch (n.kind) {
      case OpKind::Select:
        n.schema = infer_select(*n.inputs[0]->schema, schema_, n.elements,
                                node_name);
        break;
      case OpKind::Where: {
        CompiledExpr check(n.expr, *n.inputs[0]->schema);  // resolve now
        n.schema = infer_replicate(*n.inputs[0]->schema, node_name);
        break;
      }
      case OpKind::Subset:
        n.schema = infer_subset(*n.inputs[0]->schema, n.bounds, node_name);
        break;
      case OpKind::Derive:
        n.schema = infer_derive(*n.inputs[0]->schema, schema_, n.new_name,
                                n.expr, node_name);
        break;
      case OpKind::CrossJoin:
        n.schema = infer_cross_join(*n.inputs[0]->schema, *n.inputs[1]->schema,
                                    schema_, n.rename_left, n.rename_right,
                                    node_name);
        break;
      case OpKind::DimJoin:
        n.schema = infer_dim_join(*n.inputs[0]->schema, *n.inputs[1]->schema,
                                  schema_, n.dim_pairs, n.rename_left,
                                  n.rename_right, node_name);
        break;
      case OpKind::Aggregate:
        n.schema = infer_aggregate(*n.inputs[0]->schema, schema_, n.agg_fn,
                                   n.agg_target, n.agg_out, n.agg_groups,
                                   node_name);
        break;
      case OpKind::Catalyze: {
        std::vector<TarDefPtr> in;
        for (const auto& i : n.inputs) in.push_back(i->schema);
        n.schema = infer_catalyze(in, node_name);
        break;
      }
      case OpKind::TarRef:
        break;
    }
  }

  void register_node(QueryPlan& plan, const PlanNodePtr& node) {
    node->id = next_id_++;
    plan.nodes.push_back(node);
  }

  // --- expressions ---

  ExprPtr parse_expr() { return parse_or(); }

  ExprPtr parse_or() {
    ExprPtr e = parse_and();
    while (peek().kind == TokKind::Ident && to_lower(peek().text) == "or") {
      advance();
      e = Expr::make(ExprOp::Or, {e, parse_and()});
    }
    return e;
  }

  ExprPtr parse_and() {
    ExprPtr e = parse_not();
    while (peek().kind == TokKind::Ident && to_lower(peek().text) == "and") {
      advance();
      e = Expr::make(ExprOp::And, {e, parse_not()});
    }
    return e;
  }

  ExprPtr parse_not() {
    if (peek().kind == TokKind::Ident && to_lower(peek().text) == "not") {
      advance();
      return Expr::make(ExprOp::Not, {parse_not()});
    }
    return parse_cmp();
  }

  ExprPtr parse_cmp() {
    ExprPtr e = parse_add();
    ExprOp op;
    switch (peek().kind) {
      case TokKind::Eq: op = ExprOp::Eq; break;
      case TokKind::Ne: op = ExprOp::Ne; break;
      case TokKind::Lt: op = ExprOp::Lt; break;
      case TokKind::Le: op = ExprOp::Le; break;
      case TokKind::Gt: op = ExprOp::Gt; break;
      case TokKind::Ge: op = ExprOp::Ge; break;
      default: return e;
    }
    advance();
    return Expr::make(op, {e, parse_add()});
  }

  ExprPtr parse_add() {
    ExprPtr e = parse_mul();
    while (true) {
      if (accept(TokKind::Plus))
        e = Expr::make(ExprOp::Add, {e, parse_mul()});
      else if (accept(TokKind::Minus))
        e = Expr::make(ExprOp::Sub, {e, parse_mul()});
      else
        return e;
    }
  }

  ExprPtr parse_mul() {
    ExprPtr e = parse_unary();
    while (true) {
      if (accept(TokKind::Star))
        e = Expr::make(ExprOp::Mul, {e, parse_unary()});
      else if (accept(TokKind::Slash))
        e = Expr::make(ExprOp::Div, {e, parse_unary()});
      else
        return e;
    }
  }

  ExprPtr parse_unary() {
    if (accept(TokKind::Minus)) return Expr::make(ExprOp::Neg, {parse_unary()});
    const Token& t = peek();
    if (t.kind == TokKind::Number) {
      advance();
      return Expr::make_literal(t.number);
    }
    if (t.kind == TokKind::Ident) {
      std::string lowered = to_lower(t.text);
      if (lowered == "not") {
        advance();
        return Expr::make(ExprOp::Not, {parse_not()});
      }
      advance();
      return Expr::make_element(t.text);
    }
    if (accept(TokKind::LParen)) {
      ExprPtr e = parse_expr();
      expect(TokKind::RParen, "expected ')'");
      return e;
    }
    throw syntax("expected an expression", t);
  }

  // --- DDL ---

  DdlStatement parse_ddl(const std::string& name) {
    DdlStatement d;
    expect(TokKind::Ident, "statement name");
    expect(TokKind::LParen, "expected '('");
    if (name == "create_type") {
      d.kind = DdlStatement::Kind::CreateType;
      d.name = expect_name("expected type name");
      if (accept(TokKind::Comma) && peek().kind != TokKind::RParen) {
        d.mandatory_csv = expect(TokKind::String, "expected mandatory roles").text;
        if (accept(TokKind::Comma) && peek().kind != TokKind::RParen)
          d.optional_csv = expect(TokKind::String, "expected optional roles").text;
      }
    } else if (name == "create_tar") {
      d.kind = DdlStatement::Kind::CreateTar;
      d.name = expect_name("expected TAR name");
      expect(TokKind::Comma, "expected arguments");
      // optional type name (identifier or string), then the spec strings
      std::vector<std::string> rest;
      bool first_is_type = peek().kind == TokKind::Ident;
      if (first_is_type) rest.push_back(advance().text);
      else rest.push_back(expect(TokKind::String, "expected a string argument").text);
      while (accept(TokKind::Comma)) {
        if (peek().kind == TokKind::RParen) break;
        rest.push_back(expect(TokKind::String, "expected a string argument").text);
      }
      if (!first_is_type && rest.size() == 2) {  // untyped: dims, atts
        d.dims_spec = rest[0];
        d.atts_spec = rest[1];
      } else if (rest.size() == 3 || rest.size() == 4) {
        d.type_name = rest[0];
        d.dims_spec = rest[1];
        d.atts_spec = rest[2];
        if (rest.size() == 4) d.role_map_spec = rest[3];
      } else {
        throw Error(ErrorCode::ArityError, "create_tar argument count");
      }
    } else if (name == "create_dataset" || name == "create_dataset_literal") {
      d.kind = name == "create_dataset" ? DdlStatement::Kind::CreateDataset
                                        : DdlStatement::Kind::CreateDatasetLiteral;
      d.name = expect_name("expected dataset name");
      expect(TokKind::Comma, "expected element type");
      const Token& ty = peek();
      if (!parse_elem_type(to_lower(expect_ident("expected element type")), d.elem_type))
        throw syntax("unknown element type", ty);
      expect(TokKind::Comma, "expected payload");
      d.payload = expect(TokKind::String, "expected a string payload").text;
    } else if (name == "load_subtar") {
      d.kind = DdlStatement::Kind::LoadSubtar;
      d.name = expect_name("expected TAR name");
      expect(TokKind::Comma, "expected dimension specifications");
      d.dims_spec = expect(TokKind::String, "expected dimension specs").text;
      expect(TokKind::Comma, "expected attribute bindings");
      d.atts_spec = expect(TokKind::String, "expected attribute bindings").text;
    } else if (name == "drop_tar") {
      d.kind = DdlStatement::Kind::DropTar;
      d.name = expect_name("expected TAR name");
    } else if (name == "drop_dataset") {
      d.kind = DdlStatement::Kind::DropDataset;
      d.name = expect_name("expected dataset name");
    } else {  // materialize
      d.kind = DdlStatement::Kind::Materialize;
      d.subplan = std::make_shared<QueryPlan>();
      d.subplan->root = parse_input(*d.subplan);
      expect(TokKind::Comma, "materialize needs a target name");
      d.name = expect_name("expected TAR name");
    }
    expect(TokKind::RParen, "expected ')'");
    return d;
  }

  const TarSchema& schema_;
  std::vector<Token> toks_;
  size_t pos_ = 0;
  int next_id_ = 0;
  std::map<std::string, PlanNodePtr> tar_nodes_;
};

inline Statement parse(std::string_view text, const TarSchema& schema) {
  Parser p(text, schema);
  return p.parse_statement();
}

// --- canonical plan text ------------------------------------------------------

inline std::string literal_to_string(const Scalar& v) {
  std::string s = v.to_string();
  if (!v.is_integer() && s.find_first_of(".einf") == std::string::npos) s += ".0";
  return s;
}

inline std::string plan_to_string(const PlanNode& n) {
  switch (n.kind) {
    case OpKind::TarRef:
      return n.tar_name;
    case OpKind::Select: {
      std::string s = "select(" + plan_to_string(*n.inputs[0]);
      for (const auto& e : n.elements) s += ", " + e;
      return s + ")";
    }
    case OpKind::Where:
      return "where(" + plan_to_string(*n.inputs[0]) + ", " +
             expr_to_string(*n.expr) + ")";
    case OpKind::Subset: {
      std::string s = "subset(" + plan_to_string(*n.inputs[0]);
      for (const auto& b : n.bounds)
        s += ", " + b.dimension + ", " + literal_to_string(b.lo) + ", " +
             literal_to_string(b.hi);
      return s + ")";
    }
    case OpKind::Derive:
      return "derive(" + plan_to_string(*n.inputs[0]) + ", " + n.new_name +
             ", " + expr_to_string(*n.expr) + ")";
    case OpKind::CrossJoin:
      return "cross_join(" + plan_to_string(*n.inputs[0]) + ", " +
             plan_to_string(*n.inputs[1]) + ")";
    case OpKind::DimJoin: {
      std::string s = "dimjoin(" + plan_to_string(*n.inputs[0]) + ", " +
                      plan_to_string(*n.inputs[1]);
      for (const auto& [l, r] : n.dim_pairs) s += ", " + l + ", " + r;
      return s + ")";
    }
    case OpKind::Aggregate: {
      std::string s = "aggregate(" + plan_to_string(*n.inputs[0]) + ", " +
                      agg_fn_name(n.agg_fn) + ", " + n.agg_target + ", " +
                      n.agg_out;
      for (const auto& g : n.agg_groups) s += ", " + g;
      return s + ")";
    }
    case OpKind::Catalyze: {
      std::string s = "catalyze(";
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        if (i) s += ", ";
        s += plan_to_string(*n.inputs[i]);
      }
      s += ", \"" + n.out_path + "\"";
      if (n.time_selector) s += ", " + literal_to_string(*n.time_selector);
      if (n.trial_selector) s += ", " + literal_to_string(*n.trial_selector);
      return s + ")";
    }
  }
  return "?";
}

inline std::string plan_to_string(const QueryPlan& plan) {
  return plan_to_string(*plan.root);
}

// Structural equality of plans (parameters and shape, ignoring node ids).
inline bool plan_equal(const PlanNode& a, const PlanNode& b) {
  if (a.kind != b.kind) return false;
  if (a.inputs.size() != b.inputs.size()) return false;
  for (size_t i = 0; i < a.inputs.size(); ++i)
    if (!plan_equal(*a.inputs[i], *b.inputs[i])) return false;
  switch (a.kind) {
    case OpKind::TarRef: return a.tar_name == b.tar_name;
    case OpKind::Select: return a.elements == b.elements;
    case OpKind::Where: return expr_equal(*a.expr, *b.expr);
    case OpKind::Subset: {
      if (a.bounds.size() != b.bounds.size()) return false;
      for (size_t i = 0; i < a.bounds.size(); ++i) {
        const auto& x = a.bounds[i];
        const auto& y = b.bounds[i];
        if (x.dimension != y.dimension || !(x.lo == y.lo) || !(x.hi == y.hi))
          return false;
      }
      return true;
    }
    case OpKind::Derive:
      return a.new_name == b.new_name && expr_equal(*a.expr, *b.expr);
    case OpKind::CrossJoin: return true;
    case OpKind::DimJoin: return a.dim_pairs == b.dim_pairs;
    case OpKind::Aggregate:
      return a.agg_fn == b.agg_fn && a.agg_target == b.agg_target &&
             a.agg_out == b.agg_out && a.agg_groups == b.agg_groups;
    case OpKind::Catalyze:
      return a.out_path == b.out_path &&
             a.time_selector.has_value() == b.time_selector.has_value() &&
             a.trial_selector.has_value() == b.trial_selector.has_value();
  }
  return false;
}

// Hook point for plan rewriting. Plans are currently executed as parsed.
inline QueryPlan optimize(QueryPlan plan) { return plan; }

}  // namespace savime
