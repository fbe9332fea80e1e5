#pragma once

#include <memory>
#include <string>
#include <vector>

#include "savime/schema.hpp"

namespace savime {

enum class ExprOp : uint8_t {
  Literal,
  Element,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Eq,
  Ne,
  Lt,
  Le,
  Gt,
  Ge,
  And,
  Or,
  Not,
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

// Node of a predicate / arithmetic expression tree over the elements of one
// input schema. Comparisons and logical operators yield int64 0/1.
struct Expr {
  ExprOp op = ExprOp::Literal;
  Scalar literal;
  std::string element;
  std::vector<ExprPtr> kids;

  static ExprPtr make_literal(Scalar v) {
    auto e = std::make_shared<Expr>();
    e->op = ExprOp::Literal;
    e->literal = v;
    return e;
  }
  static ExprPtr make_element(std::string name) {
    auto e = std::make_shared<Expr>();
    e->op = ExprOp::Element;
    e->element = std::move(name);
    return e;
  }
  static ExprPtr make(ExprOp op, std::vector<ExprPtr> kids) {
    auto e = std::make_shared<Expr>();
    e->op = op;
    e->kids = std::move(kids);
    return e;
  }
};

inline bool expr_equal(const Expr& a, const Expr& b) {
  if (a.op != b.op) return false;
  if (a.op == ExprOp::Literal)
    return a.literal.type() == b.literal.type() && a.literal == b.literal;
  if (a.op == ExprOp::Element) return a.element == b.element;
  if (a.kids.size() != b.kids.size()) return false;
  for (size_t i = 0; i < a.kids.size(); ++i)
    if (!expr_equal(*a.kids[i], *b.kids[i])) return false;
  return true;
}

// Collects the element names an expression references.
inline void expr_elements(const Expr& e, std::vector<std::string>& out) {
  if (e.op == ExprOp::Element) {
    for (const auto& n : out)
      if (n == e.element) return;
    out.push_back(e.element);
    return;
  }
  for (const auto& k : e.kids) expr_elements(*k, out);
}

// Result type of an expression: int64 while every operand is an integer,
// float64 as soon as a float enters; logical/comparison nodes are int64.
inline ElemType expr_result_type(const Expr& e, const TarDef& input) {
  switch (e.op) {
    case ExprOp::Literal:
      return e.literal.is_integer() ? ElemType::Int64 : ElemType::Float64;
    case ExprOp::Element:
      return elem_is_integer(input.require(e.element).type) ? ElemType::Int64
                                                            : ElemType::Float64;
    case ExprOp::Add:
    case ExprOp::Sub:
    case ExprOp::Mul:
    case ExprOp::Div: {
      ElemType a = expr_result_type(*e.kids[0], input);
      ElemType b = expr_result_type(*e.kids[1], input);
      return (a == ElemType::Int64 && b == ElemType::Int64) ? ElemType::Int64
                                                            : ElemType::Float64;
    }
    case ExprOp::Neg:
      return expr_result_type(*e.kids[0], input);
    default:
      return ElemType::Int64;  // comparisons and logic
  }
}

// Expression bound to row slots for evaluation. Referenced elements are
// resolved to slot indexes once; rows carry one Scalar per referenced
// element, aligned with elements().
class CompiledExpr {
 public:
  CompiledExpr() = default;

  CompiledExpr(ExprPtr expr, const TarDef& input) {
    expr_elements(*expr, elements_);
    for (const auto& name : elements_) input.require(name);  // UnknownElement
    root_ = compile(*expr);
  }

  const std::vector<std::string>& elements() const { return elements_; }

  Scalar eval(std::span<const Scalar> row) const {
    return eval(nodes_[static_cast<size_t>(root_)], row);
  }

 private:
  struct Node {
    ExprOp op;
    Scalar literal;
    int slot = -1;
    int a = -1, b = -1;
  };

  int compile(const Expr& e) {
    Node n;
    n.op = e.op;
    if (e.op == ExprOp::Literal) {
      n.literal = e.literal;
    } else if (e.op == ExprOp::Element) {
      for (size_t i = 0; i < elements_.size(); ++i)
        if (elements_[i] == e.element) n.slot = static_cast<int>(i);
    } else {
      n.a = compile(*e.kids[0]);
      if (e.kids.size() > 1) n.b = compile(*e.kids[1]);
    }
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  static bool truthy(const Scalar& v) {
    return v.is_integer() ? v.as_int64() != 0 : v.as_double() != 0.0;
  }

  Scalar eval(const Node& e, std::span<const Scalar> row) const {
    switch (e.op) {
      case ExprOp::Literal:
        return e.literal;
      case ExprOp::Element:
        return row[static_cast<size_t>(e.slot)];
      case ExprOp::Neg: {
        Scalar v = eval(nodes_[e.a], row);
        return v.is_integer() ? Scalar(-v.as_int64()) : Scalar(-v.as_double());
      }
      case ExprOp::Not:
        return Scalar(static_cast<int64_t>(!truthy(eval(nodes_[e.a], row))));
      case ExprOp::And: {
        if (!truthy(eval(nodes_[e.a], row))) return Scalar(int64_t{0});
        return Scalar(static_cast<int64_t>(truthy(eval(nodes_[e.b], row))));
      }
      case ExprOp::Or: {
        if (truthy(eval(nodes_[e.a], row))) return Scalar(int64_t{1});
        return Scalar(static_cast<int64_t>(truthy(eval(nodes_[e.b], row))));
      }
      case ExprOp::Eq:
      case ExprOp::Ne:
      case ExprOp::Lt:
      case ExprOp::Le:
      case ExprOp::Gt:
      case ExprOp::Ge: {
        int c = eval(nodes_[e.a], row).compare(eval(nodes_[e.b], row));
        bool r = false;
        switch (e.op) {
          case ExprOp::Eq: r = c == 0; break;
          case ExprOp::Ne: r = c != 0; break;
          case ExprOp::Lt: r = c < 0; break;
          case ExprOp::Le: r = c <= 0; break;
          case ExprOp::Gt: r = c > 0; break;
          default: r = c >= 0; break;
        }
        return Scalar(static_cast<int64_t>(r));
      }
      default: {  // arithmetic
        Scalar a = eval(nodes_[e.a], row);
        Scalar b = eval(nodes_[e.b], row);
        if (a.is_integer() && b.is_integer()) {
          int64_t x = a.as_int64(), y = b.as_int64();
          switch (e.op) {
            case ExprOp::Add: return Scalar(x + y);
            case ExprOp::Sub: return Scalar(x - y);
            case ExprOp::Mul: return Scalar(x * y);
            default:
              if (y == 0)
                throw Error(ErrorCode::EvaluationError, "division by zero");
              return Scalar(x / y);
          }
        }
        double x = a.as_double(), y = b.as_double();
        switch (e.op) {
          case ExprOp::Add: return Scalar(x + y);
          case ExprOp::Sub: return Scalar(x - y);
          case ExprOp::Mul: return Scalar(x * y);
          default:
            if (y == 0.0)
              throw Error(ErrorCode::EvaluationError, "division by zero");
            return Scalar(x / y);
        }
      }
    }
  }

  std::vector<Node> nodes_;
  int root_ = -1;
  std::vector<std::string> elements_;
};

// Canonical text form; fully parenthesized so reparsing reproduces the tree.
inline std::string expr_to_string(const Expr& e) {
  auto lit = [](const Scalar& v) {
    std::string s = v.to_string();
    if (!v.is_integer() && s.find_first_of(".einf") == std::string::npos)
      s += ".0";
    return s;
  };
  switch (e.op) {
    case ExprOp::Literal: return lit(e.literal);
    case ExprOp::Element: return e.element;
    case ExprOp::Neg: return "(-" + expr_to_string(*e.kids[0]) + ")";
    case ExprOp::Not: return "(not " + expr_to_string(*e.kids[0]) + ")";
    default: {
      const char* op = "?";
      switch (e.op) {
        case ExprOp::Add: op = "+"; break;
        case ExprOp::Sub: op = "-"; break;
        case ExprOp::Mul: op = "*"; break;
        case ExprOp::Div: op = "/"; break;
        case ExprOp::Eq: op = "="; break;
        case ExprOp::Ne: op = "<>"; break;
        case ExprOp::Lt: op = "<"; break;
        case ExprOp::Le: op = "<="; break;
        case ExprOp::Gt: op = ">"; break;
        case ExprOp::Ge: op = ">="; break;
        case ExprOp::And: op = "and"; break;
        case ExprOp::Or: op = "or"; break;
        default: break;
      }
      return "(" + expr_to_string(*e.kids[0]) + " " + op + " " +
             expr_to_string(*e.kids[1]) + ")";
    }
  }
}

}  // namespace savime
