#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace savime {

// Primitive element types supported for datasets, dimensions and attributes.
enum class ElemType : uint8_t {
  Int32 = 1,
  Int64 = 2,
  Float32 = 3,
  Float64 = 4,
};

inline size_t elem_width(ElemType t) {
  switch (t) {
    case ElemType::Int32:
    case ElemType::Float32:
      return 4;
    case ElemType::Int64:
    case ElemType::Float64:
      return 8;
  }
  return 0;
}

inline bool elem_is_integer(ElemType t) {
  return t == ElemType::Int32 || t == ElemType::Int64;
}

inline const char* elem_name(ElemType t) {
  switch (t) {
    case ElemType::Int32: return "int32";
    case ElemType::Int64: return "int64";
    case ElemType::Float32: return "float32";
    case ElemType::Float64: return "float64";
  }
  return "?";
}

inline bool parse_elem_type(std::string_view s, ElemType& out) {
  if (s == "int32") { out = ElemType::Int32; return true; }
  if (s == "int64") { out = ElemType::Int64; return true; }
  if (s == "float32") { out = ElemType::Float32; return true; }
  if (s == "float64") { out = ElemType::Float64; return true; }
  return false;
}

enum class ElemKind : uint8_t { Dimension, Attribute };

// Error conditions raised across the engine. Names match the conditions the
// operations document in their contracts.
enum class ErrorCode {
  DuplicateType,
  OverlappingRoleSets,
  DuplicateTar,
  MissingMandatoryRole,
  NonInjectiveRoleMap,
  UnknownType,
  UnknownTar,
  UnknownElement,
  UnknownDataset,
  IncomparableTypes,
  IncomparableDimensions,
  InvalidDomain,
  BadSize,
  BadValue,
  DuplicateDataset,
  Unreadable,
  OutOfBounds,
  LengthMismatch,
  OverlapViolation,
  MixedTotalSpec,
  InvalidSpec,
  OutsideExtent,
  NotInDomain,
  SyntaxError,
  TypeMismatch,
  ArityError,
  ProjectionError,
  BoundsError,
  EvaluationError,
  DoubleRelease,
  ResourceExhausted,
  DanglingPointId,
  MissingSelector,
  TypeViolation,
  AdjacencyNotExportable,
  BindFailure,
  CorruptCatalog,
  ProtocolError,
  DatasetInUse,
  IoError,
  OracleMismatch,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::DuplicateType: return "DuplicateType";
    case ErrorCode::OverlappingRoleSets: return "OverlappingRoleSets";
    case ErrorCode::DuplicateTar: return "DuplicateTar";
    case ErrorCode::MissingMandatoryRole: return "MissingMandatoryRole";
    case ErrorCode::NonInjectiveRoleMap: return "NonInjectiveRoleMap";
    case ErrorCode::UnknownType: return "UnknownType";
    case ErrorCode::UnknownTar: return "UnknownTar";
    case ErrorCode::UnknownElement: return "UnknownElement";
    case ErrorCode::UnknownDataset: return "UnknownDataset";
    case ErrorCode::IncomparableTypes: return "IncomparableTypes";
    case ErrorCode::IncomparableDimensions: return "IncomparableDimensions";
    case ErrorCode::InvalidDomain: return "InvalidDomain";
    case ErrorCode::BadSize: return "BadSize";
    case ErrorCode::BadValue: return "BadValue";
    case ErrorCode::DuplicateDataset: return "DuplicateDataset";
    case ErrorCode::Unreadable: return "Unreadable";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::OverlapViolation: return "OverlapViolation";
    case ErrorCode::MixedTotalSpec: return "MixedTotalSpec";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::OutsideExtent: return "OutsideExtent";
    case ErrorCode::NotInDomain: return "NotInDomain";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::ArityError: return "ArityError";
    case ErrorCode::ProjectionError: return "ProjectionError";
    case ErrorCode::BoundsError: return "BoundsError";
    case ErrorCode::EvaluationError: return "EvaluationError";
    case ErrorCode::DoubleRelease: return "DoubleRelease";
    case ErrorCode::ResourceExhausted: return "ResourceExhausted";
    case ErrorCode::DanglingPointId: return "DanglingPointId";
    case ErrorCode::MissingSelector: return "MissingSelector";
    case ErrorCode::TypeViolation: return "TypeViolation";
    case ErrorCode::AdjacencyNotExportable: return "AdjacencyNotExportable";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::CorruptCatalog: return "CorruptCatalog";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::DatasetInUse: return "DatasetInUse";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::OracleMismatch: return "OracleMismatch";
  }
  return "?";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_name(code)) + ": " + msg),
        code_(code) {}

  Error(ErrorCode code, const std::string& msg, long offset)
      : Error(code, msg + " (at offset " + std::to_string(offset) + ")") {
    offset_ = offset;
  }

  ErrorCode code() const { return code_; }

  // Byte offset into the query text for syntax errors, -1 otherwise.
  long offset() const { return offset_; }

  // Plan node that raised the error, -1 when not applicable.
  int node_id() const { return node_id_; }
  void set_node_id(int id) { node_id_ = id; }

 private:
  ErrorCode code_;
  long offset_ = -1;
  int node_id_ = -1;
};

// A single value of one of the primitive element types. Integer values are
// kept in integer form so that integer arithmetic and comparisons stay exact.
class Scalar {
 public:
  Scalar() : type_(ElemType::Int64) { v_.i = 0; }
  explicit Scalar(int32_t v) : type_(ElemType::Int32) { v_.i = v; }
  explicit Scalar(int64_t v) : type_(ElemType::Int64) { v_.i = v; }
  explicit Scalar(float v) : type_(ElemType::Float32) { v_.f = v; }
  explicit Scalar(double v) : type_(ElemType::Float64) { v_.f = v; }

  static Scalar make(ElemType t, double v) {
    switch (t) {
      case ElemType::Int32: return Scalar(static_cast<int32_t>(v));
      case ElemType::Int64: return Scalar(static_cast<int64_t>(v));
      case ElemType::Float32: return Scalar(static_cast<float>(v));
      case ElemType::Float64: return Scalar(v);
    }
    return Scalar();
  }

  static Scalar make_int(ElemType t, int64_t v) {
    if (t == ElemType::Float32) return Scalar(static_cast<float>(v));
    if (t == ElemType::Float64) return Scalar(static_cast<double>(v));
    if (t == ElemType::Int32) return Scalar(static_cast<int32_t>(v));
    return Scalar(v);
  }

  ElemType type() const { return type_; }
  bool is_integer() const { return elem_is_integer(type_); }

  int64_t as_int64() const {
    return is_integer() ? v_.i : static_cast<int64_t>(v_.f);
  }
  double as_double() const {
    return is_integer() ? static_cast<double>(v_.i) : v_.f;
  }

  // Three-way numeric comparison; integer pairs compare exactly.
  int compare(const Scalar& o) const {
    if (is_integer() && o.is_integer()) {
      if (v_.i < o.v_.i) return -1;
      return v_.i > o.v_.i ? 1 : 0;
    }
    double a = as_double(), b = o.as_double();
    if (a < b) return -1;
    return a > b ? 1 : 0;
  }

  bool operator==(const Scalar& o) const { return compare(o) == 0; }
  bool operator<(const Scalar& o) const { return compare(o) < 0; }

  std::string to_string() const {
    if (is_integer()) return std::to_string(v_.i);
    char buf[40];
    snprintf(buf, sizeof(buf), "%.17g", v_.f);
    return buf;
  }

 private:
  ElemType type_;
  union {
    int64_t i;
    double f;
  } v_;
};

// Splits work over [0, n) into contiguous ranges processed by worker threads.
// grain <= 1 or tiny inputs run inline.
inline void parallel_for(size_t n, unsigned grain,
                         const std::function<void(size_t, size_t)>& body) {
  if (n == 0) return;
  unsigned workers = grain == 0 ? std::thread::hardware_concurrency() : grain;
  if (workers <= 1 || n < 4096) {
    body(0, n);
    return;
  }
  if (workers > n) workers = static_cast<unsigned>(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    size_t lo = w * chunk;
    size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    size_t end = s.find(sep, start);
    if (end == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  size_t a = 0, b = s.size();
  while (a < b && isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

}  // namespace savime
