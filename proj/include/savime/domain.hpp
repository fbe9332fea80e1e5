#pragma once

#include <cmath>
#include <memory>
#include <optional>

#include "savime/dataset.hpp"

namespace savime {

// Relative tolerance used to snap logical values onto an implicit grid.
inline constexpr double kDomainSnapTol = 1e-9;

// The value domain of a dimension. Implicit domains are an equally spaced
// range described by (lower, upper, spacing); explicit domains enumerate
// their values in a strictly increasing backing dataset. Logical values are
// the domain values themselves; real indexes are the zero-based positions
// the engine addresses cells with.
class Domain {
 public:
  static std::shared_ptr<const Domain> implicit(ElemType type, double lower,
                                                double upper, double spacing) {
    if (spacing <= 0)
      throw Error(ErrorCode::InvalidDomain, "spacing must be positive");
    if (lower > upper)
      throw Error(ErrorCode::InvalidDomain, "lower > upper");
    double steps = (upper - lower) / spacing;
    double rounded = std::round(steps);
    if (std::abs(steps - rounded) * spacing > kDomainSnapTol * spacing * std::max(1.0, rounded))
      throw Error(ErrorCode::InvalidDomain,
                  "(upper - lower) is not a multiple of spacing");
    if (elem_is_integer(type)) {
      if (lower != std::floor(lower) || spacing != std::floor(spacing))
        throw Error(ErrorCode::InvalidDomain,
                    "integer dimension requires integral bounds and spacing");
    }
    auto d = std::make_shared<Domain>();
    d->type_ = type;
    d->lower_ = lower;
    d->spacing_ = spacing;
    d->cardinality_ = static_cast<int64_t>(rounded) + 1;
    return d;
  }

  static std::shared_ptr<const Domain> explicit_values(ElemType type,
                                                       DatasetPtr values) {
    if (!values || values->length() == 0)
      throw Error(ErrorCode::InvalidDomain, "explicit domain needs values");
    if (values->type() != type)
      throw Error(ErrorCode::InvalidDomain,
                  "domain dataset type does not match dimension type");
    for (size_t i = 1; i < values->length(); ++i) {
      if (!(values->at(i - 1) < values->at(i)))
        throw Error(ErrorCode::InvalidDomain,
                    values->name() + ": values must be strictly increasing");
    }
    auto d = std::make_shared<Domain>();
    d->type_ = type;
    d->values_ = std::move(values);
    d->cardinality_ = static_cast<int64_t>(d->values_->length());
    return d;
  }

  bool is_implicit() const { return values_ == nullptr; }
  ElemType type() const { return type_; }
  int64_t cardinality() const { return cardinality_; }
  double lower() const { return lower_; }
  double spacing() const { return spacing_; }
  double upper() const { return lower_ + spacing_ * double(cardinality_ - 1); }
  const DatasetPtr& values() const { return values_; }

  Scalar real_to_logical(int64_t index) const {
    if (index < 0 || index >= cardinality_)
      throw Error(ErrorCode::OutOfBounds,
                  "real index " + std::to_string(index) + " outside [0, " +
                      std::to_string(cardinality_) + ")");
    if (is_implicit()) {
      double v = lower_ + spacing_ * static_cast<double>(index);
      if (elem_is_integer(type_))
        return Scalar::make_int(type_, static_cast<int64_t>(std::llround(v)));
      return Scalar::make(type_, v);
    }
    return values_->at(static_cast<size_t>(index));
  }

  int64_t logical_to_real(const Scalar& value) const {
    auto idx = try_logical_to_real(value);
    if (!idx)
      throw Error(ErrorCode::NotInDomain,
                  value.to_string() + " is not a domain value");
    return *idx;
  }

  std::optional<int64_t> try_logical_to_real(const Scalar& value) const {
    if (is_implicit()) {
      double t = (value.as_double() - lower_) / spacing_;
      int64_t k = static_cast<int64_t>(std::llround(t));
      if (k < 0 || k >= cardinality_) return std::nullopt;
      double snapped = lower_ + spacing_ * static_cast<double>(k);
      if (std::abs(value.as_double() - snapped) > kDomainSnapTol * spacing_)
        return std::nullopt;
      return k;
    }
    // rank of the value in the (strictly increasing) domain dataset
    int64_t lo = 0, hi = cardinality_ - 1;
    while (lo <= hi) {
      int64_t mid = lo + (hi - lo) / 2;
      int c = values_->at(static_cast<size_t>(mid)).compare(value);
      if (c == 0) return mid;
      if (c < 0)
        lo = mid + 1;
      else
        hi = mid - 1;
    }
    return std::nullopt;
  }

  // Real-index interval of domain values inside the logical interval
  // [lo, hi]; empty when no value falls inside.
  std::optional<std::pair<int64_t, int64_t>> real_range(double lo,
                                                        double hi) const {
    if (lo > hi) return std::nullopt;
    int64_t first, last;
    if (is_implicit()) {
      double tol = kDomainSnapTol * spacing_;
      first = static_cast<int64_t>(std::ceil((lo - lower_) / spacing_ - tol));
      last = static_cast<int64_t>(std::floor((hi - lower_) / spacing_ + tol));
      first = std::max<int64_t>(first, 0);
      last = std::min<int64_t>(last, cardinality_ - 1);
    } else {
      first = cardinality_;
      last = -1;
      // first value >= lo
      int64_t a = 0, b = cardinality_ - 1;
      while (a <= b) {
        int64_t mid = a + (b - a) / 2;
        if (values_->at(static_cast<size_t>(mid)).as_double() >= lo) {
          first = mid;
          b = mid - 1;
        } else {
          a = mid + 1;
        }
      }
      // last value <= hi
      a = 0, b = cardinality_ - 1;
      while (a <= b) {
        int64_t mid = a + (b - a) / 2;
        if (values_->at(static_cast<size_t>(mid)).as_double() <= hi) {
          last = mid;
          a = mid + 1;
        } else {
          b = mid - 1;
        }
      }
    }
    if (first > last) return std::nullopt;
    return std::make_pair(first, last);
  }

 private:
  ElemType type_ = ElemType::Int64;
  double lower_ = 0;
  double spacing_ = 1;
  int64_t cardinality_ = 0;
  DatasetPtr values_;  // null for implicit domains
};

using DomainPtr = std::shared_ptr<const Domain>;

}  // namespace savime
