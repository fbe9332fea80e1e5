#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "savime/schema.hpp"

namespace savime {

enum class SpecKind : uint8_t { Ordered, Partial, Total };

inline const char* spec_kind_name(SpecKind k) {
  switch (k) {
    case SpecKind::Ordered: return "ordered";
    case SpecKind::Partial: return "partial";
    case SpecKind::Total: return "total";
  }
  return "?";
}

// Per-dimension occupancy description of a subTAR. lower/upper are inclusive
// real-index bounds of the covered region. Partial specs carry the filled
// positions along the dimension; Total specs carry one index value per cell.
// Stored index values follow the dimension kind: logical values for implicit
// dimensions, real indexes for explicit ones.
struct DimensionSpec {
  std::string dimension;
  DomainPtr domain;
  SpecKind kind = SpecKind::Ordered;
  int64_t lower = 0;
  int64_t upper = 0;
  DatasetPtr data;  // Partial: present set; Total: per-cell indexes

  // Distinct filled positions along this dimension (Ordered/Partial only).
  int64_t slot_count() const {
    if (kind == SpecKind::Ordered) return upper - lower + 1;
    if (kind == SpecKind::Partial) return static_cast<int64_t>(data->length());
    return -1;
  }

  // Converts a stored index value to the real integer index.
  int64_t stored_to_real(const Scalar& stored) const {
    if (domain->is_implicit()) return domain->logical_to_real(stored);
    return stored.as_int64();
  }

  // Value to store for a given real index (inverse of stored_to_real).
  Scalar real_to_stored(int64_t real) const {
    if (domain->is_implicit()) return domain->real_to_logical(real);
    return Scalar::make_int(data ? data->type() : ElemType::Int64, real);
  }

  // Real index of the slot-th filled position (Ordered/Partial).
  int64_t real_at_slot(int64_t slot) const {
    if (kind == SpecKind::Ordered) return lower + slot;
    return stored_to_real(data->at(static_cast<size_t>(slot)));
  }

  // Slot of a real index, or -1 when the position is not filled.
  int64_t slot_of_real(int64_t real) const {
    if (real < lower || real > upper) return -1;
    if (kind == SpecKind::Ordered) return real - lower;
    // present sets are strictly increasing in real-index order
    int64_t lo = 0, hi = slot_count() - 1;
    while (lo <= hi) {
      int64_t mid = lo + (hi - lo) / 2;
      int64_t r = real_at_slot(mid);
      if (r == real) return mid;
      if (r < real)
        lo = mid + 1;
      else
        hi = mid - 1;
    }
    return -1;
  }

  // Slot range covering real interval [a, b]; empty pair marker when none.
  std::pair<int64_t, int64_t> slot_range(int64_t a, int64_t b) const {
    a = std::max(a, lower);
    b = std::min(b, upper);
    if (a > b) return {1, 0};
    if (kind == SpecKind::Ordered) return {a - lower, b - lower};
    // first slot with real >= a
    int64_t n = slot_count();
    int64_t first = n, last = -1;
    int64_t lo = 0, hi = n - 1;
    while (lo <= hi) {
      int64_t mid = lo + (hi - lo) / 2;
      if (real_at_slot(mid) >= a) {
        first = mid;
        hi = mid - 1;
      } else {
        lo = mid + 1;
      }
    }
    lo = 0, hi = n - 1;
    while (lo <= hi) {
      int64_t mid = lo + (hi - lo) / 2;
      if (real_at_slot(mid) <= b) {
        last = mid;
        lo = mid + 1;
      } else {
        hi = mid - 1;
      }
    }
    return {first, last};
  }
};

// A hyper-rectangular region in real-index space. Dimensions not mentioned
// are unconstrained.
struct Region {
  std::map<std::string, std::pair<int64_t, int64_t>> ranges;

  bool empty() const { return ranges.empty(); }

  std::pair<int64_t, int64_t> range_for(const std::string& dim) const {
    auto it = ranges.find(dim);
    if (it == ranges.end())
      return {std::numeric_limits<int64_t>::min(),
              std::numeric_limits<int64_t>::max()};
    return it->second;
  }

  void set(const std::string& dim, int64_t lo, int64_t hi) {
    if (lo > hi)
      throw Error(ErrorCode::BoundsError,
                  dim + ": lower bound exceeds upper bound");
    ranges[dim] = {lo, hi};
  }
};

// One disjoint piece of a TAR: its extent and layout (dim_specs, ordered
// fastest-varying-last) plus the attribute dataset bindings. An attribute
// dataset of length 1 is a TAR property: constant across the subTAR.
struct SubTar {
  TarDefPtr tar;
  std::vector<DimensionSpec> dim_specs;
  std::map<std::string, DatasetPtr> atts;
  size_t length = 0;
  uint64_t sequence = 0;  // registration order within the owning TAR

  bool is_total() const {
    return !dim_specs.empty() && dim_specs.front().kind == SpecKind::Total;
  }

  const DimensionSpec* spec_for(const std::string& dim) const {
    for (const auto& s : dim_specs)
      if (s.dimension == dim) return &s;
    return nullptr;
  }

  DatasetPtr att_dataset(const std::string& att) const {
    auto it = atts.find(att);
    return it == atts.end() ? nullptr : it->second;
  }

  // Attribute value at a linear offset; length-1 datasets are constants.
  Scalar att_value(const std::string& att, size_t offset) const {
    auto it = atts.find(att);
    if (it == atts.end())
      throw Error(ErrorCode::UnknownElement, att);
    const auto& ds = it->second;
    return ds->length() == 1 ? ds->at(0) : ds->at(offset);
  }
};

using SubTarPtr = std::shared_ptr<const SubTar>;

struct LayoutStats {
  uint64_t cells_visited = 0;
  uint64_t subtars_touched = 0;
};

// --- extent algebra -------------------------------------------------------

inline bool extents_intersect(const SubTar& a, const SubTar& b) {
  for (const auto& sa : a.dim_specs) {
    const DimensionSpec* sb = b.spec_for(sa.dimension);
    if (!sb) return false;
    if (sa.upper < sb->lower || sb->upper < sa.lower) return false;
  }
  return true;
}

inline bool extent_intersects_region(const SubTar& s, const Region& region) {
  for (const auto& spec : s.dim_specs) {
    auto [lo, hi] = region.range_for(spec.dimension);
    if (spec.upper < lo || hi < spec.lower) return false;
  }
  return true;
}

inline bool extent_within_region(const SubTar& s, const Region& region) {
  for (const auto& spec : s.dim_specs) {
    auto [lo, hi] = region.range_for(spec.dimension);
    if (spec.lower < lo || spec.upper > hi) return false;
  }
  return true;
}

// All and only the subTARs whose extents intersect the region, in
// registration order.
inline std::vector<SubTarPtr> lookup_subtars(
    const std::vector<SubTarPtr>& subtars, const Region& region) {
  std::vector<SubTarPtr> out;
  for (const auto& s : subtars)
    if (extent_intersects_region(*s, region)) out.push_back(s);
  return out;
}

// --- position mapping (Fi) ------------------------------------------------

inline constexpr int64_t kEmptyCell = -1;

// Linear offset of a location (real indexes, in dim_specs order), or
// kEmptyCell when the location is inside the extent but not occupied.
// Locations outside the extent raise OutsideExtent.
inline int64_t position_of(const SubTar& s, std::span<const int64_t> location) {
  if (location.size() != s.dim_specs.size())
    throw Error(ErrorCode::OutsideExtent, "location arity mismatch");
  for (size_t d = 0; d < location.size(); ++d) {
    if (location[d] < s.dim_specs[d].lower || location[d] > s.dim_specs[d].upper)
      throw Error(ErrorCode::OutsideExtent,
                  s.dim_specs[d].dimension + "=" + std::to_string(location[d]));
  }
  if (s.is_total()) {
    // full scan: Total layouts have no invertible structure
    for (size_t i = 0; i < s.length; ++i) {
      bool match = true;
      for (size_t d = 0; d < s.dim_specs.size(); ++d) {
        if (s.dim_specs[d].stored_to_real(s.dim_specs[d].data->at(i)) !=
            location[d]) {
          match = false;
          break;
        }
      }
      if (match) return static_cast<int64_t>(i);
    }
    return kEmptyCell;
  }
  int64_t offset = 0;
  for (size_t d = 0; d < s.dim_specs.size(); ++d) {
    int64_t slot = s.dim_specs[d].slot_of_real(location[d]);
    if (slot < 0) return kEmptyCell;
    offset = offset * s.dim_specs[d].slot_count() + slot;
  }
  return offset;
}

// Real indexes (dim_specs order) of the cell stored at a linear offset.
inline std::vector<int64_t> location_of(const SubTar& s, size_t offset) {
  if (offset >= s.length)
    throw Error(ErrorCode::OutOfBounds, "offset " + std::to_string(offset));
  std::vector<int64_t> loc(s.dim_specs.size());
  if (s.is_total()) {
    for (size_t d = 0; d < s.dim_specs.size(); ++d)
      loc[d] = s.dim_specs[d].stored_to_real(s.dim_specs[d].data->at(offset));
    return loc;
  }
  int64_t rem = static_cast<int64_t>(offset);
  for (size_t d = s.dim_specs.size(); d-- > 0;) {
    int64_t n = s.dim_specs[d].slot_count();
    loc[d] = s.dim_specs[d].real_at_slot(rem % n);
    rem /= n;
  }
  return loc;
}

// --- data mapping (Fd) ------------------------------------------------------

// Value of a data element at a linear offset: attributes read their bound
// dataset (or constant); dimensions reconstruct the logical index.
inline Scalar value_at(const SubTar& s, size_t offset,
                       const std::string& element) {
  if (offset >= s.length)
    throw Error(ErrorCode::OutOfBounds, "offset " + std::to_string(offset));
  const DataElement& e = s.tar->require(element);
  if (!e.is_dimension()) return s.att_value(element, offset);
  const DimensionSpec* spec = s.spec_for(element);
  if (!spec) throw Error(ErrorCode::UnknownElement, element);
  if (s.is_total())
    return spec->domain->real_to_logical(
        spec->stored_to_real(spec->data->at(offset)));
  // invert the row-major layout for this dimension only
  int64_t rem = static_cast<int64_t>(offset);
  int64_t slot = 0;
  for (size_t d = s.dim_specs.size(); d-- > 0;) {
    int64_t n = s.dim_specs[d].slot_count();
    if (&s.dim_specs[d] == spec) {
      slot = rem % n;
      break;
    }
    rem /= n;
  }
  return spec->domain->real_to_logical(spec->real_at_slot(slot));
}

// --- cell enumeration -------------------------------------------------------

// Yields every occupied cell within clip (real-index region) exactly once as
// (location in dim_specs order, linear offset). Ordered/Partial layouts visit
// only the clipped slot ranges; Total layouts scan every stored cell and
// filter. stats, when given, counts visited cells.
template <typename Fn>
void enumerate_cells(const SubTar& s, const Region* clip, LayoutStats* stats,
                     Fn&& fn) {
  size_t ndims = s.dim_specs.size();
  if (s.is_total()) {
    std::vector<int64_t> loc(ndims);
    for (size_t i = 0; i < s.length; ++i) {
      if (stats) ++stats->cells_visited;
      bool inside = true;
      for (size_t d = 0; d < ndims; ++d) {
        loc[d] = s.dim_specs[d].stored_to_real(s.dim_specs[d].data->at(i));
        if (clip) {
          auto [lo, hi] = clip->range_for(s.dim_specs[d].dimension);
          if (loc[d] < lo || loc[d] > hi) inside = false;
        }
      }
      if (inside) fn(std::span<const int64_t>(loc), i);
    }
    return;
  }
  // clipped slot ranges per dimension
  std::vector<std::pair<int64_t, int64_t>> ranges(ndims);
  std::vector<int64_t> strides(ndims, 1);
  int64_t carry = 1;
  for (size_t d = ndims; d-- > 0;) {
    strides[d] = carry;
    carry *= s.dim_specs[d].slot_count();
    if (clip) {
      auto [lo, hi] = clip->range_for(s.dim_specs[d].dimension);
      ranges[d] = s.dim_specs[d].slot_range(lo, hi);
    } else {
      ranges[d] = {0, s.dim_specs[d].slot_count() - 1};
    }
    if (ranges[d].first > ranges[d].second) return;  // empty intersection
  }
  std::vector<int64_t> slot(ndims), loc(ndims);
  for (size_t d = 0; d < ndims; ++d) {
    slot[d] = ranges[d].first;
    loc[d] = s.dim_specs[d].real_at_slot(slot[d]);
  }
  while (true) {
    int64_t offset = 0;
    for (size_t d = 0; d < ndims; ++d) offset += slot[d] * strides[d];
    if (stats) ++stats->cells_visited;
    fn(std::span<const int64_t>(loc), static_cast<size_t>(offset));
    // odometer increment, fastest-varying dimension last
    size_t d = ndims;
    while (d-- > 0) {
      if (slot[d] < ranges[d].second) {
        ++slot[d];
        loc[d] = s.dim_specs[d].real_at_slot(slot[d]);
        break;
      }
      if (d == 0) return;
      slot[d] = ranges[d].first;
      loc[d] = s.dim_specs[d].real_at_slot(slot[d]);
    }
  }
}

// --- subTAR construction ----------------------------------------------------

// Validates specs and bindings and produces the subTAR. Enforces the layout
// rules: one spec per TAR dimension, Total never mixed with other kinds,
// bounds within the domain, attribute lengths equal to the cell count (or 1
// for TAR properties).
inline SubTarPtr build_subtar(TarDefPtr tar,
                              std::vector<DimensionSpec> dim_specs,
                              std::map<std::string, DatasetPtr> atts) {
  auto dims = tar->dimensions();
  if (dim_specs.size() != dims.size())
    throw Error(ErrorCode::InvalidSpec,
                "expected one dimension specification per TAR dimension");
  size_t total_count = 0;
  for (auto& spec : dim_specs) {
    const DataElement* e = tar->find(spec.dimension);
    if (!e || !e->is_dimension())
      throw Error(ErrorCode::UnknownElement, spec.dimension);
    for (const auto& other : dim_specs)
      if (&other != &spec && other.dimension == spec.dimension)
        throw Error(ErrorCode::InvalidSpec,
                    "duplicate specification for " + spec.dimension);
    spec.domain = e->domain;
    if (spec.lower < 0 || spec.lower > spec.upper)
      throw Error(ErrorCode::InvalidSpec,
                  spec.dimension + ": bad bounds [" +
                      std::to_string(spec.lower) + ", " +
                      std::to_string(spec.upper) + "]");
    if (spec.upper >= e->domain->cardinality())
      throw Error(ErrorCode::InvalidSpec,
                  spec.dimension + ": upper bound outside the domain");
    if (spec.kind == SpecKind::Total) ++total_count;
    if (spec.kind != SpecKind::Ordered && !spec.data)
      throw Error(ErrorCode::InvalidSpec,
                  spec.dimension + ": missing index dataset");
  }
  if (total_count != 0 && total_count != dim_specs.size())
    throw Error(ErrorCode::MixedTotalSpec,
                "total specifications cover all dimensions or none");

  auto sub = std::make_shared<SubTar>();
  sub->tar = std::move(tar);
  sub->dim_specs = std::move(dim_specs);

  if (total_count > 0) {
    size_t len = sub->dim_specs.front().data->length();
    for (const auto& spec : sub->dim_specs) {
      if (spec.data->length() != len)
        throw Error(ErrorCode::LengthMismatch,
                    spec.dimension + ": index dataset lengths differ");
      for (size_t i = 0; i < len; ++i) {
        int64_t real = spec.stored_to_real(spec.data->at(i));
        if (real < spec.lower || real > spec.upper)
          throw Error(ErrorCode::InvalidSpec,
                      spec.dimension + ": index outside declared bounds");
      }
    }
    sub->length = len;
  } else {
    size_t len = 1;
    for (const auto& spec : sub->dim_specs) {
      if (spec.kind == SpecKind::Partial) {
        if (spec.data->length() == 0)
          throw Error(ErrorCode::InvalidSpec,
                      spec.dimension + ": empty present set");
        int64_t prev = -1;
        for (size_t i = 0; i < spec.data->length(); ++i) {
          int64_t real = spec.stored_to_real(spec.data->at(i));
          if (real < spec.lower || real > spec.upper)
            throw Error(ErrorCode::InvalidSpec,
                        spec.dimension + ": present value outside bounds");
          if (i > 0 && real <= prev)
            throw Error(ErrorCode::InvalidSpec,
                        spec.dimension + ": present set must be increasing");
          prev = real;
        }
      }
      len *= static_cast<size_t>(spec.slot_count());
    }
    sub->length = len;
  }

  for (const auto& [att, ds] : atts) {
    const DataElement* e = sub->tar->find(att);
    if (!e || e->is_dimension()) throw Error(ErrorCode::UnknownElement, att);
    if (ds->length() != sub->length && ds->length() != 1)
      throw Error(ErrorCode::LengthMismatch,
                  att + ": dataset length " + std::to_string(ds->length()) +
                      " != subTAR length " + std::to_string(sub->length));
  }
  for (const auto* a : sub->tar->attributes()) {
    if (!atts.count(a->name))
      throw Error(ErrorCode::LengthMismatch, a->name + ": attribute unbound");
  }
  sub->atts = std::move(atts);
  return sub;
}

}  // namespace savime
