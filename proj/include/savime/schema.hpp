#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "savime/domain.hpp"

namespace savime {

// A dimension or attribute of a TAR. Attributes carry no domain.
struct DataElement {
  std::string name;
  ElemKind kind = ElemKind::Attribute;
  ElemType type = ElemType::Float64;
  DomainPtr domain;  // dimensions only

  bool is_dimension() const { return kind == ElemKind::Dimension; }
};

// A named bundle of mandatory and optional roles. Either set (not both) may
// be empty; they never overlap.
struct TarType {
  std::string name;
  std::set<std::string> mandatory;
  std::set<std::string> optional;
};

// Binds a TAR to a type: which element fulfills which role.
struct TypeBinding {
  std::string type_name;
  std::map<std::string, std::string> role_map;  // element -> role
};

// The shape of a TAR: ordered elements plus the optional type binding. Also
// used for inferred operator output schemas, which never own subTARs.
struct TarDef {
  std::string name;
  std::vector<DataElement> elements;
  std::optional<TypeBinding> binding;

  const DataElement* find(const std::string& elem) const {
    for (const auto& e : elements)
      if (e.name == elem) return &e;
    return nullptr;
  }

  const DataElement& require(const std::string& elem) const {
    const DataElement* e = find(elem);
    if (!e) throw Error(ErrorCode::UnknownElement, name + "." + elem);
    return *e;
  }

  std::vector<const DataElement*> dimensions() const {
    std::vector<const DataElement*> out;
    for (const auto& e : elements)
      if (e.is_dimension()) out.push_back(&e);
    return out;
  }

  std::vector<const DataElement*> attributes() const {
    std::vector<const DataElement*> out;
    for (const auto& e : elements)
      if (!e.is_dimension()) out.push_back(&e);
    return out;
  }

  std::optional<std::string> role_of(const std::string& elem) const {
    if (!binding) return std::nullopt;
    auto it = binding->role_map.find(elem);
    if (it == binding->role_map.end()) return std::nullopt;
    return it->second;
  }

  // Element currently fulfilling a role, if any.
  const DataElement* element_for_role(const std::string& role) const {
    if (!binding) return nullptr;
    for (const auto& [elem, r] : binding->role_map)
      if (r == role) return find(elem);
    return nullptr;
  }
};

using TarDefPtr = std::shared_ptr<const TarDef>;

// TAR type names the mesh-export operator relies on.
inline constexpr const char* kGeometryType = "cartesian_geometry";
inline constexpr const char* kIncidentTopologyType = "incident_topology";
inline constexpr const char* kAdjacencyTopologyType = "adjacency_topology";
inline constexpr const char* kFieldType = "time_field";

// A relationship between two data elements of (possibly different) TARs:
// the left element's value image must stay within the right one's.
struct Link {
  std::string left_tar, left_element;
  std::string right_tar, right_element;
};

}  // namespace savime
