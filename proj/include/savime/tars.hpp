#pragma once

#include <memory>
#include <set>

#include "savime/subtar.hpp"

namespace savime {

// A registered TAR: its definition plus the loaded subTARs. Immutable once
// visible; loading a subTAR swaps in a new Tar value.
struct Tar {
  TarDefPtr def;
  std::vector<SubTarPtr> subtars;

  const std::string& name() const { return def->name; }
};

using TarPtr = std::shared_ptr<const Tar>;

// The schema: named TARs, roles, types and links. A TarSchema value is an
// immutable snapshot from the point of view of queries; DDL copies the
// current snapshot, applies one mutation and publishes the copy.
class TarSchema {
 public:
  // --- types and roles ---

  const TarType& define_type(const std::string& name,
                             const std::vector<std::string>& mandatory,
                             const std::vector<std::string>& optional) {
    if (types_.count(name)) throw Error(ErrorCode::DuplicateType, name);
    TarType t;
    t.name = name;
    t.mandatory.insert(mandatory.begin(), mandatory.end());
    t.optional.insert(optional.begin(), optional.end());
    for (const auto& r : t.mandatory)
      if (t.optional.count(r))
        throw Error(ErrorCode::OverlappingRoleSets,
                    name + ": role " + r + " is both mandatory and optional");
    for (const auto& r : t.mandatory) roles_.insert(r);
    for (const auto& r : t.optional) roles_.insert(r);
    type_order_.push_back(name);
    return types_[name] = std::move(t);
  }

  const TarType* find_type(const std::string& name) const {
    auto it = types_.find(name);
    return it == types_.end() ? nullptr : &it->second;
  }

  const std::set<std::string>& roles() const { return roles_; }

  // --- TAR definition ---

  TarPtr define_tar(const std::string& name,
                    const std::optional<std::string>& type_name,
                    std::vector<DataElement> elements,
                    const std::map<std::string, std::string>& role_map) {
    if (tars_.count(name)) throw Error(ErrorCode::DuplicateTar, name);
    bool has_dim = false;
    for (size_t i = 0; i < elements.size(); ++i) {
      const auto& e = elements[i];
      if (e.is_dimension()) {
        has_dim = true;
        if (!e.domain)
          throw Error(ErrorCode::InvalidDomain, e.name + ": missing domain");
      } else if (e.domain) {
        throw Error(ErrorCode::InvalidDomain,
                    e.name + ": attributes carry no domain");
      }
      for (size_t j = i + 1; j < elements.size(); ++j)
        if (elements[j].name == e.name)
          throw Error(ErrorCode::DuplicateTar,
                      name + ": duplicate element " + e.name);
    }
    if (!has_dim)
      throw Error(ErrorCode::InvalidSpec, name + ": a TAR needs a dimension");

    auto def = std::make_shared<TarDef>();
    def->name = name;
    def->elements = std::move(elements);

    if (type_name) {
      const TarType* type = find_type(*type_name);
      if (!type) throw Error(ErrorCode::UnknownType, *type_name);
      std::set<std::string> used_roles;
      for (const auto& [elem, role] : role_map) {
        if (!def->find(elem)) throw Error(ErrorCode::UnknownElement, elem);
        if (!type->mandatory.count(role) && !type->optional.count(role))
          throw Error(ErrorCode::BadValue,
                      role + " is not a role of type " + type->name);
        if (!used_roles.insert(role).second)
          throw Error(ErrorCode::NonInjectiveRoleMap, role);
      }
      for (const auto& r : type->mandatory)
        if (!used_roles.count(r))
          throw Error(ErrorCode::MissingMandatoryRole, r);
      def->binding = TypeBinding{*type_name, role_map};
    } else if (!role_map.empty()) {
      throw Error(ErrorCode::UnknownType, name + ": role map without a type");
    }

    auto tar = std::make_shared<Tar>();
    tar->def = std::move(def);
    tar_order_.push_back(name);
    tars_[name] = tar;
    return tar;
  }

  TarPtr find_tar(const std::string& name) const {
    auto it = tars_.find(name);
    return it == tars_.end() ? nullptr : it->second;
  }

  TarPtr require_tar(const std::string& name) const {
    auto t = find_tar(name);
    if (!t) throw Error(ErrorCode::UnknownTar, name);
    return t;
  }

  void drop_tar(const std::string& name) {
    if (!tars_.erase(name)) throw Error(ErrorCode::UnknownTar, name);
    tar_order_.erase(std::find(tar_order_.begin(), tar_order_.end(), name));
    links_.erase(std::remove_if(links_.begin(), links_.end(),
                                [&](const Link& l) {
                                  return l.left_tar == name ||
                                         l.right_tar == name;
                                }),
                 links_.end());
  }

  // --- subTAR loading ---

  SubTarPtr attach_subtar(const std::string& tar_name,
                          std::vector<DimensionSpec> specs,
                          std::map<std::string, DatasetPtr> atts) {
    auto tar = require_tar(tar_name);
    auto sub = build_subtar(tar->def, std::move(specs), std::move(atts));
    for (const auto& existing : tar->subtars) {
      if (extents_intersect(*existing, *sub))
        throw Error(ErrorCode::OverlapViolation,
                    tar_name + ": extent intersects subTAR #" +
                        std::to_string(existing->sequence));
    }
    auto mutable_sub = std::const_pointer_cast<SubTar>(sub);
    mutable_sub->sequence = tar->subtars.size();
    auto next = std::make_shared<Tar>(*tar);
    next->subtars.push_back(sub);
    tars_[tar_name] = next;
    return sub;
  }

  // --- links ---

  void add_link(Link link) {
    require_tar(link.left_tar)->def->require(link.left_element);
    require_tar(link.right_tar)->def->require(link.right_element);
    links_.push_back(std::move(link));
  }

  // --- schema-level checks ---

  // Strict type predicate: every element is mapped to a role of the bound
  // type, mandatory roles are all covered, and the map is injective.
  // Untyped TARs are vacuously valid.
  bool validate_type(const Tar& tar) const {
    const auto& def = *tar.def;
    if (!def.binding) return true;
    const TarType* type = find_type(def.binding->type_name);
    if (!type) return false;
    std::set<std::string> seen_roles;
    for (const auto& e : def.elements) {
      auto role = def.role_of(e.name);
      if (!role) return false;
      if (!type->mandatory.count(*role) && !type->optional.count(*role))
        return false;
      if (!seen_roles.insert(*role).second) return false;
    }
    for (const auto& r : type->mandatory)
      if (!seen_roles.count(r)) return false;
    return true;
  }

  // Deduplicated set of values a data element currently holds: attribute
  // values across bound datasets, or occupied logical index values for
  // dimensions.
  std::set<Scalar> element_image(const Tar& tar,
                                 const std::string& element) const {
    const DataElement& e = tar.def->require(element);
    std::set<Scalar> image;
    for (const auto& sub : tar.subtars) {
      if (!e.is_dimension()) {
        const auto& ds = sub->atts.at(element);
        for (size_t i = 0; i < ds->length(); ++i) image.insert(ds->at(i));
        continue;
      }
      const DimensionSpec* spec = sub->spec_for(element);
      if (sub->is_total()) {
        for (size_t i = 0; i < sub->length; ++i)
          image.insert(spec->domain->real_to_logical(
              spec->stored_to_real(spec->data->at(i))));
      } else {
        // every filled position along the dimension is occupied
        for (int64_t slot = 0; slot < spec->slot_count(); ++slot)
          image.insert(spec->domain->real_to_logical(spec->real_at_slot(slot)));
      }
    }
    return image;
  }

  // True iff every value of the link's left element occurs in the right
  // element's image.
  bool check_link(const Link& link) const {
    auto left = require_tar(link.left_tar);
    auto right = require_tar(link.right_tar);
    const DataElement& le = left->def->require(link.left_element);
    const DataElement& re = right->def->require(link.right_element);
    if (elem_is_integer(le.type) != elem_is_integer(re.type))
      throw Error(ErrorCode::IncomparableTypes,
                  std::string(elem_name(le.type)) + " vs " + elem_name(re.type));
    auto left_image = element_image(*left, link.left_element);
    auto right_image = element_image(*right, link.right_element);
    for (const auto& v : left_image)
      if (!right_image.count(v)) return false;
    return true;
  }

  // --- enumeration (catalog, CLI) ---

  std::vector<TarPtr> tars() const {
    std::vector<TarPtr> out;
    for (const auto& n : tar_order_) out.push_back(tars_.at(n));
    return out;
  }

  std::vector<const TarType*> types() const {
    std::vector<const TarType*> out;
    for (const auto& n : type_order_) out.push_back(&types_.at(n));
    return out;
  }

  const std::vector<Link>& links() const { return links_; }

  bool uses_dataset(const std::string& ds_name) const {
    for (const auto& [name, tar] : tars_) {
      for (const auto& e : tar->def->elements)
        if (e.domain && !e.domain->is_implicit() &&
            e.domain->values()->name() == ds_name)
          return true;
      for (const auto& sub : tar->subtars) {
        for (const auto& spec : sub->dim_specs)
          if (spec.data && spec.data->name() == ds_name) return true;
        for (const auto& [att, ds] : sub->atts)
          if (ds->name() == ds_name) return true;
      }
    }
    return false;
  }

 private:
  std::map<std::string, TarPtr> tars_;
  std::map<std::string, TarType> types_;
  std::vector<std::string> tar_order_;
  std::vector<std::string> type_order_;
  std::set<std::string> roles_;
  std::vector<Link> links_;
};

using SchemaPtr = std::shared_ptr<const TarSchema>;

}  // namespace savime
