#pragma once

#include <array>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "savime/tars.hpp"

namespace savime {

// A TAR-shaped value: schema plus materialized subTARs. Covers both stored
// TARs and operator outputs.
struct MaterializedTar {
  TarDefPtr def;
  std::vector<SubTarPtr> subtars;
};

// Inputs of a mesh export: a cartesian_geometry TAR, an incident or
// adjacency topology TAR and any number of time_field TARs. Components whose
// schemas carry time/trial roles must be pinned by the selectors.
struct MeshBundle {
  MaterializedTar geometry;
  MaterializedTar topology;
  std::vector<MaterializedTar> fields;
  std::optional<Scalar> time_selector;
  std::optional<Scalar> trial_selector;
};

struct VtkSummary {
  size_t points = 0;
  size_t cells = 0;
  size_t fields = 0;
};

namespace vtk_detail {

// The binding-level type check used by typed operators: the declared type
// exists, every mandatory role is fulfilled injectively and every mapped role
// belongs to the type. (The strict whole-TAR predicate additionally requires
// every element to be mapped; operator outputs may carry unmapped extras.)
inline void require_type(const TarSchema& schema, const TarDef& def,
                         const std::string& expected) {
  if (!def.binding || def.binding->type_name != expected)
    throw Error(ErrorCode::TypeViolation,
                def.name + " is not of type " + expected);
  const TarType* type = schema.find_type(expected);
  if (!type)
    throw Error(ErrorCode::TypeViolation, expected + " is not defined");
  std::set<std::string> seen;
  for (const auto& [elem, role] : def.binding->role_map) {
    if (!def.find(elem))
      throw Error(ErrorCode::TypeViolation, def.name + ": unknown element " + elem);
    if (!type->mandatory.count(role) && !type->optional.count(role))
      throw Error(ErrorCode::TypeViolation,
                  def.name + ": role " + role + " not part of " + expected);
    if (!seen.insert(role).second)
      throw Error(ErrorCode::TypeViolation, def.name + ": role " + role + " mapped twice");
  }
  for (const auto& r : type->mandatory)
    if (!seen.count(r))
      throw Error(ErrorCode::TypeViolation,
                  def.name + ": mandatory role " + r + " unbound");
}

inline const DataElement& role_element(const TarDef& def,
                                       const std::string& role) {
  const DataElement* e = def.element_for_role(role);
  if (!e)
    throw Error(ErrorCode::TypeViolation, def.name + ": no element for role " + role);
  return *e;
}

// Enumerates (selector-filtered) rows of the role-mapped elements.
template <typename Fn>
void role_rows(const MaterializedTar& m, const std::vector<std::string>& roles,
               const std::optional<Scalar>& time_sel,
               const std::optional<Scalar>& trial_sel, Fn&& fn) {
  const TarDef& def = *m.def;
  std::vector<std::string> elems;
  for (const auto& r : roles) elems.push_back(role_element(def, r).name);
  const DataElement* time_elem = def.element_for_role("time");
  const DataElement* trial_elem = def.element_for_role("trial");
  if (time_elem && !time_sel)
    throw Error(ErrorCode::MissingSelector,
                def.name + " varies over time; pin a time selector");
  if (trial_elem && !trial_sel)
    throw Error(ErrorCode::MissingSelector,
                def.name + " varies over trials; pin a trial selector");
  std::vector<Scalar> row(elems.size());
  for (const auto& sub : m.subtars) {
    enumerate_cells(*sub, nullptr, nullptr,
                    [&](std::span<const int64_t>, size_t offset) {
                      if (time_elem &&
                          !(value_at(*sub, offset, time_elem->name) == *time_sel))
                        return;
                      if (trial_elem &&
                          !(value_at(*sub, offset, trial_elem->name) == *trial_sel))
                        return;
                      for (size_t i = 0; i < elems.size(); ++i)
                        row[i] = value_at(*sub, offset, elems[i]);
                      fn(row);
                    });
  }
}

inline void print_double(std::string& out, double v) {
  char buf[40];
  snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace vtk_detail

// Writes the bundle as a legacy ASCII VTK unstructured grid. Point order is
// ascending id; the cell type code is fixed per bundle by the incidence
// arity (3 -> triangle, 4 -> tetrahedron). Deterministic: equal bundles
// produce byte-identical files.
inline VtkSummary export_vtk(const TarSchema& schema, const MeshBundle& bundle,
                             const std::string& out_path,
                             const std::string& post_hook = "") {
  using namespace vtk_detail;

  require_type(schema, *bundle.geometry.def, kGeometryType);
  bool adjacency = bundle.topology.def->binding &&
                   bundle.topology.def->binding->type_name ==
                       kAdjacencyTopologyType;
  if (adjacency) {
    require_type(schema, *bundle.topology.def, kAdjacencyTopologyType);
    throw Error(ErrorCode::AdjacencyNotExportable,
                bundle.topology.def->name +
                    ": legacy VTK has no adjacency representation");
  }
  require_type(schema, *bundle.topology.def, kIncidentTopologyType);
  for (const auto& f : bundle.fields) require_type(schema, *f.def, kFieldType);

  // geometry: id -> (x, y, z), ordered by id
  std::map<Scalar, std::array<double, 3>> points;
  role_rows(bundle.geometry, {"id", "x", "y", "z"}, bundle.time_selector,
            bundle.trial_selector, [&](const std::vector<Scalar>& row) {
              std::array<double, 3> xyz = {row[1].as_double(),
                                           row[2].as_double(),
                                           row[3].as_double()};
              auto [it, fresh] = points.emplace(row[0], xyz);
              if (!fresh && it->second != xyz)
                throw Error(ErrorCode::TypeViolation,
                            "point id " + row[0].to_string() +
                                " has conflicting coordinates");
            });
  std::map<Scalar, size_t> rank;
  for (const auto& [id, xyz] : points) rank.emplace(id, rank.size());

  // topology: cell -> (position, incidee) list
  std::map<Scalar, std::vector<std::pair<Scalar, Scalar>>> cells;
  role_rows(bundle.topology, {"cell", "position", "incidee"},
            bundle.time_selector, bundle.trial_selector,
            [&](const std::vector<Scalar>& row) {
              if (!rank.count(row[2]))
                throw Error(ErrorCode::DanglingPointId,
                            "incidence references unknown point id " +
                                row[2].to_string());
              cells[row[0]].emplace_back(row[1], row[2]);
            });
  size_t arity = 0;
  for (auto& [cell, verts] : cells) {
    std::sort(verts.begin(), verts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (arity == 0) arity = verts.size();
    if (verts.size() != arity)
      throw Error(ErrorCode::TypeViolation,
                  "mixed incidence arity in cell " + cell.to_string());
  }
  int cell_code = 0;
  if (!cells.empty()) {
    if (arity == 3) cell_code = 5;        // VTK_TRIANGLE
    else if (arity == 4) cell_code = 10;  // VTK_TETRA
    else
      throw Error(ErrorCode::TypeViolation,
                  "unsupported incidence arity " + std::to_string(arity));
  }

  // fields: value per point id, exported in point order; gaps print as 0
  struct FieldData {
    std::string name;
    std::map<Scalar, double> values;
  };
  std::vector<FieldData> field_data;
  std::set<std::string> used_names;
  for (const auto& f : bundle.fields) {
    FieldData fd;
    fd.name = role_element(*f.def, "value").name;
    int suffix = 2;
    while (!used_names.insert(fd.name).second)
      fd.name = role_element(*f.def, "value").name + "_" + std::to_string(suffix++);
    role_rows(f, {"id", "value"}, bundle.time_selector, bundle.trial_selector,
              [&](const std::vector<Scalar>& row) {
                if (!rank.count(row[0]))
                  throw Error(ErrorCode::DanglingPointId,
                              fd.name + " references unknown point id " +
                                  row[0].to_string());
                fd.values[row[0]] = row[1].as_double();
              });
    field_data.push_back(std::move(fd));
  }

  std::string out;
  out += "# vtk DataFile Version 3.0\n";
  out += "savime mesh export\n";
  out += "ASCII\n";
  out += "DATASET UNSTRUCTURED_GRID\n";
  out += "POINTS " + std::to_string(points.size()) + " double\n";
  for (const auto& [id, xyz] : points) {
    print_double(out, xyz[0]);
    out += ' ';
    print_double(out, xyz[1]);
    out += ' ';
    print_double(out, xyz[2]);
    out += '\n';
  }
  out += "CELLS " + std::to_string(cells.size()) + " " +
         std::to_string(cells.size() * (arity + 1)) + "\n";
  for (const auto& [cell, verts] : cells) {
    out += std::to_string(arity);
    for (const auto& [pos, incidee] : verts)
      out += ' ' + std::to_string(rank.at(incidee));
    out += '\n';
  }
  out += "CELL_TYPES " + std::to_string(cells.size()) + "\n";
  for (size_t i = 0; i < cells.size(); ++i)
    out += std::to_string(cell_code) + "\n";
  if (!field_data.empty()) {
    out += "POINT_DATA " + std::to_string(points.size()) + "\n";
    for (const auto& fd : field_data) {
      out += "SCALARS " + fd.name + " double 1\n";
      out += "LOOKUP_TABLE default\n";
      for (const auto& [id, r] : rank) {
        auto it = fd.values.find(id);
        print_double(out, it == fd.values.end() ? 0.0 : it->second);
        out += '\n';
      }
    }
  }

  FILE* f = fopen(out_path.c_str(), "wb");
  if (!f) throw Error(ErrorCode::IoError, out_path);
  fwrite(out.data(), 1, out.size(), f);
  fclose(f);

  if (!post_hook.empty()) {
    std::string cmd = post_hook + " '" + out_path + "'";
    if (std::system(cmd.c_str()) != 0)
      throw Error(ErrorCode::IoError, "post-export hook failed");
  }

  VtkSummary s;
  s.points = points.size();
  s.cells = cells.size();
  s.fields = field_data.size();
  return s;
}

inline MaterializedTar materialize_stored(const TarSchema& schema,
                                          const std::string& tar_name) {
  auto tar = schema.require_tar(tar_name);
  return MaterializedTar{tar->def, tar->subtars};
}

}  // namespace savime
