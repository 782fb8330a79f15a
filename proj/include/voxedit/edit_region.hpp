#pragma once

// Edit-region detection. Given the asset A split into P_edit and P_pres, the
// editable region over the full cube C is
//
//   addition:      C \ A
//   deletion:      P_edit
//   modification:  P_edit  u  (C \ bbox_pres)  u  V
//                  V = { v in bbox_pres \ A : PropKNN(v) > tau }
//
// where bbox_pres is the union of one AABB per preserved part and PropKNN(v)
// is the fraction of v's k nearest asset voxels that lie in P_edit.

#include <algorithm>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "voxedit/error.hpp"
#include "voxedit/geometry.hpp"
#include "voxedit/voxel.hpp"

namespace voxedit {

enum class EditType { Addition, Modification, Deletion };

inline std::string to_string(EditType t) {
  switch (t) {
    case EditType::Addition: return "addition";
    case EditType::Modification: return "modification";
    case EditType::Deletion: return "deletion";
  }
  return "?";
}

inline EditType parse_edit_type(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "addition") return EditType::Addition;
  if (name == "modification") return EditType::Modification;
  if (name == "deletion") return EditType::Deletion;
  fail(ErrorCode::ConfigFault, "unknown edit type '" + name + "'");
}

struct Partition {
  CoordSet asset;
  CoordSet p_edit;
  CoordSet p_pres;
  /// Preserved voxels grouped by part id; one bounding box each. Empty means
  /// p_pres is treated as a single part.
  std::map<int, CoordSet> preserved_parts;

  void validate() const {
    require(set_union(p_edit, p_pres) == asset, ErrorCode::Precondition,
            "partition parts do not cover the asset");
    require(set_intersection(p_edit, p_pres).empty(), ErrorCode::Precondition,
            "partition parts overlap");
  }

  std::vector<Aabb> preserved_boxes() const {
    std::vector<Aabb> boxes;
    if (preserved_parts.empty()) {
      if (!p_pres.empty()) boxes.push_back(aabb_of(p_pres));
      return boxes;
    }
    for (const auto& [id, voxels] : preserved_parts)
      if (!voxels.empty()) boxes.push_back(aabb_of(voxels));
    return boxes;
  }
};

/// Partition where nothing is selected for editing (additions).
inline Partition whole_asset_preserved(CoordSet asset) {
  Partition p;
  p.p_pres = asset;
  p.asset = std::move(asset);
  return p;
}

struct RegionParams {
  std::size_t k = 8;
  double tau = 0.5;

  void validate() const {
    require(k >= 1, ErrorCode::Precondition, "region k must be >= 1");
    require(tau > 0.0 && tau < 1.0, ErrorCode::Precondition, "region tau must lie in (0,1)");
  }
};

inline Partition partition_from_labels(const PartLabeling& labeling, const std::set<int>& edit_part_ids) {
  std::set<int> present;
  for (const auto& [c, label] : labeling.labels) present.insert(label);
  for (int id : edit_part_ids)
    require(present.count(id) > 0, ErrorCode::UnknownPart,
            "part id " + std::to_string(id) + " not present in labeling");
  Partition p;
  for (const auto& [c, label] : labeling.labels) {  // map order is lexicographic
    p.asset.push_back(c);
    if (edit_part_ids.count(label)) {
      p.p_edit.push_back(c);
    } else {
      p.p_pres.push_back(c);
      p.preserved_parts[label].push_back(c);
    }
  }
  return p;
}

/// Fraction of v's k nearest asset voxels that belong to p_edit.
inline double prop_knn(const VoxelCoord& v, const Partition& partition, std::size_t k) {
  require(!partition.asset.empty(), ErrorCode::EmptySet, "PropKNN needs a non-empty asset");
  require(!set_contains(partition.asset, v), ErrorCode::Precondition,
          "PropKNN is defined for empty voxels only");
  const auto nearest = knn(v, partition.asset, k);
  const auto hits = std::count_if(nearest.begin(), nearest.end(),
                                  [&](const VoxelCoord& c) { return set_contains(partition.p_edit, c); });
  return static_cast<double>(hits) / static_cast<double>(nearest.size());
}

inline VoxelMask compute_edit_region(EditType type, const Partition& partition, const GridDims& dims,
                                     const RegionParams& params) {
  dims.validate();
  params.validate();
  partition.validate();
  for (const auto& c : partition.asset)
    require(dims.contains(c), ErrorCode::Precondition, "asset voxel " + to_string(c) + " outside grid");

  switch (type) {
    case EditType::Addition:
      return VoxelMask(dims.resolution, partition.asset).complement();
    case EditType::Deletion:
      require(!partition.p_edit.empty(), ErrorCode::EmptySet, "deletion needs a non-empty P_edit");
      return VoxelMask(dims.resolution, partition.p_edit);
    case EditType::Modification:
      break;
  }

  require(!partition.p_edit.empty(), ErrorCode::EmptySet, "modification needs a non-empty P_edit");
  if (partition.p_pres.empty()) {
    std::clog << "warning: modification with nothing preserved; whole grid is editable\n";
    return VoxelMask::full(dims.resolution);
  }

  const auto boxes = partition.preserved_boxes();
  const VoxelMask asset(dims.resolution, partition.asset);
  const VoxelMask edit_parts(dims.resolution, partition.p_edit);
  const KnnIndex index(partition.asset);
  const std::size_t k = std::min(params.k, partition.asset.size());

  VoxelMask region(dims.resolution);
  for (std::size_t i = 0; i < dims.cell_count(); ++i) {
    const VoxelCoord v = dims.coord_at(i);
    if (asset.contains_index(i)) {
      if (edit_parts.contains_index(i)) region.insert(v);
      continue;
    }
    const bool in_box = std::any_of(boxes.begin(), boxes.end(), [&](const Aabb& b) { return b.contains(v); });
    if (!in_box) {
      region.insert(v);
      continue;
    }
    const auto nearest = index.query(v, k);
    std::size_t hits = 0;
    for (const auto& c : nearest) hits += edit_parts.contains(c) ? 1 : 0;
    if (static_cast<double>(hits) / static_cast<double>(nearest.size()) > params.tau) region.insert(v);
  }
  return region;
}

/// R_pres = C \ R_edit.
inline VoxelMask preserved_mask(const VoxelMask& r_edit) { return r_edit.complement(); }

}  // namespace voxedit
