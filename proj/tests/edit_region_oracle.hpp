#pragma once

// Straight-line evaluation of the editing-region definition, one voxel at a
// time, sharing no code with voxedit::compute_edit_region beyond the plain
// data types. Used by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "voxedit/edit_region.hpp"

namespace voxedit::oracle {

struct Box {
  int lo[3];
  int hi[3];
};

inline bool inside(const Box& b, int x, int y, int z) {
  return x >= b.lo[0] && x <= b.hi[0] && y >= b.lo[1] && y <= b.hi[1] && z >= b.lo[2] && z <= b.hi[2];
}

/// Returns the editable voxels of the cube, in x/y/z loop order.
inline std::vector<VoxelCoord> edit_region(EditType type, const std::set<VoxelCoord>& asset,
                                           const std::set<VoxelCoord>& p_edit,
                                           const std::map<int, std::vector<VoxelCoord>>& pres_parts,
                                           int resolution, int k, double tau) {
  std::vector<Box> boxes;
  for (const auto& [id, part] : pres_parts) {
    if (part.empty()) continue;
    Box b{{1 << 30, 1 << 30, 1 << 30}, {-1, -1, -1}};
    for (const auto& c : part) {
      const int v[3] = {c.x, c.y, c.z};
      for (int a = 0; a < 3; ++a) b.lo[a] = std::min(b.lo[a], v[a]), b.hi[a] = std::max(b.hi[a], v[a]);
    }
    boxes.push_back(b);
  }

  std::vector<VoxelCoord> out;
  for (int x = 0; x < resolution; ++x)
    for (int y = 0; y < resolution; ++y)
      for (int z = 0; z < resolution; ++z) {
        const VoxelCoord v{x, y, z};
        const bool in_asset = asset.count(v) > 0;
        bool editable = false;
        if (type == EditType::Addition) {
          editable = !in_asset;
        } else if (type == EditType::Deletion) {
          editable = p_edit.count(v) > 0;
        } else if (in_asset) {
          editable = p_edit.count(v) > 0;
        } else {
          bool in_bbox = false;
          for (const auto& b : boxes) in_bbox = in_bbox || inside(b, x, y, z);
          if (!in_bbox) {
            editable = true;
          } else {
            std::vector<std::pair<double, VoxelCoord>> ranked;
            for (const auto& a : asset)
              ranked.push_back({std::sqrt(double((a.x - x) * (a.x - x) + (a.y - y) * (a.y - y) +
                                                 (a.z - z) * (a.z - z))),
                                a});
            std::sort(ranked.begin(), ranked.end());
            const int take = std::min<int>(k, int(ranked.size()));
            int hits = 0;
            for (int i = 0; i < take; ++i) hits += p_edit.count(ranked[i].second) ? 1 : 0;
            editable = double(hits) / double(take) > tau;
          }
        }
        if (editable) out.push_back(v);
      }
  return out;
}


/// Random labeled asset on an R^3 grid with at least one edit part and one
/// preserved part.
struct Instance {
  PartLabeling labeling;
  std::set<int> edit_ids;
};

inline Instance random_instance(std::mt19937_64& rng, int resolution, int min_size, int max_size) {
  std::uniform_int_distribution<int> size_dist(min_size, max_size), axis(0, resolution - 1),
      parts_dist(2, 5);
  const int target = size_dist(rng);
  const int parts = parts_dist(rng);
  // Parts grow around random seeds so they are spatially coherent.
  std::vector<VoxelCoord> seeds;
  for (int p = 0; p < parts; ++p) seeds.push_back({axis(rng), axis(rng), axis(rng)});
  Instance inst;
  inst.labeling.part_count = parts;
  while (int(inst.labeling.labels.size()) < target) {
    const VoxelCoord c{axis(rng), axis(rng), axis(rng)};
    int best = 0;
    for (int p = 1; p < parts; ++p)
      if (squared_distance(c, seeds[p]) < squared_distance(c, seeds[best])) best = p;
    inst.labeling.labels.emplace(c, best);
  }
  std::set<int> present;
  for (const auto& [c, l] : inst.labeling.labels) present.insert(l);
  std::vector<int> ids(present.begin(), present.end());
  std::shuffle(ids.begin(), ids.end(), rng);
  std::uniform_int_distribution<int> n_edit(1, std::max(1, int(ids.size()) - 1));
  const int take = ids.size() > 1 ? n_edit(rng) : 1;
  inst.edit_ids.insert(ids.begin(), ids.begin() + take);
  return inst;
}

inline std::vector<VoxelCoord> edit_region(EditType type, const Instance& inst, int resolution, int k,
                                           double tau) {
  std::set<VoxelCoord> asset, p_edit;
  std::map<int, std::vector<VoxelCoord>> pres;
  for (const auto& [c, l] : inst.labeling.labels) {
    asset.insert(c);
    if (inst.edit_ids.count(l))
      p_edit.insert(c);
    else
      pres[l].push_back(c);
  }
  return edit_region(type, asset, p_edit, pres, resolution, k, tau);
}

}  // namespace voxedit::oracle
