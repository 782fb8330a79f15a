#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "voxedit/error.hpp"
#include "voxedit/voxel.hpp"

namespace voxedit {

inline Aabb aabb_of(std::span<const VoxelCoord> coords) {
  require(!coords.empty(), ErrorCode::EmptySet, "aabb_of needs at least one coordinate");
  Aabb box{coords.front(), coords.front()};
  for (const auto& c : coords) {
    box.min = {std::min(box.min.x, c.x), std::min(box.min.y, c.y), std::min(box.min.z, c.z)};
    box.max = {std::max(box.max.x, c.x), std::max(box.max.y, c.y), std::max(box.max.z, c.z)};
  }
  return box;
}

namespace detail {

struct Candidate {
  std::int64_t d2;
  VoxelCoord coord;

  friend bool operator<(const Candidate& a, const Candidate& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : a.coord < b.coord;
  }
};

inline std::vector<VoxelCoord> take_sorted(std::vector<Candidate>& cands, std::size_t k) {
  k = std::min(k, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end());
  std::vector<VoxelCoord> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(cands[i].coord);
  return out;
}

constexpr int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

}  // namespace detail

/// k nearest reference voxels by Euclidean distance, ties broken by
/// lexicographic coordinate order. Exhaustive scan.
inline std::vector<VoxelCoord> knn(const VoxelCoord& query, std::span<const VoxelCoord> reference,
                                   std::size_t k) {
  require(!reference.empty(), ErrorCode::EmptySet, "knn reference set is empty");
  require(k >= 1, ErrorCode::Precondition, "knn needs k >= 1");
  std::vector<detail::Candidate> cands;
  cands.reserve(reference.size());
  for (const auto& r : reference) cands.push_back({squared_distance(query, r), r});
  return detail::take_sorted(cands, k);
}

/// Uniform-bucket accelerator for knn over a fixed reference set. Gives the
/// same answer (including tie order) as the exhaustive scan.
class KnnIndex {
 public:
  explicit KnnIndex(std::span<const VoxelCoord> reference, int bucket_size = 4)
      : bucket_(bucket_size), count_(reference.size()) {
    require(!reference.empty(), ErrorCode::EmptySet, "knn reference set is empty");
    require(bucket_size >= 1, ErrorCode::Precondition, "bucket size must be >= 1");
    lo_ = bucket_of(reference.front());
    hi_ = lo_;
    for (const auto& c : reference) {
      const auto b = bucket_of(c);
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], b[a]);
        hi_[a] = std::max(hi_[a], b[a]);
      }
    }
    for (int a = 0; a < 3; ++a) extent_[a] = hi_[a] - lo_[a] + 1;
    buckets_.resize(static_cast<std::size_t>(extent_[0]) * extent_[1] * extent_[2]);
    for (const auto& c : reference) buckets_[slot(bucket_of(c))].push_back(c);
  }

  std::size_t size() const { return count_; }

  std::vector<VoxelCoord> query(const VoxelCoord& q, std::size_t k) const {
    require(k >= 1, ErrorCode::Precondition, "knn needs k >= 1");
    k = std::min(k, count_);
    const auto qb = bucket_of(q);
    int max_ring = 0;
    for (int a = 0; a < 3; ++a)
      max_ring = std::max({max_ring, std::abs(qb[a] - lo_[a]), std::abs(qb[a] - hi_[a])});

    std::vector<detail::Candidate> cands;
    for (int ring = 0; ring <= max_ring; ++ring) {
      visit_ring(qb, ring, [&](const std::vector<VoxelCoord>& bucket) {
        for (const auto& c : bucket) cands.push_back({squared_distance(q, c), c});
      });
      if (cands.size() >= k) {
        // Every voxel outside the visited rings is at least ring*bucket+1 away.
        std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k - 1), cands.end());
        const std::int64_t gap = static_cast<std::int64_t>(ring) * bucket_ + 1;
        if (cands[k - 1].d2 < gap * gap) break;
      }
    }
    return detail::take_sorted(cands, k);
  }

  double nearest_distance(const VoxelCoord& q) const {
    const auto nn = query(q, 1);
    return std::sqrt(static_cast<double>(squared_distance(q, nn.front())));
  }

 private:
  using Bucket = std::array<int, 3>;

  Bucket bucket_of(const VoxelCoord& c) const {
    return {detail::floor_div(c.x, bucket_), detail::floor_div(c.y, bucket_),
            detail::floor_div(c.z, bucket_)};
  }

  std::size_t slot(const Bucket& b) const {
    return (static_cast<std::size_t>(b[0] - lo_[0]) * extent_[1] + (b[1] - lo_[1])) * extent_[2] +
           (b[2] - lo_[2]);
  }

  bool in_range(const Bucket& b) const {
    for (int a = 0; a < 3; ++a)
      if (b[a] < lo_[a] || b[a] > hi_[a]) return false;
    return true;
  }

  template <class Fn>
  void visit_ring(const Bucket& center, int ring, Fn&& fn) const {
    for (int dx = -ring; dx <= ring; ++dx)
      for (int dy = -ring; dy <= ring; ++dy)
        for (int dz = -ring; dz <= ring; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          const Bucket b{center[0] + dx, center[1] + dy, center[2] + dz};
          if (in_range(b)) fn(buckets_[slot(b)]);
        }
  }

  int bucket_;
  std::size_t count_;
  Bucket lo_{}, hi_{}, extent_{};
  std::vector<std::vector<VoxelCoord>> buckets_;
};

struct LabeledPoint {
  std::array<double, 3> position{};  // in [0,1]^3
  int label = 0;
};

/// Maps a position in [0,1]^3 to the voxel floor(p*R), clamped into the cube.
inline VoxelCoord voxel_of(const std::array<double, 3>& p, int resolution) {
  auto axis = [resolution](double v) {
    const double s = std::floor(v * resolution);
    return static_cast<int>(std::clamp(s, 0.0, static_cast<double>(resolution - 1)));
  };
  return {axis(p[0]), axis(p[1]), axis(p[2])};
}

/// Voxel center in [0,1]^3.
inline std::array<double, 3> voxel_center(const VoxelCoord& c, int resolution) {
  const double r = resolution;
  return {(c.x + 0.5) / r, (c.y + 0.5) / r, (c.z + 0.5) / r};
}

/// Per-voxel majority vote of point labels; ties go to the smallest label.
inline PartLabeling majority_vote_labels(std::span<const LabeledPoint> points, const GridDims& dims) {
  dims.validate();
  std::map<VoxelCoord, std::map<int, std::size_t>> votes;
  int max_label = -1;
  for (const auto& p : points) {
    require(p.label >= 0, ErrorCode::Precondition, "part labels must be >= 0");
    for (double v : p.position)
      require(std::isfinite(v), ErrorCode::Precondition, "point position is not finite");
    ++votes[voxel_of(p.position, dims.resolution)][p.label];
    max_label = std::max(max_label, p.label);
  }
  PartLabeling out;
  out.part_count = max_label + 1;
  for (const auto& [voxel, hist] : votes) {
    int best = -1;
    std::size_t best_count = 0;
    for (const auto& [label, count] : hist)  // ascending label order
      if (count > best_count) best = label, best_count = count;
    out.labels.emplace(voxel, best);
  }
  return out;
}

/// Coarse mask at R/f: a coarse cell is a member when the fraction of member
/// fine voxels in its f^3 block is at least rho.
inline VoxelMask downscale_mask(const VoxelMask& mask, int factor, double rho) {
  require(factor >= 1 && mask.resolution() % factor == 0, ErrorCode::BadFactor,
          "factor " + std::to_string(factor) + " does not divide resolution " +
              std::to_string(mask.resolution()));
  require(rho > 0.0 && rho <= 1.0, ErrorCode::Precondition, "rho must lie in (0,1]");
  const int coarse_r = mask.resolution() / factor;
  const GridDims coarse{coarse_r, 1};
  std::vector<std::size_t> counts(coarse.cell_count(), 0);
  for (const auto& c : mask.members())
    ++counts[coarse.index_of({c.x / factor, c.y / factor, c.z / factor})];
  const double block = static_cast<double>(factor) * factor * factor;
  VoxelMask out(coarse_r);
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (static_cast<double>(counts[i]) / block >= rho) out.insert(coarse.coord_at(i));
  return out;
}

/// Symmetric Chamfer distance between voxel-center point sets:
/// (mean_a min_b |a-b| + mean_b min_a |a-b|) / 2, in voxel units.
inline double chamfer_distance(std::span<const VoxelCoord> a, std::span<const VoxelCoord> b) {
  require(!a.empty() && !b.empty(), ErrorCode::EmptySet, "chamfer distance needs non-empty sets");
  auto one_way = [](std::span<const VoxelCoord> from, std::span<const VoxelCoord> to) {
    const KnnIndex index(to);
    double sum = 0.0;
    for (const auto& c : from) sum += index.nearest_distance(c);
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

}  // namespace voxedit
