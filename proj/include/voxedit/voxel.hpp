#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "voxedit/error.hpp"

namespace voxedit {

/// Integer voxel index. Ordered lexicographically (x, then y, then z).
struct VoxelCoord {
  int x = 0;
  int y = 0;
  int z = 0;

  friend constexpr auto operator<=>(const VoxelCoord&, const VoxelCoord&) = default;
};

constexpr std::int64_t squared_distance(const VoxelCoord& a, const VoxelCoord& b) {
  const std::int64_t dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline std::string to_string(const VoxelCoord& c) {
  return "(" + std::to_string(c.x) + "," + std::to_string(c.y) + "," + std::to_string(c.z) + ")";
}

struct GridDims {
  int resolution = 16;
  int channels = 1;

  void validate() const {
    require(resolution >= 1, ErrorCode::Precondition, "grid resolution must be >= 1");
    require(channels >= 1, ErrorCode::Precondition, "grid channels must be >= 1");
  }

  std::size_t cell_count() const {
    const auto r = static_cast<std::size_t>(resolution);
    return r * r * r;
  }

  constexpr bool contains(const VoxelCoord& c) const {
    return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < resolution && c.y < resolution &&
           c.z < resolution;
  }

  // Linear index is monotone in the lexicographic coordinate order.
  std::size_t index_of(const VoxelCoord& c) const {
    const auto r = static_cast<std::size_t>(resolution);
    return (static_cast<std::size_t>(c.x) * r + static_cast<std::size_t>(c.y)) * r +
           static_cast<std::size_t>(c.z);
  }

  VoxelCoord coord_at(std::size_t index) const {
    const auto r = static_cast<std::size_t>(resolution);
    return {static_cast<int>(index / (r * r)), static_cast<int>((index / r) % r),
            static_cast<int>(index % r)};
  }

  friend bool operator==(const GridDims&, const GridDims&) = default;
};

inline constexpr GridDims kStage1Dims{16, 8};
inline constexpr GridDims kStage2Dims{64, 8};

/// Sorted, duplicate-free list of coordinates.
using CoordSet = std::vector<VoxelCoord>;

inline CoordSet make_coord_set(std::vector<VoxelCoord> coords) {
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  return coords;
}

inline bool set_contains(const CoordSet& set, const VoxelCoord& c) {
  return std::binary_search(set.begin(), set.end(), c);
}

inline CoordSet set_union(const CoordSet& a, const CoordSet& b) {
  CoordSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline CoordSet set_difference(const CoordSet& a, const CoordSet& b) {
  CoordSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline CoordSet set_intersection(const CoordSet& a, const CoordSet& b) {
  CoordSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

/// Inclusive axis-aligned box in voxel space.
struct Aabb {
  VoxelCoord min;
  VoxelCoord max;

  constexpr bool contains(const VoxelCoord& c) const {
    return c.x >= min.x && c.x <= max.x && c.y >= min.y && c.y <= max.y && c.z >= min.z &&
           c.z <= max.z;
  }

  friend bool operator==(const Aabb&, const Aabb&) = default;
};

/// Hard membership mask over the full R^3 cube, stored densely.
class VoxelMask {
 public:
  explicit VoxelMask(int resolution = 1) : dims_{resolution, 1}, bits_(dims_.cell_count(), 0) {
    dims_.validate();
  }

  VoxelMask(int resolution, std::span<const VoxelCoord> members) : VoxelMask(resolution) {
    for (const auto& c : members) insert(c);
  }

  static VoxelMask full(int resolution) {
    VoxelMask m(resolution);
    std::fill(m.bits_.begin(), m.bits_.end(), std::uint8_t{1});
    m.count_ = m.bits_.size();
    return m;
  }

  int resolution() const { return dims_.resolution; }
  const GridDims& dims() const { return dims_; }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }

  bool contains(const VoxelCoord& c) const { return dims_.contains(c) && bits_[dims_.index_of(c)]; }
  bool contains_index(std::size_t i) const { return bits_[i] != 0; }

  void insert(const VoxelCoord& c) {
    require(dims_.contains(c), ErrorCode::Precondition,
            "mask member " + to_string(c) + " outside grid of resolution " +
                std::to_string(dims_.resolution));
    auto& b = bits_[dims_.index_of(c)];
    count_ += b ? 0 : 1;
    b = 1;
  }

  void erase(const VoxelCoord& c) {
    if (!dims_.contains(c)) return;
    auto& b = bits_[dims_.index_of(c)];
    count_ -= b ? 1 : 0;
    b = 0;
  }

  /// Members in lexicographic order.
  CoordSet members() const {
    CoordSet out;
    out.reserve(count_);
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) out.push_back(dims_.coord_at(i));
    return out;
  }

  VoxelMask complement() const {
    VoxelMask out(dims_.resolution);
    for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] ? 0 : 1;
    out.count_ = bits_.size() - count_;
    return out;
  }

  friend bool operator==(const VoxelMask& a, const VoxelMask& b) {
    return a.dims_.resolution == b.dims_.resolution && a.bits_ == b.bits_;
  }

 private:
  GridDims dims_;
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

/// Per-voxel blend weights in [0,1]; cells never set are 0 (fully preserved).
class SoftMask {
 public:
  explicit SoftMask(int resolution = 1) : dims_{resolution, 1}, weights_(dims_.cell_count(), 0.0) {
    dims_.validate();
  }

  static SoftMask from_hard(const VoxelMask& mask) {
    SoftMask out(mask.resolution());
    for (std::size_t i = 0; i < out.weights_.size(); ++i)
      out.weights_[i] = mask.contains_index(i) ? 1.0 : 0.0;
    return out;
  }

  int resolution() const { return dims_.resolution; }
  const GridDims& dims() const { return dims_; }

  double weight(const VoxelCoord& c) const {
    return dims_.contains(c) ? weights_[dims_.index_of(c)] : 0.0;
  }

  void set(const VoxelCoord& c, double w) {
    require(dims_.contains(c), ErrorCode::Precondition, "soft mask coord outside grid");
    require(w >= 0.0 && w <= 1.0, ErrorCode::Precondition, "soft mask weight outside [0,1]");
    weights_[dims_.index_of(c)] = w;
  }

  /// Coordinates with non-zero weight.
  CoordSet support() const {
    CoordSet out;
    for (std::size_t i = 0; i < weights_.size(); ++i)
      if (weights_[i] > 0.0) out.push_back(dims_.coord_at(i));
    return out;
  }

  bool is_hard() const {
    return std::all_of(weights_.begin(), weights_.end(), [](double w) { return w == 0.0 || w == 1.0; });
  }

 private:
  GridDims dims_;
  std::vector<double> weights_;
};

struct PartLabeling {
  std::map<VoxelCoord, int> labels;
  int part_count = 0;

  CoordSet voxels() const {
    CoordSet out;
    out.reserve(labels.size());
    for (const auto& [c, _] : labels) out.push_back(c);
    return out;
  }
};

/// Sparse voxel grid with a fixed-length feature vector per occupied voxel.
/// Cells are kept in lexicographic coordinate order; immutable once built.
class LatentGrid {
 public:
  LatentGrid() = default;

  LatentGrid(GridDims dims, CoordSet coords, std::vector<float> features)
      : dims_(dims), coords_(std::move(coords)), features_(std::move(features)) {
    dims_.validate();
    require(features_.size() == coords_.size() * static_cast<std::size_t>(dims_.channels),
            ErrorCode::ShapeFault, "feature buffer does not match coords x channels");
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      require(dims_.contains(coords_[i]), ErrorCode::Precondition,
              "grid coord " + to_string(coords_[i]) + " outside resolution " +
                  std::to_string(dims_.resolution));
      if (i > 0)
        require(coords_[i - 1] < coords_[i], ErrorCode::Precondition,
                "grid coords must be unique and sorted");
    }
  }

  /// Builds from unordered cells; rejects duplicates.
  static LatentGrid from_cells(GridDims dims,
                               std::vector<std::pair<VoxelCoord, std::vector<float>>> cells) {
    std::sort(cells.begin(), cells.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    CoordSet coords;
    std::vector<float> features;
    coords.reserve(cells.size());
    features.reserve(cells.size() * static_cast<std::size_t>(dims.channels));
    for (auto& [c, f] : cells) {
      require(coords.empty() || coords.back() != c, ErrorCode::Precondition,
              "duplicate grid coord " + to_string(c));
      require(f.size() == static_cast<std::size_t>(dims.channels), ErrorCode::ShapeFault,
              "feature vector length differs from channel count");
      coords.push_back(c);
      features.insert(features.end(), f.begin(), f.end());
    }
    return LatentGrid(dims, std::move(coords), std::move(features));
  }

  const GridDims& dims() const { return dims_; }
  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  std::size_t channels() const { return static_cast<std::size_t>(dims_.channels); }

  const CoordSet& coords() const { return coords_; }
  const std::vector<float>& feature_buffer() const { return features_; }
  const VoxelCoord& coord(std::size_t i) const { return coords_[i]; }

  std::span<const float> features(std::size_t i) const {
    return {features_.data() + i * channels(), channels()};
  }

  std::optional<std::size_t> find(const VoxelCoord& c) const {
    auto it = std::lower_bound(coords_.begin(), coords_.end(), c);
    if (it == coords_.end() || *it != c) return std::nullopt;
    return static_cast<std::size_t>(it - coords_.begin());
  }

  bool contains(const VoxelCoord& c) const { return find(c).has_value(); }

  VoxelMask occupancy_mask() const { return VoxelMask(dims_.resolution, coords_); }

  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;

 private:
  GridDims dims_{1, 1};
  CoordSet coords_;
  std::vector<float> features_;
};

}  // namespace voxedit
