#pragma once

// Small procedural assets with smooth latent features and ground-truth part
// labels, plus training of the four toy flow models on them.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "voxedit/error.hpp"
#include "voxedit/flow.hpp"
#include "voxedit/guidance.hpp"
#include "voxedit/inpaint.hpp"
#include "voxedit/mlp_field.hpp"
#include "voxedit/voxel.hpp"

namespace voxedit {

enum class ShapeKind { Sphere, Box, Dumbbell };

inline std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Box: return "box";
    case ShapeKind::Dumbbell: return "dumbbell";
  }
  return "?";
}

inline ShapeKind parse_shape(const std::string& s) {
  if (s == "sphere") return ShapeKind::Sphere;
  if (s == "box") return ShapeKind::Box;
  if (s == "dumbbell") return ShapeKind::Dumbbell;
  fail(ErrorCode::ConfigFault, "unknown shape '" + s + "'");
}

struct SyntheticAsset {
  LatentGrid grid;
  PartLabeling labels;
  std::string description;
};

/// Sphere radius as a fraction of the resolution (5 voxels at R=16).
inline constexpr double kSphereRadius = 5.0 / 16.0;

/// Occupancy is fixed by (shape, resolution); the seed only moves the feature phases.
///   sphere:   |c - R/2| <= 5R/16; parts: body 0, top cap (z >= 0.65 R) 1
///   box:      half extent R/4 around the center; parts: lower 0, upper 1
///   dumbbell: two balls of radius 3R/16 at x = R/2 -+ R/4 joined by a bar
///             of radius R/16; parts: x < R/2 is 0, else 1
inline SyntheticAsset make_synthetic_asset(ShapeKind shape, GridDims dims, std::uint64_t seed) {
  dims.validate();
  const double r = dims.resolution, h = r / 2.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<std::array<double, 3>> phases(static_cast<std::size_t>(dims.channels));
  for (auto& p : phases) p = {phase(rng), phase(rng), phase(rng)};

  const auto inside = [&](double x, double y, double z) -> int {
    const auto d2 = [](double a, double b, double c) { return a * a + b * b + c * c; };
    switch (shape) {
      case ShapeKind::Sphere: {
        const double rad = kSphereRadius * r;
        if (d2(x - h, y - h, z - h) > rad * rad) return -1;
        return z >= 0.65 * r ? 1 : 0;
      }
      case ShapeKind::Box:
        if (std::abs(x - h) > r / 4 || std::abs(y - h) > r / 4 || std::abs(z - h) > r / 4) return -1;
        return z >= h ? 1 : 0;
      case ShapeKind::Dumbbell: {
        const double ball = 3.0 * r / 16.0, bar = r / 16.0;
        const bool in = d2(x - (h - r / 4), y - h, z - h) <= ball * ball ||
                        d2(x - (h + r / 4), y - h, z - h) <= ball * ball ||
                        (std::abs(x - h) <= r / 4 && d2(0, y - h, z - h) <= bar * bar);
        if (!in) return -1;
        return x < h ? 0 : 1;
      }
    }
    return -1;
  };

  SyntheticAsset out;
  out.description = "a " + to_string(shape);
  std::vector<std::pair<VoxelCoord, std::vector<float>>> cells;
  int parts = 0;
  for (int x = 0; x < dims.resolution; ++x)
    for (int y = 0; y < dims.resolution; ++y)
      for (int z = 0; z < dims.resolution; ++z) {
        const int part = inside(x + 0.5, y + 0.5, z + 0.5);
        if (part < 0) continue;
        std::vector<float> f(static_cast<std::size_t>(dims.channels));
        const double u[3] = {(x + 0.5) / r, (y + 0.5) / r, (z + 0.5) / r};
        for (std::size_t c = 0; c < f.size(); ++c) {
          const double k = 1.0 + static_cast<double>(c % 3);
          f[c] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * k * u[0] + phases[c][0]) *
                                        std::cos(std::numbers::pi * u[1] + phases[c][1]) +
                                    0.25 * std::sin(2 * std::numbers::pi * u[2] + phases[c][2]) + 0.1 * part);
        }
        cells.push_back({{x, y, z}, std::move(f)});
        out.labels.labels[{x, y, z}] = part;
        parts = std::max(parts, part + 1);
      }
  out.labels.part_count = parts;
  out.grid = LatentGrid::from_cells(dims, std::move(cells));
  return out;
}

// ---------------------------------------------------------------------------

struct ModelTraining {
  int resolution = 16;
  int stage1_resolution = 4;
  int channels = 8;
  int assets_per_shape = 2;
  TrainParams params;
};

inline const char* const kModelFiles[4] = {"stage1_text.vfm", "stage1_image.vfm", "stage2_text.vfm",
                                           "stage2_image.vfm"};

/// Trains stage-1 (structure) and stage-2 (feature) fields, each with a text-
/// and an image-conditioned variant, on synthetic shapes. Text conditions are
/// the shape one-hots; image conditions hash a depth render of the asset.
inline EditModels train_toy_models(const ModelTraining& t, std::uint64_t seed) {
  require(t.stage1_resolution >= 1 && t.resolution % t.stage1_resolution == 0, ErrorCode::BadFactor,
          "stage-1 resolution must divide the resolution");
  const int factor = t.resolution / t.stage1_resolution;
  std::vector<FlowState> s1, s2;
  std::vector<Condition> text, image;
  std::uint64_t asset_seed = seed;
  for (auto shape : {ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Dumbbell})
    for (int i = 0; i < t.assets_per_shape; ++i) {
      const auto a = make_synthetic_asset(shape, {t.resolution, t.channels}, splitmix64(asset_seed));
      s1.push_back(encode_structure(a.grid.coords(), t.resolution, factor));
      s2.push_back(FlowState::from_grid(a.grid));
      text.push_back(text_condition(a.description));
      const ViewDescriptor front{0, 0.0, 0.0, {}};
      image.push_back(image_condition(render_depth_pgm(front, VoxelMask(t.resolution, a.grid.coords()))));
    }
  std::uint64_t s = seed ^ 0x5eedULL;
  EditModels m;
  m.structure.text = train_toy_flow(s1, text, t.params, splitmix64(s));
  m.structure.image = train_toy_flow(s1, image, t.params, splitmix64(s));
  m.features.text = train_toy_flow(s2, text, t.params, splitmix64(s));
  m.features.image = train_toy_flow(s2, image, t.params, splitmix64(s));
  return m;
}

inline void save_models(const EditModels& m, const std::filesystem::path& dir) {
  const VelocityField* fields[4] = {m.structure.text.get(), m.structure.image.get(), m.features.text.get(),
                                    m.features.image.get()};
  for (int i = 0; i < 4; ++i) {
    if (!fields[i]) continue;
    const auto* mlp = dynamic_cast<const MlpField*>(fields[i]);
    require(mlp != nullptr, ErrorCode::Precondition, "only trained fields can be saved");
    save_field(*mlp, dir / kModelFiles[i]);
  }
}

/// Text fields are required; image fields are optional.
inline EditModels load_models(const std::filesystem::path& dir) {
  std::shared_ptr<const VelocityField> f[4];
  for (int i = 0; i < 4; ++i) {
    const auto path = dir / kModelFiles[i];
    if (i % 2 == 1 && !std::filesystem::exists(path)) continue;
    f[i] = load_field(path);
  }
  return {{f[0], f[1]}, {f[2], f[3]}};
}

}  // namespace voxedit
