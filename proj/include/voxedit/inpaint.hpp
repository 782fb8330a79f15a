#pragma once

// Inversion-based latent inpainting.
//
// An edit inverts the original latents to noise, recording the trajectory,
// then denoises again under the new conditions. After every step each voxel
// is pulled back toward the recorded trajectory:
//
//   x <- w * x_denoised + (1 - w) * trajectory[i + 1]
//
// with w = 1 inside the edit region, 0 far from it and a linear ramp in a band
// of width B around it. Steps alternate between the text- and image-
// conditioned fields when both are present.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "voxedit/edit_region.hpp"
#include "voxedit/error.hpp"
#include "voxedit/flow.hpp"
#include "voxedit/geometry.hpp"
#include "voxedit/voxel.hpp"

namespace voxedit {

enum class InterleaveOrder { TextFirst, ImageFirst };
enum class FieldRole { Text, Image };

inline std::string to_string(InterleaveOrder o) {
  return o == InterleaveOrder::TextFirst ? "text-first" : "image-first";
}

inline InterleaveOrder parse_interleave_order(const std::string& name) {
  if (name == "text-first" || name == "text") return InterleaveOrder::TextFirst;
  if (name == "image-first" || name == "image") return InterleaveOrder::ImageFirst;
  fail(ErrorCode::ConfigFault, "unknown interleave order '" + name + "'");
}

/// Which field drives denoising step `step` (one step per field, strictly alternating).
constexpr FieldRole interleave_select(std::size_t step, InterleaveOrder order) {
  const bool even = step % 2 == 0;
  return (even == (order == InterleaveOrder::TextFirst)) ? FieldRole::Text : FieldRole::Image;
}

struct SoftMaskParams {
  double bandwidth = 3.0;  // voxels; 0 gives a hard mask

  void validate() const {
    require(std::isfinite(bandwidth) && bandwidth >= 0.0, ErrorCode::Precondition,
            "soft mask bandwidth must be finite and >= 0");
  }
};

/// w = 1 on the edit region; for other voxels at distance d from the nearest
/// edit voxel, w = max(0, 1 - d / B).
inline SoftMask soft_weights(const VoxelMask& r_edit, const SoftMaskParams& params) {
  params.validate();
  SoftMask out = SoftMask::from_hard(r_edit);
  const double b = params.bandwidth;
  if (b <= 0.0 || r_edit.empty()) return out;

  const int reach = static_cast<int>(std::ceil(b));
  std::vector<VoxelCoord> offsets;
  for (int dx = -reach; dx <= reach; ++dx)
    for (int dy = -reach; dy <= reach; ++dy)
      for (int dz = -reach; dz <= reach; ++dz)
        if (double(dx * dx + dy * dy + dz * dz) < b * b) offsets.push_back({dx, dy, dz});

  const GridDims dims = r_edit.dims();
  std::vector<std::int64_t> best(dims.cell_count(), -1);
  for (const auto& e : r_edit.members())
    for (const auto& o : offsets) {
      const VoxelCoord n{e.x + o.x, e.y + o.y, e.z + o.z};
      if (!dims.contains(n) || r_edit.contains(n)) continue;
      auto& slot = best[dims.index_of(n)];
      const auto d2 = squared_distance(e, n);
      if (slot < 0 || d2 < slot) slot = d2;
    }
  for (std::size_t i = 0; i < best.size(); ++i)
    if (best[i] >= 0) {
      const double w = 1.0 - std::sqrt(static_cast<double>(best[i])) / b;
      if (w > 0.0) out.set(dims.coord_at(i), w);
    }
  return out;
}

/// Text field plus optional image field; image == nullptr means single-field.
struct FieldPair {
  const VelocityField* text = nullptr;
  const VelocityField* image = nullptr;
};

struct ConditionPair {
  Condition text;
  Condition image;
};

/// Called after every repaint step with the weights, the raw denoised state,
/// the matching trajectory state and the blended result.
using RepaintObserver = std::function<void(std::size_t step, std::span<const double> weights,
                                           const FlowState& denoised, const FlowState& inverted,
                                           const FlowState& blended)>;

/// Masked denoising against a recorded trajectory, one weight per state row.
inline FlowState repaint_denoise(const Trajectory& trajectory, std::span<const double> weights,
                                 const FieldPair& fields, const ConditionPair& conds,
                                 InterleaveOrder order, const CfgParams& cfg, Stepper stepper,
                                 const RepaintObserver& observer = {}) {
  require(fields.text != nullptr, ErrorCode::Precondition, "repaint needs a text field");
  trajectory.schedule.validate();
  require(trajectory.states.size() == trajectory.schedule.times.size(), ErrorCode::ShapeFault,
          "trajectory length does not match its schedule");
  const FlowState& noise = trajectory.noise();
  require(weights.size() == noise.rows(), ErrorCode::ShapeFault, "one mask weight per voxel required");
  for (const auto& s : trajectory.states)
    require(s.same_shape(noise), ErrorCode::ShapeFault, "trajectory states differ in shape");
  fields.text->check_domain(noise);
  if (fields.image) fields.image->check_domain(noise);

  const std::size_t c = noise.channels();
  FlowState x = noise;
  for (std::size_t i = 0; i < trajectory.schedule.steps(); ++i) {
    const bool use_image = fields.image && interleave_select(i, order) == FieldRole::Image;
    const VelocityField& field = use_image ? *fields.image : *fields.text;
    const Condition& cond = use_image ? conds.image : conds.text;
    FlowState denoised = detail::tag_step(static_cast<long>(i), [&] {
      return take_step(stepper, x, trajectory.schedule.times[i], trajectory.schedule.times[i + 1],
                       guided(field, cond, cfg));
    });
    const FlowState& inverted = trajectory.states[i + 1];
    x = denoised;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double w = weights[r];
      if (w == 1.0) continue;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t k = r * c + ch;
        x.values[k] = w == 0.0 ? inverted.values[k] : w * denoised.values[k] + (1.0 - w) * inverted.values[k];
      }
    }
    if (observer) observer(i, weights, denoised, inverted, x);
  }
  return x;
}

/// Gathers per-row weights from a soft mask over the trajectory's support.
inline std::vector<double> gather_weights(const SoftMask& mask, const Support& support) {
  require(mask.resolution() == support.dims.resolution, ErrorCode::ShapeFault,
          "mask resolution differs from the latent grid");
  std::vector<double> w;
  w.reserve(support.coords.size());
  for (const auto& c : support.coords) w.push_back(mask.weight(c));
  return w;
}

inline FlowState repaint_denoise(const Trajectory& trajectory, const SoftMask& mask, const FieldPair& fields,
                                 const ConditionPair& conds, InterleaveOrder order, const CfgParams& cfg,
                                 Stepper stepper, const RepaintObserver& observer = {}) {
  const auto w = gather_weights(mask, *trajectory.noise().support);
  return repaint_denoise(trajectory, w, fields, conds, order, cfg, stepper, observer);
}

// ---------------------------------------------------------------------------
// Structure codec: fine occupancy at R <-> dense coarse grid at R/f whose
// f^3 channels hold the 0/1 occupancy of each cell's fine block.

inline std::shared_ptr<const Support> dense_support(int resolution, int channels) {
  const GridDims dims{resolution, channels};
  CoordSet coords(dims.cell_count());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = dims.coord_at(i);
  return std::make_shared<const Support>(Support{dims, std::move(coords)});
}

inline FlowState encode_structure(const CoordSet& occupancy, int fine_resolution, int factor) {
  require(factor >= 1 && fine_resolution % factor == 0, ErrorCode::BadFactor,
          "structure factor must divide the fine resolution");
  const int coarse = fine_resolution / factor;
  FlowState s = FlowState::zeros(dense_support(coarse, factor * factor * factor));
  const GridDims cd{coarse, 1};
  for (const auto& v : occupancy) {
    const std::size_t cell = cd.index_of({v.x / factor, v.y / factor, v.z / factor});
    const int ch = ((v.x % factor) * factor + (v.y % factor)) * factor + (v.z % factor);
    s.row(cell)[static_cast<std::size_t>(ch)] = 1.0;
  }
  return s;
}

inline CoordSet decode_structure(const FlowState& s, int factor) {
  require(s.channels() == static_cast<std::size_t>(factor * factor * factor), ErrorCode::ShapeFault,
          "structure latent channel count does not match factor");
  CoordSet out;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto& cell = s.support->coords[r];
    for (int ch = 0; ch < factor * factor * factor; ++ch)
      if (s.row(r)[static_cast<std::size_t>(ch)] > 0.5)
        out.push_back({cell.x * factor + ch / (factor * factor), cell.y * factor + (ch / factor) % factor,
                       cell.z * factor + ch % factor});
  }
  return make_coord_set(std::move(out));
}

// ---------------------------------------------------------------------------
// Two-stage editing.

struct StageModels {
  std::shared_ptr<const VelocityField> text;
  std::shared_ptr<const VelocityField> image;
};

struct EditModels {
  StageModels structure;  // stage 1: dense coarse occupancy latents
  StageModels features;   // stage 2: sparse per-voxel features
};

struct EditPlan {
  EditType edit_type = EditType::Modification;
  VoxelMask r_edit{1};         // fine grid
  VoxelMask r_edit_stage1{1};  // downscale_mask(r_edit, factor, rho)
  Condition cond_original = Condition::one_hot(0);
  Condition cond_text_s1 = Condition::one_hot(0);
  Condition cond_text_s2 = Condition::one_hot(0);
  std::optional<Condition> cond_image;
  std::size_t steps_stage1 = 50;
  std::size_t steps_stage2 = 50;
  CfgParams cfg_stage1;
  CfgParams cfg_stage2;
  SoftMaskParams soft;
  InterleaveOrder order = InterleaveOrder::TextFirst;
  double rho = 0.5;
  Stepper stepper = Stepper::RfSolver;
  std::uint64_t seed = 0;

  int factor() const {
    require(r_edit_stage1.resolution() >= 1 && r_edit.resolution() % r_edit_stage1.resolution() == 0,
            ErrorCode::BadFactor, "stage-1 mask resolution must divide the stage-2 resolution");
    return r_edit.resolution() / r_edit_stage1.resolution();
  }

  /// Fills the stage-1 mask from the stage-2 mask.
  void derive_stage1(int stage1_resolution) {
    require(stage1_resolution >= 1 && r_edit.resolution() % stage1_resolution == 0, ErrorCode::BadFactor,
            "stage-1 resolution must divide the stage-2 resolution");
    r_edit_stage1 = downscale_mask(r_edit, r_edit.resolution() / stage1_resolution, rho);
  }

  void validate() const {
    require(r_edit_stage1 == downscale_mask(r_edit, factor(), rho), ErrorCode::Precondition,
            "stage-1 mask is not the downscaled stage-2 mask");
    require(steps_stage1 >= 1 && steps_stage2 >= 1, ErrorCode::Precondition, "schedules need >= 1 step");
    soft.validate();
    cond_original.validate();
    cond_text_s1.validate();
    cond_text_s2.validate();
    if (cond_image) cond_image->validate();
  }
};

namespace detail {

inline FieldPair pick_fields(const StageModels& m, const EditPlan& plan) {
  require(m.text != nullptr, ErrorCode::Precondition, "stage models need a text field");
  return {m.text.get(), plan.cond_image && m.image ? m.image.get() : nullptr};
}

inline ConditionPair pick_conds(const Condition& text, const EditPlan& plan) {
  return {text, plan.cond_image ? *plan.cond_image : text};
}

/// Trajectory over `support` reusing rows of `traj` where the voxel exists
/// there; other rows start from seeded Gaussian noise and are zero later on.
inline Trajectory extend_trajectory(const Trajectory& traj, std::shared_ptr<const Support> support,
                                    std::uint64_t seed) {
  const auto& old = *traj.noise().support;
  const std::size_t c = static_cast<std::size_t>(old.dims.channels);
  Trajectory out{traj.schedule, {}};
  out.states.assign(traj.states.size(), FlowState::zeros(support));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t r = 0; r < support->coords.size(); ++r) {
    const auto it = std::lower_bound(old.coords.begin(), old.coords.end(), support->coords[r]);
    if (it != old.coords.end() && *it == support->coords[r]) {
      const auto src = static_cast<std::size_t>(it - old.coords.begin());
      for (std::size_t i = 0; i < traj.states.size(); ++i)
        std::copy_n(traj.states[i].values.begin() + static_cast<std::ptrdiff_t>(src * c), c,
                    out.states[i].values.begin() + static_cast<std::ptrdiff_t>(r * c));
    } else {
      for (std::size_t ch = 0; ch < c; ++ch) out.states[0].values[r * c + ch] = gauss(rng);
    }
  }
  return out;
}

}  // namespace detail

/// Structure edit followed by feature edit, both by masked repainting.
/// Voxels outside the edit region keep their occupancy.
inline LatentGrid edit_modification_or_addition(const LatentGrid& asset, const EditPlan& plan,
                                                const EditModels& models) {
  plan.validate();
  require(asset.dims().resolution == plan.r_edit.resolution(), ErrorCode::ShapeFault,
          "plan mask resolution differs from the asset");
  const int factor = plan.factor();
  const auto schedule2 = TimeSchedule::uniform(plan.steps_stage2);
  const auto schedule1 = TimeSchedule::uniform(plan.steps_stage1);

  // Invert both stages under the original description, CFG 0.
  const Trajectory traj2 = invert(FlowState::from_grid(asset), *models.features.text, plan.cond_original,
                                  schedule2, plan.stepper);
  const FlowState structure = encode_structure(asset.coords(), asset.dims().resolution, factor);
  const Trajectory traj1 = invert(structure, *models.structure.text, plan.cond_original, schedule1, plan.stepper);

  // Stage 1: new occupancy inside the coarse edit mask.
  const FlowState new_structure =
      repaint_denoise(traj1, SoftMask::from_hard(plan.r_edit_stage1), detail::pick_fields(models.structure, plan),
                      detail::pick_conds(plan.cond_text_s1, plan), plan.order, plan.cfg_stage1, plan.stepper);
  CoordSet occupancy;
  for (const auto& v : decode_structure(new_structure, factor))
    if (plan.r_edit.contains(v)) occupancy.push_back(v);
  for (const auto& v : asset.coords())
    if (!plan.r_edit.contains(v)) occupancy.push_back(v);
  occupancy = make_coord_set(std::move(occupancy));
  require(!occupancy.empty(), ErrorCode::EmptyAsset, "edit produced an empty structure");

  // Stage 2: features on the new occupancy; new voxels are fully generated.
  auto support = std::make_shared<const Support>(Support{asset.dims(), occupancy});
  const Trajectory traj = detail::extend_trajectory(traj2, support, plan.seed);
  const SoftMask soft = soft_weights(plan.r_edit, plan.soft);
  std::vector<double> weights;
  for (const auto& v : occupancy) weights.push_back(asset.contains(v) ? soft.weight(v) : 1.0);
  const FlowState features =
      repaint_denoise(traj, weights, detail::pick_fields(models.features, plan),
                      detail::pick_conds(plan.cond_text_s2, plan), plan.order, plan.cfg_stage2, plan.stepper);
  return features.to_grid();
}

/// Removes r_edit and smooths the surviving voxels within the band around it.
/// Stage 1 is skipped.
inline LatentGrid edit_deletion(const LatentGrid& asset, const VoxelMask& r_edit, const EditPlan& plan,
                                const EditModels& models) {
  require(r_edit.resolution() == asset.dims().resolution, ErrorCode::ShapeFault,
          "mask resolution differs from the asset");
  for (const auto& v : r_edit.members())
    require(asset.contains(v), ErrorCode::Precondition, "deletion mask reaches outside the asset");
  if (r_edit.empty()) return asset;

  std::vector<std::pair<VoxelCoord, std::vector<float>>> cells;
  for (std::size_t i = 0; i < asset.size(); ++i)
    if (!r_edit.contains(asset.coord(i)))
      cells.push_back({asset.coord(i), std::vector<float>(asset.features(i).begin(), asset.features(i).end())});
  require(!cells.empty(), ErrorCode::EmptyAsset, "deletion removes every voxel");
  const LatentGrid survivors = LatentGrid::from_cells(asset.dims(), std::move(cells));

  const SoftMask soft = soft_weights(r_edit, plan.soft);
  const FlowState data = FlowState::from_grid(survivors);
  const auto weights = gather_weights(soft, *data.support);
  if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; })) return survivors;

  const Trajectory traj = invert(data, *models.features.text, plan.cond_original,
                                 TimeSchedule::uniform(plan.steps_stage2), plan.stepper);
  return repaint_denoise(traj, weights, detail::pick_fields(models.features, plan),
                         detail::pick_conds(plan.cond_text_s2, plan), plan.order, plan.cfg_stage2, plan.stepper)
      .to_grid();
}

/// Dispatches on the plan's edit type.
inline LatentGrid apply_edit(const LatentGrid& asset, const EditPlan& plan, const EditModels& models) {
  if (plan.edit_type == EditType::Deletion) return edit_deletion(asset, plan.r_edit, plan, models);
  return edit_modification_or_addition(asset, plan, models);
}

// ---------------------------------------------------------------------------

struct PreservationReport {
  std::optional<double> chamfer_pres;  // voxel-center Chamfer; empty if exactly one side has no voxels
  double feature_mse_pres = 0.0;       // over voxels preserved and present in both grids
  std::size_t changed_voxel_count = 0; // occupancy changes plus feature changes, whole grid
  std::size_t compared_voxels = 0;
};

inline PreservationReport preservation_report(const LatentGrid& original, const LatentGrid& edited,
                                              const VoxelMask& r_pres) {
  require(original.dims() == edited.dims(), ErrorCode::ShapeFault, "report needs grids of equal dims");
  require(r_pres.resolution() == original.dims().resolution, ErrorCode::ShapeFault,
          "preserved mask resolution differs from the grids");
  PreservationReport rep;
  CoordSet a, b;
  for (const auto& v : original.coords())
    if (r_pres.contains(v)) a.push_back(v);
  for (const auto& v : edited.coords())
    if (r_pres.contains(v)) b.push_back(v);
  if (a.empty() && b.empty())
    rep.chamfer_pres = 0.0;
  else if (!a.empty() && !b.empty())
    rep.chamfer_pres = chamfer_distance(a, b);

  double sq = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const auto j = edited.find(original.coord(i));
    if (!j) {
      ++rep.changed_voxel_count;
      continue;
    }
    const auto fa = original.features(i), fb = edited.features(*j);
    if (std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(float)) != 0) ++rep.changed_voxel_count;
    if (!r_pres.contains(original.coord(i))) continue;
    ++rep.compared_voxels;
    for (std::size_t ch = 0; ch < fa.size(); ++ch) {
      const double d = static_cast<double>(fa[ch]) - static_cast<double>(fb[ch]);
      sq += d * d;
    }
  }
  for (const auto& v : edited.coords())
    if (!original.contains(v)) ++rep.changed_voxel_count;
  if (rep.compared_voxels > 0)
    rep.feature_mse_pres = sq / (static_cast<double>(rep.compared_voxels) * static_cast<double>(original.channels()));
  return rep;
}

}  // namespace voxedit
