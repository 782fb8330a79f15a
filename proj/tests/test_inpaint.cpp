#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "voxedit/inpaint.hpp"
#include "voxedit/mlp_field.hpp"

using namespace voxedit;
using voxedit::testing::bit_equal;

namespace {

// Pulls every channel toward a target read off the condition:
// a = e0 - e1 + 0.5 e2. Near-singular at t=0 like a point-mass flow.
double target_of(const Condition& c) { return c.embedding[0] - c.embedding[1] + 0.5 * c.embedding[2]; }

std::shared_ptr<const VelocityField> pull_field() {
  return std::make_shared<PointwiseField>(
      [](double x, double t, const Condition& c) { return (x - target_of(c)) / (t + 0.05); });
}

const Condition kOriginal = Condition::one_hot(3);         // a = 0
const Condition kFill = Condition::one_hot(0);             // a = 1
const Condition kClear = Condition::one_hot(1);            // a = -1
const Condition kImage = Condition::one_hot(2, Condition::Kind::Image);  // a = 0.5

LatentGrid random_grid(std::mt19937_64& rng, int resolution, int channels, std::size_t count) {
  auto coords = voxedit::testing::random_coords(rng, resolution, count);
  std::normal_distribution<float> g(0.0f, 0.3f);
  std::vector<float> f(coords.size() * static_cast<std::size_t>(channels));
  for (auto& v : f) v = g(rng);
  return LatentGrid({resolution, channels}, std::move(coords), std::move(f));
}

LatentGrid ball(int resolution, double radius, int channels) {
  std::vector<std::pair<VoxelCoord, std::vector<float>>> cells;
  const double c = resolution / 2.0;
  for (int x = 0; x < resolution; ++x)
    for (int y = 0; y < resolution; ++y)
      for (int z = 0; z < resolution; ++z) {
        const double dx = x + 0.5 - c, dy = y + 0.5 - c, dz = z + 0.5 - c;
        if (dx * dx + dy * dy + dz * dz > radius * radius) continue;
        std::vector<float> f(static_cast<std::size_t>(channels));
        for (int ch = 0; ch < channels; ++ch) f[ch] = static_cast<float>(0.1 * (x + ch) - 0.05 * y + 0.02 * z);
        cells.push_back({{x, y, z}, f});
      }
  return LatentGrid::from_cells({resolution, channels}, std::move(cells));
}

Trajectory invert_grid(const LatentGrid& g, const VelocityField& f, std::size_t steps) {
  return invert(FlowState::from_grid(g), f, kOriginal, TimeSchedule::uniform(steps), Stepper::RfSolver);
}

EditPlan make_plan(EditType type, VoxelMask r_edit, int stage1_resolution, double bandwidth) {
  EditPlan plan;
  plan.edit_type = type;
  plan.r_edit = std::move(r_edit);
  plan.derive_stage1(stage1_resolution);
  plan.cond_original = kOriginal;
  plan.cond_text_s1 = kFill;
  plan.cond_text_s2 = kFill;
  plan.cond_image = kImage;
  plan.steps_stage1 = 8;
  plan.steps_stage2 = 8;
  plan.soft.bandwidth = bandwidth;
  plan.seed = 11;
  return plan;
}

EditModels pull_models() {
  const auto f = pull_field();
  return {{f, f}, {f, f}};
}

VoxelMask half_cube(int resolution) {
  VoxelMask m(resolution);
  const GridDims d{resolution, 1};
  for (std::size_t i = 0; i < d.cell_count(); ++i)
    if (d.coord_at(i).x >= resolution / 2) m.insert(d.coord_at(i));
  return m;
}

}  // namespace

TEST(InterleaveSelect, Alternates) {
  EXPECT_EQ(interleave_select(0, InterleaveOrder::TextFirst), FieldRole::Text);
  EXPECT_EQ(interleave_select(1, InterleaveOrder::TextFirst), FieldRole::Image);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_NE(interleave_select(i, InterleaveOrder::TextFirst), interleave_select(i + 1, InterleaveOrder::TextFirst));
    EXPECT_NE(interleave_select(i, InterleaveOrder::TextFirst), interleave_select(i, InterleaveOrder::ImageFirst));
  }
}

TEST(SoftWeights, RampExamples) {
  VoxelMask m(8);
  m.insert({0, 0, 0});
  const auto w = soft_weights(m, {3.0});
  EXPECT_EQ(w.weight({0, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(w.weight({1, 0, 0}), 2.0 / 3.0);
  EXPECT_EQ(w.weight({3, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(w.weight({1, 1, 0}), 1.0 - std::sqrt(2.0) / 3.0);
}

TEST(SoftWeights, ZeroBandwidthIsHard) {
  std::mt19937_64 rng(3);
  const auto m = voxedit::testing::random_mask(rng, 6, 0.2);
  const auto w = soft_weights(m, {0.0});
  EXPECT_TRUE(w.is_hard());
  EXPECT_EQ(w.support(), m.members());
}

TEST(SoftWeights, MatchesBruteForce) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = voxedit::testing::random_mask(rng, 8, 0.03);
    const double b = 0.5 + 0.25 * trial;
    const auto w = soft_weights(m, {b});
    const GridDims d{8, 1};
    for (std::size_t i = 0; i < d.cell_count(); ++i) {
      const auto v = d.coord_at(i);
      double want = 0.0;
      if (m.contains(v)) {
        want = 1.0;
      } else if (!m.empty()) {
        double best = 1e9;
        for (const auto& e : m.members()) best = std::min(best, std::sqrt(double(squared_distance(v, e))));
        want = std::max(0.0, 1.0 - best / b);
      }
      ASSERT_NEAR(w.weight(v), want, 1e-12) << to_string(v);
      ASSERT_GE(w.weight(v), 0.0);
      ASSERT_LE(w.weight(v), 1.0);
    }
  }
}

TEST(SoftWeights, RejectsBadBandwidth) {
  EXPECT_THROW(soft_weights(VoxelMask(4), {-1.0}), Error);
  EXPECT_THROW(soft_weights(VoxelMask(4), {std::nan("")}), Error);
}

TEST(RepaintDenoise, EmptyMaskReturnsOriginal) {
  std::mt19937_64 rng(1);
  const auto g = random_grid(rng, 8, 4, 40);
  const auto f = pull_field();
  const auto traj = invert_grid(g, *f, 10);
  const auto out = repaint_denoise(traj, SoftMask(8), {f.get(), f.get()}, {kFill, kImage},
                                   InterleaveOrder::TextFirst, {}, Stepper::RfSolver);
  EXPECT_TRUE(bit_equal(out.to_grid(), g));
}

TEST(RepaintDenoise, FullMaskIsPlainDenoise) {
  std::mt19937_64 rng(2);
  const auto g = random_grid(rng, 8, 4, 40);
  const auto f = pull_field();
  const auto traj = invert_grid(g, *f, 10);
  for (auto stepper : {Stepper::Euler, Stepper::RfSolver}) {
    const CfgParams cfg{1.5};
    const auto out = repaint_denoise(traj, SoftMask::from_hard(VoxelMask::full(8)), {f.get(), nullptr},
                                     {kFill, kFill}, InterleaveOrder::TextFirst, cfg, stepper);
    const auto want = denoise(traj.noise(), *f, kFill, traj.schedule, cfg, stepper);
    EXPECT_EQ(out.values, want.values);
  }
}

TEST(RepaintDenoise, EqualFieldsArePolicyInvariant) {
  std::mt19937_64 rng(3);
  const auto g = random_grid(rng, 8, 2, 30);
  const auto f = pull_field();
  const auto traj = invert_grid(g, *f, 9);
  const auto mask = soft_weights(voxedit::testing::random_mask(rng, 8, 0.3), {2.0});
  const auto single = repaint_denoise(traj, mask, {f.get(), nullptr}, {kFill, kFill}, InterleaveOrder::TextFirst,
                                      {}, Stepper::RfSolver);
  for (auto order : {InterleaveOrder::TextFirst, InterleaveOrder::ImageFirst}) {
    const auto dual = repaint_denoise(traj, mask, {f.get(), f.get()}, {kFill, kFill}, order, {}, Stepper::RfSolver);
    EXPECT_EQ(dual.values, single.values);
  }
}

TEST(RepaintDenoise, HardMaskKeepsPreservedRowsExact) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_grid(rng, 8, 3, 60);
    const auto f = pull_field();
    const auto traj = invert_grid(g, *f, 6);
    const auto m = voxedit::testing::random_mask(rng, 8, 0.5);
    const auto out = repaint_denoise(traj, SoftMask::from_hard(m), {f.get(), f.get()}, {kFill, kImage},
                                     InterleaveOrder::TextFirst, {}, Stepper::RfSolver)
                         .to_grid();
    std::size_t changed = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool same = bit_equal(out.features(i), g.features(i));
      if (!m.contains(g.coord(i))) { EXPECT_TRUE(same); }
      changed += same ? 0 : 1;
    }
    EXPECT_GT(changed, 0u);
  }
}

TEST(RepaintDenoise, BlendIsConvexAtEveryStep) {
  std::mt19937_64 rng(5);
  const auto g = random_grid(rng, 8, 4, 50);
  const auto f = pull_field();
  const auto traj = invert_grid(g, *f, 12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(g.size());
  for (auto& x : w) x = u(rng);
  w[0] = 0.0;
  w[1] = 1.0;
  std::size_t checked = 0;
  repaint_denoise(traj, w, {f.get(), f.get()}, {kFill, kImage}, InterleaveOrder::ImageFirst, {}, Stepper::RfSolver,
                  [&](std::size_t, std::span<const double> wt, const FlowState& d, const FlowState& inv,
                      const FlowState& out) {
                    for (std::size_t r = 0; r < out.rows(); ++r)
                      for (std::size_t c = 0; c < out.channels(); ++c) {
                        const double lo = std::min(d.row(r)[c], inv.row(r)[c]);
                        const double hi = std::max(d.row(r)[c], inv.row(r)[c]);
                        const double tol = 1e-12 * std::max(1.0, std::abs(hi));
                        EXPECT_GE(out.row(r)[c], lo - tol);
                        EXPECT_LE(out.row(r)[c], hi + tol);
                        if (wt[r] == 0.0) { EXPECT_EQ(out.row(r)[c], inv.row(r)[c]); }
                        if (wt[r] == 1.0) { EXPECT_EQ(out.row(r)[c], d.row(r)[c]); }
                        ++checked;
                      }
                  });
  EXPECT_EQ(checked, 12u * g.size() * 4u);
}

TEST(RepaintDenoise, InterleaveAlternatesFields) {
  std::mt19937_64 rng(6);
  const auto g = random_grid(rng, 4, 1, 5);
  const auto base = pull_field();
  CountingField text(base), image(base);
  const auto traj = invert_grid(g, *base, 10);
  repaint_denoise(traj, SoftMask::from_hard(VoxelMask::full(4)), {&text, &image}, {kFill, kImage},
                  InterleaveOrder::TextFirst, {}, Stepper::Euler);
  EXPECT_EQ(text.conditional_calls(), 5);
  EXPECT_EQ(image.conditional_calls(), 5);
}

TEST(RepaintDenoise, ShapeFaults) {
  std::mt19937_64 rng(7);
  const auto g = random_grid(rng, 8, 2, 10);
  const auto f = pull_field();
  const auto traj = invert_grid(g, *f, 4);
  try {
    repaint_denoise(traj, SoftMask(4), {f.get(), nullptr}, {kFill, kFill}, InterleaveOrder::TextFirst, {},
                    Stepper::Euler);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeFault);
  }
  std::vector<double> short_weights(3, 0.5);
  EXPECT_THROW(repaint_denoise(traj, short_weights, {f.get(), nullptr}, {kFill, kFill}, InterleaveOrder::TextFirst,
                               {}, Stepper::Euler),
               Error);
}

TEST(RepaintDenoise, NumericFaultCarriesStep) {
  std::mt19937_64 rng(8);
  const auto g = random_grid(rng, 4, 1, 5);
  const auto f = pull_field();
  const auto traj = invert_grid(g, *f, 10);
  PointwiseField bad([](double x, double t, const Condition&) { return t < 0.55 ? std::nan("") : x; });
  try {
    repaint_denoise(traj, SoftMask::from_hard(VoxelMask::full(4)), {&bad, nullptr}, {kFill, kFill},
                    InterleaveOrder::TextFirst, {}, Stepper::Euler);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 5);
  }
}

TEST(RepaintDenoise, TrainedFieldHalfCube) {
  std::mt19937_64 rng(9);
  std::vector<FlowState> data;
  std::vector<Condition> conds;
  for (int i = 0; i < 4; ++i) {
    data.push_back(FlowState::from_grid(random_grid(rng, 8, 4, 40)));
    conds.push_back(Condition::one_hot(static_cast<std::size_t>(i % 2)));
  }
  TrainParams tp;
  tp.steps = 200;
  tp.hidden = 16;
  const auto net = train_toy_flow(data, conds, tp, 21);
  const auto g = random_grid(rng, 8, 4, 80);
  const auto traj = invert(FlowState::from_grid(g), *net, conds[0], TimeSchedule::uniform(10), Stepper::RfSolver);
  const auto mask = half_cube(8);
  const auto out = repaint_denoise(traj, SoftMask::from_hard(mask), {net.get(), nullptr}, {conds[1], conds[1]},
                                   InterleaveOrder::TextFirst, {2.0}, Stepper::RfSolver)
                       .to_grid();
  std::size_t edited = 0, edited_changed = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const bool same = bit_equal(out.features(i), g.features(i));
    if (mask.contains(g.coord(i))) {
      ++edited;
      edited_changed += same ? 0 : 1;
    } else {
      EXPECT_TRUE(same);
    }
  }
  ASSERT_GT(edited, 0u);
  EXPECT_EQ(edited_changed, edited);
}

TEST(StructureCodec, RoundTrip) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto occ = voxedit::testing::random_coords(rng, 16, 1 + rng() % 300);
    const auto s = encode_structure(occ, 16, 4);
    EXPECT_EQ(s.rows(), 64u);
    EXPECT_EQ(s.channels(), 64u);
    EXPECT_EQ(decode_structure(s, 4), occ);
  }
}

TEST(StructureCodec, ChannelLayout) {
  const auto s = encode_structure({{5, 2, 7}}, 8, 2);
  // Cell (2,1,3), in-block offset (1,0,1) -> channel (1*2+0)*2+1 = 5.
  const std::size_t row = GridDims{4, 1}.index_of({2, 1, 3});
  for (std::size_t r = 0; r < s.rows(); ++r)
    for (std::size_t c = 0; c < 8; ++c) { EXPECT_EQ(s.row(r)[c], (r == row && c == 5) ? 1.0 : 0.0); }
}

TEST(StructureCodec, ThresholdIsStrict) {
  auto s = encode_structure({}, 4, 2);
  s.row(0)[0] = 0.5;
  s.row(1)[0] = 0.5000001;
  EXPECT_EQ(decode_structure(s, 2), (CoordSet{{0, 0, 2}}));
  EXPECT_THROW(encode_structure({}, 10, 4), Error);
}

TEST(EditPlan, Stage1MaskMustMatch) {
  auto plan = make_plan(EditType::Modification, half_cube(16), 4, 0.0);
  EXPECT_NO_THROW(plan.validate());
  plan.r_edit_stage1.erase({3, 0, 0});
  try {
    plan.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Precondition);
  }
}

TEST(EditModification, EmptyMaskIsIdentity) {
  const auto g = ball(16, 5.0, 4);
  const auto plan = make_plan(EditType::Modification, VoxelMask(16), 4, 3.0);
  const auto out = edit_modification_or_addition(g, plan, pull_models());
  EXPECT_TRUE(bit_equal(out, g));
}

TEST(EditModification, HardMaskPreservesOutside) {
  const auto g = ball(16, 5.0, 4);
  // Edit the top cap: every voxel with z >= 8 plus empty cells above it.
  VoxelMask r_edit(16);
  const GridDims d{16, 1};
  for (std::size_t i = 0; i < d.cell_count(); ++i)
    if (d.coord_at(i).z >= 8) r_edit.insert(d.coord_at(i));
  auto plan = make_plan(EditType::Modification, r_edit, 4, 0.0);
  plan.cond_text_s1 = kClear;
  plan.cond_image.reset();
  const auto out = edit_modification_or_addition(g, plan, pull_models());

  const auto r_pres = preserved_mask(r_edit);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (r_edit.contains(g.coord(i))) continue;
    const auto j = out.find(g.coord(i));
    ASSERT_TRUE(j.has_value());
    EXPECT_TRUE(bit_equal(out.features(*j), g.features(i)));
  }
  for (const auto& v : out.coords())
    if (!g.contains(v)) { EXPECT_TRUE(r_edit.contains(v)); }
  const auto rep = preservation_report(g, out, r_pres);
  EXPECT_EQ(rep.feature_mse_pres, 0.0);
  ASSERT_TRUE(rep.chamfer_pres.has_value());
  EXPECT_EQ(*rep.chamfer_pres, 0.0);
  // Clearing target removes the cap.
  for (const auto& v : out.coords()) { EXPECT_LT(v.z, 8); }
  EXPECT_LT(out.size(), g.size());
}

TEST(EditModification, FillTargetGrowsEditedCells) {
  const auto g = ball(16, 4.0, 2);
  const auto r_edit = half_cube(16);
  auto plan = make_plan(EditType::Modification, r_edit, 4, 0.0);
  plan.cond_image.reset();
  const auto out = edit_modification_or_addition(g, plan, pull_models());
  // Stage-1 mask covers whole coarse cells of the half cube, all of which fill.
  for (const auto& v : r_edit.members()) { EXPECT_TRUE(out.contains(v)); }
  // New voxels start from noise and are pulled toward 1.
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!g.contains(out.coord(i)))
      for (float f : out.features(i)) { EXPECT_GT(f, 0.5f); }
}

TEST(EditModification, InterleaveOrderChangesOnlyEditRegion) {
  const auto g = ball(16, 5.0, 4);
  const auto r_edit = half_cube(16);
  auto plan = make_plan(EditType::Modification, r_edit, 4, 0.0);
  const auto a = edit_modification_or_addition(g, plan, pull_models());
  plan.order = InterleaveOrder::ImageFirst;
  const auto b = edit_modification_or_addition(g, plan, pull_models());
  EXPECT_FALSE(bit_equal(a, b));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto j = b.find(a.coord(i));
    if (!j || !bit_equal(a.features(i), b.features(*j))) { EXPECT_TRUE(r_edit.contains(a.coord(i))); }
  }
  for (const auto& v : b.coords())
    if (!a.contains(v)) { EXPECT_TRUE(r_edit.contains(v)); }
}

TEST(EditModification, SeedDeterminism) {
  const auto g = ball(16, 3.0, 2);
  VoxelMask r_edit = VoxelMask(16, g.coords()).complement();
  auto plan = make_plan(EditType::Addition, r_edit, 4, 2.0);
  const auto a = edit_modification_or_addition(g, plan, pull_models());
  const auto b = edit_modification_or_addition(g, plan, pull_models());
  EXPECT_TRUE(bit_equal(a, b));
  plan.seed = 12;
  const auto c = edit_modification_or_addition(g, plan, pull_models());
  EXPECT_EQ(a.coords(), c.coords());
  EXPECT_FALSE(bit_equal(a, c));
}

TEST(EditModification, ClearingEverythingIsEmptyAsset) {
  const auto g = ball(16, 3.0, 2);
  auto plan = make_plan(EditType::Modification, VoxelMask::full(16), 4, 0.0);
  plan.cond_text_s1 = kClear;
  plan.cond_image.reset();
  try {
    edit_modification_or_addition(g, plan, pull_models());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyAsset);
  }
}

TEST(EditModification, SoftMaskChangesOnlyBand) {
  const auto g = ball(16, 6.0, 4);
  const auto r_edit = half_cube(16);
  auto plan = make_plan(EditType::Modification, r_edit, 4, 3.0);
  plan.cond_text_s2 = kClear;
  const auto out = edit_modification_or_addition(g, plan, pull_models());
  const auto r_pres = preserved_mask(r_edit);
  const auto w = soft_weights(r_edit, {3.0});

  double band_sq = 0.0;
  std::size_t pres_count = 0, band_count = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto v = g.coord(i);
    if (!r_pres.contains(v)) continue;
    const auto j = out.find(v);
    ASSERT_TRUE(j.has_value());
    ++pres_count;
    if (w.weight(v) == 0.0) {
      EXPECT_TRUE(bit_equal(out.features(*j), g.features(i)));
      continue;
    }
    ++band_count;
    for (std::size_t c = 0; c < 4; ++c) {
      const double diff = double(out.features(*j)[c]) - double(g.features(i)[c]);
      band_sq += diff * diff;
    }
  }
  ASSERT_GT(band_count, 0u);
  const auto rep = preservation_report(g, out, r_pres);
  EXPECT_GT(rep.feature_mse_pres, 0.0);
  EXPECT_EQ(rep.compared_voxels, pres_count);
  EXPECT_DOUBLE_EQ(rep.feature_mse_pres, band_sq / (double(pres_count) * 4.0));
}

TEST(EditDeletion, EmptyMaskIsIdentity) {
  const auto g = ball(8, 3.0, 2);
  const auto plan = make_plan(EditType::Deletion, VoxelMask(8), 4, 2.0);
  EXPECT_TRUE(bit_equal(edit_deletion(g, VoxelMask(8), plan, pull_models()), g));
}

TEST(EditDeletion, CornerVoxelWithZeroBand) {
  const auto g = ball(8, 3.0, 2);
  VoxelMask r(8);
  r.insert(g.coord(0));
  const auto plan = make_plan(EditType::Deletion, r, 4, 0.0);
  const auto out = edit_deletion(g, r, plan, pull_models());
  ASSERT_EQ(out.size(), g.size() - 1);
  for (std::size_t i = 0; i < out.size(); ++i) { EXPECT_TRUE(bit_equal(out.features(i), g.features(i + 1))); }
}

TEST(EditDeletion, BlobChangesExactlyTheBand) {
  const auto g = ball(16, 6.0, 4);
  VoxelMask r(16);
  for (int x = 8; x < 10; ++x)
    for (int y = 8; y < 10; ++y)
      for (int z = 12; z < 14; ++z) r.insert({x, y, z});
  for (const auto& v : r.members()) { ASSERT_TRUE(g.contains(v)); }
  auto plan = make_plan(EditType::Deletion, r, 4, 2.0);
  plan.cond_text_s2 = kClear;
  const auto out = edit_deletion(g, r, plan, pull_models());
  ASSERT_EQ(out.size(), g.size() - 8);

  // Band oracle: surviving voxels strictly closer than B to a removed voxel.
  std::size_t band = 0, changed = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto v = out.coord(i);
    EXPECT_FALSE(r.contains(v));
    bool in_band = false;
    for (const auto& e : r.members()) in_band = in_band || squared_distance(v, e) < 4;
    band += in_band ? 1 : 0;
    const bool same = bit_equal(out.features(i), g.features(*g.find(v)));
    changed += same ? 0 : 1;
    if (!in_band) { EXPECT_TRUE(same); }
  }
  EXPECT_GT(band, 0u);
  EXPECT_EQ(changed, band);
}

TEST(EditDeletion, Preconditions) {
  const auto g = ball(8, 2.0, 2);
  VoxelMask outside(8);
  outside.insert({0, 0, 0});
  const auto plan = make_plan(EditType::Deletion, outside, 4, 1.0);
  EXPECT_THROW(edit_deletion(g, outside, plan, pull_models()), Error);
  const VoxelMask all(8, g.coords());
  try {
    edit_deletion(g, all, plan, pull_models());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyAsset);
  }
}

TEST(PreservationReport, IdenticalIsZero) {
  const auto g = ball(8, 3.0, 2);
  const auto rep = preservation_report(g, g, VoxelMask::full(8));
  EXPECT_EQ(*rep.chamfer_pres, 0.0);
  EXPECT_EQ(rep.feature_mse_pres, 0.0);
  EXPECT_EQ(rep.changed_voxel_count, 0u);
}

TEST(PreservationReport, EmptySides) {
  const auto g = ball(8, 2.0, 1);
  const LatentGrid empty({8, 1}, {}, {});
  EXPECT_FALSE(preservation_report(g, empty, VoxelMask::full(8)).chamfer_pres.has_value());
  EXPECT_EQ(*preservation_report(g, g, VoxelMask(8)).chamfer_pres, 0.0);
  EXPECT_EQ(preservation_report(g, empty, VoxelMask::full(8)).changed_voxel_count, g.size());
}

TEST(PreservationReport, CountsAgainstRecount) {
  std::mt19937_64 rng(13);
  const auto a = random_grid(rng, 8, 2, 60);
  const auto b = random_grid(rng, 8, 2, 60);
  std::size_t want = 0;
  const GridDims d{8, 1};
  for (std::size_t i = 0; i < d.cell_count(); ++i) {
    const auto v = d.coord_at(i);
    const auto ia = a.find(v), ib = b.find(v);
    if (ia.has_value() != ib.has_value())
      ++want;
    else if (ia && !bit_equal(a.features(*ia), b.features(*ib)))
      ++want;
  }
  EXPECT_EQ(preservation_report(a, b, VoxelMask(8)).changed_voxel_count, want);
}
