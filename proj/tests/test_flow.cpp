#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "voxedit/flow.hpp"

using namespace voxedit;

namespace {

const Condition kCond = Condition::one_hot(0);

std::shared_ptr<const VelocityField> constant_field(double c) {
  return std::make_shared<PointwiseField>([c](double, double, const Condition&) { return c; });
}

// Endpoint error integrating x' = x from x=1 over t in [0,1] with n steps.
double linear_endpoint_error(Stepper stepper, std::size_t n) {
  const LinearField f(1.0);
  const auto traj = invert(FlowState::scalar(1.0), f, kCond, TimeSchedule::uniform(n), stepper);
  return std::abs(traj.noise().values[0] - std::exp(1.0));
}

}  // namespace

TEST(EulerStep, ConstantField) {
  const auto f = constant_field(1.0);
  const auto y = euler_step(FlowState::scalar(2.0), 0.3, 0.4, *f, kCond);
  EXPECT_NEAR(y.values[0], 2.1, 1e-15);
}

TEST(EulerStep, ZeroStepIsNumericFault) {
  const auto f = constant_field(1.0);
  try {
    euler_step(FlowState::scalar(2.0), 0.5, 0.5, *f, kCond);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NumericFault);
  }
}

TEST(EulerStep, NonFiniteVelocityIsNumericFault) {
  const auto f = constant_field(std::nan(""));
  try {
    euler_step(FlowState::scalar(2.0), 0.0, 0.1, *f, kCond);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NumericFault);
  }
}

TEST(EulerStep, LinearFieldFirstOrderError) {
  const LinearField f(1.0);
  const auto y = euler_step(FlowState::scalar(1.0), 0.0, 0.1, f, kCond);
  EXPECT_NEAR(y.values[0], 1.1, 1e-15);
  EXPECT_NEAR(std::exp(0.1) - y.values[0], 5.17e-3, 1e-5);
}

TEST(EulerStep, DirectionConsistencyOnConstantField) {
  // Dyadic values keep every operation exact.
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> q(-64, 64), tq(0, 64);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = q(rng) / 64.0, c = q(rng) / 64.0;
    double a = tq(rng) / 64.0, b = tq(rng) / 64.0;
    if (a == b) continue;
    const auto f = constant_field(c);
    const auto there = euler_step(FlowState::scalar(x), a, b, *f, kCond);
    const auto back = euler_step(there, b, a, *f, kCond);
    EXPECT_EQ(back.values[0], x);
  }
}

TEST(RfSolverStep, LinearFieldSecondOrder) {
  const LinearField f(1.0);
  const auto y = rf_solver_step(FlowState::scalar(1.0), 0.0, 0.1, f, kCond);
  EXPECT_NEAR(y.values[0], 1.105, 1e-12);
  EXPECT_NEAR(std::exp(0.1) - y.values[0], 1.709e-4, 1e-6);
}

TEST(RfSolverStep, ConstantFieldEqualsEulerBitExact) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3), t(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto f = constant_field(u(rng));
    const double x = u(rng), a = t(rng), b = t(rng);
    const auto e = euler_step(FlowState::scalar(x), a, b, *f, kCond);
    const auto r = rf_solver_step(FlowState::scalar(x), a, b, *f, kCond);
    EXPECT_EQ(e.values[0], r.values[0]);
  }
}

TEST(RfSolverStep, ThirdOrderLocalErrorOnQuadraticField) {
  // x' = x^2, x(0) = 1 -> x(t) = 1 / (1 - t).
  const PointwiseField f([](double x, double, const Condition&) { return x * x; });
  auto local_error = [&](double dt) {
    const auto y = rf_solver_step(FlowState::scalar(1.0), 0.0, dt, f, kCond);
    return std::abs(y.values[0] - 1.0 / (1.0 - dt));
  };
  const double ratio = local_error(0.02) / local_error(0.01);
  EXPECT_GT(ratio, 7.0);
  EXPECT_LT(ratio, 9.0);
  // Euler on the same problem only gains a factor ~4.
  auto euler_error = [&](double dt) {
    return std::abs(euler_step(FlowState::scalar(1.0), 0.0, dt, f, kCond).values[0] - 1.0 / (1.0 - dt));
  };
  EXPECT_NEAR(euler_error(0.02) / euler_error(0.01), 4.0, 0.3);
}

TEST(CfgVelocity, ScaleZeroIsConditional) {
  const PointwiseField f([](double, double, const Condition& c) {
    return c.kind == Condition::Kind::Unconditional ? 1.0 : 3.0;
  });
  EXPECT_EQ(cfg_velocity(FlowState::scalar(0.0), 0.5, f, kCond, {0.0}).values[0], 3.0);
  EXPECT_EQ(cfg_velocity(FlowState::scalar(0.0), 0.5, f, kCond, {1.0}).values[0], 5.0);
}

TEST(CfgVelocity, EqualBranchesIgnoreScale) {
  const auto f = constant_field(2.5);
  for (double s : {0.0, 0.5, 3.0, 7.5})
    EXPECT_EQ(cfg_velocity(FlowState::scalar(1.0), 0.2, *f, kCond, {s}).values[0], 2.5);
}

TEST(CfgVelocity, RejectsUnconditionalCondition) {
  const auto f = constant_field(1.0);
  EXPECT_THROW(cfg_velocity(FlowState::scalar(0.0), 0.5, *f, Condition::unconditional(), {0.0}), Error);
}

TEST(Invert, ZeroFieldKeepsData) {
  const auto f = make_linear_field(0.0);
  const auto data = FlowState::scalar(0.75);
  const auto traj = invert(data, *f, kCond, TimeSchedule::uniform(10), Stepper::RfSolver);
  ASSERT_EQ(traj.states.size(), 11u);
  for (const auto& s : traj.states) EXPECT_EQ(s.values[0], 0.75);
}

TEST(Invert, LinearFieldReachesDataTimesE) {
  const LinearField f(1.0);
  const auto data = FlowState::scalar(1.7);
  const auto traj = invert(data, f, kCond, TimeSchedule::uniform(50), Stepper::RfSolver);
  EXPECT_LE(std::abs(traj.noise().values[0] / (1.7 * std::exp(1.0)) - 1.0), 1e-3);
  EXPECT_EQ(traj.data().values, data.values);
  // states[i] sits at times[i]: compare with the closed form at every entry.
  for (std::size_t i = 0; i < traj.states.size(); ++i)
    EXPECT_NEAR(traj.states[i].values[0], 1.7 * std::exp(traj.schedule.times[i]), 1e-3);
}

TEST(Invert, NeverEvaluatesUnconditionalBranch) {
  auto counting = std::make_shared<CountingField>(make_linear_field(0.5));
  invert(FlowState::scalar(1.0), *counting, kCond, TimeSchedule::uniform(20), Stepper::RfSolver);
  EXPECT_EQ(counting->unconditional_calls(), 0);
  EXPECT_EQ(counting->conditional_calls(), 40);
}

TEST(Invert, NumericFaultCarriesStepIndex) {
  const PointwiseField f([](double x, double t, const Condition&) {
    return t >= 0.5 ? std::nan("") : x;
  });
  try {
    invert(FlowState::scalar(1.0), f, kCond, TimeSchedule::uniform(10), Stepper::Euler);
    FAIL();
  } catch (const NumericError& e) {
    // Upward integration reaches t = 0.5 when leaving schedule index 5.
    EXPECT_EQ(e.step(), 4);
  }
}

TEST(Denoise, ZeroFieldIsIdentity) {
  const auto f = make_linear_field(0.0);
  const auto out = denoise(FlowState::scalar(-0.3), *f, kCond, TimeSchedule::uniform(7), {2.0}, Stepper::Euler);
  EXPECT_EQ(out.values[0], -0.3);
}

TEST(Denoise, EulerRoundTripErrorIsFirstOrder) {
  const LinearField f(1.0);
  auto roundtrip = [&](std::size_t n) {
    const auto data = FlowState::scalar(1.0);
    const auto traj = invert(data, f, kCond, TimeSchedule::uniform(n), Stepper::Euler);
    const auto back = denoise(traj.noise(), f, kCond, TimeSchedule::uniform(n), {0.0}, Stepper::Euler);
    return std::abs(back.values[0] - 1.0);
  };
  for (std::size_t n : {25u, 50u, 100u}) {
    const double ratio = roundtrip(n) / roundtrip(2 * n);
    EXPECT_GE(ratio, 1.7);
    EXPECT_LE(ratio, 2.6);
  }
}

TEST(LinearField, ClosedForms) {
  const LinearField up(1.0), down(-1.0);
  auto integrate = [](const VelocityField& f, double x0, double t1) {
    FlowState x = FlowState::scalar(x0);
    const int n = 2000;
    for (int i = 0; i < n; ++i)
      x = rf_solver_step(x, t1 * i / n, t1 * (i + 1) / n, f, kCond);
    return x.values[0];
  };
  EXPECT_NEAR(integrate(up, 1.0, 1.0), 2.71828, 1e-5);
  EXPECT_NEAR(integrate(down, 2.0, 0.5), 1.21306, 1e-5);
  const auto zero = make_linear_field(0.0);
  EXPECT_EQ(integrate(*zero, 3.0, 1.0), 3.0);
}

TEST(GlobalOrder, HalvingStepRatios) {
  for (std::size_t n : {25u, 50u, 100u}) {
    const double euler = linear_endpoint_error(Stepper::Euler, n) / linear_endpoint_error(Stepper::Euler, 2 * n);
    const double rf = linear_endpoint_error(Stepper::RfSolver, n) / linear_endpoint_error(Stepper::RfSolver, 2 * n);
    EXPECT_GE(euler, 1.7);
    EXPECT_LE(euler, 2.6);
    EXPECT_GE(rf, 3.4);
    EXPECT_LE(rf, 4.8);
  }
}

TEST(TimeSchedule, UniformEndpointsExact) {
  const auto s = TimeSchedule::uniform(50);
  EXPECT_EQ(s.times.front(), 1.0);
  EXPECT_EQ(s.times.back(), 0.0);
  EXPECT_NO_THROW(s.validate());
  TimeSchedule bad{{1.0, 0.5, 0.5, 0.0}};
  EXPECT_THROW(bad.validate(), Error);
}
