#pragma once

// Rectified-flow integration on sparse latent states.
//
// Time runs from t=1 (noise) to t=0 (data). Inversion integrates upward from
// the data, sampling integrates downward from the noise. A schedule is
// t_0 = 1 > t_1 > ... > t_N = 0 and a trajectory stores one state per entry.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "voxedit/error.hpp"
#include "voxedit/voxel.hpp"

namespace voxedit {

inline constexpr std::size_t kEmbeddingDim = 8;

/// Coordinates plus grid shape shared by every state of one run.
struct Support {
  GridDims dims;
  CoordSet coords;
};

/// Dense row-major (voxel x channel) real tensor over a support.
struct FlowState {
  std::shared_ptr<const Support> support;
  std::vector<double> values;

  FlowState() = default;
  FlowState(std::shared_ptr<const Support> s, std::vector<double> v)
      : support(std::move(s)), values(std::move(v)) {
    require(support != nullptr, ErrorCode::ShapeFault, "state without support");
    require(values.size() == rows() * channels(), ErrorCode::ShapeFault,
            "state values do not match support rows x channels");
  }

  static FlowState zeros(std::shared_ptr<const Support> s) {
    const auto n = s->coords.size() * static_cast<std::size_t>(s->dims.channels);
    return FlowState(std::move(s), std::vector<double>(n, 0.0));
  }

  /// One voxel, one channel: the scalar toy used throughout the tests.
  static FlowState scalar(double x) {
    static const auto support = std::make_shared<const Support>(Support{{1, 1}, {{0, 0, 0}}});
    return FlowState(support, {x});
  }

  static FlowState from_grid(const LatentGrid& grid) {
    auto s = std::make_shared<const Support>(Support{grid.dims(), grid.coords()});
    const auto& f = grid.feature_buffer();
    return FlowState(std::move(s), std::vector<double>(f.begin(), f.end()));
  }

  LatentGrid to_grid() const {
    std::vector<float> f(values.size());
    std::transform(values.begin(), values.end(), f.begin(),
                   [](double v) { return static_cast<float>(v); });
    return LatentGrid(support->dims, support->coords, std::move(f));
  }

  std::size_t rows() const { return support->coords.size(); }
  std::size_t channels() const { return static_cast<std::size_t>(support->dims.channels); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * channels(), channels()}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * channels(), channels()}; }

  bool same_shape(const FlowState& other) const {
    return support == other.support ||
           (support->dims == other.support->dims && support->coords == other.support->coords);
  }
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// ||a - b|| / ||b||
inline double relative_l2(const FlowState& a, const FlowState& b) {
  require(a.values.size() == b.values.size(), ErrorCode::ShapeFault, "relative_l2 shape mismatch");
  double num = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    num += d * d;
  }
  return std::sqrt(num) / l2_norm(b.values);
}

struct Condition {
  enum class Kind { Text, Image, Unconditional };

  Kind kind = Kind::Unconditional;
  std::vector<double> embedding = std::vector<double>(kEmbeddingDim, 0.0);

  static Condition unconditional(std::size_t dim = kEmbeddingDim) {
    return {Kind::Unconditional, std::vector<double>(dim, 0.0)};
  }
  static Condition text(std::vector<double> e) { return {Kind::Text, std::move(e)}; }
  static Condition image(std::vector<double> e) { return {Kind::Image, std::move(e)}; }

  /// One-hot class code padded to the embedding length.
  static Condition one_hot(std::size_t index, Kind kind = Kind::Text, std::size_t dim = kEmbeddingDim) {
    require(index < dim, ErrorCode::Precondition, "class index exceeds embedding length");
    std::vector<double> e(dim, 0.0);
    e[index] = 1.0;
    return {kind, std::move(e)};
  }

  void validate() const {
    require(all_finite(embedding), ErrorCode::Precondition, "condition embedding not finite");
    if (kind == Kind::Unconditional)
      require(std::all_of(embedding.begin(), embedding.end(), [](double v) { return v == 0.0; }),
              ErrorCode::Precondition, "unconditional embedding must be zero");
  }

  friend bool operator==(const Condition&, const Condition&) = default;
};

/// Velocity v(x, t | cond). Implementations are immutable and deterministic.
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  /// Writes the velocity for every value of x into out (same size).
  virtual void eval(const FlowState& x, double t, const Condition& cond, std::span<double> out) const = 0;

  /// Channel count the field operates on; 0 accepts any.
  virtual int channels() const { return 0; }

  void check_domain(const FlowState& x) const {
    require(channels() == 0 || channels() == x.support->dims.channels, ErrorCode::ShapeFault,
            "state has " + std::to_string(x.support->dims.channels) + " channels, field expects " +
                std::to_string(channels()));
  }

  FlowState operator()(const FlowState& x, double t, const Condition& cond) const {
    check_domain(x);
    FlowState out = FlowState::zeros(x.support);
    eval(x, t, cond, out.values);
    return out;
  }
};

/// v(x, t) = rate * x; exact flow x(t) = x(0) * exp(rate * t).
class LinearField final : public VelocityField {
 public:
  explicit LinearField(double rate) : rate_(rate) {
    require(std::isfinite(rate), ErrorCode::Precondition, "linear field rate must be finite");
  }
  void eval(const FlowState& x, double, const Condition&, std::span<double> out) const override {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rate_ * x.values[i];
  }
  double rate() const { return rate_; }

 private:
  double rate_;
};

inline std::shared_ptr<const VelocityField> make_linear_field(double rate) {
  return std::make_shared<const LinearField>(rate);
}

/// Elementwise field from a scalar function f(x, t, cond).
class PointwiseField final : public VelocityField {
 public:
  using Fn = std::function<double(double, double, const Condition&)>;
  explicit PointwiseField(Fn fn) : fn_(std::move(fn)) {}
  void eval(const FlowState& x, double t, const Condition& cond, std::span<double> out) const override {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn_(x.values[i], t, cond);
  }

 private:
  Fn fn_;
};

/// Wraps a field and counts evaluations per condition kind.
class CountingField final : public VelocityField {
 public:
  explicit CountingField(std::shared_ptr<const VelocityField> inner) : inner_(std::move(inner)) {}
  void eval(const FlowState& x, double t, const Condition& cond, std::span<double> out) const override {
    (cond.kind == Condition::Kind::Unconditional ? unconditional_ : conditional_)++;
    inner_->eval(x, t, cond, out);
  }
  int channels() const override { return inner_->channels(); }
  long conditional_calls() const { return conditional_.load(); }
  long unconditional_calls() const { return unconditional_.load(); }

 private:
  std::shared_ptr<const VelocityField> inner_;
  mutable std::atomic<long> conditional_{0};
  mutable std::atomic<long> unconditional_{0};
};

struct TimeSchedule {
  std::vector<double> times;

  static TimeSchedule uniform(std::size_t steps) {
    require(steps >= 1, ErrorCode::Precondition, "schedule needs at least one step");
    TimeSchedule s;
    s.times.resize(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i)
      s.times[i] = static_cast<double>(steps - i) / static_cast<double>(steps);
    return s;
  }

  std::size_t steps() const { return times.size() - 1; }

  void validate() const {
    require(times.size() >= 2, ErrorCode::Precondition, "schedule needs at least one step");
    require(times.front() == 1.0 && times.back() == 0.0, ErrorCode::Precondition,
            "schedule must run from 1 to 0");
    for (std::size_t i = 1; i < times.size(); ++i)
      require(times[i] < times[i - 1], ErrorCode::Precondition, "schedule must strictly decrease");
  }

  friend bool operator==(const TimeSchedule&, const TimeSchedule&) = default;
};

struct Trajectory {
  TimeSchedule schedule;
  std::vector<FlowState> states;  // states[i] is the state at schedule.times[i]

  const FlowState& noise() const { return states.front(); }
  const FlowState& data() const { return states.back(); }
};

struct CfgParams {
  double scale = 0.0;
};

enum class Stepper { Euler, RfSolver };

inline std::string to_string(Stepper s) { return s == Stepper::Euler ? "euler" : "rf-solver"; }

inline Stepper parse_stepper(const std::string& name) {
  if (name == "euler") return Stepper::Euler;
  if (name == "rf-solver" || name == "rf" || name == "rfsolver") return Stepper::RfSolver;
  fail(ErrorCode::ConfigFault, "unknown stepper '" + name + "'");
}

/// Velocity callback used by the steppers: (state, t) -> velocity.
using VelocityFn = std::function<FlowState(const FlowState&, double)>;

namespace detail {

inline void check_step(const FlowState& x, double t_from, double t_to) {
  require(t_from >= 0.0 && t_from <= 1.0 && t_to >= 0.0 && t_to <= 1.0, ErrorCode::Precondition,
          "step times must lie in [0,1]");
  if (t_from == t_to) fail(ErrorCode::NumericFault, "zero-length step");
  if (!all_finite(x.values)) fail(ErrorCode::NumericFault, "non-finite state");
}

inline void check_velocity(const FlowState& v) {
  if (!all_finite(v.values)) fail(ErrorCode::NumericFault, "non-finite velocity");
}

}  // namespace detail

/// x + (t_to - t_from) * v(x, t_from)
inline FlowState euler_step(const FlowState& x, double t_from, double t_to, const VelocityFn& velocity) {
  detail::check_step(x, t_from, t_to);
  const double dt = t_to - t_from;
  const FlowState v = velocity(x, t_from);
  detail::check_velocity(v);
  FlowState out = x;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = x.values[i] + dt * v.values[i];
  return out;
}

/// x + dt*v + dt^2/2 * v1, where the time derivative v1 is a forward
/// difference along the Euler-predicted point, probe size dt.
inline FlowState rf_solver_step(const FlowState& x, double t_from, double t_to, const VelocityFn& velocity) {
  detail::check_step(x, t_from, t_to);
  const double dt = t_to - t_from;
  const FlowState v = velocity(x, t_from);
  detail::check_velocity(v);
  FlowState probe = x;
  for (std::size_t i = 0; i < probe.values.size(); ++i) probe.values[i] = x.values[i] + dt * v.values[i];
  const FlowState vp = velocity(probe, t_to);
  detail::check_velocity(vp);
  FlowState out = x;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double v1 = (vp.values[i] - v.values[i]) / dt;
    out.values[i] = x.values[i] + dt * v.values[i] + 0.5 * dt * dt * v1;
  }
  if (!all_finite(out.values)) fail(ErrorCode::NumericFault, "non-finite state after step");
  return out;
}

inline FlowState take_step(Stepper stepper, const FlowState& x, double t_from, double t_to,
                           const VelocityFn& velocity) {
  return stepper == Stepper::Euler ? euler_step(x, t_from, t_to, velocity)
                                   : rf_solver_step(x, t_from, t_to, velocity);
}

/// v_c + s * (v_c - v_u). The unconditional branch is skipped when s == 0.
inline FlowState cfg_velocity(const FlowState& x, double t, const VelocityField& field,
                              const Condition& cond, const CfgParams& params) {
  require(cond.kind != Condition::Kind::Unconditional, ErrorCode::Precondition,
          "classifier-free guidance needs a conditional branch");
  require(std::isfinite(params.scale) && params.scale >= 0.0, ErrorCode::Precondition,
          "CFG scale must be finite and >= 0");
  FlowState vc = field(x, t, cond);
  if (params.scale == 0.0) return vc;
  const FlowState vu = field(x, t, Condition::unconditional(cond.embedding.size()));
  for (std::size_t i = 0; i < vc.values.size(); ++i)
    vc.values[i] = vc.values[i] + params.scale * (vc.values[i] - vu.values[i]);
  return vc;
}

inline VelocityFn guided(const VelocityField& field, const Condition& cond, CfgParams params) {
  return [&field, cond, params](const FlowState& x, double t) {
    return cfg_velocity(x, t, field, cond, params);
  };
}

inline FlowState euler_step(const FlowState& x, double t_from, double t_to, const VelocityField& field,
                            const Condition& cond) {
  return euler_step(x, t_from, t_to, guided(field, cond, {}));
}

inline FlowState rf_solver_step(const FlowState& x, double t_from, double t_to,
                                const VelocityField& field, const Condition& cond) {
  return rf_solver_step(x, t_from, t_to, guided(field, cond, {}));
}

namespace detail {

template <class Fn>
auto tag_step(long step, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError&) {
    throw;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NumericFault) throw NumericError(e.what(), step);
    throw;
  }
}

}  // namespace detail

/// Integrates data (t=0) up to noise (t=1), CFG scale fixed at 0, recording
/// every schedule entry. states.back() is the input, bit for bit.
inline Trajectory invert(const FlowState& data, const VelocityField& field, const Condition& cond,
                         const TimeSchedule& schedule, Stepper stepper) {
  schedule.validate();
  field.check_domain(data);
  const auto velocity = guided(field, cond, CfgParams{0.0});
  const std::size_t n = schedule.steps();
  Trajectory traj{schedule, std::vector<FlowState>(n + 1)};
  traj.states[n] = data;
  for (std::size_t k = n; k-- > 0;) {
    traj.states[k] = detail::tag_step(static_cast<long>(k), [&] {
      return take_step(stepper, traj.states[k + 1], schedule.times[k + 1], schedule.times[k], velocity);
    });
  }
  return traj;
}

/// Integrates noise (t=1) down to data (t=0) with guided velocity.
inline FlowState denoise(const FlowState& noise, const VelocityField& field, const Condition& cond,
                         const TimeSchedule& schedule, const CfgParams& cfg, Stepper stepper) {
  schedule.validate();
  field.check_domain(noise);
  const auto velocity = guided(field, cond, cfg);
  FlowState x = noise;
  for (std::size_t i = 0; i < schedule.steps(); ++i) {
    x = detail::tag_step(static_cast<long>(i), [&] {
      return take_step(stepper, x, schedule.times[i], schedule.times[i + 1], velocity);
    });
  }
  return x;
}

}  // namespace voxedit
