#pragma once

// Toy per-voxel velocity network and its rectified-flow trainer.
//
// Every voxel row is mapped independently:
//   input  = [x_row (C), t, t^2, sin(pi t), coord in [-1,1]^3, cond (E)]
//   output = velocity row (C)
// through `depth` SiLU hidden layers of width `hidden`.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "voxedit/error.hpp"
#include "voxedit/flow.hpp"
#include "voxedit/grid_io.hpp"

namespace voxedit {

struct MlpShape {
  int channels = 1;
  int embed = static_cast<int>(kEmbeddingDim);
  int hidden = 64;
  int depth = 2;

  int input_size() const { return channels + 3 + 3 + embed; }

  void validate() const {
    require(channels >= 1 && embed >= 0 && hidden >= 1 && depth >= 1, ErrorCode::Precondition,
            "invalid network shape");
  }

  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

struct TrainParams {
  int steps = 2000;
  int batch = 64;
  double learning_rate = 2e-3;
  double cond_dropout = 0.1;  // probability of training a row unconditionally
  int hidden = 64;
  int depth = 2;
};

/// One supervised row: network input and regression target.
struct TrainingRow {
  std::vector<double> input;
  std::vector<double> target;
};

class MlpField final : public VelocityField {
 public:
  MlpField(MlpShape shape, std::uint64_t seed) : shape_(shape), seed_(seed) {
    shape_.validate();
    build_layout();
    params_.assign(param_count_, 0.0);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      const double limit = std::sqrt(6.0 / static_cast<double>(L.in + L.out)) *
                           (l + 1 == layers_.size() ? 0.5 : 1.0);
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::size_t i = 0; i < L.in * L.out; ++i) params_[L.weights + i] = dist(rng);
    }
  }

  MlpField(MlpShape shape, std::uint64_t seed, std::vector<double> params)
      : shape_(shape), seed_(seed) {
    shape_.validate();
    build_layout();
    require(params.size() == param_count_, ErrorCode::ShapeFault,
            "parameter count " + std::to_string(params.size()) + " does not match network (" +
                std::to_string(param_count_) + ")");
    params_ = std::move(params);
  }

  const MlpShape& shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<double>& parameters() const { return params_; }
  std::vector<double>& mutable_parameters() { return params_; }
  int channels() const override { return shape_.channels; }

  void make_input(std::span<const double> x_row, double t, const VoxelCoord& c, int resolution,
                  const Condition& cond, std::span<double> in) const {
    require(cond.embedding.size() == static_cast<std::size_t>(shape_.embed), ErrorCode::ShapeFault,
            "condition embedding length differs from network");
    std::size_t k = 0;
    for (double v : x_row) in[k++] = v;
    in[k++] = t;
    in[k++] = t * t;
    in[k++] = std::sin(std::numbers::pi * t);
    const double r = resolution;
    in[k++] = 2.0 * (c.x + 0.5) / r - 1.0;
    in[k++] = 2.0 * (c.y + 0.5) / r - 1.0;
    in[k++] = 2.0 * (c.z + 0.5) / r - 1.0;
    for (double e : cond.embedding) in[k++] = e;
  }

  void eval(const FlowState& x, double t, const Condition& cond, std::span<double> out) const override {
    check_domain(x);
    std::vector<double> in(static_cast<std::size_t>(shape_.input_size()));
    Workspace ws(*this);
    const auto c = x.channels();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      make_input(x.row(r), t, x.support->coords[r], x.support->dims.resolution, cond, in);
      forward(in, ws);
      const auto& y = ws.act.back();
      for (std::size_t ch = 0; ch < c; ++ch) out[r * c + ch] = y[ch];
    }
  }

  /// Mean squared error over rows x channels; accumulates the gradient into
  /// *grad (resized to the parameter count) when given.
  double loss_and_gradient(std::span<const TrainingRow> rows, std::vector<double>* grad) const {
    require(!rows.empty(), ErrorCode::Precondition, "empty training batch");
    if (grad) grad->assign(param_count_, 0.0);
    Workspace ws(*this);
    const double norm = 1.0 / (static_cast<double>(rows.size()) * shape_.channels);
    double loss = 0.0;
    for (const auto& row : rows) {
      forward(row.input, ws);
      auto& delta = ws.delta.back();
      const auto& y = ws.act.back();
      for (std::size_t ch = 0; ch < y.size(); ++ch) {
        const double e = y[ch] - row.target[ch];
        loss += e * e * norm;
        delta[ch] = 2.0 * e * norm;
      }
      if (grad) backward(ws, *grad);
    }
    return loss;
  }

 private:
  struct Layer {
    std::size_t in, out, weights, bias;
  };

  struct Workspace {
    std::vector<std::vector<double>> pre;    // z per layer
    std::vector<std::vector<double>> act;    // act[0] = input, act[l+1] = layer l output
    std::vector<std::vector<double>> delta;  // dL/dz per layer

    explicit Workspace(const MlpField& f) {
      act.emplace_back(static_cast<std::size_t>(f.shape_.input_size()));
      for (const auto& L : f.layers_) {
        pre.emplace_back(L.out);
        act.emplace_back(L.out);
        delta.emplace_back(L.out);
      }
    }
  };

  static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

  void build_layout() {
    std::size_t offset = 0;
    auto add = [&](std::size_t in, std::size_t out) {
      layers_.push_back({in, out, offset, offset + in * out});
      offset += in * out + out;
    };
    const auto h = static_cast<std::size_t>(shape_.hidden);
    add(static_cast<std::size_t>(shape_.input_size()), h);
    for (int i = 1; i < shape_.depth; ++i) add(h, h);
    add(h, static_cast<std::size_t>(shape_.channels));
    param_count_ = offset;
  }

  void forward(std::span<const double> input, Workspace& ws) const {
    std::copy(input.begin(), input.end(), ws.act[0].begin());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      const double* w = params_.data() + L.weights;
      const double* b = params_.data() + L.bias;
      const auto& a = ws.act[l];
      auto& z = ws.pre[l];
      auto& y = ws.act[l + 1];
      const bool last = l + 1 == layers_.size();
      for (std::size_t o = 0; o < L.out; ++o) {
        double s = b[o];
        const double* wr = w + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) s += wr[i] * a[i];
        z[o] = s;
        y[o] = last ? s : s * sigmoid(s);
      }
    }
  }

  // Expects ws.delta.back() to hold dL/d(output).
  void backward(Workspace& ws, std::vector<double>& grad) const {
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& L = layers_[l];
      const auto& a = ws.act[l];
      const auto& d = ws.delta[l];
      double* gw = grad.data() + L.weights;
      double* gb = grad.data() + L.bias;
      for (std::size_t o = 0; o < L.out; ++o) {
        gb[o] += d[o];
        double* gr = gw + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) gr[i] += d[o] * a[i];
      }
      if (l == 0) break;
      const double* w = params_.data() + L.weights;
      auto& dprev = ws.delta[l - 1];
      const auto& zprev = ws.pre[l - 1];
      for (std::size_t i = 0; i < L.in; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < L.out; ++o) s += w[o * L.in + i] * d[o];
        const double sg = sigmoid(zprev[i]);
        dprev[i] = s * sg * (1.0 + zprev[i] * (1.0 - sg));
      }
    }
  }

  MlpShape shape_;
  std::uint64_t seed_;
  std::vector<Layer> layers_;
  std::size_t param_count_ = 0;
  std::vector<double> params_;
};

namespace detail {

/// Draws one flow-matching row: x_t = (1-t) x1 + t eps, target eps - x1.
inline TrainingRow draw_row(const MlpField& net, std::span<const FlowState> data,
                            std::span<const Condition> conds, double dropout, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto s = pick(rng);
  const auto& x1 = data[s];
  std::uniform_int_distribution<std::size_t> pick_row(0, x1.rows() - 1);
  const auto r = pick_row(rng);
  const double t = unit(rng);
  const bool drop = unit(rng) < dropout;
  const auto c = x1.channels();
  std::vector<double> xt(c);
  TrainingRow row;
  row.target.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double eps = gauss(rng);
    const double v = x1.row(r)[ch];
    xt[ch] = (1.0 - t) * v + t * eps;
    row.target[ch] = eps - v;
  }
  row.input.resize(static_cast<std::size_t>(net.shape().input_size()));
  const Condition cond = drop ? Condition::unconditional(conds[s].embedding.size()) : conds[s];
  net.make_input(xt, t, x1.support->coords[r], x1.support->dims.resolution, cond, row.input);
  return row;
}

inline void check_dataset(std::span<const FlowState> data, std::span<const Condition> conds) {
  require(!data.empty(), ErrorCode::Precondition, "training dataset is empty");
  require(conds.size() == data.size(), ErrorCode::Precondition, "one condition per sample required");
  for (const auto& s : data) {
    require(s.rows() > 0, ErrorCode::Precondition, "training sample has no voxels");
    require(s.channels() == data.front().channels(), ErrorCode::ShapeFault,
            "training samples must share a channel count");
  }
}

}  // namespace detail

/// Fits an MlpField to the rectified-flow regression target with Adam.
/// Deterministic for a fixed seed.
inline std::shared_ptr<const MlpField> train_toy_flow(std::span<const FlowState> data,
                                                      std::span<const Condition> conds,
                                                      const TrainParams& params, std::uint64_t seed) {
  detail::check_dataset(data, conds);
  MlpShape shape{static_cast<int>(data.front().channels()),
                 static_cast<int>(conds.front().embedding.size()), params.hidden, params.depth};
  auto net = std::make_shared<MlpField>(shape, seed);
  std::mt19937_64 rng(seed ^ 0x5eedf10full);
  auto& theta = net->mutable_parameters();
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0), grad;
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<TrainingRow> batch(static_cast<std::size_t>(params.batch));
  for (int step = 1; step <= params.steps; ++step) {
    for (auto& row : batch) row = detail::draw_row(*net, data, conds, params.cond_dropout, rng);
    const double loss = net->loss_and_gradient(batch, &grad);
    require(std::isfinite(loss), ErrorCode::TrainingFault,
            "loss diverged at step " + std::to_string(step));
    const double lr = params.learning_rate * (1.0 - 0.9 * (step - 1) / std::max(1, params.steps));
    const double c1 = 1.0 - std::pow(beta1, step), c2 = 1.0 - std::pow(beta2, step);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  return net;
}

template <class CondFn>
  requires std::invocable<CondFn&, const FlowState&>
std::shared_ptr<const MlpField> train_toy_flow(std::span<const FlowState> data, CondFn&& cond_fn,
                                               const TrainParams& params, std::uint64_t seed) {
  std::vector<Condition> conds;
  for (const auto& s : data) conds.push_back(cond_fn(s));
  return train_toy_flow(data, std::span<const Condition>(conds), params, seed);
}

/// Held-out flow-matching loss of `field` (or of the zero velocity when
/// field is null) over `samples` freshly drawn rows.
inline double flow_matching_loss(const MlpField* field, const MlpShape& shape,
                                 std::span<const FlowState> data, std::span<const Condition> conds,
                                 int samples, std::uint64_t seed) {
  detail::check_dataset(data, conds);
  const MlpField probe(shape, 0);
  std::mt19937_64 rng(seed);
  std::vector<TrainingRow> rows;
  for (int i = 0; i < samples; ++i) rows.push_back(detail::draw_row(probe, data, conds, 0.0, rng));
  if (field) return field->loss_and_gradient(rows, nullptr);
  double loss = 0.0;
  for (const auto& r : rows)
    for (double y : r.target) loss += y * y;
  return loss / (static_cast<double>(rows.size()) * shape.channels);
}

/// VFM1 checkpoint: one header line, then one parameter per line in
/// shortest round-trip decimal form.
inline std::string to_vfm1(const MlpField& field) {
  std::ostringstream out;
  const auto& s = field.shape();
  out << "VFM1 channels " << s.channels << " embed " << s.embed << " hidden " << s.hidden
      << " depth " << s.depth << " seed " << field.seed() << " params "
      << field.parameters().size() << '\n';
  for (double p : field.parameters()) out << io::format_number(p) << '\n';
  return out.str();
}

inline std::shared_ptr<const MlpField> parse_vfm1(std::string_view text,
                                                  const std::string& source = "checkpoint") {
  io::Tokens tok(text, source);
  tok.expect("VFM1");
  MlpShape shape;
  tok.expect("channels");
  shape.channels = tok.number<int>();
  tok.expect("embed");
  shape.embed = tok.number<int>();
  tok.expect("hidden");
  shape.hidden = tok.number<int>();
  tok.expect("depth");
  shape.depth = tok.number<int>();
  tok.expect("seed");
  const auto seed = tok.number<std::uint64_t>();
  tok.expect("params");
  const auto count = tok.number<std::size_t>();
  std::vector<double> params(count);
  for (auto& p : params) p = tok.number<double>();
  require(tok.done(), ErrorCode::IoFault, source + ": trailing data after parameters");
  return std::make_shared<const MlpField>(shape, seed, std::move(params));
}

inline void save_field(const MlpField& field, const std::filesystem::path& path) {
  io::write_file(path, to_vfm1(field));
}

inline std::shared_ptr<const MlpField> load_field(const std::filesystem::path& path) {
  return parse_vfm1(io::read_file(path), path.string());
}

}  // namespace voxedit
