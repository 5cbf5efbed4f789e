#pragma once

// Independent reference computations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "bd/common.hpp"
#include "bd/nn.hpp"

namespace bd::testing {

/// |a - n| / max(|a|, |n|, floor); the floor keeps round-off on
/// near-zero derivatives from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_error = 0.0;
  std::size_t coords = 0;
  /// Sampled coordinates whose +-step probes left the piecewise-linear
  /// region (a relu or max-pool switch), where central differences do not
  /// estimate the derivative; they are redrawn.
  std::size_t kinks = 0;
  void add(double analytic, double numeric) {
    max_error = std::max(max_error, relative_error(analytic, numeric));
    ++coords;
  }
};

/// Every layer kind: conv, relu, maxpool, concat_skip, dropout, dense and
/// the softmax output, in 64-bit with raw (undivided) inputs.
inline nn::Model64 all_kinds_model(std::uint64_t seed) {
  using nn::LayerSpec;
  std::vector<LayerSpec> layers = {
      LayerSpec::conv(3, 3),      // 0: 8x8x2 -> 6x6x3
      LayerSpec::relu(),          // 1
      LayerSpec::maxpool(),       // 2: 3x3x3
      LayerSpec::conv(4, 2),      // 3: 2x2x4
      LayerSpec::relu(),          // 4
      LayerSpec::concat_skip(2),  // 5: 27 + 16
      LayerSpec::dropout(0.5),    // 6
      LayerSpec::dense(6),        // 7
      LayerSpec::relu(),          // 8
      LayerSpec::dense(3),        // 9
      LayerSpec::softmax_output(),
  };
  auto model = nn::make_model<double>({8, 8, 2}, 3, layers, 1);
  nn::initialize(model, seed);
  // Break the shared 0.1 bias so activations sit away from relu kinks.
  Rng rng(mix_seed(seed, 99));
  for (auto& p : model.params) {
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] = rng.uniform(-0.2, 0.2);
  }
  return model;
}

inline nn::Tensor<double> random_input(const Shape3& s, std::uint64_t seed, std::size_t batch = 0) {
  Rng rng(seed);
  std::vector<std::size_t> shape = {static_cast<std::size_t>(s.height), static_cast<std::size_t>(s.width),
                                    static_cast<std::size_t>(s.channels)};
  if (batch > 0) shape.insert(shape.begin(), batch);
  nn::Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

/// Central differences of the train-mode batch loss against
/// loss_and_param_gradients, `per_layer` sampled coordinates per parameter
/// tensor (weights and bias separately; fewer when the tensor is smaller).
inline GradCheck check_param_gradients(const nn::Model64& model, const nn::Tensor<double>& inputs,
                                       const std::vector<int>& labels, std::size_t per_layer, double step,
                                       std::uint64_t seed) {
  const std::uint64_t dropout_seed = 4242;
  const auto analytic = nn::loss_and_param_gradients(model, inputs, std::span<const int>(labels), dropout_seed);
  GradCheck out;
  Rng rng(seed);
  nn::Model64 probe = model;
  auto loss_at = [&](const nn::Model64& m) {
    return nn::loss_and_param_gradients(m, inputs, std::span<const int>(labels), dropout_seed).loss;
  };
  auto region_at = [&](const nn::Model64& m) { return nn::linear_region(m, inputs, true, dropout_seed); };
  const auto base_region = region_at(model);
  for (std::size_t layer = 0; layer < model.params.size(); ++layer) {
    for (int part = 0; part < 2; ++part) {
      const auto& tensor = part == 0 ? model.params[layer].weights : model.params[layer].bias;
      if (tensor.empty()) continue;
      const auto& grad = part == 0 ? analytic.grads[layer].weights : analytic.grads[layer].bias;
      const std::size_t wanted = std::min(per_layer, tensor.size());
      std::size_t taken = 0;
      for (std::size_t attempt = 0; taken < wanted && attempt < 50 * wanted; ++attempt) {
        const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(tensor.size()) - 1));
        auto& target = part == 0 ? probe.params[layer].weights[idx] : probe.params[layer].bias[idx];
        const double saved = target;
        target = saved + step;
        const double up = loss_at(probe);
        const bool up_same = region_at(probe) == base_region;
        target = saved - step;
        const double down = loss_at(probe);
        const bool down_same = region_at(probe) == base_region;
        target = saved;
        if (!up_same || !down_same) {
          ++out.kinks;
          continue;
        }
        out.add(grad[idx], (up - down) / (2.0 * step));
        ++taken;
      }
    }
  }
  return out;
}

/// Central differences of sum_k w_k * logit_k against
/// weighted_logit_input_gradient, on `count` sampled input coordinates.
inline GradCheck check_input_gradients(const nn::Model64& model, const nn::Tensor<double>& input,
                                       const std::vector<double>& weights, std::size_t count, double step,
                                       std::uint64_t seed) {
  const auto [grad, logits] = nn::weighted_logit_input_gradient(model, input, std::span<const double>(weights));
  auto score = [&](const nn::Tensor<double>& x) {
    const auto f = nn::forward(model, x);
    double s = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * f.logits[k];
    return s;
  };
  std::vector<std::size_t> batch_shape = input.shape();
  batch_shape.insert(batch_shape.begin(), 1);
  auto region_at = [&](const nn::Tensor<double>& x) { return nn::linear_region(model, x.reshaped(batch_shape)); };
  const auto base_region = region_at(input);
  GradCheck out;
  Rng rng(seed);
  nn::Tensor<double> x = input;
  std::size_t taken = 0;
  for (std::size_t attempt = 0; taken < count && attempt < 50 * count; ++attempt) {
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(x.size()) - 1));
    const double saved = x[idx];
    x[idx] = saved + step;
    const double up = score(x);
    const bool up_same = region_at(x) == base_region;
    x[idx] = saved - step;
    const double down = score(x);
    const bool down_same = region_at(x) == base_region;
    x[idx] = saved;
    if (!up_same || !down_same) {
      ++out.kinks;
      continue;
    }
    out.add(grad[idx], (up - down) / (2.0 * step));
    ++taken;
  }
  return out;
}

/// Two-class linear model logits_k = w_k . x + b_k over a 1x1xD input.
struct LinearPair {
  std::vector<double> w0, w1;
  double b0 = 0.0, b1 = 0.0;

  nn::Model64 model() const {
    const int d = static_cast<int>(w0.size());
    auto m = nn::make_model<double>({1, 1, d}, 2, {nn::LayerSpec::dense(2), nn::LayerSpec::softmax_output()}, 1);
    for (int i = 0; i < d; ++i) {
      m.params[0].weights[static_cast<std::size_t>(i)] = w0[static_cast<std::size_t>(i)];
      m.params[0].weights[static_cast<std::size_t>(d + i)] = w1[static_cast<std::size_t>(i)];
    }
    m.params[0].bias[0] = b0;
    m.params[0].bias[1] = b1;
    return m;
  }

  /// (1 + overshoot) times the orthogonal projection step of x onto the
  /// hyperplane (w1 - w0) . x + (b1 - b0) = 0.
  std::vector<double> projection(const std::vector<double>& x, double overshoot) const {
    double f = b1 - b0;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = w1[i] - w0[i];
      f += w * x[i];
      norm2 += w * w;
    }
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = -(1.0 + overshoot) * f / norm2 * (w1[i] - w0[i]);
    return r;
  }
};

inline double relative_l2(std::span<const double> got, std::span<const double> want) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    diff += (got[i] - want[i]) * (got[i] - want[i]);
    ref += want[i] * want[i];
  }
  return std::sqrt(diff) / std::sqrt(ref);
}

}  // namespace bd::testing
