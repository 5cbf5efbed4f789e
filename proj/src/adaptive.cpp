#include "bd/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bd::adaptive {

namespace {

template <class T>
int argmax(const nn::Tensor<T>& logits) {
  auto v = logits.values();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

void validate(const DeepFoolParams& p, int class_count) {
  if (p.target < 0 || p.target >= class_count || p.source < 0 || p.source >= class_count) {
    throw Error(ErrorCode::class_index, "deepfool classes out of range");
  }
  if (p.target == p.source) throw Error(ErrorCode::parameter, "target and source class must differ");
  if (p.max_iterations < 1) throw Error(ErrorCode::parameter, "max iterations must be at least 1");
  if (!(p.overshoot >= 0.0)) throw Error(ErrorCode::parameter, "overshoot must be non-negative");
}

}  // namespace

template <class T>
nn::Tensor<T> targeted_deepfool(const nn::BasicModel<T>& model, const nn::Tensor<T>& x,
                                const DeepFoolParams& params) {
  validate(params, model.class_count);
  std::vector<T> direction(static_cast<std::size_t>(model.class_count), T(0));
  direction[static_cast<std::size_t>(params.target)] = T(1);
  direction[static_cast<std::size_t>(params.source)] = T(-1);

  nn::Tensor<T> total(x.shape(), T(0));
  auto [w, logits] = nn::weighted_logit_input_gradient(model, x, std::span<const T>(direction));
  if (argmax(logits) == params.target) return total;

  const T scale = static_cast<T>(1.0 + params.overshoot);
  nn::Tensor<T> point = x;
  for (int iter = 0; iter < params.max_iterations; ++iter) {
    const T f = logits[static_cast<std::size_t>(params.target)] - logits[static_cast<std::size_t>(params.source)];
    T norm2 = 0;
    for (T g : w.values()) norm2 += g * g;
    if (!(std::sqrt(norm2) >= T(1e-12))) {
      throw Error(ErrorCode::degenerate_gradient, "logit-difference gradient vanished");
    }
    const T step = std::abs(f) / norm2;
    for (std::size_t j = 0; j < total.size(); ++j) {
      total[j] += step * w[j];
      point[j] = x[j] + scale * total[j];
    }
    std::tie(w, logits) = nn::weighted_logit_input_gradient(model, point, std::span<const T>(direction));
    if (argmax(logits) == params.target) break;
  }
  for (auto& v : total.values()) v *= scale;
  return total;
}

template <class T>
nn::Tensor<T> project_linf(const nn::Tensor<T>& v, double xi) {
  if (!(xi >= 0.0)) throw Error(ErrorCode::parameter, "projection radius must be non-negative");
  nn::Tensor<T> out = v;
  if (std::isinf(xi)) return out;
  const T bound = static_cast<T>(xi);
  for (auto& e : out.values()) e = std::clamp(e, -bound, bound);
  return out;
}

masks::PerturbationMask build_universal_mask(const nn::Model& model, std::span<const nn::Tensor<float>> samples,
                                             const UniversalParams& params, UniversalStats* stats) {
  if (samples.empty()) throw Error(ErrorCode::empty_input, "universal mask needs at least one sample");
  if (!(params.xi >= 0.0)) throw Error(ErrorCode::parameter, "xi must be non-negative");
  if (params.max_passes < 1) throw Error(ErrorCode::parameter, "pass budget must be at least 1");
  validate(params.deepfool, model.class_count);
  const Shape3 s = model.input_shape;
  for (const auto& x : samples) {
    if (x.shape() != std::vector<std::size_t>{static_cast<std::size_t>(s.height), static_cast<std::size_t>(s.width),
                                              static_cast<std::size_t>(s.channels)}) {
      throw Error(ErrorCode::input_shape, "sample shape does not match the model input");
    }
  }

  UniversalStats local;
  nn::Tensor<float> v(samples.front().shape(), 0.0f);
  for (int pass = 0; pass < params.max_passes; ++pass) {
    ++local.passes;
    bool updated = false;
    for (const auto& x : samples) {
      nn::Tensor<float> shifted = x;
      for (std::size_t j = 0; j < shifted.size(); ++j) shifted[j] += v[j];
      if (nn::forward(model, shifted).prediction == params.deepfool.target) continue;
      nn::Tensor<float> delta;
      try {
        ++local.deepfool_calls;
        delta = targeted_deepfool(model, shifted, params.deepfool);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_gradient) throw;
        ++local.degenerate_skips;
        continue;
      }
      for (std::size_t j = 0; j < v.size(); ++j) v[j] += delta[j];
      v = project_linf(v, params.xi);
      updated = true;
    }
    // A pass without updates leaves v unchanged, so later passes would too.
    if (!updated) break;
  }
  if (stats) *stats = local;

  nlohmann::json meta = {{"source", params.deepfool.source},
                         {"target", params.deepfool.target},
                         {"max_passes", params.max_passes},
                         {"max_iterations", params.deepfool.max_iterations},
                         {"overshoot", params.deepfool.overshoot},
                         {"samples", samples.size()}};
  if (std::isinf(params.xi)) {
    meta["xi"] = "inf";
  } else {
    meta["xi"] = params.xi;
  }
  return masks::from_tensor(v, masks::MaskKind::adaptive, std::move(meta));
}

masks::PerturbationMask build_universal_mask(const nn::Model& model, std::span<const Image> samples,
                                             const UniversalParams& params, UniversalStats* stats) {
  std::vector<nn::Tensor<float>> tensors;
  tensors.reserve(samples.size());
  for (const auto& img : samples) tensors.push_back(nn::to_tensor(img));
  return build_universal_mask(model, std::span<const nn::Tensor<float>>(tensors), params, stats);
}

template nn::Tensor<float> targeted_deepfool<float>(const nn::BasicModel<float>&, const nn::Tensor<float>&,
                                                    const DeepFoolParams&);
template nn::Tensor<double> targeted_deepfool<double>(const nn::BasicModel<double>&, const nn::Tensor<double>&,
                                                      const DeepFoolParams&);
template nn::Tensor<float> project_linf<float>(const nn::Tensor<float>&, double);
template nn::Tensor<double> project_linf<double>(const nn::Tensor<double>&, double);

}  // namespace bd::adaptive
