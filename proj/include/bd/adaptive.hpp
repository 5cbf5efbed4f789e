#pragma once

// Targeted adaptive perturbations: a targeted DeepFool step routine and the
// universal class-to-target mask built from it under an l-infinity bound.

#include "bd/masks.hpp"
#include "bd/nn.hpp"

namespace bd::adaptive {

struct DeepFoolParams {
  int target = 0;
  int source = 0;
  int max_iterations = 50;
  double overshoot = 0.02;
};

struct UniversalParams {
  double xi = 10.0;  ///< l-infinity radius; +inf for an unconstrained mask
  int max_passes = 10;
  DeepFoolParams deepfool;
};

/// Perturbation (same shape as x, pixel scale) that moves x across the
/// boundary between the source and target logits. Returns zeros when x is
/// already classified as the target. Throws ErrorCode::degenerate_gradient
/// when the logit-difference gradient vanishes.
template <class T>
nn::Tensor<T> targeted_deepfool(const nn::BasicModel<T>& model, const nn::Tensor<T>& x,
                                const DeepFoolParams& params);

/// Element-wise clamp to [-xi, xi], the Euclidean projection onto the ball.
template <class T>
nn::Tensor<T> project_linf(const nn::Tensor<T>& v, double xi);

struct UniversalStats {
  int passes = 0;
  int deepfool_calls = 0;
  int degenerate_skips = 0;
};

/// Sequentially refines one perturbation over the class-c samples, invoking
/// targeted DeepFool for every sample not yet sent to the target and
/// projecting the running sum back onto the xi ball.
masks::PerturbationMask build_universal_mask(const nn::Model& model, std::span<const nn::Tensor<float>> samples,
                                             const UniversalParams& params, UniversalStats* stats = nullptr);

masks::PerturbationMask build_universal_mask(const nn::Model& model, std::span<const Image> samples,
                                             const UniversalParams& params, UniversalStats* stats = nullptr);

}  // namespace bd::adaptive
