#pragma once

// Minimal deterministic CNN engine: layered models over HWC tensors, softmax
// cross-entropy, reverse-mode gradients for parameters and inputs, Adam/SGD.
//
// Everything is templated on the scalar type. `Model` (32-bit) is used for
// training and inference; `Model64` exists for finite-difference checks.

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "bd/common.hpp"

namespace bd::nn {

template <class T>
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T{});
  Tensor(std::vector<std::size_t> shape, std::vector<T> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  /// Same values under a new shape with an equal element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;
  bool all_finite() const;

  template <class U>
  Tensor<U> cast() const {
    if (shape_.empty()) return Tensor<U>();
    return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  std::vector<std::size_t> shape_;
  std::vector<T> values_;
};

enum class LayerKind : std::int32_t {
  conv = 1,
  maxpool = 2,
  dense = 3,
  relu = 4,
  dropout = 5,
  concat_skip = 6,
  softmax_output = 7,
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int units = 0;        ///< conv filters or dense outputs
  int kernel = 0;       ///< conv / pool window side
  int stride = 1;
  double keep_prob = 1.0;
  int skip_source = -1; ///< concat_skip: earlier layer whose output goes first

  static LayerSpec conv(int filters, int kernel, int stride = 1) {
    return {LayerKind::conv, filters, kernel, stride, 1.0, -1};
  }
  static LayerSpec maxpool(int kernel = 2, int stride = 2) {
    return {LayerKind::maxpool, 0, kernel, stride, 1.0, -1};
  }
  static LayerSpec dense(int units) { return {LayerKind::dense, units, 0, 1, 1.0, -1}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 1, 1.0, -1}; }
  static LayerSpec dropout(double keep) { return {LayerKind::dropout, 0, 0, 1, keep, -1}; }
  static LayerSpec concat_skip(int source) {
    return {LayerKind::concat_skip, 0, 0, 1, 1.0, source};
  }
  static LayerSpec softmax_output() { return {LayerKind::softmax_output, 0, 0, 1, 1.0, -1}; }

  bool has_params() const { return kind == LayerKind::conv || kind == LayerKind::dense; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Output shape of every layer, validating the chain. Dense and concat
/// outputs are reported as 1x1xN. Throws ErrorCode::architecture.
std::vector<Shape3> infer_shapes(const Shape3& input, std::span<const LayerSpec> layers);

/// Weights and bias of one layer; both empty for parameter-free layers.
/// Conv weights are [filters, kernel, kernel, in_channels]; dense weights are
/// [units, inputs], so row k of a final dense layer scores class k.
template <class T>
struct LayerParams {
  Tensor<T> weights;
  Tensor<T> bias;
};

template <class T>
struct BasicModel {
  Shape3 input_shape;
  int class_count = 0;
  /// Raw inputs are divided by this before the first layer (255 for pixels).
  int input_divisor = 255;
  std::vector<LayerSpec> layers;
  std::vector<LayerParams<T>> params;

  std::size_t parameter_count() const;

  template <class U>
  BasicModel<U> cast() const {
    BasicModel<U> out{input_shape, class_count, input_divisor, layers, {}};
    out.params.reserve(params.size());
    for (const auto& p : params) out.params.push_back({p.weights.template cast<U>(), p.bias.template cast<U>()});
    return out;
  }
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

/// Builds a model with zeroed parameters after validating the architecture.
template <class T>
BasicModel<T> make_model(const Shape3& input, int class_count, std::vector<LayerSpec> layers,
                         int input_divisor = 255);

/// Truncated-normal weights (stddev 0.1), biases 0.1.
template <class T>
void initialize(BasicModel<T>& model, std::uint64_t seed);

template <class T>
using GradientSet = std::vector<LayerParams<T>>;

template <class T>
GradientSet<T> zero_gradients(const BasicModel<T>& model);

template <class T>
struct ForwardResult {
  Tensor<T> logits;
  Tensor<T> probabilities;
  int prediction = 0;
};

/// Single input of shape {H, W, C}. Dropout only acts when train_mode is set.
template <class T>
ForwardResult<T> forward(const BasicModel<T>& model, const Tensor<T>& input, bool train_mode = false,
                         std::uint64_t rng_seed = 0);

/// Batched evaluation-mode logits for inputs of shape {B, H, W, C}.
template <class T>
Tensor<T> logits_batch(const BasicModel<T>& model, const Tensor<T>& batch);

template <class T>
struct Example {
  Tensor<T> input;
  int label = 0;
};

template <class T>
struct LossAndGradients {
  T loss{};
  GradientSet<T> grads;
};

/// Mean softmax cross-entropy over the batch (train mode, seeded dropout).
template <class T>
LossAndGradients<T> loss_and_param_gradients(const BasicModel<T>& model,
                                             std::span<const Example<T>> batch,
                                             std::uint64_t rng_seed);

/// Same as above over a packed {B, H, W, C} tensor.
template <class T>
LossAndGradients<T> loss_and_param_gradients(const BasicModel<T>& model, const Tensor<T>& inputs,
                                             std::span<const int> labels, std::uint64_t rng_seed,
                                             bool train_mode = true);

/// Gradient of the pre-softmax logit `class_index` with respect to the input.
template <class T>
Tensor<T> class_score_input_gradient(const BasicModel<T>& model, const Tensor<T>& input,
                                     int class_index);

/// Gradient of sum_k weights[k] * logit_k with respect to the input, along
/// with the logits at that input. One forward and one backward pass.
template <class T>
std::pair<Tensor<T>, Tensor<T>> weighted_logit_input_gradient(const BasicModel<T>& model,
                                                              const Tensor<T>& input,
                                                              std::span<const T> weights);

/// Piecewise-linear region of a {B, H, W, C} batch: relu on/off flags and
/// max-pool winners, layer by layer. Between two points with equal regions
/// (and equal dropout seeds) the network is smooth.
template <class T>
std::vector<std::uint32_t> linear_region(const BasicModel<T>& model, const Tensor<T>& batch, bool train_mode = false,
                                         std::uint64_t rng_seed = 0);

enum class OptimizerKind { adam, sgd };

template <class T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<LayerParams<T>> first_moment;
  std::vector<LayerParams<T>> second_moment;
  std::int64_t step = 0;
};

template <class T>
OptimizerState<T> make_optimizer(OptimizerKind kind, double learning_rate,
                                 const BasicModel<T>& model);

template <class T>
void optimizer_step(OptimizerState<T>& state, BasicModel<T>& model, const GradientSet<T>& grads);

/// Image (HWC bytes) as a real tensor on the 0-255 scale.
Tensor<float> to_tensor(const Image& image);
/// Packs images into a {B, H, W, C} tensor.
Tensor<float> to_batch(std::span<const Image> images);
Tensor<float> to_batch(std::span<const Image* const> images);

/// Evaluation-mode argmax predictions, computed in chunks.
std::vector<int> predict(const Model& model, std::span<const Image> images,
                         std::size_t chunk = 256);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace bd::nn
