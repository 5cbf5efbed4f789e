#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "bd/nn.hpp"

namespace bd::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

std::string layer_name(std::size_t i) { return "layer " + std::to_string(i); }

}  // namespace

std::vector<Shape3> infer_shapes(const Shape3& input, std::span<const LayerSpec> layers) {
  if (input.height <= 0 || input.width <= 0 || input.channels <= 0) {
    throw Error(ErrorCode::architecture, "input shape must be positive");
  }
  std::vector<Shape3> out;
  out.reserve(layers.size());
  Shape3 cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::maxpool: {
        if (l.kernel <= 0 || l.stride <= 0) {
          throw Error(ErrorCode::architecture, layer_name(i) + ": kernel and stride must be positive");
        }
        if (l.kind == LayerKind::conv && l.units <= 0) {
          throw Error(ErrorCode::architecture, layer_name(i) + ": conv needs a positive filter count");
        }
        if (cur.height < l.kernel || cur.width < l.kernel) {
          throw Error(ErrorCode::architecture,
                      layer_name(i) + ": window larger than input " + to_string(cur));
        }
        const int ho = (cur.height - l.kernel) / l.stride + 1;
        const int wo = (cur.width - l.kernel) / l.stride + 1;
        cur = {ho, wo, l.kind == LayerKind::conv ? l.units : cur.channels};
        break;
      }
      case LayerKind::dense:
        if (l.units <= 0) throw Error(ErrorCode::architecture, layer_name(i) + ": dense needs units");
        cur = {1, 1, l.units};
        break;
      case LayerKind::relu:
      case LayerKind::softmax_output:
        break;
      case LayerKind::dropout:
        if (!(l.keep_prob > 0.0 && l.keep_prob <= 1.0)) {
          throw Error(ErrorCode::architecture, layer_name(i) + ": keep probability outside (0,1]");
        }
        break;
      case LayerKind::concat_skip: {
        if (l.skip_source < 0 || static_cast<std::size_t>(l.skip_source) >= i) {
          throw Error(ErrorCode::architecture, layer_name(i) + ": skip source must be an earlier layer");
        }
        const Shape3& src = out[static_cast<std::size_t>(l.skip_source)];
        cur = {1, 1, static_cast<int>(src.size() + cur.size())};
        break;
      }
      default:
        throw Error(ErrorCode::architecture, layer_name(i) + ": unknown layer kind");
    }
    out.push_back(cur);
  }
  return out;
}

template <class T>
std::size_t BasicModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.weights.size() + p.bias.size();
  return n;
}

template <class T>
BasicModel<T> make_model(const Shape3& input, int class_count, std::vector<LayerSpec> layers,
                         int input_divisor) {
  const auto shapes = infer_shapes(input, layers);
  if (shapes.empty() || shapes.back().size() != static_cast<std::size_t>(class_count) ||
      class_count < 1) {
    throw Error(ErrorCode::architecture, "final layer width must equal the class count");
  }
  if (input_divisor <= 0) throw Error(ErrorCode::architecture, "input divisor must be positive");
  BasicModel<T> model{input, class_count, input_divisor, std::move(layers), {}};
  Shape3 prev = input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    LayerParams<T> p;
    if (l.kind == LayerKind::conv) {
      p.weights = Tensor<T>({static_cast<std::size_t>(l.units), static_cast<std::size_t>(l.kernel),
                             static_cast<std::size_t>(l.kernel), static_cast<std::size_t>(prev.channels)});
      p.bias = Tensor<T>({static_cast<std::size_t>(l.units)});
    } else if (l.kind == LayerKind::dense) {
      p.weights = Tensor<T>({static_cast<std::size_t>(l.units), prev.size()});
      p.bias = Tensor<T>({static_cast<std::size_t>(l.units)});
    }
    model.params.push_back(std::move(p));
    prev = shapes[i];
  }
  return model;
}

template <class T>
void initialize(BasicModel<T>& model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : model.params) {
    for (auto& w : p.weights.values()) w = static_cast<T>(rng.truncated_normal(0.1));
    for (auto& b : p.bias.values()) b = static_cast<T>(0.1);
  }
}

template <class T>
GradientSet<T> zero_gradients(const BasicModel<T>& model) {
  GradientSet<T> g;
  g.reserve(model.params.size());
  for (const auto& p : model.params) {
    LayerParams<T> z;
    if (!p.weights.empty()) z.weights = Tensor<T>(p.weights.shape());
    if (!p.bias.empty()) z.bias = Tensor<T>(p.bias.shape());
    g.push_back(std::move(z));
  }
  return g;
}

namespace {

/// Activations of one forward pass, retained for the backward pass.
template <class T>
struct Trace {
  std::size_t batch = 0;
  std::vector<Shape3> shapes;           // output shape of each layer
  std::vector<std::vector<T>> acts;     // acts[0] is the scaled input; acts[i+1] is layer i output
  std::vector<std::vector<T>> cols;     // im2col matrices for conv layers
  std::vector<std::vector<std::uint32_t>> argmax;  // pool routing
  std::vector<std::vector<T>> drop;     // dropout multipliers
};

template <class T>
void conv_forward(const Shape3& in, const Shape3& out, const LayerSpec& l, const LayerParams<T>& p,
                  std::size_t batch, const std::vector<T>& x, std::vector<T>& cols, std::vector<T>& y) {
  const std::size_t k = static_cast<std::size_t>(l.kernel);
  const std::size_t c = static_cast<std::size_t>(in.channels);
  const std::size_t kk = k * k * c;
  const std::size_t positions = static_cast<std::size_t>(out.height) * out.width;
  cols.resize(batch * positions * kk);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* img = x.data() + b * in.size();
    for (int oy = 0; oy < out.height; ++oy) {
      for (int ox = 0; ox < out.width; ++ox) {
        T* row = cols.data() + (b * positions + static_cast<std::size_t>(oy) * out.width + ox) * kk;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::size_t iy = static_cast<std::size_t>(oy * l.stride) + ky;
          const T* src = img + (iy * in.width + static_cast<std::size_t>(ox * l.stride)) * c;
          std::copy(src, src + k * c, row + ky * k * c);
        }
      }
    }
  }
  const auto rows = static_cast<Eigen::Index>(batch * positions);
  const auto filters = static_cast<Eigen::Index>(l.units);
  y.resize(batch * out.size());
  ConstMatMap<T> X(cols.data(), rows, static_cast<Eigen::Index>(kk));
  ConstMatMap<T> W(p.weights.data(), filters, static_cast<Eigen::Index>(kk));
  Eigen::Map<const RowVec<T>> bias(p.bias.data(), filters);
  MatMap<T> Y(y.data(), rows, filters);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += bias;
}

/// out[j] += sum_i m[i][j], summed row by row so the order never depends on
/// buffer alignment.
template <class T>
void add_column_sums(const T* m, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = m + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j];
  }
}

template <class T>
void conv_backward(const Shape3& in, const Shape3& out, const LayerSpec& l, const LayerParams<T>& p,
                   std::size_t batch, const std::vector<T>& cols, const std::vector<T>& dy,
                   LayerParams<T>* grad, std::vector<T>* dx) {
  const std::size_t k = static_cast<std::size_t>(l.kernel);
  const std::size_t c = static_cast<std::size_t>(in.channels);
  const std::size_t kk = k * k * c;
  const std::size_t positions = static_cast<std::size_t>(out.height) * out.width;
  const auto rows = static_cast<Eigen::Index>(batch * positions);
  const auto filters = static_cast<Eigen::Index>(l.units);
  ConstMatMap<T> dY(dy.data(), rows, filters);
  ConstMatMap<T> W(p.weights.data(), filters, static_cast<Eigen::Index>(kk));
  if (grad) {
    ConstMatMap<T> X(cols.data(), rows, static_cast<Eigen::Index>(kk));
    MatMap<T> dW(grad->weights.data(), filters, static_cast<Eigen::Index>(kk));
    dW.noalias() += dY.transpose() * X;
    add_column_sums(dy.data(), static_cast<std::size_t>(rows), static_cast<std::size_t>(filters), grad->bias.data());
  }
  if (dx) {
    RowMat<T> dcols = dY * W;
    for (std::size_t b = 0; b < batch; ++b) {
      T* img = dx->data() + b * in.size();
      for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
          const T* row = dcols.data() + (b * positions + static_cast<std::size_t>(oy) * out.width + ox) * kk;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::size_t iy = static_cast<std::size_t>(oy * l.stride) + ky;
            T* dst = img + (iy * in.width + static_cast<std::size_t>(ox * l.stride)) * c;
            const T* src = row + ky * k * c;
            for (std::size_t j = 0; j < k * c; ++j) dst[j] += src[j];
          }
        }
      }
    }
  }
}

template <class T>
void pool_forward(const Shape3& in, const Shape3& out, const LayerSpec& l, std::size_t batch,
                  const std::vector<T>& x, std::vector<std::uint32_t>& argmax, std::vector<T>& y) {
  y.resize(batch * out.size());
  argmax.resize(y.size());
  const int c = in.channels;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t in_base = b * in.size();
    const std::size_t out_base = b * out.size();
    for (int oy = 0; oy < out.height; ++oy) {
      for (int ox = 0; ox < out.width; ++ox) {
        for (int ch = 0; ch < c; ++ch) {
          // Strict comparison in row-major window order: ties go to the first maximum.
          std::size_t best = 0;
          T best_val = -std::numeric_limits<T>::infinity();
          for (int ky = 0; ky < l.kernel; ++ky) {
            for (int kx = 0; kx < l.kernel; ++kx) {
              const std::size_t idx =
                  in_base + (static_cast<std::size_t>(oy * l.stride + ky) * in.width + (ox * l.stride + kx)) * c + ch;
              if (x[idx] > best_val) {
                best_val = x[idx];
                best = idx;
              }
            }
          }
          const std::size_t o = out_base + (static_cast<std::size_t>(oy) * out.width + ox) * c + ch;
          y[o] = best_val;
          argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
}

template <class T>
void dense_forward(std::size_t in_size, const LayerSpec& l, const LayerParams<T>& p, std::size_t batch,
                   const std::vector<T>& x, std::vector<T>& y) {
  const auto units = static_cast<Eigen::Index>(l.units);
  y.resize(batch * static_cast<std::size_t>(l.units));
  ConstMatMap<T> X(x.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in_size));
  ConstMatMap<T> W(p.weights.data(), units, static_cast<Eigen::Index>(in_size));
  Eigen::Map<const RowVec<T>> bias(p.bias.data(), units);
  MatMap<T> Y(y.data(), static_cast<Eigen::Index>(batch), units);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += bias;
}

template <class T>
void dense_backward(std::size_t in_size, const LayerSpec& l, const LayerParams<T>& p, std::size_t batch,
                    const std::vector<T>& x, const std::vector<T>& dy, LayerParams<T>* grad,
                    std::vector<T>* dx) {
  const auto units = static_cast<Eigen::Index>(l.units);
  const auto n = static_cast<Eigen::Index>(batch);
  const auto d = static_cast<Eigen::Index>(in_size);
  ConstMatMap<T> dY(dy.data(), n, units);
  if (grad) {
    ConstMatMap<T> X(x.data(), n, d);
    MatMap<T> dW(grad->weights.data(), units, d);
    dW.noalias() += dY.transpose() * X;
    add_column_sums(dy.data(), batch, static_cast<std::size_t>(units), grad->bias.data());
  }
  if (dx) {
    ConstMatMap<T> W(p.weights.data(), units, d);
    MatMap<T> dX(dx->data(), n, d);
    dX.noalias() += dY * W;
  }
}

template <class T>
Trace<T> run_forward(const BasicModel<T>& model, const Tensor<T>& batch_input, bool train,
                     std::uint64_t seed, bool keep_cols) {
  const auto& shape = batch_input.shape();
  if (shape.size() != 4 || shape[1] != static_cast<std::size_t>(model.input_shape.height) ||
      shape[2] != static_cast<std::size_t>(model.input_shape.width) ||
      shape[3] != static_cast<std::size_t>(model.input_shape.channels)) {
    throw Error(ErrorCode::input_shape, "input does not match model input " + to_string(model.input_shape));
  }
  Trace<T> tr;
  tr.batch = shape[0];
  tr.shapes = infer_shapes(model.input_shape, model.layers);
  const std::size_t L = model.layers.size();
  tr.acts.resize(L + 1);
  tr.cols.resize(L);
  tr.argmax.resize(L);
  tr.drop.resize(L);
  const T scale = T(1) / static_cast<T>(model.input_divisor);
  tr.acts[0].resize(batch_input.size());
  std::transform(batch_input.values().begin(), batch_input.values().end(), tr.acts[0].begin(),
                 [scale](T v) { return v * scale; });

  Shape3 in = model.input_shape;
  for (std::size_t i = 0; i < L; ++i) {
    const LayerSpec& l = model.layers[i];
    const Shape3& out = tr.shapes[i];
    const std::vector<T>& x = tr.acts[i];
    std::vector<T>& y = tr.acts[i + 1];
    switch (l.kind) {
      case LayerKind::conv:
        conv_forward(in, out, l, model.params[i], tr.batch, x, tr.cols[i], y);
        if (!keep_cols) std::vector<T>().swap(tr.cols[i]);
        break;
      case LayerKind::maxpool:
        pool_forward(in, out, l, tr.batch, x, tr.argmax[i], y);
        break;
      case LayerKind::dense:
        dense_forward(in.size(), l, model.params[i], tr.batch, x, y);
        break;
      case LayerKind::relu:
        y.resize(x.size());
        std::transform(x.begin(), x.end(), y.begin(), [](T v) { return v > T(0) ? v : T(0); });
        break;
      case LayerKind::dropout:
        if (train && l.keep_prob < 1.0) {
          Rng rng(mix_seed(seed, i));
          const T inv_keep = T(1) / static_cast<T>(l.keep_prob);
          tr.drop[i].resize(x.size());
          y.resize(x.size());
          for (std::size_t j = 0; j < x.size(); ++j) {
            tr.drop[i][j] = rng.uniform() < l.keep_prob ? inv_keep : T(0);
            y[j] = x[j] * tr.drop[i][j];
          }
        } else {
          y = x;
        }
        break;
      case LayerKind::concat_skip: {
        const auto src_idx = static_cast<std::size_t>(l.skip_source);
        const std::vector<T>& s = tr.acts[src_idx + 1];
        const std::size_t ns = tr.shapes[src_idx].size();
        const std::size_t nx = in.size();
        y.resize(tr.batch * (ns + nx));
        for (std::size_t b = 0; b < tr.batch; ++b) {
          std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(b * ns), ns,
                      y.begin() + static_cast<std::ptrdiff_t>(b * (ns + nx)));
          std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(b * nx), nx,
                      y.begin() + static_cast<std::ptrdiff_t>(b * (ns + nx) + ns));
        }
        break;
      }
      case LayerKind::softmax_output:
        y = x;
        break;
    }
    in = out;
  }
  return tr;
}

/// Reverse pass from d(objective)/d(logits). Accumulates parameter gradients
/// into `grads` when given and returns the input gradient when requested.
template <class T>
std::vector<T> run_backward(const BasicModel<T>& model, Trace<T>& tr, std::vector<T> dlogits,
                            GradientSet<T>* grads, bool want_input) {
  const std::size_t L = model.layers.size();
  std::vector<std::vector<T>> g(L + 1);
  g[L] = std::move(dlogits);
  auto ensure = [&](std::size_t idx) -> std::vector<T>& {
    if (g[idx].empty()) g[idx].assign(tr.acts[idx].size(), T(0));
    return g[idx];
  };
  for (std::size_t ii = L; ii-- > 0;) {
    const LayerSpec& l = model.layers[ii];
    if (g[ii + 1].empty()) continue;  // no gradient reaches this layer
    const std::vector<T>& dy = g[ii + 1];
    const Shape3 in = ii == 0 ? model.input_shape : tr.shapes[ii - 1];
    const Shape3& out = tr.shapes[ii];
    const bool need_dx = ii > 0 || want_input;
    switch (l.kind) {
      case LayerKind::conv:
        conv_backward(in, out, l, model.params[ii], tr.batch, tr.cols[ii], dy,
                      grads ? &(*grads)[ii] : nullptr, need_dx ? &ensure(ii) : nullptr);
        break;
      case LayerKind::dense:
        dense_backward(in.size(), l, model.params[ii], tr.batch, tr.acts[ii], dy,
                       grads ? &(*grads)[ii] : nullptr, need_dx ? &ensure(ii) : nullptr);
        break;
      case LayerKind::maxpool:
        if (need_dx) {
          auto& dx = ensure(ii);
          for (std::size_t j = 0; j < dy.size(); ++j) dx[tr.argmax[ii][j]] += dy[j];
        }
        break;
      case LayerKind::relu:
        if (need_dx) {
          auto& dx = ensure(ii);
          const auto& y = tr.acts[ii + 1];
          for (std::size_t j = 0; j < dy.size(); ++j) {
            if (y[j] > T(0)) dx[j] += dy[j];
          }
        }
        break;
      case LayerKind::dropout:
        if (need_dx) {
          auto& dx = ensure(ii);
          if (tr.drop[ii].empty()) {
            for (std::size_t j = 0; j < dy.size(); ++j) dx[j] += dy[j];
          } else {
            for (std::size_t j = 0; j < dy.size(); ++j) dx[j] += dy[j] * tr.drop[ii][j];
          }
        }
        break;
      case LayerKind::concat_skip: {
        const auto src_idx = static_cast<std::size_t>(l.skip_source);
        const std::size_t ns = tr.shapes[src_idx].size();
        const std::size_t nx = in.size();
        auto& ds = ensure(src_idx + 1);
        for (std::size_t b = 0; b < tr.batch; ++b) {
          for (std::size_t j = 0; j < ns; ++j) ds[b * ns + j] += dy[b * (ns + nx) + j];
        }
        if (need_dx) {
          auto& dx = ensure(ii);
          for (std::size_t b = 0; b < tr.batch; ++b) {
            for (std::size_t j = 0; j < nx; ++j) dx[b * nx + j] += dy[b * (ns + nx) + ns + j];
          }
        }
        break;
      }
      case LayerKind::softmax_output:
        if (need_dx) {
          auto& dx = ensure(ii);
          for (std::size_t j = 0; j < dy.size(); ++j) dx[j] += dy[j];
        }
        break;
    }
  }
  if (!want_input) return {};
  std::vector<T> dx = std::move(ensure(0));
  const T scale = T(1) / static_cast<T>(model.input_divisor);
  for (auto& v : dx) v *= scale;
  return dx;
}

template <class T>
std::vector<T> softmax_row(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  const T m = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - m);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <class T>
Tensor<T> single_as_batch(const BasicModel<T>& model, const Tensor<T>& input) {
  const auto& s = input.shape();
  if (s.size() != 3 || s[0] != static_cast<std::size_t>(model.input_shape.height) ||
      s[1] != static_cast<std::size_t>(model.input_shape.width) ||
      s[2] != static_cast<std::size_t>(model.input_shape.channels)) {
    throw Error(ErrorCode::input_shape, "input does not match model input " + to_string(model.input_shape));
  }
  return input.reshaped({1, s[0], s[1], s[2]});
}

}  // namespace

template <class T>
ForwardResult<T> forward(const BasicModel<T>& model, const Tensor<T>& input, bool train_mode,
                         std::uint64_t rng_seed) {
  auto tr = run_forward(model, single_as_batch(model, input), train_mode, rng_seed, false);
  const auto& out = tr.acts.back();
  ForwardResult<T> r;
  r.logits = Tensor<T>({out.size()}, out);
  r.probabilities = Tensor<T>({out.size()}, softmax_row<T>(out));
  r.prediction = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
  return r;
}

template <class T>
Tensor<T> logits_batch(const BasicModel<T>& model, const Tensor<T>& batch) {
  auto tr = run_forward(model, batch, false, 0, false);
  return Tensor<T>({tr.batch, static_cast<std::size_t>(model.class_count)}, std::move(tr.acts.back()));
}

template <class T>
LossAndGradients<T> loss_and_param_gradients(const BasicModel<T>& model, const Tensor<T>& inputs,
                                             std::span<const int> labels, std::uint64_t rng_seed,
                                             bool train_mode) {
  if (labels.empty()) throw Error(ErrorCode::empty_batch, "loss needs a nonempty batch");
  if (inputs.shape().empty() || inputs.shape()[0] != labels.size()) {
    throw Error(ErrorCode::input_shape, "label count does not match batch size");
  }
  const auto n_classes = static_cast<std::size_t>(model.class_count);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw Error(ErrorCode::class_index, "label out of range");
    }
  }
  auto tr = run_forward(model, inputs, train_mode, rng_seed, true);
  const auto& logits = tr.acts.back();
  const std::size_t B = labels.size();
  std::vector<T> dlogits(logits.size());
  T loss = 0;
  const T inv_b = T(1) / static_cast<T>(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::span<const T> row(logits.data() + b * n_classes, n_classes);
    const T m = *std::max_element(row.begin(), row.end());
    T sum = 0;
    for (T v : row) sum += std::exp(v - m);
    const T log_z = m + std::log(sum);
    loss += log_z - row[static_cast<std::size_t>(labels[b])];
    for (std::size_t k = 0; k < n_classes; ++k) {
      const T p = std::exp(row[k] - log_z);
      dlogits[b * n_classes + k] = (p - (static_cast<int>(k) == labels[b] ? T(1) : T(0))) * inv_b;
    }
  }
  LossAndGradients<T> out{loss * inv_b, zero_gradients(model)};
  run_backward(model, tr, std::move(dlogits), &out.grads, false);
  return out;
}

template <class T>
LossAndGradients<T> loss_and_param_gradients(const BasicModel<T>& model,
                                             std::span<const Example<T>> batch,
                                             std::uint64_t rng_seed) {
  if (batch.empty()) throw Error(ErrorCode::empty_batch, "loss needs a nonempty batch");
  const Shape3& s = model.input_shape;
  std::vector<T> packed;
  packed.reserve(batch.size() * s.size());
  std::vector<int> labels;
  for (const auto& ex : batch) {
    if (ex.input.size() != s.size()) throw Error(ErrorCode::input_shape, "example shape mismatch");
    packed.insert(packed.end(), ex.input.values().begin(), ex.input.values().end());
    labels.push_back(ex.label);
  }
  Tensor<T> inputs({batch.size(), static_cast<std::size_t>(s.height), static_cast<std::size_t>(s.width),
                    static_cast<std::size_t>(s.channels)},
                   std::move(packed));
  return loss_and_param_gradients(model, inputs, labels, rng_seed, true);
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> weighted_logit_input_gradient(const BasicModel<T>& model,
                                                              const Tensor<T>& input,
                                                              std::span<const T> weights) {
  if (weights.size() != static_cast<std::size_t>(model.class_count)) {
    throw Error(ErrorCode::class_index, "weight vector must have one entry per class");
  }
  auto tr = run_forward(model, single_as_batch(model, input), false, 0, false);
  Tensor<T> logits({tr.acts.back().size()}, tr.acts.back());
  auto dx = run_backward(model, tr, std::vector<T>(weights.begin(), weights.end()),
                         static_cast<GradientSet<T>*>(nullptr), true);
  return {Tensor<T>(input.shape(), std::move(dx)), std::move(logits)};
}

template <class T>
Tensor<T> class_score_input_gradient(const BasicModel<T>& model, const Tensor<T>& input,
                                     int class_index) {
  if (class_index < 0 || class_index >= model.class_count) {
    throw Error(ErrorCode::class_index, "class index out of range");
  }
  std::vector<T> w(static_cast<std::size_t>(model.class_count), T(0));
  w[static_cast<std::size_t>(class_index)] = T(1);
  return weighted_logit_input_gradient(model, input, std::span<const T>(w)).first;
}

std::vector<int> predict(const Model& model, std::span<const Image> images, std::size_t chunk) {
  std::vector<int> out;
  out.reserve(images.size());
  const auto n = static_cast<std::size_t>(model.class_count);
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    auto logits = logits_batch(model, to_batch(images.subspan(start, end - start)));
    for (std::size_t b = 0; b < end - start; ++b) {
      const float* row = logits.data() + b * n;
      out.push_back(static_cast<int>(std::max_element(row, row + n) - row));
    }
  }
  return out;
}

template <class T>
std::vector<std::uint32_t> linear_region(const BasicModel<T>& model, const Tensor<T>& batch, bool train_mode,
                                         std::uint64_t rng_seed) {
  const auto tr = run_forward(model, batch, train_mode, rng_seed, false);
  std::vector<std::uint32_t> region;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].kind == LayerKind::relu) {
      for (T v : tr.acts[i]) region.push_back(v > T(0) ? 1u : 0u);
    } else if (model.layers[i].kind == LayerKind::maxpool) {
      region.insert(region.end(), tr.argmax[i].begin(), tr.argmax[i].end());
    }
  }
  return region;
}

#define BD_INSTANTIATE(T)                                                                          \
  template struct BasicModel<T>;                                                                   \
  template BasicModel<T> make_model<T>(const Shape3&, int, std::vector<LayerSpec>, int);          \
  template void initialize<T>(BasicModel<T>&, std::uint64_t);                                      \
  template GradientSet<T> zero_gradients<T>(const BasicModel<T>&);                                 \
  template ForwardResult<T> forward<T>(const BasicModel<T>&, const Tensor<T>&, bool, std::uint64_t); \
  template Tensor<T> logits_batch<T>(const BasicModel<T>&, const Tensor<T>&);                      \
  template LossAndGradients<T> loss_and_param_gradients<T>(const BasicModel<T>&,                   \
                                                           std::span<const Example<T>>, std::uint64_t); \
  template LossAndGradients<T> loss_and_param_gradients<T>(                                        \
      const BasicModel<T>&, const Tensor<T>&, std::span<const int>, std::uint64_t, bool);          \
  template Tensor<T> class_score_input_gradient<T>(const BasicModel<T>&, const Tensor<T>&, int);   \
  template std::pair<Tensor<T>, Tensor<T>> weighted_logit_input_gradient<T>(                       \
      const BasicModel<T>&, const Tensor<T>&, std::span<const T>);                                   \
  template std::vector<std::uint32_t> linear_region<T>(const BasicModel<T>&, const Tensor<T>&, bool,   \
                                                       std::uint64_t);

BD_INSTANTIATE(float)
BD_INSTANTIATE(double)

#undef BD_INSTANTIATE

}  // namespace bd::nn
