#include <cmath>

#include "bd/nn.hpp"

namespace bd::nn {

namespace {

template <class T>
bool congruent(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape();
}

template <class T>
void check_congruence(const BasicModel<T>& model, const GradientSet<T>& grads) {
  if (grads.size() != model.params.size()) {
    throw Error(ErrorCode::congruence, "gradient set has a different layer count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!congruent(grads[i].weights, model.params[i].weights) ||
        !congruent(grads[i].bias, model.params[i].bias)) {
      throw Error(ErrorCode::congruence, "gradient shape differs from parameters at layer " + std::to_string(i));
    }
  }
}

}  // namespace

template <class T>
OptimizerState<T> make_optimizer(OptimizerKind kind, double learning_rate, const BasicModel<T>& model) {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::parameter, "learning rate must be positive");
  OptimizerState<T> s;
  s.kind = kind;
  s.learning_rate = learning_rate;
  if (kind == OptimizerKind::adam) {
    s.first_moment = zero_gradients(model);
    s.second_moment = zero_gradients(model);
  }
  return s;
}

template <class T>
void optimizer_step(OptimizerState<T>& state, BasicModel<T>& model, const GradientSet<T>& grads) {
  check_congruence(model, grads);
  ++state.step;
  if (state.kind == OptimizerKind::sgd) {
    const T lr = static_cast<T>(state.learning_rate);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto update = [lr](Tensor<T>& p, const Tensor<T>& g) {
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
      };
      update(model.params[i].weights, grads[i].weights);
      update(model.params[i].bias, grads[i].bias);
    }
    return;
  }

  if (state.first_moment.size() != grads.size()) {
    throw Error(ErrorCode::congruence, "optimizer state does not match the model");
  }
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(b1, t);
  const double correction2 = 1.0 - std::pow(b2, t);
  const double lr = state.learning_rate;
  const double eps = state.epsilon;
  auto update = [&](Tensor<T>& p, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v) {
    if (!congruent(m, p) || !congruent(v, p)) {
      throw Error(ErrorCode::congruence, "moment tensor shape differs from parameters");
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / correction1;
      const double v_hat = vj / correction2;
      p[j] = static_cast<T>(p[j] - lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  };
  for (std::size_t i = 0; i < grads.size(); ++i) {
    update(model.params[i].weights, grads[i].weights, state.first_moment[i].weights,
           state.second_moment[i].weights);
    update(model.params[i].bias, grads[i].bias, state.first_moment[i].bias, state.second_moment[i].bias);
  }
}

template OptimizerState<float> make_optimizer<float>(OptimizerKind, double, const BasicModel<float>&);
template OptimizerState<double> make_optimizer<double>(OptimizerKind, double, const BasicModel<double>&);
template void optimizer_step<float>(OptimizerState<float>&, BasicModel<float>&, const GradientSet<float>&);
template void optimizer_step<double>(OptimizerState<double>&, BasicModel<double>&, const GradientSet<double>&);

}  // namespace bd::nn
