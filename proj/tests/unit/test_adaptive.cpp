#include <doctest.h>

#include <cmath>
#include <limits>

#include "bd/adaptive.hpp"
#include "support/oracles.hpp"

using namespace bd;
using nn::LayerSpec;

namespace {

nn::Model small_relu_model(std::uint64_t seed) {
  auto m = nn::make_model<float>({6, 6, 1}, 3,
                                 {LayerSpec::conv(4, 3), LayerSpec::relu(), LayerSpec::maxpool(), LayerSpec::dense(3),
                                  LayerSpec::softmax_output()});
  nn::initialize(m, seed);
  return m;
}

nn::Tensor<float> pixels(std::uint64_t seed) {
  Rng rng(seed);
  nn::Tensor<float> x({6, 6, 1});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(0.0, 255.0));
  return x;
}

}  // namespace

TEST_CASE("linear two-class model matches the hyperplane projection") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform_int(0, 10));
    testing::LinearPair lp;
    for (std::size_t i = 0; i < d; ++i) {
      lp.w0.push_back(rng.uniform(-2.0, 2.0));
      lp.w1.push_back(rng.uniform(-2.0, 2.0));
    }
    lp.b0 = rng.uniform(-1.0, 1.0);
    lp.b1 = rng.uniform(-1.0, 1.0);
    const auto model = lp.model();

    std::vector<double> x(d);
    for (auto& v : x) v = rng.uniform(-5.0, 5.0);
    const nn::Tensor<double> xt({1, 1, d}, x);
    const bool already = nn::forward(model, xt).prediction == 1;

    adaptive::DeepFoolParams params{1, 0, 50, 0.02};
    const auto v = adaptive::targeted_deepfool(model, xt, params);
    if (already) {
      for (double e : v.values()) CHECK(e == 0.0);
      continue;
    }
    const auto want = lp.projection(x, 0.02);
    CHECK(testing::relative_l2(v.values(), want) <= 1e-6);

    std::vector<double> moved(d);
    for (std::size_t i = 0; i < d; ++i) moved[i] = x[i] + v[i];
    CHECK(nn::forward(model, nn::Tensor<double>({1, 1, d}, moved)).prediction == 1);
  }
}

TEST_CASE("input already in the target class gives a zero perturbation") {
  testing::LinearPair lp{{0.0, 0.0}, {1.0, 1.0}, 0.0, 0.0};
  const nn::Tensor<double> x({1, 1, 2}, {3.0, 4.0});
  const auto v = adaptive::targeted_deepfool(lp.model(), x, {1, 0, 50, 0.02});
  for (double e : v.values()) CHECK(e == 0.0);
}

TEST_CASE("first step is parallel to the logit-difference gradient") {
  const auto model = small_relu_model(5).cast<double>();
  const auto x = pixels(8).cast<double>();
  const int c = nn::forward(model, x).prediction;
  const int t = (c + 1) % 3;
  const auto v = adaptive::targeted_deepfool(model, x, {t, c, 1, 0.02});
  const auto gt = nn::class_score_input_gradient(model, x, t);
  const auto gc = nn::class_score_input_gradient(model, x, c);
  double dot = 0, nv = 0, nw = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double w = gt[i] - gc[i];
    dot += v[i] * w;
    nv += v[i] * v[i];
    nw += w * w;
  }
  CHECK(dot / std::sqrt(nv * nw) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("vanishing gradient difference raises degenerate_gradient") {
  // Identical class rows: the difference of scores has no gradient.
  testing::LinearPair lp{{1.0, 2.0}, {1.0, 2.0}, 1.0, 0.0};
  const nn::Tensor<double> x({1, 1, 2}, {1.0, 1.0});
  try {
    adaptive::targeted_deepfool(lp.model(), x, {1, 0, 50, 0.02});
    FAIL("expected a degenerate-gradient error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_gradient);
  }
}

TEST_CASE("deepfool parameter validation") {
  testing::LinearPair lp{{1.0}, {2.0}, 0.0, 0.0};
  const nn::Tensor<double> x({1, 1, 1}, {1.0});
  CHECK_THROWS_AS(adaptive::targeted_deepfool(lp.model(), x, {1, 1, 50, 0.02}), Error);
  CHECK_THROWS_AS(adaptive::targeted_deepfool(lp.model(), x, {1, 0, 0, 0.02}), Error);
  CHECK_THROWS_AS(adaptive::targeted_deepfool(lp.model(), x, {5, 0, 50, 0.02}), Error);
}

TEST_CASE("project_linf examples") {
  const nn::Tensor<double> v({2}, {15.0, -3.0});
  const auto p = adaptive::project_linf(v, 10.0);
  CHECK(p[0] == 10.0);
  CHECK(p[1] == -3.0);
  CHECK(adaptive::project_linf(v, 20.0) == v);
  const auto zero = adaptive::project_linf(v, 0.0);
  for (double e : zero.values()) CHECK(e == 0.0);
  CHECK(adaptive::project_linf(v, std::numeric_limits<double>::infinity()) == v);
}

TEST_CASE("project_linf is idempotent and bounded") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    nn::Tensor<double> v({16});
    for (auto& e : v.values()) e = rng.uniform(-50.0, 50.0);
    const double xi = rng.uniform(0.0, 30.0);
    const auto p = adaptive::project_linf(v, xi);
    CHECK(adaptive::project_linf(p, xi) == p);
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(std::abs(p[i]) <= xi);
      CHECK(std::abs(p[i]) <= std::abs(v[i]));
    }
  }
}

TEST_CASE("universal mask with xi=0 is zero") {
  const auto model = small_relu_model(3);
  std::vector<nn::Tensor<float>> samples = {pixels(1), pixels(2)};
  adaptive::UniversalParams up;
  up.xi = 0.0;
  up.deepfool = {1, 0, 50, 0.02};
  const auto mask = adaptive::build_universal_mask(model, std::span<const nn::Tensor<float>>(samples), up);
  for (float e : mask.values) CHECK(e == 0.0f);
  CHECK(mask.kind == masks::MaskKind::adaptive);
}

TEST_CASE("unconstrained single-sample mask reaches the target") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto model = small_relu_model(seed);
    const auto x = pixels(seed + 100);
    const int c = nn::forward(model, x).prediction;
    const int t = (c + 1) % 3;
    std::vector<nn::Tensor<float>> samples = {x};
    adaptive::UniversalParams up;
    up.xi = std::numeric_limits<double>::infinity();
    up.deepfool = {t, c, 50, 0.02};
    const auto mask = adaptive::build_universal_mask(model, std::span<const nn::Tensor<float>>(samples), up);
    nn::Tensor<float> moved = x;
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += mask.values[i];
    CHECK(nn::forward(model, moved).prediction == t);
  }
}

TEST_CASE("universal mask respects the xi bound exactly") {
  const auto model = small_relu_model(9);
  std::vector<nn::Tensor<float>> samples;
  for (std::uint64_t s = 0; s < 8; ++s) samples.push_back(pixels(200 + s));
  for (double xi : {0.5, 3.0, 12.0}) {
    adaptive::UniversalParams up;
    up.xi = xi;
    up.max_passes = 3;
    up.deepfool = {2, 0, 50, 0.02};
    adaptive::UniversalStats stats;
    const auto mask = adaptive::build_universal_mask(model, std::span<const nn::Tensor<float>>(samples), up, &stats);
    for (float e : mask.values) CHECK(std::abs(static_cast<double>(e)) <= xi);
    CHECK(mask.max_intensity <= xi);
    CHECK(stats.passes >= 1);
    CHECK(stats.passes <= 3);
  }
}

TEST_CASE("universal mask needs samples") {
  const auto model = small_relu_model(1);
  std::vector<nn::Tensor<float>> none;
  adaptive::UniversalParams up;
  up.deepfool = {1, 0, 50, 0.02};
  try {
    adaptive::build_universal_mask(model, std::span<const nn::Tensor<float>>(none), up);
    FAIL("expected an empty-input error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_input);
  }
}
