#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bd/nn.hpp"
#include "support/oracles.hpp"

using namespace bd;
using nn::LayerSpec;

namespace {

nn::Tensor<double> vec3(double a, double b, double c) { return nn::Tensor<double>({1, 1, 3}, {a, b, c}); }

nn::Model64 identity_dense() {
  auto m = nn::make_model<double>({1, 1, 3}, 3, {LayerSpec::dense(3), LayerSpec::softmax_output()}, 1);
  for (int i = 0; i < 3; ++i) m.params[0].weights[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  return m;
}

}  // namespace

TEST_CASE("tensor rejects zero extents and mismatched value counts") {
  CHECK_THROWS_AS(nn::Tensor<float>({2, 0}), Error);
  try {
    nn::Tensor<float>({2, 2}, std::vector<float>{1, 2, 3});
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::shape);
  }
}

TEST_CASE("zero parameters give uniform probabilities") {
  auto m = nn::make_model<float>({6, 6, 1}, 4,
                                 {LayerSpec::conv(2, 3), LayerSpec::relu(), LayerSpec::dense(4),
                                  LayerSpec::softmax_output()});
  nn::Tensor<float> x({6, 6, 1}, 17.0f);
  const auto out = nn::forward(m, x);
  REQUIRE(out.probabilities.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) CHECK(out.probabilities[k] == doctest::Approx(0.25).epsilon(1e-7));
}

TEST_CASE("identity dense layer passes the input through as logits") {
  const auto m = identity_dense();
  const auto out = nn::forward(m, vec3(3, 1, -2));
  CHECK(out.logits[0] == 3.0);
  CHECK(out.logits[1] == 1.0);
  CHECK(out.logits[2] == -2.0);
  CHECK(out.prediction == 0);
  double sum = 0;
  for (double p : out.probabilities.values()) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    sum += p;
  }
  CHECK(std::abs(sum - 1.0) <= 1e-6);
}

TEST_CASE("forward rejects a mismatched input shape") {
  const auto m = identity_dense();
  try {
    nn::forward(m, nn::Tensor<double>({1, 1, 4}));
    FAIL("expected an input-shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::input_shape);
  }
}

TEST_CASE("infer_shapes validates the chain") {
  const std::vector<LayerSpec> ok = {LayerSpec::conv(6, 5), LayerSpec::relu(), LayerSpec::maxpool(),
                                     LayerSpec::dense(10), LayerSpec::softmax_output()};
  const auto shapes = nn::infer_shapes({28, 28, 1}, ok);
  CHECK(shapes[0] == Shape3{24, 24, 6});
  CHECK(shapes[2] == Shape3{12, 12, 6});
  CHECK(shapes[3] == Shape3{1, 1, 10});

  const std::vector<LayerSpec> too_big = {LayerSpec::conv(6, 9)};
  CHECK_THROWS_AS(nn::infer_shapes({5, 5, 1}, too_big), Error);
  const std::vector<LayerSpec> bad_skip = {LayerSpec::relu(), LayerSpec::concat_skip(3)};
  CHECK_THROWS_AS(nn::infer_shapes({5, 5, 1}, bad_skip), Error);
  const std::vector<LayerSpec> bad_keep = {LayerSpec::dropout(0.0)};
  CHECK_THROWS_AS(nn::infer_shapes({5, 5, 1}, bad_keep), Error);
}

TEST_CASE("max-pool ties send the gradient to the first maximum") {
  auto m = nn::make_model<double>({2, 2, 1}, 1, {LayerSpec::maxpool(), LayerSpec::softmax_output()}, 1);
  const nn::Tensor<double> x({2, 2, 1}, {5.0, 5.0, 5.0, 5.0});
  const auto g = nn::class_score_input_gradient(m, x, 0);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("perfect prediction gives zero loss and zero output gradients") {
  auto m = identity_dense();
  const nn::Tensor<double> x({1, 1, 1, 3}, {800.0, 0.0, 0.0});
  const std::vector<int> labels = {0};
  const auto r = nn::loss_and_param_gradients(m, x, std::span<const int>(labels), 1);
  CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-12));
  for (double g : r.grads[0].weights.values()) CHECK(std::abs(g) < 1e-12);
  for (double g : r.grads[0].bias.values()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("two-sample loss is the mean of the single-sample losses") {
  const auto m = testing::all_kinds_model(3);
  const auto batch = testing::random_input({8, 8, 2}, 11, 2);
  const std::vector<int> labels = {0, 2};
  const auto both = nn::loss_and_param_gradients(m, batch, std::span<const int>(labels), 9, false);
  double sum = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t n = 8 * 8 * 2;
    std::vector<double> one(batch.values().begin() + static_cast<std::ptrdiff_t>(b * n),
                            batch.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
    const nn::Tensor<double> x({1, 8, 8, 2}, one);
    const std::vector<int> l = {labels[b]};
    sum += nn::loss_and_param_gradients(m, x, std::span<const int>(l), 9, false).loss;
  }
  CHECK(both.loss == doctest::Approx(sum / 2.0).epsilon(1e-12));
}

TEST_CASE("empty batch and bad labels are rejected") {
  const auto m = identity_dense();
  std::vector<nn::Example<double>> none;
  try {
    nn::loss_and_param_gradients(m, std::span<const nn::Example<double>>(none), 1);
    FAIL("expected an empty-batch error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_batch);
  }
  std::vector<nn::Example<double>> bad = {{vec3(1, 2, 3), 5}};
  CHECK_THROWS_AS(nn::loss_and_param_gradients(m, std::span<const nn::Example<double>>(bad), 1), Error);
}

TEST_CASE("parameter gradients match central differences for every layer kind") {
  const auto m = testing::all_kinds_model(7);
  const auto batch = testing::random_input({8, 8, 2}, 21, 3);
  const std::vector<int> labels = {0, 1, 2};
  const auto check = testing::check_param_gradients(m, batch, labels, 80, 1e-3, 5);
  CHECK(check.coords >= 200);
  CHECK(check.max_error <= 1e-4);
}

TEST_CASE("input gradients match central differences") {
  const auto m = testing::all_kinds_model(8);
  const auto x = testing::random_input({8, 8, 2}, 31);
  const auto check = testing::check_input_gradients(m, x, {0.7, -1.3, 0.4}, 60, 1e-3, 6);
  CHECK(check.max_error <= 1e-4);

  // Single class score on 20 pixels, through the 255 divisor.
  auto pixel_model = m;
  pixel_model.input_divisor = 255;
  nn::Tensor<double> px = x;
  for (auto& v : px.values()) v = 127.5 + 100.0 * v;
  const auto single = testing::check_input_gradients(pixel_model, px, {0.0, 1.0, 0.0}, 20, 1e-3, 7);
  CHECK(single.max_error <= 1e-4);
}

TEST_CASE("class score gradient of a linear model is the weight row") {
  testing::LinearPair lp{{1.0, -2.0, 0.5}, {0.25, 4.0, -1.0}, 0.3, -0.1};
  const auto m = lp.model();
  const nn::Tensor<double> x({1, 1, 3}, {2.0, 1.0, -1.0});
  const auto g1 = nn::class_score_input_gradient(m, x, 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g1[i] == lp.w1[i]);
  const auto a = nn::class_score_input_gradient(m, x, 0);
  const auto b = nn::class_score_input_gradient(m, x, 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] - b[i] == 0.0);
  try {
    nn::class_score_input_gradient(m, x, 2);
    FAIL("expected a class-index error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::class_index);
  }
}

TEST_CASE("one Adam step from zero with unit gradient moves by the learning rate") {
  auto m = nn::make_model<double>({1, 1, 1}, 1, {LayerSpec::dense(1), LayerSpec::softmax_output()}, 1);
  auto state = nn::make_optimizer(nn::OptimizerKind::adam, 0.001, m);
  auto grads = nn::zero_gradients(m);
  grads[0].weights[0] = 1.0;
  nn::optimizer_step(state, m, grads);
  // m_hat = 1, v_hat = 1, so the step is lr * 1 / (1 + eps).
  const double expected = -0.001 / (1.0 + 1e-8);
  CHECK(m.params[0].weights[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(m.params[0].bias[0] == 0.0);
  CHECK(state.step == 1);
}

TEST_CASE("SGD is plain descent and zero gradients are a fixed point") {
  auto m = nn::make_model<double>({1, 1, 1}, 1, {LayerSpec::dense(1), LayerSpec::softmax_output()}, 1);
  m.params[0].weights[0] = 1.0;
  auto state = nn::make_optimizer(nn::OptimizerKind::sgd, 0.1, m);
  auto grads = nn::zero_gradients(m);
  nn::optimizer_step(state, m, grads);
  CHECK(m.params[0].weights[0] == 1.0);
  grads[0].weights[0] = 2.0;
  nn::optimizer_step(state, m, grads);
  CHECK(m.params[0].weights[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(state.step == 2);
}

TEST_CASE("optimizer rejects incongruent gradients and bad learning rates") {
  auto m = nn::make_model<double>({1, 1, 2}, 2, {LayerSpec::dense(2), LayerSpec::softmax_output()}, 1);
  auto state = nn::make_optimizer(nn::OptimizerKind::adam, 0.001, m);
  auto grads = nn::zero_gradients(m);
  grads[0].weights = nn::Tensor<double>({3});
  try {
    nn::optimizer_step(state, m, grads);
    FAIL("expected a congruence error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::congruence);
  }
  CHECK_THROWS_AS(nn::make_optimizer(nn::OptimizerKind::sgd, 0.0, m), Error);
}

TEST_CASE("evaluation forward is bit-deterministic and dropout follows its seed") {
  const auto m = testing::all_kinds_model(12);
  const auto x = testing::random_input({8, 8, 2}, 3);
  CHECK(nn::forward(m, x).logits == nn::forward(m, x).logits);
  CHECK(nn::forward(m, x, true, 5).logits == nn::forward(m, x, true, 5).logits);
  CHECK_FALSE(nn::forward(m, x, true, 5).logits == nn::forward(m, x, true, 6).logits);
}

TEST_CASE("initialisation is seed-deterministic and truncated") {
  auto a = nn::make_model<float>({8, 8, 1}, 3, {LayerSpec::conv(4, 3), LayerSpec::dense(3), LayerSpec::softmax_output()});
  auto b = a;
  nn::initialize(a, 5);
  nn::initialize(b, 5);
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].weights == b.params[i].weights);
    for (float w : a.params[i].weights.values()) CHECK(std::abs(w) <= 0.2f);
    for (float v : a.params[i].bias.values()) CHECK(v == doctest::Approx(0.1f));
  }
}

TEST_CASE("training with fixed seeds is reproducible") {
  auto train = [] {
    auto m = testing::all_kinds_model(2).cast<float>();
    auto state = nn::make_optimizer(nn::OptimizerKind::adam, 0.01, m);
    const auto batch = testing::random_input({8, 8, 2}, 4, 4).cast<float>();
    const std::vector<int> labels = {0, 1, 2, 1};
    for (int step = 0; step < 5; ++step) {
      auto r = nn::loss_and_param_gradients(m, batch, std::span<const int>(labels), mix_seed(1, step));
      nn::optimizer_step(state, m, r.grads);
    }
    return nn::encode_checkpoint(m);
  };
  CHECK(train() == train());
}

TEST_CASE("checkpoint round trip is exact") {
  auto m = nn::make_model<float>({8, 8, 2}, 3,
                                 {LayerSpec::conv(3, 3), LayerSpec::relu(), LayerSpec::maxpool(),
                                  LayerSpec::conv(4, 2), LayerSpec::relu(), LayerSpec::concat_skip(2),
                                  LayerSpec::dropout(0.5), LayerSpec::dense(3), LayerSpec::softmax_output()},
                                 7);
  nn::initialize(m, 77);
  const auto bytes = nn::encode_checkpoint(m);
  CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "BDNET1");
  const auto back = nn::decode_checkpoint(bytes);
  CHECK(back.layers == m.layers);
  CHECK(back.input_shape == m.input_shape);
  CHECK(back.class_count == 3);
  CHECK(back.input_divisor == 7);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    CHECK(back.params[i].weights == m.params[i].weights);
    CHECK(back.params[i].bias == m.params[i].bias);
  }
  CHECK(nn::encode_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "bd_unit_model.bdnet";
  nn::save_checkpoint(m, path);
  CHECK(nn::encode_checkpoint(nn::load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoints raise format errors") {
  auto m = nn::make_model<float>({4, 4, 1}, 2, {LayerSpec::dense(2), LayerSpec::softmax_output()});
  auto bytes = nn::encode_checkpoint(m);
  auto expect_format = [](std::vector<std::uint8_t> b) {
    try {
      nn::decode_checkpoint(b);
      FAIL("expected a format error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::format);
    }
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  expect_format(bad_magic);
  expect_format(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3));
  auto trailing = bytes;
  trailing.push_back(0);
  expect_format(trailing);
  expect_format({});
}
