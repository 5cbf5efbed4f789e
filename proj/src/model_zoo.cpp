#include "bd/model_zoo.hpp"

namespace bd::zoo {

using nn::LayerSpec;

std::string_view to_string(ArchitectureId id) {
  switch (id) {
    case ArchitectureId::convnet_gtsrb: return "convnet-gtsrb";
    case ArchitectureId::lenet5_gtsrb: return "lenet5-gtsrb";
    case ArchitectureId::lenet5_mnist: return "lenet5-mnist";
    case ArchitectureId::tiny_synthetic: return "tiny-synthetic";
  }
  return "unknown";
}

ArchitectureId parse_architecture(std::string_view name) {
  for (auto id : {ArchitectureId::convnet_gtsrb, ArchitectureId::lenet5_gtsrb, ArchitectureId::lenet5_mnist,
                  ArchitectureId::tiny_synthetic}) {
    if (to_string(id) == name) return id;
  }
  throw Error(ErrorCode::configuration, "unknown architecture '" + std::string(name) + "'");
}

namespace {

std::vector<LayerSpec> tiny_layers(int class_count, int width) {
  return {LayerSpec::conv(width, 5),     LayerSpec::relu(),       LayerSpec::maxpool(),
          LayerSpec::conv(2 * width, 5), LayerSpec::relu(),       LayerSpec::maxpool(),
          LayerSpec::dense(8 * width),   LayerSpec::relu(),       LayerSpec::dropout(0.5),
          LayerSpec::dense(class_count), LayerSpec::softmax_output()};
}

}  // namespace

std::vector<LayerSpec> layers_for(ArchitectureId arch, int class_count) {
  switch (arch) {
    case ArchitectureId::convnet_gtsrb:
      // Output of the third conv is concatenated after the second pooling
      // output (layer 5), pooled features first.
      return {LayerSpec::conv(6, 5),       LayerSpec::relu(),          LayerSpec::maxpool(),
              LayerSpec::conv(16, 5),      LayerSpec::relu(),          LayerSpec::maxpool(),
              LayerSpec::conv(400, 5),     LayerSpec::relu(),          LayerSpec::concat_skip(5),
              LayerSpec::dropout(0.5),     LayerSpec::dense(class_count), LayerSpec::softmax_output()};
    case ArchitectureId::lenet5_gtsrb:
      return {LayerSpec::conv(6, 5),   LayerSpec::relu(),    LayerSpec::maxpool(),
              LayerSpec::conv(16, 5),  LayerSpec::relu(),    LayerSpec::maxpool(),
              LayerSpec::conv(120, 5), LayerSpec::relu(),    LayerSpec::dense(84),
              LayerSpec::relu(),       LayerSpec::dropout(0.5), LayerSpec::dense(class_count),
              LayerSpec::softmax_output()};
    case ArchitectureId::lenet5_mnist:
      return {LayerSpec::conv(32, 5),  LayerSpec::relu(),       LayerSpec::maxpool(),
              LayerSpec::conv(64, 5),  LayerSpec::relu(),       LayerSpec::maxpool(),
              LayerSpec::dense(1024),  LayerSpec::relu(),       LayerSpec::dropout(0.5),
              LayerSpec::dense(class_count), LayerSpec::softmax_output()};
    case ArchitectureId::tiny_synthetic:
      return tiny_layers(class_count, 8);
  }
  throw Error(ErrorCode::architecture, "unknown architecture");
}

nn::Model build(ArchitectureId arch, const Shape3& input, int class_count, std::uint64_t seed) {
  if (arch == ArchitectureId::lenet5_mnist && input != Shape3{28, 28, 1}) {
    throw Error(ErrorCode::architecture, "lenet5-mnist expects 28x28x1 input, got " + to_string(input));
  }
  if ((arch == ArchitectureId::lenet5_gtsrb || arch == ArchitectureId::convnet_gtsrb) &&
      input != Shape3{32, 32, 3}) {
    throw Error(ErrorCode::architecture,
                std::string(to_string(arch)) + " expects 32x32x3 input, got " + to_string(input));
  }
  auto model = nn::make_model<float>(input, class_count, layers_for(arch, class_count));
  nn::initialize(model, seed);
  return model;
}

nn::Model build_surrogate(ArchitectureId victim, const Shape3& input, int class_count,
                          std::uint64_t seed) {
  switch (victim) {
    case ArchitectureId::convnet_gtsrb:
    case ArchitectureId::lenet5_gtsrb:
      return build(ArchitectureId::lenet5_gtsrb, input, class_count, seed);
    case ArchitectureId::lenet5_mnist:
      return build(ArchitectureId::lenet5_mnist, input, class_count, seed);
    case ArchitectureId::tiny_synthetic: {
      auto model = nn::make_model<float>(input, class_count, tiny_layers(class_count, 4));
      nn::initialize(model, seed);
      return model;
    }
  }
  throw Error(ErrorCode::architecture, "unknown architecture");
}

}  // namespace bd::zoo
