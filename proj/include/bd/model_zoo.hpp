#pragma once

#include <string_view>

#include "bd/nn.hpp"

namespace bd::zoo {

enum class ArchitectureId { convnet_gtsrb, lenet5_gtsrb, lenet5_mnist, tiny_synthetic };

std::string_view to_string(ArchitectureId id);
/// Parses the CLI/config spelling ("convnet-gtsrb", ...). Throws ErrorCode::configuration.
ArchitectureId parse_architecture(std::string_view name);

/// Layer sequence for an architecture. `class_count` sets the output width.
std::vector<nn::LayerSpec> layers_for(ArchitectureId arch, int class_count);

/// Builds and initialises a model. lenet5-mnist needs 28x28x1 input, the GTSRB
/// variants 32x32x3; tiny-synthetic accepts any input its shapes chain through.
nn::Model build(ArchitectureId arch, const Shape3& input, int class_count, std::uint64_t seed);

/// Architecture used by an adversary without access to the victim model:
/// lenet5-gtsrb for the GTSRB victims, a half-width tiny net for tiny-synthetic.
nn::Model build_surrogate(ArchitectureId victim, const Shape3& input, int class_count,
                          std::uint64_t seed);

}  // namespace bd::zoo
