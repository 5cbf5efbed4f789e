#pragma once

#include <filesystem>
#include <json.hpp>
#include <string_view>

#include "bd/common.hpp"
#include "bd/nn.hpp"

namespace bd::masks {

enum class MaskKind { static_pattern, adaptive };

std::string_view to_string(MaskKind kind);
MaskKind parse_mask_kind(std::string_view name);

/// Signed per-pixel intensity change, same HWC layout as the target image.
struct PerturbationMask {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;
  MaskKind kind = MaskKind::static_pattern;
  /// Largest |value| in the mask.
  double max_intensity = 0.0;
  /// Generation parameters (sub-region, position, xi, class pair, ...).
  nlohmann::json params = nlohmann::json::object();

  Shape3 shape() const { return {height, width, channels}; }
  friend bool operator==(const PerturbationMask&, const PerturbationMask&) = default;
};

/// Patterned static mask: intensity at every pixel with (i + i_p) mod r == 0
/// and (j + j_p) mod r == 0, replicated across channels.
PerturbationMask generate_static(int height, int width, int channels, int region, int pos_i, int pos_j,
                                 double intensity);

/// Wraps a real-valued {H, W, C} tensor as a mask; max_intensity is its max-abs.
PerturbationMask from_tensor(const nn::Tensor<float>& values, MaskKind kind, nlohmann::json params = {});
nn::Tensor<float> to_tensor(const PerturbationMask& mask);
PerturbationMask zero_mask(const Shape3& shape, MaskKind kind = MaskKind::static_pattern);

/// x + v rounded half-to-even and clamped to [0, 255].
Image apply(const Image& image, const PerturbationMask& mask);
std::vector<Image> apply_all(std::span<const Image> images, const PerturbationMask& mask);

std::vector<std::uint8_t> encode_mask(const PerturbationMask& mask);
PerturbationMask decode_mask(std::span<const std::uint8_t> bytes);
void save_mask(const PerturbationMask& mask, const std::filesystem::path& path);
PerturbationMask load_mask(const std::filesystem::path& path);

}  // namespace bd::masks
