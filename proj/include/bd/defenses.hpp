#pragma once

#include <string_view>

#include "bd/data.hpp"
#include "bd/masks.hpp"
#include "bd/nn.hpp"

namespace bd::defense {

enum class DefenseKind { none, noise, blur };

std::string_view to_string(DefenseKind kind);
DefenseKind parse_defense_kind(std::string_view name);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::none;
  int noise_range = 20;  ///< uniform integer noise in [-a, a]
  int kernel = 5;        ///< odd, >= 3
  double sigma = 0.0;    ///< <= 0 selects 0.3 * ((k - 1) / 2 - 1) + 0.8
  std::uint64_t seed = 0;

  void validate() const;
};

double default_sigma(int kernel);
/// Normalised 1-D Gaussian taps; the 2-D kernel is their outer product.
std::vector<double> gaussian_taps(int kernel, double sigma);
std::vector<double> gaussian_kernel_2d(int kernel, double sigma);

/// `stream` decorrelates the noise of different images under one seed.
Image defend(const Image& image, const DefenseSpec& spec, std::uint64_t stream = 0);

struct DefenseOutcome {
  double success = 0.0;           ///< undefended attack success (%)
  double defended_success = 0.0;
  double accuracy = 0.0;          ///< undefended clean accuracy (%)
  double defended_accuracy = 0.0;

  double success_drop() const { return success - defended_success; }
  double accuracy_cost() const { return accuracy - defended_accuracy; }
};

DefenseOutcome evaluate_defense(const nn::Model& model, const data::LabeledDataset& test_set,
                                const masks::PerturbationMask& mask, int source, int target,
                                const DefenseSpec& spec);

std::vector<std::size_t> class_histogram(const data::LabeledDataset& dataset);

}  // namespace bd::defense
