#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>

#include "bd/data.hpp"
#include "bd/masks.hpp"
#include "bd/nn.hpp"

namespace bd::metrics {

/// Integer hit counter rendered as a percentage only at the end.
struct Rate {
  std::size_t hits = 0;
  std::size_t total = 0;
  double percent() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total); }
};

/// Share of masked class-`source` items predicted as `target`.
Rate attack_success(const nn::Model& model, const data::LabeledDataset& test_set,
                    const masks::PerturbationMask& mask, int source, int target);
double attack_success_rate(const nn::Model& model, const data::LabeledDataset& test_set,
                           const masks::PerturbationMask& mask, int source, int target);

Rate correct(const nn::Model& model, const data::LabeledDataset& dataset);
double accuracy(const nn::Model& model, const data::LabeledDataset& dataset);
/// Baseline minus poisoned accuracy, in percentage points.
inline double accuracy_loss(double baseline_percent, double poisoned_percent) {
  return baseline_percent - poisoned_percent;
}

using PHash = std::uint64_t;

/// Luma plane (0.299 R + 0.587 G + 0.114 B), row-major.
std::vector<double> grayscale(const Image& image);
std::vector<double> grayscale(const masks::PerturbationMask& mask);

/// DCT perceptual hash: luma, bilinear resize to 32x32, orthonormal 2-D
/// DCT-II, top-left 8x8 block, bit i (row-major, LSB first) set when
/// coefficient i exceeds the median of the 63 non-DC coefficients.
PHash phash64(const Image& image);
int hamming_distance(PHash a, PHash b);
/// (1 - hamming / 64) * 100.
double phash_similarity(PHash a, PHash b);
double phash_similarity(const Image& a, const Image& b);

/// L2 norm of the centre-shifted DFT magnitude of a plane after zeroing the
/// central square of side ceil(low_freq_fraction * min(h, w)).
double high_freq_norm(std::span<const double> plane, int height, int width, double low_freq_fraction);

struct MeanStdev {
  double mean = 0.0;
  double stdev = 0.0;  ///< population standard deviation
};

MeanStdev high_freq_stats(std::span<const Image> images, double low_freq_fraction = 0.25);
MeanStdev high_freq_stats(std::span<const masks::PerturbationMask> masks, double low_freq_fraction = 0.25);

struct TimePoint {
  int step = 0;
  double success_rate = 0.0;
  double accuracy = 0.0;
};

struct ExperimentReport {
  std::string scenario;
  std::string mask_kind;
  double intensity = 0.0;  ///< c_m or xi
  int source = 0;
  int target = 0;
  int injection = 0;  ///< BIB total or BID per batch
  double success_rate = 0.0;
  double clean_accuracy = 0.0;
  double baseline_accuracy = 0.0;
  double accuracy_loss = 0.0;
  double injection_ratio = 0.0;
  double phash_sim = 0.0;
  double hf_mean = 0.0;
  double hf_stdev = 0.0;
  std::uint64_t seed = 0;
  std::vector<TimePoint> series;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const ExperimentReport& report);

/// Fixed CSV column order.
inline constexpr const char* kCsvHeader =
    "scenario,mask_kind,c_m_or_xi,pair,injection,success_rate,accuracy_loss,phash_sim,hf_mean,hf_stdev,seed";
std::string csv_row(const ExperimentReport& report);
/// Row averaging success, loss and stealth metrics; pair column reads "mean".
std::string csv_mean_row(std::span<const ExperimentReport> reports);

}  // namespace bd::metrics
