#pragma once

#include <filesystem>
#include <utility>

#include "bd/common.hpp"

namespace bd::data {

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  Shape3 shape() const;
  void add(Image image, int label);
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> indices_of(int label) const;
  /// Throws ErrorCode::shape / class_index if the invariants do not hold.
  void validate() const;
};

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

/// Reads an IDX image file (magic 0x00000803, or 0x00000804 with a trailing
/// channel extent) and its IDX label file (0x00000801). With class_count 0
/// the count is inferred as max label + 1.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        int class_count = 0);
void save_idx(const LabeledDataset& ds, const std::filesystem::path& images,
              const std::filesystem::path& labels);

/// Desk-scale stand-in for a traffic-sign corpus: each class is a distinct
/// shape/colour pair drawn over a random gradient background with pixel noise.
/// Images are size x size x 3.
LabeledDataset generate_synthetic(int class_count, int per_class, int size, std::uint64_t seed);

struct AugmentRanges {
  double rotation_deg = 15.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double translate_px = 2.0;
};

/// Similarity transform about the image centre with bilinear resampling and
/// replicated borders.
Image similarity_transform(const Image& image, double angle_rad, double scale, double tx, double ty);

/// Original items followed by `factor` transformed copies of each.
LabeledDataset augment(const LabeledDataset& ds, int factor, std::uint64_t seed, const AugmentRanges& ranges = {});

struct SplitPlan {
  double major = 0.854;
  double minor = 0.095;
  double test = 0.051;
  /// Share of a scenario's training data held out for model selection.
  double validation = 0.2;
  std::uint64_t seed = 0;
};

struct Splits {
  LabeledDataset major;
  LabeledDataset minor;
  LabeledDataset test;
};

/// Stratified, seed-deterministic partition into major/minor/test.
Splits split(const LabeledDataset& ds, const SplitPlan& plan);

/// Stratified two-way partition: first part holds `fraction` of every class.
std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds, double fraction,
                                                           std::uint64_t seed);

/// (train, validation) with `validation_fraction` held out.
std::pair<LabeledDataset, LabeledDataset> carve_validation(const LabeledDataset& ds, double validation_fraction,
                                                           std::uint64_t seed);

/// Keeps at most `per_class` items of each class (seeded choice).
LabeledDataset take_per_class(const LabeledDataset& ds, int per_class, std::uint64_t seed);

}  // namespace bd::data
