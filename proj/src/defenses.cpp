#include "bd/defenses.hpp"

#include <algorithm>
#include <cmath>

#include "bd/metrics.hpp"

namespace bd::defense {

std::string_view to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::none: return "none";
    case DefenseKind::noise: return "noise";
    case DefenseKind::blur: return "blur";
  }
  return "none";
}

DefenseKind parse_defense_kind(std::string_view name) {
  if (name == "none") return DefenseKind::none;
  if (name == "noise") return DefenseKind::noise;
  if (name == "blur") return DefenseKind::blur;
  throw Error(ErrorCode::configuration, "unknown defense kind '" + std::string(name) + "'");
}

void DefenseSpec::validate() const {
  if (noise_range < 0) throw Error(ErrorCode::spec, "noise range must be non-negative");
  if (kind == DefenseKind::blur && (kernel < 3 || kernel % 2 == 0)) {
    throw Error(ErrorCode::spec, "blur kernel size must be odd and at least 3");
  }
}

double default_sigma(int kernel) { return 0.3 * ((kernel - 1) * 0.5 - 1.0) + 0.8; }

std::vector<double> gaussian_taps(int kernel, double sigma) {
  if (kernel < 3 || kernel % 2 == 0) throw Error(ErrorCode::spec, "blur kernel size must be odd and at least 3");
  if (sigma <= 0.0) sigma = default_sigma(kernel);
  std::vector<double> taps(static_cast<std::size_t>(kernel));
  const int half = kernel / 2;
  double sum = 0.0;
  for (int i = 0; i < kernel; ++i) {
    const double d = i - half;
    taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

std::vector<double> gaussian_kernel_2d(int kernel, double sigma) {
  const auto taps = gaussian_taps(kernel, sigma);
  std::vector<double> k2(taps.size() * taps.size());
  for (std::size_t y = 0; y < taps.size(); ++y) {
    for (std::size_t x = 0; x < taps.size(); ++x) k2[y * taps.size() + x] = taps[y] * taps[x];
  }
  return k2;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::nearbyint(std::clamp(v, 0.0, 255.0))); }

Image blur(const Image& image, int kernel, double sigma) {
  const auto k2 = gaussian_kernel_2d(kernel, sigma);
  const int half = kernel / 2;
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int ky = -half; ky <= half; ++ky) {
          const int yy = std::clamp(y + ky, 0, image.height - 1);
          for (int kx = -half; kx <= half; ++kx) {
            const int xx = std::clamp(x + kx, 0, image.width - 1);
            acc += k2[static_cast<std::size_t>((ky + half) * kernel + (kx + half))] * image.at(yy, xx, c);
          }
        }
        out.at(y, x, c) = to_byte(acc);
      }
    }
  }
  return out;
}

}  // namespace

Image defend(const Image& image, const DefenseSpec& spec, std::uint64_t stream) {
  spec.validate();
  switch (spec.kind) {
    case DefenseKind::none:
      return image;
    case DefenseKind::noise: {
      Rng rng(mix_seed(spec.seed, stream));
      Image out = image;
      for (auto& p : out.pixels) {
        const auto delta = rng.uniform_int(-spec.noise_range, spec.noise_range);
        p = static_cast<std::uint8_t>(std::clamp<std::int64_t>(p + delta, 0, 255));
      }
      return out;
    }
    case DefenseKind::blur:
      return blur(image, spec.kernel, spec.sigma);
  }
  return image;
}

DefenseOutcome evaluate_defense(const nn::Model& model, const data::LabeledDataset& test_set,
                                const masks::PerturbationMask& mask, int source, int target,
                                const DefenseSpec& spec) {
  spec.validate();
  DefenseOutcome out;
  out.success = metrics::attack_success_rate(model, test_set, mask, source, target);
  out.accuracy = metrics::accuracy(model, test_set);

  data::LabeledDataset defended_clean;
  defended_clean.class_count = test_set.class_count;
  data::LabeledDataset defended_backdoor;
  defended_backdoor.class_count = test_set.class_count;
  const std::uint64_t backdoor_stream = test_set.size();
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    defended_clean.add(defend(test_set.images[i], spec, i), test_set.labels[i]);
    if (test_set.labels[i] == source) {
      defended_backdoor.add(defend(masks::apply(test_set.images[i], mask), spec, backdoor_stream + i), source);
    }
  }
  out.defended_accuracy = metrics::accuracy(model, defended_clean);
  // Already-defended images go through the success metric with a zero mask.
  out.defended_success = metrics::attack_success_rate(model, defended_backdoor, masks::zero_mask(mask.shape()),
                                                      source, target);
  return out;
}

std::vector<std::size_t> class_histogram(const data::LabeledDataset& dataset) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(dataset.class_count, 0)), 0);
  for (int l : dataset.labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

}  // namespace bd::defense
