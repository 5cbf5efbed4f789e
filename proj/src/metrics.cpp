#include "bd/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdio>
#include <mutex>
#include <numbers>

namespace bd::metrics {

Rate attack_success(const nn::Model& model, const data::LabeledDataset& test_set,
                    const masks::PerturbationMask& mask, int source, int target) {
  std::vector<Image> backdoored;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    if (test_set.labels[i] == source) backdoored.push_back(masks::apply(test_set.images[i], mask));
  }
  if (backdoored.empty()) throw Error(ErrorCode::empty_evaluation, "test set has no source-class items");
  const auto pred = nn::predict(model, backdoored);
  Rate r{0, pred.size()};
  for (int p : pred) r.hits += p == target ? 1 : 0;
  return r;
}

double attack_success_rate(const nn::Model& model, const data::LabeledDataset& test_set,
                           const masks::PerturbationMask& mask, int source, int target) {
  return attack_success(model, test_set, mask, source, target).percent();
}

Rate correct(const nn::Model& model, const data::LabeledDataset& dataset) {
  if (dataset.empty()) throw Error(ErrorCode::empty_evaluation, "accuracy needs a nonempty dataset");
  const auto pred = nn::predict(model, dataset.images);
  Rate r{0, pred.size()};
  for (std::size_t i = 0; i < pred.size(); ++i) r.hits += pred[i] == dataset.labels[i] ? 1 : 0;
  return r;
}

double accuracy(const nn::Model& model, const data::LabeledDataset& dataset) {
  return correct(model, dataset).percent();
}

// ---------------------------------------------------------------- pHash

std::vector<double> grayscale(const Image& image) {
  std::vector<double> g(static_cast<std::size_t>(image.height) * image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * image.width + x;
      if (image.channels >= 3) {
        g[o] = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
      } else {
        g[o] = image.at(y, x, 0);
      }
    }
  }
  return g;
}

std::vector<double> grayscale(const masks::PerturbationMask& mask) {
  std::vector<double> g(static_cast<std::size_t>(mask.height) * mask.width);
  for (std::size_t o = 0; o < g.size(); ++o) {
    const float* px = mask.values.data() + o * static_cast<std::size_t>(mask.channels);
    g[o] = mask.channels >= 3 ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : px[0];
  }
  return g;
}

namespace {

constexpr int kHashSide = 32;
constexpr int kHashBlock = 8;

/// Bilinear resize with pixel-centre alignment and clamped borders.
std::vector<double> resize_bilinear(std::span<const double> src, int h, int w, int oh, int ow) {
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      auto at = [&](int yy, int xx) { return src[static_cast<std::size_t>(yy) * w + xx]; };
      out[static_cast<std::size_t>(y) * ow + x] =
          (at(y0, x0) * (1 - wx) + at(y0, x1) * wx) * (1 - wy) + (at(y1, x0) * (1 - wx) + at(y1, x1) * wx) * wy;
    }
  }
  return out;
}

/// Orthonormal DCT-II basis, basis[k][n].
const std::vector<double>& dct_basis() {
  static const std::vector<double> basis = [] {
    std::vector<double> b(kHashSide * kHashSide);
    for (int k = 0; k < kHashSide; ++k) {
      const double alpha = k == 0 ? std::sqrt(1.0 / kHashSide) : std::sqrt(2.0 / kHashSide);
      for (int n = 0; n < kHashSide; ++n) {
        b[k * kHashSide + n] = alpha * std::cos(std::numbers::pi * (2 * n + 1) * k / (2.0 * kHashSide));
      }
    }
    return b;
  }();
  return basis;
}

}  // namespace

PHash phash64(const Image& image) {
  const auto gray = grayscale(image);
  const auto small = resize_bilinear(gray, image.height, image.width, kHashSide, kHashSide);
  const auto& basis = dct_basis();
  // Only the top-left block is needed: coef[u][v] = sum_y sum_x B[u][y] B[v][x] img[y][x].
  std::array<double, kHashBlock * kHashSide> rows{};  // B[u] applied along y
  for (int u = 0; u < kHashBlock; ++u) {
    for (int x = 0; x < kHashSide; ++x) {
      double s = 0.0;
      for (int y = 0; y < kHashSide; ++y) s += basis[u * kHashSide + y] * small[y * kHashSide + x];
      rows[u * kHashSide + x] = s;
    }
  }
  std::array<double, kHashBlock * kHashBlock> coef{};
  for (int u = 0; u < kHashBlock; ++u) {
    for (int v = 0; v < kHashBlock; ++v) {
      double s = 0.0;
      for (int x = 0; x < kHashSide; ++x) s += basis[v * kHashSide + x] * rows[u * kHashSide + x];
      coef[u * kHashBlock + v] = s;
    }
  }
  std::array<double, kHashBlock * kHashBlock - 1> ac;
  std::copy(coef.begin() + 1, coef.end(), ac.begin());
  std::nth_element(ac.begin(), ac.begin() + ac.size() / 2, ac.end());
  const double median = ac[ac.size() / 2];
  PHash h = 0;
  for (std::size_t i = 0; i < coef.size(); ++i) {
    if (coef[i] > median) h |= PHash{1} << i;
  }
  return h;
}

int hamming_distance(PHash a, PHash b) { return std::popcount(a ^ b); }

double phash_similarity(PHash a, PHash b) { return (1.0 - hamming_distance(a, b) / 64.0) * 100.0; }

double phash_similarity(const Image& a, const Image& b) { return phash_similarity(phash64(a), phash64(b)); }

// ---------------------------------------------------------------- high frequency

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

double high_freq_norm(std::span<const double> plane, int height, int width, double low_freq_fraction) {
  if (!(low_freq_fraction > 0.0 && low_freq_fraction < 1.0)) {
    throw Error(ErrorCode::parameter, "low-frequency fraction must be in (0, 1)");
  }
  if (plane.size() != static_cast<std::size_t>(height) * width || height <= 0 || width <= 0) {
    throw Error(ErrorCode::shape, "plane size does not match its extents");
  }
  const std::size_t n = plane.size();
  std::vector<std::complex<double>> in(plane.begin(), plane.end());
  std::vector<std::complex<double>> out(n);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(height, width, reinterpret_cast<fftw_complex*>(in.data()),
                            reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }

  const int side = static_cast<int>(std::ceil(low_freq_fraction * std::min(height, width)));
  const int y_lo = height / 2 - side / 2;
  const int x_lo = width / 2 - side / 2;
  double sum = 0.0;
  for (int y = 0; y < height; ++y) {
    // row y of the shifted spectrum holds frequency (y + height/2) mod height
    const int fy = (y + height / 2) % height;
    const bool row_low = y >= y_lo && y < y_lo + side;
    for (int x = 0; x < width; ++x) {
      if (row_low && x >= x_lo && x < x_lo + side) continue;
      const int fx = (x + width / 2) % width;
      sum += std::norm(out[static_cast<std::size_t>(fy) * width + fx]);
    }
  }
  return std::sqrt(sum);
}

namespace {

MeanStdev summarize(std::span<const double> values) {
  MeanStdev s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stdev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

}  // namespace

MeanStdev high_freq_stats(std::span<const Image> images, double low_freq_fraction) {
  if (images.empty()) throw Error(ErrorCode::empty_input, "high-frequency statistics need images");
  std::vector<double> norms;
  for (const auto& img : images) {
    norms.push_back(high_freq_norm(grayscale(img), img.height, img.width, low_freq_fraction));
  }
  return summarize(norms);
}

MeanStdev high_freq_stats(std::span<const masks::PerturbationMask> list, double low_freq_fraction) {
  if (list.empty()) throw Error(ErrorCode::empty_input, "high-frequency statistics need masks");
  std::vector<double> norms;
  for (const auto& m : list) norms.push_back(high_freq_norm(grayscale(m), m.height, m.width, low_freq_fraction));
  return summarize(norms);
}

// ---------------------------------------------------------------- reports

nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json series = nlohmann::json::array();
  for (const auto& p : r.series) {
    series.push_back({{"step", p.step}, {"success_rate", p.success_rate}, {"accuracy", p.accuracy}});
  }
  return {{"scenario", r.scenario},
          {"mask_kind", r.mask_kind},
          {"c_m_or_xi", r.intensity},
          {"source", r.source},
          {"target", r.target},
          {"injection", r.injection},
          {"success_rate", r.success_rate},
          {"clean_accuracy", r.clean_accuracy},
          {"baseline_accuracy", r.baseline_accuracy},
          {"accuracy_loss", r.accuracy_loss},
          {"injection_ratio", r.injection_ratio},
          {"phash_sim", r.phash_sim},
          {"hf_mean", r.hf_mean},
          {"hf_stdev", r.hf_stdev},
          {"seed", r.seed},
          {"series", series},
          {"extra", r.extra}};
}

namespace {

std::string format_row(const std::string& scenario, const std::string& kind, double intensity,
                       const std::string& pair, const std::string& injection, double success, double loss,
                       double phash, double hf_mean, double hf_stdev, const std::string& seed) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%.4g,%s,%s,%.4f,%.4f,%.4f,%.6e,%.6e,%s", scenario.c_str(), kind.c_str(),
                intensity, pair.c_str(), injection.c_str(), success, loss, phash, hf_mean, hf_stdev, seed.c_str());
  return buf;
}

}  // namespace

std::string csv_row(const ExperimentReport& r) {
  return format_row(r.scenario, r.mask_kind, r.intensity, std::to_string(r.source) + "-" + std::to_string(r.target),
                    std::to_string(r.injection), r.success_rate, r.accuracy_loss, r.phash_sim, r.hf_mean, r.hf_stdev,
                    std::to_string(r.seed));
}

std::string csv_mean_row(std::span<const ExperimentReport> reports) {
  if (reports.empty()) throw Error(ErrorCode::empty_input, "no reports to average");
  double s = 0, l = 0, p = 0, hm = 0, hs = 0;
  for (const auto& r : reports) {
    s += r.success_rate;
    l += r.accuracy_loss;
    p += r.phash_sim;
    hm += r.hf_mean;
    hs += r.hf_stdev;
  }
  const double n = static_cast<double>(reports.size());
  const auto& f = reports.front();
  return format_row(f.scenario, f.mask_kind, f.intensity, "mean", std::to_string(f.injection), s / n, l / n, p / n,
                    hm / n, hs / n, std::to_string(f.seed));
}

}  // namespace bd::metrics
