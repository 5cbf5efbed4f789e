#include "bd/common.hpp"

#include <cmath>
#include <numbers>

namespace bd {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::input_shape: return "input-shape";
    case ErrorCode::empty_batch: return "empty-batch";
    case ErrorCode::class_index: return "class-index";
    case ErrorCode::congruence: return "congruence";
    case ErrorCode::architecture: return "architecture";
    case ErrorCode::parameter: return "parameter";
    case ErrorCode::shape: return "shape";
    case ErrorCode::format: return "format";
    case ErrorCode::degenerate_gradient: return "degenerate-gradient";
    case ErrorCode::empty_input: return "empty-input";
    case ErrorCode::plan: return "plan";
    case ErrorCode::empty_source: return "empty-source";
    case ErrorCode::spec: return "spec";
    case ErrorCode::configuration: return "configuration";
    case ErrorCode::empty_evaluation: return "empty-evaluation";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

std::string to_string(const Shape3& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
         std::to_string(s.channels);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = span == 0 ? 0 : (~std::uint64_t{0} - span + 1) % span;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r < limit);
  return lo + static_cast<std::int64_t>(r % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double Rng::truncated_normal(double stddev) {
  double z;
  do {
    z = normal();
  } while (std::abs(z) > 2.0);
  return z * stddev;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace bd
