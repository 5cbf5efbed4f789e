#include "bd/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "bd/binary_io.hpp"

namespace bd::data {

Shape3 LabeledDataset::shape() const {
  return images.empty() ? Shape3{} : images.front().shape();
}

void LabeledDataset::add(Image image, int label) {
  images.push_back(std::move(image));
  labels.push_back(label);
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.class_count = class_count;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (auto i : indices) out.add(images.at(i), labels.at(i));
  return out;
}

std::vector<std::size_t> LabeledDataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (images.size() != labels.size()) throw Error(ErrorCode::shape, "image and label counts differ");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) throw Error(ErrorCode::class_index, "label out of range");
    if (images[i].shape() != images.front().shape()) throw Error(ErrorCode::shape, "mixed image shapes");
  }
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  LabeledDataset out = a;
  out.class_count = std::max(a.class_count, b.class_count);
  out.images.insert(out.images.end(), b.images.begin(), b.images.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

// ---------------------------------------------------------------- IDX

namespace {

constexpr std::uint32_t kIdxImages3 = 0x00000803;
constexpr std::uint32_t kIdxImages4 = 0x00000804;
constexpr std::uint32_t kIdxLabels = 0x00000801;

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        int class_count) {
  const auto img_bytes = io::read_file(images);
  const auto lbl_bytes = io::read_file(labels);

  io::ByteReader ri(img_bytes);
  const std::uint32_t magic = ri.u32_be();
  if (magic != kIdxImages3 && magic != kIdxImages4) {
    throw Error(ErrorCode::format, images.string() + ": not an IDX image file");
  }
  const std::uint32_t n = ri.u32_be();
  const std::uint32_t h = ri.u32_be();
  const std::uint32_t w = ri.u32_be();
  const std::uint32_t c = magic == kIdxImages4 ? ri.u32_be() : 1;
  if (h == 0 || w == 0 || c == 0) throw Error(ErrorCode::format, "IDX: zero extent");
  const std::size_t per = static_cast<std::size_t>(h) * w * c;
  if (ri.remaining() != per * n) throw Error(ErrorCode::format, images.string() + ": truncated or oversized payload");

  io::ByteReader rl(lbl_bytes);
  if (rl.u32_be() != kIdxLabels) throw Error(ErrorCode::format, labels.string() + ": not an IDX label file");
  const std::uint32_t nl = rl.u32_be();
  if (nl != n) throw Error(ErrorCode::format, "IDX: image and label counts differ");
  if (rl.remaining() != n) throw Error(ErrorCode::format, labels.string() + ": truncated or oversized payload");

  LabeledDataset ds;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  int max_label = -1;
  for (std::uint32_t i = 0; i < n; ++i) {
    Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    auto px = ri.take(per);
    std::copy(px.begin(), px.end(), img.pixels.begin());
    const int label = rl.take(1)[0];
    max_label = std::max(max_label, label);
    ds.add(std::move(img), label);
  }
  ds.class_count = class_count > 0 ? class_count : max_label + 1;
  ds.validate();
  return ds;
}

void save_idx(const LabeledDataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels) {
  ds.validate();
  const Shape3 s = ds.shape();
  io::ByteWriter wi;
  wi.u32_be(s.channels == 1 ? kIdxImages3 : kIdxImages4);
  wi.u32_be(static_cast<std::uint32_t>(ds.size()));
  wi.u32_be(static_cast<std::uint32_t>(s.height));
  wi.u32_be(static_cast<std::uint32_t>(s.width));
  if (s.channels != 1) wi.u32_be(static_cast<std::uint32_t>(s.channels));
  for (const auto& img : ds.images) wi.raw(img.pixels);
  io::ByteWriter wl;
  wl.u32_be(kIdxLabels);
  wl.u32_be(static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) {
    if (l > 255) throw Error(ErrorCode::format, "IDX labels are single bytes");
    wl.raw(std::array<std::uint8_t, 1>{static_cast<std::uint8_t>(l)});
  }
  io::write_file(images, wi.buffer());
  io::write_file(labels, wl.buffer());
}

// ---------------------------------------------------------------- synthetic

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 10> kPalette{{
    {200, 30, 30},    // red
    {30, 60, 200},    // blue
    {225, 200, 40},   // yellow
    {40, 160, 60},    // green
    {235, 235, 235},  // white
    {25, 25, 25},     // black
    {235, 120, 30},   // orange
    {140, 50, 165},   // purple
    {40, 190, 200},   // cyan
    {230, 110, 170},  // pink
}};

constexpr int kShapes = 6;

/// Membership test in the unit frame centred on the symbol.
bool inside(int shape, double u, double v) {
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;                       // disk
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.8;  // square
    case 2: {                                                  // triangle, apex up
      if (v > 0.7 || v < -0.9) return false;
      const double half = 0.9 * (v + 0.9) / 1.6;
      return std::abs(u) <= half;
    }
    case 3: return std::abs(u) + std::abs(v) <= 1.0;  // diamond
    case 4: {                                         // ring
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    default:  // cross
      return (std::abs(u) <= 0.3 && std::abs(v) <= 0.9) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.9);
  }
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::nearbyint(std::clamp(v, 0.0, 255.0))); }

Image render(int cls, int size, Rng& rng) {
  // Classes sharing a colour differ by 10m, so their shapes differ by 5m mod 6.
  const Rgb base = kPalette[static_cast<std::size_t>(cls) % kPalette.size()];
  const int shape = (cls + cls / 10) % kShapes;
  Rgb fg;
  for (int c = 0; c < 3; ++c) fg[c] = base[c] + rng.uniform(-15.0, 15.0);
  const double brightness = rng.uniform(0.8, 1.15);

  // Desaturated backgrounds: a grey level per end plus a small tint.
  Rgb bg0, bg1;
  const double g0 = rng.uniform(70.0, 190.0);
  const double g1 = rng.uniform(70.0, 190.0);
  for (int c = 0; c < 3; ++c) {
    bg0[c] = g0 + rng.uniform(-20.0, 20.0);
    bg1[c] = g1 + rng.uniform(-20.0, 20.0);
  }
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(theta);
  const double dy = std::sin(theta);

  const double half = size / 2.0;
  const double cx = half + rng.uniform(-2.0, 2.0);
  const double cy = half + rng.uniform(-2.0, 2.0);
  const double radius = size * 0.34 * rng.uniform(0.85, 1.15);
  // Sign-like rim around the symbol, near black or near white.
  const double rim = rng.uniform() < 0.5 ? rng.uniform(10.0, 40.0) : rng.uniform(215.0, 245.0);

  // Background clutter: hard-edged grey rectangles behind the symbol.
  struct Patch {
    double x0, y0, x1, y1, shift;
  };
  std::array<Patch, 20> clutter;
  for (auto& p : clutter) {
    const double w = rng.uniform(3.0, size * 0.8);
    const double h = rng.uniform(3.0, size * 0.8);
    p.x0 = rng.uniform(-w / 2, size - w / 2);
    p.y0 = rng.uniform(-h / 2, size - h / 2);
    p.x1 = p.x0 + w;
    p.y1 = p.y0 + h;
    p.shift = rng.uniform(-200.0, 200.0);
  }

  Image img(size, size, 3);
  constexpr int kSuper = 3;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      // gradient background
      const double t = std::clamp(0.5 + ((x - half) * dx + (y - half) * dy) / size, 0.0, 1.0);
      int hits = 0, outer = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper;
          const double py = y + (sy + 0.5) / kSuper;
          if (inside(shape, (px - cx) / radius, (py - cy) / radius)) ++hits;
          else if (inside(shape, (px - cx) / (radius * 1.25), (py - cy) / (radius * 1.25))) ++outer;
        }
      }
      const double cover = static_cast<double>(hits) / (kSuper * kSuper);
      const double rim_cover = static_cast<double>(outer) / (kSuper * kSuper);
      double shift = 0.0;
      for (const auto& p : clutter) {
        if (x >= p.x0 && x < p.x1 && y >= p.y0 && y < p.y1) shift += p.shift;
      }
      for (int c = 0; c < 3; ++c) {
        const double bg = bg0[c] * (1.0 - t) + bg1[c] * t + shift;
        const double v = (cover * fg[c] + rim_cover * rim + (1.0 - cover - rim_cover) * bg) * brightness + rng.normal() * 6.0;
        img.at(y, x, c) = to_byte(v);
      }
    }
  }
  return img;
}

}  // namespace

LabeledDataset generate_synthetic(int class_count, int per_class, int size, std::uint64_t seed) {
  if (class_count < 2) throw Error(ErrorCode::parameter, "synthetic data needs at least two classes");
  if (class_count > 48) throw Error(ErrorCode::parameter, "synthetic generator supports at most 48 classes");
  if (per_class < 0 || size < 8) throw Error(ErrorCode::parameter, "bad synthetic dataset extents");
  LabeledDataset ds;
  ds.class_count = class_count;
  Rng rng(seed);
  // Interleaved by class so any prefix is balanced.
  for (int i = 0; i < per_class; ++i) {
    for (int k = 0; k < class_count; ++k) ds.add(render(k, size, rng), k);
  }
  return ds;
}

// ---------------------------------------------------------------- augmentation

Image similarity_transform(const Image& image, double angle_rad, double scale, double tx, double ty) {
  Image out(image.height, image.width, image.channels);
  const double cx = (image.width - 1) / 2.0;
  const double cy = (image.height - 1) / 2.0;
  const double ca = std::cos(angle_rad) / scale;
  const double sa = std::sin(angle_rad) / scale;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      // inverse map: output pixel -> source coordinates
      const double ox = x - cx - tx;
      const double oy = y - cy - ty;
      const double sx = std::clamp(ca * ox + sa * oy + cx, 0.0, image.width - 1.0);
      const double sy = std::clamp(-sa * ox + ca * oy + cy, 0.0, image.height - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const int y1 = std::min(y0 + 1, image.height - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - fx) + image.at(y0, x1, c) * fx;
        const double bottom = image.at(y1, x0, c) * (1 - fx) + image.at(y1, x1, c) * fx;
        out.at(y, x, c) = to_byte(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

LabeledDataset augment(const LabeledDataset& ds, int factor, std::uint64_t seed, const AugmentRanges& ranges) {
  if (factor < 1) throw Error(ErrorCode::parameter, "augmentation factor must be at least 1");
  LabeledDataset out = ds;
  out.images.reserve(ds.size() * (1 + static_cast<std::size_t>(factor)));
  out.labels.reserve(out.images.capacity());
  Rng rng(seed);
  const double max_angle = ranges.rotation_deg * std::numbers::pi / 180.0;
  for (int f = 0; f < factor; ++f) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double angle = rng.uniform(-max_angle, max_angle);
      const double scale = rng.uniform(ranges.scale_min, ranges.scale_max);
      const double tx = rng.uniform(-ranges.translate_px, ranges.translate_px);
      const double ty = rng.uniform(-ranges.translate_px, ranges.translate_px);
      out.add(similarity_transform(ds.images[i], angle, scale, tx, ty), ds.labels[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------- splitting

namespace {

/// Stratified partition into parts with the given fractions (summing to 1).
/// Per-class counts come from rounding cumulative totals, so every part's
/// size is within one item of its global fraction and every class within one
/// item of its own share.
std::vector<LabeledDataset> stratified_parts(const LabeledDataset& ds, std::span<const double> fractions,
                                             std::uint64_t seed) {
  const std::size_t parts = fractions.size();
  std::vector<double> boundary(parts + 1, 0.0);
  for (std::size_t p = 0; p < parts; ++p) boundary[p + 1] = boundary[p] + fractions[p];
  boundary[parts] = 1.0;

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(ds.class_count, 1)));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> members(parts);
  std::size_t cumulative = 0;
  for (auto& idx : by_class) {
    rng.shuffle(idx);
    const std::size_t before = cumulative;
    cumulative += idx.size();
    std::size_t start = 0;
    for (std::size_t p = 0; p < parts; ++p) {
      const auto edge = [&](std::size_t total, double f) {
        return static_cast<std::size_t>(std::llround(static_cast<double>(total) * f));
      };
      std::size_t end = idx.size();
      if (p + 1 < parts) {
        const std::size_t hi = edge(cumulative, boundary[p + 1]);
        const std::size_t lo = edge(before, boundary[p + 1]);
        end = std::clamp(hi - std::min(hi, lo), start, idx.size());
      }
      members[p].insert(members[p].end(), idx.begin() + static_cast<std::ptrdiff_t>(start),
                        idx.begin() + static_cast<std::ptrdiff_t>(end));
      start = end;
    }
  }
  std::vector<LabeledDataset> out;
  for (auto& m : members) {
    rng.shuffle(m);
    out.push_back(ds.subset(m));
  }
  return out;
}

}  // namespace

Splits split(const LabeledDataset& ds, const SplitPlan& plan) {
  const double sum = plan.major + plan.minor + plan.test;
  if (plan.major < 0 || plan.minor < 0 || plan.test < 0 || std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::plan, "major + minor + test fractions must sum to 1");
  }
  if (!(plan.validation >= 0.0 && plan.validation < 1.0)) {
    throw Error(ErrorCode::plan, "validation fraction must be in [0, 1)");
  }
  const std::array<double, 3> f{plan.major, plan.minor, plan.test};
  auto parts = stratified_parts(ds, f, plan.seed);
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds, double fraction,
                                                           std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorCode::plan, "split fraction must be in [0, 1]");
  const std::array<double, 2> f{fraction, 1.0 - fraction};
  auto parts = stratified_parts(ds, f, seed);
  return {std::move(parts[0]), std::move(parts[1])};
}

std::pair<LabeledDataset, LabeledDataset> carve_validation(const LabeledDataset& ds, double validation_fraction,
                                                           std::uint64_t seed) {
  return stratified_split(ds, 1.0 - validation_fraction, seed);
}

LabeledDataset take_per_class(const LabeledDataset& ds, int per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (int k = 0; k < ds.class_count; ++k) {
    auto idx = ds.indices_of(k);
    rng.shuffle(idx);
    if (idx.size() > static_cast<std::size_t>(per_class)) idx.resize(static_cast<std::size_t>(per_class));
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  return ds.subset(keep);
}

}  // namespace bd::data
