#include "bd/masks.hpp"

#include <algorithm>
#include <cmath>

#include "bd/binary_io.hpp"

namespace bd::masks {

namespace {

constexpr std::string_view kMagic{"BDMASK1\0", 8};

double max_abs(std::span<const float> values) {
  double m = 0.0;
  for (float v : values) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

}  // namespace

std::string_view to_string(MaskKind kind) {
  return kind == MaskKind::static_pattern ? "static" : "adaptive";
}

MaskKind parse_mask_kind(std::string_view name) {
  if (name == "static") return MaskKind::static_pattern;
  if (name == "adaptive") return MaskKind::adaptive;
  throw Error(ErrorCode::configuration, "unknown mask kind '" + std::string(name) + "'");
}

PerturbationMask generate_static(int height, int width, int channels, int region, int pos_i, int pos_j,
                                 double intensity) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw Error(ErrorCode::parameter, "mask extents must be positive");
  }
  if (region < 1 || region > std::min(height, width)) {
    throw Error(ErrorCode::parameter, "sub-region must be in [1, min(height, width)]");
  }
  if (pos_i < 0 || pos_i >= region || pos_j < 0 || pos_j >= region) {
    throw Error(ErrorCode::parameter, "position must lie inside the sub-region");
  }
  if (!(intensity >= 0.0)) throw Error(ErrorCode::parameter, "intensity must be non-negative");

  PerturbationMask m;
  m.height = height;
  m.width = width;
  m.channels = channels;
  m.kind = MaskKind::static_pattern;
  m.values.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
  const auto value = static_cast<float>(intensity);
  for (int i = 0; i < height; ++i) {
    if ((i + pos_i) % region != 0) continue;
    for (int j = 0; j < width; ++j) {
      if ((j + pos_j) % region != 0) continue;
      for (int c = 0; c < channels; ++c) {
        m.values[(static_cast<std::size_t>(i) * width + j) * channels + c] = value;
      }
    }
  }
  m.max_intensity = max_abs(m.values);
  m.params = {{"region", region}, {"pos_i", pos_i}, {"pos_j", pos_j}, {"intensity", intensity}};
  return m;
}

PerturbationMask from_tensor(const nn::Tensor<float>& values, MaskKind kind, nlohmann::json params) {
  const auto& s = values.shape();
  if (s.size() != 3) throw Error(ErrorCode::shape, "mask tensor must be {H, W, C}");
  PerturbationMask m;
  m.height = static_cast<int>(s[0]);
  m.width = static_cast<int>(s[1]);
  m.channels = static_cast<int>(s[2]);
  m.values.assign(values.values().begin(), values.values().end());
  m.kind = kind;
  m.max_intensity = max_abs(m.values);
  m.params = params.is_null() ? nlohmann::json::object() : std::move(params);
  return m;
}

nn::Tensor<float> to_tensor(const PerturbationMask& mask) {
  return nn::Tensor<float>({static_cast<std::size_t>(mask.height), static_cast<std::size_t>(mask.width),
                            static_cast<std::size_t>(mask.channels)},
                           mask.values);
}

PerturbationMask zero_mask(const Shape3& shape, MaskKind kind) {
  PerturbationMask m;
  m.height = shape.height;
  m.width = shape.width;
  m.channels = shape.channels;
  m.values.assign(shape.size(), 0.0f);
  m.kind = kind;
  return m;
}

Image apply(const Image& image, const PerturbationMask& mask) {
  if (image.shape() != mask.shape()) {
    throw Error(ErrorCode::shape, "mask " + to_string(mask.shape()) + " does not match image " +
                                      to_string(image.shape()));
  }
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image.pixels[i]) + mask.values[i], 0.0, 255.0);
    // default rounding mode: round half to even
    out.pixels[i] = static_cast<std::uint8_t>(std::nearbyint(v));
  }
  return out;
}

std::vector<Image> apply_all(std::span<const Image> images, const PerturbationMask& mask) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(apply(img, mask));
  return out;
}

std::vector<std::uint8_t> encode_mask(const PerturbationMask& mask) {
  if (mask.values.size() != mask.shape().size()) {
    throw Error(ErrorCode::shape, "mask value count does not match its extents");
  }
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(mask.height));
  w.u32(static_cast<std::uint32_t>(mask.width));
  w.u32(static_cast<std::uint32_t>(mask.channels));
  for (float v : mask.values) w.f32(v);
  const nlohmann::json meta = {
      {"kind", to_string(mask.kind)}, {"max_intensity", mask.max_intensity}, {"params", mask.params}};
  const std::string blob = meta.dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob);
  return std::move(w.buffer());
}

PerturbationMask decode_mask(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic(kMagic, "mask");
  PerturbationMask m;
  m.height = static_cast<int>(r.u32());
  m.width = static_cast<int>(r.u32());
  m.channels = static_cast<int>(r.u32());
  if (m.height <= 0 || m.width <= 0 || m.channels <= 0) throw Error(ErrorCode::format, "mask: bad extents");
  const std::size_t n = m.shape().size();
  if (n > r.remaining() / 4) throw Error(ErrorCode::format, "mask: truncated values");
  m.values.resize(n);
  for (auto& v : m.values) v = r.f32();
  const std::uint32_t len = r.u32();
  auto blob = r.take(len);
  if (r.remaining() != 0) throw Error(ErrorCode::format, "mask: trailing bytes");
  try {
    const auto meta = nlohmann::json::parse(blob.begin(), blob.end());
    m.kind = parse_mask_kind(meta.at("kind").get<std::string>());
    m.max_intensity = meta.at("max_intensity").get<double>();
    m.params = meta.at("params");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, std::string("mask: bad metadata: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::format, std::string("mask: bad metadata: ") + e.what());
  }
  return m;
}

void save_mask(const PerturbationMask& mask, const std::filesystem::path& path) {
  io::write_file(path, encode_mask(mask));
}

PerturbationMask load_mask(const std::filesystem::path& path) { return decode_mask(io::read_file(path)); }

}  // namespace bd::masks
