#include <cmath>
#include <fstream>
#include <iterator>

#include "bd/binary_io.hpp"
#include "bd/nn.hpp"

namespace bd {

namespace io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::io, "short write to " + path.string());
}

}  // namespace io

namespace nn {

namespace {

constexpr std::string_view kMagic{"BDNET1\0\0", 8};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.i32(model.input_shape.height);
  w.i32(model.input_shape.width);
  w.i32(model.input_shape.channels);
  w.i32(model.class_count);
  w.i32(model.input_divisor);
  w.i32(static_cast<std::int32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    w.i32(static_cast<std::int32_t>(l.kind));
    w.i32(l.units);
    w.i32(l.kernel);
    w.i32(l.stride);
    // keep probability in parts per million
    w.i32(static_cast<std::int32_t>(std::lround(l.keep_prob * 1e6)));
    w.i32(l.skip_source);
  }
  for (const auto& p : model.params) {
    for (float v : p.weights.values()) w.f32(v);
    for (float v : p.bias.values()) w.f32(v);
  }
  return std::move(w.buffer());
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic(kMagic, "checkpoint");
  Shape3 input;
  input.height = r.i32();
  input.width = r.i32();
  input.channels = r.i32();
  const int classes = r.i32();
  const int divisor = r.i32();
  const int count = r.i32();
  if (count < 0 || count > 4096) throw Error(ErrorCode::format, "checkpoint: implausible layer count");
  std::vector<LayerSpec> layers;
  for (int i = 0; i < count; ++i) {
    LayerSpec l;
    const int kind = r.i32();
    if (kind < 1 || kind > 7) throw Error(ErrorCode::format, "checkpoint: unknown layer kind");
    l.kind = static_cast<LayerKind>(kind);
    l.units = r.i32();
    l.kernel = r.i32();
    l.stride = r.i32();
    l.keep_prob = r.i32() / 1e6;
    l.skip_source = r.i32();
    layers.push_back(l);
  }
  Model model;
  try {
    model = make_model<float>(input, classes, std::move(layers), divisor);
  } catch (const Error& e) {
    throw Error(ErrorCode::format, std::string("checkpoint: ") + e.what());
  }
  for (auto& p : model.params) {
    for (auto& v : p.weights.values()) v = r.f32();
    for (auto& v : p.bias.values()) v = r.f32();
  }
  if (r.remaining() != 0) throw Error(ErrorCode::format, "checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace nn
}  // namespace bd
