#include <cmath>
#include <functional>
#include <numeric>

#include "bd/nn.hpp"

namespace bd::nn {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw Error(ErrorCode::shape, "tensor extents must be positive");
  }
}

}  // namespace

template <class T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(product(shape_), fill);
}

template <class T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (product(shape_) != values_.size()) {
    throw Error(ErrorCode::shape, "tensor value count does not match its shape");
  }
}

template <class T>
Tensor<T> Tensor<T>::reshaped(std::vector<std::size_t> shape) const {
  return Tensor<T>(std::move(shape), values_);
}

template <class T>
bool Tensor<T>::all_finite() const {
  for (T v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

Tensor<float> to_tensor(const Image& image) {
  std::vector<float> values(image.pixels.begin(), image.pixels.end());
  return Tensor<float>({static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width),
                        static_cast<std::size_t>(image.channels)},
                       std::move(values));
}

Tensor<float> to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw Error(ErrorCode::empty_batch, "cannot pack an empty batch");
  const Shape3 shape = images.front()->shape();
  std::vector<float> values;
  values.reserve(images.size() * shape.size());
  for (const Image* img : images) {
    if (img->shape() != shape) throw Error(ErrorCode::input_shape, "batch images differ in shape");
    values.insert(values.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor<float>({images.size(), static_cast<std::size_t>(shape.height),
                        static_cast<std::size_t>(shape.width), static_cast<std::size_t>(shape.channels)},
                       std::move(values));
}

Tensor<float> to_batch(std::span<const Image> images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return to_batch(std::span<const Image* const>(ptrs));
}

}  // namespace bd::nn
