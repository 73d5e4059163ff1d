#include "tseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "tseg/error.hpp"

namespace tseg {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ConfigError("tensor dims must be positive, got " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_string(shape_));
  }
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

LabelMap::LabelMap(int height, int width, std::uint16_t fill)
    : height_(height), width_(width), labels_(shape_numel({height, width}), fill) {}

LabelMap::LabelMap(int height, int width, std::vector<std::uint16_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  if (labels_.size() != shape_numel({height, width})) {
    throw ConfigError("label count does not match " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
}

template <typename T>
LabelMap argmax_channels(const BasicTensor<T>& logits) {
  if (logits.rank() != 3) {
    throw ConfigError("argmax_channels expects [M,H,W], got " + shape_string(logits.shape()));
  }
  const int m = logits.dim(0);
  const int h = logits.dim(1);
  const int w = logits.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  LabelMap out(h, w);
  const auto data = logits.data();
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    T best_value = data[i];
    for (int c = 1; c < m; ++c) {
      const T v = data[c * plane + i];
      if (v > best_value) {
        best_value = v;
        best = c;
      }
    }
    out[i] = static_cast<std::uint16_t>(best);
  }
  return out;
}

template LabelMap argmax_channels(const BasicTensor<float>&);
template LabelMap argmax_channels(const BasicTensor<double>&);

}  // namespace tseg
