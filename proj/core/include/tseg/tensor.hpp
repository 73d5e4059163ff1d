#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tseg {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array. Images are [C,H,W], logits [M,H,W], per-pixel
// losses [H,W], scalars [1].
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape_); }
  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-3 accessor, [c,h,w].
  T& at(int c, int h, int w) noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  const T& at(int c, int h, int w) const noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }

  // Scalar value of a single-element tensor.
  T item() const;

  void fill(T value);
  bool all_finite() const noexcept;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

// Per-pixel class indices, H x W.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width, std::uint16_t fill = 0);
  LabelMap(int height, int width, std::vector<std::uint16_t> labels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return labels_.size(); }

  std::uint16_t& operator[](std::size_t i) noexcept { return labels_[i]; }
  std::uint16_t operator[](std::size_t i) const noexcept { return labels_[i]; }
  std::uint16_t& at(int h, int w) noexcept { return labels_[static_cast<std::size_t>(h) * width_ + w]; }
  std::uint16_t at(int h, int w) const noexcept {
    return labels_[static_cast<std::size_t>(h) * width_ + w];
  }

  std::span<const std::uint16_t> data() const noexcept { return labels_; }
  std::span<std::uint16_t> data() noexcept { return labels_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint16_t> labels_;
};

// Per-pixel argmax over the channel axis of an [M,H,W] tensor. Ties go to
// the lowest class index.
template <typename T>
LabelMap argmax_channels(const BasicTensor<T>& logits);

}  // namespace tseg
