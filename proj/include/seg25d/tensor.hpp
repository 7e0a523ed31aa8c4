#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seg25d/error.hpp"

namespace seg25d {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape);

// Dense row-major array (last index fastest). Scalars are rank-1 tensors of
// length 1.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_dims();
  }
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access, bounds unchecked beyond rank.
  template <class... I>
  T& operator()(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <class... I>
  const T& operator()(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  T item() const {
    if (data_.size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " +
                           shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("zero extent in shape " + shape_str(shape_));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) off = off * shape_[axis++] + i;
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Throws NumericError naming `what` if any element is NaN.
template <class T>
void check_not_nan(const Tensor<T>& t, const std::string& what);

}  // namespace seg25d
