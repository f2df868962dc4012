#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vvlab {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major tensor. Every dimension is at least 1; a scalar has shape
// {1}. Copies are deep, so a tensor is a plain value.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape);
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value) { return full({1}, value); }
  static BasicTensor vector(std::vector<T> values);
  static BasicTensor matrix(std::size_t rows, std::size_t cols,
                            std::initializer_list<T> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Treats the tensor as [rows x cols] with cols = last dimension.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const T* ptr() const { return data_.data(); }
  T* ptr() { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t row, std::size_t col) { return data_[row * cols() + col]; }
  const T& at(std::size_t row, std::size_t col) const {
    return data_[row * cols() + col];
  }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }
  std::span<T> row(std::size_t r) {
    return std::span<T>(data_).subspan(r * cols(), cols());
  }

  // Value of a single-element tensor.
  T item() const;

  BasicTensor reshaped(Shape shape) const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;

  // Bitwise equality of shape and payload.
  bool identical(const BasicTensor& other) const;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace vvlab
