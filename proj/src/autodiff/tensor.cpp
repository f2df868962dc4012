#include "vvlab/autodiff/tensor.hpp"

#include <cmath>
#include <cstring>

#include "vvlab/error.hpp"

namespace vvlab {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimension of size 0 in " + shape_to_string(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), T(0));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  BasicTensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::vector(std::vector<T> values) {
  Shape s{values.size()};
  return BasicTensor(std::move(s), std::move(values));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::matrix(std::size_t rows, std::size_t cols,
                                      std::initializer_list<T> values) {
  return BasicTensor({rows, cols}, std::vector<T>(values));
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
  }
  return data_[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
bool BasicTensor<T>::identical(const BasicTensor& other) const {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace vvlab
