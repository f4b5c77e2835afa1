#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace acrn {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

// Product of all dimensions; 1 for a rank-0 shape.
std::size_t num_elements(const Shape& shape);

// Dense row-major array of scalars. Activations use N,C,H,W layout.
//
// Every dimension is strictly positive, so data().size() always equals
// num_elements(shape()).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  // Rank-0 scalar holding zero.
  BasicTensor();
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T{0}); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T{1}); }
  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, value); }
  // Zero-mean Gaussian entries with the given standard deviation.
  static BasicTensor randn(Shape shape, std::mt19937_64& rng, T stddev = T{1});
  // Uniform entries in [lo, hi).
  static BasicTensor uniform(Shape shape, std::mt19937_64& rng, T lo, T hi);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 and rank-4 element access (no bounds checks beyond rank).
  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // Same data viewed under a new shape with an equal element count.
  BasicTensor reshaped(Shape shape) const;

  void fill(T value);

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

// Throws ShapeError naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace acrn
