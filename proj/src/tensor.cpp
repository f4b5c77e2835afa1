#include "acrn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "acrn/errors.hpp"

namespace acrn {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t num_elements(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_positive(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor() : data_(1, T{0}) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_positive(shape_);
  data_.assign(num_elements(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_positive(shape_);
  if (data_.size() != num_elements(shape_)) {
    throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                     std::to_string(num_elements(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::randn(Shape shape, std::mt19937_64& rng, T stddev) {
  BasicTensor out(std::move(shape));
  std::normal_distribution<T> dist(T{0}, stddev);
  for (auto& v : out.data_) v = dist(rng);
  return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::uniform(Shape shape, std::mt19937_64& rng, T lo, T hi) {
  BasicTensor out(std::move(shape));
  std::uniform_real_distribution<T> dist(lo, hi);
  for (auto& v : out.data_) v = dist(rng);
  return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (num_elements(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

}  // namespace acrn
