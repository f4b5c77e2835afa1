#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "acrn/autodiff.hpp"
#include "acrn/random.hpp"

namespace acrn {

enum class Mode { kTraining, kInference };

// A trainable leaf plus the optimizer metadata it carries.
template <typename T>
struct Parameter {
  std::string name;
  Variable<T> var;
  bool decay = true;  // false for batch-norm affine parameters
};

template <typename T>
std::vector<Variable<T>> variables_of(const std::vector<Parameter<T>>& params) {
  std::vector<Variable<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

// He-normal init: N(0, 2 / fan_in).
template <typename T>
BasicTensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

// 2-D convolution without bias; batch norm always follows.
template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, std::size_t stride,
              std::size_t padding, std::mt19937_64& rng);

  Variable<T> forward(Tape<T>& tape, const Variable<T>& x) const;

  std::vector<Variable<T>> parameters() const { return {kernel_}; }
  std::vector<Parameter<T>> named_parameters(const std::string& prefix) const;

  Variable<T>& kernel() { return kernel_; }
  const Variable<T>& kernel() const { return kernel_; }
  std::size_t in_channels() const { return kernel_.shape()[1]; }
  std::size_t out_channels() const { return kernel_.shape()[0]; }
  std::size_t stride() const { return geom_.stride; }
  std::size_t padding() const { return geom_.padding; }

 private:
  Variable<T> kernel_;
  kernels::Conv2dGeometry geom_;
};

// Per-channel batch normalization over every axis except axis 1.
//
// Training mode normalizes with the biased batch variance and folds the
// unbiased variance into running_var; inference mode uses the running
// statistics. Gradients flow through the batch mean and variance.
template <typename T>
class BatchNormLayer {
 public:
  explicit BatchNormLayer(std::size_t channels, T momentum = T(0.1), T epsilon = T(1e-5));

  Variable<T> forward(Tape<T>& tape, const Variable<T>& x, Mode mode);

  std::vector<Variable<T>> parameters() const { return {gamma_, beta_}; }
  std::vector<Parameter<T>> named_parameters(const std::string& prefix) const;

  std::size_t channels() const { return gamma_.shape()[0]; }
  Variable<T>& gamma() { return gamma_; }
  Variable<T>& beta() { return beta_; }
  const Variable<T>& gamma() const { return gamma_; }
  const Variable<T>& beta() const { return beta_; }
  BasicTensor<T>& running_mean() { return running_mean_; }
  BasicTensor<T>& running_var() { return running_var_; }
  const BasicTensor<T>& running_mean() const { return running_mean_; }
  const BasicTensor<T>& running_var() const { return running_var_; }
  T momentum() const { return momentum_; }
  T epsilon() const { return epsilon_; }

 private:
  Variable<T> gamma_;
  Variable<T> beta_;
  BasicTensor<T> running_mean_;
  BasicTensor<T> running_var_;
  T momentum_;
  T epsilon_;
};

template <typename T>
class DenseLayer {
 public:
  DenseLayer(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng);

  Variable<T> forward(Tape<T>& tape, const Variable<T>& x) const;

  std::vector<Variable<T>> parameters() const { return {weight_, bias_}; }
  std::vector<Parameter<T>> named_parameters(const std::string& prefix) const;

  Variable<T>& weight() { return weight_; }
  Variable<T>& bias() { return bias_; }
  const Variable<T>& weight() const { return weight_; }
  const Variable<T>& bias() const { return bias_; }

 private:
  Variable<T> weight_;  // [out, in]
  Variable<T> bias_;    // [out]
};

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <typename T>
Variable<T> softmax_cross_entropy(Tape<T>& tape, const Variable<T>& logits, std::span<const int> labels);

extern template class Conv2dLayer<float>;
extern template class Conv2dLayer<double>;
extern template class BatchNormLayer<float>;
extern template class BatchNormLayer<double>;
extern template class DenseLayer<float>;
extern template class DenseLayer<double>;

}  // namespace acrn
