#include "acrn/layers.hpp"

#include <cmath>
#include <vector>

#include "acrn/errors.hpp"

namespace acrn {

template <typename T>
BasicTensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return BasicTensor<T>::randn(std::move(shape), rng, stddev);
}

// ---------------------------------------------------------------------------
// Conv2dLayer

template <typename T>
Conv2dLayer<T>::Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                            std::size_t stride, std::size_t padding, std::mt19937_64& rng)
    : geom_{stride, padding} {
  kernel_ = Variable<T>::leaf(
      he_normal<T>(Shape{out_channels, in_channels, kernel_size, kernel_size},
                   in_channels * kernel_size * kernel_size, rng),
      true, "kernel");
}

template <typename T>
Variable<T> Conv2dLayer<T>::forward(Tape<T>& tape, const Variable<T>& x) const {
  return ops::conv2d(tape, x, kernel_, geom_);
}

template <typename T>
std::vector<Parameter<T>> Conv2dLayer<T>::named_parameters(const std::string& prefix) const {
  return {{prefix + ".kernel", kernel_, true}};
}

// ---------------------------------------------------------------------------
// BatchNormLayer

template <typename T>
BatchNormLayer<T>::BatchNormLayer(std::size_t channels, T momentum, T epsilon)
    : gamma_(Variable<T>::leaf(BasicTensor<T>::ones(Shape{channels}), true, "gamma")),
      beta_(Variable<T>::leaf(BasicTensor<T>::zeros(Shape{channels}), true, "beta")),
      running_mean_(Shape{channels}, T{0}),
      running_var_(Shape{channels}, T{1}),
      momentum_(momentum),
      epsilon_(epsilon) {}

template <typename T>
Variable<T> BatchNormLayer<T>::forward(Tape<T>& tape, const Variable<T>& x, Mode mode) {
  const Shape& shape = x.shape();
  if (shape.size() < 2 || shape[1] != channels()) {
    throw ShapeError("batchnorm: expected channel axis of size " + std::to_string(channels()) + ", got " +
                     to_string(shape));
  }
  const std::size_t n = shape[0];
  const std::size_t c_count = shape[1];
  const std::size_t inner = num_elements(shape) / (n * c_count);
  const std::size_t count = n * inner;  // values per channel

  const BasicTensor<T>& in = x.value();
  const BasicTensor<T>& gamma = gamma_.value();
  const BasicTensor<T>& beta = beta_.value();

  BasicTensor<T> xhat(shape);
  BasicTensor<T> out(shape);
  std::vector<T> inv_std(c_count);

  auto for_channel = [&](std::size_t c, auto&& fn) {
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t base = (b * c_count + c) * inner;
      for (std::size_t k = 0; k < inner; ++k) fn(base + k);
    }
  };

  if (mode == Mode::kTraining) {
    if (count < 2) {
      throw ShapeError("batchnorm: training mode needs at least 2 values per channel, got " +
                       std::to_string(count) + " for shape " + to_string(shape));
    }
    for (std::size_t c = 0; c < c_count; ++c) {
      double total = 0.0;
      for_channel(c, [&](std::size_t i) { total += in[i]; });
      const T mean = static_cast<T>(total / static_cast<double>(count));
      double sq = 0.0;
      for_channel(c, [&](std::size_t i) {
        const double d = static_cast<double>(in[i] - mean);
        sq += d * d;
      });
      const double var = sq / static_cast<double>(count);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon_)));
      for_channel(c, [&](std::size_t i) {
        xhat[i] = (in[i] - mean) * inv_std[c];
        out[i] = gamma[c] * xhat[i] + beta[c];
      });
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      running_mean_[c] = (T{1} - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (T{1} - momentum_) * running_var_[c] + momentum_ * static_cast<T>(unbiased);
    }
    return tape.record(
        "batchnorm", {x, gamma_, beta_}, std::move(out),
        [xhat = std::move(xhat), inv_std = std::move(inv_std), gamma_var = gamma_, n, c_count, inner, count](
            const BasicTensor<T>& dy, const std::vector<bool>& needs) {
          const BasicTensor<T>& g = gamma_var.value();
          BasicTensor<T> dx(dy.shape());
          BasicTensor<T> dgamma(Shape{c_count});
          BasicTensor<T> dbeta(Shape{c_count});
          const T inv_count = T{1} / static_cast<T>(count);
          for (std::size_t c = 0; c < c_count; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t base = (b * c_count + c) * inner;
              for (std::size_t k = 0; k < inner; ++k) {
                sum_dy += dy[base + k];
                sum_dy_xhat += static_cast<double>(dy[base + k]) * xhat[base + k];
              }
            }
            dgamma[c] = static_cast<T>(sum_dy_xhat);
            dbeta[c] = static_cast<T>(sum_dy);
            if (!needs[0]) continue;
            const T mean_dy = static_cast<T>(sum_dy) * inv_count;
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat) * inv_count;
            const T scale = g[c] * inv_std[c];
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t base = (b * c_count + c) * inner;
              for (std::size_t k = 0; k < inner; ++k) {
                const std::size_t i = base + k;
                dx[i] = scale * (dy[i] - mean_dy - xhat[i] * mean_dy_xhat);
              }
            }
          }
          typename Tape<T>::InputGrads grads(3);
          if (needs[0]) grads[0] = std::move(dx);
          grads[1] = std::move(dgamma);
          grads[2] = std::move(dbeta);
          return grads;
        });
  }

  for (std::size_t c = 0; c < c_count; ++c) {
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[c] + epsilon_)));
    const T mean = running_mean_[c];
    for_channel(c, [&](std::size_t i) {
      xhat[i] = (in[i] - mean) * inv_std[c];
      out[i] = gamma[c] * xhat[i] + beta[c];
    });
  }
  return tape.record(
      "batchnorm_inference", {x, gamma_, beta_}, std::move(out),
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gamma_var = gamma_, n, c_count, inner](
          const BasicTensor<T>& dy, const std::vector<bool>& needs) {
        const BasicTensor<T>& g = gamma_var.value();
        BasicTensor<T> dx(dy.shape());
        BasicTensor<T> dgamma(Shape{c_count});
        BasicTensor<T> dbeta(Shape{c_count});
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t c = 0; c < c_count; ++c) {
            const std::size_t base = (b * c_count + c) * inner;
            const T scale = g[c] * inv_std[c];
            for (std::size_t k = 0; k < inner; ++k) {
              const std::size_t i = base + k;
              dx[i] = scale * dy[i];
              dgamma[c] += dy[i] * xhat[i];
              dbeta[c] += dy[i];
            }
          }
        }
        typename Tape<T>::InputGrads grads(3);
        if (needs[0]) grads[0] = std::move(dx);
        grads[1] = std::move(dgamma);
        grads[2] = std::move(dbeta);
        return grads;
      });
}

template <typename T>
std::vector<Parameter<T>> BatchNormLayer<T>::named_parameters(const std::string& prefix) const {
  return {{prefix + ".gamma", gamma_, false}, {prefix + ".beta", beta_, false}};
}

// ---------------------------------------------------------------------------
// DenseLayer

template <typename T>
DenseLayer<T>::DenseLayer(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng)
    : weight_(Variable<T>::leaf(he_normal<T>(Shape{out_features, in_features}, in_features, rng), true, "weight")),
      bias_(Variable<T>::leaf(BasicTensor<T>::zeros(Shape{out_features}), true, "bias")) {}

template <typename T>
Variable<T> DenseLayer<T>::forward(Tape<T>& tape, const Variable<T>& x) const {
  return ops::dense(tape, x, weight_, bias_);
}

template <typename T>
std::vector<Parameter<T>> DenseLayer<T>::named_parameters(const std::string& prefix) const {
  return {{prefix + ".weight", weight_, true}, {prefix + ".bias", bias_, true}};
}

// ---------------------------------------------------------------------------
// softmax cross-entropy

template <typename T>
Variable<T> softmax_cross_entropy(Tape<T>& tape, const Variable<T>& logits, std::span<const int> labels) {
  const BasicTensor<T>& z = logits.value();
  if (z.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,K], got " + to_string(z.shape()));
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  BasicTensor<T> probs(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                      std::to_string(k) + ")");
    }
    T max_logit = z(i, 0);
    for (std::size_t j = 1; j < k; ++j) max_logit = std::max(max_logit, z(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(z(i, j) - max_logit));
      probs(i, j) = static_cast<T>(e);
      denom += e;
    }
    for (std::size_t j = 0; j < k; ++j) probs(i, j) = static_cast<T>(probs(i, j) / denom);
    const double log_sum_exp = std::log(denom);
    total += log_sum_exp - static_cast<double>(z(i, static_cast<std::size_t>(label)) - max_logit);
  }
  const T loss = static_cast<T>(total / static_cast<double>(n));
  std::vector<int> saved(labels.begin(), labels.end());
  return tape.record("softmax_cross_entropy", {logits}, BasicTensor<T>::scalar(loss),
                     [probs = std::move(probs), saved = std::move(saved), n, k](const BasicTensor<T>& dy,
                                                                                const std::vector<bool>&) {
                       const T factor = dy[0] / static_cast<T>(n);
                       BasicTensor<T> dz(Shape{n, k});
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const T target = static_cast<std::size_t>(saved[i]) == j ? T{1} : T{0};
                           dz(i, j) = (probs(i, j) - target) * factor;
                         }
                       }
                       return typename Tape<T>::InputGrads{std::move(dz)};
                     });
}

template BasicTensor<float> he_normal(Shape, std::size_t, std::mt19937_64&);
template BasicTensor<double> he_normal(Shape, std::size_t, std::mt19937_64&);
template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class BatchNormLayer<float>;
template class BatchNormLayer<double>;
template class DenseLayer<float>;
template class DenseLayer<double>;
template Variable<float> softmax_cross_entropy(Tape<float>&, const Variable<float>&, std::span<const int>);
template Variable<double> softmax_cross_entropy(Tape<double>&, const Variable<double>&, std::span<const int>);

}  // namespace acrn
