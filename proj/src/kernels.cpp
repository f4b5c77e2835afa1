#include "acrn/kernels.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <vector>

#include "acrn/errors.hpp"
#include "acrn/parallel.hpp"

namespace acrn::kernels {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Everything needed to index one convolution, validated once.
struct ConvPlan {
  std::size_t n, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t ho, wo;
  std::size_t stride, padding;

  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
};

ConvPlan make_plan(const Shape& input, const Shape& kernel, Conv2dGeometry geom) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be rank 4 (N,C,H,W), got " + to_string(input));
  if (kernel.size() != 4) throw ShapeError("conv2d: kernel must be rank 4 (Cout,Cin,kh,kw), got " + to_string(kernel));
  if (input[1] != kernel[1]) {
    throw ShapeError("conv2d: channel mismatch, input " + to_string(input) + " kernel " + to_string(kernel));
  }
  if (kernel[2] % 2 == 0 || kernel[3] % 2 == 0) {
    throw ShapeError("conv2d: kernel spatial size must be odd, got " + to_string(kernel));
  }
  if (geom.stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  ConvPlan p{};
  p.n = input[0];
  p.cin = input[1];
  p.h = input[2];
  p.w = input[3];
  p.cout = kernel[0];
  p.kh = kernel[2];
  p.kw = kernel[3];
  p.stride = geom.stride;
  p.padding = geom.padding;
  p.ho = conv_output_extent(p.h, p.kh, p.stride, p.padding);
  p.wo = conv_output_extent(p.w, p.kw, p.stride, p.padding);
  return p;
}

// Unfolds one image [Cin,H,W] into a [Cin*kh*kw, Ho*Wo] patch matrix.
template <typename T>
void im2col(const T* image, const ConvPlan& p, T* col) {
  const auto h = static_cast<std::ptrdiff_t>(p.h);
  const auto w = static_cast<std::ptrdiff_t>(p.w);
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  const auto stride = static_cast<std::ptrdiff_t>(p.stride);
  for (std::size_t c = 0; c < p.cin; ++c) {
    const T* plane = image + c * p.h * p.w;
    for (std::size_t ky = 0; ky < p.kh; ++ky) {
      for (std::size_t kx = 0; kx < p.kw; ++kx) {
        T* dst = col + ((c * p.kh + ky) * p.kw + kx) * p.out_plane();
        for (std::size_t oy = 0; oy < p.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(ky) - pad;
          T* row = dst + oy * p.wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + p.wo, T{0});
            continue;
          }
          const T* src = plane + iy * w;
          for (std::size_t ox = 0; ox < p.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + static_cast<std::ptrdiff_t>(kx) - pad;
            row[ox] = (ix >= 0 && ix < w) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a patch matrix back onto an image, accumulating.
template <typename T>
void col2im(const T* col, const ConvPlan& p, T* image) {
  const auto h = static_cast<std::ptrdiff_t>(p.h);
  const auto w = static_cast<std::ptrdiff_t>(p.w);
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  const auto stride = static_cast<std::ptrdiff_t>(p.stride);
  for (std::size_t c = 0; c < p.cin; ++c) {
    T* plane = image + c * p.h * p.w;
    for (std::size_t ky = 0; ky < p.kh; ++ky) {
      for (std::size_t kx = 0; kx < p.kw; ++kx) {
        const T* src = col + ((c * p.kh + ky) * p.kw + kx) * p.out_plane();
        for (std::size_t oy = 0; oy < p.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(ky) - pad;
          if (iy < 0 || iy >= h) continue;
          const T* row = src + oy * p.wo;
          T* dst = plane + iy * w;
          for (std::size_t ox = 0; ox < p.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + static_cast<std::ptrdiff_t>(kx) - pad;
            if (ix >= 0 && ix < w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

int worker_count(std::size_t work_items) {
  return static_cast<int>(std::max<std::size_t>(1, std::min<std::size_t>(num_threads(), work_items)));
}

}  // namespace

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (input + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(input + 2 * padding));
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out(a.shape());
  const T* pa = a.raw();
  const T* pb = b.raw();
  T* po = out.raw();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  return out;
}

template <typename T>
void add_into(BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add_into");
  T* pa = a.raw();
  const T* pb = b.raw();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const T* px = x.raw();
  T* po = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] > T{0} ? px[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  require_same_shape(x.shape(), dy.shape(), "relu_backward");
  BasicTensor<T> out(x.shape());
  const T* px = x.raw();
  const T* pd = dy.raw();
  T* po = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] > T{0} ? pd[i] : T{0};
  return out;
}

template <typename T>
T sum(const BasicTensor<T>& x) {
  T total{0};
  for (auto v : x.data()) total += v;
  return total;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, Conv2dGeometry geom) {
  const ConvPlan p = make_plan(input.shape(), kernel.shape(), geom);
  BasicTensor<T> out(Shape{p.n, p.cout, p.ho, p.wo});
  const ConstMatrixMap<T> weights(kernel.raw(), static_cast<Eigen::Index>(p.cout),
                                  static_cast<Eigen::Index>(p.patch()));
  const std::size_t in_stride = p.cin * p.h * p.w;
  const std::size_t out_stride = p.cout * p.out_plane();
  const int workers = worker_count(p.n);

#pragma omp parallel num_threads(workers) if (workers > 1)
  {
    std::vector<T> col(p.patch() * p.out_plane());
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(p.n); ++n) {
      im2col(input.raw() + n * in_stride, p, col.data());
      const ConstMatrixMap<T> patches(col.data(), static_cast<Eigen::Index>(p.patch()),
                                      static_cast<Eigen::Index>(p.out_plane()));
      MatrixMap<T> result(out.raw() + n * out_stride, static_cast<Eigen::Index>(p.cout),
                          static_cast<Eigen::Index>(p.out_plane()));
      result.noalias() = weights * patches;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_grad_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernel,
                                 const Shape& input_shape, Conv2dGeometry geom) {
  const ConvPlan p = make_plan(input_shape, kernel.shape(), geom);
  require_same_shape(grad_out.shape(), Shape{p.n, p.cout, p.ho, p.wo}, "conv2d_grad_input");
  BasicTensor<T> grad_in(input_shape);
  const ConstMatrixMap<T> weights(kernel.raw(), static_cast<Eigen::Index>(p.cout),
                                  static_cast<Eigen::Index>(p.patch()));
  const std::size_t in_stride = p.cin * p.h * p.w;
  const std::size_t out_stride = p.cout * p.out_plane();
  const int workers = worker_count(p.n);

#pragma omp parallel num_threads(workers) if (workers > 1)
  {
    std::vector<T> col(p.patch() * p.out_plane());
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(p.n); ++n) {
      const ConstMatrixMap<T> dy(grad_out.raw() + n * out_stride, static_cast<Eigen::Index>(p.cout),
                                 static_cast<Eigen::Index>(p.out_plane()));
      MatrixMap<T> dcol(col.data(), static_cast<Eigen::Index>(p.patch()),
                        static_cast<Eigen::Index>(p.out_plane()));
      dcol.noalias() = weights.transpose() * dy;
      col2im(col.data(), p, grad_in.raw() + n * in_stride);
    }
  }
  return grad_in;
}

template <typename T>
BasicTensor<T> conv2d_grad_kernel(const BasicTensor<T>& input, const BasicTensor<T>& grad_out,
                                  const Shape& kernel_shape, Conv2dGeometry geom) {
  const ConvPlan p = make_plan(input.shape(), kernel_shape, geom);
  require_same_shape(grad_out.shape(), Shape{p.n, p.cout, p.ho, p.wo}, "conv2d_grad_kernel");
  const std::size_t in_stride = p.cin * p.h * p.w;
  const std::size_t out_stride = p.cout * p.out_plane();
  const int workers = worker_count(p.n);
  const auto rows = static_cast<Eigen::Index>(p.cout);
  const auto cols = static_cast<Eigen::Index>(p.patch());

  // One partial sum per worker, reduced in worker order.
  std::vector<RowMatrix<T>> partial(static_cast<std::size_t>(workers), RowMatrix<T>::Zero(rows, cols));

#pragma omp parallel num_threads(workers) if (workers > 1)
  {
    std::vector<T> col(p.patch() * p.out_plane());
    auto& acc = partial[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(p.n); ++n) {
      im2col(input.raw() + n * in_stride, p, col.data());
      const ConstMatrixMap<T> patches(col.data(), cols, static_cast<Eigen::Index>(p.out_plane()));
      const ConstMatrixMap<T> dy(grad_out.raw() + n * out_stride, rows,
                                 static_cast<Eigen::Index>(p.out_plane()));
      acc.noalias() += dy * patches.transpose();
    }
  }

  BasicTensor<T> grad_kernel(kernel_shape);
  MatrixMap<T> result(grad_kernel.raw(), rows, cols);
  result = partial[0];
  for (std::size_t t = 1; t < partial.size(); ++t) result += partial[t];
  return grad_kernel;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected rank 4, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  BasicTensor<T> out(Shape{n, c});
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < n * c; ++i) {
    const T* src = x.raw() + i * plane;
    T total{0};
    for (std::size_t k = 0; k < plane; ++k) total += src[k];
    out[i] = total * inv;
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& dy, const Shape& input_shape) {
  if (input_shape.size() != 4) throw ShapeError("global_avg_pool_backward: expected rank-4 input shape");
  require_same_shape(dy.shape(), Shape{input_shape[0], input_shape[1]}, "global_avg_pool_backward");
  const std::size_t plane = input_shape[2] * input_shape[3];
  BasicTensor<T> out(input_shape);
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    T* dst = out.raw() + i * plane;
    std::fill(dst, dst + plane, dy[i] * inv);
  }
  return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_a, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected rank-2 operands, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
  const std::size_t k = transpose_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t p = transpose_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner dimension mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  BasicTensor<T> out(Shape{m, p});
  const ConstMatrixMap<T> ma(a.raw(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
  const ConstMatrixMap<T> mb(b.raw(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));
  MatrixMap<T> mo(out.raw(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
  if (!transpose_a && !transpose_b) mo.noalias() = ma * mb;
  else if (transpose_a && !transpose_b) mo.noalias() = ma.transpose() * mb;
  else if (!transpose_a && transpose_b) mo.noalias() = ma * mb.transpose();
  else mo.noalias() = ma.transpose() * mb.transpose();
  return out;
}

#define ACRN_INSTANTIATE_KERNELS(T)                                                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template void add_into(BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                           \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                               \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template T sum(const BasicTensor<T>&);                                                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, Conv2dGeometry);      \
  template BasicTensor<T> conv2d_grad_input(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                            const Shape&, Conv2dGeometry);                           \
  template BasicTensor<T> conv2d_grad_kernel(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                             const Shape&, Conv2dGeometry);                          \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                    \
  template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const Shape&);             \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&, bool, bool);

ACRN_INSTANTIATE_KERNELS(float)
ACRN_INSTANTIATE_KERNELS(double)

#undef ACRN_INSTANTIATE_KERNELS

}  // namespace acrn::kernels
