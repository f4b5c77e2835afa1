#pragma once

#include <cstddef>

#include "acrn/tensor.hpp"

// Raw numeric kernels over BasicTensor. No autodiff bookkeeping happens here;
// see autodiff.hpp for the differentiable wrappers.
namespace acrn::kernels {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Floor-division output extent; throws ShapeError if the window does not fit.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

// a += b
template <typename T>
void add_into(BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

// dy masked by x > 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy);

template <typename T>
T sum(const BasicTensor<T>& x);

// input [N,Cin,H,W] * kernel [Cout,Cin,kh,kw] -> [N,Cout,H',W'], zero padded.
// Lowered to one GEMM per sample over an im2col patch matrix.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      Conv2dGeometry geom);

template <typename T>
BasicTensor<T> conv2d_grad_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernel,
                                 const Shape& input_shape, Conv2dGeometry geom);

template <typename T>
BasicTensor<T> conv2d_grad_kernel(const BasicTensor<T>& input, const BasicTensor<T>& grad_out,
                                  const Shape& kernel_shape, Conv2dGeometry geom);

// [N,C,H,W] -> [N,C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

// Spreads dy [N,C] uniformly back over an [N,C,H,W] input.
template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& dy, const Shape& input_shape);

// op(a) * op(b) for rank-2 tensors, where op transposes when requested.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_a = false,
                      bool transpose_b = false);

}  // namespace acrn::kernels
