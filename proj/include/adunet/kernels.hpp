#pragma once

// Data-parallel building blocks shared by the differentiable ops. Loops are
// parallelised with OpenMP over independent output planes; matrix products go
// through Eigen. Serial counterparts used for testing live in reference.hpp.

#include <cstdint>
#include <vector>

#include "adunet/tensor.hpp"

namespace adunet::kernels {

// Square-kernel, stride-1, zero-padded ("same") 2D convolution.
// x [N,Ci,H,W], weight [Co,Ci,k,k], bias [Co] or empty -> [N,Co,H,W].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias);

// Gradients of conv2d_forward. Any output pointer may be null. Outputs are
// overwritten, not accumulated.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_x, Tensor<T>* grad_weight, Tensor<T>* grad_bias);

// Bilinear interpolation with half-pixel centres (align_corners = false) and
// edge clamping, the common convention for 2x feature upsampling.
struct LinearTaps {
  std::vector<std::int64_t> lo;
  std::vector<std::int64_t> hi;
  std::vector<double> frac;  // weight of `hi`
};
LinearTaps linear_taps(std::int64_t in_size, std::int64_t out_size);

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

// Adjoint of resize_bilinear.
template <typename T>
Tensor<T> resize_bilinear_backward(const Tensor<T>& grad_out, std::int64_t in_h, std::int64_t in_w);

// 2x2 / stride 2 max pooling. `argmax` receives the flat input index chosen
// for each output element.
template <typename T>
Tensor<T> maxpool2x2_forward(const Tensor<T>& x, std::vector<std::int64_t>* argmax);

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_out, const std::vector<std::int64_t>& argmax,
                              const Shape& input_shape);

// Row-major GEMM helpers over raw buffers: C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, const T* b, T beta, T* c);

}  // namespace adunet::kernels
