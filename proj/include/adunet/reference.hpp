#pragma once

// Straightforward serial implementations kept as test oracles and benchmark
// baselines for the parallel kernels.

#include <cstdint>

#include "adunet/tensor.hpp"

namespace adunet::reference {

template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias);

template <typename T>
Tensor<T> resize_bilinear_direct(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

template <typename T>
Tensor<T> maxpool2x2_direct(const Tensor<T>& x);

}  // namespace adunet::reference
