#pragma once

// Differentiable tensor operations on Var<T>. All feature maps are
// [N, C, H, W]; per-channel parameters are rank-1 [C].

#include "adunet/autograd.hpp"

namespace adunet::ops {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);

// Reductions to a rank-1 scalar tensor of size 1.
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);

// `bias` may be undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

struct BatchNormOptions {
  bool training = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel batch normalisation. In training mode the batch statistics
// normalise the input and are blended into the running buffers; otherwise
// the running buffers are used. A channel that sees a single value per batch
// falls back to the running statistics.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, const BatchNormOptions& options);

template <typename T>
Var<T> max_pool2x2(const Var<T>& x);

// Exact 2x bilinear upsampling (half-pixel centres).
template <typename T>
Var<T> upsample2x(const Var<T>& x);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// Mean over the spatial dimensions: [N,C,H,W] -> [N,C,1,1].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

// Complementary gating w*a + (1-w)*b, evaluated as b + w*(a-b). `w` has the
// shape of `a` or is [N,C,1,1] and broadcast over space.
template <typename T>
Var<T> gate_mix(const Var<T>& w, const Var<T>& a, const Var<T>& b);

// Layer normalisation of every pixel's channel vector.
template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5);

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

}  // namespace adunet::ops
