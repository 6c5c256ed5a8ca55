#pragma once

// Gated fusion of two equally-shaped feature maps. Both blocks compute a
// gate w in (0,1) from the sum of the inputs through
//   sigmoid(BN(conv1x1(ReLU(BN(conv1x1(.))))))
// and return w*a + (1-w)*b. CFF evaluates the gate at every pixel; GCFF
// evaluates it once per channel on the globally average-pooled sum.

#include "adunet/layers.hpp"

namespace adunet {

/// Two width-preserving 1x1 convolutions with their batch norms.
template <typename T>
struct FusionParams {
  Conv2d<T> conv1;
  BatchNorm<T> bn1;
  Conv2d<T> conv2;
  BatchNorm<T> bn2;

  static FusionParams create(ParameterStore<T>& store, const std::string& prefix, int channels, Rng& rng);
  std::int64_t channels() const { return conv1.in_channels(); }
};

template <typename T>
using CffParams = FusionParams<T>;
template <typename T>
using GcffParams = FusionParams<T>;

/// Per-pixel gate W, same shape as the inputs.
template <typename T>
Var<T> cff_gate(const Var<T>& a, const Var<T>& b, const CffParams<T>& p, bool training);

template <typename T>
Var<T> cff(const Var<T>& a, const Var<T>& b, const CffParams<T>& p, bool training);

/// Per-channel gate w, shape [N,C,1,1].
template <typename T>
Var<T> gcff_gate(const Var<T>& a, const Var<T>& b, const GcffParams<T>& p, bool training);

template <typename T>
Var<T> gcff(const Var<T>& a, const Var<T>& b, const GcffParams<T>& p, bool training);

}  // namespace adunet
