#pragma once

#include <string>

#include "adunet/ops.hpp"
#include "adunet/parameter_store.hpp"
#include "adunet/rng.hpp"

namespace adunet {

/// Convolution weights, He-normal initialised (std = sqrt(2 / fan_in)).
/// Convolutions feeding a normalisation layer carry no bias; the
/// normalisation shift subsumes it.
template <typename T>
struct Conv2d {
  Var<T> weight;  // [out, in, k, k]
  Var<T> bias;    // [out] or undefined

  static Conv2d create(ParameterStore<T>& store, const std::string& prefix, int in_channels, int out_channels,
                       int kernel, bool with_bias, Rng& rng);

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias); }
  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }
};

template <typename T>
struct BatchNorm {
  Var<T> gamma;
  Var<T> beta;
  Var<T> running_mean;
  Var<T> running_var;

  static BatchNorm create(ParameterStore<T>& store, const std::string& prefix, int channels);

  Var<T> operator()(const Var<T>& x, bool training) const;
};

enum class Activation { relu, leaky_relu };

/// Two 3x3 convolutions, each followed by batch normalisation and an
/// activation.
template <typename T>
struct ConvBlockParams {
  Conv2d<T> conv1;
  BatchNorm<T> bn1;
  Conv2d<T> conv2;
  BatchNorm<T> bn2;

  static ConvBlockParams create(ParameterStore<T>& store, const std::string& prefix, int in_channels,
                                int out_channels, Rng& rng);
  std::int64_t in_channels() const { return conv1.in_channels(); }
  std::int64_t out_channels() const { return conv2.out_channels(); }
};

/// Spatial size is preserved; throws ShapeError when `x` does not have
/// `p.in_channels()` channels.
template <typename T>
Var<T> conv_block(const Var<T>& x, const ConvBlockParams<T>& p, Activation activation, T leaky_slope,
                  bool training);

/// Output head mapping decoder features to an image-space residual:
/// conv-BN-leaky ReLU, then a plain biased convolution so the residual can
/// take any sign. That last convolution starts at zero, so an untrained
/// network returns its input unchanged.
template <typename T>
struct HeadParams {
  Conv2d<T> conv1;
  BatchNorm<T> bn1;
  Conv2d<T> conv2;

  static HeadParams create(ParameterStore<T>& store, const std::string& prefix, int in_channels, int out_channels,
                           Rng& rng);
};

template <typename T>
Var<T> head_forward(const Var<T>& x, const HeadParams<T>& p, T leaky_slope, bool training);

}  // namespace adunet
