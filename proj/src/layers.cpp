#include "adunet/layers.hpp"

#include <cmath>

namespace adunet {

template <typename T>
Conv2d<T> Conv2d<T>::create(ParameterStore<T>& store, const std::string& prefix, int in_channels,
                            int out_channels, int kernel, bool with_bias, Rng& rng) {
  Tensor<T> w({out_channels, in_channels, kernel, kernel});
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_channels * kernel * kernel));
  for (auto& v : w.values()) v = static_cast<T>(stddev * rng.normal());
  const auto category = kernel == 1 ? ParamCategory::conv1x1 : ParamCategory::conv3x3;
  Conv2d conv;
  conv.weight = store.add_parameter(prefix + ".weight", std::move(w), category);
  if (with_bias) conv.bias = store.add_parameter(prefix + ".bias", Tensor<T>({out_channels}), category);
  return conv;
}

template <typename T>
BatchNorm<T> BatchNorm<T>::create(ParameterStore<T>& store, const std::string& prefix, int channels) {
  BatchNorm bn;
  bn.gamma = store.add_parameter(prefix + ".gamma", Tensor<T>({channels}, T(1)), ParamCategory::norm);
  bn.beta = store.add_parameter(prefix + ".beta", Tensor<T>({channels}), ParamCategory::norm);
  bn.running_mean = store.add_buffer(prefix + ".running_mean", Tensor<T>({channels}));
  bn.running_var = store.add_buffer(prefix + ".running_var", Tensor<T>({channels}, T(1)));
  return bn;
}

template <typename T>
Var<T> BatchNorm<T>::operator()(const Var<T>& x, bool training) const {
  Var<T> mean = running_mean, var = running_var;
  ops::BatchNormOptions options;
  options.training = training;
  return ops::batch_norm(x, gamma, beta, mean.mutable_value(), var.mutable_value(), options);
}

template <typename T>
ConvBlockParams<T> ConvBlockParams<T>::create(ParameterStore<T>& store, const std::string& prefix, int in_channels,
                                              int out_channels, Rng& rng) {
  ConvBlockParams p;
  p.conv1 = Conv2d<T>::create(store, prefix + ".layer1", in_channels, out_channels, 3, false, rng);
  p.bn1 = BatchNorm<T>::create(store, prefix + ".layer1.bn", out_channels);
  p.conv2 = Conv2d<T>::create(store, prefix + ".layer2", out_channels, out_channels, 3, false, rng);
  p.bn2 = BatchNorm<T>::create(store, prefix + ".layer2.bn", out_channels);
  return p;
}

template <typename T>
Var<T> conv_block(const Var<T>& x, const ConvBlockParams<T>& p, Activation activation, T leaky_slope,
                  bool training) {
  if (x.value().rank() != 4 || x.dim(1) != p.in_channels())
    throw ShapeError("conv_block: input " + shape_string(x.shape()) + " does not have " +
                     std::to_string(p.in_channels()) + " channels");
  const T slope = activation == Activation::relu ? T(0) : leaky_slope;
  Var<T> h = ops::leaky_relu(p.bn1(p.conv1(x), training), slope);
  return ops::leaky_relu(p.bn2(p.conv2(h), training), slope);
}

template <typename T>
HeadParams<T> HeadParams<T>::create(ParameterStore<T>& store, const std::string& prefix, int in_channels,
                                    int out_channels, Rng& rng) {
  HeadParams p;
  p.conv1 = Conv2d<T>::create(store, prefix + ".layer1", in_channels, out_channels, 3, false, rng);
  p.bn1 = BatchNorm<T>::create(store, prefix + ".layer1.bn", out_channels);
  p.conv2 = Conv2d<T>::create(store, prefix + ".layer2", out_channels, out_channels, 3, true, rng);
  p.conv2.weight.mutable_value().fill(T(0));
  return p;
}

template <typename T>
Var<T> head_forward(const Var<T>& x, const HeadParams<T>& p, T leaky_slope, bool training) {
  if (x.value().rank() != 4 || x.dim(1) != p.conv1.in_channels())
    throw ShapeError("head: input " + shape_string(x.shape()) + " does not have " +
                     std::to_string(p.conv1.in_channels()) + " channels");
  return p.conv2(ops::leaky_relu(p.bn1(p.conv1(x), training), leaky_slope));
}

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct ConvBlockParams<float>;
template struct ConvBlockParams<double>;
template struct HeadParams<float>;
template struct HeadParams<double>;
template Var<float> conv_block<float>(const Var<float>&, const ConvBlockParams<float>&, Activation, float, bool);
template Var<double> conv_block<double>(const Var<double>&, const ConvBlockParams<double>&, Activation, double, bool);
template Var<float> head_forward<float>(const Var<float>&, const HeadParams<float>&, float, bool);
template Var<double> head_forward<double>(const Var<double>&, const HeadParams<double>&, double, bool);

}  // namespace adunet
