#include "adunet/fusion.hpp"

namespace adunet {
namespace {

template <typename T>
void check_inputs(const Var<T>& a, const Var<T>& b, const FusionParams<T>& p, const char* op) {
  if (a.value().rank() != 4 || !a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": inputs must share one [N,C,H,W] shape, got " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  if (a.dim(1) != p.channels())
    throw ShapeError(std::string(op) + ": inputs have " + std::to_string(a.dim(1)) + " channels, block expects " +
                     std::to_string(p.channels()));
}

template <typename T>
Var<T> gate(const Var<T>& x, const FusionParams<T>& p, bool training) {
  Var<T> h = ops::relu(p.bn1(p.conv1(x), training));
  return ops::sigmoid(p.bn2(p.conv2(h), training));
}

}  // namespace

template <typename T>
FusionParams<T> FusionParams<T>::create(ParameterStore<T>& store, const std::string& prefix, int channels, Rng& rng) {
  FusionParams p;
  p.conv1 = Conv2d<T>::create(store, prefix + ".conv1", channels, channels, 1, false, rng);
  p.bn1 = BatchNorm<T>::create(store, prefix + ".conv1.bn", channels);
  p.conv2 = Conv2d<T>::create(store, prefix + ".conv2", channels, channels, 1, false, rng);
  p.bn2 = BatchNorm<T>::create(store, prefix + ".conv2.bn", channels);
  return p;
}

template <typename T>
Var<T> cff_gate(const Var<T>& a, const Var<T>& b, const CffParams<T>& p, bool training) {
  check_inputs(a, b, p, "cff");
  return gate(ops::add(a, b), p, training);
}

template <typename T>
Var<T> cff(const Var<T>& a, const Var<T>& b, const CffParams<T>& p, bool training) {
  return ops::gate_mix(cff_gate(a, b, p, training), a, b);
}

template <typename T>
Var<T> gcff_gate(const Var<T>& a, const Var<T>& b, const GcffParams<T>& p, bool training) {
  check_inputs(a, b, p, "gcff");
  return gate(ops::global_avg_pool(ops::add(a, b)), p, training);
}

template <typename T>
Var<T> gcff(const Var<T>& a, const Var<T>& b, const GcffParams<T>& p, bool training) {
  return ops::gate_mix(gcff_gate(a, b, p, training), a, b);
}

template struct FusionParams<float>;
template struct FusionParams<double>;
#define ADUNET_INSTANTIATE(T)                                                                  \
  template Var<T> cff_gate<T>(const Var<T>&, const Var<T>&, const CffParams<T>&, bool);       \
  template Var<T> cff<T>(const Var<T>&, const Var<T>&, const CffParams<T>&, bool);            \
  template Var<T> gcff_gate<T>(const Var<T>&, const Var<T>&, const GcffParams<T>&, bool);     \
  template Var<T> gcff<T>(const Var<T>&, const Var<T>&, const GcffParams<T>&, bool);
ADUNET_INSTANTIATE(float)
ADUNET_INSTANTIATE(double)
#undef ADUNET_INSTANTIATE

}  // namespace adunet
