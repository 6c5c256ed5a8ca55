#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "adunet/ops.hpp"
#include "adunet/rng.hpp"

namespace adunet::testing {

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double d = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - b[i]));
  return d;
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences for every element of every input. Returns the largest
/// ||analytic - numeric|| / max(||analytic||, ||numeric||) over inputs.
inline double gradient_error(std::vector<Var<double>> inputs, const std::function<Var<double>()>& f,
                             double h = 1e-6) {
  for (auto& v : inputs) v.zero_grad();
  backward(f());
  double worst = 0;
  for (auto& v : inputs) {
    const Tensor<double> analytic = v.grad().empty() ? Tensor<double>(v.shape()) : v.grad();
    Tensor<double>& x = v.mutable_value();
    double diff = 0, na = 0, nn = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const double keep = x[i];
      double plus, minus;
      {
        NoGradGuard guard;
        x[i] = keep + h;
        plus = f().value()[0];
        x[i] = keep - h;
        minus = f().value()[0];
      }
      x[i] = keep;
      const double numeric = (plus - minus) / (2 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

/// Weighted sum with fixed random weights, so every output element matters
/// to the scalar being differentiated.
inline Var<double> probe(const Var<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Var<double> w(random_tensor<double>(y.shape(), rng));
  return ops::sum(ops::mul(y, w));
}

}  // namespace adunet::testing
