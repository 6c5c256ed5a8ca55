#pragma once

#include <array>

#include "adunet/autograd.hpp"
#include "adunet/config.hpp"

namespace adunet {

struct Metrics {
  double psnr = 0;  // dB
  double ssim = 0;
  double mse = 0;
  int count = 0;
};

constexpr double kPsnrCap = 100.0;
constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalised 11-tap Gaussian (sigma 1.5).
std::array<double, kSsimWindow> ssim_window();

/// Mean single-scale SSIM over channels and pixels of two same-shaped
/// [C,H,W] or [N,C,H,W] tensors with data range 1. Local statistics use the
/// separable Gaussian window with zero padding, so the map has the input's
/// size.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

/// Differentiable SSIM of rank-4 inputs; gradients flow to both arguments.
template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b);

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b);

/// 10 log10(1 / MSE), capped at 100 dB for identical inputs.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

/// ssim: -SSIM(gt, y); mse: mean squared error; ssim_plus_mse: their sum.
template <typename T>
Var<T> loss(const Var<T>& gt, const Var<T>& y, LossMode mode);

}  // namespace adunet
