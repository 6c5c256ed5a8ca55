#include "adunet/reference.hpp"

#include <algorithm>
#include <cmath>

namespace adunet::reference {

template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  const std::int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t co = weight.dim(0), k = weight.dim(2), pad = k / 2;
  if (weight.dim(1) != ci) throw ShapeError("conv2d_direct channel mismatch");
  Tensor<T> out({n, co, h, w});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx) {
          T acc = bias ? (*bias)[o] : T(0);
          for (std::int64_t c = 0; c < ci; ++c)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t sy = y + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                acc += weight.at(o, c, ky, kx) * x.at(b, c, sy, sx);
              }
          out.at(b, o, y, xx) = acc;
        }
  return out;
}

template <typename T>
Tensor<T> resize_bilinear_direct(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  const std::int64_t ih = x.dim(2), iw = x.dim(3);
  auto source = [](std::int64_t j, std::int64_t in, std::int64_t out) {
    const double s = (static_cast<double>(j) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  Tensor<T> out({x.dim(0), x.dim(1), out_h, out_w});
  for (std::int64_t b = 0; b < x.dim(0); ++b)
    for (std::int64_t c = 0; c < x.dim(1); ++c)
      for (std::int64_t y = 0; y < out_h; ++y)
        for (std::int64_t xx = 0; xx < out_w; ++xx) {
          const double sy = source(y, ih, out_h), sx = source(xx, iw, out_w);
          const auto y0 = static_cast<std::int64_t>(std::floor(sy));
          const auto x0 = static_cast<std::int64_t>(std::floor(sx));
          const std::int64_t y1 = std::min(y0 + 1, ih - 1), x1 = std::min(x0 + 1, iw - 1);
          const double fy = sy - y0, fx = sx - x0;
          const double v = (1 - fy) * ((1 - fx) * x.at(b, c, y0, x0) + fx * x.at(b, c, y0, x1)) +
                           fy * ((1 - fx) * x.at(b, c, y1, x0) + fx * x.at(b, c, y1, x1));
          out.at(b, c, y, xx) = static_cast<T>(v);
        }
  return out;
}

template <typename T>
Tensor<T> maxpool2x2_direct(const Tensor<T>& x) {
  Tensor<T> out({x.dim(0), x.dim(1), x.dim(2) / 2, x.dim(3) / 2});
  for (std::int64_t b = 0; b < out.dim(0); ++b)
    for (std::int64_t c = 0; c < out.dim(1); ++c)
      for (std::int64_t y = 0; y < out.dim(2); ++y)
        for (std::int64_t xx = 0; xx < out.dim(3); ++xx)
          out.at(b, c, y, xx) = std::max({x.at(b, c, 2 * y, 2 * xx), x.at(b, c, 2 * y, 2 * xx + 1),
                                          x.at(b, c, 2 * y + 1, 2 * xx), x.at(b, c, 2 * y + 1, 2 * xx + 1)});
  return out;
}

template Tensor<float> conv2d_direct<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>*);
template Tensor<double> conv2d_direct<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>*);
template Tensor<float> resize_bilinear_direct<float>(const Tensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> resize_bilinear_direct<double>(const Tensor<double>&, std::int64_t, std::int64_t);
template Tensor<float> maxpool2x2_direct<float>(const Tensor<float>&);
template Tensor<double> maxpool2x2_direct<double>(const Tensor<double>&);

}  // namespace adunet::reference
