#include "adunet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace adunet::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Pixel columns handled per im2col block; bounds scratch memory on large maps.
constexpr std::int64_t kColumnBlock = 8192;

void check_conv_shapes(const Shape& x, const Shape& w, const Shape* b) {
  if (x.size() != 4 || w.size() != 4)
    throw ShapeError("conv2d expects rank-4 input and weight, got " + shape_string(x) + " and " +
                     shape_string(w));
  if (w[2] != w[3] || w[2] % 2 == 0)
    throw ShapeError("conv2d expects an odd square kernel, got " + shape_string(w));
  if (x[1] != w[1])
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(x[1]) +
                     " channels, kernel expects " + std::to_string(w[1]));
  if (b && (b->size() != 1 || (*b)[0] != w[0]))
    throw ShapeError("conv2d bias shape " + shape_string(*b) + " does not match " +
                     std::to_string(w[0]) + " output channels");
}

// Visits the image rows overlapping pixels [p0, p1) as (row, x_begin, x_end,
// column offset) segments.
template <typename F>
void for_each_row_segment(std::int64_t width, std::int64_t p0, std::int64_t p1, F f) {
  for (std::int64_t p = p0; p < p1;) {
    const std::int64_t y = p / width, x0 = p % width;
    const std::int64_t x1 = std::min(width, x0 + (p1 - p));
    f(y, x0, x1, p - p0);
    p += x1 - x0;
  }
}

// Fills col[(ci*k*k + ky*k + kx), p - p0] for pixels p in [p0, p1).
template <typename T>
void im2col(const T* x, std::int64_t channels, std::int64_t height, std::int64_t width,
            std::int64_t k, std::int64_t p0, std::int64_t p1, T* col) {
  const std::int64_t pad = k / 2;
  const std::int64_t cols = p1 - p0;
  const std::int64_t rows = channels * k * k;
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t ci = r / (k * k);
    const std::int64_t ky = (r / k) % k - pad;
    const std::int64_t kx = r % k - pad;
    const T* plane = x + ci * height * width;
    T* dst = col + r * cols;
    for_each_row_segment(width, p0, p1, [&](std::int64_t y, std::int64_t x0, std::int64_t x1, std::int64_t off) {
      T* out = dst + off;
      const std::int64_t sy = y + ky;
      if (sy < 0 || sy >= height) {
        std::fill(out, out + (x1 - x0), T(0));
        return;
      }
      const T* src = plane + sy * width;
      const std::int64_t lo = std::clamp(-kx, x0, x1), hi = std::clamp(width - kx, x0, x1);
      std::fill(out, out + (lo - x0), T(0));
      std::copy(src + lo + kx, src + hi + kx, out + (lo - x0));
      std::fill(out + (hi - x0), out + (x1 - x0), T(0));
    });
  }
}

template <typename T>
void col2im_add(const T* col, std::int64_t channels, std::int64_t height, std::int64_t width,
                std::int64_t k, std::int64_t p0, std::int64_t p1, T* x) {
  const std::int64_t pad = k / 2;
  const std::int64_t cols = p1 - p0;
#pragma omp parallel for schedule(static)
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    T* plane = x + ci * height * width;
    for (std::int64_t kk = 0; kk < k * k; ++kk) {
      const std::int64_t ky = kk / k - pad;
      const std::int64_t kx = kk % k - pad;
      const T* src = col + (ci * k * k + kk) * cols;
      for_each_row_segment(width, p0, p1, [&](std::int64_t y, std::int64_t x0, std::int64_t x1, std::int64_t off) {
        const std::int64_t sy = y + ky;
        if (sy < 0 || sy >= height) return;
        T* dst = plane + sy * width + kx;
        const T* in = src + off - x0;
        const std::int64_t lo = std::clamp(-kx, x0, x1), hi = std::clamp(width - kx, x0, x1);
        for (std::int64_t xx = lo; xx < hi; ++xx) dst[xx] += in[xx];
      });
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, const T* b, T beta, T* c) {
  using Map = Eigen::Map<const RowMat<T>>;
  Eigen::Map<RowMat<T>> C(c, m, n);
  const Map A(a, trans_a ? k : m, trans_a ? m : k);
  const Map B(b, trans_b ? n : k, trans_b ? k : n);
  if (beta == T(0))
    C.setZero();
  else if (beta != T(1))
    C *= beta;
  if (!trans_a && !trans_b)
    C.noalias() += alpha * A * B;
  else if (trans_a && !trans_b)
    C.noalias() += alpha * A.transpose() * B;
  else if (!trans_a && trans_b)
    C.noalias() += alpha * A * B.transpose();
  else
    C.noalias() += alpha * A.transpose() * B.transpose();
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  check_conv_shapes(x.shape(), weight.shape(), bias ? &bias->shape() : nullptr);
  const std::int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t co = weight.dim(0), k = weight.dim(2);
  const std::int64_t hw = h * w, kdim = ci * k * k;
  Tensor<T> out({n, co, h, w});
  const Eigen::Map<const RowMat<T>> W(weight.data(), co, kdim);
  AlignedVector<T> col;
  for (std::int64_t b = 0; b < n; ++b) {
    const T* xb = x.data() + b * ci * hw;
    T* ob = out.data() + b * co * hw;
    for (std::int64_t p0 = 0; p0 < hw; p0 += kColumnBlock) {
      const std::int64_t p1 = std::min(hw, p0 + kColumnBlock);
      const std::int64_t cols = p1 - p0;
      StridedMap<T> O(ob + p0, co, cols, Eigen::OuterStride<>(hw));
      if (k == 1) {
        ConstStridedMap<T> X(xb + p0, ci, cols, Eigen::OuterStride<>(hw));
        O.noalias() = W * X;
      } else {
        col.resize(static_cast<std::size_t>(kdim * cols));
        im2col(xb, ci, h, w, k, p0, p1, col.data());
        const Eigen::Map<const RowMat<T>> C(col.data(), kdim, cols);
        O.noalias() = W * C;
      }
    }
    if (bias) {
#pragma omp parallel for schedule(static)
      for (std::int64_t c = 0; c < co; ++c) {
        const T bv = (*bias)[c];
        T* plane = ob + c * hw;
        for (std::int64_t p = 0; p < hw; ++p) plane[p] += bv;
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_x, Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  check_conv_shapes(x.shape(), weight.shape(), nullptr);
  const std::int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t co = weight.dim(0), k = weight.dim(2);
  const std::int64_t hw = h * w, kdim = ci * k * k;
  if (grad_out.shape() != Shape{n, co, h, w})
    throw ShapeError("conv2d backward: gradient shape " + shape_string(grad_out.shape()));

  if (grad_x) *grad_x = Tensor<T>(x.shape());
  if (grad_weight) *grad_weight = Tensor<T>(weight.shape());
  if (grad_bias) *grad_bias = Tensor<T>({co});

  const Eigen::Map<const RowMat<T>> W(weight.data(), co, kdim);
  AlignedVector<T> col, gcol;
  for (std::int64_t b = 0; b < n; ++b) {
    const T* xb = x.data() + b * ci * hw;
    const T* gb = grad_out.data() + b * co * hw;
    for (std::int64_t p0 = 0; p0 < hw; p0 += kColumnBlock) {
      const std::int64_t p1 = std::min(hw, p0 + kColumnBlock);
      const std::int64_t cols = p1 - p0;
      ConstStridedMap<T> G(gb + p0, co, cols, Eigen::OuterStride<>(hw));
      if (k == 1) {
        if (grad_weight) {
          ConstStridedMap<T> X(xb + p0, ci, cols, Eigen::OuterStride<>(hw));
          Eigen::Map<RowMat<T>> GW(grad_weight->data(), co, kdim);
          GW.noalias() += G * X.transpose();
        }
        if (grad_x) {
          StridedMap<T> GX(grad_x->data() + b * ci * hw + p0, ci, cols, Eigen::OuterStride<>(hw));
          GX.noalias() += W.transpose() * G;
        }
        continue;
      }
      if (grad_weight) {
        col.resize(static_cast<std::size_t>(kdim * cols));
        im2col(xb, ci, h, w, k, p0, p1, col.data());
        const Eigen::Map<const RowMat<T>> C(col.data(), kdim, cols);
        Eigen::Map<RowMat<T>> GW(grad_weight->data(), co, kdim);
        GW.noalias() += G * C.transpose();
      }
      if (grad_x) {
        gcol.resize(static_cast<std::size_t>(kdim * cols));
        Eigen::Map<RowMat<T>> GC(gcol.data(), kdim, cols);
        GC.noalias() = W.transpose() * G;
        col2im_add(gcol.data(), ci, h, w, k, p0, p1, grad_x->data() + b * ci * hw);
      }
    }
    if (grad_bias) {
#pragma omp parallel for schedule(static)
      for (std::int64_t c = 0; c < co; ++c) {
        T acc = 0;
        const T* plane = gb + c * hw;
        for (std::int64_t p = 0; p < hw; ++p) acc += plane[p];
        (*grad_bias)[c] += acc;
      }
    }
  }
}

LinearTaps linear_taps(std::int64_t in_size, std::int64_t out_size) {
  LinearTaps taps;
  taps.lo.resize(static_cast<std::size_t>(out_size));
  taps.hi.resize(static_cast<std::size_t>(out_size));
  taps.frac.resize(static_cast<std::size_t>(out_size));
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  for (std::int64_t j = 0; j < out_size; ++j) {
    double src = (static_cast<double>(j) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    lo = std::min(lo, in_size - 1);
    const std::int64_t hi = std::min(lo + 1, in_size - 1);
    taps.lo[j] = lo;
    taps.hi[j] = hi;
    taps.frac[j] = src - static_cast<double>(lo);
  }
  return taps;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  if (x.rank() != 4) throw ShapeError("resize expects a rank-4 tensor");
  const std::int64_t planes = x.dim(0) * x.dim(1), ih = x.dim(2), iw = x.dim(3);
  const LinearTaps ty = linear_taps(ih, out_h), tx = linear_taps(iw, out_w);
  Tensor<T> out({x.dim(0), x.dim(1), out_h, out_w});
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * ih * iw;
    T* dst = out.data() + p * out_h * out_w;
    for (std::int64_t y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      const T* r0 = src + ty.lo[y] * iw;
      const T* r1 = src + ty.hi[y] * iw;
      for (std::int64_t xx = 0; xx < out_w; ++xx) {
        const T fx = static_cast<T>(tx.frac[xx]);
        const std::int64_t x0 = tx.lo[xx], x1 = tx.hi[xx];
        const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[y * out_w + xx] = top + fy * (bot - top);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> resize_bilinear_backward(const Tensor<T>& grad_out, std::int64_t in_h, std::int64_t in_w) {
  const std::int64_t planes = grad_out.dim(0) * grad_out.dim(1);
  const std::int64_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  const LinearTaps ty = linear_taps(in_h, oh), tx = linear_taps(in_w, ow);
  Tensor<T> gx({grad_out.dim(0), grad_out.dim(1), in_h, in_w});
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* g = grad_out.data() + p * oh * ow;
    T* dst = gx.data() + p * in_h * in_w;
    for (std::int64_t y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      T* r0 = dst + ty.lo[y] * in_w;
      T* r1 = dst + ty.hi[y] * in_w;
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const T fx = static_cast<T>(tx.frac[xx]);
        const T v = g[y * ow + xx];
        const T top = v * (T(1) - fy), bot = v * fy;
        r0[tx.lo[xx]] += top * (T(1) - fx);
        r0[tx.hi[xx]] += top * fx;
        r1[tx.lo[xx]] += bot * (T(1) - fx);
        r1[tx.hi[xx]] += bot * fx;
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> maxpool2x2_forward(const Tensor<T>& x, std::vector<std::int64_t>* argmax) {
  if (x.rank() != 4) throw ShapeError("maxpool expects a rank-4 tensor");
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor<T> out({x.dim(0), x.dim(1), oh, ow});
  if (argmax) argmax->assign(static_cast<std::size_t>(out.numel()), 0);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        std::int64_t best = (2 * y) * w + 2 * xx;
        for (std::int64_t dy = 0; dy < 2; ++dy)
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const std::int64_t idx = (2 * y + dy) * w + 2 * xx + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::int64_t o = p * oh * ow + y * ow + xx;
        out[o] = src[best];
        if (argmax) (*argmax)[static_cast<std::size_t>(o)] = p * h * w + best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_out, const std::vector<std::int64_t>& argmax,
                              const Shape& input_shape) {
  Tensor<T> gx(input_shape);
  // Windows do not overlap, so each input element receives at most one value.
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) gx[argmax[static_cast<std::size_t>(i)]] += grad_out[i];
  return gx;
}

#define ADUNET_INSTANTIATE(T)                                                                       \
  template void gemm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, T, const T*, const T*, \
                        T, T*);                                                                     \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);       \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, \
                                   Tensor<T>*, Tensor<T>*);                                         \
  template Tensor<T> resize_bilinear<T>(const Tensor<T>&, std::int64_t, std::int64_t);              \
  template Tensor<T> resize_bilinear_backward<T>(const Tensor<T>&, std::int64_t, std::int64_t);     \
  template Tensor<T> maxpool2x2_forward<T>(const Tensor<T>&, std::vector<std::int64_t>*);           \
  template Tensor<T> maxpool2x2_backward<T>(const Tensor<T>&, const std::vector<std::int64_t>&,     \
                                            const Shape&);

ADUNET_INSTANTIATE(float)
ADUNET_INSTANTIATE(double)
#undef ADUNET_INSTANTIATE

}  // namespace adunet::kernels
