#include "adunet/metrics.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "adunet/ops.hpp"

namespace adunet {
namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

// Zero-padded "same" Gaussian filtering of one h x w plane, rows then
// columns. The kernel is symmetric, so this operator is its own adjoint.
template <typename T>
class GaussianFilter {
 public:
  GaussianFilter(std::int64_t h, std::int64_t w) : h_(h), w_(w), tmp_(static_cast<std::size_t>(h * w)) {
    const auto g = ssim_window();
    for (std::size_t i = 0; i < g.size(); ++i) taps_[i] = static_cast<T>(g[i]);
  }

  void apply(const T* in, T* out) {
    constexpr std::int64_t r = kSsimWindow / 2;
    for (std::int64_t y = 0; y < h_; ++y)
      for (std::int64_t x = 0; x < w_; ++x) {
        T s = 0;
        const std::int64_t lo = std::max<std::int64_t>(0, x - r), hi = std::min(w_ - 1, x + r);
        for (std::int64_t k = lo; k <= hi; ++k) s += taps_[static_cast<std::size_t>(k - x + r)] * in[y * w_ + k];
        tmp_[static_cast<std::size_t>(y * w_ + x)] = s;
      }
    for (std::int64_t y = 0; y < h_; ++y) {
      const std::int64_t lo = std::max<std::int64_t>(0, y - r), hi = std::min(h_ - 1, y + r);
      for (std::int64_t x = 0; x < w_; ++x) {
        T s = 0;
        for (std::int64_t k = lo; k <= hi; ++k)
          s += taps_[static_cast<std::size_t>(k - y + r)] * tmp_[static_cast<std::size_t>(k * w_ + x)];
        out[y * w_ + x] = s;
      }
    }
  }

 private:
  std::int64_t h_, w_;
  std::array<T, kSsimWindow> taps_{};
  std::vector<T> tmp_;
};

// Per-plane local statistics and the SSIM map.
template <typename T>
struct SsimPlane {
  std::vector<T> mu_a, mu_b, e_aa, e_bb, e_ab, map;

  SsimPlane(const T* a, const T* b, std::int64_t h, std::int64_t w, GaussianFilter<T>& filter) {
    const auto n = static_cast<std::size_t>(h * w);
    mu_a.resize(n), mu_b.resize(n), e_aa.resize(n), e_bb.resize(n), e_ab.resize(n), map.resize(n);
    std::vector<T> prod(n);
    filter.apply(a, mu_a.data());
    filter.apply(b, mu_b.data());
    for (std::size_t i = 0; i < n; ++i) prod[i] = a[i] * a[i];
    filter.apply(prod.data(), e_aa.data());
    for (std::size_t i = 0; i < n; ++i) prod[i] = b[i] * b[i];
    filter.apply(prod.data(), e_bb.data());
    for (std::size_t i = 0; i < n; ++i) prod[i] = a[i] * b[i];
    filter.apply(prod.data(), e_ab.data());
    for (std::size_t i = 0; i < n; ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double a1 = 2 * (ma * mb) + kSsimC1;
      const double a2 = 2 * (e_ab[i] - ma * mb) + kSsimC2;
      const double b1 = (ma * ma + mb * mb) + kSsimC1;
      const double b2 = (e_aa[i] - ma * ma) + (e_bb[i] - mb * mb) + kSsimC2;
      map[i] = static_cast<T>((a1 * a2) / (b1 * b2));
    }
  }
};

template <typename T>
std::int64_t plane_count(const Tensor<T>& t) {
  if (t.rank() < 2) throw ShapeError("ssim: expected at least two spatial dimensions, got " + shape_string(t.shape()));
  return t.numel() / (t.dim(t.rank() - 2) * t.dim(t.rank() - 1));
}

template <typename T>
std::vector<double> plane_means(const Tensor<T>& a, const Tensor<T>& b) {
  const std::int64_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1), planes = plane_count(a);
  std::vector<double> means(static_cast<std::size_t>(planes));
#pragma omp parallel
  {
    GaussianFilter<T> filter(h, w);
#pragma omp for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      const SsimPlane<T> s(a.data() + p * h * w, b.data() + p * h * w, h, w, filter);
      double sum = 0;
      for (const T v : s.map) sum += static_cast<double>(v);
      means[static_cast<std::size_t>(p)] = sum / static_cast<double>(h * w);
    }
  }
  return means;
}

}  // namespace

std::array<double, kSsimWindow> ssim_window() {
  std::array<double, kSsimWindow> g{};
  double total = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    total += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= total;
  return g;
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const auto means = plane_means(a, b);
  double total = 0;
  for (const double m : means) total += m;
  return total / static_cast<double>(means.size());
}

template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (a.value().rank() != 4) throw ShapeError("ssim expects [N,C,H,W], got " + shape_string(a.shape()));
  Tensor<T> out({1}, static_cast<T>(ssim(a.value(), b.value())));
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    const Tensor<T>& av = self.parents[0]->value;
    const Tensor<T>& bv = self.parents[1]->value;
    const std::int64_t h = av.dim(2), w = av.dim(3), planes = av.dim(0) * av.dim(1);
    const auto n = static_cast<std::size_t>(h * w);
    const T g = self.grad[0] / static_cast<T>(av.numel());
    const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
    const bool want_a = self.parents[0]->requires_grad, want_b = self.parents[1]->requires_grad;
    Tensor<T> da(av.shape()), db(bv.shape());
#pragma omp parallel
    {
      GaussianFilter<T> filter(h, w);
      std::vector<T> d_mu_a(n), d_mu_b(n), d_e_aa(n), d_e_bb(n), d_e_ab(n), f1(n), f2(n), f3(n);
#pragma omp for schedule(static)
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* x = av.data() + p * h * w;
        const T* y = bv.data() + p * h * w;
        const SsimPlane<T> s(x, y, h, w, filter);
        for (std::size_t i = 0; i < n; ++i) {
          const T mx = s.mu_a[i], my = s.mu_b[i];
          const T a1 = T(2) * mx * my + c1;
          const T a2 = T(2) * (s.e_ab[i] - mx * my) + c2;
          const T b1 = mx * mx + my * my + c1;
          const T b2 = (s.e_aa[i] - mx * mx) + (s.e_bb[i] - my * my) + c2;
          const T v = s.map[i];
          const T denom = b1 * b2;
          d_mu_a[i] = g * ((T(2) * my * a2 - T(2) * my * a1) / denom - v * (T(2) * mx / b1 - T(2) * mx / b2));
          d_mu_b[i] = g * ((T(2) * mx * a2 - T(2) * mx * a1) / denom - v * (T(2) * my / b1 - T(2) * my / b2));
          d_e_aa[i] = g * (-v / b2);
          d_e_bb[i] = g * (-v / b2);
          d_e_ab[i] = g * (T(2) * a1 / denom);
        }
        filter.apply(d_e_ab.data(), f3.data());
        if (want_a) {
          filter.apply(d_mu_a.data(), f1.data());
          filter.apply(d_e_aa.data(), f2.data());
          T* out = da.data() + p * h * w;
          for (std::size_t i = 0; i < n; ++i) out[i] = f1[i] + T(2) * x[i] * f2[i] + y[i] * f3[i];
        }
        if (want_b) {
          filter.apply(d_mu_b.data(), f1.data());
          filter.apply(d_e_bb.data(), f2.data());
          T* out = db.data() + p * h * w;
          for (std::size_t i = 0; i < n; ++i) out[i] = f1[i] + T(2) * y[i] * f2[i] + x[i] * f3[i];
        }
      }
    }
    if (want_a) self.parents[0]->accumulate(da);
    if (want_b) self.parents[1]->accumulate(db);
  });
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  if (a.numel() == 0) throw ShapeError("mse: empty input");
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  const double m = mse(a, b);
  if (m == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

template <typename T>
Var<T> loss(const Var<T>& gt, const Var<T>& y, LossMode mode) {
  switch (mode) {
    case LossMode::ssim:
      return ops::scale(ssim(gt, y), T(-1));
    case LossMode::mse:
      return ops::mse(gt, y);
    case LossMode::ssim_plus_mse:
      return ops::add(ops::scale(ssim(gt, y), T(-1)), ops::mse(gt, y));
  }
  throw std::invalid_argument("unknown loss mode");
}

#define ADUNET_INSTANTIATE(T)                                      \
  template double ssim<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Var<T> ssim<T>(const Var<T>&, const Var<T>&);           \
  template double mse<T>(const Tensor<T>&, const Tensor<T>&);      \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Var<T> loss<T>(const Var<T>&, const Var<T>&, LossMode);
ADUNET_INSTANTIATE(float)
ADUNET_INSTANTIATE(double)
#undef ADUNET_INSTANTIATE

}  // namespace adunet
