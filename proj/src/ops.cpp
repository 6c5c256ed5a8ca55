#include "adunet/ops.hpp"

#include <cmath>

#include "adunet/kernels.hpp"

namespace adunet::ops {
namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

template <typename T>
void require_rank4(const Var<T>& x, const char* op) {
  if (x.value().rank() != 4)
    throw ShapeError(std::string(op) + " expects [N,C,H,W], got " + shape_string(x.shape()));
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.parents[i] && self.parents[i]->requires_grad;
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const std::int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (wants(self, i)) self.parents[i]->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(map_unary(self.grad, [](T g) { return -g; }));
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    const auto& g = self.grad;
    for (std::size_t i = 0; i < 2; ++i) {
      if (!wants(self, i)) continue;
      const auto& other = self.parents[1 - i]->value;
      Tensor<T> d(g.shape());
      for (std::int64_t k = 0; k < g.numel(); ++k) d[k] = g[k] * other[k];
      self.parents[i]->accumulate(d);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return make_result<T>(map_unary(a.value(), [factor](T v) { return v * factor; }), {a.node()},
                        [factor](Node<T>& self) {
                          self.parents[0]->accumulate(map_unary(self.grad, [factor](T g) { return g * factor; }));
                        });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  return make_result<T>(Tensor<T>({1}, acc), {a.node()}, [](Node<T>& self) {
    self.parents[0]->accumulate(Tensor<T>(self.parents[0]->value.shape(), self.grad[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const auto n = static_cast<T>(a.value().numel());
  return scale(sum(a), T(1) / n);
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Tensor<T>* b = bias.defined() ? &bias.value() : nullptr;
  Tensor<T> out = kernels::conv2d_forward(x.value(), weight.value(), b);
  std::vector<NodePtr<T>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result<T>(std::move(out), std::move(parents), [](Node<T>& self) {
    const bool gx = wants(self, 0), gw = wants(self, 1);
    const bool gb = self.parents.size() > 2 && wants(self, 2);
    Tensor<T> dx, dw, db;
    kernels::conv2d_backward(self.parents[0]->value, self.parents[1]->value, self.grad, gx ? &dx : nullptr,
                             gw ? &dw : nullptr, gb ? &db : nullptr);
    if (gx) self.parents[0]->accumulate(dx);
    if (gw) self.parents[1]->accumulate(dw);
    if (gb) self.parents[2]->accumulate(db);
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = map_unary(x.value(), [slope](T v) { return v > T(0) ? v : v * slope; });
  return make_result<T>(std::move(out), {x.node()}, [slope](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    Tensor<T> d(xv.shape());
    const std::int64_t n = d.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) d[i] = xv[i] > T(0) ? self.grad[i] : self.grad[i] * slope;
    self.parents[0]->accumulate(d);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = map_unary(x.value(), [](T v) {
    // Branches keep exp() from overflowing for large |v|.
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  });
  return make_result<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    const auto& y = self.value;
    Tensor<T> d(y.shape());
    for (std::int64_t i = 0; i < d.numel(); ++i) d[i] = self.grad[i] * y[i] * (T(1) - y[i]);
    self.parents[0]->accumulate(d);
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, const BatchNormOptions& options) {
  require_rank4(x, "batch_norm");
  const auto& xv = x.value();
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (gamma.value().numel() != c || beta.value().numel() != c || running_mean.numel() != c ||
      running_var.numel() != c)
    throw ShapeError("batch_norm: parameters do not match " + std::to_string(c) + " channels");
  const std::int64_t count = n * hw;
  const bool batch_stats = options.training && count > 1;

  std::vector<T> mean_c(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  if (batch_stats) {
#pragma omp parallel for schedule(static)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0, ss = 0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mean_c[ch] = static_cast<T>(m);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
      const double unbiased = ss / static_cast<double>(count - 1);
      running_mean[ch] = static_cast<T>((1 - options.momentum) * running_mean[ch] + options.momentum * m);
      running_var[ch] = static_cast<T>((1 - options.momentum) * running_var[ch] + options.momentum * unbiased);
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean_c[ch] = running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + options.eps));
    }
  }

  Tensor<T> xhat(xv.shape()), out(xv.shape());
  const auto& g = gamma.value();
  const auto& bt = beta.value();
#pragma omp parallel for schedule(static)
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const std::int64_t ch = plane % c;
    const T* src = xv.data() + plane * hw;
    T* xh = xhat.data() + plane * hw;
    T* dst = out.data() + plane * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      xh[i] = (src[i] - mean_c[ch]) * inv_std[ch];
      dst[i] = g[ch] * xh[i] + bt[ch];
    }
  }

  return make_result<T>(
      std::move(out), {x.node(), gamma.node(), beta.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), batch_stats, n, c, hw](Node<T>& self) {
        const auto& dy = self.grad;
        const auto& gm = self.parents[1]->value;
        std::vector<T> sum_dy(static_cast<std::size_t>(c)), sum_dy_xhat(static_cast<std::size_t>(c));
#pragma omp parallel for schedule(static)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          T s = 0, sx = 0;
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t off = (b * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              s += dy[off + i];
              sx += dy[off + i] * xhat[off + i];
            }
          }
          sum_dy[ch] = s;
          sum_dy_xhat[ch] = sx;
        }
        if (wants(self, 1)) self.parents[1]->accumulate(Tensor<T>({c}, sum_dy_xhat));
        if (wants(self, 2)) self.parents[2]->accumulate(Tensor<T>({c}, sum_dy));
        if (!wants(self, 0)) return;
        Tensor<T> dx(dy.shape());
        const T inv_count = T(1) / static_cast<T>(n * hw);
#pragma omp parallel for schedule(static)
        for (std::int64_t plane = 0; plane < n * c; ++plane) {
          const std::int64_t ch = plane % c;
          const std::int64_t off = plane * hw;
          const T k = gm[ch] * inv_std[ch];
          if (batch_stats) {
            const T mdy = sum_dy[ch] * inv_count, mdx = sum_dy_xhat[ch] * inv_count;
            for (std::int64_t i = 0; i < hw; ++i) dx[off + i] = k * (dy[off + i] - mdy - xhat[off + i] * mdx);
          } else {
            for (std::int64_t i = 0; i < hw; ++i) dx[off + i] = k * dy[off + i];
          }
        }
        self.parents[0]->accumulate(dx);
      });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  require_rank4(x, "max_pool2x2");
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor<T> out = kernels::maxpool2x2_forward(x.value(), argmax.get());
  return make_result<T>(std::move(out), {x.node()}, [argmax](Node<T>& self) {
    self.parents[0]->accumulate(kernels::maxpool2x2_backward(self.grad, *argmax, self.parents[0]->value.shape()));
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  require_rank4(x, "upsample2x");
  const std::int64_t h = x.dim(2), w = x.dim(3);
  return make_result<T>(kernels::resize_bilinear(x.value(), 2 * h, 2 * w), {x.node()}, [h, w](Node<T>& self) {
    self.parents[0]->accumulate(kernels::resize_bilinear_backward(self.grad, h, w));
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
    throw ShapeError("concat_channels: incompatible " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  const std::int64_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), hw = av.dim(2) * av.dim(3);
  Tensor<T> out({n, ca + cb, av.dim(2), av.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(bv.data() + i * cb * hw, cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
  }
  return make_result<T>(std::move(out), {a.node(), b.node()}, [n, ca, cb, hw](Node<T>& self) {
    for (std::size_t which = 0; which < 2; ++which) {
      if (!wants(self, which)) continue;
      const std::int64_t cc = which == 0 ? ca : cb, offset = which == 0 ? 0 : ca * hw;
      Tensor<T> d(self.parents[which]->value.shape());
      for (std::int64_t i = 0; i < n; ++i)
        std::copy_n(self.grad.data() + i * (ca + cb) * hw + offset, cc * hw, d.data() + i * cc * hw);
      self.parents[which]->accumulate(d);
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank4(x, "global_avg_pool");
  const auto& xv = x.value();
  const std::int64_t planes = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out({xv.dim(0), xv.dim(1), 1, 1});
  for (std::int64_t p = 0; p < planes; ++p) {
    T acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += xv[p * hw + i];
    out[p] = acc / static_cast<T>(hw);
  }
  return make_result<T>(std::move(out), {x.node()}, [planes, hw](Node<T>& self) {
    Tensor<T> d(self.parents[0]->value.shape());
    for (std::int64_t p = 0; p < planes; ++p) {
      const T v = self.grad[p] / static_cast<T>(hw);
      for (std::int64_t i = 0; i < hw; ++i) d[p * hw + i] = v;
    }
    self.parents[0]->accumulate(d);
  });
}

template <typename T>
Var<T> gate_mix(const Var<T>& w, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "gate_mix");
  require_rank4(a, "gate_mix");
  const auto& av = a.value();
  const auto& bv = b.value();
  const auto& wv = w.value();
  const std::int64_t planes = av.dim(0) * av.dim(1), hw = av.dim(2) * av.dim(3);
  const bool broadcast = wv.shape() == Shape{av.dim(0), av.dim(1), 1, 1};
  if (!broadcast && !wv.same_shape(av))
    throw ShapeError("gate_mix: weights " + shape_string(wv.shape()) + " do not fit " + shape_string(av.shape()));
  Tensor<T> out(av.shape());
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::int64_t k = p * hw + i;
      const T wk = broadcast ? wv[p] : wv[k];
      out[k] = bv[k] + wk * (av[k] - bv[k]);
    }
  return make_result<T>(std::move(out), {w.node(), a.node(), b.node()}, [broadcast, planes, hw](Node<T>& self) {
    const auto& wv = self.parents[0]->value;
    const auto& av = self.parents[1]->value;
    const auto& bv = self.parents[2]->value;
    const auto& g = self.grad;
    if (wants(self, 0)) {
      Tensor<T> dw(wv.shape());
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < hw; ++i) {
          const std::int64_t k = p * hw + i;
          dw[broadcast ? p : k] += g[k] * (av[k] - bv[k]);
        }
      self.parents[0]->accumulate(dw);
    }
    for (std::size_t which = 1; which <= 2; ++which) {
      if (!wants(self, which)) continue;
      Tensor<T> d(av.shape());
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < hw; ++i) {
          const std::int64_t k = p * hw + i;
          const T wk = broadcast ? wv[p] : wv[k];
          d[k] = g[k] * (which == 1 ? wk : T(1) - wk);
        }
      self.parents[which]->accumulate(d);
    }
  });
}

template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  require_rank4(x, "layer_norm_channels");
  const auto& xv = x.value();
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (gamma.value().numel() != c || beta.value().numel() != c)
    throw ShapeError("layer_norm_channels: parameters do not match " + std::to_string(c) + " channels");
  Tensor<T> xhat(xv.shape()), out(xv.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(n * hw));
  const auto& g = gamma.value();
  const auto& bt = beta.value();
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < n * hw; ++t) {
    const std::int64_t b = t / hw, p = t % hw;
    const T* src = xv.data() + b * c * hw + p;
    double s = 0, ss = 0;
    for (std::int64_t ch = 0; ch < c; ++ch) s += src[ch * hw];
    const double m = s / static_cast<double>(c);
    for (std::int64_t ch = 0; ch < c; ++ch) ss += (src[ch * hw] - m) * (src[ch * hw] - m);
    const T is = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(c) + eps));
    inv_std[t] = is;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t k = b * c * hw + ch * hw + p;
      xhat[k] = static_cast<T>((src[ch * hw] - m)) * is;
      out[k] = g[ch] * xhat[k] + bt[ch];
    }
  }
  return make_result<T>(
      std::move(out), {x.node(), gamma.node(), beta.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw](Node<T>& self) {
        const auto& dy = self.grad;
        const auto& gm = self.parents[1]->value;
        if (wants(self, 1) || wants(self, 2)) {
          Tensor<T> dg({c}), db({c});
#pragma omp parallel for schedule(static)
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t b = 0; b < n; ++b)
              for (std::int64_t p = 0; p < hw; ++p) {
                const std::int64_t k = b * c * hw + ch * hw + p;
                dg[ch] += dy[k] * xhat[k];
                db[ch] += dy[k];
              }
          if (wants(self, 1)) self.parents[1]->accumulate(dg);
          if (wants(self, 2)) self.parents[2]->accumulate(db);
        }
        if (!wants(self, 0)) return;
        Tensor<T> dx(dy.shape());
#pragma omp parallel for schedule(static)
        for (std::int64_t t = 0; t < n * hw; ++t) {
          const std::int64_t b = t / hw, p = t % hw;
          T m1 = 0, m2 = 0;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t k = b * c * hw + ch * hw + p;
            const T dxh = dy[k] * gm[ch];
            m1 += dxh;
            m2 += dxh * xhat[k];
          }
          m1 /= static_cast<T>(c);
          m2 /= static_cast<T>(c);
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t k = b * c * hw + ch * hw + p;
            dx[k] = inv_std[t] * (dy[k] * gm[ch] - m1 - xhat[k] * m2);
          }
        }
        self.parents[0]->accumulate(dx);
      });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mse");
  const auto& av = a.value();
  const auto& bv = b.value();
  double acc = 0;
  for (std::int64_t i = 0; i < av.numel(); ++i) acc += (static_cast<double>(av[i]) - bv[i]) * (static_cast<double>(av[i]) - bv[i]);
  const auto count = static_cast<double>(av.numel());
  return make_result<T>(Tensor<T>({1}, static_cast<T>(acc / count)), {a.node(), b.node()}, [count](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T k = static_cast<T>(2.0 / count) * self.grad[0];
    for (std::size_t which = 0; which < 2; ++which) {
      if (!wants(self, which)) continue;
      const T sign = which == 0 ? T(1) : T(-1);
      Tensor<T> d(av.shape());
      for (std::int64_t i = 0; i < d.numel(); ++i) d[i] = sign * k * (av[i] - bv[i]);
      self.parents[which]->accumulate(d);
    }
  });
}

#define ADUNET_INSTANTIATE(T)                                                                              \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> scale<T>(const Var<T>&, T);                                                              \
  template Var<T> sum<T>(const Var<T>&);                                                                   \
  template Var<T> mean<T>(const Var<T>&);                                                                  \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                  \
  template Var<T> relu<T>(const Var<T>&);                                                                  \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                                         \
  template Var<T> sigmoid<T>(const Var<T>&);                                                               \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&,       \
                                const BatchNormOptions&);                                                  \
  template Var<T> max_pool2x2<T>(const Var<T>&);                                                           \
  template Var<T> upsample2x<T>(const Var<T>&);                                                            \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                                       \
  template Var<T> gate_mix<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                \
  template Var<T> layer_norm_channels<T>(const Var<T>&, const Var<T>&, const Var<T>&, double);             \
  template Var<T> mse<T>(const Var<T>&, const Var<T>&);

ADUNET_INSTANTIATE(float)
ADUNET_INSTANTIATE(double)
#undef ADUNET_INSTANTIATE

}  // namespace adunet::ops
