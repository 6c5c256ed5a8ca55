#include "adunet/attention.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace adunet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int thread_index() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

// Everything the backward pass needs from one forward evaluation.
template <typename T>
struct AttentionState {
  WindowLayout layout;
  std::int64_t batch = 0, channels = 0, heads = 0, head_dim = 0, tokens = 0;
  std::vector<std::int32_t> rel_index;  // [tokens * tokens]
  std::vector<std::uint8_t> allowed;    // [num_windows * tokens * tokens]
  RowMat<T> x, qkv, o;                  // [M, C], [M, 3C], [M, C]
  AlignedVector<T> probs;                // [batch * num_windows * heads * tokens * tokens]
  T scale = 1;

  std::int64_t rows() const { return batch * layout.num_windows() * tokens; }
  T* probs_at(std::int64_t block, std::int64_t head) {
    return probs.data() + (block * heads + head) * tokens * tokens;
  }
};

template <typename T>
void check_attention_input(const Tensor<T>& x, const AttentionParams<T>& p) {
  if (x.rank() != 4) throw ShapeError("attention expects [N,C,H,W], got " + shape_string(x.shape()));
  if (x.dim(1) != p.channels())
    throw ShapeError("attention: input has " + std::to_string(x.dim(1)) + " channels, parameters expect " +
                     std::to_string(p.channels()));
  if (p.num_heads < 1 || x.dim(1) % p.num_heads != 0)
    throw ShapeError("attention: " + std::to_string(p.num_heads) + " heads do not divide " +
                     std::to_string(x.dim(1)) + " channels");
}

template <typename T>
AttentionState<T> attention_forward(const Tensor<T>& normed, const AttentionParams<T>& p, std::int64_t shift,
                                    Tensor<T>* out) {
  check_attention_input(normed, p);
  AttentionState<T> s;
  const std::int64_t n = normed.dim(0), c = normed.dim(1), h = normed.dim(2), w = normed.dim(3), hw = h * w;
  s.layout = make_window_layout(h, w, p.window_size, shift);
  s.batch = n;
  s.channels = c;
  s.heads = p.num_heads;
  s.head_dim = c / p.num_heads;
  s.tokens = s.layout.tokens();
  s.scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(s.head_dim)));
  const std::int64_t tk = s.tokens, nw = s.layout.num_windows(), m = s.rows(), win = p.window_size;

  s.x = RowMat<T>::Zero(m, c);
  for (std::int64_t b = 0; b < n; ++b)
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < nw * tk; ++r) {
      const std::int64_t src = s.layout.source[static_cast<std::size_t>(r)];
      if (src < 0) continue;
      for (std::int64_t ch = 0; ch < c; ++ch) s.x(b * nw * tk + r, ch) = normed[(b * c + ch) * hw + src];
    }

  const Eigen::Map<const RowMat<T>> wqkv(p.qkv_weight.value().data(), 3 * c, c);
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bqkv(p.qkv_bias.value().data(), 3 * c);
  s.qkv.noalias() = s.x * wqkv.transpose();
  s.qkv.rowwise() += bqkv;

  s.rel_index.resize(static_cast<std::size_t>(tk * tk));
  for (std::int64_t i = 0; i < tk; ++i)
    for (std::int64_t j = 0; j < tk; ++j) {
      const std::int64_t dy = i / win - j / win + win - 1, dx = i % win - j % win + win - 1;
      s.rel_index[static_cast<std::size_t>(i * tk + j)] = static_cast<std::int32_t>(dy * (2 * win - 1) + dx);
    }
  s.allowed.assign(static_cast<std::size_t>(nw * tk * tk), 0);
  for (std::int64_t wi = 0; wi < nw; ++wi)
    for (std::int64_t i = 0; i < tk; ++i)
      for (std::int64_t j = 0; j < tk; ++j) {
        const auto a = static_cast<std::size_t>(wi * tk + i), bj = static_cast<std::size_t>(wi * tk + j);
        s.allowed[static_cast<std::size_t>((wi * tk + i) * tk + j)] =
            s.layout.source[a] >= 0 && s.layout.source[bj] >= 0 && s.layout.region[a] == s.layout.region[bj];
      }

  s.probs.assign(static_cast<std::size_t>(n * nw * s.heads * tk * tk), T(0));
  s.o = RowMat<T>::Zero(m, c);
  const std::int64_t hd = s.head_dim, heads = s.heads;

  // Per-head bias matrices gathered once from the table.
  const T* bias_table = p.relative_bias.value().data();
  std::vector<RowMat<T>> bias(static_cast<std::size_t>(heads), RowMat<T>(tk, tk));
  for (std::int64_t head = 0; head < heads; ++head)
    for (std::int64_t e = 0; e < tk * tk; ++e)
      bias[static_cast<std::size_t>(head)].data()[e] = bias_table[s.rel_index[static_cast<std::size_t>(e)] * heads + head];
  std::vector<std::uint8_t> masked(static_cast<std::size_t>(nw), 0);
  for (std::int64_t wi = 0; wi < nw; ++wi)
    for (std::int64_t e = 0; e < tk * tk && !masked[static_cast<std::size_t>(wi)]; ++e)
      masked[static_cast<std::size_t>(wi)] = !s.allowed[static_cast<std::size_t>(wi * tk * tk + e)];

#pragma omp parallel for schedule(static)
  for (std::int64_t block = 0; block < n * nw; ++block) {
    const std::int64_t wi = block % nw, row0 = block * tk;
    const std::uint8_t* allow = s.allowed.data() + wi * tk * tk;
    const bool has_mask = masked[static_cast<std::size_t>(wi)];
    RowMat<T> logits(tk, tk);
    for (std::int64_t head = 0; head < heads; ++head) {
      auto q = s.qkv.block(row0, head * hd, tk, hd);
      auto k = s.qkv.block(row0, c + head * hd, tk, hd);
      auto v = s.qkv.block(row0, 2 * c + head * hd, tk, hd);
      logits.noalias() = s.scale * (q * k.transpose());
      logits += bias[static_cast<std::size_t>(head)];
      if (has_mask)
        for (std::int64_t e = 0; e < tk * tk; ++e)
          if (!allow[e]) logits.data()[e] = -std::numeric_limits<T>::infinity();
      Eigen::Map<RowMat<T>> prob(s.probs_at(block, head), tk, tk);
      for (std::int64_t i = 0; i < tk; ++i) {
        const T mx = logits.row(i).maxCoeff();
        if (mx == -std::numeric_limits<T>::infinity()) continue;  // padded query
        prob.row(i) = (logits.row(i).array() - mx).exp().matrix();
        // Vectorised exp(-inf) can leave denormals; masked keys must be exactly 0.
        if (has_mask)
          for (std::int64_t j = 0; j < tk; ++j)
            if (!allow[i * tk + j]) prob(i, j) = T(0);
        prob.row(i) /= prob.row(i).sum();
      }
      s.o.block(row0, head * hd, tk, hd).noalias() = prob * v;
    }
  }

  if (out) {
    const Eigen::Map<const RowMat<T>> wp(p.proj_weight.value().data(), c, c);
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bp(p.proj_bias.value().data(), c);
    RowMat<T> y = s.o * wp.transpose();
    y.rowwise() += bp;
    *out = Tensor<T>(normed.shape());
    for (std::int64_t b = 0; b < n; ++b)
#pragma omp parallel for schedule(static)
      for (std::int64_t r = 0; r < nw * tk; ++r) {
        const std::int64_t src = s.layout.source[static_cast<std::size_t>(r)];
        if (src < 0) continue;
        for (std::int64_t ch = 0; ch < c; ++ch) (*out)[(b * c + ch) * hw + src] = y(b * nw * tk + r, ch);
      }
  }
  return s;
}

template <typename T>
void attention_backward(Node<T>& self, AttentionState<T>& s) {
  // parents: normed, qkv_weight, qkv_bias, proj_weight, proj_bias, relative_bias
  const auto& gout = self.grad;
  const std::int64_t n = s.batch, c = s.channels, tk = s.tokens, nw = s.layout.num_windows();
  const std::int64_t hw = s.layout.height * s.layout.width, m = s.rows(), hd = s.head_dim, heads = s.heads;
  auto wants = [&](std::size_t i) { return self.parents[i] && self.parents[i]->requires_grad; };

  RowMat<T> dy = RowMat<T>::Zero(m, c);
  for (std::int64_t b = 0; b < n; ++b)
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < nw * tk; ++r) {
      const std::int64_t src = s.layout.source[static_cast<std::size_t>(r)];
      if (src < 0) continue;
      for (std::int64_t ch = 0; ch < c; ++ch) dy(b * nw * tk + r, ch) = gout[(b * c + ch) * hw + src];
    }

  if (wants(3)) {
    Tensor<T> g({c, c});
    Eigen::Map<RowMat<T>>(g.data(), c, c).noalias() = dy.transpose() * s.o;
    self.parents[3]->accumulate(g);
  }
  if (wants(4)) {
    Tensor<T> g({c});
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.data(), c) = dy.colwise().sum();
    self.parents[4]->accumulate(g);
  }
  const Eigen::Map<const RowMat<T>> wp(self.parents[3]->value.data(), c, c);
  const RowMat<T> d_o = dy * wp;

  // Score gradients summed per thread and head; scattered into the bias
  // table once at the end.
  const int threads = thread_count();
  std::vector<std::vector<RowMat<T>>> score_grad(
      static_cast<std::size_t>(threads), std::vector<RowMat<T>>(static_cast<std::size_t>(heads), RowMat<T>::Zero(tk, tk)));
  RowMat<T> dqkv = RowMat<T>::Zero(m, 3 * c);

#pragma omp parallel for schedule(static)
  for (std::int64_t block = 0; block < n * nw; ++block) {
    auto& sg = score_grad[static_cast<std::size_t>(thread_index())];
    const std::int64_t row0 = block * tk;
    RowMat<T> dp(tk, tk), ds(tk, tk);
    for (std::int64_t head = 0; head < heads; ++head) {
      const Eigen::Map<const RowMat<T>> prob(s.probs_at(block, head), tk, tk);
      auto q = s.qkv.block(row0, head * hd, tk, hd);
      auto k = s.qkv.block(row0, c + head * hd, tk, hd);
      auto v = s.qkv.block(row0, 2 * c + head * hd, tk, hd);
      auto go = d_o.block(row0, head * hd, tk, hd);
      dp.noalias() = go * v.transpose();
      dqkv.block(row0, 2 * c + head * hd, tk, hd).noalias() = prob.transpose() * go;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> dots = (prob.array() * dp.array()).rowwise().sum();
      ds.array() = prob.array() * (dp.colwise() - dots).array();
      sg[static_cast<std::size_t>(head)] += ds;
      dqkv.block(row0, head * hd, tk, hd).noalias() = s.scale * (ds * k);
      dqkv.block(row0, c + head * hd, tk, hd).noalias() = s.scale * (ds.transpose() * q);
    }
  }

  if (wants(5)) {
    Tensor<T> g(self.parents[5]->value.shape());
    for (const auto& part : score_grad)
      for (std::int64_t head = 0; head < heads; ++head)
        for (std::int64_t e = 0; e < tk * tk; ++e)
          g[s.rel_index[static_cast<std::size_t>(e)] * heads + head] += part[static_cast<std::size_t>(head)].data()[e];
    self.parents[5]->accumulate(g);
  }
  if (wants(1)) {
    Tensor<T> g({3 * c, c});
    Eigen::Map<RowMat<T>>(g.data(), 3 * c, c).noalias() = dqkv.transpose() * s.x;
    self.parents[1]->accumulate(g);
  }
  if (wants(2)) {
    Tensor<T> g({3 * c});
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.data(), 3 * c) = dqkv.colwise().sum();
    self.parents[2]->accumulate(g);
  }
  if (wants(0)) {
    const Eigen::Map<const RowMat<T>> wqkv(self.parents[1]->value.data(), 3 * c, c);
    const RowMat<T> dx = dqkv * wqkv;
    Tensor<T> g(self.parents[0]->value.shape());
    for (std::int64_t b = 0; b < n; ++b)
#pragma omp parallel for schedule(static)
      for (std::int64_t r = 0; r < nw * tk; ++r) {
        const std::int64_t src = s.layout.source[static_cast<std::size_t>(r)];
        if (src < 0) continue;
        for (std::int64_t ch = 0; ch < c; ++ch) g[(b * c + ch) * hw + src] = dx(b * nw * tk + r, ch);
      }
    self.parents[0]->accumulate(g);
  }
}

}  // namespace

WindowLayout make_window_layout(std::int64_t height, std::int64_t width, std::int64_t window, std::int64_t shift) {
  if (window < 1) throw ShapeError("window size must be >= 1");
  if (shift < 0 || shift >= window) throw ShapeError("window shift must lie in [0, window)");
  WindowLayout l;
  l.height = height;
  l.width = width;
  l.window = window;
  l.shift = shift;
  l.windows_y = (height + window - 1) / window;
  l.windows_x = (width + window - 1) / window;
  l.padded_height = l.windows_y * window;
  l.padded_width = l.windows_x * window;
  const std::int64_t tk = window * window;
  l.source.resize(static_cast<std::size_t>(l.num_windows() * tk));
  l.region.resize(l.source.size());
  auto band = [&](std::int64_t pos, std::int64_t padded) -> std::uint8_t {
    if (shift == 0) return 0;
    if (pos < padded - window) return 0;
    return pos < padded - shift ? 1 : 2;
  };
  for (std::int64_t wy = 0; wy < l.windows_y; ++wy)
    for (std::int64_t wx = 0; wx < l.windows_x; ++wx)
      for (std::int64_t t = 0; t < tk; ++t) {
        // (sy, sx) in the shifted frame; it shows original pixel (sy+shift, sx+shift) mod padded size.
        const std::int64_t sy = wy * window + t / window, sx = wx * window + t % window;
        const std::int64_t oy = (sy + shift) % l.padded_height, ox = (sx + shift) % l.padded_width;
        const auto idx = static_cast<std::size_t>((wy * l.windows_x + wx) * tk + t);
        l.source[idx] = (oy < height && ox < width) ? oy * width + ox : -1;
        l.region[idx] = static_cast<std::uint8_t>(band(sy, l.padded_height) * 3 + band(sx, l.padded_width));
      }
  return l;
}

template <typename T>
WindowPartition<T> window_partition(const Tensor<T>& x, std::int64_t window, std::int64_t shift) {
  if (x.rank() != 4) throw ShapeError("window_partition expects [N,C,H,W], got " + shape_string(x.shape()));
  WindowPartition<T> part;
  part.layout = make_window_layout(x.dim(2), x.dim(3), window, shift);
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::int64_t nw = part.layout.num_windows(), tk = part.layout.tokens();
  part.windows = Tensor<T>({n * nw, tk, c});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t r = 0; r < nw * tk; ++r) {
      const std::int64_t src = part.layout.source[static_cast<std::size_t>(r)];
      if (src < 0) continue;
      for (std::int64_t ch = 0; ch < c; ++ch) part.windows[(b * nw * tk + r) * c + ch] = x[(b * c + ch) * hw + src];
    }
  return part;
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowLayout& layout, std::int64_t batch) {
  const std::int64_t nw = layout.num_windows(), tk = layout.tokens();
  if (windows.rank() != 3 || windows.dim(0) != batch * nw || windows.dim(1) != tk)
    throw ShapeError("window_reverse: windows " + shape_string(windows.shape()) + " do not match the layout");
  const std::int64_t c = windows.dim(2), hw = layout.height * layout.width;
  Tensor<T> out({batch, c, layout.height, layout.width});
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t r = 0; r < nw * tk; ++r) {
      const std::int64_t src = layout.source[static_cast<std::size_t>(r)];
      if (src < 0) continue;
      for (std::int64_t ch = 0; ch < c; ++ch) out[(b * c + ch) * hw + src] = windows[(b * nw * tk + r) * c + ch];
    }
  return out;
}

template <typename T>
AttentionParams<T> AttentionParams<T>::create(ParameterStore<T>& store, const std::string& prefix, int channels,
                                              int num_heads, int window_size, Rng& rng) {
  if (num_heads < 1 || channels % num_heads != 0)
    throw ShapeError("attention: " + std::to_string(num_heads) + " heads do not divide " + std::to_string(channels) +
                     " channels");
  AttentionParams p;
  p.num_heads = num_heads;
  p.window_size = window_size;
  auto linear = [&](int out, int in) {
    Tensor<T> w({out, in});
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w.values()) v = static_cast<T>(stddev * rng.normal());
    return w;
  };
  p.norm_gamma = store.add_parameter(prefix + ".norm.gamma", Tensor<T>({channels}, T(1)), ParamCategory::norm);
  p.norm_beta = store.add_parameter(prefix + ".norm.beta", Tensor<T>({channels}), ParamCategory::norm);
  p.qkv_weight = store.add_parameter(prefix + ".qkv.weight", linear(3 * channels, channels), ParamCategory::attention);
  p.qkv_bias = store.add_parameter(prefix + ".qkv.bias", Tensor<T>({3 * channels}), ParamCategory::attention);
  p.proj_weight = store.add_parameter(prefix + ".proj.weight", linear(channels, channels), ParamCategory::attention);
  p.proj_bias = store.add_parameter(prefix + ".proj.bias", Tensor<T>({channels}), ParamCategory::attention);
  const std::int64_t span = 2 * window_size - 1;
  p.relative_bias = store.add_parameter(prefix + ".relative_bias", Tensor<T>({span * span, num_heads}),
                                        ParamCategory::attention);
  return p;
}

template <typename T>
Var<T> window_attention(const Var<T>& normed, const AttentionParams<T>& p, std::int64_t shift) {
  Tensor<T> out;
  auto state = std::make_shared<AttentionState<T>>(attention_forward(normed.value(), p, shift, &out));
  auto result = make_result<T>(std::move(out),
                               {normed.node(), p.qkv_weight.node(), p.qkv_bias.node(), p.proj_weight.node(),
                                p.proj_bias.node(), p.relative_bias.node()},
                               [state](Node<T>& self) { attention_backward(self, *state); });
  return result;
}

template <typename T>
Var<T> wmsa(const Var<T>& x, const AttentionParams<T>& p) {
  check_attention_input(x.value(), p);
  return ops::add(x, window_attention(ops::layer_norm_channels(x, p.norm_gamma, p.norm_beta), p, 0));
}

template <typename T>
Var<T> swmsa(const Var<T>& x, const AttentionParams<T>& p) {
  check_attention_input(x.value(), p);
  return ops::add(x, window_attention(ops::layer_norm_channels(x, p.norm_gamma, p.norm_beta), p, p.window_size / 2));
}

template <typename T>
AttentionMaps<T> attention_maps(const Tensor<T>& x, const AttentionParams<T>& p, std::int64_t shift) {
  NoGradGuard guard;
  check_attention_input(x, p);
  const Var<T> normed = ops::layer_norm_channels(Var<T>(x), p.norm_gamma, p.norm_beta);
  AttentionState<T> s = attention_forward(normed.value(), p, shift, static_cast<Tensor<T>*>(nullptr));
  AttentionMaps<T> maps;
  maps.layout = std::move(s.layout);
  maps.batch = s.batch;
  maps.heads = s.heads;
  maps.probs.assign(s.probs.begin(), s.probs.end());
  return maps;
}

#define ADUNET_INSTANTIATE(T)                                                                       \
  template struct AttentionParams<T>;                                                               \
  template WindowPartition<T> window_partition<T>(const Tensor<T>&, std::int64_t, std::int64_t);    \
  template Tensor<T> window_reverse<T>(const Tensor<T>&, const WindowLayout&, std::int64_t);        \
  template Var<T> window_attention<T>(const Var<T>&, const AttentionParams<T>&, std::int64_t);      \
  template Var<T> wmsa<T>(const Var<T>&, const AttentionParams<T>&);                                \
  template Var<T> swmsa<T>(const Var<T>&, const AttentionParams<T>&);                               \
  template AttentionMaps<T> attention_maps<T>(const Tensor<T>&, const AttentionParams<T>&, std::int64_t);
ADUNET_INSTANTIATE(float)
ADUNET_INSTANTIATE(double)
#undef ADUNET_INSTANTIATE

}  // namespace adunet
