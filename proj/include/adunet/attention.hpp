#pragma once

// Window multi-head self-attention (W-MSA) and its cyclically shifted variant
// (SW-MSA). The attention unit is: layer norm over channels -> windowed
// attention with a learned relative-position bias -> output projection ->
// residual add with the input. There is no feed-forward sub-block.

#include <cstdint>
#include <vector>

#include "adunet/layers.hpp"

namespace adunet {

/// How a feature map of size height x width is cut into window x window
/// tiles after zero-padding to a multiple of the window and cyclically
/// shifting by `shift` pixels along both axes.
struct WindowLayout {
  std::int64_t height = 0, width = 0;
  std::int64_t padded_height = 0, padded_width = 0;
  std::int64_t window = 1, shift = 0;
  std::int64_t windows_y = 0, windows_x = 0;
  // Per (window, token): flat source pixel y*width+x in the unpadded map, or -1 for padding.
  std::vector<std::int64_t> source;
  // Per (window, token): shift-mask region. Tokens attend only within their region.
  std::vector<std::uint8_t> region;

  std::int64_t num_windows() const { return windows_y * windows_x; }
  std::int64_t tokens() const { return window * window; }
};

WindowLayout make_window_layout(std::int64_t height, std::int64_t width, std::int64_t window, std::int64_t shift);

template <typename T>
struct WindowPartition {
  Tensor<T> windows;  // [N * num_windows, window*window, C]
  WindowLayout layout;
};

/// Splits [N,C,H,W] into windows, zero-padding as needed. Throws when window < 1.
template <typename T>
WindowPartition<T> window_partition(const Tensor<T>& x, std::int64_t window, std::int64_t shift = 0);

/// Inverse of window_partition: drops padding and undoes the shift.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowLayout& layout, std::int64_t batch);

template <typename T>
struct AttentionParams {
  Var<T> norm_gamma;     // [C]
  Var<T> norm_beta;      // [C]
  Var<T> qkv_weight;     // [3C, C]
  Var<T> qkv_bias;       // [3C]
  Var<T> proj_weight;    // [C, C]
  Var<T> proj_bias;      // [C]
  Var<T> relative_bias;  // [(2w-1)^2, heads], zero-initialised
  int num_heads = 1;
  int window_size = 1;

  static AttentionParams create(ParameterStore<T>& store, const std::string& prefix, int channels, int num_heads,
                                int window_size, Rng& rng);
  std::int64_t channels() const { return proj_weight.dim(0); }
};

/// Windowed attention on an already-normalised map, without the residual.
template <typename T>
Var<T> window_attention(const Var<T>& normed, const AttentionParams<T>& p, std::int64_t shift);

/// x + attention(norm(x)) over non-overlapping windows.
template <typename T>
Var<T> wmsa(const Var<T>& x, const AttentionParams<T>& p);

/// Same with windows shifted by floor(window/2); tokens wrapped together by
/// the cyclic shift are masked from each other.
template <typename T>
Var<T> swmsa(const Var<T>& x, const AttentionParams<T>& p);

/// Softmax attention weights, for inspection. `probs` is laid out
/// [batch][window][head][query][key]; masked and padded entries are 0.
template <typename T>
struct AttentionMaps {
  WindowLayout layout;
  std::int64_t batch = 0;
  std::int64_t heads = 0;
  std::vector<T> probs;

  T at(std::int64_t b, std::int64_t win, std::int64_t head, std::int64_t query, std::int64_t key) const {
    const std::int64_t t = layout.tokens();
    return probs[static_cast<std::size_t>((((b * layout.num_windows() + win) * heads + head) * t + query) * t + key)];
  }
};

/// Attention weights that wmsa (shift 0) or swmsa (shift window/2) would use on `x`.
template <typename T>
AttentionMaps<T> attention_maps(const Tensor<T>& x, const AttentionParams<T>& p, std::int64_t shift);

}  // namespace adunet
