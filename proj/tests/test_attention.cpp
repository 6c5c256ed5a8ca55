#include <doctest.h>

#include "adunet/attention.hpp"
#include "support.hpp"

using namespace adunet;
using testing::gradient_error;
using testing::probe;
using testing::random_tensor;

namespace {

template <typename T>
AttentionParams<T> make_params(ParameterStore<T>& store, int channels, int heads, int window, Rng& rng,
                               bool random_bias = true) {
  auto p = AttentionParams<T>::create(store, "attn", channels, heads, window, rng);
  if (random_bias)
    for (auto& v : p.relative_bias.mutable_value().values()) v = static_cast<T>(rng.uniform(-1, 1));
  return p;
}

}  // namespace

TEST_CASE("window layout pads to whole windows and marks padding") {
  const auto l = make_window_layout(5, 7, 4, 0);
  CHECK(l.padded_height == 8);
  CHECK(l.padded_width == 8);
  CHECK(l.num_windows() == 4);
  CHECK(l.source[0] == 0);
  // Window 1 (top right), token (0, 3) is column 7: padding.
  CHECK(l.source[static_cast<std::size_t>(16 + 3)] == -1);
  CHECK_THROWS_AS(make_window_layout(4, 4, 0, 0), ShapeError);
  CHECK_THROWS_AS(make_window_layout(4, 4, 4, 4), ShapeError);
}

TEST_CASE("shifted windows start at the shift offset") {
  const auto l = make_window_layout(8, 8, 4, 2);
  CHECK(l.source[0] == 2 * 8 + 2);
  // The last window wraps rows/columns 0..1 around: three mask regions per axis.
  const std::size_t last = 3 * 16;
  CHECK(l.region[last] != l.region[last + 15]);
}

TEST_CASE("partition and reverse round-trip exactly") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = rng.integer(1, 19), w = rng.integer(1, 19), win = rng.integer(1, 8);
    const auto shift = rng.integer(0, win - 1);
    const auto x = random_tensor<float>({2, 3, h, w}, rng);
    const auto part = window_partition(x, win, shift);
    CHECK(part.windows.dim(1) == win * win);
    CHECK(testing::max_abs_diff(window_reverse(part.windows, part.layout, 2), x) == 0.0);
  }
}

TEST_CASE("relative position bias starts at zero") {
  Rng rng(2);
  ParameterStore<float> store;
  const auto p = AttentionParams<float>::create(store, "a", 8, 4, 8, rng);
  CHECK(p.relative_bias.shape() == Shape{15 * 15, 4});
  for (float v : p.relative_bias.value().values()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(AttentionParams<float>::create(store, "b", 6, 4, 8, rng), ShapeError);
}

TEST_CASE("attention rows are distributions over unmasked keys") {
  Rng rng(3);
  ParameterStore<double> store;
  const auto p = make_params(store, 8, 4, 4, rng);
  const auto x = random_tensor<double>({2, 8, 10, 7}, rng);
  for (std::int64_t shift : {0, 2}) {
    const auto maps = attention_maps(x, p, shift);
    const auto& l = maps.layout;
    const std::int64_t t = l.tokens();
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t w = 0; w < l.num_windows(); ++w)
        for (std::int64_t h = 0; h < 4; ++h)
          for (std::int64_t q = 0; q < t; ++q) {
            const auto qi = static_cast<std::size_t>(w * t + q);
            double total = 0, leak = 0;
            for (std::int64_t k = 0; k < t; ++k) {
              const auto ki = static_cast<std::size_t>(w * t + k);
              const double v = maps.at(b, w, h, q, k);
              total += v;
              if (l.region[ki] != l.region[qi] || l.source[ki] < 0) leak += v;
            }
            if (l.source[qi] < 0) {
              CHECK(total == 0.0);
            } else {
              CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
              CHECK(leak == 0.0);
            }
          }
  }
}

TEST_CASE("shifted attention does not mix wrapped regions") {
  // Perturbing one pixel may only change outputs at pixels that share its
  // shifted window and mask region.
  Rng rng(4);
  ParameterStore<double> store;
  const auto p = make_params(store, 4, 2, 4, rng);
  auto x = random_tensor<double>({1, 4, 8, 8}, rng);
  const auto base = swmsa(Var<double>(x), p).value();
  const auto layout = make_window_layout(8, 8, 4, 2);
  const std::int64_t pixel = 0;  // wraps into the bottom-right window
  for (std::int64_t c = 0; c < 4; ++c) x[c * 64 + pixel] += 0.5;
  const auto moved = swmsa(Var<double>(x), p).value();
  std::size_t slot = 0;
  while (layout.source[slot] != pixel) ++slot;
  const std::int64_t window = static_cast<std::int64_t>(slot) / 16;
  for (std::int64_t t = 0; t < 16; ++t) {
    const auto s = static_cast<std::size_t>(window * 16 + t);
    if (layout.source[s] == pixel || layout.region[s] == layout.region[slot]) continue;
    double change = 0;
    for (std::int64_t c = 0; c < 4; ++c)
      change = std::max(change, std::abs(moved[c * 64 + layout.source[s]] - base[c * 64 + layout.source[s]]));
    CHECK(change < 1e-12);
  }
}

TEST_CASE("window attention gradients match central differences") {
  Rng rng(5);
  ParameterStore<double> store;
  auto p = make_params(store, 8, 2, 4, rng);
  auto x = Var<double>(random_tensor<double>({1, 8, 6, 5}, rng), true);
  const std::vector<Var<double>> inputs{x, p.norm_gamma, p.norm_beta, p.qkv_weight, p.qkv_bias,
                                        p.proj_weight, p.proj_bias, p.relative_bias};
  CHECK(gradient_error(inputs, [&] { return probe(wmsa(x, p)); }) < 1e-6);
  CHECK(gradient_error(inputs, [&] { return probe(swmsa(x, p)); }) < 1e-6);
}

TEST_CASE("attention rejects channel mismatches") {
  Rng rng(6);
  ParameterStore<double> store;
  const auto p = make_params(store, 8, 2, 4, rng);
  CHECK_THROWS_AS(wmsa(Var<double>(Tensor<double>({1, 4, 8, 8})), p), ShapeError);
}
