// Parallel kernels against their serial references, plus whole-network
// forward passes at the smoke-test and paper resolutions.

#include <benchmark/benchmark.h>

#include "adunet/kernels.hpp"
#include "adunet/network.hpp"
#include "adunet/reference.hpp"

using namespace adunet;

namespace {

Tensor<float> random_tensor(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(shape);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

// Arguments: channels in/out, spatial size.
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({8, 8, 64})->Args({32, 32, 64})->Args({64, 64, 32})->Args({128, 128, 32});
}

void BM_Conv3x3(benchmark::State& state) {
  const auto ci = state.range(0), co = state.range(1), s = state.range(2);
  const auto x = random_tensor({1, ci, s, s}, 1), w = random_tensor({co, ci, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d_forward(x, w, static_cast<const Tensor<float>*>(nullptr)));
  state.SetItemsProcessed(state.iterations() * 9 * ci * co * s * s);
}
BENCHMARK(BM_Conv3x3)->Apply(conv_args)->Unit(benchmark::kMicrosecond);

void BM_Conv3x3Reference(benchmark::State& state) {
  const auto ci = state.range(0), co = state.range(1), s = state.range(2);
  const auto x = random_tensor({1, ci, s, s}, 1), w = random_tensor({co, ci, 3, 3}, 2);
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::conv2d_direct(x, w, static_cast<const Tensor<float>*>(nullptr)));
  state.SetItemsProcessed(state.iterations() * 9 * ci * co * s * s);
}
BENCHMARK(BM_Conv3x3Reference)->Apply(conv_args)->Unit(benchmark::kMicrosecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const auto ci = state.range(0), co = state.range(1), s = state.range(2);
  const auto x = random_tensor({1, ci, s, s}, 1), w = random_tensor({co, ci, 3, 3}, 2);
  const auto g = random_tensor({1, co, s, s}, 3);
  Tensor<float> gx, gw;
  for (auto _ : state) {
    kernels::conv2d_backward(x, w, g, &gx, &gw, static_cast<Tensor<float>*>(nullptr));
    benchmark::DoNotOptimize(gx.data());
  }
}
BENCHMARK(BM_Conv3x3Backward)->Apply(conv_args)->Unit(benchmark::kMicrosecond);

void BM_Resize(benchmark::State& state) {
  const auto s = state.range(0);
  const auto x = random_tensor({1, 32, s, s}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::resize_bilinear(x, 2 * s, 2 * s));
}
BENCHMARK(BM_Resize)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_ResizeReference(benchmark::State& state) {
  const auto s = state.range(0);
  const auto x = random_tensor({1, 32, s, s}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(reference::resize_bilinear_direct(x, 2 * s, 2 * s));
}
BENCHMARK(BM_ResizeReference)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_MaxPool(benchmark::State& state) {
  const auto s = state.range(0);
  const auto x = random_tensor({1, 32, s, s}, 5);
  std::vector<std::int64_t> argmax;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::maxpool2x2_forward(x, &argmax));
}
BENCHMARK(BM_MaxPool)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_MaxPoolReference(benchmark::State& state) {
  const auto s = state.range(0);
  const auto x = random_tensor({1, 32, s, s}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(reference::maxpool2x2_direct(x));
}
BENCHMARK(BM_MaxPoolReference)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_TinyTrainStep(benchmark::State& state) {
  AduNet<float> net(tiny_config());
  const auto x = random_tensor({4, 3, 64, 64}, 6);
  for (auto _ : state) {
    net.store().zero_grad();
    const auto r = net.forward(Var<float>(x), true);
    backward(ops::sum(ops::mul(r.restored, r.restored)));
  }
}
BENCHMARK(BM_TinyTrainStep)->Unit(benchmark::kMillisecond);

void BM_FullForward512x256(benchmark::State& state) {
  const AduNet<float> net(preset_config(Preset::adu_net));
  const auto x = random_tensor({1, 3, 256, 512}, 7);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(Var<float>(x), false));
}
BENCHMARK(BM_FullForward512x256)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
