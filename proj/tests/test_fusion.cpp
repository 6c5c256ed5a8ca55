#include <doctest.h>

#include "adunet/fusion.hpp"
#include "support.hpp"

using namespace adunet;
using testing::gradient_error;
using testing::max_abs_diff;
using testing::probe;
using testing::random_tensor;

namespace {

template <typename T>
FusionParams<T> make(ParameterStore<T>& store, int channels, Rng& rng) {
  auto p = FusionParams<T>::create(store, "fuse", channels, rng);
  // Non-trivial affine terms so the gate is not symmetric around 0.5.
  for (auto* bn : {&p.bn1, &p.bn2}) {
    for (auto& v : bn->gamma.mutable_value().values()) v = static_cast<T>(rng.uniform(0.5, 1.5));
    for (auto& v : bn->beta.mutable_value().values()) v = static_cast<T>(rng.uniform(-0.5, 0.5));
  }
  return p;
}

}  // namespace

TEST_CASE("fusing a map with itself returns it") {
  Rng rng(1);
  ParameterStore<float> store;
  const auto p = make(store, 8, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Var<float> f(random_tensor<float>({2, 8, 6, 6}, rng, -3, 3));
    for (bool training : {true, false}) {
      CHECK(max_abs_diff(cff(f, f, p, training).value(), f.value()) <= 1e-6);
      CHECK(max_abs_diff(gcff(f, f, p, training).value(), f.value()) <= 1e-6);
    }
  }
}

TEST_CASE("fusion output is a convex combination of its inputs") {
  Rng rng(2);
  ParameterStore<double> store;
  const auto p = make(store, 4, rng);
  const Var<double> a(random_tensor<double>({2, 4, 5, 5}, rng)), b(random_tensor<double>({2, 4, 5, 5}, rng));
  for (const auto& y : {cff(a, b, p, true).value(), gcff(a, b, p, true).value()})
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      CHECK(y[i] >= std::min(a.value()[i], b.value()[i]) - 1e-12);
      CHECK(y[i] <= std::max(a.value()[i], b.value()[i]) + 1e-12);
    }
}

TEST_CASE("gate shapes: per pixel for CFF, per channel for GCFF") {
  Rng rng(3);
  ParameterStore<double> store;
  const auto p = make(store, 4, rng);
  const Var<double> a(random_tensor<double>({2, 4, 5, 3}, rng)), b(random_tensor<double>({2, 4, 5, 3}, rng));
  const auto w = cff_gate(a, b, p, true);
  const auto g = gcff_gate(a, b, p, true);
  CHECK(w.shape() == Shape{2, 4, 5, 3});
  CHECK(g.shape() == Shape{2, 4, 1, 1});
  for (const auto& t : {w.value(), g.value()})
    for (double v : t.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
}

TEST_CASE("fusion rejects mismatched inputs") {
  Rng rng(4);
  ParameterStore<double> store;
  const auto p = make(store, 4, rng);
  const Var<double> a(Tensor<double>({1, 4, 4, 4})), b(Tensor<double>({1, 4, 4, 2})), c(Tensor<double>({1, 2, 4, 4}));
  CHECK_THROWS_AS(cff(a, b, p, true), ShapeError);
  CHECK_THROWS_AS(gcff(a, b, p, true), ShapeError);
  CHECK_THROWS_AS(cff(c, c, p, true), ShapeError);
}

TEST_CASE("fusion gradients match central differences") {
  Rng rng(5);
  ParameterStore<double> store;
  const auto p = make(store, 4, rng);
  auto a = Var<double>(random_tensor<double>({2, 4, 4, 4}, rng), true);
  auto b = Var<double>(random_tensor<double>({2, 4, 4, 4}, rng), true);
  const std::vector<Var<double>> inputs{a, b, p.conv1.weight, p.bn1.gamma, p.bn1.beta,
                                        p.conv2.weight, p.bn2.gamma, p.bn2.beta};
  CHECK(gradient_error(inputs, [&] { return probe(cff(a, b, p, true)); }) < 1e-6);
  CHECK(gradient_error(inputs, [&] { return probe(cff(a, b, p, false)); }) < 1e-6);
}

TEST_CASE("global fusion gradients match central differences") {
  // The pooled gate is normalized over the batch only, so two samples leave
  // the conv1 gradient near zero and the check meaningless. Use four.
  Rng rng(6);
  ParameterStore<double> store;
  const auto p = make(store, 4, rng);
  auto a = Var<double>(random_tensor<double>({4, 4, 3, 3}, rng), true);
  auto b = Var<double>(random_tensor<double>({4, 4, 3, 3}, rng), true);
  const std::vector<Var<double>> inputs{a, b, p.conv1.weight, p.bn1.gamma, p.bn1.beta,
                                        p.conv2.weight, p.bn2.gamma, p.bn2.beta};
  CHECK(gradient_error(inputs, [&] { return probe(gcff(a, b, p, true)); }, 1e-5) < 1e-6);
  CHECK(gradient_error(inputs, [&] { return probe(gcff(a, b, p, false)); }) < 1e-6);
}
