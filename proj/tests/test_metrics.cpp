#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "adunet/metrics.hpp"
#include "support.hpp"

using namespace adunet;
using testing::gradient_error;
using testing::random_tensor;

namespace {

// Direct 2-D evaluation: an 11x11 Gaussian built from scratch, zero outside
// the image, one SSIM value per pixel, averaged over channels and pixels.
double reference_ssim(const Tensor<double>& x, const Tensor<double>& y) {
  const int r = 5;
  double kernel[11][11], total = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) total += kernel[i][j] = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / 4.5);
  for (auto& row : kernel)
    for (double& v : row) v /= total;

  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto at = [&](const Tensor<double>& t, std::int64_t ch, std::int64_t i, std::int64_t j) {
    return (i < 0 || j < 0 || i >= h || j >= w) ? 0.0 : t[(ch * h + i) * w + j];
  };
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int di = -r; di <= r; ++di)
          for (int dj = -r; dj <= r; ++dj) {
            const double k = kernel[di + r][dj + r];
            const double a = at(x, ch, i + di, j + dj), b = at(y, ch, i + di, j + dj);
            mx += k * a;
            my += k * b;
            xx += k * a * a;
            yy += k * b * b;
            xy += k * a * b;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
        sum += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return sum / static_cast<double>(c * h * w);
}

}  // namespace

TEST_CASE("ssim window is a normalised gaussian") {
  const auto w = ssim_window();
  double total = 0;
  for (double v : w) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w[5] / w[6] == doctest::Approx(std::exp(1.0 / 4.5)).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(w[10]).epsilon(1e-15));
}

TEST_CASE("ssim of an image with itself is exactly one") {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_tensor<float>({3, 17 + trial, 23}, rng, 0, 1);
    CHECK(ssim(x, x) == 1.0);
    const auto xd = random_tensor<double>({2, 3, 16, 16}, rng, 0, 1);
    CHECK(ssim(xd, xd) == 1.0);
  }
}

TEST_CASE("ssim matches a direct scalar reference") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_tensor<double>({3, 16, 16}, rng, 0, 1);
    auto y = x;
    for (auto& v : y.values()) v = std::clamp(v + 0.1 * (trial + 1) / 10.0 * rng.normal(), 0.0, 1.0);
    const double expected = reference_ssim(x, y);
    CHECK(std::abs(ssim(x, y) - expected) < 1e-6);
    const Var<double> vx(x.reshaped({1, 3, 16, 16})), vy(y.reshaped({1, 3, 16, 16}));
    CHECK(std::abs(ssim(vx, vy).value()[0] - expected) < 1e-6);
  }
}

TEST_CASE("psnr of uniform offsets") {
  Rng rng(3);
  const auto x = random_tensor<double>({3, 20, 20}, rng, 0.2, 0.8);
  for (const auto& [offset, expected] : {std::pair{0.1, 20.0}, std::pair{0.01, 40.0}}) {
    auto y = x;
    for (auto& v : y.values()) v += offset;
    CHECK(std::abs(psnr(x, y) - expected) < 1e-6);
    CHECK(mse(x, y) == doctest::Approx(offset * offset).epsilon(1e-9));
  }
  CHECK(psnr(x, x) == kPsnrCap);
}

TEST_CASE("metrics reject mismatched shapes") {
  const Tensor<double> a({3, 8, 8}), b({3, 8, 9});
  CHECK_THROWS_AS(ssim(a, b), ShapeError);
  CHECK_THROWS_AS(psnr(a, b), ShapeError);
  CHECK_THROWS_AS(mse(a, b), ShapeError);
}

TEST_CASE("loss modes") {
  Rng rng(4);
  const Var<double> gt(random_tensor<double>({2, 3, 16, 16}, rng, 0, 1));
  const Var<double> y(random_tensor<double>({2, 3, 16, 16}, rng, 0, 1));
  const double s = ssim(gt.value(), y.value()), m = mse(gt.value(), y.value());
  CHECK(loss(gt, y, LossMode::ssim).value()[0] == doctest::Approx(-s).epsilon(1e-12));
  CHECK(loss(gt, y, LossMode::mse).value()[0] == doctest::Approx(m).epsilon(1e-12));
  CHECK(loss(gt, y, LossMode::ssim_plus_mse).value()[0] == doctest::Approx(m - s).epsilon(1e-12));
}

TEST_CASE("negative ssim loss gradient matches central differences") {
  Rng rng(5);
  auto gt = Var<double>(random_tensor<double>({1, 2, 8, 8}, rng, 0, 1), true);
  auto y = Var<double>(random_tensor<double>({1, 2, 8, 8}, rng, 0, 1), true);
  CHECK(gradient_error({gt, y}, [&] { return loss(gt, y, LossMode::ssim); }) < 1e-6);
  CHECK(gradient_error({gt, y}, [&] { return loss(gt, y, LossMode::ssim_plus_mse); }) < 1e-6);
  auto a = Var<double>(random_tensor<double>({2, 3, 13, 11}, rng, 0, 1), true);
  auto b = Var<double>(random_tensor<double>({2, 3, 13, 11}, rng, 0, 1), true);
  CHECK(gradient_error({a, b}, [&] { return ssim(a, b); }) < 1e-6);
}
