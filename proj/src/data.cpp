#include "adunet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "adunet/rng.hpp"

namespace adunet {
namespace {

namespace fs = std::filesystem;

struct Shape2D {
  bool disc;
  float cy, cx, ry, rx;
  float color[3];
  float depth;
};

float draw(Rng& rng, double lo, double hi) { return static_cast<float>(rng.uniform(lo, hi)); }

// Separable Gaussian blur of one plane with zero padding.
void blur_plane(std::vector<float>& plane, std::int64_t h, std::int64_t w, double sigma) {
  if (sigma <= 0) return;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<float> taps(static_cast<std::size_t>(2 * radius + 1));
  float total = 0;
  for (int i = -radius; i <= radius; ++i) {
    taps[static_cast<std::size_t>(i + radius)] = static_cast<float>(std::exp(-(i * i) / (2 * sigma * sigma)));
    total += taps[static_cast<std::size_t>(i + radius)];
  }
  for (auto& t : taps) t /= total;
  std::vector<float> tmp(plane.size());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      float s = 0;
      for (int k = -radius; k <= radius; ++k)
        if (x + k >= 0 && x + k < w) s += taps[static_cast<std::size_t>(k + radius)] * plane[static_cast<std::size_t>(y * w + x + k)];
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      float s = 0;
      for (int k = -radius; k <= radius; ++k)
        if (y + k >= 0 && y + k < h) s += taps[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>((y + k) * w + x)];
      plane[static_cast<std::size_t>(y * w + x)] = s;
    }
}

void render_scene(Rng& rng, std::int64_t h, std::int64_t w, Image& clean, Tensor<float>& depth) {
  float corner[4][3];
  for (auto& c : corner)
    for (float& v : c) v = draw(rng, 0.15, 0.85);
  const float freq = draw(rng, 0.05, 0.3), phase = draw(rng, 0, 2 * std::numbers::pi), amp = draw(rng, 0.0, 0.08);
  const std::int64_t hw = h * w;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const float fy = h > 1 ? static_cast<float>(y) / static_cast<float>(h - 1) : 0.f;
      const float fx = w > 1 ? static_cast<float>(x) / static_cast<float>(w - 1) : 0.f;
      const float texture = amp * std::sin(freq * static_cast<float>(x + y) + phase);
      for (int c = 0; c < 3; ++c) {
        const float top = corner[0][c] * (1 - fx) + corner[1][c] * fx;
        const float bottom = corner[2][c] * (1 - fx) + corner[3][c] * fx;
        clean[c * hw + y * w + x] = std::clamp(top * (1 - fy) + bottom * fy + texture, 0.f, 1.f);
      }
      depth[y * w + x] = 1.f - 0.6f * fy;  // horizon at the top
    }

  std::vector<Shape2D> shapes(static_cast<std::size_t>(rng.integer(3, 7)));
  const double extent = static_cast<double>(std::min(h, w));
  for (auto& s : shapes) {
    s.disc = rng.integer(0, 1) == 1;
    s.cy = draw(rng, 0, static_cast<double>(h));
    s.cx = draw(rng, 0, static_cast<double>(w));
    s.ry = draw(rng, extent / 16, extent / 5);
    s.rx = s.disc ? s.ry : draw(rng, extent / 16, extent / 5);
    for (float& v : s.color) v = draw(rng, 0.05, 0.95);
    s.depth = draw(rng, 0.1, 0.8);
  }
  // Far to near so nearer shapes occlude.
  std::stable_sort(shapes.begin(), shapes.end(), [](const Shape2D& a, const Shape2D& b) { return a.depth > b.depth; });
  for (const auto& s : shapes)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const float dy = (static_cast<float>(y) + 0.5f - s.cy) / s.ry, dx = (static_cast<float>(x) + 0.5f - s.cx) / s.rx;
        const bool inside = s.disc ? dy * dy + dx * dx <= 1.f : std::abs(dy) <= 1.f && std::abs(dx) <= 1.f;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) clean[c * hw + y * w + x] = s.color[c];
        depth[y * w + x] = s.depth;
      }
}

void render_rain(Rng& rng, const SynthParams& p, Tensor<float>& rain) {
  const std::int64_t h = p.height, w = p.width;
  std::vector<float> layer(static_cast<std::size_t>(h * w), 0.f);
  const double base = rng.uniform(p.angle_min, p.angle_max);
  const auto count = rng.integer(p.streaks_min, p.streaks_max);
  for (std::int64_t i = 0; i < count; ++i) {
    const double angle = std::clamp(base + rng.uniform(-p.angle_jitter, p.angle_jitter), -89.0, 89.0);
    const float theta = static_cast<float>(angle * std::numbers::pi / 180.0);
    const float cy = draw(rng, 0, static_cast<double>(h)), cx = draw(rng, 0, static_cast<double>(w));
    const float len = draw(rng, p.length_min, p.length_max), half_width = draw(rng, p.width_min, p.width_max) / 2;
    const float intensity = draw(rng, p.intensity_min, p.intensity_max);
    // Falling direction: straight down rotated by theta.
    const float uy = std::cos(theta), ux = std::sin(theta);
    const float y0 = cy - uy * len / 2, x0 = cx - ux * len / 2;
    const auto ylo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(y0, y0 + uy * len) - 2)));
    const auto yhi = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(std::max(y0, y0 + uy * len) + 2)));
    const auto xlo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(x0, x0 + ux * len) - 2)));
    const auto xhi = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(std::max(x0, x0 + ux * len) + 2)));
    for (std::int64_t y = ylo; y <= yhi; ++y)
      for (std::int64_t x = xlo; x <= xhi; ++x) {
        const float py = static_cast<float>(y) + 0.5f - y0, px = static_cast<float>(x) + 0.5f - x0;
        const float along = std::clamp(py * uy + px * ux, 0.f, len);
        const float ey = py - along * uy, ex = px - along * ux;
        if (ey * ey + ex * ex <= half_width * half_width) {
          float& v = layer[static_cast<std::size_t>(y * w + x)];
          v = std::max(v, intensity);
        }
      }
  }
  blur_plane(layer, h, w, p.blur_sigma);
  std::copy(layer.begin(), layer.end(), rain.data());
}

std::vector<std::string> png_stems(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("missing directory " + dir.string());
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") stems.push_back(entry.path().stem().string());
  std::sort(stems.begin(), stems.end());
  return stems;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

void validate(const SynthParams& p) {
  auto fail = [](const std::string& what) { throw DataError("invalid synth parameters: " + what); };
  if (p.height < 1 || p.width < 1) fail("canvas size must be positive");
  if (p.beta_min < 0 || p.beta_max < p.beta_min) fail("beta range must satisfy 0 <= min <= max");
  if (p.airlight_min < 0 || p.airlight_max > 1 || p.airlight_max < p.airlight_min)
    fail("airlight range must lie in [0,1]");
  if (p.streaks_min < 0 || p.streaks_max < p.streaks_min) fail("streak count range");
  if (p.length_min < 0 || p.length_max < p.length_min) fail("streak length range");
  if (p.width_min <= 0 || p.width_max < p.width_min) fail("streak width range");
  if (p.angle_min <= -90 || p.angle_max >= 90 || p.angle_max < p.angle_min) fail("angles must lie in (-90, 90)");
  if (p.angle_jitter < 0) fail("angle jitter must be non-negative");
  if (p.intensity_min < 0 || p.intensity_max < p.intensity_min) fail("streak intensity range");
  if (p.blur_sigma < 0) fail("blur sigma must be non-negative");
}

std::string synth_stem(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05lld", static_cast<long long>(index));
  return buf;
}

SynthPair synth_pair(const SynthParams& p, std::int64_t index) {
  validate(p);
  const std::int64_t h = p.height, w = p.width, hw = h * w;
  // Separate streams so changing one stage's ranges leaves the others intact.
  Rng scene_rng = Rng::stream(p.seed, static_cast<std::uint64_t>(index) * 3);
  Rng haze_rng = Rng::stream(p.seed, static_cast<std::uint64_t>(index) * 3 + 1);
  Rng rain_rng = Rng::stream(p.seed, static_cast<std::uint64_t>(index) * 3 + 2);

  SynthPair out;
  out.clean = Image({3, h, w});
  out.depth = Tensor<float>({1, h, w});
  render_scene(scene_rng, h, w, out.clean, out.depth);

  out.beta = draw(haze_rng, p.beta_min, p.beta_max);
  out.airlight = draw(haze_rng, p.airlight_min, p.airlight_max);
  out.hazy = Image({3, h, w});
  for (std::int64_t i = 0; i < hw; ++i) {
    const float t = std::exp(-out.beta * out.depth[i]);
    for (std::int64_t c = 0; c < 3; ++c)
      out.hazy[c * hw + i] = out.clean[c * hw + i] * t + out.airlight * (1.f - t);
  }

  out.rain = Tensor<float>({1, h, w});
  render_rain(rain_rng, p, out.rain);
  out.contaminated = Image({3, h, w});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < hw; ++i)
      out.contaminated[c * hw + i] = std::clamp(out.hazy[c * hw + i] + out.rain[i], 0.f, 1.f);
  return out;
}

void write_synth_dataset(const fs::path& root, const SynthParams& params, int count) {
  validate(params);
  if (count < 1) throw DataError("synth count must be positive");
  for (const char* sub : {"input", "gt", "depth"}) fs::create_directories(root / sub);
  for (int i = 0; i < count; ++i) {
    const SynthPair pair = synth_pair(params, i);
    const std::string file = synth_stem(i) + ".png";
    write_png_rgb(root / "input" / file, pair.contaminated);
    write_png_rgb(root / "gt" / file, pair.clean);
    write_png_gray16(root / "depth" / file, pair.depth);
  }
}

PairedDataset load_paired(const fs::path& root, std::optional<std::pair<int, int>> resize) {
  if (resize && (resize->first < 16 || resize->second < 16 || resize->first % 16 || resize->second % 16))
    throw DataError("resize target " + std::to_string(resize->first) + "x" + std::to_string(resize->second) +
                    " is not a positive multiple of 16");
  const auto inputs = png_stems(root / "input");
  const auto gts = png_stems(root / "gt");
  std::vector<std::string> orphan_inputs, orphan_gts;
  std::set_difference(inputs.begin(), inputs.end(), gts.begin(), gts.end(), std::back_inserter(orphan_inputs));
  std::set_difference(gts.begin(), gts.end(), inputs.begin(), inputs.end(), std::back_inserter(orphan_gts));
  if (!orphan_inputs.empty()) throw DataError("inputs without ground truth: " + join(orphan_inputs));
  if (!orphan_gts.empty()) throw DataError("ground truth without input: " + join(orphan_gts));
  if (inputs.empty()) throw DataError("no PNG pairs under " + root.string());

  PairedDataset ds;
  ds.items.resize(inputs.size());
  // Exceptions must not cross the parallel region; the first failure by
  // index is rethrown afterwards.
  std::vector<std::string> errors(inputs.size());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Sample& s = ds.items[i];
    s.stem = inputs[i];
    try {
      s.input = read_png_rgb(root / "input" / (s.stem + ".png"));
      s.gt = read_png_rgb(root / "gt" / (s.stem + ".png"));
      if (resize) {
        s.input = resize_image(s.input, resize->first, resize->second);
        s.gt = resize_image(s.gt, resize->first, resize->second);
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  for (const auto& s : ds.items)
    if (!s.input.same_shape(s.gt))
      throw DataError("pair " + s.stem + ": input " + shape_string(s.input.shape()) + " and gt " +
                      shape_string(s.gt.shape()) + " differ in size");
  return ds;
}

PairedDataset synth_dataset(const SynthParams& params, int count, int first_index) {
  validate(params);
  if (count < 1) throw DataError("synth count must be positive");
  PairedDataset ds;
  ds.items.resize(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < count; ++i) {
    SynthPair pair = synth_pair(params, first_index + i);
    auto& s = ds.items[static_cast<std::size_t>(i)];
    s.stem = synth_stem(first_index + i);
    s.input = std::move(pair.contaminated);
    s.gt = std::move(pair.clean);
  }
  return ds;
}

std::pair<PairedDataset, PairedDataset> split(const PairedDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw DataError("split fraction must lie strictly between 0 and 1");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n)
    throw DataError("split of " + std::to_string(n) + " items at " + std::to_string(fraction) + " leaves one side empty");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)))]);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::pair<PairedDataset, PairedDataset> out;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.first : out.second).items.push_back(ds.items[order[i]]);
  return out;
}

}  // namespace adunet
