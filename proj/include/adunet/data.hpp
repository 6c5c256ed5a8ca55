#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adunet/image.hpp"

namespace adunet {

/// Procedural rain-and-haze generator settings. Ranges are inclusive and a
/// value is drawn per image (haze, streak count, base angle) or per streak
/// (length, width, intensity, angle jitter).
struct SynthParams {
  int height = 64;
  int width = 64;
  double beta_min = 0.3, beta_max = 1.0;        // haze attenuation
  double airlight_min = 0.6, airlight_max = 0.9;
  int streaks_min = 10, streaks_max = 40;
  double length_min = 8, length_max = 32;       // px
  double width_min = 1, width_max = 2;          // px
  double angle_min = -20, angle_max = 20;       // degrees from vertical
  double angle_jitter = 3;                      // per-streak, degrees
  double intensity_min = 0.15, intensity_max = 0.5;
  double blur_sigma = 0.7;
  std::uint64_t seed = 0;
};

/// Throws DataError for negative attenuation, airlight outside [0,1],
/// angles outside (-90,90) or inverted ranges.
void validate(const SynthParams& params);

struct SynthPair {
  Image contaminated;
  Image clean;
  Tensor<float> depth;  // [1,H,W] in [0,1]
  Image hazy;           // clean after haze only
  Tensor<float> rain;   // [1,H,W] additive streak layer
  float beta = 0;
  float airlight = 0;
};

/// Deterministic in (params.seed, index). Scene: a bilinear colour field with
/// depth-ordered rectangles and discs. Haze: clean*t + A*(1-t) with
/// t = exp(-beta*depth). Rain: blurred oriented streaks added to every
/// channel, then clamped.
SynthPair synth_pair(const SynthParams& params, std::int64_t index);

/// Writes input/, gt/ and depth/ PNGs with stems 00000, 00001, ...
void write_synth_dataset(const std::filesystem::path& root, const SynthParams& params, int count);

struct Sample {
  std::string stem;
  Image input;
  Image gt;
};

/// Decoded image pairs sorted by stem; immutable once built.
struct PairedDataset {
  std::vector<Sample> items;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
};

/// Reads <root>/input/*.png and <root>/gt/*.png with matching stems. With
/// `resize` (height, width; both divisible by 16) every image is resized
/// bilinearly; otherwise native sizes are kept and each pair must agree.
PairedDataset load_paired(const std::filesystem::path& root,
                          std::optional<std::pair<int, int>> resize = std::nullopt);

/// In-memory dataset of `count` synthetic pairs with stems as on disk.
PairedDataset synth_dataset(const SynthParams& params, int count, int first_index = 0);

/// Seeded shuffle, then the first round(fraction * n) items go to train.
/// Both parts keep stem order. Throws DataError unless 0 < fraction < 1 and
/// both parts are non-empty.
std::pair<PairedDataset, PairedDataset> split(const PairedDataset& dataset, double fraction, std::uint64_t seed);

std::string synth_stem(std::int64_t index);

}  // namespace adunet
