#pragma once

#include <array>
#include <vector>

#include "adunet/layers.hpp"

namespace adunet {

/// Five conv blocks Conv_0..Conv_4 (3x3 convolutions, batch norm, ReLU).
template <typename T>
struct EncoderParams {
  std::array<ConvBlockParams<T>, 5> blocks;

  static EncoderParams create(ParameterStore<T>& store, const std::array<int, 5>& channels, Rng& rng);
};

/// Returns the skip features F_0..F_4 of an [N,3,H,W] batch. Stage i >= 1
/// max-pools F_{i-1} by 2 before its conv block, so F_i is H/2^i x W/2^i.
/// H and W must be divisible by 16.
template <typename T>
std::vector<Var<T>> encode(const Var<T>& image, const EncoderParams<T>& params, bool training);

}  // namespace adunet
