#pragma once

// Asymmetric dual-decoder blocks. Each block carries two streams:
//   contamination: CFF fusion -> W-MSA  -> Conv_out
//   scene:         GCFF fusion -> SW-MSA -> Conv_out
// Block 0 fuses F3 with the 2x-upsampled F4. Blocks 1..3 concatenate the two
// incoming latents, upsample them 2x, reduce them with one Conv_in per stream
// and fuse each with the encoder skip of the new resolution. Ablation modes
// swap fusion for a plain sum, drop attention, mirror the contamination
// stream into the scene stream, or drop the scene stream altogether.

#include <optional>

#include "adunet/attention.hpp"
#include "adunet/config.hpp"
#include "adunet/fusion.hpp"

namespace adunet {

enum class FusionKind { sum, cff, gcff };
enum class AttentionKind { none, wmsa, swmsa };

struct StreamSpec {
  FusionKind fusion = FusionKind::sum;
  AttentionKind attention = AttentionKind::none;
  bool operator==(const StreamSpec&) const = default;
};

StreamSpec contamination_stream_spec(const NetworkConfig& config);
/// Layout of the scene stream; std::nullopt for a single-decoder network.
std::optional<StreamSpec> scene_stream_spec(const NetworkConfig& config);

template <typename T>
struct StreamParams {
  StreamSpec spec;
  std::optional<FusionParams<T>> fusion;
  std::optional<AttentionParams<T>> attention;
  ConvBlockParams<T> conv_out;

  static StreamParams create(ParameterStore<T>& store, const std::string& prefix, const StreamSpec& spec,
                             int fused_channels, int out_channels, const NetworkConfig& config, Rng& rng);
};

/// fuse(a, b) -> attention -> Conv_out.
template <typename T>
Var<T> stream_forward(const Var<T>& a, const Var<T>& b, const StreamParams<T>& p, T leaky_slope, bool training);

template <typename T>
struct AdbParams {
  int index = 0;
  std::optional<ConvBlockParams<T>> conv_in_contamination;  // blocks 1..3
  std::optional<ConvBlockParams<T>> conv_in_scene;          // blocks 1..3, dual decoders
  StreamParams<T> contamination;
  std::optional<StreamParams<T>> scene;

  static AdbParams create(ParameterStore<T>& store, const NetworkConfig& config, int index, Rng& rng);
  bool dual() const { return scene.has_value(); }
};

template <typename T>
struct AdbOutput {
  Var<T> contamination;
  Var<T> scene;  // undefined for a single decoder
};

/// Block 0: F3 at H/8 and F4 at H/16 with equal widths.
template <typename T>
AdbOutput<T> adb0_forward(const Var<T>& f3, const Var<T>& f4, const AdbParams<T>& p, T leaky_slope, bool training);

/// Blocks 1..3: latents [N,d,h,w] (scene undefined for a single decoder) and
/// the encoder skip at exactly 2h x 2w.
template <typename T>
AdbOutput<T> adbj_forward(const Var<T>& zc, const Var<T>& zs, const Var<T>& skip, const AdbParams<T>& p,
                          T leaky_slope, bool training);

/// Bilinear 2x upsampling used between decoder resolutions.
template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  return ops::upsample2x(x);
}

}  // namespace adunet
