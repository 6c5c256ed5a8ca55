#include "adunet/adb.hpp"

namespace adunet {

StreamSpec contamination_stream_spec(const NetworkConfig& c) {
  StreamSpec s;
  if (c.fusion_mode == FusionMode::cff_only || c.fusion_mode == FusionMode::asymmetric) s.fusion = FusionKind::cff;
  if (c.attention_mode == AttentionMode::wmsa_only || c.attention_mode == AttentionMode::asymmetric)
    s.attention = AttentionKind::wmsa;
  return s;
}

std::optional<StreamSpec> scene_stream_spec(const NetworkConfig& c) {
  switch (c.decoder_mode) {
    case DecoderMode::single: return std::nullopt;
    case DecoderMode::dual_symmetric: return contamination_stream_spec(c);
    case DecoderMode::dual_asymmetric: break;
  }
  StreamSpec s;
  if (c.fusion_mode == FusionMode::gcff_only || c.fusion_mode == FusionMode::asymmetric) s.fusion = FusionKind::gcff;
  if (c.attention_mode == AttentionMode::swmsa_only || c.attention_mode == AttentionMode::asymmetric)
    s.attention = AttentionKind::swmsa;
  return s;
}

template <typename T>
StreamParams<T> StreamParams<T>::create(ParameterStore<T>& store, const std::string& prefix, const StreamSpec& spec,
                                        int fused_channels, int out_channels, const NetworkConfig& config, Rng& rng) {
  StreamParams p;
  p.spec = spec;
  if (spec.fusion != FusionKind::sum)
    p.fusion = FusionParams<T>::create(store, prefix + (spec.fusion == FusionKind::cff ? ".cff" : ".gcff"),
                                       fused_channels, rng);
  if (spec.attention != AttentionKind::none)
    p.attention = AttentionParams<T>::create(store, prefix + (spec.attention == AttentionKind::wmsa ? ".wmsa" : ".swmsa"),
                                             fused_channels, config.num_heads, config.window_size, rng);
  p.conv_out = ConvBlockParams<T>::create(store, prefix + ".conv_out", fused_channels, out_channels, rng);
  return p;
}

template <typename T>
Var<T> stream_forward(const Var<T>& a, const Var<T>& b, const StreamParams<T>& p, T leaky_slope, bool training) {
  Var<T> fused;
  switch (p.spec.fusion) {
    case FusionKind::sum:
      fused = ops::add(a, b);
      break;
    case FusionKind::cff:
      fused = cff(a, b, *p.fusion, training);
      break;
    case FusionKind::gcff:
      fused = gcff(a, b, *p.fusion, training);
      break;
  }
  switch (p.spec.attention) {
    case AttentionKind::none:
      break;
    case AttentionKind::wmsa:
      fused = wmsa(fused, *p.attention);
      break;
    case AttentionKind::swmsa:
      fused = swmsa(fused, *p.attention);
      break;
  }
  return conv_block(fused, p.conv_out, Activation::leaky_relu, leaky_slope, training);
}

template <typename T>
AdbParams<T> AdbParams<T>::create(ParameterStore<T>& store, const NetworkConfig& config, int index, Rng& rng) {
  if (index < 0 || index > 3) throw std::invalid_argument("decoder block index must lie in 0..3");
  AdbParams p;
  p.index = index;
  const std::string prefix = "adb" + std::to_string(index);
  const auto scene = scene_stream_spec(config);
  const int out = config.adb_channels[static_cast<std::size_t>(index)];
  int fused = config.encoder_channels[3];
  if (index > 0) {
    const int d = config.adb_channels[static_cast<std::size_t>(index - 1)];
    const int in = scene ? 2 * d : d;
    fused = d;
    p.conv_in_contamination = ConvBlockParams<T>::create(store, prefix + ".contamination.conv_in", in, d, rng);
    if (scene) p.conv_in_scene = ConvBlockParams<T>::create(store, prefix + ".scene.conv_in", in, d, rng);
  }
  p.contamination = StreamParams<T>::create(store, prefix + ".contamination", contamination_stream_spec(config), fused,
                                            out, config, rng);
  if (scene) p.scene = StreamParams<T>::create(store, prefix + ".scene", *scene, fused, out, config, rng);
  return p;
}

template <typename T>
AdbOutput<T> adb0_forward(const Var<T>& f3, const Var<T>& f4, const AdbParams<T>& p, T leaky_slope, bool training) {
  if (f3.value().rank() != 4 || f4.value().rank() != 4)
    throw ShapeError("adb0: expected rank-4 features");
  const Var<T> up = upsample2x(f4);
  if (!up.value().same_shape(f3.value()))
    throw ShapeError("adb0: upsampled F4 " + shape_string(up.shape()) + " does not match F3 " + shape_string(f3.shape()));
  AdbOutput<T> out;
  out.contamination = stream_forward(f3, up, p.contamination, leaky_slope, training);
  if (p.scene) out.scene = stream_forward(f3, up, *p.scene, leaky_slope, training);
  return out;
}

template <typename T>
AdbOutput<T> adbj_forward(const Var<T>& zc, const Var<T>& zs, const Var<T>& skip, const AdbParams<T>& p,
                          T leaky_slope, bool training) {
  if (!p.conv_in_contamination) throw std::invalid_argument("adbj_forward called with block-0 parameters");
  if (zc.value().rank() != 4 || skip.value().rank() != 4) throw ShapeError("adbj: expected rank-4 features");
  if (p.dual() && (!zs.defined() || !zs.value().same_shape(zc.value())))
    throw ShapeError("adbj: contamination and scene latents must share one shape");
  if (skip.dim(0) != zc.dim(0) || skip.dim(2) != 2 * zc.dim(2) || skip.dim(3) != 2 * zc.dim(3))
    throw ShapeError("adbj: skip " + shape_string(skip.shape()) + " is not at twice the latent resolution of " +
                     shape_string(zc.shape()));
  const Var<T> merged = upsample2x(p.dual() ? ops::concat_channels(zc, zs) : zc);
  const Var<T> zc_in = conv_block(merged, *p.conv_in_contamination, Activation::leaky_relu, leaky_slope, training);
  if (skip.dim(1) != zc_in.dim(1))
    throw ShapeError("adbj: skip has " + std::to_string(skip.dim(1)) + " channels, reduced latent has " +
                     std::to_string(zc_in.dim(1)));
  AdbOutput<T> out;
  out.contamination = stream_forward(zc_in, skip, p.contamination, leaky_slope, training);
  if (p.dual()) {
    const Var<T> zs_in = conv_block(merged, *p.conv_in_scene, Activation::leaky_relu, leaky_slope, training);
    out.scene = stream_forward(zs_in, skip, *p.scene, leaky_slope, training);
  }
  return out;
}

#define ADUNET_INSTANTIATE(T)                                                                                  \
  template struct StreamParams<T>;                                                                             \
  template struct AdbParams<T>;                                                                                \
  template Var<T> stream_forward<T>(const Var<T>&, const Var<T>&, const StreamParams<T>&, T, bool);            \
  template AdbOutput<T> adb0_forward<T>(const Var<T>&, const Var<T>&, const AdbParams<T>&, T, bool);           \
  template AdbOutput<T> adbj_forward<T>(const Var<T>&, const Var<T>&, const Var<T>&, const AdbParams<T>&, T, bool);
ADUNET_INSTANTIATE(float)
ADUNET_INSTANTIATE(double)
#undef ADUNET_INSTANTIATE

}  // namespace adunet
