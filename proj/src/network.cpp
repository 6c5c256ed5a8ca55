#include "adunet/network.hpp"

#include <algorithm>
#include <sstream>

#include "adunet/errors.hpp"
#include "adunet/image.hpp"

namespace adunet {

template <typename T>
AduNet<T>::AduNet(const NetworkConfig& config) : config_(config) {
  validate(config_);
  Rng rng(config_.seed);
  store_.config_hash = architecture_hash(config_);
  store_.seed = config_.seed;
  encoder_ = EncoderParams<T>::create(store_, config_.encoder_channels, rng);
  for (int j = 0; j < 4; ++j) blocks_[static_cast<std::size_t>(j)] = AdbParams<T>::create(store_, config_, j, rng);
  head_contamination_ = HeadParams<T>::create(store_, "head.contamination", config_.adb_channels[3], 3, rng);
  if (config_.decoder_mode != DecoderMode::single)
    head_scene_ = HeadParams<T>::create(store_, "head.scene", config_.adb_channels[3], 3, rng);
}

template <typename T>
ForwardResult<T> AduNet<T>::forward(const Var<T>& image, bool training, ShapeTrace* trace) const {
  if (store_.config_hash != architecture_hash(config_))
    throw ConfigError("parameters were built for a different architecture than the active config");
  if (image.value().rank() != 4 || image.dim(1) != 3)
    throw ShapeError("network input must be [N,3,H,W], got " + shape_string(image.shape()));
  const T slope = static_cast<T>(config_.leaky_slope);
  auto record = [trace](const std::string& name, const Var<T>& v) {
    if (trace && v.defined()) trace->emplace_back(name, v.shape());
  };

  const std::vector<Var<T>> features = encode(image, encoder_, training);
  for (std::size_t i = 0; i < features.size(); ++i) record("encoder.conv" + std::to_string(i), features[i]);

  AdbOutput<T> z = adb0_forward(features[3], features[4], blocks_[0], slope, training);
  record("adb0.contamination", z.contamination);
  record("adb0.scene", z.scene);
  for (int j = 1; j < 4; ++j) {
    z = adbj_forward(z.contamination, z.scene, features[static_cast<std::size_t>(3 - j)],
                     blocks_[static_cast<std::size_t>(j)], slope, training);
    record("adb" + std::to_string(j) + ".contamination", z.contamination);
    record("adb" + std::to_string(j) + ".scene", z.scene);
  }

  ForwardResult<T> out;
  out.contamination = head_forward(z.contamination, head_contamination_, slope, training);
  out.scene = head_scene_ ? head_forward(z.scene, *head_scene_, slope, training)
                          : Var<T>(Tensor<T>(image.shape()));
  out.restored = ops::sub(ops::sub(image, out.contamination), out.scene);
  record("head.contamination", out.contamination);
  if (head_scene_) record("head.scene", out.scene);
  record("output", out.restored);
  return out;
}

template <typename T>
typename AduNet<T>::Decomposition AduNet<T>::decompose(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("expected a [3,H,W] image, got " + shape_string(image.shape()));
  NoGradGuard guard;
  const std::int64_t h = image.dim(1), w = image.dim(2);
  const Tensor<T> padded = reflect_pad_to_multiple(image, 16);
  const ForwardResult<T> r =
      forward(Var<T>(padded.reshaped({1, 3, padded.dim(1), padded.dim(2)})), false);
  auto unbatch = [&](const Var<T>& v) { return crop(v.value().reshaped({3, padded.dim(1), padded.dim(2)}), h, w); };
  return {unbatch(r.restored), unbatch(r.contamination), unbatch(r.scene)};
}

template <typename T>
void AduNet<T>::zero_heads() {
  auto zero = [](HeadParams<T>& h) {
    for (Var<T>* v : {&h.conv1.weight, &h.conv2.weight, &h.conv2.bias}) v->mutable_value().fill(T(0));
  };
  zero(head_contamination_);
  if (head_scene_) zero(*head_scene_);
}

template class AduNet<float>;
template class AduNet<double>;

std::string module_of(const std::string& name) {
  std::vector<std::string> parts;
  std::stringstream ss(name);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  std::size_t keep = 2;
  if (parts.size() > 2 && parts[0].rfind("adb", 0) == 0) keep = 3;
  keep = std::min(keep, parts.size() > 1 ? parts.size() - 1 : parts.size());
  std::string out = parts[0];
  for (std::size_t i = 1; i < keep; ++i) out += "." + parts[i];
  return out;
}

ParameterBreakdown count_parameters(const NetworkConfig& config) {
  const AduNet<float> net(config);
  ParameterBreakdown b;
  for (const auto& e : net.store().entries()) {
    if (e->kind != TensorKind::parameter) continue;
    const std::int64_t n = e->var.value().numel();
    const std::string module = module_of(e->name);
    if (b.modules.empty() || b.modules.back().first != module) b.modules.emplace_back(module, 0);
    b.modules.back().second += n;
    b.total += n;
    switch (e->category) {
      case ParamCategory::conv3x3: b.conv3x3 += n; break;
      case ParamCategory::conv1x1: b.conv1x1 += n; break;
      case ParamCategory::norm: b.norm += n; break;
      case ParamCategory::attention: b.attention += n; break;
      case ParamCategory::state: break;
    }
  }
  return b;
}

std::int64_t table_conv_parameter_count(const NetworkConfig& config) {
  validate(config);
  auto conv = [](std::int64_t in, std::int64_t out) { return 9 * in * out; };
  const std::int64_t streams = config.decoder_mode == DecoderMode::single ? 1 : 2;
  const auto& enc = config.encoder_channels;
  const auto& adb = config.adb_channels;
  std::int64_t total = 0;
  std::int64_t in = 3;
  for (const int c : enc) {
    total += conv(in, c) + conv(c, c);
    in = c;
  }
  total += streams * (conv(enc[3], adb[0]) + conv(adb[0], adb[0]));
  for (std::size_t j = 1; j < 4; ++j) {
    const std::int64_t d = adb[j - 1];
    total += streams * (conv(streams * d, d) + conv(d, d));      // Conv_in
    total += streams * (conv(d, adb[j]) + conv(adb[j], adb[j]));  // Conv_out
  }
  total += streams * (conv(adb[3], 3) + conv(3, 3) + 3);
  return total;
}

}  // namespace adunet
