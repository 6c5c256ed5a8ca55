#include "adunet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "adunet/errors.hpp"

namespace adunet {
namespace {

template <typename E, std::size_t N>
E parse_enum(const nlohmann::json& value, const char* field, const std::array<E, N>& options) {
  if (!value.is_string()) throw ConfigError(std::string(field) + ": expected a string");
  const auto text = value.get<std::string>();
  for (E option : options)
    if (to_string(option) == text) return option;
  std::string allowed;
  for (E option : options) allowed += (allowed.empty() ? "" : ", ") + to_string(option);
  throw ConfigError(std::string(field) + ": unknown value '" + text + "' (expected one of " + allowed + ")");
}

template <std::size_t N>
std::array<int, N> parse_channels(const nlohmann::json& value, const char* field) {
  if (!value.is_array() || value.size() != N)
    throw ConfigError(std::string(field) + ": expected a list of " + std::to_string(N) + " integers");
  std::array<int, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!value[i].is_number_integer()) throw ConfigError(std::string(field) + ": entries must be integers");
    out[i] = value[i].get<int>();
  }
  return out;
}

bool uses_attention(const NetworkConfig& c) { return c.attention_mode != AttentionMode::none; }

}  // namespace

std::string to_string(Preset v) {
  switch (v) {
    case Preset::adu_net: return "adu_net";
    case Preset::adu_net_plus: return "adu_net_plus";
    case Preset::custom: return "custom";
  }
  return "?";
}
std::string to_string(AttentionMode v) {
  switch (v) {
    case AttentionMode::none: return "none";
    case AttentionMode::wmsa_only: return "wmsa_only";
    case AttentionMode::swmsa_only: return "swmsa_only";
    case AttentionMode::asymmetric: return "asymmetric";
  }
  return "?";
}
std::string to_string(FusionMode v) {
  switch (v) {
    case FusionMode::none: return "none";
    case FusionMode::cff_only: return "cff_only";
    case FusionMode::gcff_only: return "gcff_only";
    case FusionMode::asymmetric: return "asymmetric";
  }
  return "?";
}
std::string to_string(DecoderMode v) {
  switch (v) {
    case DecoderMode::single: return "single";
    case DecoderMode::dual_symmetric: return "dual_symmetric";
    case DecoderMode::dual_asymmetric: return "dual_asymmetric";
  }
  return "?";
}
std::string to_string(LossMode v) {
  switch (v) {
    case LossMode::ssim: return "ssim";
    case LossMode::mse: return "mse";
    case LossMode::ssim_plus_mse: return "ssim_plus_mse";
  }
  return "?";
}

NetworkConfig preset_config(Preset preset) {
  NetworkConfig c;
  c.preset = preset;
  if (preset == Preset::adu_net_plus) {
    c.encoder_channels = {64, 128, 256, 512, 512};
    c.adb_channels = {256, 128, 64, 32};
  }
  return c;
}

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.preset = Preset::custom;
  c.encoder_channels = {8, 16, 32, 64, 64};
  c.adb_channels = {32, 16, 8, 4};
  return c;
}

void validate(const NetworkConfig& c) {
  const auto& e = c.encoder_channels;
  const auto& a = c.adb_channels;
  for (int v : e)
    if (v < 1) throw ConfigError("encoder_channels: every entry must be positive");
  for (std::size_t i = 1; i < e.size(); ++i)
    if (e[i] < e[i - 1]) throw ConfigError("encoder_channels: must be non-decreasing");
  if (e[3] != e[4]) throw ConfigError("encoder_channels: the last two stages must have equal width");
  for (int v : a)
    if (v < 1) throw ConfigError("adb_channels: every entry must be positive");
  // Block j+1 fuses its reduced latent (width adb[j]) with encoder skip F_{2-j}.
  for (int j = 0; j < 3; ++j)
    if (a[j] != e[2 - j])
      throw ConfigError("adb_channels: entry " + std::to_string(j) + " must equal encoder skip width " +
                        std::to_string(e[2 - j]));
  if (c.window_size < 1) throw ConfigError("window_size: must be >= 1");
  if (c.num_heads < 1) throw ConfigError("num_heads: must be >= 1");
  if (uses_attention(c)) {
    for (int width : {e[3], a[0], a[1], a[2]})
      if (width % c.num_heads != 0)
        throw ConfigError("num_heads: " + std::to_string(c.num_heads) + " does not divide attended width " +
                          std::to_string(width));
  }
  if (!(c.leaky_slope >= 0.0 && c.leaky_slope < 1.0)) throw ConfigError("leaky_slope: must lie in [0, 1)");
  if (c.preset != Preset::custom) {
    const NetworkConfig ref = preset_config(c.preset);
    if (c.encoder_channels != ref.encoder_channels)
      throw ConfigError("encoder_channels: preset " + to_string(c.preset) + " fixes the encoder widths");
    if (c.adb_channels != ref.adb_channels)
      throw ConfigError("adb_channels: preset " + to_string(c.preset) + " fixes the decoder widths");
  }
}

NetworkConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::set<std::string> known{"preset",       "encoder_channels", "adb_channels", "window_size",
                                           "num_heads",    "attention_mode",   "fusion_mode",  "decoder_mode",
                                           "loss_mode",    "leaky_slope",      "seed",         "train"};
  for (const auto& [key, _] : doc.items())
    if (!known.count(key)) throw ConfigError(key + ": unknown key");

  Preset preset = Preset::adu_net;
  if (doc.contains("preset"))
    preset = parse_enum(doc["preset"], "preset",
                        std::array{Preset::adu_net, Preset::adu_net_plus, Preset::custom});
  NetworkConfig c = preset_config(preset == Preset::custom ? Preset::adu_net : preset);
  c.preset = preset;

  try {
    if (doc.contains("encoder_channels")) {
      c.encoder_channels = parse_channels<5>(doc["encoder_channels"], "encoder_channels");
      if (!doc.contains("adb_channels")) {
        const auto& e = c.encoder_channels;
        c.adb_channels = {e[2], e[1], e[0], std::max(1, e[0] / 2)};
      }
    }
    if (doc.contains("adb_channels")) c.adb_channels = parse_channels<4>(doc["adb_channels"], "adb_channels");
    if (doc.contains("window_size")) c.window_size = doc["window_size"].get<int>();
    if (doc.contains("num_heads")) c.num_heads = doc["num_heads"].get<int>();
    if (doc.contains("attention_mode"))
      c.attention_mode = parse_enum(doc["attention_mode"], "attention_mode",
                                    std::array{AttentionMode::none, AttentionMode::wmsa_only,
                                               AttentionMode::swmsa_only, AttentionMode::asymmetric});
    if (doc.contains("fusion_mode"))
      c.fusion_mode = parse_enum(doc["fusion_mode"], "fusion_mode",
                                 std::array{FusionMode::none, FusionMode::cff_only, FusionMode::gcff_only,
                                            FusionMode::asymmetric});
    if (doc.contains("decoder_mode"))
      c.decoder_mode = parse_enum(
          doc["decoder_mode"], "decoder_mode",
          std::array{DecoderMode::single, DecoderMode::dual_symmetric, DecoderMode::dual_asymmetric});
    if (doc.contains("loss_mode"))
      c.loss_mode = parse_enum(doc["loss_mode"], "loss_mode",
                               std::array{LossMode::ssim, LossMode::mse, LossMode::ssim_plus_mse});
    if (doc.contains("leaky_slope")) c.leaky_slope = doc["leaky_slope"].get<double>();
    if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

NetworkConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

nlohmann::json to_json(const NetworkConfig& c) {
  return nlohmann::json{{"preset", to_string(c.preset)},
                        {"encoder_channels", c.encoder_channels},
                        {"adb_channels", c.adb_channels},
                        {"window_size", c.window_size},
                        {"num_heads", c.num_heads},
                        {"attention_mode", to_string(c.attention_mode)},
                        {"fusion_mode", to_string(c.fusion_mode)},
                        {"decoder_mode", to_string(c.decoder_mode)},
                        {"loss_mode", to_string(c.loss_mode)},
                        {"leaky_slope", c.leaky_slope},
                        {"seed", c.seed}};
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t architecture_hash(const NetworkConfig& c) {
  nlohmann::json doc = to_json(c);
  doc.erase("preset");
  doc.erase("loss_mode");
  doc.erase("seed");
  const std::string text = doc.dump();
  return fnv1a64(text.data(), text.size());
}

}  // namespace adunet
