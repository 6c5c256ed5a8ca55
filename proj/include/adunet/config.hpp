#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace adunet {

enum class Preset { adu_net, adu_net_plus, custom };
enum class AttentionMode { none, wmsa_only, swmsa_only, asymmetric };
enum class FusionMode { none, cff_only, gcff_only, asymmetric };
enum class DecoderMode { single, dual_symmetric, dual_asymmetric };
enum class LossMode { ssim, mse, ssim_plus_mse };

/// Every architectural hyperparameter of the network, plus the loss used to
/// train it and the seed that fixes parameter initialisation.
///
/// `encoder_channels[i]` is the width of encoder stage i (Conv_0..Conv_4).
/// `adb_channels[j]` is the output width of decoder block j; the first three
/// must equal the encoder skip they are fused with in the next block.
struct NetworkConfig {
  Preset preset = Preset::adu_net;
  std::array<int, 5> encoder_channels{32, 64, 128, 256, 256};
  std::array<int, 4> adb_channels{128, 64, 32, 16};
  int window_size = 8;
  int num_heads = 4;
  AttentionMode attention_mode = AttentionMode::asymmetric;
  FusionMode fusion_mode = FusionMode::asymmetric;
  DecoderMode decoder_mode = DecoderMode::dual_asymmetric;
  LossMode loss_mode = LossMode::ssim;
  double leaky_slope = 0.01;
  std::uint64_t seed = 0;

  bool operator==(const NetworkConfig&) const = default;
};

NetworkConfig preset_config(Preset preset);

/// The desk-scale network used by the smoke experiments: encoder widths
/// [8,16,32,64,64], everything else at its default.
NetworkConfig tiny_config();

/// Throws ConfigError naming the first violated field.
void validate(const NetworkConfig& config);

/// Parses a config document, fills every field the preset implies and
/// validates the result. Unknown keys are rejected; a "train" section is
/// accepted and left for the trainer.
NetworkConfig config_from_json(const nlohmann::json& doc);
NetworkConfig load_config(const std::filesystem::path& path);

/// Fully expanded document; config_from_json(to_json(c)) == c.
nlohmann::json to_json(const NetworkConfig& config);

/// Fingerprint of the fields that determine parameter shapes and the
/// forward graph (not the loss or the seed).
std::uint64_t architecture_hash(const NetworkConfig& config);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_string(Preset v);
std::string to_string(AttentionMode v);
std::string to_string(FusionMode v);
std::string to_string(DecoderMode v);
std::string to_string(LossMode v);

}  // namespace adunet
