#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "adunet/network.hpp"

namespace adunet {

/// Binary checkpoint layout (little-endian):
///   "ADUNETCK" | u32 version | u32 manifest bytes | manifest JSON
///   | u64 body bytes | u64 FNV-1a of body | body
/// The manifest records the expanded network config, its architecture hash,
/// the seed, the epoch and every tensor (name, kind, shape, byte offset).
/// The body holds float32 tensor payloads followed by an opaque optimizer
/// blob.
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointContents {
  NetworkConfig config;
  std::uint64_t config_hash = 0;
  int epoch = 0;
  std::vector<std::uint8_t> optimizer;
  nlohmann::json extra;
};

/// Writes to a temporary sibling first and renames it into place. Throws
/// CheckpointError when the file cannot be written completely.
void save_checkpoint(const std::filesystem::path& path, const AduNet<float>& net, int epoch,
                     const std::vector<std::uint8_t>& optimizer = {}, const nlohmann::json& extra = {});

/// Reads and verifies the header, checksum and manifest. Throws
/// CheckpointError on a corrupt or truncated file.
CheckpointContents read_checkpoint_header(const std::filesystem::path& path);

/// Restores parameters and buffers into `net`. The checkpoint's
/// architecture hash must equal the network's.
CheckpointContents load_checkpoint(const std::filesystem::path& path, AduNet<float>& net);

/// Builds a network from the embedded config and restores it.
AduNet<float> load_network(const std::filesystem::path& path, CheckpointContents* contents = nullptr);

}  // namespace adunet
