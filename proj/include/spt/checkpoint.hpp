#pragma once

// Versioned binary checkpoint.
//
//   "SPTCKPT\0"  u32 version
//   u64 manifest length, manifest text (key = value lines, one `stage` line per StageConfig)
//   u32 tensor count, then per tensor:
//     u32 name length, name, u32 rank, u64 dims[rank], f64 values (row-major)
//
// All integers and doubles are little-endian.

#include <filesystem>
#include <string>

#include "spt/model.hpp"

namespace spt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string config_manifest(const SPTConfig& cfg);
SPTConfig parse_config_manifest(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const SpikingPointTransformer& model);

// Rebuilds the model described by the manifest and restores every tensor.
// Missing, truncated or inconsistent files raise IoError.
SpikingPointTransformer load_checkpoint(const std::filesystem::path& path);

}  // namespace spt
