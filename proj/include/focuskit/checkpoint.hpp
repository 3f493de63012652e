#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "focuskit/nn.hpp"
#include "json.hpp"

namespace focuskit {

// FNV-1a 64-bit, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

// A checkpoint is a pair of files: `<stem>.ckpt`, a tensor file holding
// every parameter flattened in order, and `<stem>.json`, the topology
// sidecar {"topology": ..., "params": [{"name","shape","offset"}],
// "checksum": fnv1a of the .ckpt bytes}.
struct CheckpointPaths {
  std::filesystem::path weights;
  std::filesystem::path topology;

  static CheckpointPaths in(const std::filesystem::path& dir,
                            const std::string& stem);
};

// Returns the checksum of the written weights file.
std::string save_checkpoint(const CheckpointPaths& paths,
                            const nlohmann::json& topology,
                            std::span<const nn::Param* const> params);

struct LoadedCheckpoint {
  nlohmann::json topology;
  std::string checksum;
};

// Reads the sidecar, returning the topology without touching weights.
nlohmann::json read_topology(const CheckpointPaths& paths);

// Fills `params` (matched by name and shape) from disk. Throws
// CheckpointError on any missing file, checksum or shape mismatch.
LoadedCheckpoint load_checkpoint(const CheckpointPaths& paths,
                                 std::span<nn::Param* const> params);

}  // namespace focuskit
