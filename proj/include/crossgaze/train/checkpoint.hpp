#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "crossgaze/train/training.hpp"

namespace crossgaze::train {

// GZCK container, little-endian:
//   "GZCK" | u16 version | u32 entry count
//   entries sorted by name: u16 name length | name | GZT1 tensor
//   u32 metadata length | metadata (key=value lines)
// Entry names are "param:<path>", "buffer:<path>", "adam_m:<path>", "adam_v:<path>".

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  model::CrossGazeConfig config;
  /// Completed epochs; the next epoch's batch order is derived from (train_seed, epoch).
  std::uint64_t epoch = 0;
  std::uint64_t train_seed = 0;
  nn::ParamStore<float> params;
  AdamState<float> adam;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);

/// Throws FormatError (with the byte offset) on bad magic, version, or
/// truncation, and ShapeError naming the path when a tensor does not fit the
/// embedded config.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// As parse_checkpoint; a missing or unreadable file is a DataError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crossgaze::train
