#pragma once

#include <filesystem>

#include "ilgnet/error.hpp"
#include "ilgnet/network.hpp"
#include "ilgnet/trainer.hpp"

namespace ilgnet {

// Layout: "ILGC", u32 version, u64 manifest length, text manifest
// (variant descriptor, metadata, config echo, one `blob` line per tensor with
// name, kind, shape, dtype and byte offset), then the raw little-endian f32
// payload: parameters in registry order, BN running statistics, channel means.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

void save_checkpoint(const Network& net, const std::filesystem::path& path, const TrainConfig* config = nullptr);

// Rebuilds the stored variant and restores every tensor.
Network load_checkpoint(const std::filesystem::path& path);

// Restores into an existing graph. Rejects a different variant kind, and
// names the first parameter whose shape differs.
void load_checkpoint_into(Network& net, const std::filesystem::path& path);

}  // namespace ilgnet
