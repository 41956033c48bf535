#pragma once

#include <filesystem>

#include "segrl/config.hpp"
#include "segrl/policy.hpp"

namespace segrl {

// Single-file container: magic, manifest length, manifest JSON (entry names,
// shapes, byte offsets, hashes, config snapshot, step counter), then one
// contiguous little-endian f32 payload. Round trips are bit-exact.
void save_checkpoint(const ModelParams& params, long step,
                     const RunConfig& config,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  RunConfig config;
  ModelParams params;
  long step = 0;
};

// Rebuilds the parameter tree from the embedded config and fills it from the
// payload. Corruption (bad magic, hash mismatch, truncation) throws
// CheckpointError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Fills an existing tree; names and shapes must match exactly. Returns the
// stored step counter. The first offending entry is named on mismatch.
long load_checkpoint_into(ModelParams& params,
                          const std::filesystem::path& path);

}  // namespace segrl
