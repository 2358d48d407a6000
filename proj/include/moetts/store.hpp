#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "moetts/model.hpp"

namespace moetts {

struct CheckpointMeta {
  int format_version = 1;
  std::string phase;
  std::uint64_t seed = 0;
  std::string payload_digest;
};

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointMeta meta;
};

// Single-file checkpoint: a JSON manifest (config, phase tag, parameter
// table with offsets, payload digest) followed by the little-endian raw
// parameter payload. Round trips are bitwise.
CheckpointMeta save_checkpoint(const Model& m, const std::string& path, const std::string& phase,
                               std::uint64_t seed);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace moetts
