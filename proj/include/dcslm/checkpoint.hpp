#pragma once

// Checkpoint container: "DCLM", u32 version, then records until EOF:
//   u32 name_length, name bytes, u32 ndim, ndim x u32 dims, f32 data.
// The model configuration is stored as scalar records named "config.*" so a
// checkpoint is self-describing.

#include "dcslm/model.hpp"

#include <filesystem>

namespace dcslm {

struct Checkpoint {
  ModelConfig config;
  ParamStore params;  // encoder plus any task heads
};

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamStore& params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Rebuilds a model from a checkpoint, keeping any extra (head) tensors.
DualChannelModel load_model(const std::filesystem::path& path);

}  // namespace dcslm
