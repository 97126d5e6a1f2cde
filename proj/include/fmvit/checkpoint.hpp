#pragma once

#include <filesystem>
#include <string>

#include "fmvit/binary_io.hpp"
#include "fmvit/model.hpp"

namespace fmvit {

// Checkpoint layout:
//   "FMVT1 <scalar parameter count>\n"
//   repeated per tensor, in ModelParams::named_tensors order:
//     u32 name length, name bytes, u32 rank, rank x u32 extents,
//     numel x f64 payload
// All integers and floats little-endian.

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const ModelConfig& config);

/// Builds parameters for `config` and fills them from `path`. Every tensor
/// the config expects must be present with a matching shape.
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

/// Path of the model-config sidecar written next to a checkpoint.
std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

}  // namespace fmvit
