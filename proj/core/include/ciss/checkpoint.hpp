#pragma once

#include <filesystem>

#include "ciss/model.hpp"

namespace ciss {

inline constexpr int kCheckpointFormatVersion = 1;

// Writes <stem>.json (format version, step, class ids, backbone widths and
// one {name, shape, offset, count} record per tensor) and <stem>.bin (all
// parameters as little-endian IEEE-754 doubles, concatenated in manifest
// order).
void save_checkpoint(const ModelState& model,
                     const std::filesystem::path& stem);

// Inverse of save_checkpoint. Loaded tensors require grad.
ModelState load_checkpoint(const std::filesystem::path& stem);

}  // namespace ciss
