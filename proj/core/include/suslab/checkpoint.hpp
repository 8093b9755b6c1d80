#pragma once

#include <filesystem>

#include "suslab/toylm.hpp"

namespace suslab::toylm {

inline constexpr int kCheckpointVersion = 1;

/// Writes params as a "checkpoint" tensor container (see tensor_file.hpp).
/// The header carries version, d_model, n_layers, n_heads, max_len,
/// vocab_size and mlp_mult next to the tensor manifest.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);

/// Bit-exact inverse of save_checkpoint. When `expected` is given the stored
/// hyperparameters must equal it; otherwise DimensionMismatch names both values.
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace suslab::toylm
