// SPDX-License-Identifier: Apache-2.0
//
// Parameter checkpoints: <dir>/manifest.json lists names, shapes and offsets;
// <dir>/params.f32 holds the values as one little-endian float32 array in
// manifest order.
#pragma once

#include "latentkf/autodiff/tensor.hpp"

#include <json.hpp>

#include <filesystem>

namespace latentkf::ad {

inline constexpr int kCheckpointFormatVersion = 1;

/// Writes every parameter, trainable or not. `metadata` is stored verbatim under "metadata".
void save_checkpoint(const ParamSet<float>& params, const std::filesystem::path& dir,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Reads a checkpoint into a fresh set, returning its metadata through `metadata` when non-null.
ParamSet<float> load_checkpoint(const std::filesystem::path& dir, nlohmann::json* metadata = nullptr);

/// Overwrites `params` from a checkpoint; names and shapes must match exactly.
void load_checkpoint_into(ParamSet<float>& params, const std::filesystem::path& dir,
                          nlohmann::json* metadata = nullptr);

}  // namespace latentkf::ad
