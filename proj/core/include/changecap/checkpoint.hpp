// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints are directories: one BTF file per parameter tensor plus
// index.json,
//
//   {"format": "changecap-checkpoint", "version": 1,
//    "config": {...ModelConfig...}, "vocab": ["<pad>", ...],
//    "modules": {"change-extraction": {"pos_embed": "change-extraction.pos_embed.btf", ...},
//                "projector": {...}, "decoder": {...}}}
#pragma once

#include <filesystem>
#include <string>

#include "changecap/model.hpp"

namespace changecap {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char *kCheckpointFormat = "changecap-checkpoint";

/// Creates `dir` if needed and overwrites any files of the same names.
void save_checkpoint(const Model &model, const std::filesystem::path &dir);

/// Throws IncompatibleError on a format or version mismatch, a missing module
/// section (the message names the module), or a missing or mis-shaped tensor.
Model load_checkpoint(const std::filesystem::path &dir);

/// The config as it appears under "config" in index.json.
std::string model_config_json(const ModelConfig &config);

}  // namespace changecap
