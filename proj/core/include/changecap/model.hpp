// SPDX-License-Identifier: Apache-2.0
//
// The full captioning model: fusion (Change Extraction, or the concatenation
// baseline) -> projector -> decoder. Bi-temporal samples go through fusion;
// single images go straight to the projector.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "changecap/change_extraction.hpp"
#include "changecap/dataset.hpp"
#include "changecap/decoder.hpp"
#include "changecap/projector.hpp"
#include "changecap/vocab.hpp"

namespace changecap {

enum class FusionKind : std::uint8_t { change_extraction, concat };

std::string_view fusion_kind_name(FusionKind kind) noexcept;
FusionKind parse_fusion_kind(std::string_view name);

struct ModelConfig {
  std::size_t patches = 16;     // L_V
  std::size_t visual_width = 8; // D_V
  std::size_t embed_width = 32; // D_L
  std::size_t projector_hidden = 0;  // D_h; 0 means embed_width
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t max_len = 256;
  FusionKind fusion = FusionKind::change_extraction;
  std::size_t concat_hidden = 0;  // 0 means matched to the CE parameter count
  double init_sigma = 0.02;
  std::uint64_t seed = 0;
  std::string task_prompt{kDefaultChangePrompt};
};

/// Module names used by stage plans and checkpoints. "change-extraction"
/// names the fusion slot, whichever fusion kind fills it.
inline constexpr std::array<std::string_view, 3> kModuleNames = {"change-extraction", "projector",
                                                                 "decoder"};

class Model {
 public:
  static Model init(ModelConfig config, Vocab vocab);

  const ModelConfig &config() const noexcept { return config_; }
  const Vocab &vocab() const noexcept { return vocab_; }

  CEParams &ce() { return ce_; }
  const CEParams &ce() const { return ce_; }
  ConcatFusionParams &concat() { return concat_; }
  ProjectorParams &projector() { return projector_; }
  const ProjectorParams &projector() const { return projector_; }
  DecoderParams &decoder() { return decoder_; }
  const DecoderParams &decoder() const { return decoder_; }

  /// Parameters of one module; throws ConfigError for an unknown name.
  ParameterList module_parameters(std::string_view module) const;
  ParameterList all_parameters() const;

  /// Fused (or single-image) features projected to visual tokens.
  ProjectedEmbedding encode(const Tensor &f1, const Tensor &f2) const;
  Tensor fuse(const FeaturePair &pair) const;

  Tensor sample_loss(const Sample &sample) const;
  /// Greedy caption for the sample's features under `prompt`.
  std::string generate(const Sample &sample, std::string_view prompt,
                       std::size_t max_new = 32) const;

 private:
  ModelConfig config_;
  Vocab vocab_;
  CEParams ce_;
  ConcatFusionParams concat_;
  ProjectorParams projector_;
  DecoderParams decoder_;
};

}  // namespace changecap
