// SPDX-License-Identifier: Apache-2.0
#include "changecap/model.hpp"

#include "changecap/error.hpp"
#include "changecap/rng.hpp"

namespace changecap {

std::string_view fusion_kind_name(FusionKind kind) noexcept {
  return kind == FusionKind::concat ? "concat" : "change-extraction";
}

FusionKind parse_fusion_kind(std::string_view name) {
  if (name == "change-extraction" || name == "ce") return FusionKind::change_extraction;
  if (name == "concat") return FusionKind::concat;
  throw ConfigError("unknown fusion kind '" + std::string(name) + "'");
}

Model Model::init(ModelConfig config, Vocab vocab) {
  if (config.projector_hidden == 0) config.projector_hidden = config.embed_width;
  if (config.fusion == FusionKind::concat && config.concat_hidden == 0) {
    config.concat_hidden = matched_concat_hidden(config.patches, config.visual_width);
  }
  const double sigma = config.init_sigma;
  Model m;
  m.config_ = config;
  m.vocab_ = std::move(vocab);
  if (config.fusion == FusionKind::change_extraction) {
    m.ce_ = CEParams::init(config.patches, config.visual_width, mix_seed(config.seed, 11), sigma);
  } else {
    m.concat_ = ConcatFusionParams::init(config.patches, config.visual_width, config.concat_hidden,
                                         mix_seed(config.seed, 12), sigma);
  }
  m.projector_ = ProjectorParams::init(config.visual_width, config.projector_hidden,
                                       config.embed_width, mix_seed(config.seed, 13), sigma);
  DecoderConfig dc;
  dc.vocab_size = m.vocab_.size();
  dc.width = config.embed_width;
  dc.heads = config.heads;
  dc.blocks = config.blocks;
  dc.max_len = config.max_len;
  m.decoder_ = DecoderParams::init(dc, mix_seed(config.seed, 14), sigma);
  return m;
}

ParameterList Model::module_parameters(std::string_view module) const {
  if (module == "change-extraction") {
    return config_.fusion == FusionKind::change_extraction ? ce_.named_parameters()
                                                           : concat_.named_parameters();
  }
  if (module == "projector") return projector_.named_parameters();
  if (module == "decoder") return decoder_.named_parameters();
  throw ConfigError("unknown module '" + std::string(module) + "'");
}

ParameterList Model::all_parameters() const {
  ParameterList out;
  for (std::string_view name : kModuleNames) {
    for (NamedTensor &p : module_parameters(name)) {
      p.name = std::string(name) + "." + p.name;
      out.push_back(std::move(p));
    }
  }
  return out;
}

Tensor Model::fuse(const FeaturePair &pair) const {
  return config_.fusion == FusionKind::change_extraction ? ce_forward(pair, ce_)
                                                         : concat_fusion_forward(pair, concat_);
}

ProjectedEmbedding Model::encode(const Tensor &f1, const Tensor &f2) const {
  if (!f2.defined()) return project(f1, projector_);
  return project(fuse(FeaturePair::make(f1, f2)), projector_);
}

Tensor Model::sample_loss(const Sample &sample) const {
  const ProjectedEmbedding visual = encode(sample.f1, sample.f2);
  const auto prompt = vocab_.encode(sample.prompt);
  const auto target = vocab_.encode(sample.target);
  return forward_loss(visual, prompt, target, decoder_);
}

std::string Model::generate(const Sample &sample, std::string_view prompt,
                            std::size_t max_new) const {
  NoGradGuard no_grad;
  const ProjectedEmbedding visual = encode(sample.f1, sample.f2);
  const auto ids = generate_greedy(visual, vocab_.encode(prompt), decoder_, max_new);
  return vocab_.decode(ids);
}

}  // namespace changecap
