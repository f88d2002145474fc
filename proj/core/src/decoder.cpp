// SPDX-License-Identifier: Apache-2.0
#include "changecap/decoder.hpp"

#include <array>
#include <cmath>

#include "changecap/error.hpp"
#include "changecap/ops.hpp"
#include "changecap/rng.hpp"
#include "changecap/vocab.hpp"

namespace changecap {

DecoderParams DecoderParams::init(const DecoderConfig &config, std::uint64_t seed, double sigma) {
  if (config.vocab_size < Vocab::kReserved) throw ConfigError("decoder vocabulary too small");
  if (config.heads == 0 || config.width % config.heads != 0) {
    throw ConfigError("decoder width " + std::to_string(config.width) +
                      " is not divisible by head count " + std::to_string(config.heads));
  }
  if (config.max_len == 0) throw ConfigError("decoder max_len must be positive");
  const std::size_t d = config.width;
  std::uint64_t salt = 0;
  auto normal = [&](Shape shape) {
    return create(shape, Init::normal(sigma, mix_seed(seed, ++salt)), true);
  };
  auto ones = [&] { return create({d}, Init::constant(1.0), true); };
  auto zeros = [](std::size_t n) { return create({n}, Init::zeros(), true); };

  DecoderParams p;
  p.config = config;
  p.token_embed = normal({config.vocab_size, d});
  p.pos_embed = normal({config.max_len, d});
  for (std::size_t b = 0; b < config.blocks; ++b) {
    DecoderBlock blk;
    blk.ln1_gain = ones();
    blk.ln1_bias = zeros(d);
    blk.wq = normal({d, d});
    blk.wk = normal({d, d});
    blk.wv = normal({d, d});
    blk.wo = normal({d, d});
    blk.ln2_gain = ones();
    blk.ln2_bias = zeros(d);
    blk.mlp_w1 = normal({d, 4 * d});
    blk.mlp_b1 = zeros(4 * d);
    blk.mlp_w2 = normal({4 * d, d});
    blk.mlp_b2 = zeros(d);
    p.blocks.push_back(std::move(blk));
  }
  p.lnf_gain = ones();
  p.lnf_bias = zeros(d);
  p.head = normal({d, config.vocab_size});
  return p;
}

ParameterList DecoderParams::named_parameters() const {
  ParameterList out{{"token_embed", token_embed}, {"pos_embed", pos_embed}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const DecoderBlock &blk = blocks[b];
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    out.push_back({prefix + "ln1.gain", blk.ln1_gain});
    out.push_back({prefix + "ln1.bias", blk.ln1_bias});
    out.push_back({prefix + "attn.wq", blk.wq});
    out.push_back({prefix + "attn.wk", blk.wk});
    out.push_back({prefix + "attn.wv", blk.wv});
    out.push_back({prefix + "attn.wo", blk.wo});
    out.push_back({prefix + "ln2.gain", blk.ln2_gain});
    out.push_back({prefix + "ln2.bias", blk.ln2_bias});
    out.push_back({prefix + "mlp.w1", blk.mlp_w1});
    out.push_back({prefix + "mlp.b1", blk.mlp_b1});
    out.push_back({prefix + "mlp.w2", blk.mlp_w2});
    out.push_back({prefix + "mlp.b2", blk.mlp_b2});
  }
  out.push_back({"lnf.gain", lnf_gain});
  out.push_back({"lnf.bias", lnf_bias});
  out.push_back({"head", head});
  return out;
}

namespace {

Tensor self_attention(const Tensor &h, const DecoderBlock &blk, std::size_t heads) {
  const Tensor q = matmul(h, blk.wq);
  const Tensor k = matmul(h, blk.wk);
  const Tensor v = matmul(h, blk.wv);
  const std::size_t head_width = h.dim(1) / heads;
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const std::size_t start = i * head_width;
    outputs.push_back(causal_attention(narrow(q, 1, start, head_width),
                                       narrow(k, 1, start, head_width),
                                       narrow(v, 1, start, head_width)));
  }
  return matmul(concat(outputs, 1), blk.wo);
}

// Final layer-normed hidden states [rows, D_L].
Tensor decoder_hidden(const Tensor &visual, std::span<const std::int64_t> ids,
                      const DecoderParams &params) {
  const DecoderConfig &cfg = params.config;
  Tensor x;
  if (visual.defined()) {
    if (visual.rank() != 2 || visual.dim(1) != cfg.width) {
      throw ShapeError("visual tokens " + shape_to_string(visual.shape()) +
                       " do not match decoder width " + std::to_string(cfg.width));
    }
    x = visual;
    if (!ids.empty()) {
      const std::array<Tensor, 2> parts{visual, embedding(params.token_embed, ids)};
      x = concat(parts, 0);
    }
  } else {
    x = embedding(params.token_embed, ids);
  }
  const std::size_t rows = x.dim(0);
  if (rows > cfg.max_len) {
    throw LengthError("sequence of " + std::to_string(rows) + " positions exceeds max_len " +
                      std::to_string(cfg.max_len));
  }
  x = add(x, narrow(params.pos_embed, 0, 0, rows));
  for (const DecoderBlock &blk : params.blocks) {
    x = add(x, self_attention(layer_norm(x, blk.ln1_gain, blk.ln1_bias), blk, cfg.heads));
    const Tensor h = layer_norm(x, blk.ln2_gain, blk.ln2_bias);
    x = add(x, linear(gelu(linear(h, blk.mlp_w1, blk.mlp_b1)), blk.mlp_w2, blk.mlp_b2));
  }
  return layer_norm(x, params.lnf_gain, params.lnf_bias);
}

}  // namespace

Tensor decoder_logits(const Tensor &visual, std::span<const std::int64_t> ids,
                      const DecoderParams &params) {
  return matmul(decoder_hidden(visual, ids, params), params.head);
}

Tensor forward_loss(const ProjectedEmbedding &visual, std::span<const std::int64_t> prompt_ids,
                    std::span<const std::int64_t> target_ids, const DecoderParams &params) {
  if (target_ids.empty()) throw EmptyLossError("empty target sequence");
  const std::size_t visual_rows = visual.tokens.defined() ? visual.count() : 0;
  const std::size_t total = visual_rows + 1 + prompt_ids.size() + target_ids.size() + 1;
  if (total > params.config.max_len) {
    throw LengthError("sequence of " + std::to_string(total) + " tokens exceeds max_len " +
                      std::to_string(params.config.max_len));
  }
  for (std::int64_t id : target_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= params.config.vocab_size) {
      throw InvalidTargetError("target id " + std::to_string(id) + " outside vocabulary");
    }
  }

  std::vector<std::int64_t> ids;
  ids.reserve(1 + prompt_ids.size() + target_ids.size());
  ids.push_back(Vocab::kBos);
  ids.insert(ids.end(), prompt_ids.begin(), prompt_ids.end());
  ids.insert(ids.end(), target_ids.begin(), target_ids.end());

  // Rows from the last prompt token onward predict target..., <eos>; earlier
  // rows are masked, so only those rows are sent through the output head.
  const Tensor hidden = decoder_hidden(visual.tokens, ids, params);
  const std::size_t first = visual_rows + prompt_ids.size();
  const Tensor logits = matmul(narrow(hidden, 0, first, target_ids.size() + 1), params.head);
  std::vector<std::int64_t> labels(target_ids.begin(), target_ids.end());
  labels.push_back(Vocab::kEos);
  return cross_entropy(logits, labels);
}

std::vector<std::int64_t> generate_greedy(const ProjectedEmbedding &visual,
                                          std::span<const std::int64_t> prompt_ids,
                                          const DecoderParams &params, std::size_t max_new) {
  NoGradGuard no_grad;
  const std::size_t visual_rows = visual.tokens.defined() ? visual.count() : 0;
  std::vector<std::int64_t> ids;
  ids.push_back(Vocab::kBos);
  ids.insert(ids.end(), prompt_ids.begin(), prompt_ids.end());
  std::vector<std::int64_t> generated;
  while (generated.size() < max_new && visual_rows + ids.size() < params.config.max_len) {
    const Tensor hidden = decoder_hidden(visual.tokens, ids, params);
    const Tensor logits = matmul(narrow(hidden, 0, hidden.dim(0) - 1, 1), params.head);
    const auto row = logits.data();
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    const auto next = static_cast<std::int64_t>(best);
    if (next == Vocab::kEos) break;
    generated.push_back(next);
    ids.push_back(next);
  }
  return generated;
}

}  // namespace changecap
