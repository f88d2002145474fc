// SPDX-License-Identifier: Apache-2.0
//
// Tiny pre-norm causal transformer used in place of the full language model.
// It consumes [visual tokens; word embeddings] and predicts the response.
//
// Sequence layout for training and generation:
//
//   [E_I (L_d rows)] [<bos> prompt...] [target... <eos>]
//
// Position p predicts the token at p + 1; only predictions of target tokens
// and the closing <eos> contribute to the loss.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "changecap/projector.hpp"
#include "changecap/tensor.hpp"

namespace changecap {

struct DecoderConfig {
  std::size_t vocab_size = 0;
  std::size_t width = 32;  // D_L
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t max_len = 256;
};

struct DecoderBlock {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;  // [D_L, D_L]
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_w1, mlp_b1;  // [D_L, 4 D_L]
  Tensor mlp_w2, mlp_b2;  // [4 D_L, D_L]
};

struct DecoderParams {
  DecoderConfig config;
  Tensor token_embed;  // [V, D_L], produces E_L
  Tensor pos_embed;    // [max_len, D_L]
  std::vector<DecoderBlock> blocks;
  Tensor lnf_gain, lnf_bias;
  Tensor head;  // [D_L, V]

  /// Matrices seeded-normal(sigma), layer-norm gains 1, biases 0.
  static DecoderParams init(const DecoderConfig &config, std::uint64_t seed, double sigma = 0.02);

  ParameterList named_parameters() const;
};

/// Logits [rows, V] for the sequence [visual; token_embed(ids)]. `visual`
/// may be undefined for a text-only sequence.
Tensor decoder_logits(const Tensor &visual, std::span<const std::int64_t> ids,
                      const DecoderParams &params);

/// Mean cross-entropy over the target tokens and closing <eos>.
/// Throws LengthError when the full sequence exceeds config.max_len,
/// InvalidTargetError for ids outside the vocabulary and EmptyLossError for an
/// empty target.
Tensor forward_loss(const ProjectedEmbedding &visual, std::span<const std::int64_t> prompt_ids,
                    std::span<const std::int64_t> target_ids, const DecoderParams &params);

/// Argmax decoding until <eos> or `max_new` tokens (ties go to the lower id).
/// The returned ids exclude <eos>. Generation also stops when the sequence
/// reaches config.max_len.
std::vector<std::int64_t> generate_greedy(const ProjectedEmbedding &visual,
                                          std::span<const std::int64_t> prompt_ids,
                                          const DecoderParams &params, std::size_t max_new = 32);

}  // namespace changecap
