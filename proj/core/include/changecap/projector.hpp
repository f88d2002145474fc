// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "changecap/tensor.hpp"

namespace changecap {

/// Visual tokens in word-embedding space: [L_V / 4, D_L].
struct ProjectedEmbedding {
  Tensor tokens;

  std::size_t count() const { return tokens.dim(0); }
  std::size_t width() const { return tokens.dim(1); }
};

struct ProjectorParams {
  Tensor w1;  // [4 D_V, D_h]
  Tensor b1;  // [D_h]
  Tensor w2;  // [D_h, D_L]
  Tensor b2;  // [D_L]

  static ProjectorParams init(std::size_t visual_width, std::size_t hidden,
                              std::size_t embed_width, std::uint64_t seed, double sigma = 0.02);
  static ProjectorParams zeros(std::size_t visual_width, std::size_t hidden,
                               std::size_t embed_width);

  std::size_t visual_width() const { return w1.dim(0) / 4; }
  std::size_t embed_width() const { return w2.dim(1); }
  ParameterList named_parameters() const;
};

/// Merges every non-overlapping 2x2 block of the S x S patch grid into one
/// row holding the cells top-left, top-right, bottom-left, bottom-right.
/// Blocks are emitted in row-major order. [L_V, D_V] -> [L_V/4, 4 D_V].
/// Throws InvalidGeometryError when S is odd or L_V is not a square.
Tensor space_to_depth_2x2(const Tensor &x);

/// Exact inverse of space_to_depth_2x2: [L_V/4, 4 D_V] -> [L_V, D_V].
Tensor depth_to_space_2x2(const Tensor &x);

/// linear2(gelu(linear1(space_to_depth_2x2(x)))).
ProjectedEmbedding project(const Tensor &x, const ProjectorParams &params);

}  // namespace changecap
