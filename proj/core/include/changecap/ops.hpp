// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op validates shapes and throws ShapeError
// on mismatch. Scalars are shape [1].
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "changecap/tensor.hpp"

namespace changecap {

inline constexpr std::int64_t kIgnoreIndex = -100;

// -- elementwise -------------------------------------------------------------

/// x + y. `y` may equal x's shape, or (after dropping leading 1-dims) match
/// x's trailing dims, in which case it is tiled along the leading axes:
/// [1,S,S] onto [C,S,S] and [N] onto [T,N] both qualify.
Tensor add(const Tensor &x, const Tensor &y);
Tensor sub(const Tensor &x, const Tensor &y);
/// Same-shape product.
Tensor mul(const Tensor &x, const Tensor &y);
Tensor scale(const Tensor &x, double c);
/// Subgradient at 0 is 0.
Tensor relu(const Tensor &x);
/// Exact form 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor &x);

// -- reductions --------------------------------------------------------------

Tensor sum(const Tensor &x);
Tensor mean(const Tensor &x);
Tensor sum_squares(const Tensor &x);

// -- layout ------------------------------------------------------------------

Tensor reshape(const Tensor &x, const Shape &shape);
Tensor transpose(const Tensor &x);  // rank 2 only
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor narrow(const Tensor &x, std::size_t axis, std::size_t start, std::size_t length);
/// out[i] = x[source[i]] with out shaped `shape`. Backward scatters.
Tensor gather_elements(const Tensor &x, const Shape &shape,
                       std::vector<std::size_t> source);
/// Rows of `table` [V, D] selected by `ids` -> [ids.size(), D].
Tensor embedding(const Tensor &table, std::span<const std::int64_t> ids);

// -- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor &a, const Tensor &b);
/// x [T, in] * w [in, out] + b [out].
Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b);

/// Stride-1 cross-correlation with zero padding and per-channel bias.
/// x [C_in,H,W], w [C_out,C_in,k,k] (k odd), b [C_out].
Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &b, std::size_t padding);

Tensor layer_norm(const Tensor &x, const Tensor &gain, const Tensor &bias, double eps = 1e-5);

/// Row-wise softmax over [T, T] scores where row t only sees columns <= t.
/// Masked entries are exactly 0.
Tensor causal_softmax(const Tensor &scores);
/// softmax(q k^T / sqrt(d_h)) v under the causal mask. q, k, v: [T, d_h].
Tensor causal_attention(const Tensor &q, const Tensor &k, const Tensor &v);
/// The [T, T] weight matrix used by causal_attention.
Tensor causal_attention_weights(const Tensor &q, const Tensor &k);

/// Mean of -log softmax(logits[t])[targets[t]] over positions whose target
/// is not `ignore_index`. Throws InvalidTargetError for targets outside
/// [0, V) and EmptyLossError when every position is ignored.
Tensor cross_entropy(const Tensor &logits, std::span<const std::int64_t> targets,
                     std::int64_t ignore_index = kIgnoreIndex);

/// Per-location cosine similarity over the channel axis.
/// a, b [C,H,W] -> [1,H,W]; dot / (|a| |b| + eps).
Tensor cosine_similarity_map(const Tensor &a, const Tensor &b, double eps = 1e-8);

}  // namespace changecap
