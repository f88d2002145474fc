// SPDX-License-Identifier: Apache-2.0
//
// Change Extraction: fuses a bi-temporal feature pair [L_V, D_V] x 2 into a
// single [L_V, D_V] feature map.
//
//   spatial enhance:  f_i += pos_embed; reshape to [D_V, S, S];
//                     x = concat(f1, f2) + broadcast(cos(f1, f2))
//   feature fusion:   F' = conv1(x) + convC(relu(convB(relu(convA(x)))))
//
// with S = sqrt(L_V) and patch index = row * S + col for every reshape.
#pragma once

#include <cstddef>
#include <cstdint>

#include "changecap/tensor.hpp"

namespace changecap {

/// Bi-temporal visual features. Both tensors are [L_V, D_V] with L_V a
/// perfect square.
struct FeaturePair {
  Tensor f1;
  Tensor f2;

  /// Validates shapes; throws InvalidGeometryError for a non-square L_V and
  /// ShapeError when f1 and f2 differ.
  static FeaturePair make(Tensor f1, Tensor f2);

  std::size_t patches() const { return f1.dim(0); }
  std::size_t width() const { return f1.dim(1); }
  std::size_t side() const;
};

/// sqrt(patches), or InvalidGeometryError when it is not an integer.
std::size_t grid_side(std::size_t patches);

/// [L, D] -> [D, S, S] and its inverse.
Tensor to_channel_grid(const Tensor &tokens);
Tensor from_channel_grid(const Tensor &grid);

struct CEParams {
  Tensor pos_embed;  // [L_V, D_V], shared by both frames
  Tensor conv1_w;    // [D_V, 2 D_V, 1, 1]
  Tensor conv1_b;
  Tensor conva_w;  // [D_V, 2 D_V, 1, 1]
  Tensor conva_b;
  Tensor convb_w;  // [D_V, D_V, 3, 3], padding 1
  Tensor convb_b;
  Tensor convc_w;  // [D_V, D_V, 1, 1]
  Tensor convc_b;

  /// Weights and positional table seeded-normal(sigma), biases zero.
  static CEParams init(std::size_t patches, std::size_t width, std::uint64_t seed,
                       double sigma = 0.02);
  static CEParams zeros(std::size_t patches, std::size_t width);

  std::size_t patches() const { return pos_embed.dim(0); }
  std::size_t width() const { return pos_embed.dim(1); }
  ParameterList named_parameters() const;
};

/// Steps (1)-(5) of spatial enhance; returns [2 D_V, S, S].
Tensor spatial_enhance(const FeaturePair &pair, const CEParams &params);

/// conv1(x) + convC(relu(convB(relu(convA(x))))); x [2 D_V, S, S] -> [D_V, S, S].
Tensor feature_fusion(const Tensor &x, const CEParams &params);

/// feature_fusion(spatial_enhance(pair)) reshaped to [L_V, D_V].
Tensor ce_forward(const FeaturePair &pair, const CEParams &params);

/// Ablation baseline: positional embedding, channel concatenation, then a
/// two-layer 1x1 conv stack 2 D_V -> hidden -> D_V. No similarity signal and
/// no spatial context.
struct ConcatFusionParams {
  Tensor pos_embed;  // [L_V, D_V]
  Tensor conv1_w;    // [hidden, 2 D_V, 1, 1]
  Tensor conv1_b;
  Tensor conv2_w;  // [D_V, hidden, 1, 1]
  Tensor conv2_b;

  static ConcatFusionParams init(std::size_t patches, std::size_t width, std::size_t hidden,
                                 std::uint64_t seed, double sigma = 0.02);

  std::size_t patches() const { return pos_embed.dim(0); }
  std::size_t width() const { return pos_embed.dim(1); }
  std::size_t hidden() const { return conv1_w.dim(0); }
  ParameterList named_parameters() const;
};

Tensor concat_fusion_forward(const FeaturePair &pair, const ConcatFusionParams &params);

std::size_t ce_parameter_count(std::size_t patches, std::size_t width) noexcept;
std::size_t concat_fusion_parameter_count(std::size_t patches, std::size_t width,
                                          std::size_t hidden) noexcept;
/// Hidden width whose parameter count is closest to the CE module's.
std::size_t matched_concat_hidden(std::size_t patches, std::size_t width) noexcept;

}  // namespace changecap
