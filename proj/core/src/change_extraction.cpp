// SPDX-License-Identifier: Apache-2.0
#include "changecap/change_extraction.hpp"

#include <array>
#include <cmath>

#include "changecap/error.hpp"
#include "changecap/ops.hpp"
#include "changecap/rng.hpp"

namespace changecap {

std::size_t grid_side(std::size_t patches) {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patches))));
  if (patches == 0 || side * side != patches) {
    throw InvalidGeometryError("patch count " + std::to_string(patches) +
                               " is not a perfect square");
  }
  return side;
}

FeaturePair FeaturePair::make(Tensor f1, Tensor f2) {
  if (f1.rank() != 2) {
    throw ShapeError("feature tensors must be [L_V, D_V], got " + shape_to_string(f1.shape()));
  }
  if (f1.shape() != f2.shape()) {
    throw ShapeError("f1 " + shape_to_string(f1.shape()) + " and f2 " +
                     shape_to_string(f2.shape()) + " differ");
  }
  grid_side(f1.dim(0));
  return {std::move(f1), std::move(f2)};
}

std::size_t FeaturePair::side() const { return grid_side(patches()); }

Tensor to_channel_grid(const Tensor &tokens) {
  if (tokens.rank() != 2) throw ShapeError("to_channel_grid: expected [L, D]");
  const std::size_t side = grid_side(tokens.dim(0));
  return reshape(transpose(tokens), {tokens.dim(1), side, side});
}

Tensor from_channel_grid(const Tensor &grid) {
  if (grid.rank() != 3) throw ShapeError("from_channel_grid: expected [D, S, S]");
  return transpose(reshape(grid, {grid.dim(0), grid.dim(1) * grid.dim(2)}));
}

CEParams CEParams::init(std::size_t patches, std::size_t width, std::uint64_t seed,
                        double sigma) {
  grid_side(patches);
  const std::size_t d = width;
  auto normal = [&](Shape shape, std::uint64_t salt) {
    return create(shape, Init::normal(sigma, mix_seed(seed, salt)), true);
  };
  auto zero = [](std::size_t n) { return create({n}, Init::zeros(), true); };
  return {normal({patches, d}, 1),      normal({d, 2 * d, 1, 1}, 2), zero(d),
          normal({d, 2 * d, 1, 1}, 3), zero(d),                     normal({d, d, 3, 3}, 4),
          zero(d),                      normal({d, d, 1, 1}, 5),     zero(d)};
}

CEParams CEParams::zeros(std::size_t patches, std::size_t width) {
  grid_side(patches);
  const std::size_t d = width;
  auto z = [](Shape shape) { return create(shape, Init::zeros(), true); };
  return {z({patches, d}), z({d, 2 * d, 1, 1}), z({d}), z({d, 2 * d, 1, 1}), z({d}),
          z({d, d, 3, 3}), z({d}),              z({d, d, 1, 1}), z({d})};
}

ParameterList CEParams::named_parameters() const {
  return {{"pos_embed", pos_embed}, {"conv1.weight", conv1_w}, {"conv1.bias", conv1_b},
          {"conva.weight", conva_w}, {"conva.bias", conva_b},  {"convb.weight", convb_w},
          {"convb.bias", convb_b},   {"convc.weight", convc_w}, {"convc.bias", convc_b}};
}

namespace {
void check_pair_against(const FeaturePair &pair, const Tensor &pos_embed) {
  if (pair.f1.shape() != pos_embed.shape()) {
    throw ShapeError("feature pair " + shape_to_string(pair.f1.shape()) +
                     " does not match positional table " + shape_to_string(pos_embed.shape()));
  }
}
}  // namespace

Tensor spatial_enhance(const FeaturePair &pair, const CEParams &params) {
  pair.side();
  check_pair_against(pair, params.pos_embed);
  const Tensor g1 = to_channel_grid(add(pair.f1, params.pos_embed));
  const Tensor g2 = to_channel_grid(add(pair.f2, params.pos_embed));
  const Tensor similarity = cosine_similarity_map(g1, g2, 1e-8);
  const std::array<Tensor, 2> parts{g1, g2};
  return add(concat(parts, 0), similarity);
}

Tensor feature_fusion(const Tensor &x, const CEParams &params) {
  if (x.rank() != 3 || x.dim(0) != 2 * params.width()) {
    throw ShapeError("feature_fusion: expected " + std::to_string(2 * params.width()) +
                     " input channels, got shape " + shape_to_string(x.shape()));
  }
  const Tensor residual = conv2d(x, params.conv1_w, params.conv1_b, 0);
  Tensor h = relu(conv2d(x, params.conva_w, params.conva_b, 0));
  h = relu(conv2d(h, params.convb_w, params.convb_b, 1));
  h = conv2d(h, params.convc_w, params.convc_b, 0);
  return add(residual, h);
}

Tensor ce_forward(const FeaturePair &pair, const CEParams &params) {
  return from_channel_grid(feature_fusion(spatial_enhance(pair, params), params));
}

ConcatFusionParams ConcatFusionParams::init(std::size_t patches, std::size_t width,
                                            std::size_t hidden, std::uint64_t seed,
                                            double sigma) {
  grid_side(patches);
  auto normal = [&](Shape shape, std::uint64_t salt) {
    return create(shape, Init::normal(sigma, mix_seed(seed, salt)), true);
  };
  return {normal({patches, width}, 1), normal({hidden, 2 * width, 1, 1}, 2),
          create({hidden}, Init::zeros(), true), normal({width, hidden, 1, 1}, 3),
          create({width}, Init::zeros(), true)};
}

ParameterList ConcatFusionParams::named_parameters() const {
  return {{"pos_embed", pos_embed},
          {"conv1.weight", conv1_w},
          {"conv1.bias", conv1_b},
          {"conv2.weight", conv2_w},
          {"conv2.bias", conv2_b}};
}

Tensor concat_fusion_forward(const FeaturePair &pair, const ConcatFusionParams &params) {
  pair.side();
  check_pair_against(pair, params.pos_embed);
  const std::array<Tensor, 2> parts{to_channel_grid(add(pair.f1, params.pos_embed)),
                                    to_channel_grid(add(pair.f2, params.pos_embed))};
  Tensor h = relu(conv2d(concat(parts, 0), params.conv1_w, params.conv1_b, 0));
  return from_channel_grid(conv2d(h, params.conv2_w, params.conv2_b, 0));
}

std::size_t ce_parameter_count(std::size_t patches, std::size_t width) noexcept {
  const std::size_t d = width;
  return patches * d + (2 * d * d + d) * 2 + (9 * d * d + d) + (d * d + d);
}

std::size_t concat_fusion_parameter_count(std::size_t patches, std::size_t width,
                                          std::size_t hidden) noexcept {
  return patches * width + (2 * width * hidden + hidden) + (hidden * width + width);
}

std::size_t matched_concat_hidden(std::size_t patches, std::size_t width) noexcept {
  const auto target = static_cast<double>(ce_parameter_count(patches, width));
  std::size_t best = 1;
  double best_gap = std::abs(static_cast<double>(concat_fusion_parameter_count(patches, width, 1)) - target);
  for (std::size_t h = 2; h <= 64 * width; ++h) {
    const double gap =
        std::abs(static_cast<double>(concat_fusion_parameter_count(patches, width, h)) - target);
    if (gap < best_gap) {
      best = h;
      best_gap = gap;
    }
  }
  return best;
}

}  // namespace changecap
