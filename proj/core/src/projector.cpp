// SPDX-License-Identifier: Apache-2.0
#include "changecap/projector.hpp"

#include "changecap/change_extraction.hpp"
#include "changecap/error.hpp"
#include "changecap/ops.hpp"
#include "changecap/rng.hpp"

namespace changecap {

namespace {

// Source index (into the [L_V, D_V] buffer) of every element of the merged
// [L_V/4, 4 D_V] layout.
std::vector<std::size_t> merge_index(std::size_t side, std::size_t width) {
  const std::size_t half = side / 2;
  std::vector<std::size_t> source;
  source.reserve(side * side * width);
  for (std::size_t br = 0; br < half; ++br) {
    for (std::size_t bc = 0; bc < half; ++bc) {
      for (std::size_t cell = 0; cell < 4; ++cell) {
        const std::size_t row = 2 * br + cell / 2;
        const std::size_t col = 2 * bc + cell % 2;
        const std::size_t patch = row * side + col;
        for (std::size_t c = 0; c < width; ++c) source.push_back(patch * width + c);
      }
    }
  }
  return source;
}

std::size_t even_side(std::size_t patches) {
  const std::size_t side = grid_side(patches);
  if (side % 2 != 0) {
    throw InvalidGeometryError("grid side " + std::to_string(side) +
                               " is odd; 2x2 merge needs an even side");
  }
  return side;
}

}  // namespace

ProjectorParams ProjectorParams::init(std::size_t visual_width, std::size_t hidden,
                                      std::size_t embed_width, std::uint64_t seed,
                                      double sigma) {
  return {create({4 * visual_width, hidden}, Init::normal(sigma, mix_seed(seed, 1)), true),
          create({hidden}, Init::zeros(), true),
          create({hidden, embed_width}, Init::normal(sigma, mix_seed(seed, 2)), true),
          create({embed_width}, Init::zeros(), true)};
}

ProjectorParams ProjectorParams::zeros(std::size_t visual_width, std::size_t hidden,
                                       std::size_t embed_width) {
  return {create({4 * visual_width, hidden}, Init::zeros(), true),
          create({hidden}, Init::zeros(), true),
          create({hidden, embed_width}, Init::zeros(), true),
          create({embed_width}, Init::zeros(), true)};
}

ParameterList ProjectorParams::named_parameters() const {
  return {{"linear1.weight", w1}, {"linear1.bias", b1}, {"linear2.weight", w2},
          {"linear2.bias", b2}};
}

Tensor space_to_depth_2x2(const Tensor &x) {
  if (x.rank() != 2) throw ShapeError("space_to_depth_2x2: expected [L_V, D_V]");
  const std::size_t side = even_side(x.dim(0));
  const std::size_t width = x.dim(1);
  return gather_elements(x, {x.dim(0) / 4, 4 * width}, merge_index(side, width));
}

Tensor depth_to_space_2x2(const Tensor &x) {
  if (x.rank() != 2 || x.dim(1) % 4 != 0) {
    throw ShapeError("depth_to_space_2x2: expected [L_V/4, 4 D_V]");
  }
  const std::size_t patches = x.dim(0) * 4;
  const std::size_t width = x.dim(1) / 4;
  const std::size_t side = even_side(patches);
  const std::vector<std::size_t> forward = merge_index(side, width);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return gather_elements(x, {patches, width}, std::move(inverse));
}

ProjectedEmbedding project(const Tensor &x, const ProjectorParams &params) {
  if (x.rank() != 2 || x.dim(1) != params.visual_width()) {
    throw ShapeError("project: features " + shape_to_string(x.shape()) +
                     " do not match projector input width " +
                     std::to_string(params.visual_width()));
  }
  const Tensor merged = space_to_depth_2x2(x);
  return {linear(gelu(linear(merged, params.w1, params.b1)), params.w2, params.b2)};
}

}  // namespace changecap
