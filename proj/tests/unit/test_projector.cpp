// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "changecap/error.hpp"
#include "changecap/gradcheck.hpp"
#include "changecap/ops.hpp"
#include "changecap/projector.hpp"

using namespace changecap;

namespace {

Tensor randn(const Shape &shape, std::uint64_t seed) { return create(shape, Init::normal(1.0, seed)); }

ProjectorParams dense(std::size_t dv, std::size_t dh, std::size_t dl, std::uint64_t seed) {
  ProjectorParams p = ProjectorParams::init(dv, dh, dl, seed, 0.3);
  std::span<double> b1 = p.b1.mutable_data(), b2 = p.b2.mutable_data();
  const Tensor n1 = randn(p.b1.shape(), seed + 1), n2 = randn(p.b2.shape(), seed + 2);
  std::copy(n1.data().begin(), n1.data().end(), b1.begin());
  std::copy(n2.data().begin(), n2.data().end(), b2.begin());
  return p;
}

}  // namespace

TEST(SpaceToDepth, SingleBlockOrder) {
  const Tensor x = Tensor::from_data({4, 1}, {1, 2, 3, 4});
  const Tensor y = space_to_depth_2x2(x);
  EXPECT_EQ(y.shape(), (Shape{1, 4}));
  EXPECT_EQ(y.to_vector(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(SpaceToDepth, BlockLayoutOnFourByFour) {
  // patch index p = r * 4 + c, value = p
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i);
  const Tensor y = space_to_depth_2x2(Tensor::from_data({16, 1}, v));
  EXPECT_EQ(y.shape(), (Shape{4, 4}));
  EXPECT_EQ(y.to_vector(), (std::vector<double>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15}));
}

TEST(SpaceToDepth, InverseIsBitwiseAndGeometryChecked) {
  for (std::size_t l : {4, 16, 64, 144}) {
    const Tensor x = randn({l, 3}, l);
    const Tensor y = space_to_depth_2x2(x);
    EXPECT_EQ(y.shape(), (Shape{l / 4, 12}));
    EXPECT_EQ(depth_to_space_2x2(y).to_vector(), x.to_vector());
  }
  EXPECT_THROW(space_to_depth_2x2(create({9, 2})), InvalidGeometryError);
  EXPECT_THROW(space_to_depth_2x2(create({8, 2})), InvalidGeometryError);
}

TEST(SpaceToDepth, ChangingOnePatchChangesOneRow) {
  const Tensor x = randn({16, 2}, 3);
  const Tensor y = space_to_depth_2x2(x);
  for (std::size_t p = 0; p < 16; ++p) {
    std::vector<double> v = x.to_vector();
    v[p * 2] += 1.0;
    const Tensor y2 = space_to_depth_2x2(Tensor::from_data({16, 2}, v));
    std::size_t changed_rows = 0;
    for (std::size_t r = 0; r < 4; ++r) {
      bool differs = false;
      for (std::size_t j = 0; j < 8; ++j) differs |= y.at({r, j}) != y2.at({r, j});
      changed_rows += differs;
    }
    EXPECT_EQ(changed_rows, 1u);
  }
}

TEST(Project, ZeroParamsAndTokenCount) {
  const ProjectedEmbedding e = project(randn({16, 8}, 1), ProjectorParams::zeros(8, 32, 32));
  EXPECT_EQ(e.tokens.shape(), (Shape{4, 32}));
  for (double v : e.tokens.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(project(randn({64, 8}, 2), ProjectorParams::init(8, 32, 32, 1)).count(), 16u);
}

TEST(Project, MatchesExplicitMlp) {
  const ProjectorParams p = dense(2, 5, 3, 4);
  const Tensor x = randn({16, 2}, 5);
  const Tensor merged = space_to_depth_2x2(x);
  const Tensor y = project(x, p).tokens;
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> h(5);
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = p.b1.data()[j];
      for (std::size_t i = 0; i < 8; ++i) acc += merged.at({r, i}) * p.w1.at({i, j});
      h[j] = 0.5 * acc * (1.0 + std::erf(acc / std::sqrt(2.0)));
    }
    for (std::size_t k = 0; k < 3; ++k) {
      double acc = p.b2.data()[k];
      for (std::size_t j = 0; j < 5; ++j) acc += h[j] * p.w2.at({j, k});
      EXPECT_NEAR(y.at({r, k}), acc, 1e-12);
    }
  }
}

TEST(Project, GradientOverAllParameters) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ProjectorParams p = dense(8, 32, 32, seed);
    const Tensor x = randn({16, 8}, seed + 9);
    std::vector<Tensor> ps;
    for (const NamedTensor &t : p.named_parameters()) ps.push_back(t.tensor);
    EXPECT_LT(finite_diff_check([&] { return sum_squares(project(x, p).tokens); }, ps), 1e-5);
  }
}

TEST(Project, ShapeMismatchThrows) {
  EXPECT_THROW(project(randn({16, 4}, 1), ProjectorParams::init(8, 32, 32, 1)), ShapeError);
}
