// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "changecap/tensor.hpp"

namespace changecap {

/// A parameter and the coordinates of it to check; empty means all of them.
struct CheckedParam {
  Tensor tensor;
  std::vector<std::size_t> indices;
};

/// Central-difference gradient check.
///
/// Runs `loss_fn` once with recording on and calls backward() to get the
/// analytic gradient, then for every checked coordinate compares it with
/// (f(theta + h) - f(theta - h)) / 2h. Returns the maximum over coordinates of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|). Parameters are
/// restored bitwise and their grads cleared before returning.
double finite_diff_check(const std::function<Tensor()> &loss_fn,
                         std::span<const CheckedParam> params, double h = 1e-4);

double finite_diff_check(const std::function<Tensor()> &loss_fn,
                         std::span<const Tensor> params, double h = 1e-4);

/// Up to `count` distinct coordinates of `t`, drawn with Rng(seed).
std::vector<std::size_t> random_coordinates(const Tensor &t, std::size_t count,
                                            std::uint64_t seed);

}  // namespace changecap
