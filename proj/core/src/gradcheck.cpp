// SPDX-License-Identifier: Apache-2.0
#include "changecap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "changecap/error.hpp"
#include "changecap/rng.hpp"

namespace changecap {

double finite_diff_check(const std::function<Tensor()> &loss_fn,
                         std::span<const CheckedParam> params, double h) {
  std::vector<bool> previous_flags;
  for (const CheckedParam &p : params) {
    previous_flags.push_back(p.tensor.requires_grad());
    Tensor t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }

  backward(loss_fn());

  std::vector<std::vector<double>> analytic;
  for (const CheckedParam &p : params) {
    if (p.tensor.has_grad()) {
      analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    } else {
      analytic.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  auto evaluate = [&] {
    NoGradGuard no_grad;
    return loss_fn().item();
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    std::vector<std::size_t> indices = params[k].indices;
    if (indices.empty()) {
      indices.resize(t.numel());
      std::iota(indices.begin(), indices.end(), std::size_t{0});
    }
    auto data = t.mutable_data();
    for (std::size_t i : indices) {
      if (i >= data.size()) throw ContractError("finite_diff_check: coordinate out of range");
      const double saved = data[i];
      data[i] = saved + h;
      const double plus = evaluate();
      data[i] = saved - h;
      const double minus = evaluate();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    t.zero_grad();
    t.set_requires_grad(previous_flags[k]);
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor()> &loss_fn, std::span<const Tensor> params,
                         double h) {
  std::vector<CheckedParam> all;
  all.reserve(params.size());
  for (const Tensor &t : params) all.push_back({t, {}});
  return finite_diff_check(loss_fn, all, h);
}

std::vector<std::size_t> random_coordinates(const Tensor &t, std::size_t count,
                                            std::uint64_t seed) {
  std::vector<std::size_t> all(t.numel());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (count >= all.size()) return all;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(all));
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace changecap
