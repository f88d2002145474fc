// SPDX-License-Identifier: Apache-2.0
#include "changecap/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "changecap/error.hpp"

namespace changecap {

using detail::Node;

namespace {

using BackwardFn = std::function<void(Node &)>;

Tensor make_result(const char *name, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor *> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = name;
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor *t : inputs) needs_grad = needs_grad || t->requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const Tensor *t : inputs) node->parents.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(const char *name, Shape shape, std::vector<double> data,
                     std::span<const Tensor> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = name;
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor &t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const Tensor &t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Returns the parent's grad buffer, or nullptr when it does not take gradients.
std::vector<double> *grad_of(Node &out, std::size_t i) {
  Node &p = *out.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

void require_rank(const Tensor &t, std::size_t rank, const char *op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()) + " differ");
  }
}

// Number of elements of `y` when it tiles onto `x`, or 0 if it does not.
std::size_t tile_size(const Shape &x, const Shape &y) {
  std::size_t lead = 0;
  while (lead + 1 < y.size() && y[lead] == 1) ++lead;
  const std::size_t rest = y.size() - lead;
  if (rest > x.size()) return 0;
  if (!std::equal(y.begin() + static_cast<std::ptrdiff_t>(lead), y.end(),
                  x.end() - static_cast<std::ptrdiff_t>(rest))) {
    return 0;
  }
  return shape_numel(y);
}

template <typename F>
Tensor unary(const char *name, const Tensor &x, F &&forward_derivative) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  std::vector<double> deriv(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto [y, dy] = forward_derivative(in[i]);
    out[i] = y;
    deriv[i] = dy;
  }
  return make_result(name, x.shape(), std::move(out), {&x},
                     [deriv = std::move(deriv)](Node &o) {
                       if (auto *gx = grad_of(o, 0)) {
                         for (std::size_t i = 0; i < deriv.size(); ++i) (*gx)[i] += o.grad[i] * deriv[i];
                       }
                     });
}

}  // namespace

// -- elementwise -------------------------------------------------------------

Tensor add(const Tensor &x, const Tensor &y) {
  const std::size_t m = tile_size(x.shape(), y.shape());
  if (m == 0) {
    throw ShapeError("add: cannot broadcast " + shape_to_string(y.shape()) + " onto " +
                     shape_to_string(x.shape()));
  }
  const auto xd = x.data();
  const auto yd = y.data();
  std::vector<double> out(xd.begin(), xd.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yd[i % m];
  return make_result("add", x.shape(), std::move(out), {&x, &y}, [m](Node &o) {
    if (auto *gx = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i];
    }
    if (auto *gy = grad_of(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gy)[i % m] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor &x, const Tensor &y) { return add(x, scale(y, -1.0)); }

Tensor mul(const Tensor &x, const Tensor &y) {
  require_same_shape(x, y, "mul");
  const auto xd = x.data();
  const auto yd = y.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * yd[i];
  return make_result("mul", x.shape(), std::move(out), {&x, &y}, [](Node &o) {
    const auto &xd = o.parents[0]->data;
    const auto &yd = o.parents[1]->data;
    if (auto *gx = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * yd[i];
    }
    if (auto *gy = grad_of(o, 1)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gy)[i] += o.grad[i] * xd[i];
    }
  });
}

Tensor scale(const Tensor &x, double c) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * c;
  return make_result("scale", x.shape(), std::move(out), {&x}, [c](Node &o) {
    if (auto *gx = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * c;
    }
  });
}

Tensor relu(const Tensor &x) {
  return unary("relu", x, [](double v) {
    return v > 0.0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0};
  });
}

Tensor gelu(const Tensor &x) {
  return unary("gelu", x, [](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * v * v) * 0.5 * std::numbers::sqrt2 * std::numbers::inv_sqrtpi;
    return std::pair{v * cdf, cdf + v * pdf};
  });
}

// -- reductions --------------------------------------------------------------

Tensor sum(const Tensor &x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", {1}, {total}, {&x}, [](Node &o) {
    if (auto *gx = grad_of(o, 0)) {
      for (double &g : *gx) g += o.grad[0];
    }
  });
}

Tensor mean(const Tensor &x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_squares(const Tensor &x) {
  double total = 0.0;
  for (double v : x.data()) total += v * v;
  return make_result("sum_squares", {1}, {total}, {&x}, [](Node &o) {
    const auto &xd = o.parents[0]->data;
    if (auto *gx = grad_of(o, 0)) {
      for (std::size_t i = 0; i < xd.size(); ++i) (*gx)[i] += 2.0 * xd[i] * o.grad[0];
    }
  });
}

// -- layout ------------------------------------------------------------------

Tensor reshape(const Tensor &x, const Shape &shape) {
  if (shape_numel(shape) != x.numel() || shape.empty()) {
    throw ShapeError("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", shape, std::move(out), {&x}, [](Node &o) {
    if (auto *gx = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i];
    }
  });
}

Tensor transpose(const Tensor &x) {
  require_rank(x, 2, "transpose");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  std::vector<std::size_t> source(rows * cols);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) source[c * rows + r] = r * cols + c;
  }
  return gather_elements(x, {cols, rows}, std::move(source));
}

Tensor gather_elements(const Tensor &x, const Shape &shape, std::vector<std::size_t> source) {
  if (shape_numel(shape) != source.size() || shape.empty()) {
    throw ShapeError("gather_elements: index count does not match " + shape_to_string(shape));
  }
  const auto xd = x.data();
  std::vector<double> out(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i] >= xd.size()) throw ShapeError("gather_elements: source index out of range");
    out[i] = xd[source[i]];
  }
  return make_result("gather", shape, std::move(out), {&x},
                     [source = std::move(source)](Node &o) {
                       if (auto *gx = grad_of(o, 0)) {
                         for (std::size_t i = 0; i < source.size(); ++i) (*gx)[source[i]] += o.grad[i];
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape &first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor &p : parts) {
    const Shape &s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_to_string(first) + " and " +
                       shape_to_string(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> widths;  // contiguous chunk per outer index
  for (const Tensor &p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t out_width = out_shape[axis] * inner;

  std::vector<double> out(outer * out_width);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * out_width + offset));
    }
    offset += widths[k];
  }
  return make_result_n("concat", std::move(out_shape), std::move(out), parts,
                       [widths, outer, out_width](Node &o) {
                         std::size_t offset = 0;
                         for (std::size_t k = 0; k < widths.size(); ++k) {
                           if (auto *gp = grad_of(o, k)) {
                             for (std::size_t r = 0; r < outer; ++r) {
                               for (std::size_t i = 0; i < widths[k]; ++i) {
                                 (*gp)[r * widths[k] + i] += o.grad[r * out_width + offset + i];
                               }
                             }
                           }
                           offset += widths[k];
                         }
                       });
}

Tensor narrow(const Tensor &x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape &s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") invalid for axis " +
                     std::to_string(axis) + " of " + shape_to_string(s));
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_width = s[axis] * inner;
  const std::size_t out_width = length * inner;
  const std::size_t skip = start * inner;

  Shape out_shape = s;
  out_shape[axis] = length;
  const auto xd = x.data();
  std::vector<double> out(outer * out_width);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(o * in_width + skip), out_width,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_width));
  }
  return make_result("narrow", std::move(out_shape), std::move(out), {&x},
                     [outer, in_width, out_width, skip](Node &o) {
                       if (auto *gx = grad_of(o, 0)) {
                         for (std::size_t r = 0; r < outer; ++r) {
                           for (std::size_t i = 0; i < out_width; ++i) {
                             (*gx)[r * in_width + skip + i] += o.grad[r * out_width + i];
                           }
                         }
                       }
                     });
}

Tensor embedding(const Tensor &table, std::span<const std::int64_t> ids) {
  require_rank(table, 2, "embedding");
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  const std::size_t vocab = table.dim(0);
  const std::size_t width = table.dim(1);
  const auto td = table.data();
  std::vector<double> out(ids.size() * width);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
      throw InvalidTargetError("token id " + std::to_string(ids[t]) + " outside [0, " +
                               std::to_string(vocab) + ")");
    }
    rows[t] = static_cast<std::size_t>(ids[t]);
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(rows[t] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(t * width));
  }
  return make_result("embedding", {ids.size(), width}, std::move(out), {&table},
                     [rows = std::move(rows), width](Node &o) {
                       if (auto *gt = grad_of(o, 0)) {
                         for (std::size_t t = 0; t < rows.size(); ++t) {
                           for (std::size_t j = 0; j < width; ++j) {
                             (*gt)[rows[t] * width + j] += o.grad[t * width + j];
                           }
                         }
                       }
                     });
}

// -- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor &a, const Tensor &b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims differ, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node &o) {
    const auto &ad = o.parents[0]->data;
    const auto &bd = o.parents[1]->data;
    if (auto *ga = grad_of(o, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += o.grad[i * n + j] * bd[p * n + j];
          (*ga)[i * k + p] += acc;
        }
      }
    }
    if (auto *gb = grad_of(o, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += av * o.grad[i * n + j];
        }
      }
    }
  });
}

Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b) {
  if (b.rank() != 1 || b.dim(0) != w.dim(1)) throw ShapeError("linear: bias width mismatch");
  return add(matmul(x, w), b);
}

Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &b, std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  require_rank(b, 1, "conv2d");
  const std::size_t cin = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t wd = x.dim(2);
  const std::size_t cout = w.dim(0);
  const std::size_t k = w.dim(2);
  if (w.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                     std::to_string(w.dim(1)));
  }
  if (w.dim(3) != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (b.dim(0) != cout) throw ShapeError("conv2d: bias length mismatch");
  if (h + 2 * padding < k || wd + 2 * padding < k) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t oh = h + 2 * padding - k + 1;
  const std::size_t ow = wd + 2 * padding - k + 1;

  const auto xd = x.data();
  const auto kd = w.data();
  const auto bd = b.data();
  std::vector<double> out(cout * oh * ow);
  // Visits every (output, kernel tap) pair whose input pixel is in bounds.
  auto for_each_tap = [=](auto &&fn) {
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const std::size_t out_idx = (o * oh + i) * ow + j;
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t u = 0; u < k; ++u) {
              const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(i + u) - pad;
              if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t v = 0; v < k; ++v) {
                const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + v) - pad;
                if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(wd)) continue;
                const std::size_t in_idx =
                    (c * h + static_cast<std::size_t>(yi)) * wd + static_cast<std::size_t>(xj);
                const std::size_t w_idx = ((o * cin + c) * k + u) * k + v;
                fn(out_idx, in_idx, w_idx);
              }
            }
          }
        }
      }
    }
  };
  for (std::size_t o = 0; o < cout; ++o) {
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * oh * ow), oh * ow, bd[o]);
  }
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += kd[wi] * xd[ii]; });

  return make_result("conv2d", {cout, oh, ow}, std::move(out), {&x, &w, &b},
                     [for_each_tap, cout, plane = oh * ow](Node &o) {
                       const auto &xd = o.parents[0]->data;
                       const auto &kd = o.parents[1]->data;
                       auto *gx = grad_of(o, 0);
                       auto *gw = grad_of(o, 1);
                       auto *gb = grad_of(o, 2);
                       if (gx || gw) {
                         for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) {
                           const double g = o.grad[oi];
                           if (gx) (*gx)[ii] += g * kd[wi];
                           if (gw) (*gw)[wi] += g * xd[ii];
                         });
                       }
                       if (gb) {
                         for (std::size_t c = 0; c < cout; ++c) {
                           for (std::size_t p = 0; p < plane; ++p) (*gb)[c] += o.grad[c * plane + p];
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor &x, const Tensor &gain, const Tensor &bias, double eps) {
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gain.dim(0) != d || bias.dim(0) != d) {
    throw ShapeError("layer_norm: feature width " + std::to_string(d) + " does not match gain/bias");
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double *row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * rstd[r];
      out[r * d + j] = gd[j] * xhat[r * d + j] + bd[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                     [xhat = std::move(xhat), rstd = std::move(rstd), rows, d](Node &o) {
                       const auto &gd = o.parents[1]->data;
                       auto *gx = grad_of(o, 0);
                       auto *gg = grad_of(o, 1);
                       auto *gbias = grad_of(o, 2);
                       std::vector<double> gxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double *g = o.grad.data() + r * d;
                         const double *xh = xhat.data() + r * d;
                         double mean_g = 0.0;
                         double mean_gx = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           gxhat[j] = g[j] * gd[j];
                           mean_g += gxhat[j];
                           mean_gx += gxhat[j] * xh[j];
                           if (gg) (*gg)[j] += g[j] * xh[j];
                           if (gbias) (*gbias)[j] += g[j];
                         }
                         if (!gx) continue;
                         mean_g /= static_cast<double>(d);
                         mean_gx /= static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           (*gx)[r * d + j] += rstd[r] * (gxhat[j] - mean_g - xh[j] * mean_gx);
                         }
                       }
                     });
}

Tensor causal_softmax(const Tensor &scores) {
  require_rank(scores, 2, "causal_softmax");
  const std::size_t t_len = scores.dim(0);
  if (scores.dim(1) != t_len) throw ShapeError("causal_softmax: scores must be square");
  const auto sd = scores.data();
  std::vector<double> out(t_len * t_len, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    const double *row = sd.data() + t * t_len;
    double mx = row[0];
    for (std::size_t j = 1; j <= t; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j <= t; ++j) {
      out[t * t_len + j] = std::exp(row[j] - mx);
      z += out[t * t_len + j];
    }
    for (std::size_t j = 0; j <= t; ++j) out[t * t_len + j] /= z;
  }
  return make_result("causal_softmax", scores.shape(), std::move(out), {&scores},
                     [t_len](Node &o) {
                       auto *gs = grad_of(o, 0);
                       if (!gs) return;
                       for (std::size_t t = 0; t < t_len; ++t) {
                         const double *w = o.data.data() + t * t_len;
                         const double *g = o.grad.data() + t * t_len;
                         double dot = 0.0;
                         for (std::size_t j = 0; j <= t; ++j) dot += g[j] * w[j];
                         for (std::size_t j = 0; j <= t; ++j) (*gs)[t * t_len + j] += w[j] * (g[j] - dot);
                       }
                     });
}

Tensor causal_attention_weights(const Tensor &q, const Tensor &k) {
  require_rank(q, 2, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return causal_softmax(scale(matmul(q, transpose(k)), inv_scale));
}

Tensor causal_attention(const Tensor &q, const Tensor &k, const Tensor &v) {
  require_same_shape(q, v, "causal_attention");
  return matmul(causal_attention_weights(q, k), v);
}

Tensor cross_entropy(const Tensor &logits, std::span<const std::int64_t> targets,
                     std::int64_t ignore_index) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t t_len = logits.dim(0);
  const std::size_t vocab = logits.dim(1);
  if (targets.size() != t_len) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t_len) + " positions");
  }
  const auto ld = logits.data();
  std::vector<double> probs(t_len * vocab, 0.0);
  std::vector<std::int64_t> kept(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (targets[t] == ignore_index) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw InvalidTargetError("target " + std::to_string(targets[t]) + " outside [0, " +
                               std::to_string(vocab) + ")");
    }
    const double *row = ld.data() + t * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[t]];
    for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] = std::exp(row[j] - lse);
    ++count;
  }
  if (count == 0) throw EmptyLossError("cross_entropy: every position is ignored");
  const double inv = 1.0 / static_cast<double>(count);
  return make_result("cross_entropy", {1}, {total * inv}, {&logits},
                     [probs = std::move(probs), kept = std::move(kept), ignore_index, inv,
                      vocab](Node &o) {
                       auto *gl = grad_of(o, 0);
                       if (!gl) return;
                       const double g = o.grad[0] * inv;
                       for (std::size_t t = 0; t < kept.size(); ++t) {
                         if (kept[t] == ignore_index) continue;
                         for (std::size_t j = 0; j < vocab; ++j) (*gl)[t * vocab + j] += g * probs[t * vocab + j];
                         (*gl)[t * vocab + static_cast<std::size_t>(kept[t])] -= g;
                       }
                     });
}

Tensor cosine_similarity_map(const Tensor &a, const Tensor &b, double eps) {
  require_rank(a, 3, "cosine_similarity_map");
  require_same_shape(a, b, "cosine_similarity_map");
  const std::size_t channels = a.dim(0);
  const std::size_t plane = a.dim(1) * a.dim(2);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(plane);
  std::vector<double> dots(plane), na(plane), nb(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double x = ad[c * plane + p];
      const double y = bd[c * plane + p];
      dot += x * y;
      sa += x * x;
      sb += y * y;
    }
    dots[p] = dot;
    na[p] = std::sqrt(sa);
    nb[p] = std::sqrt(sb);
    out[p] = dot / (na[p] * nb[p] + eps);
  }
  return make_result(
      "cosine_similarity_map", {1, a.dim(1), a.dim(2)}, std::move(out), {&a, &b},
      [dots = std::move(dots), na = std::move(na), nb = std::move(nb), channels, plane,
       eps](Node &o) {
        const auto &ad = o.parents[0]->data;
        const auto &bd = o.parents[1]->data;
        auto *ga = grad_of(o, 0);
        auto *gb = grad_of(o, 1);
        for (std::size_t p = 0; p < plane; ++p) {
          const double den = na[p] * nb[p] + eps;
          const double g = o.grad[p];
          // d/da of dot/den: b/den - dot * nb * (a/|a|) / den^2; the a/|a|
          // term vanishes at |a| = 0 where dot is 0 as well.
          const double ka = na[p] > 0.0 ? dots[p] * nb[p] / (den * den * na[p]) : 0.0;
          const double kb = nb[p] > 0.0 ? dots[p] * na[p] / (den * den * nb[p]) : 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = c * plane + p;
            if (ga) (*ga)[i] += g * (bd[i] / den - ka * ad[i]);
            if (gb) (*gb)[i] += g * (ad[i] / den - kb * bd[i]);
          }
        }
      });
}

}  // namespace changecap
