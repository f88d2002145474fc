// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a shared handle to a node. Ops that consume a tensor requiring
// gradients record their inputs and a backward rule on the output node; the
// recorded nodes form the graph that backward() walks. Parameters are leaf
// nodes: they own no parents and keep their gradient across backward calls
// until zero_grad().
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace changecap {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape) noexcept;
std::string shape_to_string(const Shape &shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward;  // reads this->grad, accumulates into parents
  const char *op = "leaf";

  bool is_leaf() const noexcept { return !backward; }
  std::vector<double> &ensure_grad();
};

}  // namespace detail

struct Init {
  enum class Kind : std::uint8_t { zeros, constant, normal };

  Kind kind = Kind::zeros;
  double value = 0.0;  // constant fill or normal sigma
  std::uint64_t seed = 0;

  static Init zeros() { return {}; }
  static Init constant(double c) { return {Kind::constant, c, 0}; }
  static Init normal(double sigma, std::uint64_t seed) {
    return {Kind::normal, sigma, seed};
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  /// Copies `values` into a new leaf. Throws InvalidShapeError on a zero
  /// dimension or ShapeError when the value count does not match.
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Writes bypass the graph; use only on leaves (parameter init, gradcheck).
  std::span<double> mutable_data() { return node_->data; }
  std::vector<double> to_vector() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Copy of the values with no graph history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node> &node() const noexcept { return node_; }
  bool same_as(const Tensor &other) const noexcept { return node_ == other.node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// create(shape, init). Seeded-normal draws come from Rng(seed) in row-major
/// order, so the output is a pure function of (seed, shape, sigma).
Tensor create(const Shape &shape, Init init = Init::zeros(), bool requires_grad = false);

/// Propagates d(loss)/d(node) to every reachable node that requires grad.
///
/// Traversal is the reverse of a deterministic post-order DFS from `loss`
/// (inputs visited in recorded order), so repeated runs are bitwise
/// reproducible. Leaf gradients accumulate across calls; interior gradients
/// are reset on every call. Throws ContractError if `loss` is not a
/// single-element tensor that requires grad.
void backward(const Tensor &loss);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// A parameter tensor with its name inside a module ("conv1.weight").
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

std::size_t parameter_count(const ParameterList &params) noexcept;

}  // namespace changecap
