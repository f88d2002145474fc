// SPDX-License-Identifier: Apache-2.0
#include "changecap/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "changecap/error.hpp"
#include "changecap/rng.hpp"

namespace changecap {

namespace {
thread_local bool g_grad_enabled = true;

void validate_shape(const Shape &shape) {
  if (shape.empty()) throw InvalidShapeError("shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw InvalidShapeError("zero dimension in shape " + shape_to_string(shape));
  }
}
}  // namespace

std::size_t shape_numel(const Shape &shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape &shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double> &detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape &s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false); }

Tensor create(const Shape &shape, Init init, bool requires_grad) {
  validate_shape(shape);
  std::vector<double> values(shape_numel(shape), 0.0);
  switch (init.kind) {
    case Init::Kind::zeros:
      break;
    case Init::Kind::constant:
      std::fill(values.begin(), values.end(), init.value);
      break;
    case Init::Kind::normal: {
      Rng rng(init.seed);
      for (double &v : values) v = init.value * rng.normal();
      break;
    }
  }
  return Tensor::from_data(shape, std::move(values), requires_grad);
}

void backward(const Tensor &loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a single-element loss tensor");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS; parents are pushed in reverse so they are
  // visited in recorded order.
  std::vector<detail::Node *> order;
  std::unordered_set<detail::Node *> visited;
  std::vector<std::pair<detail::Node *, bool>> stack;
  stack.emplace_back(loss.node().get(), false);
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!visited.insert(node).second) continue;
    stack.emplace_back(node, true);
    for (auto it = node->parents.rbegin(); it != node->parents.rend(); ++it) {
      detail::Node *parent = it->get();
      if (parent->requires_grad && !visited.count(parent)) stack.emplace_back(parent, false);
    }
  }

  for (detail::Node *node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node *node = *it;
    if (!node->is_leaf()) node->backward(*node);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

std::size_t parameter_count(const ParameterList &params) noexcept {
  std::size_t n = 0;
  for (const auto &p : params) n += p.tensor.numel();
  return n;
}

}  // namespace changecap
