// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode differentiation. The
// graph is rebuilt on every forward pass and released once the loss handle
// goes out of scope; only leaf tensors marked requires_grad keep a
// persistent gradient accumulator.
#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "csi2cloud/common.hpp"

namespace c2c {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    require(d > 0, "tensor: shape extents must be positive");
    n *= d;
  }
  return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;   // persistent accumulator, leaves only
  std::vector<double> gbuf;   // scratch during one backward sweep
  bool requires_grad = false;
  bool needs_grad = false;    // this node participates in some grad path
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording in a scope (model evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    auto node = std::make_shared<detail::Node>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    Tensor t(std::move(node));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
    require(shape_numel(shape) == values.size(), "tensor: value count does not match shape");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    Tensor t(std::move(node));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from_values(Shape{}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }

  double value() const {
    require(numel() == 1, "tensor: value() needs a single-element tensor");
    return node_->data[0];
  }

  double& operator[](std::size_t i) { return node_->data[i]; }
  double operator[](std::size_t i) const { return node_->data[i]; }

  /// Rank-2 accessor, row-major.
  double at2(std::size_t r, std::size_t c) const {
    return node_->data[r * node_->shape[1] + c];
  }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    node_->needs_grad = on;
    if (on && node_->grad.size() != node_->data.size()) {
      node_->grad.assign(node_->data.size(), 0.0);
    }
  }

  /// Accumulated gradient of a requires_grad leaf. Zero until a backward
  /// sweep reaches the tensor.
  std::span<const double> grad() const {
    require(node_->requires_grad, "tensor: grad() on a tensor without requires_grad");
    return node_->grad;
  }

  std::span<double> grad_mut() {
    require(node_->requires_grad, "tensor: grad_mut() on a tensor without requires_grad");
    return node_->grad;
  }

  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Deep copy of the values (no graph, no grad history).
  Tensor clone_detached() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds an op output node. Parent links and the backward closure are only
/// recorded when some input lies on a gradient path and grad mode is on.
inline Tensor make_op_node(Shape shape, std::vector<double> data,
                           std::vector<Tensor> inputs,
                           std::function<void(Node&)> backward_fn,
                           const char* opname) {
  ensure_finite(data, opname);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (grad_mode()) {
    for (const Tensor& t : inputs) needs = needs || t.node()->needs_grad;
  }
  if (needs) {
    node->needs_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable requires_grad leaf; calling twice without zeroing doubles them.
inline void backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar tensor");
  detail::Node* root = loss.node().get();
  if (!root->needs_grad && !root->requires_grad) return;

  // Iterative post-order DFS restricted to grad-participating nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->needs_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) n->gbuf.assign(n->data.size(), 0.0);
  root->gbuf[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
  for (detail::Node* n : order) {
    if (n->requires_grad) {
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->gbuf[i];
    }
    n->gbuf.clear();
    n->gbuf.shrink_to_fit();
  }
}

}  // namespace c2c
