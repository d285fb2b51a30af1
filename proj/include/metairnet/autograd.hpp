#pragma once

// Minimal tape-free reverse-mode differentiation. Every differentiable
// operation returns a Var whose node keeps its inputs alive and knows how to
// push its output gradient back into them. Leaves created with `parameter`
// accumulate gradients across backward passes until `zero_grad`.

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "metairnet/tensor.hpp"

namespace metairnet {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Lazily allocated gradient buffer matching `value`.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.shape() == node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  T item() const {
    if (node_->value.size() != 1) throw std::logic_error("item() on non-scalar Var");
    return node_->value[0];
  }

  void zero_grad() { node_->grad = Tensor<T>(); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// A value that never receives a gradient.
template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

/// A trainable leaf.
template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var<T>(std::move(node));
}

/// Builds the result node of an operation. When no input requires a gradient
/// the backward closure is dropped and the result is a plain constant.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.shared());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Back-propagates from a scalar `root`, accumulating into every reachable
/// node that requires a gradient.
template <typename T>
void backward(const Var<T>& root) {
  if (root.size() != 1) throw std::logic_error("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, bool>> stack{{root.node(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!seen.insert(node).second) continue;
    stack.emplace_back(node, true);
    for (const auto& parent : node->parents) {
      if (parent->requires_grad && !seen.count(parent.get())) stack.emplace_back(parent.get(), false);
    }
  }

  root.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.shape() == node->value.shape()) node->backward(*node);
  }
  // Release intermediate gradients; leaves keep theirs.
  for (Node<T>* node : order) {
    if (node->backward) node->grad = Tensor<T>();
  }
}

/// Adds `delta` into the gradient buffer of `input` when it participates in
/// differentiation.
template <typename T>
void accumulate(const std::shared_ptr<Node<T>>& input, const Tensor<T>& delta) {
  if (!input->requires_grad) return;
  auto& g = input->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace metairnet
