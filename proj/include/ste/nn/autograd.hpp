#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ste/nn/tensor.hpp"

namespace ste::nn {

// Reverse-mode tape. Each op result owns its inputs and a closure that pushes
// its gradient into them; the graph lives as long as the result Var does.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  Node<T>& input(std::size_t i) { return *inputs[i]; }
};

// Thread-local switch; inference runs with recording disabled.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  // Direct access for optimizers and checkpoint loading.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  const Tensor<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Records an op result. When recording is off or no input needs a gradient,
// the result is a plain constant.
template <typename T>
Var<T> make_op(Tensor<T> value, std::initializer_list<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn) {
  bool needs = false;
  if (GradMode::enabled()) {
    for (const Var<T>& in : inputs) needs = needs || in.requires_grad();
  }
  if (!needs) return Var<T>(std::move(value), false);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  for (const Var<T>& in : inputs) node->inputs.push_back(in.node());
  node->backward_fn = std::move(backward_fn);
  return Var<T>::from_node(std::move(node));
}

template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs,
               std::function<void(Node<T>&)> backward_fn) {
  bool needs = false;
  if (GradMode::enabled()) {
    for (const Var<T>& in : inputs) needs = needs || in.requires_grad();
  }
  if (!needs) return Var<T>(std::move(value), false);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  for (const Var<T>& in : inputs) node->inputs.push_back(in.node());
  node->backward_fn = std::move(backward_fn);
  return Var<T>::from_node(std::move(node));
}

// Seeds d(root)/d(root) = 1 and propagates to every leaf that requires a
// gradient. Leaf gradients accumulate across calls; intermediate gradients
// are released as soon as they have been propagated.
template <typename T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  if (root.value().numel() != 1) {
    throw Error(ErrorKind::kShapeMismatch, "backward() needs a scalar root");
  }
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward_fn && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  root.node()->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->grad.empty() || !node->backward_fn) continue;
    node->backward_fn(*node);
    node->grad = Tensor<T>();
  }
}

}  // namespace ste::nn
