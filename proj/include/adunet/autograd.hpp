#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>. Each op
// produces a Node holding its value, links to the nodes it read and a closure
// that pushes the node's gradient into those parents. A graph is only
// recorded when gradients are enabled and at least one input requires them,
// so inference under NoGradGuard allocates no backward state.

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "adunet/tensor.hpp"

namespace adunet {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor<T>& g) {
    if (grad.empty())
      grad = g;
    else
      grad += g;
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr<T> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad; }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t i) const { return node_->value.dim(i); }
  const NodePtr<T>& node() const noexcept { return node_; }
  void zero_grad() { node_->grad = Tensor<T>(); }

 private:
  NodePtr<T> node_;
};

bool grad_enabled() noexcept;

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Wraps an op result. `backward` receives the result node; its `grad` is
// populated and `parents` is the list given here.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

// Runs reverse accumulation from `root`, seeded with ones (root must be a
// scalar) or with an explicit seed of the root's shape. Intermediate graph
// state is released as it is consumed; leaf gradients accumulate.
template <typename T>
void backward(const Var<T>& root);
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed);

}  // namespace adunet
