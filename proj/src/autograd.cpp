#include "adunet/autograd.hpp"

#include <unordered_set>

namespace adunet {
namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (!root.requires_grad()) return;
  if (!seed.same_shape(root.value()))
    throw ShapeError("backward seed shape " + shape_string(seed.shape()) + " does not match root " +
                     shape_string(root.shape()));

  // Iterative post-order DFS gives a topological order (parents before children).
  // Owning pointers: releasing a node's parent list must not free nodes that
  // are still queued.
  std::vector<NodePtr<T>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<NodePtr<T>, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr<T> parent = node->parents[next++];
      if (parent && parent->requires_grad && !visited.count(parent.get())) {
        visited.insert(parent.get());
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  root.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (!node->backward_fn) continue;  // leaf
    if (!node->grad.empty()) node->backward_fn(*node);
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad = Tensor<T>();
  }
}

template <typename T>
void backward(const Var<T>& root) {
  if (root.value().numel() != 1)
    throw ShapeError("backward without a seed requires a scalar root, got " + shape_string(root.shape()));
  backward(root, Tensor<T>(root.shape(), T(1)));
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template void backward<float>(const Var<float>&, const Tensor<float>&);
template void backward<double>(const Var<double>&, const Tensor<double>&);

}  // namespace adunet
