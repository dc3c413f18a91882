#include "toothdet/autodiff/graph.hpp"

#include <stdexcept>
#include <unordered_set>

namespace toothdet::ad {

namespace {

// Iterative post-order topo sort; graphs from the cascade can reach a few
// thousand nodes, so no recursion.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* child = node->parents[next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (!loss.value().is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                loss.value().shape_str());
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // fully detached graph, nothing to do

  auto order = topo_order(root);
  // Interior grads start fresh each sweep; leaf (parameter) grads keep
  // accumulating until explicitly zeroed.
  for (Node* n : order) {
    if (!n->parents.empty()) n->zero_grad();
  }
  // += so that a bare-parameter loss accumulates like any other leaf.
  root->grad[0] += 1.0;
  root->grad_live = true;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
    for (const auto& p : n->parents)
      if (p->requires_grad) p->grad_live = true;
  }
}

}  // namespace toothdet::ad
