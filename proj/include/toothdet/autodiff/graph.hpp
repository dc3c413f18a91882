#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "toothdet/autodiff/tensor.hpp"

namespace toothdet::ad {

/// One vertex of the define-by-run computation graph. Interior nodes are
/// rebuilt on every forward pass; parameter leaves persist across passes and
/// keep accumulating gradient until zeroed.
struct Node {
  Tensor value;
  Tensor grad;  // allocated iff requires_grad
  bool requires_grad = false;
  bool grad_live = false;  // set once backward has deposited into grad
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad, accumulates into parents' grads.
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (!requires_grad) return;
    if (!grad.same_shape(value)) grad = Tensor(value.shape());
  }
  void zero_grad() {
    grad.fill(0.0);
    grad_live = false;
  }
};

using NodePtr = std::shared_ptr<Node>;

/// Value-semantic handle to a graph node. Ops in ops.hpp take and return
/// Vars; a Var made without requires_grad is a constant and never
/// accumulates gradient (detached-tensor contract).
class Var {
 public:
  Var() = default;

  explicit Var(Tensor value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->ensure_grad();
  }

  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const NodePtr& node() const { return node_; }

  /// Copy of the current values with no graph attachment.
  Tensor detached() const { return node_->value; }

 private:
  NodePtr node_;
};

/// Builds an interior node. requires_grad is inherited from the parents.
inline Var make_op_node(const char* op, Tensor value,
                        std::vector<NodePtr> parents,
                        std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) {
    n->ensure_grad();
    n->backprop = std::move(backprop);
  }
  return Var(n);
}

/// Reverse-mode sweep from a scalar loss. Gradients ACCUMULATE: calling
/// backward twice without zeroing doubles leaf gradients (documented
/// contract). Rejects non-scalar losses.
void backward(const Var& loss);

}  // namespace toothdet::ad
