#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dacl/tensor.hpp"

namespace dacl {

// Reverse-mode tape. Each forward op appends a node holding its output value,
// links to its input nodes and a closure that scatters the node's gradient
// into the parents. backward() walks the graph once in reverse topological
// order. Single-threaded per graph; values are immutable once written, so
// finished graphs may be read from other threads.

template <class S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // empty until backward touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backprop;  // null for leaves and no-grad nodes
  const char* op = "leaf";
  uint64_t visit_tag = 0;
};

template <class S>
Tensor<S>& ensure_grad(Node<S>& n) {
  if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.shape);
  return n.grad;
}

/// Handle to a graph node. Cheap to copy; shares the node.
template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}

  static Var leaf(Tensor<S> value, bool requires_grad) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return n_ != nullptr; }
  const Tensor<S>& value() const { return n_->value; }
  /// Mutable access for optimizers; invalidates graphs built on the old value.
  Tensor<S>& value_mut() { return n_->value; }
  const Tensor<S>& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad.numel() > 0; }
  void zero_grad() { n_->grad = Tensor<S>(); }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  const Shape& shape() const { return n_->value.shape; }
  int64_t numel() const { return n_->value.numel(); }
  S scalar() const {
    if (numel() != 1) throw ContractError("scalar() on tensor of size " + std::to_string(numel()));
    return n_->value.data[0];
  }

  /// Copy of the value with no graph history.
  Var detach() const { return leaf(n_->value, false); }

  std::shared_ptr<Node<S>> node() const { return n_; }

 private:
  std::shared_ptr<Node<S>> n_;
};

/// Build an op node. The backprop closure is dropped when no parent needs
/// gradients, so frozen networks carry no tape.
template <class S>
Var<S> make_node(const char* op, Tensor<S> value, std::vector<Var<S>> parents,
                 std::function<void(Node<S>&)> backprop) {
  check_finite(value, op);
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->op = op;
  bool need = false;
  for (const auto& p : parents) need = need || p.node()->requires_grad;
  n->requires_grad = need;
  if (need) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Var<S>(std::move(n));
}

namespace detail {
inline uint64_t next_visit_epoch() {
  static uint64_t epoch = 0;
  return ++epoch;
}
}  // namespace detail

/// Reverse-mode pass from a scalar loss. Interior gradients are fresh per
/// call; leaf gradients accumulate additively until zero_grad().
template <class S>
void backward(const Var<S>& loss) {
  if (!loss.defined()) throw ContractError("backward on undefined Var");
  if (loss.numel() != 1) throw ContractError("backward requires a scalar loss");
  Node<S>* root = loss.node().get();
  if (!root->requires_grad) return;

  const uint64_t epoch = detail::next_visit_epoch();
  std::vector<Node<S>*> order;  // post-order: parents before consumers
  struct Frame {
    Node<S>* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  root->visit_tag = epoch;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node<S>* p = f.n->parents[f.next++].get();
      if (p->requires_grad && p->visit_tag != epoch) {
        p->visit_tag = epoch;
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  // Interior grads are per-pass scratch; leaves persist across passes.
  for (Node<S>* n : order)
    if (!n->parents.empty() && n != root) n->grad = Tensor<S>();
  if (root->parents.empty()) {
    ensure_grad(*root).data[0] += S(1);
  } else {
    root->grad = Tensor<S>();
    ensure_grad(*root).data[0] = S(1);
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backprop && n->grad.numel() > 0) n->backprop(*n);
  }
}

using VarF = Var<float>;
using VarD = Var<double>;

}  // namespace dacl
