#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mergeguard/autodiff/tensor.hpp"

namespace mergeguard::ad {

/// Handle to a node recorded on a Tape. Only meaningful for the tape that
/// produced it.
class Var {
 public:
  Var() = default;
  std::size_t index() const noexcept { return index_; }

 private:
  template <typename>
  friend class Tape;
  explicit Var(std::size_t index) : index_(index) {}
  std::size_t index_ = 0;
};

/// Records a computation as an append-only list of nodes. Creation order is
/// a topological order, so backward() replays the list in reverse and visits
/// each node once. A tape is confined to one thread.
template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  // Called during backward with the node's own index; must accumulate into
  // the gradients of the node's parents via grad_of().
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  /// A leaf whose gradient is tracked.
  Var variable(TensorT value) { return push(std::move(value), true, {}, nullptr); }

  /// A leaf treated as constant; never receives gradient.
  Var constant(TensorT value) { return push(std::move(value), false, {}, nullptr); }

  /// Records an operation. The node requires gradient iff any parent does;
  /// otherwise the backward function is dropped.
  Var record(TensorT value, std::vector<std::size_t> parents, BackwardFn backward) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
    if (!needs) return push(std::move(value), false, {}, nullptr);
    return push(std::move(value), true, std::move(parents), std::move(backward));
  }

  const TensorT& value(Var v) const { return nodes_.at(v.index()).value; }
  const TensorT& value_at(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(Var v) const { return nodes_.at(v.index()).requires_grad; }
  bool requires_grad_at(std::size_t i) const { return nodes_[i].requires_grad; }

  /// Gradient of the last backward() loss w.r.t. v; zeros if v was not
  /// reached or does not require gradient.
  TensorT grad(Var v) const {
    const Node& n = nodes_.at(v.index());
    if (n.grad.size() != n.value.size()) return TensorT(n.value.shape());
    return n.grad;
  }

  /// Mutable gradient buffer used by backward functions.
  TensorT& grad_of(std::size_t i) { return nodes_[i].grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss) {
    Node& root = nodes_.at(loss.index());
    if (root.value.size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " +
                          shape_string(root.value.shape()));
    }
    for (Node& n : nodes_) {
      if (n.requires_grad) {
        n.grad = TensorT(n.value.shape());
      } else {
        n.grad = TensorT();
      }
    }
    if (!root.requires_grad) return;
    root.grad[0] = T{1};
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(TensorT value, bool requires_grad, std::vector<std::size_t> parents,
           BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), TensorT(), std::move(parents), std::move(backward),
                          requires_grad});
    return Var(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace mergeguard::ad
