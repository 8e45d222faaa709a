#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rangeda/diffcore/tensor.hpp"

namespace rangeda {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // allocated iff requires_grad (intermediates: at replay)
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) {
      grad = Tensor<Scalar>(value.shape());
    }
  }
};

namespace detail {

inline std::uint64_t next_seq() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Shared handle to a node in the differentiation graph.
template <typename Scalar>
class Var {
 public:
  using NodeT = Node<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

  static Var constant(Tensor<Scalar> value) {
    auto node = std::make_shared<NodeT>();
    node->value = std::move(value);
    node->seq = detail::next_seq();
    return Var(std::move(node));
  }

  static Var parameter(Tensor<Scalar> value) {
    auto node = std::make_shared<NodeT>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->ensure_grad();
    node->seq = detail::next_seq();
    return Var(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->value.size() > 0; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  Index size() const { return node_->value.size(); }

  Var detach() const { return constant(node_->value); }

  void zero_grad() {
    if (node_->requires_grad) {
      node_->ensure_grad();
      node_->grad.array().setZero();
    }
  }

  const std::shared_ptr<NodeT>& node() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

namespace detail {

/// Creates the output node of an op. The backward closure is attached only
/// when recording is enabled and at least one input is tracked.
template <typename Scalar, typename Backward>
Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                   Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->seq = next_seq();
  if (grad_mode()) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->is_leaf = false;
    for (const auto& in : inputs) {
      if (in.defined()) node->parents.push_back(in.node());
    }
    node->backward = std::forward<Backward>(backward);
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar>
void accumulate(const Var<Scalar>& v, const Tensor<Scalar>& g) {
  if (!v.requires_grad()) return;
  auto& node = *v.node();
  node.ensure_grad();
  node.grad.array() += g.array();
}

}  // namespace detail

/// Ordered record of the operations reachable from a loss.
///
/// Nodes are kept in creation order, which is a topological order because
/// every op output is created after its inputs. Replaying in reverse visits
/// each node once, after all of its consumers.
template <typename Scalar>
class Tape {
 public:
  explicit Tape(const Var<Scalar>& root) {
    std::vector<Node<Scalar>*> stack{root.node().get()};
    std::unordered_set<Node<Scalar>*> seen{root.node().get()};
    while (!stack.empty()) {
      Node<Scalar>* n = stack.back();
      stack.pop_back();
      if (!n->is_leaf) entries_.push_back(n);
      for (const auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
    std::sort(entries_.begin(), entries_.end(),
              [](const Node<Scalar>* a, const Node<Scalar>* b) { return a->seq < b->seq; });
  }

  std::size_t size() const { return entries_.size(); }

  // Seeds d(root)/d(root) = 1 and runs every backward closure once.
  void replay(Node<Scalar>& root) {
    for (auto* n : entries_) {
      n->ensure_grad();
      n->grad.array().setZero();
    }
    root.grad.array().setOnes();
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      (*it)->backward(**it);
    }
  }

  // Releases closures and intermediate buffers; leaf gradients stay.
  void clear() {
    for (auto* n : entries_) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad = Tensor<Scalar>();
      n->requires_grad = false;
    }
    entries_.clear();
  }

 private:
  std::vector<Node<Scalar>*> entries_;
};

/// Accumulates d(loss)/d(param) into every tracked leaf reachable from `loss`.
template <typename Scalar>
void backward(const Var<Scalar>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward: loss must be a scalar, got " +
                     (loss.defined() ? loss.shape().str() : std::string("undefined")));
  }
  if (!loss.requires_grad() || loss.node()->is_leaf) {
    throw UsageError("backward: loss is not on the tape");
  }
  Tape<Scalar> tape(loss);
  tape.replay(*loss.node());
  tape.clear();
}

}  // namespace rangeda
