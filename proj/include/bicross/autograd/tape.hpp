#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>

#include "bicross/core/error.hpp"
#include "bicross/core/tensor.hpp"

namespace bicross::ag {

class Tape;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::function<void(Node&)> backward;  // pushes this node's grad into its inputs
};

// Handle into a tape; cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  Node& node() const;
  const Tensor& value() const { return node().value; }
  bool requires_grad() const { return node().requires_grad; }
  // Gradient accumulator, allocated as zeros on first access.
  Tensor& grad() const;
  bool has_grad() const { return !node().grad.empty(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Dynamic reverse-mode tape. Nodes are recorded in creation order, which is
// a topological order, so backward is a single reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    return Var(this, nodes_.size() - 1);
  }

  // Records an op result. The closure only survives if some input needs grad.
  Var record(Tensor value, bool any_input_requires_grad, std::function<void(Node&)> backward) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = any_input_requires_grad && grad_enabled_;
    if (n.requires_grad) n.backward = std::move(backward);
    return Var(this, nodes_.size() - 1);
  }

  Node& node(std::size_t id) { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  // Seeds d(root)/d(root) = seed and sweeps back to the leaves.
  void backward(const Var& root, double seed = 1.0) {
    if (root.tape() != this) throw InvalidInput("backward root belongs to a different tape");
    Node& r = nodes_.at(root.id());
    if (r.value.size() != 1) throw InvalidInput("backward root must be a scalar");
    if (!r.requires_grad) return;
    if (r.grad.empty()) r.grad = Tensor::zeros_like(r.value);
    r.grad[0] += seed;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(n);
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

inline Node& Var::node() const { return tape_->node(id_); }

inline Tensor& Var::grad() const {
  Node& n = node();
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

// RAII: disables recording of backward closures for its lifetime.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.grad_enabled()) { tape_.set_grad_enabled(false); }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

}  // namespace bicross::ag
