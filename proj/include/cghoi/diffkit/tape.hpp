#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>

#include "cghoi/diffkit/tensor.hpp"

namespace cghoi::diffkit {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode recorder. Nodes are appended in evaluation order, so reverse
// insertion order is a valid reverse topological order. One tape per thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor v) { return push(std::move(v), nullptr, false, {}); }

  // Leaf that owns its value and receives a gradient.
  Var variable(Tensor v) { return push(std::move(v), nullptr, grad_enabled_, {}); }

  // Leaf bound to externally owned storage (model parameters). Binding the
  // same tensor twice returns the same node.
  Var param(const Tensor& p) {
    auto it = params_.find(&p);
    if (it != params_.end()) return {this, it->second};
    Var v = push(Tensor{}, &p, grad_enabled_, {});
    params_.emplace(&p, v.id);
    return v;
  }

  const Tensor& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Records an op result. The backward rule is kept only when some parent
  // needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }
  Var record(Tensor value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& p : parents) needs = needs || nodes_[p.id].requires_grad;
    }
    return push(std::move(value), nullptr, needs, needs ? std::move(backward) : Backward{});
  }

  // Lazily zero-initialized gradient accumulator.
  Tensor& grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 && value(id).size() != 0) n.grad = Tensor(value(id).shape());
    return n.grad;
  }
  Tensor& grad_buffer(Var v) { return grad_buffer(v.id); }

  const Tensor* grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.size() ? &n.grad : nullptr;
  }

  const Tensor* param_grad(const Tensor& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) return nullptr;
    return grad(Var{const_cast<Tape*>(this), it->second});
  }

  void backward(Var loss) {
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(value(loss.id).shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss.id)[0] += 1.0f;
    for (std::int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor v, const Tensor* external, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(v), external, Tensor{}, requires_grad, std::move(backward)});
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::uint32_t> params_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace cghoi::diffkit
