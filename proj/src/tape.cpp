#include "tsn/tape.hpp"

#include <stdexcept>

namespace tsn {

Var Tape::leaf(Tensor value) {
  value.check_finite("leaf");
  Node n;
  n.op = "leaf";
  n.requires_grad = value.requires_grad();
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

Var Tape::record(std::string op, Tensor value, std::initializer_list<Var> inputs,
                 Backward backward) {
  value.check_finite(op);
  Node n;
  n.op = std::move(op);
  n.inputs.assign(inputs.begin(), inputs.end());
  for (Var in : n.inputs) {
    if (in.id >= nodes_.size()) throw std::out_of_range("tape: input from another tape");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!requires_grad(v)) return;
  Tensor& buf = grad_buffer(v);
  if (buf.shape() != g.shape()) {
    throw std::invalid_argument("tape: gradient shape " + to_string(g.shape()) +
                                " for value of shape " + to_string(buf.shape()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) {
    throw std::invalid_argument("tape: backward root must be a scalar, got shape " +
                                to_string(value(root).shape()));
  }
  visited_.clear();
  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.has_grad = false;
  }
  if (!requires_grad(root)) return;
  grad_buffer(root)[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    visited_.push_back(i);
    // No nodes are appended during backward, so this reference stays valid.
    const Tensor& g = n.grad;
    g.check_finite(n.op + " (backward)");
    n.backward(*this, g);
  }
}

}  // namespace tsn
