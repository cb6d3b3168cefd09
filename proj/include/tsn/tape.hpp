#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "tsn/tensor.hpp"

namespace tsn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Records differentiable operations in execution order and replays them
/// backwards. Single-threaded; one tape per forward pass.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  /// Leaf value; differentiable iff value.requires_grad().
  Var leaf(Tensor value);
  Var constant(Tensor value);

  /// Records an op output. The op is differentiable iff any input is; the
  /// backward closure is dropped otherwise.
  Var record(std::string op, Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }
  const std::vector<Var>& inputs(Var v) const { return nodes_.at(v.id).inputs; }

  /// Gradient accumulated by backward(); zeros if the node received none.
  Tensor grad(Var v) const;

  /// Zero-initialized accumulation buffer for `v` (allocated on first use).
  Tensor& grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);

  /// Seeds d(root)/d(root) = 1 (root must hold a single element) and visits
  /// every recorded op in reverse order.
  void backward(Var root);

  /// Node ids whose backward closure ran during the last backward(), in order.
  const std::vector<std::size_t>& last_backward_order() const { return visited_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<Var> inputs;
    bool requires_grad = false;
    Backward backward;
    Tensor grad;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> visited_;
};

}  // namespace tsn
