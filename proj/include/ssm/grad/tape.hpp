#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssm::grad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape) noexcept;

/// Handle to a tape node.
struct Var {
  static constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::size_t id = none;
  bool valid() const noexcept { return id != none; }
};

/// A forward value came out NaN or infinite.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& op, std::size_t index);
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Reverse-mode tape over sequence-level tensors. Nodes are appended in
/// evaluation order; each keeps its forward value, the callbacks needed to
/// recompute it and to push its adjoint to its inputs, and any state saved for
/// the backward pass.
class Tape {
 public:
  struct Node {
    std::string op;
    Shape shape;
    std::vector<Var> inputs;
    std::vector<double> value;
    std::vector<double> grad;  // empty until an adjoint reaches the node
    std::vector<double> saved;
    bool needs_grad = false;
    std::size_t steps = 1;  // primitive records this node stands for
    std::function<void(const Tape&, Node&)> forward;
    std::function<void(Tape&, const Node&)> backward;
  };

  /// Input or parameter. Gradients are only propagated toward leaves marked
  /// as needing them.
  Var leaf(std::string name, Shape shape, std::vector<double> value, bool needs_grad);
  Var constant(Shape shape, std::vector<double> value) { return leaf("const", std::move(shape), std::move(value), false); }

  /// Evaluates `forward` into a new node and records it. `steps` is the number
  /// of per-token records the node represents (T for sequence ops).
  Var record(std::string op, Shape shape, std::vector<Var> inputs, std::size_t steps,
             std::function<void(const Tape&, Node&)> forward, std::function<void(Tape&, const Node&)> backward);

  const Node& node(Var v) const { return nodes_.at(v.id); }
  const std::vector<double>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).shape; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient accumulated at v (zeros if nothing reached it).
  std::vector<double> grad(Var v) const;
  /// Adjoint buffer of v for accumulation inside backward callbacks; nullptr
  /// when v does not need a gradient.
  double* grad_target(Var v);

  /// Seeds d<cotangent, value(out)> and propagates to every node that needs it.
  void backward(Var out, std::span<const double> cotangent);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Total primitive records: one per leaf, `steps` per operation.
  std::size_t records() const noexcept;

  /// Recomputes every operation from the stored inputs and returns the index
  /// of the first node whose value differs bitwise, if any.
  std::optional<std::size_t> replay_mismatch() const;

 private:
  std::vector<Node> nodes_;
};

}  // namespace ssm::grad
