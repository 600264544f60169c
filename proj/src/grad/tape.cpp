#include "ssm/grad/tape.hpp"

#include <cmath>
#include <cstring>

namespace ssm::grad {

std::size_t element_count(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

NonFiniteError::NonFiniteError(const std::string& op, std::size_t index)
    : std::runtime_error("non-finite value produced by '" + op + "' at tape index " + std::to_string(index)),
      index_(index) {}

Var Tape::leaf(std::string name, Shape shape, std::vector<double> value, bool needs_grad) {
  if (value.size() != element_count(shape)) {
    throw std::invalid_argument("leaf '" + name + "' value does not match its shape");
  }
  Node n;
  n.op = std::move(name);
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  for (double v : n.value) {
    if (!std::isfinite(v)) throw NonFiniteError(n.op, nodes_.size());
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(std::string op, Shape shape, std::vector<Var> inputs, std::size_t steps,
                 std::function<void(const Tape&, Node&)> forward, std::function<void(Tape&, const Node&)> backward) {
  Node n;
  n.op = std::move(op);
  n.shape = std::move(shape);
  n.inputs = std::move(inputs);
  n.steps = steps;
  for (Var in : n.inputs) n.needs_grad = n.needs_grad || nodes_.at(in.id).needs_grad;
  n.value.assign(element_count(n.shape), 0.0);
  forward(*this, n);
  for (double v : n.value) {
    if (!std::isfinite(v)) throw NonFiniteError(n.op, nodes_.size());
  }
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

double* Tape::grad_target(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad.data();
}

void Tape::backward(Var out, std::span<const double> cotangent) {
  Node& root = nodes_.at(out.id);
  if (cotangent.size() != root.value.size()) {
    throw std::invalid_argument("cotangent has " + std::to_string(cotangent.size()) + " entries, output has " +
                                std::to_string(root.value.size()));
  }
  if (!root.needs_grad) return;
  double* g = grad_target(out);
  for (std::size_t i = 0; i < cotangent.size(); ++i) g[i] += cotangent[i];
  for (std::size_t i = out.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.clear();
}

std::size_t Tape::records() const noexcept {
  std::size_t total = 0;
  for (const auto& n : nodes_) total += n.steps;
  return total;
}

std::optional<std::size_t> Tape::replay_mismatch() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.forward) continue;
    Node copy;
    copy.shape = n.shape;
    copy.inputs = n.inputs;
    copy.value.assign(n.value.size(), 0.0);
    n.forward(*this, copy);
    if (std::memcmp(copy.value.data(), n.value.data(), n.value.size() * sizeof(double)) != 0) return i;
  }
  return std::nullopt;
}

}  // namespace ssm::grad
