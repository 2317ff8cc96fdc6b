// SPDX-License-Identifier: Apache-2.0
#include "est/tape.hpp"

#include <algorithm>

#include "est/errors.hpp"

EST_NAMESPACE_BEGIN

const Tensor& Var::value() const { return tape_->value(id_); }

std::span<const Real> Var::grad() const { return tape_->grad_if_any(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_open() const {
  if (consumed_) throw StateError("tape already consumed by backward()");
}

Var Tape::constant(Tensor value) {
  check_open();
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  check_open();
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(Tensor& tensor) {
  check_open();
  if (auto it = parameter_ids_.find(&tensor); it != parameter_ids_.end()) return Var(this, it->second);
  Node n;
  n.external = &tensor;
  n.requires_grad = true;
  n.backward = [&tensor](Tape&, const Tensor&, std::span<const Real> g) {
    auto dst = tensor.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  };
  Var v = push(std::move(n));
  parameter_ids_.emplace(&tensor, v.id());
  return v;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  check_open();
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw StateError("operand recorded on a different tape");
    if (in.id() >= nodes_.size()) throw StateError("operand recorded after its consumer");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

std::span<Real> Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), Real{0});
  return n.grad;
}

void Tape::backward(Var loss) {
  check_open();
  if (&loss.tape() != this) throw StateError("loss recorded on a different tape");
  if (loss.value().size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad(loss.id())[0] = Real{1};
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, value(i), n.grad);
  }
}

EST_NAMESPACE_END
