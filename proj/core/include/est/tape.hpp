// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "est/tensor.hpp"

EST_NAMESPACE_BEGIN

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  // Gradient of the last backward pass with respect to this value; empty if
  // the value did not require a gradient.
  std::span<const Real> grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Operations append nodes in execution order; backward()
// walks them in exact reverse order once, after which the tape is consumed.
class Tape {
 public:
  // Receives the node's output value and its gradient; accumulates into the
  // gradients of the node's inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor&, std::span<const Real>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf owned by the tape whose gradient is readable through Var::grad().
  Var variable(Tensor value);
  // Leaf aliasing an external tensor. The tensor is read in place and
  // backward() accumulates into its gradient buffer. Repeated calls with the
  // same tensor return the same node.
  Var parameter(Tensor& tensor);

  // Appends an interior node. `inputs` must already be on this tape.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void backward(Var loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Zero-initialised on first access.
  std::span<Real> grad(std::size_t id);
  std::span<const Real> grad_if_any(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor owned;
    Tensor* external = nullptr;
    std::vector<Real> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);
  void check_open() const;

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> parameter_ids_;
  bool consumed_ = false;
};

EST_NAMESPACE_END
