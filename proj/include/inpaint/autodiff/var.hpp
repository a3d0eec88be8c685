// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation on a dynamic graph.
//
// Backward functions are themselves written with differentiable ops, so when
// `grad(..., create_graph=true)` is requested the gradient is a graph node
// that can be differentiated again. The masked gradient penalty needs exactly
// this: the critic loss depends on d critic / d input, and its own gradient
// w.r.t. the critic weights is a mixed second derivative.

#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "inpaint/core/tensor.hpp"

namespace inpaint::ad {

class Var;

/// Computes input gradients from the output gradient. `need[i]` is false for
/// inputs whose gradient nobody asked for; the function may return an
/// undefined Var in that slot.
using BackwardFn = std::function<std::vector<Var>(const Var& grad_out, const std::vector<bool>& need)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
  // False when the backward function's result is only valid to first order
  // (e.g. uses raw kernels); create_graph through such a node is an error.
  bool twice_differentiable = true;
  const char* op = "leaf";
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return checked()->value; }
  // Only meaningful on leaves (parameters); used by optimizers.
  Tensor& mutable_value() { return checked()->value; }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_ || !node_->backward; }
  double item() const { return value().item(); }
  Node* node() const { return node_.get(); }
  const char* op() const { return checked()->op; }

 private:
  Node* checked() const {
    if (!node_) throw std::logic_error("use of undefined Var");
    return node_.get();
  }

  std::shared_ptr<Node> node_;
  friend Var make_op(Tensor, std::vector<Var>, BackwardFn, const char*, bool);
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

/// Scoped override of graph recording.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : prev_(grad_mode_flag()) { grad_mode_flag() = enabled; }
  ~GradModeGuard() { grad_mode_flag() = prev_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }

/// Wraps a computed value as an op output, recording the graph edge only when
/// grad mode is on and some input requires a gradient.
inline Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* name,
                   bool twice_differentiable = true) {
  Var out(std::move(value), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Var& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  Node* n = out.node_.get();
  n->requires_grad = true;
  n->inputs = std::move(inputs);
  n->backward = std::move(backward);
  n->op = name;
  n->twice_differentiable = twice_differentiable;
  return out;
}

}  // namespace inpaint::ad
