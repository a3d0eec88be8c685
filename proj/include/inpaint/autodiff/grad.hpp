// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "inpaint/autodiff/ops.hpp"

namespace inpaint::ad {

/// Gradients of `output` w.r.t. each of `inputs`.
///
/// `grad_output` seeds the backward pass (defaults to ones, i.e. the gradient
/// of the sum of `output`). Only nodes lying on a path from some input to the
/// output are visited. With `create_graph` the returned gradients carry a
/// graph and can be differentiated again. Inputs that do not influence the
/// output get a zero gradient.
inline std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, const Var& grad_output = {},
                             bool create_graph = false) {
  std::vector<Var> result(inputs.size());
  auto zeros_for = [&](std::size_t i) { return Var(Tensor(inputs[i].shape())); };
  if (!output.requires_grad()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) result[i] = zeros_for(i);
    return result;
  }

  std::unordered_set<Node*> targets;
  for (const Var& in : inputs)
    if (in.defined()) targets.insert(in.node());

  // Iterative post-order DFS over grad-requiring nodes; `reaches` marks nodes
  // with a target somewhere below them.
  std::vector<Node*> order;
  std::unordered_map<Node*, bool> reaches;
  struct Frame {
    Node* node;
    std::size_t next;
  };
  std::vector<Frame> stack{{output.node(), 0}};
  reaches[output.node()] = targets.count(output.node()) > 0;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->inputs.size()) {
      Node* child = f.node->inputs[f.next++].node();
      if (child->requires_grad && !reaches.count(child)) {
        reaches[child] = targets.count(child) > 0;
        stack.push_back({child, 0});
      }
      continue;
    }
    Node* done = f.node;
    stack.pop_back();
    for (const Var& in : done->inputs)
      if (in.requires_grad() && reaches[in.node()]) reaches[done] = true;
    order.push_back(done);
  }

  std::unordered_map<Node*, Var> grads;
  {
    GradModeGuard mode(create_graph);
    grads[output.node()] = grad_output.defined() ? grad_output : Var(Tensor(output.shape(), 1.0));
  }
  if (grads[output.node()].shape() != output.shape())
    throw std::invalid_argument("grad: grad_output shape does not match output");

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || !reaches[n]) continue;
    auto g = grads.find(n);
    if (g == grads.end()) continue;
    std::vector<bool> need(n->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      const Var& in = n->inputs[i];
      need[i] = in.requires_grad() && reaches[in.node()];
      any = any || need[i];
    }
    if (!any) continue;
    if (create_graph && !n->twice_differentiable)
      throw std::logic_error(std::string("grad: op '") + n->op + "' does not support create_graph");
    GradModeGuard mode(create_graph);
    std::vector<Var> in_grads = n->backward(g->second, need);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (!need[i] || !in_grads[i].defined()) continue;
      Node* in = n->inputs[i].node();
      if (in_grads[i].shape() != in->value.shape())
        throw std::logic_error(std::string("grad: op '") + n->op + "' produced gradient of shape " +
                               in_grads[i].shape().str() + " for input " + in->value.shape().str());
      auto [slot, fresh] = grads.try_emplace(in, in_grads[i]);
      if (!fresh) slot->second = add(slot->second, in_grads[i]);
    }
    // Free intermediate gradients as soon as they have been propagated.
    if (!targets.count(n)) grads.erase(n);
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto g = inputs[i].defined() ? grads.find(inputs[i].node()) : grads.end();
    result[i] = g != grads.end() ? g->second : zeros_for(i);
  }
  return result;
}

/// First-order gradients as plain tensors.
inline std::vector<Tensor> grad_values(const Var& output, const std::vector<Var>& inputs) {
  std::vector<Var> g = grad(output, inputs);
  std::vector<Tensor> out;
  out.reserve(g.size());
  for (Var& v : g) out.push_back(v.value());
  return out;
}

}  // namespace inpaint::ad
