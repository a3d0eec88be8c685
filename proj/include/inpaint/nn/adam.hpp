// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "inpaint/nn/params.hpp"

namespace inpaint::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;
};

/// First/second moment estimates, one pair per parameter of a ParamSet.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  static AdamState for_params(const ParamSet& p) {
    AdamState s;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.m.emplace_back(p.value(i).shape());
      s.v.emplace_back(p.value(i).shape());
    }
    return s;
  }

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update in place.
inline void adam_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: gradient/state count does not match parameters");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.mutable_value(i);
    const Tensor& g = grads[i];
    require_same_shape(p, g, "adam_step");
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double step = cfg.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.epsilon);
      if (step != 0.0) p[k] -= step;
    }
  }
}

}  // namespace inpaint::nn
