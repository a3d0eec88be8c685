// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "inpaint/autodiff/ops.hpp"
#include "inpaint/core/rng.hpp"

namespace inpaint::nn {

using ad::Var;

/// Ordered, named collection of trainable leaves. Order is the registration
/// order and is what checkpoints and optimizers index by.
class ParamSet {
 public:
  Var add(std::string name, Tensor init) {
    for (const auto& n : names_)
      if (n == name) throw std::logic_error("ParamSet: duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    vars_.emplace_back(std::move(init), /*requires_grad=*/true);
    return vars_.back();
  }

  std::size_t size() const { return vars_.size(); }
  const std::vector<Var>& vars() const { return vars_; }
  std::vector<Var>& vars() { return vars_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& value(std::size_t i) const { return vars_[i].value(); }
  Tensor& mutable_value(std::size_t i) { return vars_[i].mutable_value(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const Var& v : vars_) n += v.value().size();
    return n;
  }

  bool all_finite() const {
    for (const Var& v : vars_)
      if (!v.value().all_finite()) return false;
    return true;
  }

  /// Bit-exact equality of names, shapes and values.
  bool equals(const ParamSet& o) const {
    if (names_ != o.names_) return false;
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (!(vars_[i].value() == o.vars_[i].value())) return false;
    return true;
  }

  /// Deep copy: fresh leaves holding the same values.
  ParamSet clone() const {
    ParamSet out;
    for (std::size_t i = 0; i < vars_.size(); ++i) out.add(names_[i], vars_[i].value());
    return out;
  }

  void assign(const ParamSet& o) {
    if (names_ != o.names_) throw std::invalid_argument("ParamSet::assign: parameter layout differs");
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      require_same_shape(vars_[i].value(), o.value(i), "ParamSet::assign");
      vars_[i].mutable_value() = o.value(i);
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
};

struct Conv2d {
  Var weight;
  Var bias;
  kernels::ConvGeom geom;

  Var operator()(const Var& x) const { return ad::add_bias(ad::conv2d(x, weight, geom), bias); }
  int out_channels() const { return weight.shape().n; }
};

/// Registers a conv layer with weights ~ N(0, gain^2 / fan_in) and zero bias.
inline Conv2d make_conv(ParamSet& params, const std::string& name, int in_ch, int out_ch,
                        kernels::ConvGeom geom, Rng& rng, double gain = std::sqrt(2.0)) {
  Tensor w(out_ch, in_ch, geom.kernel, geom.kernel);
  const double stddev = gain / std::sqrt(static_cast<double>(in_ch * geom.kernel * geom.kernel));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
  Conv2d c;
  c.weight = params.add(name + ".weight", std::move(w));
  c.bias = params.add(name + ".bias", Tensor(1, out_ch, 1, 1));
  c.geom = geom;
  return c;
}

}  // namespace inpaint::nn
