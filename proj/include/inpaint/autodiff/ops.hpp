// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops. Every backward here is expressed through other ops in
// this file, so gradients are themselves differentiable unless a node is
// explicitly marked otherwise.

#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "inpaint/autodiff/var.hpp"
#include "inpaint/core/kernels.hpp"

namespace inpaint::ad {

using kernels::ConvGeom;
using kernels::Resampler;

namespace detail {

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f, const char* what) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace detail

Var mul_const(const Var& a, std::shared_ptr<const Tensor> c);

inline Var add(const Var& a, const Var& b) {
  return make_op(
      detail::zip(a.value(), b.value(), [](double x, double y) { return x + y; }, "add"), {a, b},
      [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g, g}; }, "add");
}

inline Var scale(const Var& a, double s) {
  return make_op(
      detail::map(a.value(), [s](double x) { return s * x; }), {a},
      [s](const Var& g, const std::vector<bool>&) { return std::vector<Var>{scale(g, s)}; }, "scale");
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var sub(const Var& a, const Var& b) {
  return make_op(
      detail::zip(a.value(), b.value(), [](double x, double y) { return x - y; }, "sub"), {a, b},
      [](const Var& g, const std::vector<bool>& need) {
        return std::vector<Var>{g, need[1] ? neg(g) : Var{}};
      },
      "sub");
}

inline Var add_scalar(const Var& a, double s) {
  return make_op(
      detail::map(a.value(), [s](double x) { return x + s; }), {a},
      [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g}; }, "add_scalar");
}

inline Var mul(const Var& a, const Var& b) {
  return make_op(
      detail::zip(a.value(), b.value(), [](double x, double y) { return x * y; }, "mul"), {a, b},
      [a, b](const Var& g, const std::vector<bool>& need) {
        return std::vector<Var>{need[0] ? mul(g, b) : Var{}, need[1] ? mul(g, a) : Var{}};
      },
      "mul");
}

inline Var div(const Var& a, const Var& b) {
  return make_op(
      detail::zip(a.value(), b.value(), [](double x, double y) { return x / y; }, "div"), {a, b},
      [a, b](const Var& g, const std::vector<bool>& need) {
        Var ga = need[0] ? div(g, b) : Var{};
        Var gb = need[1] ? neg(div(mul(g, a), mul(b, b))) : Var{};
        return std::vector<Var>{ga, gb};
      },
      "div");
}

/// Elementwise product with a constant (non-differentiable) tensor.
inline Var mul_const(const Var& a, std::shared_ptr<const Tensor> c) {
  Tensor v = detail::zip(a.value(), *c, [](double x, double y) { return x * y; }, "mul_const");
  return make_op(
      std::move(v), {a},
      [c](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, c)}; },
      "mul_const");
}

inline Var mul_const(const Var& a, Tensor c) {
  return mul_const(a, std::make_shared<const Tensor>(std::move(c)));
}

inline Var sqrt(const Var& a) {
  return make_op(
      detail::map(a.value(), [](double x) { return std::sqrt(x); }), {a},
      [a](const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{div(g, scale(sqrt(a), 2.0))};
      },
      "sqrt");
}

/// sqrt whose derivative at 0 is taken as 0 instead of infinity. First order
/// only (the coefficient is treated as a constant).
inline Var safe_sqrt(const Var& a) {
  auto coeff = std::make_shared<Tensor>(detail::map(a.value(), [](double x) { return x > 0 ? 0.5 / std::sqrt(x) : 0.0; }));
  return make_op(
      detail::map(a.value(), [](double x) { return std::sqrt(x); }), {a},
      [coeff](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, coeff)}; }, "safe_sqrt",
      /*twice_differentiable=*/false);
}

inline Var abs(const Var& a) {
  auto sign = std::make_shared<const Tensor>(
      detail::map(a.value(), [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }));
  return make_op(
      detail::map(a.value(), [](double x) { return std::fabs(x); }), {a},
      [sign](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, sign)}; },
      "abs");
}

inline Var leaky_relu(const Var& a, double slope) {
  auto slopes = std::make_shared<const Tensor>(
      detail::map(a.value(), [slope](double x) { return x > 0 ? 1.0 : slope; }));
  return make_op(
      detail::zip(a.value(), *slopes, [](double x, double s) { return x * s; }, "leaky_relu"), {a},
      [slopes](const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{mul_const(g, slopes)};
      },
      "leaky_relu");
}

/// g * elu'(x). Its own backward treats elu'' as a constant, which is exact to
/// second order only, hence not twice differentiable.
inline Var elu_backward(const Var& x, const Var& g, double alpha) {
  Tensor v = detail::zip(
      x.value(), g.value(),
      [alpha](double xv, double gv) { return gv * (xv > 0 ? 1.0 : alpha * std::exp(xv)); }, "elu_backward");
  return make_op(
      std::move(v), {x, g},
      [x, g, alpha](const Var& u, const std::vector<bool>& need) {
        Var gx, gg;
        if (need[0]) {
          auto second = std::make_shared<const Tensor>(
              detail::map(x.value(), [alpha](double xv) { return xv > 0 ? 0.0 : alpha * std::exp(xv); }));
          gx = mul(mul_const(u, second), g);
        }
        if (need[1]) gg = elu_backward(x, u, alpha);
        return std::vector<Var>{gx, gg};
      },
      "elu_backward", /*twice_differentiable=*/false);
}

inline Var elu(const Var& a, double alpha = 1.0) {
  return make_op(
      detail::map(a.value(), [alpha](double x) { return x > 0 ? x : alpha * (std::exp(x) - 1.0); }), {a},
      [a, alpha](const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{elu_backward(a, g, alpha)};
      },
      "elu");
}

/// Elementwise clamp; gradient passes only where lo < x < hi.
inline Var clip(const Var& a, double lo, double hi) {
  auto inside = std::make_shared<const Tensor>(
      detail::map(a.value(), [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; }));
  return make_op(
      detail::map(a.value(), [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); }), {a},
      [inside](const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{mul_const(g, inside)};
      },
      "clip");
}

// ---- reductions and their broadcasts ---------------------------------------

Var broadcast_to(const Var& s, Shape shape);

inline Var sum_all(const Var& a) {
  Shape shape = a.shape();
  return make_op(
      Tensor::scalar(a.value().sum()), {a},
      [shape](const Var& g, const std::vector<bool>&) { return std::vector<Var>{broadcast_to(g, shape)}; },
      "sum_all");
}

inline Var broadcast_to(const Var& s, Shape shape) {
  if (s.value().size() != 1) throw std::invalid_argument("broadcast_to: source must be a scalar");
  return make_op(
      Tensor(shape, s.value()[0]), {s},
      [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum_all(g)}; }, "broadcast_to");
}

inline Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var broadcast_samples(const Var& s, Shape shape);

/// Per-sample sum: N x C x H x W -> N x 1 x 1 x 1.
inline Var sum_per_sample(const Var& a) {
  const Tensor& v = a.value();
  Tensor out(v.n(), 1, 1, 1);
  for (int n = 0; n < v.n(); ++n) {
    double s = 0.0;
    const double* p = v.sample(n);
    for (std::size_t i = 0; i < v.sample_size(); ++i) s += p[i];
    out[n] = s;
  }
  Shape shape = v.shape();
  return make_op(
      std::move(out), {a},
      [shape](const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{broadcast_samples(g, shape)};
      },
      "sum_per_sample");
}

inline Var broadcast_samples(const Var& s, Shape shape) {
  const Tensor& v = s.value();
  if (v.n() != shape.n || v.sample_size() != 1)
    throw std::invalid_argument("broadcast_samples: source must be N x 1 x 1 x 1");
  Tensor out(shape);
  for (int n = 0; n < shape.n; ++n) std::fill(out.sample(n), out.sample(n) + out.sample_size(), v[n]);
  return make_op(
      std::move(out), {s},
      [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum_per_sample(g)}; },
      "broadcast_samples");
}

Var broadcast_channels(const Var& b, Shape shape);

/// Sum over batch and spatial axes: N x C x H x W -> 1 x C x 1 x 1.
inline Var channel_sum(const Var& a) {
  const Tensor& v = a.value();
  Tensor out(1, v.c(), 1, 1);
  const std::size_t plane = static_cast<std::size_t>(v.h()) * v.w();
  for (int n = 0; n < v.n(); ++n)
    for (int c = 0; c < v.c(); ++c) {
      const double* p = v.sample(n) + c * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out[c] += s;
    }
  Shape shape = v.shape();
  return make_op(
      std::move(out), {a},
      [shape](const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{broadcast_channels(g, shape)};
      },
      "channel_sum");
}

inline Var broadcast_channels(const Var& b, Shape shape) {
  const Tensor& v = b.value();
  if (v.n() != 1 || v.c() != shape.c || v.h() != 1 || v.w() != 1)
    throw std::invalid_argument("broadcast_channels: bias must be 1 x C x 1 x 1");
  Tensor out(shape);
  const std::size_t plane = static_cast<std::size_t>(shape.h) * shape.w;
  for (int n = 0; n < shape.n; ++n)
    for (int c = 0; c < shape.c; ++c) {
      double* p = out.sample(n) + c * plane;
      std::fill(p, p + plane, v[c]);
    }
  return make_op(
      std::move(out), {b},
      [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{channel_sum(g)}; },
      "broadcast_channels");
}

inline Var add_bias(const Var& y, const Var& bias) { return add(y, broadcast_channels(bias, y.shape())); }

// ---- layout ----------------------------------------------------------------

/// Same data, new shape (element count must match).
inline Var reshape(const Var& a, Shape shape) {
  if (shape.numel() != a.value().size())
    throw std::invalid_argument("reshape: cannot view " + a.shape().str() + " as " + shape.str());
  const Shape from = a.shape();
  return make_op(
      Tensor(shape, a.value().vec()), {a},
      [from](const Var& g, const std::vector<bool>&) { return std::vector<Var>{reshape(g, from)}; }, "reshape");
}

// ---- channel structure -----------------------------------------------------

Var embed_channels(const Var& a, int offset, int total);

inline Var slice_channels(const Var& a, int offset, int count) {
  const Tensor& v = a.value();
  if (offset < 0 || count < 1 || offset + count > v.c())
    throw std::invalid_argument("slice_channels: range out of bounds");
  Tensor out(v.n(), count, v.h(), v.w());
  const std::size_t plane = static_cast<std::size_t>(v.h()) * v.w();
  for (int n = 0; n < v.n(); ++n)
    std::copy(v.sample(n) + offset * plane, v.sample(n) + (offset + count) * plane, out.sample(n));
  const int total = v.c();
  return make_op(
      std::move(out), {a},
      [offset, total](const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{embed_channels(g, offset, total)};
      },
      "slice_channels");
}

/// Places `a` at channel `offset` of a zero tensor with `total` channels.
inline Var embed_channels(const Var& a, int offset, int total) {
  const Tensor& v = a.value();
  if (offset < 0 || offset + v.c() > total) throw std::invalid_argument("embed_channels: range out of bounds");
  Tensor out(v.n(), total, v.h(), v.w());
  const std::size_t plane = static_cast<std::size_t>(v.h()) * v.w();
  for (int n = 0; n < v.n(); ++n) std::copy(v.sample(n), v.sample(n) + v.sample_size(), out.sample(n) + offset * plane);
  const int count = v.c();
  return make_op(
      std::move(out), {a},
      [offset, count](const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{slice_channels(g, offset, count)};
      },
      "embed_channels");
}

inline Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape s0 = parts.front().shape();
  int total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw std::invalid_argument("concat_channels: incompatible shapes " + s0.str() + " and " + s.str());
    total += s.c;
  }
  Tensor out(s0.n, total, s0.h, s0.w);
  const std::size_t plane = static_cast<std::size_t>(s0.h) * s0.w;
  std::vector<int> offsets;
  int off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& v = p.value();
    for (int n = 0; n < s0.n; ++n) std::copy(v.sample(n), v.sample(n) + v.sample_size(), out.sample(n) + off * plane);
    off += v.c();
  }
  std::vector<int> counts;
  for (const Var& p : parts) counts.push_back(p.shape().c);
  return make_op(
      std::move(out), parts,
      [offsets, counts](const Var& g, const std::vector<bool>& need) {
        std::vector<Var> grads(offsets.size());
        for (std::size_t i = 0; i < offsets.size(); ++i)
          if (need[i]) grads[i] = slice_channels(g, offsets[i], counts[i]);
        return grads;
      },
      "concat_channels");
}

// ---- spatial rearrangements ------------------------------------------------

Var sum_pool(const Var& a, int f);

inline Var upsample_nearest(const Var& a, int f) {
  return make_op(
      kernels::upsample_nearest(a.value(), f), {a},
      [f](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum_pool(g, f)}; },
      "upsample_nearest");
}

inline Var sum_pool(const Var& a, int f) {
  return make_op(
      kernels::sum_pool(a.value(), f), {a},
      [f](const Var& g, const std::vector<bool>&) { return std::vector<Var>{upsample_nearest(g, f)}; },
      "sum_pool");
}

Var pixel_unshuffle(const Var& a, int s);

inline Var pixel_shuffle(const Var& a, int s) {
  return make_op(
      kernels::pixel_shuffle(a.value(), s), {a},
      [s](const Var& g, const std::vector<bool>&) { return std::vector<Var>{pixel_unshuffle(g, s)}; },
      "pixel_shuffle");
}

inline Var pixel_unshuffle(const Var& a, int s) {
  return make_op(
      kernels::pixel_unshuffle(a.value(), s), {a},
      [s](const Var& g, const std::vector<bool>&) { return std::vector<Var>{pixel_shuffle(g, s)}; },
      "pixel_unshuffle");
}

Var resample_adjoint(const Var& a, std::shared_ptr<const Resampler> r);

inline Var resample(const Var& a, std::shared_ptr<const Resampler> r) {
  Tensor v = r->apply(a.value());
  return make_op(
      std::move(v), {a},
      [r](const Var& g, const std::vector<bool>&) { return std::vector<Var>{resample_adjoint(g, r)}; },
      "resample");
}

inline Var resample_adjoint(const Var& a, std::shared_ptr<const Resampler> r) {
  Tensor v = r->apply_adjoint(a.value());
  return make_op(
      std::move(v), {a},
      [r](const Var& g, const std::vector<bool>&) { return std::vector<Var>{resample(g, r)}; },
      "resample_adjoint");
}

// ---- convolution family ----------------------------------------------------
// conv2d(x, w), its input gradient (transposed conv) and its weight gradient
// are three bilinear maps whose partial derivatives are each other, which
// closes the family under differentiation.

Var conv2d_input_grad(const Var& gy, const Var& weight, const ConvGeom& geom, int in_h, int in_w);
Var conv2d_weight_grad(const Var& x, const Var& gy, const ConvGeom& geom);

inline Var conv2d(const Var& x, const Var& weight, const ConvGeom& geom) {
  const int H = x.shape().h, W = x.shape().w;
  return make_op(
      kernels::conv2d(x.value(), weight.value(), geom), {x, weight},
      [x, weight, geom, H, W](const Var& g, const std::vector<bool>& need) {
        Var gx = need[0] ? conv2d_input_grad(g, weight, geom, H, W) : Var{};
        Var gw = need[1] ? conv2d_weight_grad(x, g, geom) : Var{};
        return std::vector<Var>{gx, gw};
      },
      "conv2d");
}

inline Var conv2d_input_grad(const Var& gy, const Var& weight, const ConvGeom& geom, int in_h, int in_w) {
  return make_op(
      kernels::conv2d_input_grad(gy.value(), weight.value(), geom, in_h, in_w), {gy, weight},
      [gy, weight, geom](const Var& u, const std::vector<bool>& need) {
        Var g_gy = need[0] ? conv2d(u, weight, geom) : Var{};
        Var g_w = need[1] ? conv2d_weight_grad(u, gy, geom) : Var{};
        return std::vector<Var>{g_gy, g_w};
      },
      "conv2d_input_grad");
}

inline Var conv2d_weight_grad(const Var& x, const Var& gy, const ConvGeom& geom) {
  const int H = x.shape().h, W = x.shape().w;
  return make_op(
      kernels::conv2d_weight_grad(x.value(), gy.value(), geom), {x, gy},
      [x, gy, geom, H, W](const Var& v, const std::vector<bool>& need) {
        Var g_x = need[0] ? conv2d_input_grad(gy, v, geom, H, W) : Var{};
        Var g_gy = need[1] ? conv2d(x, v, geom) : Var{};
        return std::vector<Var>{g_x, g_gy};
      },
      "conv2d_weight_grad");
}

}  // namespace inpaint::ad
