// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Contextual attention: every foreground location is reconstructed as a
// softmax-weighted blend of background patches taken from known regions.
//
// Per sample, with K = C * k * k:
//   fg patches   Phi : K x P   (every location, zero padded)
//   bg patches   R   : K x Q   (centres on a stride-s grid)
//   normalised   N_q = R_q / max(|R_q|, eps)
//   scores       S   = Phi^T N            (P x Q)
//   propagation  S <- shift-sum of S along x, then y (fg and bg shifted together)
//   attention    A   = softmax_q(lambda * S), invalid patches at -inf
//   output       col2im(R A^T) / coverage   (overlapping patches averaged)

#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "inpaint/autodiff/ops.hpp"
#include "inpaint/core/kernels.hpp"

namespace inpaint {

struct AttentionParams {
  int patch_size = 3;
  int stride = 1;
  double softmax_scale = 10.0;
  int propagation_size = 3;  // 1 disables propagation
  double valid_patch_threshold = 1.0;
  double norm_epsilon = 1e-4;

  void validate() const {
    if (patch_size < 1 || patch_size % 2 == 0) throw std::invalid_argument("AttentionParams: patch_size must be odd and >= 1");
    if (stride < 1) throw std::invalid_argument("AttentionParams: stride must be >= 1");
    if (!(softmax_scale > 0)) throw std::invalid_argument("AttentionParams: softmax_scale must be > 0");
    if (propagation_size < 1 || propagation_size % 2 == 0)
      throw std::invalid_argument("AttentionParams: propagation_size must be odd and >= 1");
    if (!(valid_patch_threshold >= 0 && valid_patch_threshold <= 1))
      throw std::invalid_argument("AttentionParams: valid_patch_threshold must lie in [0, 1]");
    if (!(norm_epsilon > 0)) throw std::invalid_argument("AttentionParams: norm_epsilon must be > 0");
  }

  bool operator==(const AttentionParams&) const = default;
};

namespace attention_detail {

using kernels::RowMat;

struct SampleCache {
  RowMat phi;       // K x P
  RowMat raw;       // K x Q
  RowMat normed;    // K x Q
  std::vector<double> norms;
  std::vector<bool> clamped;  // norm fell below epsilon
  RowMat attention;  // P x Q
};

struct Cache {
  int C = 0, h = 0, w = 0, gh = 0, gw = 0;
  AttentionParams params;
  std::vector<double> coverage;  // h x w
  std::vector<SampleCache> samples;
};

// Shift-sum of a P x Q score matrix: out(p, q) = sum_t in(p + t*dp, q + t*dq)
// along one grid axis. `adjoint` applies the transposed map (shifts negated).
inline void propagate_axis(const RowMat& in, RowMat& out, int h, int w, int gh, int gw, int radius, bool along_x,
                           bool adjoint) {
  out.setZero(in.rows(), in.cols());
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      const int p = py * w + px;
      for (int qi = 0; qi < gh; ++qi)
        for (int qj = 0; qj < gw; ++qj) {
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            const int s = adjoint ? -t : t;
            int ppy = py, ppx = px, qqi = qi, qqj = qj;
            if (along_x) {
              ppx += s;
              qqj += s;
            } else {
              ppy += s;
              qqi += s;
            }
            if (ppy < 0 || ppy >= h || ppx < 0 || ppx >= w || qqi < 0 || qqi >= gh || qqj < 0 || qqj >= gw) continue;
            acc += in(ppy * w + ppx, qqi * gw + qqj);
          }
          out(p, qi * gw + qj) = acc;
        }
    }
}

}  // namespace attention_detail

struct AttentionResult {
  Tensor output;
  // Per sample, a P x Q row-major matrix of attention weights (P = h*w fg
  // locations, Q = bg patch grid cells, row-major over the grid).
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<bool>> valid;  // per sample, per bg patch
  int grid_h = 0, grid_w = 0;
};

/// Raw forward. `known` is N x 1 x h x w (1 = known) at feature resolution.
/// When `cache` is non-null it receives what the backward pass needs.
inline AttentionResult contextual_attention_forward(const Tensor& fg, const Tensor& bg, const Tensor& known,
                                                    const AttentionParams& p,
                                                    attention_detail::Cache* cache = nullptr) {
  using attention_detail::RowMat;
  p.validate();
  require_same_shape(fg, bg, "contextual_attention");
  if (known.n() != fg.n() || known.c() != 1 || known.h() != fg.h() || known.w() != fg.w())
    throw std::invalid_argument("contextual_attention: mask must be N x 1 x h x w at feature resolution");
  const int N = fg.n(), C = fg.c(), h = fg.h(), w = fg.w();
  const int k = p.patch_size, r = k / 2;
  const kernels::ConvGeom fg_geom{k, 1, r, 1};
  const kernels::ConvGeom bg_geom{k, p.stride, r, 1};
  const int gh = bg_geom.out_size(h), gw = bg_geom.out_size(w);
  const int K = C * k * k, P = h * w, Q = gh * gw;
  const int prop_r = p.propagation_size / 2;

  // coverage(y, x): number of in-frame fg windows containing the pixel.
  std::vector<double> coverage(static_cast<std::size_t>(P), 0.0);
  {
    std::vector<double> ones(static_cast<std::size_t>(k) * k * P, 1.0);
    kernels::col2im(ones.data(), 1, h, w, fg_geom, h, w, coverage.data());
  }

  AttentionResult res;
  res.output = Tensor(fg.shape());
  res.grid_h = gh;
  res.grid_w = gw;
  if (cache) {
    cache->C = C, cache->h = h, cache->w = w, cache->gh = gh, cache->gw = gw;
    cache->params = p;
    cache->coverage = coverage;
    cache->samples.clear();
  }

  for (int n = 0; n < N; ++n) {
    attention_detail::SampleCache sc;
    sc.phi.resize(K, P);
    kernels::im2col(fg.sample(n), C, h, w, fg_geom, h, w, sc.phi.data());
    sc.raw.resize(K, Q);
    kernels::im2col(bg.sample(n), C, h, w, bg_geom, gh, gw, sc.raw.data());

    // Patch validity from the hole indicator; padding counts as known.
    std::vector<double> holes(static_cast<std::size_t>(P));
    for (int i = 0; i < P; ++i) holes[i] = known.sample(n)[i] > 0.5 ? 0.0 : 1.0;
    RowMat hole_cols(k * k, Q);
    kernels::im2col(holes.data(), 1, h, w, bg_geom, gh, gw, hole_cols.data());
    std::vector<bool> valid(static_cast<std::size_t>(Q));
    bool any_valid = false;
    for (int q = 0; q < Q; ++q) {
      const double known_frac = 1.0 - hole_cols.col(q).sum() / (k * k);
      valid[q] = known_frac >= p.valid_patch_threshold - 1e-12;
      any_valid = any_valid || valid[q];
    }
    if (!any_valid)
      throw std::runtime_error("contextual_attention: no valid background patch (hole covers the whole frame)");

    sc.norms.resize(Q);
    sc.clamped.resize(Q);
    sc.normed.resize(K, Q);
    for (int q = 0; q < Q; ++q) {
      const double norm = sc.raw.col(q).norm();
      sc.clamped[q] = norm < p.norm_epsilon;
      sc.norms[q] = sc.clamped[q] ? p.norm_epsilon : norm;
      sc.normed.col(q) = sc.raw.col(q) / sc.norms[q];
    }

    RowMat scores = sc.phi.transpose() * sc.normed;  // P x Q
    if (prop_r > 0) {
      RowMat tmp;
      attention_detail::propagate_axis(scores, tmp, h, w, gh, gw, prop_r, /*along_x=*/true, false);
      attention_detail::propagate_axis(tmp, scores, h, w, gh, gw, prop_r, /*along_x=*/false, false);
    }

    sc.attention.resize(P, Q);
    for (int i = 0; i < P; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int q = 0; q < Q; ++q)
        if (valid[q]) mx = std::max(mx, p.softmax_scale * scores(i, q));
      double total = 0.0;
      for (int q = 0; q < Q; ++q) {
        const double e = valid[q] ? std::exp(p.softmax_scale * scores(i, q) - mx) : 0.0;
        sc.attention(i, q) = e;
        total += e;
      }
      sc.attention.row(i) /= total;
    }

    RowMat out_cols = sc.raw * sc.attention.transpose();  // K x P
    double* out = res.output.sample(n);
    kernels::col2im(out_cols.data(), C, h, w, fg_geom, h, w, out);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < P; ++i) out[static_cast<std::size_t>(c) * P + i] /= coverage[i];

    res.scores.emplace_back(sc.attention.data(), sc.attention.data() + sc.attention.size());
    res.valid.push_back(std::move(valid));
    if (cache) cache->samples.push_back(std::move(sc));
  }
  return res;
}

/// Raw backward: gradients w.r.t. (fg, bg) given the output gradient.
inline std::pair<Tensor, Tensor> contextual_attention_backward(const attention_detail::Cache& cache,
                                                               const Tensor& grad_out) {
  using attention_detail::RowMat;
  const int C = cache.C, h = cache.h, w = cache.w, gh = cache.gh, gw = cache.gw;
  const AttentionParams& p = cache.params;
  const int k = p.patch_size, r = k / 2;
  const kernels::ConvGeom fg_geom{k, 1, r, 1};
  const kernels::ConvGeom bg_geom{k, p.stride, r, 1};
  const int K = C * k * k, P = h * w, Q = gh * gw;
  const int prop_r = p.propagation_size / 2;
  const int N = static_cast<int>(cache.samples.size());
  Tensor gfg(N, C, h, w), gbg(N, C, h, w);

  std::vector<double> scaled(static_cast<std::size_t>(C) * P);
  for (int n = 0; n < N; ++n) {
    const auto& sc = cache.samples[n];
    const double* go = grad_out.sample(n);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < P; ++i) scaled[static_cast<std::size_t>(c) * P + i] = go[static_cast<std::size_t>(c) * P + i] / cache.coverage[i];
    RowMat psi(K, P);
    kernels::im2col(scaled.data(), C, h, w, fg_geom, h, w, psi.data());

    RowMat d_att = psi.transpose() * sc.raw;      // P x Q
    RowMat d_raw = psi * sc.attention;            // K x Q, reconstruction path

    // softmax backward, then the lambda scale
    RowMat d_scores(P, Q);
    for (int i = 0; i < P; ++i) {
      const double dot = sc.attention.row(i).dot(d_att.row(i));
      for (int q = 0; q < Q; ++q) d_scores(i, q) = p.softmax_scale * sc.attention(i, q) * (d_att(i, q) - dot);
    }
    if (prop_r > 0) {
      RowMat tmp;
      attention_detail::propagate_axis(d_scores, tmp, h, w, gh, gw, prop_r, /*along_x=*/false, /*adjoint=*/true);
      attention_detail::propagate_axis(tmp, d_scores, h, w, gh, gw, prop_r, /*along_x=*/true, /*adjoint=*/true);
    }

    RowMat d_phi = sc.normed * d_scores.transpose();  // K x P
    kernels::col2im(d_phi.data(), C, h, w, fg_geom, h, w, gfg.sample(n));

    RowMat d_normed = sc.phi * d_scores;  // K x Q
    for (int q = 0; q < Q; ++q) {
      if (sc.clamped[q]) {
        d_raw.col(q) += d_normed.col(q) / sc.norms[q];
      } else {
        const double proj = sc.normed.col(q).dot(d_normed.col(q));
        d_raw.col(q) += (d_normed.col(q) - sc.normed.col(q) * proj) / sc.norms[q];
      }
    }
    kernels::col2im(d_raw.data(), C, h, w, bg_geom, gh, gw, gbg.sample(n));
  }
  return {std::move(gfg), std::move(gbg)};
}

/// Differentiable wrapper (first order only). `scores_out`, when given,
/// receives the attention matrices of the forward pass.
inline ad::Var contextual_attention(const ad::Var& fg, const ad::Var& bg, const Tensor& known,
                                    const AttentionParams& p, AttentionResult* scores_out = nullptr) {
  auto cache = std::make_shared<attention_detail::Cache>();
  const bool record = ad::grad_enabled() && (fg.requires_grad() || bg.requires_grad());
  AttentionResult res = contextual_attention_forward(fg.value(), bg.value(), known, p, record ? cache.get() : nullptr);
  Tensor out = res.output;
  if (scores_out) *scores_out = std::move(res);
  return ad::make_op(
      std::move(out), {fg, bg},
      [cache](const ad::Var& g, const std::vector<bool>&) {
        auto [gf, gb] = contextual_attention_backward(*cache, g.value());
        return std::vector<ad::Var>{ad::Var(std::move(gf)), ad::Var(std::move(gb))};
      },
      "contextual_attention", /*twice_differentiable=*/false);
}

/// Feature-resolution mask: a cell is known only if its whole factor x factor
/// block is known. Input and output are N x 1 x H x W tensors of {0, 1}.
inline Tensor downsample_known_mask(const Tensor& known, int factor) {
  if (known.h() % factor != 0 || known.w() % factor != 0)
    throw std::invalid_argument("downsample_known_mask: size not divisible by factor");
  Tensor out(known.n(), 1, known.h() / factor, known.w() / factor, 1.0);
  for (int n = 0; n < known.n(); ++n)
    for (int y = 0; y < known.h(); ++y)
      for (int x = 0; x < known.w(); ++x)
        if (known.at(n, 0, y, x) < 0.5) out.at(n, 0, y / factor, x / factor) = 0.0;
  return out;
}

}  // namespace inpaint
