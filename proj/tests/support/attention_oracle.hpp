// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Direct loop implementation of contextual attention used as a test oracle.
// It shares nothing with the library path (no im2col, no matrices) and can
// visit background patches in an arbitrary order.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "inpaint/attention.hpp"

namespace inpaint::testing {

inline Tensor attention_oracle(const Tensor& fg, const Tensor& bg, const Tensor& known, const AttentionParams& p,
                               std::vector<int> order = {}) {
  const int N = fg.n(), C = fg.c(), H = fg.h(), W = fg.w();
  const int k = p.patch_size, r = k / 2, s = p.stride;
  const int gh = (H - 1) / s + 1, gw = (W - 1) / s + 1, Q = gh * gw;
  const int pr = p.propagation_size / 2;
  if (order.empty()) {
    order.resize(Q);
    std::iota(order.begin(), order.end(), 0);
  }
  auto px_at = [&](const Tensor& t, int n, int c, int y, int x) {
    return (y < 0 || y >= H || x < 0 || x >= W) ? 0.0 : t.at(n, c, y, x);
  };
  Tensor out(fg.shape());
  for (int n = 0; n < N; ++n) {
    std::vector<double> norm(Q);
    std::vector<bool> valid(Q);
    for (int q = 0; q < Q; ++q) {
      const int cy = (q / gw) * s, cx = (q % gw) * s;
      double ss = 0;
      int holes = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int y = cy + dy, x = cx + dx;
          if (y >= 0 && y < H && x >= 0 && x < W && known.at(n, 0, y, x) < 0.5) ++holes;
          for (int c = 0; c < C; ++c) ss += px_at(bg, n, c, y, x) * px_at(bg, n, c, y, x);
        }
      norm[q] = std::max(std::sqrt(ss), p.norm_epsilon);
      valid[q] = 1.0 - static_cast<double>(holes) / (k * k) >= p.valid_patch_threshold - 1e-12;
    }
    auto raw_score = [&](int py, int px, int q) {
      const int cy = (q / gw) * s, cx = (q % gw) * s;
      double acc = 0;
      for (int c = 0; c < C; ++c)
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            acc += px_at(fg, n, c, py + dy, px + dx) * px_at(bg, n, c, cy + dy, cx + dx);
      return acc / norm[q];
    };
    // scores[p][q] with propagation along x then y
    std::vector<std::vector<double>> s0(H * W, std::vector<double>(Q)), s1 = s0, s2 = s0;
    for (int py = 0; py < H; ++py)
      for (int px = 0; px < W; ++px)
        for (int q = 0; q < Q; ++q) s0[py * W + px][q] = raw_score(py, px, q);
    for (int py = 0; py < H; ++py)
      for (int px = 0; px < W; ++px)
        for (int qi = 0; qi < gh; ++qi)
          for (int qj = 0; qj < gw; ++qj) {
            double acc = 0;
            for (int t = -pr; t <= pr; ++t)
              if (px + t >= 0 && px + t < W && qj + t >= 0 && qj + t < gw) acc += s0[py * W + px + t][qi * gw + qj + t];
            s1[py * W + px][qi * gw + qj] = acc;
          }
    for (int py = 0; py < H; ++py)
      for (int px = 0; px < W; ++px)
        for (int qi = 0; qi < gh; ++qi)
          for (int qj = 0; qj < gw; ++qj) {
            double acc = 0;
            for (int t = -pr; t <= pr; ++t)
              if (py + t >= 0 && py + t < H && qi + t >= 0 && qi + t < gh) acc += s1[(py + t) * W + px][(qi + t) * gw + qj];
            s2[py * W + px][qi * gw + qj] = acc;
          }
    // softmax over valid patches, visited in `order`
    std::vector<std::vector<double>> att(H * W, std::vector<double>(Q, 0.0));
    for (int i = 0; i < H * W; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int q : order)
        if (valid[q]) mx = std::max(mx, p.softmax_scale * s2[i][q]);
      if (!std::isfinite(mx)) throw std::runtime_error("oracle: no valid patch");
      double z = 0;
      for (int q : order)
        if (valid[q]) z += std::exp(p.softmax_scale * s2[i][q] - mx);
      for (int q : order)
        if (valid[q]) att[i][q] = std::exp(p.softmax_scale * s2[i][q] - mx) / z;
    }
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double acc = 0;
          int cover = 0;
          for (int py = y - r; py <= y + r; ++py)
            for (int px = x - r; px <= x + r; ++px) {
              if (py < 0 || py >= H || px < 0 || px >= W) continue;
              ++cover;
              for (int q : order) {
                const int cy = (q / gw) * s, cx = (q % gw) * s;
                acc += att[py * W + px][q] * px_at(bg, n, c, cy + (y - py), cx + (x - px));
              }
            }
          out.at(n, c, y, x) = acc / cover;
        }
  }
  return out;
}

}  // namespace inpaint::testing
