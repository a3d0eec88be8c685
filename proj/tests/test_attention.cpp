// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "inpaint/attention.hpp"
#include "inpaint/autodiff/grad.hpp"
#include "support/attention_oracle.hpp"
#include "support/finite_diff.hpp"

namespace inpaint {
namespace {

using testing::attention_oracle;
using testing::random_tensor;
using testing::relative_error;

Tensor random_known(Rng& rng, int n, int h, int w) {
  Tensor m(n, 1, h, w, 1.0);
  for (int i = 0; i < n; ++i) {
    const int y0 = static_cast<int>(rng.uniform_int(0, h / 2)), x0 = static_cast<int>(rng.uniform_int(0, w / 2));
    const int y1 = static_cast<int>(rng.uniform_int(y0 + 1, h)), x1 = static_cast<int>(rng.uniform_int(x0 + 1, w));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) m.at(i, 0, y, x) = 0.0;
  }
  return m;
}

TEST(ContextualAttention, MatchesLoopOracle) {
  Rng rng(100);
  for (int seed = 0; seed < 50; ++seed) {
    const int h = static_cast<int>(rng.uniform_int(3, 8)), w = static_cast<int>(rng.uniform_int(3, 8));
    const int c = static_cast<int>(rng.uniform_int(1, 4));
    Tensor fg = random_tensor({2, c, h, w}, rng), bg = random_tensor({2, c, h, w}, rng);
    Tensor known = random_known(rng, 2, h, w);
    AttentionParams p;
    p.stride = static_cast<int>(rng.uniform_int(1, 2));
    p.propagation_size = rng.uniform() < 0.5 ? 1 : 3;
    p.valid_patch_threshold = rng.uniform() < 0.5 ? 1.0 : 0.5;
    AttentionResult res;
    try {
      res = contextual_attention_forward(fg, bg, known, p);
    } catch (const std::runtime_error&) {
      EXPECT_THROW(attention_oracle(fg, bg, known, p), std::runtime_error);
      continue;
    }
    EXPECT_LT(relative_error(res.output, attention_oracle(fg, bg, known, p)), 1e-10);
  }
}

TEST(ContextualAttention, SingleValidPatchGetsAllWeight) {
  Rng rng(1);
  const int h = 5, w = 5;
  Tensor fg = random_tensor({1, 2, h, w}, rng), bg = random_tensor({1, 2, h, w}, rng);
  // Only the patch centred at (0, 0) avoids the hole (padding counts as known).
  Tensor known(1, 1, h, w, 0.0);
  known.at(0, 0, 0, 0) = known.at(0, 0, 0, 1) = known.at(0, 0, 1, 0) = known.at(0, 0, 1, 1) = 1.0;
  AttentionParams p;
  AttentionResult res = contextual_attention_forward(fg, bg, known, p);
  const int Q = res.grid_h * res.grid_w;
  for (int i = 0; i < h * w; ++i) {
    EXPECT_DOUBLE_EQ(res.scores[0][i * Q + 0], 1.0);
    for (int q = 1; q < Q; ++q) EXPECT_EQ(res.scores[0][i * Q + q], 0.0);
  }
  // Every window copies the (0,0) patch; the output is its overlap average.
  auto patch = [&](int c, int dy, int dx) {  // dy, dx in [-1, 1]
    return (dy < 0 || dx < 0) ? 0.0 : bg.at(0, c, dy, dx);
  };
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        int cover = 0;
        for (int py = y - 1; py <= y + 1; ++py)
          for (int px = x - 1; px <= x + 1; ++px)
            if (py >= 0 && py < h && px >= 0 && px < w) {
              ++cover;
              acc += patch(c, y - py, x - px);
            }
        EXPECT_NEAR(res.output.at(0, c, y, x), acc / cover, 1e-12);
      }
}

TEST(ContextualAttention, OnePixelPatchSingleValidIsTiled) {
  Rng rng(2);
  Tensor fg = random_tensor({1, 3, 4, 4}, rng), bg = random_tensor({1, 3, 4, 4}, rng);
  Tensor known(1, 1, 4, 4, 0.0);
  known.at(0, 0, 2, 1) = 1.0;
  AttentionParams p;
  p.patch_size = 1;
  p.propagation_size = 1;
  Tensor out = contextual_attention_forward(fg, bg, known, p).output;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_NEAR(out.at(0, c, y, x), bg.at(0, c, 2, 1), 1e-12);
}

TEST(ContextualAttention, CopyRetrievalSaturates) {
  Rng rng(3);
  const int h = 8, w = 8, C = 4;
  Tensor fg = random_tensor({1, C, h, w}, rng), bg = random_tensor({1, C, h, w}, rng);
  Tensor known(1, 1, h, w, 1.0);
  for (int y = 1; y < 5; ++y)
    for (int x = 1; x < 5; ++x) known.at(0, 0, y, x) = 0.0;
  // copy the fg patch around (2, 3) into the bg at (6, 6)
  for (int c = 0; c < C; ++c)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) bg.at(0, c, 6 + dy, 6 + dx) = fg.at(0, c, 2 + dy, 3 + dx);
  AttentionParams p;
  p.softmax_scale = 1000;
  p.propagation_size = 1;
  AttentionResult res = contextual_attention_forward(fg, bg, known, p);
  const int Q = res.grid_h * res.grid_w, pfg = 2 * w + 3;
  for (int c = 0; c < C; ++c)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        double recon = 0;
        for (int q = 0; q < Q; ++q) {
          const int cy = q / res.grid_w + dy, cx = q % res.grid_w + dx;
          const double v = (cy < 0 || cy >= h || cx < 0 || cx >= w) ? 0.0 : bg.at(0, c, cy, cx);
          recon += res.scores[0][pfg * Q + q] * v;
        }
        EXPECT_NEAR(recon, fg.at(0, c, 2 + dy, 3 + dx), 1e-4);
      }
}

TEST(ContextualAttention, RowsSumToOneAndInvalidPatchesGetZero) {
  Rng rng(4);
  Tensor fg = random_tensor({2, 3, 7, 6}, rng), bg = random_tensor({2, 3, 7, 6}, rng);
  Tensor known = random_known(rng, 2, 7, 6);
  AttentionParams p;
  p.valid_patch_threshold = 0.5;
  AttentionResult res = contextual_attention_forward(fg, bg, known, p);
  const int Q = res.grid_h * res.grid_w;
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 42; ++i) {
      double s = 0;
      for (int q = 0; q < Q; ++q) {
        s += res.scores[n][i * Q + q];
        if (!res.valid[n][q]) { EXPECT_EQ(res.scores[n][i * Q + q], 0.0); }
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(ContextualAttention, PatchOrderDoesNotMatter) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor fg = random_tensor({1, 2, 6, 6}, rng), bg = random_tensor({1, 2, 6, 6}, rng);
    Tensor known = random_known(rng, 1, 6, 6);
    AttentionParams p;
    p.valid_patch_threshold = 0.0;
    std::vector<int> order(36);
    std::iota(order.begin(), order.end(), 0);
    for (int i = 35; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
    Tensor shuffled = attention_oracle(fg, bg, known, p, order);
    Tensor out = contextual_attention_forward(fg, bg, known, p).output;
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], shuffled[i], 1e-6);
  }
}

TEST(ContextualAttention, NoValidPatchIsAnError) {
  Rng rng(6);
  Tensor fg = random_tensor({1, 2, 4, 4}, rng);
  EXPECT_THROW(contextual_attention_forward(fg, fg, Tensor(1, 1, 4, 4, 0.0), AttentionParams{}), std::runtime_error);
}

TEST(ContextualAttention, InvalidParamsRejected) {
  AttentionParams p;
  p.patch_size = 2;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.propagation_size = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.softmax_scale = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

void expect_attention_gradients(const AttentionParams& p, std::uint64_t seed) {
  Rng rng(seed);
  const Shape s{2, 3, 6, 5};
  Tensor fg = random_tensor(s, rng), bg = random_tensor(s, rng);
  Tensor known = random_known(rng, 2, 6, 5);
  auto weights = std::make_shared<const Tensor>(random_tensor(s, rng));
  auto loss_of = [&](const Tensor& f, const Tensor& b) {
    ad::NoGradGuard ng;
    return ad::sum_all(ad::mul_const(contextual_attention(ad::Var(f), ad::Var(b), known, p), weights)).item();
  };
  ad::Var fv(fg, true), bv(bg, true);
  ad::Var loss = ad::sum_all(ad::mul_const(contextual_attention(fv, bv, known, p), weights));
  auto g = ad::grad(loss, {fv, bv});
  Tensor nf = testing::numeric_grad([&](const Tensor& t) { return loss_of(t, bg); }, fg);
  Tensor nb = testing::numeric_grad([&](const Tensor& t) { return loss_of(fg, t); }, bg);
  EXPECT_LT(relative_error(g[0].value(), nf), 1e-6);
  EXPECT_LT(relative_error(g[1].value(), nb), 1e-6);
}

TEST(ContextualAttention, GradientsMatchFiniteDifferences) {
  AttentionParams p;
  p.softmax_scale = 2.0;
  p.valid_patch_threshold = 0.5;
  expect_attention_gradients(p, 10);
  p.stride = 2;
  p.propagation_size = 1;
  expect_attention_gradients(p, 11);
}

TEST(ContextualAttention, GradientThroughNearZeroPatchNorm) {
  // constant-zero background regions exercise the epsilon-clamped norm branch
  Rng rng(12);
  AttentionParams p;
  p.softmax_scale = 1.0;
  p.valid_patch_threshold = 0.0;
  Tensor fg = random_tensor({1, 2, 5, 5}, rng), bg = random_tensor({1, 2, 5, 5}, rng, -1e-6, 1e-6);
  Tensor known(1, 1, 5, 5, 1.0);
  auto f = [&](const Tensor& b) {
    ad::NoGradGuard ng;
    return ad::sum_all(contextual_attention(ad::Var(fg), ad::Var(b), known, p)).item();
  };
  ad::Var bv(bg, true);
  Tensor g = ad::grad(ad::sum_all(contextual_attention(ad::Var(fg), bv, known, p)), {bv})[0].value();
  EXPECT_LT(relative_error(g, testing::numeric_grad(f, bg, 1e-9)), 1e-4);
}

TEST(DownsampleKnownMask, AnyMissingPixelMarksCell) {
  Tensor m(1, 1, 4, 4, 1.0);
  m.at(0, 0, 3, 0) = 0.0;
  Tensor d = downsample_known_mask(m, 2);
  EXPECT_EQ(d.at(0, 0, 1, 0), 0.0);
  EXPECT_EQ(d.at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(d.at(0, 0, 1, 1), 1.0);
}

}  // namespace
}  // namespace inpaint
