// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Global and local critics, the WGAN objectives, the masked gradient penalty
// and the spatially discounted reconstruction loss.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "inpaint/autodiff/grad.hpp"
#include "inpaint/autodiff/ops.hpp"
#include "inpaint/core/rng.hpp"
#include "inpaint/imagecore.hpp"
#include "inpaint/nn/params.hpp"
#include "json.hpp"

namespace inpaint {

struct CriticConfig {
  int width = 16;
  int input_h = 256;
  int input_w = 256;
  double leaky_slope = 0.2;

  void validate() const {
    if (width < 1) throw std::invalid_argument("CriticConfig: width must be >= 1");
    if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0)
      throw std::invalid_argument("CriticConfig: input size must be a positive multiple of 16");
    if (!(leaky_slope >= 0 && leaky_slope < 1)) throw std::invalid_argument("CriticConfig: leaky_slope must lie in [0, 1)");
  }

  bool operator==(const CriticConfig&) const = default;
};

inline nlohmann::json to_json(const CriticConfig& c) {
  return {{"width", c.width}, {"input_h", c.input_h}, {"input_w", c.input_w}, {"leaky_slope", c.leaky_slope}};
}

inline CriticConfig critic_config_from_json(const nlohmann::json& j) {
  CriticConfig c{j.at("width").get<int>(), j.at("input_h").get<int>(), j.at("input_w").get<int>(),
                 j.at("leaky_slope").get<double>()};
  c.validate();
  return c;
}

/// Four stride-2 5x5 convs (widths w, 2w, 4w, 4w) with leaky ReLU, then a
/// dense layer to one unbounded score per sample.
class Critic {
 public:
  Critic(const CriticConfig& cfg, std::uint64_t seed, const std::string& prefix = "critic") : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int w = cfg_.width;
    const int widths[5] = {3, w, 2 * w, 4 * w, 4 * w};
    for (int i = 0; i < 4; ++i)
      convs_.push_back(nn::make_conv(params_, prefix + ".c" + std::to_string(i + 1), widths[i], widths[i + 1],
                                     kernels::ConvGeom::same(5, 2), rng));
    flat_ = 4 * w * (cfg_.input_h / 16) * (cfg_.input_w / 16);
    dense_ = nn::make_conv(params_, prefix + ".dense", flat_, 1, kernels::ConvGeom::valid(1), rng, 1.0);
  }

  Critic(const Critic&) = delete;
  Critic& operator=(const Critic&) = delete;
  Critic(Critic&&) = default;
  Critic& operator=(Critic&&) = default;

  Critic clone() const {
    Critic c(cfg_, 0, prefix());
    c.params_.assign(params_);
    return c;
  }

  const CriticConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// x: N x 3 x input_h x input_w, returns N x 1 x 1 x 1 scores.
  ad::Var operator()(const ad::Var& x) const {
    const Shape s = x.shape();
    if (s.c != 3 || s.h != cfg_.input_h || s.w != cfg_.input_w)
      throw std::invalid_argument("Critic: expected N x 3 x " + std::to_string(cfg_.input_h) + " x " +
                                  std::to_string(cfg_.input_w) + " input, got " + s.str());
    ad::Var h = x;
    for (const auto& c : convs_) h = ad::leaky_relu(c(h), cfg_.leaky_slope);
    return dense_(ad::reshape(h, {s.n, flat_, 1, 1}));
  }

 private:
  std::string prefix() const {
    const std::string& n = params_.name(0);
    return n.substr(0, n.find(".c1."));
  }

  CriticConfig cfg_;
  nn::ParamSet params_;
  std::vector<nn::Conv2d> convs_;
  nn::Conv2d dense_;
  int flat_ = 0;
};

// ---- local crop ------------------------------------------------------------

/// Per-sample crop around the hole used by the local critic.
struct LocalCrop {
  std::shared_ptr<const kernels::Resampler> resampler;
  std::vector<BoundingBox> source;  // region of the frame each crop covers
  Tensor hole;                      // N x 1 x crop_h x crop_w, 1 on missing pixels

  ad::Var apply(const ad::Var& frame) const { return ad::resample(frame, resampler); }
  Tensor apply(const Tensor& frame) const { return resampler->apply(frame); }
};

/// The crop is crop_h x crop_w centred on the hole's bounding box and clamped
/// to the frame. A hole larger than the crop along an axis widens the source
/// region to the hole extent, which is then bilinearly resized to the crop
/// size. Frames without a hole use a centred crop. `known` is N x 1 x H x W.
inline LocalCrop make_local_crop(const Tensor& known, int crop_h, int crop_w) {
  const int N = known.n(), H = known.h(), W = known.w();
  if (crop_h < 1 || crop_w < 1 || crop_h > H || crop_w > W)
    throw std::invalid_argument("make_local_crop: crop size must fit inside the frame");
  auto r = std::make_shared<kernels::Resampler>();
  r->in_h = H, r->in_w = W, r->out_h = crop_h, r->out_w = crop_w;
  LocalCrop lc;
  Tensor hole_full(N, 1, H, W);
  for (int n = 0; n < N; ++n) {
    int y0 = H, y1 = 0, x0 = W, x1 = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const bool missing = known.at(n, 0, y, x) < 0.5;
        hole_full.at(n, 0, y, x) = missing ? 1.0 : 0.0;
        if (missing) y0 = std::min(y0, y), y1 = std::max(y1, y + 1), x0 = std::min(x0, x), x1 = std::max(x1, x + 1);
      }
    if (y1 == 0) y0 = y1 = H / 2, x0 = x1 = W / 2;
    auto place = [](int lo, int hi, int want, int len, int& start, int& size) {
      size = std::max(want, hi - lo);
      const int centre2 = lo + hi;  // twice the centre
      start = std::clamp((centre2 - size) / 2, 0, len - size);
    };
    int sy, sh, sx, sw;
    place(y0, y1, crop_h, H, sy, sh);
    place(x0, x1, crop_w, W, sx, sw);
    lc.source.push_back({sx, sy, sx + sw, sy + sh});
    r->taps.push_back(kernels::bilinear_taps(H, W, sy, sx, sh, sw, crop_h, crop_w));
  }
  lc.resampler = r;
  lc.hole = r->apply(hole_full);
  for (std::size_t i = 0; i < lc.hole.size(); ++i) lc.hole[i] = lc.hole[i] >= 0.5 ? 1.0 : 0.0;
  return lc;
}

// ---- objectives ------------------------------------------------------------

struct LossWeights {
  double w_coarse_l1 = 1.0;
  double w_refine_l1 = 1.0;
  double w_gan_global = 0.001;
  double w_gan_local = 0.001;
  double w_gp = 10.0;

  void validate() const {
    for (double w : {w_coarse_l1, w_refine_l1, w_gan_global, w_gan_local, w_gp})
      if (!(w >= 0)) throw std::invalid_argument("LossWeights: weights must be nonnegative");
    if (w_coarse_l1 + w_refine_l1 + w_gan_global + w_gan_local + w_gp <= 0)
      throw std::invalid_argument("LossWeights: at least one weight must be positive");
  }

  bool operator==(const LossWeights&) const = default;
};

namespace critics_detail {
inline void require_batch(const ad::Var& s, const char* what) {
  if (s.value().empty()) throw std::invalid_argument(std::string(what) + ": empty batch");
}
}  // namespace critics_detail

/// mean(fake) - mean(real) + w_gp * gp; the critic minimises this.
inline ad::Var wgan_critic_loss(const ad::Var& scores_real, const ad::Var& scores_fake, const ad::Var& gp, double w_gp) {
  critics_detail::require_batch(scores_real, "wgan_critic_loss");
  critics_detail::require_batch(scores_fake, "wgan_critic_loss");
  if (scores_real.value().size() != scores_fake.value().size())
    throw std::invalid_argument("wgan_critic_loss: real and fake batches differ in size");
  return ad::add(ad::sub(ad::mean_all(scores_fake), ad::mean_all(scores_real)), ad::scale(gp, w_gp));
}

inline ad::Var wgan_generator_loss(const ad::Var& scores_fake) {
  critics_detail::require_batch(scores_fake, "wgan_generator_loss");
  return ad::neg(ad::mean_all(scores_fake));
}

/// (1 - t) * real + t * fake.
inline ImageTensor interpolate(const ImageTensor& real, const ImageTensor& fake, double t) {
  if (!real.same_dims(fake)) throw std::invalid_argument("interpolate: image dims differ");
  if (real.range() != RangeTag::kNormalized || fake.range() != RangeTag::kNormalized)
    throw std::invalid_argument("interpolate: images must be normalized");
  if (!(t >= 0 && t <= 1)) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  std::vector<double> out(real.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1 - t) * real.data()[i] + t * fake.data()[i];
  return ImageTensor(real.height(), real.width(), real.channels(), RangeTag::kNormalized, std::move(out));
}

/// Per-sample interpolation of batched tensors, t.size() == N.
inline Tensor interpolate(const Tensor& real, const Tensor& fake, const std::vector<double>& t) {
  require_same_shape(real, fake, "interpolate");
  if (t.size() != static_cast<std::size_t>(real.n())) throw std::invalid_argument("interpolate: one t per sample");
  Tensor out(real.shape());
  for (int n = 0; n < real.n(); ++n)
    for (std::size_t i = 0; i < real.sample_size(); ++i)
      out.sample(n)[i] = (1 - t[n]) * real.sample(n)[i] + t[n] * fake.sample(n)[i];
  return out;
}

using CriticFn = std::function<ad::Var(const ad::Var&)>;

/// mean_n (|| grad_x D(x_hat_n) * hole_n ||_2 - 1)^2 with explicit t values.
/// `hole` is N x 1 x H x W (1 on missing pixels, i.e. 1 - m). The result is
/// differentiable with respect to the critic's parameters.
inline ad::Var gradient_penalty(const CriticFn& critic, const Tensor& real, const Tensor& fake, const Tensor& hole,
                                const std::vector<double>& t) {
  require_same_shape(real, fake, "gradient_penalty");
  const Shape s = real.shape();
  if (hole.n() != s.n || hole.c() != 1 || hole.h() != s.h || hole.w() != s.w)
    throw std::invalid_argument("gradient_penalty: hole mask shape does not match images");
  ad::Var x_hat(interpolate(real, fake, t), /*requires_grad=*/true);
  ad::Var scores = critic(x_hat);
  ad::Var g = ad::grad(ad::sum_all(scores), {x_hat}, {}, /*create_graph=*/true)[0];
  if (!g.value().all_finite()) throw std::runtime_error("gradient_penalty: non-finite critic gradient");
  auto hole_c = std::make_shared<Tensor>(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) hole_c->at(n, c, y, x) = hole.at(n, 0, y, x);
  ad::Var masked = ad::mul_const(g, std::move(hole_c));
  ad::Var norms = ad::safe_sqrt(ad::sum_per_sample(ad::mul(masked, masked)));
  ad::Var dev = ad::add_scalar(norms, -1.0);
  return ad::mean_all(ad::mul(dev, dev));
}

/// As above with t_n ~ U[0, 1] drawn from `rng`.
inline ad::Var gradient_penalty(const CriticFn& critic, const Tensor& real, const Tensor& fake, const Tensor& hole,
                                Rng& rng) {
  std::vector<double> t(static_cast<std::size_t>(real.n()));
  for (double& v : t) v = rng.uniform();
  return gradient_penalty(critic, real, fake, hole, t);
}

/// N x 1 x H x W tensor of loss weights.
inline Tensor weights_to_tensor(const std::vector<WeightMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("weights_to_tensor: empty batch");
  Tensor t(static_cast<int>(maps.size()), 1, maps.front().height, maps.front().width);
  for (int n = 0; n < t.n(); ++n) {
    if (maps[n].height != t.h() || maps[n].width != t.w())
      throw std::invalid_argument("weights_to_tensor: maps differ in size");
    std::copy(maps[n].data.begin(), maps[n].data.end(), t.sample(n));
  }
  return t;
}

/// sum(w * |pred - gt|) / (C * sum(w)) over the whole batch; the N x 1 x H x W
/// weights are shared by all channels.
inline ad::Var discounted_l1(const ad::Var& pred, const Tensor& gt, const Tensor& weights) {
  require_same_shape(pred.value(), gt, "discounted_l1");
  const Shape s = gt.shape();
  if (weights.n() != s.n || weights.c() != 1 || weights.h() != s.h || weights.w() != s.w)
    throw std::invalid_argument("discounted_l1: weight shape does not match images");
  const double wsum = weights.sum() * s.c;
  if (!(wsum > 0)) throw std::invalid_argument("discounted_l1: weights sum to zero");
  auto w = std::make_shared<Tensor>(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) w->at(n, c, y, x) = weights.at(n, 0, y, x) / wsum;
  return ad::sum_all(ad::mul_const(ad::abs(ad::sub(pred, ad::constant(gt))), std::move(w)));
}

inline double discounted_l1(const ImageTensor& pred, const ImageTensor& gt, const WeightMap& w) {
  if (!pred.same_dims(gt)) throw std::invalid_argument("discounted_l1: image dims differ");
  if (w.height != pred.height() || w.width != pred.width())
    throw std::invalid_argument("discounted_l1: weight map dims differ");
  ad::NoGradGuard ng;
  return discounted_l1(ad::constant(images_to_tensor({pred})), images_to_tensor({gt}), weights_to_tensor({w})).item();
}

struct GeneratorObjective {
  ad::Var total;
  double coarse_l1 = 0, refine_l1 = 0, gan_global = 0, gan_local = 0;  // unweighted terms
};

/// Reconstruction on both stages, adversarial terms on the refined output
/// only (the critic scores passed in must come from the refined stage).
inline GeneratorObjective generator_objective(const ad::Var& coarse, const ad::Var& refined, const Tensor& gt,
                                              const Tensor& weights, const ad::Var& global_scores,
                                              const ad::Var& local_scores, const LossWeights& lw) {
  lw.validate();
  GeneratorObjective o;
  ad::Var lc = discounted_l1(coarse, gt, weights);
  ad::Var lr = discounted_l1(refined, gt, weights);
  ad::Var lg = wgan_generator_loss(global_scores);
  ad::Var ll = wgan_generator_loss(local_scores);
  o.coarse_l1 = lc.item();
  o.refine_l1 = lr.item();
  o.gan_global = lg.item();
  o.gan_local = ll.item();
  o.total = ad::add(ad::add(ad::scale(lc, lw.w_coarse_l1), ad::scale(lr, lw.w_refine_l1)),
                    ad::add(ad::scale(lg, lw.w_gan_global), ad::scale(ll, lw.w_gan_local)));
  return o;
}

}  // namespace inpaint
