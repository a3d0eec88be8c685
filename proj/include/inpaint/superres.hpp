// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// x4 super-resolution: residual trunk followed by two sub-pixel x2 stages.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "inpaint/checkpoint.hpp"
#include "inpaint/critics.hpp"
#include "inpaint/io.hpp"
#include "inpaint/nn/adam.hpp"
#include "inpaint/training.hpp"

namespace inpaint {

/// out(n, k, y, x) = in(n, k*s*s + (y % s)*s + x % s, y / s, x / s); the
/// channel count must be divisible by s*s.
inline Tensor subpixel_upsample(const Tensor& features, int s) {
  if (s < 1) throw std::invalid_argument("subpixel_upsample: factor must be >= 1");
  return kernels::pixel_shuffle(features, s);
}

struct SRConfig {
  int scale = 4;  // fixed: two x2 stages
  int n_residual_blocks = 4;
  int width = 16;
  bool adversarial = false;
  int input_h = 256;
  int input_w = 256;

  void validate() const {
    if (scale != 4) throw std::invalid_argument("SRConfig: scale must be 4");
    if (n_residual_blocks < 1) throw std::invalid_argument("SRConfig: n_residual_blocks must be >= 1");
    if (width < 1) throw std::invalid_argument("SRConfig: width must be >= 1");
    if (input_h < 1 || input_w < 1) throw std::invalid_argument("SRConfig: input size must be positive");
  }

  bool operator==(const SRConfig&) const = default;
};

inline nlohmann::json to_json(const SRConfig& c) {
  return {{"scale", c.scale},       {"n_residual_blocks", c.n_residual_blocks}, {"width", c.width},
          {"adversarial", c.adversarial}, {"input_h", c.input_h},           {"input_w", c.input_w}};
}

inline SRConfig sr_config_from_json(const nlohmann::json& j) {
  SRConfig c{j.at("scale").get<int>(),       j.at("n_residual_blocks").get<int>(), j.at("width").get<int>(),
             j.at("adversarial").get<bool>(), j.at("input_h").get<int>(),          j.at("input_w").get<int>()};
  c.validate();
  return c;
}

class SRNet {
 public:
  SRNet(const SRConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    using kernels::ConvGeom;
    Rng rng(seed);
    const int w = cfg_.width;
    head_ = nn::make_conv(params_, "sr.head", 3, w, ConvGeom::same(5), rng);
    for (int i = 0; i < cfg_.n_residual_blocks; ++i) {
      const std::string p = "sr.block" + std::to_string(i + 1);
      // second conv starts small so every block begins near the identity
      blocks_.push_back({nn::make_conv(params_, p + ".a", w, w, ConvGeom::same(3), rng),
                         nn::make_conv(params_, p + ".b", w, w, ConvGeom::same(3), rng, 0.1)});
    }
    trunk_ = nn::make_conv(params_, "sr.trunk", w, w, ConvGeom::same(3), rng);
    up1_ = nn::make_conv(params_, "sr.up1", w, 4 * w, ConvGeom::same(3), rng);
    up2_ = nn::make_conv(params_, "sr.up2", w, 4 * w, ConvGeom::same(3), rng);
    tail_ = nn::make_conv(params_, "sr.tail", w, 3, ConvGeom::same(5), rng, 1.0);
  }

  SRNet(const SRNet&) = delete;
  SRNet& operator=(const SRNet&) = delete;
  SRNet(SRNet&&) = default;
  SRNet& operator=(SRNet&&) = default;

  SRNet clone() const {
    SRNet n(cfg_, 0);
    n.params_.assign(params_);
    return n;
  }

  const SRConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// N x 3 x input_h x input_w -> N x 3 x 4*input_h x 4*input_w in [-1, 1].
  ad::Var operator()(const ad::Var& x) const {
    const Shape s = x.shape();
    if (s.c != 3 || s.h != cfg_.input_h || s.w != cfg_.input_w)
      throw std::invalid_argument("sr_forward: expected N x 3 x " + std::to_string(cfg_.input_h) + " x " +
                                  std::to_string(cfg_.input_w) + " input, got " + s.str());
    ad::Var h = ad::elu(head_(x));
    ad::Var r = h;
    for (const auto& b : blocks_) r = ad::add(r, b.b(ad::elu(b.a(r))));
    h = ad::add(h, trunk_(r));
    h = ad::elu(ad::pixel_shuffle(up1_(h), 2));
    h = ad::elu(ad::pixel_shuffle(up2_(h), 2));
    ad::Var out = tail_(h);
    require_finite(out, "super-resolution output");
    return ad::clip(out, -1.0, 1.0);
  }

 private:
  struct Block {
    nn::Conv2d a, b;
  };
  SRConfig cfg_;
  nn::ParamSet params_;
  nn::Conv2d head_, trunk_, up1_, up2_, tail_;
  std::vector<Block> blocks_;
};

/// Image-level x4 upscale of a normalized image at the configured size.
inline ImageTensor sr_forward(const SRNet& net, const ImageTensor& img) {
  if (img.range() != RangeTag::kNormalized) throw std::invalid_argument("sr_forward: image must be normalized");
  if (img.channels() != 3) throw std::invalid_argument("sr_forward: image must have 3 channels");
  if (img.height() != net.config().input_h || img.width() != net.config().input_w)
    throw std::invalid_argument("sr_forward: image is " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                ", network expects " + std::to_string(net.config().input_h) + "x" +
                                std::to_string(net.config().input_w));
  ad::NoGradGuard ng;
  return tensor_to_image(net(ad::constant(images_to_tensor({img}))).value(), 0);
}

// ---- training --------------------------------------------------------------

struct SRTrainConfig {
  SRConfig net;
  int critic_width = 8;
  double w_adversarial = 1e-3;
  double w_gp = 10.0;
  int n_critic = 1;
  int batch_size = 4;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  std::int64_t max_steps = 1000;
  std::uint64_t seed = 0;
  std::string image_dir;
  std::string manifest_path;
  std::int64_t checkpoint_interval = 100;
  std::string output_dir = "runs/superres";
  std::string resume_from;

  CriticConfig critic() const { return {critic_width, 4 * net.input_h, 4 * net.input_w, 0.2}; }
  nn::AdamConfig adam() const { return {learning_rate, beta1, beta2, 1e-8}; }

  void validate() const {
    net.validate();
    if (net.adversarial) critic().validate();
    if (batch_size < 1) throw std::invalid_argument("SRTrainConfig: batch_size must be >= 1");
    if (n_critic < 1) throw std::invalid_argument("SRTrainConfig: n_critic must be >= 1");
    if (!(learning_rate >= 0)) throw std::invalid_argument("SRTrainConfig: learning_rate must be >= 0");
    if (!(w_adversarial >= 0 && w_gp >= 0)) throw std::invalid_argument("SRTrainConfig: loss weights must be >= 0");
    if (max_steps < 0 || checkpoint_interval < 1)
      throw std::invalid_argument("SRTrainConfig: need max_steps >= 0 and checkpoint_interval >= 1");
  }
};

struct SRState {
  SRNet net;
  std::optional<Critic> critic;  // present when adversarial
  nn::AdamState adam_net, adam_critic;
  std::int64_t step = 0;
  Rng rng;

  static SRState init(const SRTrainConfig& cfg) {
    cfg.validate();
    Rng root(cfg.seed);
    const std::uint64_t sn = root.next_u64(), sc = root.next_u64();
    SRState s{SRNet(cfg.net, sn), std::nullopt, {}, {}, 0, root.split(2)};
    s.adam_net = nn::AdamState::for_params(s.net.params());
    if (cfg.net.adversarial) {
      s.critic.emplace(cfg.critic(), sc, "sr_critic");
      s.adam_critic = nn::AdamState::for_params(s.critic->params());
    }
    return s;
  }

  SRState clone() const {
    SRState s{net.clone(), std::nullopt, adam_net, adam_critic, step, rng};
    if (critic) s.critic.emplace(critic->clone());
    return s;
  }

  bool equals(const SRState& o) const {
    if (critic.has_value() != o.critic.has_value()) return false;
    if (critic && !critic->params().equals(o.critic->params())) return false;
    return net.config() == o.net.config() && net.params().equals(o.net.params()) && adam_net == o.adam_net &&
           adam_critic == o.adam_critic && step == o.step && rng == o.rng;
  }
};

/// Low-res inputs are bilinear x1/4 downsamples of the high-res targets.
struct SRBatch {
  Tensor lr, hr;
};

inline SRBatch make_sr_batch(const std::vector<ImageTensor>& hr_images) {
  std::vector<ImageTensor> lr;
  for (const auto& h : hr_images) {
    if (h.height() % 4 != 0 || h.width() % 4 != 0) throw std::invalid_argument("make_sr_batch: size not divisible by 4");
    lr.push_back(resize_bilinear(h, h.height() / 4, h.width() / 4));
  }
  return {images_to_tensor(lr), images_to_tensor(hr_images)};
}

struct SRRecord {
  std::int64_t step = 0;
  std::map<std::string, double> losses;

  nlohmann::json to_json() const {
    nlohmann::json j{{"step", step}};
    for (const auto& [k, v] : losses) j["losses"][k] = v;
    return j;
  }
};

/// Mean squared error between the upscaled batch and the targets.
inline ad::Var sr_content_loss(const SRNet& net, const SRBatch& b) {
  ad::Var d = ad::sub(net(ad::constant(b.lr)), ad::constant(b.hr));
  return ad::mean_all(ad::mul(d, d));
}

/// One update of the upsampler (preceded by n_critic critic updates when
/// adversarial). The critic's penalty uses an all-missing mask, i.e. the
/// unmasked gradient penalty.
inline SRRecord sr_train_step(const SRBatch& batch, SRState& state, const SRTrainConfig& cfg) {
  const std::int64_t step = state.step + 1;
  const nn::AdamConfig adam = cfg.adam();
  SRRecord rec;
  rec.step = step;
  auto check = [&](double v, const char* term) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite ") + term + " loss at step " + std::to_string(step));
  };
  if (cfg.net.adversarial) {
    if (!state.critic) throw std::logic_error("sr_train_step: adversarial config without a critic");
    const Critic& d = *state.critic;
    CriticFn fn = [&d](const ad::Var& x) { return d(x); };
    const Tensor all_missing(batch.hr.n(), 1, batch.hr.h(), batch.hr.w(), 1.0);
    for (int k = 0; k < cfg.n_critic; ++k) {
      Tensor fake;
      {
        ad::NoGradGuard ng;
        fake = state.net(ad::constant(batch.lr)).value();
      }
      ad::Var gp = gradient_penalty(fn, batch.hr, fake, all_missing, state.rng);
      ad::Var loss = wgan_critic_loss(d(ad::constant(batch.hr)), d(ad::constant(fake)), gp, cfg.w_gp);
      check(loss.item(), "critic");
      nn::adam_step(state.critic->params(), training_detail::values(ad::grad(loss, state.critic->params().vars())),
                    state.adam_critic, adam);
      rec.losses["critic"] = loss.item();
      rec.losses["gp"] = gp.item();
    }
  }
  ad::Var sr = state.net(ad::constant(batch.lr));
  ad::Var d = ad::sub(sr, ad::constant(batch.hr));
  ad::Var content = ad::mean_all(ad::mul(d, d));
  check(content.item(), "content");
  ad::Var total = content;
  rec.losses["content"] = content.item();
  if (cfg.net.adversarial) {
    ad::Var adv = wgan_generator_loss((*state.critic)(sr));
    check(adv.item(), "adversarial");
    rec.losses["adversarial"] = adv.item();
    total = ad::add(total, ad::scale(adv, cfg.w_adversarial));
  }
  nn::adam_step(state.net.params(), training_detail::values(ad::grad(total, state.net.params().vars())), state.adam_net,
                adam);
  state.step = step;
  return rec;
}

// ---- checkpoints -----------------------------------------------------------

inline constexpr const char* kSRCheckpointKind = "superres";

inline void save_sr_state(const SRState& s, const std::string& path) {
  Checkpoint ck;
  ck.kind = kSRCheckpointKind;
  ck.header = {{"net", to_json(s.net.config())}, {"step", s.step}, {"rng", s.rng.serialize()},
               {"adam_t", {s.adam_net.t, s.adam_critic.t}}};
  if (s.critic) ck.header["critic"] = to_json(s.critic->config());
  training_detail::put_params(ck, "net", s.net.params(), &s.adam_net);
  if (s.critic) training_detail::put_params(ck, "critic", s.critic->params(), &s.adam_critic);
  save_checkpoint(ck, path);
}

inline SRState load_sr_state(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path, kSRCheckpointKind);
  try {
    const auto& h = ck.header;
    SRState s{SRNet(sr_config_from_json(h.at("net")), 0), std::nullopt, {}, {}, h.at("step").get<std::int64_t>(),
              Rng::deserialize(h.at("rng").get<std::string>())};
    s.adam_net = nn::AdamState::for_params(s.net.params());
    if (h.contains("critic")) {
      s.critic.emplace(critic_config_from_json(h.at("critic")), 0, "sr_critic");
      s.adam_critic = nn::AdamState::for_params(s.critic->params());
    }
    const auto t = h.at("adam_t").get<std::vector<std::int64_t>>();
    if (t.size() != 2) throw CheckpointError("checkpoint '" + path + "' has a malformed optimizer header");
    s.adam_net.t = t[0], s.adam_critic.t = t[1];
    training_detail::get_params(ck, "net", s.net.params(), &s.adam_net);
    if (s.critic) training_detail::get_params(ck, "critic", s.critic->params(), &s.adam_critic);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "' has a malformed header: " + e.what());
  }
}

inline SRNet load_sr_net(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path, kSRCheckpointKind);
  SRNet n(sr_config_from_json(ck.header.at("net")), 0);
  training_detail::get_params(ck, "net", n.params(), nullptr);
  return n;
}

// ---- data and loop ---------------------------------------------------------

/// Random high-res crops of size 4*input from training images (images smaller
/// than the crop are first enlarged to cover it).
inline SRBatch sr_next_batch(Dataset& data, std::map<std::string, ImageTensor>& originals, SRState& state,
                             const SRTrainConfig& cfg) {
  const auto& files = data.train_files();
  if (files.empty()) throw std::runtime_error("sr_next_batch: manifest has no training images");
  const int ch = 4 * cfg.net.input_h, cw = 4 * cfg.net.input_w;
  std::vector<ImageTensor> crops;
  std::size_t failures = 0;
  while (static_cast<int>(crops.size()) < cfg.batch_size) {
    const auto& rel = files[static_cast<std::size_t>(state.rng.uniform_int(0, static_cast<std::int64_t>(files.size()) - 1))];
    auto it = originals.find(rel);
    if (it == originals.end()) {
      try {
        ImageTensor img = read_image(data.manifest().full_path(rel));
        if (img.height() < ch || img.width() < cw) {
          const double f = std::max(static_cast<double>(ch) / img.height(), static_cast<double>(cw) / img.width());
          img = resize_bilinear(img, std::max(ch, static_cast<int>(std::ceil(img.height() * f))),
                                std::max(cw, static_cast<int>(std::ceil(img.width() * f))));
        }
        it = originals.emplace(rel, normalize(img)).first;
      } catch (const std::exception& e) {
        std::cerr << "warning: skipping unreadable training image: " << e.what() << "\n";
        if (++failures >= files.size()) throw std::runtime_error("sr_next_batch: no readable training image");
        continue;
      }
    }
    const ImageTensor& img = it->second;
    const int y0 = static_cast<int>(state.rng.uniform_int(0, img.height() - ch));
    const int x0 = static_cast<int>(state.rng.uniform_int(0, img.width() - cw));
    std::vector<double> d(static_cast<std::size_t>(ch) * cw * 3);
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        for (int c = 0; c < 3; ++c) d[(static_cast<std::size_t>(y) * cw + x) * 3 + c] = img.at(y0 + y, x0 + x, c);
    crops.emplace_back(ch, cw, 3, RangeTag::kNormalized, std::move(d));
  }
  return make_sr_batch(crops);
}

/// SR counterpart of train_loop; same log/checkpoint layout.
inline std::string train_sr_loop(const SRTrainConfig& cfg) {
  cfg.validate();
  TrainConfig data_cfg;
  data_cfg.image_dir = cfg.image_dir;
  data_cfg.manifest_path = cfg.manifest_path;
  data_cfg.seed = cfg.seed;
  Dataset data(resolve_manifest(data_cfg), cfg.net.input_h, cfg.net.input_w);
  std::map<std::string, ImageTensor> originals;
  std::filesystem::create_directories(cfg.output_dir);
  const std::string log_path = metrics_log_path(cfg.output_dir);
  SRState state = cfg.resume_from.empty() ? SRState::init(cfg) : load_sr_state(cfg.resume_from);
  truncate_metrics_log(log_path, state.step);
  std::ofstream metrics(log_path, std::ios::app);
  std::string last = checkpoint_path(cfg.output_dir, state.step);
  if (state.step >= cfg.max_steps) {
    save_sr_state(state, last);
    return last;
  }
  while (state.step < cfg.max_steps) {
    const SRBatch batch = sr_next_batch(data, originals, state, cfg);
    metrics << sr_train_step(batch, state, cfg).to_json().dump() << "\n";
    metrics.flush();
    if (!metrics) throw std::runtime_error("failed writing metrics log '" + log_path + "'");
    if (state.step % cfg.checkpoint_interval == 0 || state.step == cfg.max_steps) {
      last = checkpoint_path(cfg.output_dir, state.step);
      save_sr_state(state, last);
    }
  }
  return last;
}

}  // namespace inpaint
