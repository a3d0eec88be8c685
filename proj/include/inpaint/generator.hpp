// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage coarse-to-fine inpainting network.
//
// Both stages share one skeleton (widths in units of base_width cw):
//   5x5 conv cw | s2 conv 2cw | conv 2cw | s2 conv 4cw | conv 4cw x2
//   dilated 3x3 convs 4cw | conv 4cw x2
//   up x2, conv 2cw x2 | up x2, conv cw, conv cw/2, conv 3 | clip [-1, 1]
// The refinement stage runs a second encoder in parallel that ends in
// contextual attention at H/4; the two encoders are concatenated before the
// shared middle/decoder. ELU follows every conv except the last.

#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "inpaint/attention.hpp"
#include "inpaint/autodiff/ops.hpp"
#include "inpaint/imagecore.hpp"
#include "inpaint/nn/params.hpp"
#include "json.hpp"

namespace inpaint {

struct GeneratorConfig {
  int base_width = 16;
  int input_h = 256;
  int input_w = 256;
  std::vector<int> dilation_rates{2, 4, 8, 16};
  AttentionParams attention;
  bool use_attention = true;  // false replaces the attention op with identity
  double elu_alpha = 1.0;

  void validate() const {
    if (base_width < 4) throw std::invalid_argument("GeneratorConfig: base_width must be >= 4");
    if (input_h < 8 || input_w < 8 || input_h % 8 != 0 || input_w % 8 != 0)
      throw std::invalid_argument("GeneratorConfig: input size must be a positive multiple of 8");
    for (std::size_t i = 0; i < dilation_rates.size(); ++i) {
      if (dilation_rates[i] < 1) throw std::invalid_argument("GeneratorConfig: dilation rates must be >= 1");
      if (i > 0 && dilation_rates[i] <= dilation_rates[i - 1])
        throw std::invalid_argument("GeneratorConfig: dilation_rates must be strictly increasing");
    }
    if (!(elu_alpha > 0)) throw std::invalid_argument("GeneratorConfig: elu_alpha must be > 0");
    attention.validate();
  }

  bool operator==(const GeneratorConfig&) const = default;
};

inline nlohmann::json to_json(const AttentionParams& p) {
  return {{"patch_size", p.patch_size},       {"stride", p.stride},
          {"softmax_scale", p.softmax_scale}, {"propagation_size", p.propagation_size},
          {"valid_patch_threshold", p.valid_patch_threshold}, {"norm_epsilon", p.norm_epsilon}};
}

inline AttentionParams attention_params_from_json(const nlohmann::json& j) {
  AttentionParams p;
  p.patch_size = j.at("patch_size").get<int>();
  p.stride = j.at("stride").get<int>();
  p.softmax_scale = j.at("softmax_scale").get<double>();
  p.propagation_size = j.at("propagation_size").get<int>();
  p.valid_patch_threshold = j.at("valid_patch_threshold").get<double>();
  p.norm_epsilon = j.at("norm_epsilon").get<double>();
  return p;
}

inline nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"base_width", c.base_width},         {"input_h", c.input_h},
          {"input_w", c.input_w},               {"dilation_rates", c.dilation_rates},
          {"attention", to_json(c.attention)},  {"use_attention", c.use_attention},
          {"elu_alpha", c.elu_alpha}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.base_width = j.at("base_width").get<int>();
  c.input_h = j.at("input_h").get<int>();
  c.input_w = j.at("input_w").get<int>();
  c.dilation_rates = j.at("dilation_rates").get<std::vector<int>>();
  c.attention = attention_params_from_json(j.at("attention"));
  c.use_attention = j.at("use_attention").get<bool>();
  c.elu_alpha = j.at("elu_alpha").get<double>();
  c.validate();
  return c;
}

/// Clamp to [-1, 1]; the network has no squashing nonlinearity.
inline ad::Var clip_output(const ad::Var& features) {
  if (features.shape().c != 3) throw std::invalid_argument("clip_output: expected 3 channels");
  return ad::clip(features, -1.0, 1.0);
}

/// Throws if any activation is NaN or infinite (divergence signal).
inline void require_finite(const ad::Var& v, const std::string& where) {
  if (!v.value().all_finite()) throw std::runtime_error("non-finite activation in " + where);
}

/// Known pixels from the input, missing pixels from the prediction.
inline ad::Var paste_known(const ad::Var& pred, const Tensor& holed, const Tensor& known) {
  const Shape s = pred.shape();
  auto hole3 = std::make_shared<Tensor>(s);
  Tensor keep(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const double m = known.at(n, 0, y, x);
          hole3->at(n, c, y, x) = 1.0 - m;
          keep.at(n, c, y, x) = m * holed.at(n, c, y, x);
        }
  return ad::add(ad::mul_const(pred, std::move(hole3)), ad::constant(std::move(keep)));
}

class Generator {
 public:
  struct Output {
    ad::Var coarse;
    ad::Var refined;
  };

  Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int cw = cfg_.base_width;
    coarse_ = build_stage("coarse", 4 * cw, rng);
    using kernels::ConvGeom;
    auto conv = [&](const std::string& name, int in, int out, ConvGeom g) {
      return nn::make_conv(params_, "refine.attn." + name, in, out, g, rng);
    };
    attn_.b1 = conv("b1", 4, cw, ConvGeom::same(5));
    attn_.b2 = conv("b2", cw, cw, ConvGeom::same(3, 2));
    attn_.b3 = conv("b3", cw, 2 * cw, ConvGeom::same(3));
    attn_.b4 = conv("b4", 2 * cw, 4 * cw, ConvGeom::same(3, 2));
    attn_.b5 = conv("b5", 4 * cw, 4 * cw, ConvGeom::same(3));
    attn_.b6 = conv("b6", 4 * cw, 4 * cw, ConvGeom::same(3));
    attn_.b7 = conv("b7", 4 * cw, 4 * cw, ConvGeom::same(3));
    attn_.b8 = conv("b8", 4 * cw, 4 * cw, ConvGeom::same(3));
    refine_ = build_stage("refine", 8 * cw, rng);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  /// Independent copy with identical parameter values.
  Generator clone() const {
    Generator g(cfg_, 0);
    g.params_.assign(params_);
    return g;
  }

  const GeneratorConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// holed: N x 3 x H x W (hole pixels white), known: N x 1 x H x W.
  ad::Var coarse_forward(const ad::Var& holed, const Tensor& known) const {
    check_inputs(holed.shape(), known, "coarse_forward");
    ad::Var x = ad::concat_channels({holed, ad::constant(known)});
    ad::Var feat = encode(coarse_, x, "coarse");
    return decode(coarse_, feat, "coarse");
  }

  /// coarse_pasted: coarse prediction with known pixels restored.
  ad::Var refine_forward(const ad::Var& coarse_pasted, const Tensor& known,
                         AttentionResult* attention_out = nullptr) const {
    check_inputs(coarse_pasted.shape(), known, "refine_forward");
    ad::Var x = ad::concat_channels({coarse_pasted, ad::constant(known)});
    ad::Var a = encode(refine_, x, "refine");
    ad::Var b = act(attn_.b1(x));
    b = act(attn_.b2(b));
    b = act(attn_.b3(b));
    b = act(attn_.b4(b));
    b = act(attn_.b5(b));
    b = act(attn_.b6(b));
    require_finite(b, "refine attention encoder");
    if (cfg_.use_attention) {
      const Tensor known_low = downsample_known_mask(known, 4);
      b = contextual_attention(b, b, known_low, cfg_.attention, attention_out);
    }
    b = act(attn_.b7(b));
    b = act(attn_.b8(b));
    return decode(refine_, ad::concat_channels({a, b}), "refine");
  }

  Output forward(const Tensor& holed, const Tensor& known) const {
    Output out;
    out.coarse = coarse_forward(ad::constant(holed), known);
    out.refined = refine_forward(paste_known(out.coarse, holed, known), known);
    return out;
  }

 private:
  struct Stage {
    nn::Conv2d e1, e2, e3, e4, e5, e6;
    std::vector<nn::Conv2d> dilated;
    nn::Conv2d m1, m2, u1, u2, u3, u4, out;
  };
  struct AttentionBranch {
    nn::Conv2d b1, b2, b3, b4, b5, b6, b7, b8;
  };

  Stage build_stage(const std::string& prefix, int middle_in, Rng& rng) {
    using kernels::ConvGeom;
    const int cw = cfg_.base_width;
    auto conv = [&](const std::string& name, int in, int out, ConvGeom g, double gain = std::sqrt(2.0)) {
      return nn::make_conv(params_, prefix + "." + name, in, out, g, rng, gain);
    };
    Stage s;
    s.e1 = conv("e1", 4, cw, ConvGeom::same(5));
    s.e2 = conv("e2", cw, 2 * cw, ConvGeom::same(3, 2));
    s.e3 = conv("e3", 2 * cw, 2 * cw, ConvGeom::same(3));
    s.e4 = conv("e4", 2 * cw, 4 * cw, ConvGeom::same(3, 2));
    s.e5 = conv("e5", 4 * cw, 4 * cw, ConvGeom::same(3));
    s.e6 = conv("e6", 4 * cw, 4 * cw, ConvGeom::same(3));
    for (std::size_t i = 0; i < cfg_.dilation_rates.size(); ++i)
      s.dilated.push_back(conv("d" + std::to_string(i + 1), 4 * cw, 4 * cw, ConvGeom::same(3, 1, cfg_.dilation_rates[i])));
    s.m1 = conv("m1", middle_in, 4 * cw, ConvGeom::same(3));
    s.m2 = conv("m2", 4 * cw, 4 * cw, ConvGeom::same(3));
    s.u1 = conv("u1", 4 * cw, 2 * cw, ConvGeom::same(3));
    s.u2 = conv("u2", 2 * cw, 2 * cw, ConvGeom::same(3));
    s.u3 = conv("u3", 2 * cw, cw, ConvGeom::same(3));
    s.u4 = conv("u4", cw, cw / 2, ConvGeom::same(3));
    s.out = conv("out", cw / 2, 3, ConvGeom::same(3), 1.0);
    return s;
  }

  ad::Var act(const ad::Var& x) const { return ad::elu(x, cfg_.elu_alpha); }

  // Encoder plus dilated block, ending at H/4 with 4cw channels.
  ad::Var encode(const Stage& s, const ad::Var& x, const std::string& where) const {
    ad::Var h = act(s.e1(x));
    h = act(s.e2(h));
    h = act(s.e3(h));
    h = act(s.e4(h));
    h = act(s.e5(h));
    h = act(s.e6(h));
    for (const auto& d : s.dilated) h = act(d(h));
    require_finite(h, where + " encoder");
    return h;
  }

  ad::Var decode(const Stage& s, const ad::Var& feat, const std::string& where) const {
    ad::Var h = act(s.m1(feat));
    h = act(s.m2(h));
    h = ad::upsample_nearest(h, 2);
    h = act(s.u1(h));
    h = act(s.u2(h));
    h = ad::upsample_nearest(h, 2);
    h = act(s.u3(h));
    h = act(s.u4(h));
    h = s.out(h);
    require_finite(h, where + " output");
    return clip_output(h);
  }

  void check_inputs(const Shape& x, const Tensor& known, const char* what) const {
    if (x.c != 3 || x.h != cfg_.input_h || x.w != cfg_.input_w)
      throw std::invalid_argument(std::string(what) + ": expected N x 3 x " + std::to_string(cfg_.input_h) + " x " +
                                  std::to_string(cfg_.input_w) + " input");
    if (known.n() != x.n || known.c() != 1 || known.h() != x.h || known.w() != x.w)
      throw std::invalid_argument(std::string(what) + ": mask shape does not match input");
  }

  GeneratorConfig cfg_;
  nn::ParamSet params_;
  Stage coarse_;
  AttentionBranch attn_;
  Stage refine_;
};

// ---- image-level API -------------------------------------------------------

struct Completion {
  ImageTensor coarse;    // normalized
  ImageTensor refined;   // normalized, raw network output
  ImageTensor completed; // normalized, known pixels restored from the input
};

/// Runs both stages on one normalized image. `image` may contain anything in
/// the hole; it is whitened before entering the network.
inline Completion complete_image(const Generator& g, const ImageTensor& image, const BinaryMask& mask) {
  if (image.range() != RangeTag::kNormalized) throw std::invalid_argument("complete_image: image must be normalized");
  if (image.channels() != 3) throw std::invalid_argument("complete_image: image must have 3 channels");
  if (image.height() != mask.height() || image.width() != mask.width())
    throw std::invalid_argument("complete_image: mask dims differ from image");
  ad::NoGradGuard no_grad;
  const Tensor holed = images_to_tensor({apply_hole(image, mask)});
  const Tensor known = masks_to_tensor({mask});
  Generator::Output out = g.forward(holed, known);
  Completion c;
  c.coarse = tensor_to_image(out.coarse.value(), 0);
  c.refined = tensor_to_image(out.refined.value(), 0);
  c.completed = tensor_to_image(paste_known(out.refined, holed, known).value(), 0);
  return c;
}

}  // namespace inpaint
