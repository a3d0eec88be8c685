// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pixel-domain data model shared by every stage: images with an explicit
// value range, binary masks (1 = known, 0 = missing), boxes and the
// per-pixel weights of the spatially discounted reconstruction loss.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "inpaint/core/kernels.hpp"
#include "inpaint/core/rng.hpp"
#include "inpaint/core/tensor.hpp"

namespace inpaint {

enum class RangeTag { kUint8, kNormalized };

inline const char* to_string(RangeTag r) { return r == RangeTag::kUint8 ? "uint8" : "normalized"; }

/// H x W x C image stored interleaved (HWC), RGB order. Values are integers in
/// [0, 255] for kUint8 and reals in [-1, 1] for kNormalized.
class ImageTensor {
 public:
  ImageTensor() = default;

  ImageTensor(int height, int width, int channels, RangeTag range, std::vector<double> data)
      : h_(height), w_(width), c_(channels), range_(range), data_(std::move(data)) {
    if (h_ < 1 || w_ < 1) throw std::invalid_argument("ImageTensor: empty image");
    if (c_ != 1 && c_ != 3) throw std::invalid_argument("ImageTensor: channels must be 1 or 3");
    if (data_.size() != static_cast<std::size_t>(h_) * w_ * c_)
      throw std::invalid_argument("ImageTensor: data size mismatch");
    const double lo = range_ == RangeTag::kUint8 ? 0.0 : -1.0;
    const double hi = range_ == RangeTag::kUint8 ? 255.0 : 1.0;
    for (double v : data_)
      if (!(v >= lo && v <= hi))
        throw std::invalid_argument(std::string("ImageTensor: value outside ") + to_string(range_) + " range");
  }

  static ImageTensor filled(int height, int width, int channels, RangeTag range, double value) {
    return ImageTensor(height, width, channels, range,
                       std::vector<double>(static_cast<std::size_t>(height) * width * channels, value));
  }

  static ImageTensor from_bytes(int height, int width, int channels, const std::vector<std::uint8_t>& bytes) {
    return ImageTensor(height, width, channels, RangeTag::kUint8, std::vector<double>(bytes.begin(), bytes.end()));
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  RangeTag range() const { return range_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<double>& data() const { return data_; }

  double at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }

  std::vector<std::uint8_t> to_bytes() const {
    if (range_ != RangeTag::kUint8) throw std::logic_error("ImageTensor::to_bytes: image is not uint8");
    std::vector<std::uint8_t> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<std::uint8_t>(data_[i]);
    return out;
  }

  bool same_dims(const ImageTensor& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
  bool operator==(const ImageTensor&) const = default;

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  RangeTag range_ = RangeTag::kUint8;
  std::vector<double> data_;
};

/// H x W map over {0, 1}; 1 marks a known pixel, 0 a missing one.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 1)
      : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width, fill) {
    if (h_ < 1 || w_ < 1) throw std::invalid_argument("BinaryMask: empty mask");
    if (fill > 1) throw std::invalid_argument("BinaryMask: values must be 0 or 1");
  }
  BinaryMask(int height, int width, std::vector<std::uint8_t> data) : h_(height), w_(width), data_(std::move(data)) {
    if (h_ < 1 || w_ < 1) throw std::invalid_argument("BinaryMask: empty mask");
    if (data_.size() != static_cast<std::size_t>(h_) * w_) throw std::invalid_argument("BinaryMask: size mismatch");
    for (auto v : data_)
      if (v > 1) throw std::invalid_argument("BinaryMask: values must be 0 or 1");
  }

  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::uint8_t>& data() const { return data_; }

  bool known(int y, int x) const { return data_[static_cast<std::size_t>(y) * w_ + x] != 0; }
  void set(int y, int x, bool known) { data_[static_cast<std::size_t>(y) * w_ + x] = known ? 1 : 0; }

  std::size_t missing_count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{0}));
  }
  std::size_t known_count() const { return data_.size() - missing_count(); }

  bool operator==(const BinaryMask&) const = default;

 private:
  int h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Half-open pixel box [x0, x1) x [y0, y1).
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  bool valid_for(int H, int W) const { return 0 <= x0 && x0 < x1 && x1 <= W && 0 <= y0 && y0 < y1 && y1 <= H; }
  bool contains(int y, int x) const { return x0 <= x && x < x1 && y0 <= y && y < y1; }

  auto operator<=>(const BoundingBox&) const = default;

  std::string str() const {
    return "(" + std::to_string(x0) + "," + std::to_string(y0) + ")-(" + std::to_string(x1) + "," +
           std::to_string(y1) + ")";
  }
};

/// Per-pixel loss weights in (0, 1].
struct WeightMap {
  int height = 0, width = 0;
  std::vector<double> data;

  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// ---- value range -----------------------------------------------------------

inline ImageTensor normalize(const ImageTensor& img) {
  if (img.range() != RangeTag::kUint8) throw std::invalid_argument("normalize: image is not uint8");
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data()[i] / 127.5 - 1.0;
  return ImageTensor(img.height(), img.width(), img.channels(), RangeTag::kNormalized, std::move(out));
}

inline ImageTensor denormalize(const ImageTensor& img) {
  if (img.range() != RangeTag::kNormalized) throw std::invalid_argument("denormalize: image is not normalized");
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::round(std::clamp(img.data()[i], -1.0, 1.0) * 127.5 + 127.5);
  return ImageTensor(img.height(), img.width(), img.channels(), RangeTag::kUint8, std::move(out));
}

/// Converts sample `n` of a normalized network tensor straight to uint8,
/// clamping out-of-range activations first.
inline ImageTensor denormalize(const Tensor& t, int n) {
  std::vector<double> out(static_cast<std::size_t>(t.h()) * t.w() * t.c());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < t.c(); ++c)
        out[(static_cast<std::size_t>(y) * t.w() + x) * t.c() + c] =
            std::round(std::clamp(t.at(n, c, y, x), -1.0, 1.0) * 127.5 + 127.5);
  return ImageTensor(t.h(), t.w(), t.c(), RangeTag::kUint8, std::move(out));
}

// ---- masks and holes -------------------------------------------------------

/// Fills missing pixels with white (+1 in the normalized range).
inline ImageTensor apply_hole(const ImageTensor& img, const BinaryMask& mask) {
  if (img.range() != RangeTag::kNormalized) throw std::invalid_argument("apply_hole: image is not normalized");
  if (img.height() != mask.height() || img.width() != mask.width())
    throw std::invalid_argument("apply_hole: mask dimensions differ from image");
  std::vector<double> out = img.data();
  const int C = img.channels();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (!mask.known(y, x))
        for (int c = 0; c < C; ++c) out[(static_cast<std::size_t>(y) * img.width() + x) * C + c] = 1.0;
  return ImageTensor(img.height(), img.width(), C, RangeTag::kNormalized, std::move(out));
}

/// Marks every pixel inside any box grown by `dilate` on all sides (clamped
/// to the frame) as missing.
inline BinaryMask mask_from_boxes(const std::vector<BoundingBox>& boxes, int H, int W, int dilate = 0) {
  if (dilate < 0) throw std::invalid_argument("mask_from_boxes: negative dilation");
  BinaryMask mask(H, W, 1);
  for (const BoundingBox& b : boxes) {
    if (!b.valid_for(H, W)) throw std::invalid_argument("mask_from_boxes: box " + b.str() + " outside frame");
    const int y0 = std::max(0, b.y0 - dilate), y1 = std::min(H, b.y1 + dilate);
    const int x0 = std::max(0, b.x0 - dilate), x1 = std::min(W, b.x1 + dilate);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) mask.set(y, x, false);
  }
  return mask;
}

/// Tight box around all missing pixels; nullopt when nothing is missing.
inline std::optional<BoundingBox> hole_bounds(const BinaryMask& mask) {
  int y0 = mask.height(), y1 = -1, x0 = mask.width(), x1 = -1;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (!mask.known(y, x)) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
  if (y1 < 0) return std::nullopt;
  return BoundingBox{x0, y0, x1 + 1, y1 + 1};
}

/// Uniformly sized and placed rectangular hole. Side lengths are drawn
/// uniformly from the integers in [ceil(min_frac*L), floor(max_frac*L)].
inline std::pair<BinaryMask, BoundingBox> random_rect_hole(Rng& rng, int H, int W, double min_frac,
                                                           double max_frac) {
  if (!(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0))
    throw std::invalid_argument("random_rect_hole: need 0 < min_frac <= max_frac <= 1");
  auto side_range = [&](int L) {
    const int lo = std::max(1, static_cast<int>(std::ceil(min_frac * L - 1e-9)));
    const int hi = static_cast<int>(std::floor(max_frac * L + 1e-9));
    if (lo > hi)
      throw std::invalid_argument("random_rect_hole: no integer side length in [" + std::to_string(min_frac * L) +
                                  ", " + std::to_string(max_frac * L) + "]");
    return std::pair{lo, hi};
  };
  const auto [hlo, hhi] = side_range(H);
  const auto [wlo, whi] = side_range(W);
  const int hh = static_cast<int>(rng.uniform_int(hlo, hhi));
  const int ww = static_cast<int>(rng.uniform_int(wlo, whi));
  const int y0 = static_cast<int>(rng.uniform_int(0, H - hh));
  const int x0 = static_cast<int>(rng.uniform_int(0, W - ww));
  BoundingBox box{x0, y0, x0 + ww, y0 + hh};
  return {mask_from_boxes({box}, H, W, 0), box};
}

/// weight(p) = gamma^d(p), d = chessboard distance to the nearest known pixel.
/// Computed with the two-pass raster chamfer transform, which is exact for
/// the chessboard metric.
inline WeightMap discount_map(const BinaryMask& mask, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("discount_map: gamma must lie in (0, 1]");
  if (mask.known_count() == 0) throw std::invalid_argument("discount_map: mask has no known pixel");
  const int H = mask.height(), W = mask.width();
  const int inf = std::numeric_limits<int>::max() / 2;
  std::vector<int> d(static_cast<std::size_t>(H) * W);
  auto at = [&](int y, int x) -> int& { return d[static_cast<std::size_t>(y) * W + x]; };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) at(y, x) = mask.known(y, x) ? 0 : inf;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int v = at(y, x);
      if (x > 0) v = std::min(v, at(y, x - 1) + 1);
      if (y > 0) {
        v = std::min(v, at(y - 1, x) + 1);
        if (x > 0) v = std::min(v, at(y - 1, x - 1) + 1);
        if (x + 1 < W) v = std::min(v, at(y - 1, x + 1) + 1);
      }
      at(y, x) = v;
    }
  for (int y = H - 1; y >= 0; --y)
    for (int x = W - 1; x >= 0; --x) {
      int v = at(y, x);
      if (x + 1 < W) v = std::min(v, at(y, x + 1) + 1);
      if (y + 1 < H) {
        v = std::min(v, at(y + 1, x) + 1);
        if (x + 1 < W) v = std::min(v, at(y + 1, x + 1) + 1);
        if (x > 0) v = std::min(v, at(y + 1, x - 1) + 1);
      }
      at(y, x) = v;
    }
  WeightMap wm{H, W, std::vector<double>(d.size())};
  for (std::size_t i = 0; i < d.size(); ++i) wm.data[i] = d[i] == 0 ? 1.0 : std::pow(gamma, d[i]);
  return wm;
}

// ---- geometry --------------------------------------------------------------

/// Bilinear resampling with half-pixel centers. Output keeps the input range
/// tag; uint8 results are rounded back to integers.
inline ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: target size must be positive");
  if (out_h == img.height() && out_w == img.width()) return img;
  const auto taps = kernels::bilinear_taps(img.height(), img.width(), 0, 0, img.height(), img.width(), out_h, out_w);
  const int C = img.channels();
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * C, 0.0);
  for (const auto& t : taps)
    for (int c = 0; c < C; ++c) out[static_cast<std::size_t>(t.out) * C + c] += t.weight * img.data()[t.in * C + c];
  const bool u8 = img.range() == RangeTag::kUint8;
  const double lo = u8 ? 0.0 : -1.0, hi = u8 ? 255.0 : 1.0;
  for (double& v : out) {
    if (u8) v = std::round(v);
    v = std::clamp(v, lo, hi);
  }
  return ImageTensor(out_h, out_w, C, img.range(), std::move(out));
}

/// Downscales a mask; a target pixel stays known iff its interpolated known
/// fraction is at least `threshold`.
inline BinaryMask resize_mask(const BinaryMask& mask, int out_h, int out_w, double threshold = 0.5) {
  if (out_h == mask.height() && out_w == mask.width()) return mask;
  const auto taps = kernels::bilinear_taps(mask.height(), mask.width(), 0, 0, mask.height(), mask.width(), out_h, out_w);
  std::vector<double> frac(static_cast<std::size_t>(out_h) * out_w, 0.0);
  for (const auto& t : taps) frac[t.out] += t.weight * mask.data()[t.in];
  std::vector<std::uint8_t> out(frac.size());
  for (std::size_t i = 0; i < frac.size(); ++i) out[i] = frac[i] < threshold ? 0 : 1;
  return BinaryMask(out_h, out_w, std::move(out));
}

/// Known pixels from `original`, missing ones from `inpainted`.
inline ImageTensor composite_back(const ImageTensor& original, const ImageTensor& inpainted,
                                  const BinaryMask& mask) {
  if (original.range() != RangeTag::kUint8 || inpainted.range() != RangeTag::kUint8)
    throw std::invalid_argument("composite_back: images must be uint8");
  if (!original.same_dims(inpainted) || original.height() != mask.height() || original.width() != mask.width())
    throw std::invalid_argument("composite_back: dimension mismatch");
  const int C = original.channels();
  std::vector<double> out = original.data();
  for (int y = 0; y < original.height(); ++y)
    for (int x = 0; x < original.width(); ++x)
      if (!mask.known(y, x))
        for (int c = 0; c < C; ++c) {
          const std::size_t i = (static_cast<std::size_t>(y) * original.width() + x) * C + c;
          out[i] = inpainted.data()[i];
        }
  return ImageTensor(original.height(), original.width(), C, RangeTag::kUint8, std::move(out));
}

// ---- network tensor conversions --------------------------------------------

/// Stacks same-sized images into an N x C x H x W tensor.
inline Tensor images_to_tensor(const std::vector<ImageTensor>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  const ImageTensor& f = imgs.front();
  Tensor t(static_cast<int>(imgs.size()), f.channels(), f.height(), f.width());
  for (int n = 0; n < t.n(); ++n) {
    const ImageTensor& im = imgs[n];
    if (!im.same_dims(f)) throw std::invalid_argument("images_to_tensor: images differ in size");
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x)
        for (int c = 0; c < f.channels(); ++c) t.at(n, c, y, x) = im.at(y, x, c);
  }
  return t;
}

/// Sample `n` of a tensor as an image, clamped into the declared range.
inline ImageTensor tensor_to_image(const Tensor& t, int n, RangeTag range = RangeTag::kNormalized) {
  const double lo = range == RangeTag::kUint8 ? 0.0 : -1.0, hi = range == RangeTag::kUint8 ? 255.0 : 1.0;
  std::vector<double> data(static_cast<std::size_t>(t.h()) * t.w() * t.c());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < t.c(); ++c)
        data[(static_cast<std::size_t>(y) * t.w() + x) * t.c() + c] = std::clamp(t.at(n, c, y, x), lo, hi);
  return ImageTensor(t.h(), t.w(), t.c(), range, std::move(data));
}

/// N x 1 x H x W tensor holding the mask values (1 known, 0 missing).
inline Tensor masks_to_tensor(const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw std::invalid_argument("masks_to_tensor: empty batch");
  Tensor t(static_cast<int>(masks.size()), 1, masks.front().height(), masks.front().width());
  for (int n = 0; n < t.n(); ++n) {
    if (masks[n].height() != t.h() || masks[n].width() != t.w())
      throw std::invalid_argument("masks_to_tensor: masks differ in size");
    for (std::size_t i = 0; i < masks[n].size(); ++i) t.sample(n)[i] = masks[n].data()[i];
  }
  return t;
}

}  // namespace inpaint
