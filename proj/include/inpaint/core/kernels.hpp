// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Raw tensor kernels. No graph recording happens here; the autodiff layer in
// autodiff/ops.hpp wraps each of these in a differentiable op.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "inpaint/core/tensor.hpp"

namespace inpaint::kernels {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

/// Square-kernel 2-D convolution geometry (zero padding on all sides).
struct ConvGeom {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int dilation = 1;

  int out_size(int in) const { return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }

  /// Padding that keeps H/stride output for odd kernels ("same" convolution).
  static ConvGeom same(int kernel, int stride = 1, int dilation = 1) {
    return ConvGeom{kernel, stride, dilation * (kernel - 1) / 2, dilation};
  }
  static ConvGeom valid(int kernel) { return ConvGeom{kernel, 1, 0, 1}; }
};

// cols is (C*k*k) x (Ho*Wo), row index ((c*k)+ky)*k+kx.
inline void im2col(const double* img, int C, int H, int W, const ConvGeom& g, int Ho, int Wo,
                   double* cols) {
  const int k = g.kernel;
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    const double* plane = img + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int dy = ky * g.dilation - g.pad;
        const int dx = kx * g.dilation - g.pad;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * g.stride + dy;
          double* out = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + Wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * g.stride + dx;
            out[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into an image (img must be zeroed by caller).
inline void col2im(const double* cols, int C, int H, int W, const ConvGeom& g, int Ho, int Wo,
                   double* img) {
  const int k = g.kernel;
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    double* plane = img + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int dy = ky * g.dilation - g.pad;
        const int dx = kx * g.dilation - g.pad;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * g.stride + dy;
          if (iy < 0 || iy >= H) continue;
          const double* in = row + static_cast<std::size_t>(oy) * Wo;
          double* dst = plane + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * g.stride + dx;
            if (ix >= 0 && ix < W) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

/// y[n] = W * im2col(x[n]); weight is Co x Ci x k x k.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const ConvGeom& g) {
  const int N = x.n(), Ci = x.c(), H = x.h(), W = x.w();
  const int Co = weight.n();
  if (weight.c() != Ci || weight.h() != g.kernel || weight.w() != g.kernel)
    throw std::invalid_argument("conv2d: weight " + weight.shape().str() + " incompatible with input " +
                                x.shape().str());
  const int Ho = g.out_size(H), Wo = g.out_size(W);
  if (Ho < 1 || Wo < 1) throw std::invalid_argument("conv2d: input too small for kernel");
  const int K = Ci * g.kernel * g.kernel;
  Tensor y(N, Co, Ho, Wo);
  std::vector<double> cols(static_cast<std::size_t>(K) * Ho * Wo);
  ConstMapMat Wm(weight.data(), Co, K);
  for (int n = 0; n < N; ++n) {
    im2col(x.sample(n), Ci, H, W, g, Ho, Wo, cols.data());
    ConstMapMat C(cols.data(), K, static_cast<Eigen::Index>(Ho) * Wo);
    MapMat Y(y.sample(n), Co, static_cast<Eigen::Index>(Ho) * Wo);
    Y.noalias() = Wm * C;
  }
  return y;
}

/// Gradient of conv2d w.r.t. its input (a transposed convolution).
inline Tensor conv2d_input_grad(const Tensor& gy, const Tensor& weight, const ConvGeom& g, int H, int W) {
  const int N = gy.n(), Co = gy.c(), Ho = gy.h(), Wo = gy.w();
  const int Ci = weight.c();
  if (weight.n() != Co) throw std::invalid_argument("conv2d_input_grad: channel mismatch");
  if (g.out_size(H) != Ho || g.out_size(W) != Wo)
    throw std::invalid_argument("conv2d_input_grad: geometry does not map input to grad shape");
  const int K = Ci * g.kernel * g.kernel;
  Tensor gx(N, Ci, H, W);
  std::vector<double> cols(static_cast<std::size_t>(K) * Ho * Wo);
  ConstMapMat Wm(weight.data(), Co, K);
  for (int n = 0; n < N; ++n) {
    ConstMapMat G(gy.sample(n), Co, static_cast<Eigen::Index>(Ho) * Wo);
    MapMat C(cols.data(), K, static_cast<Eigen::Index>(Ho) * Wo);
    C.noalias() = Wm.transpose() * G;
    col2im(cols.data(), Ci, H, W, g, Ho, Wo, gx.sample(n));
  }
  return gx;
}

/// Gradient of conv2d w.r.t. its weight, summed over the batch.
inline Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, const ConvGeom& g) {
  const int N = x.n(), Ci = x.c(), H = x.h(), W = x.w();
  const int Co = gy.c(), Ho = gy.h(), Wo = gy.w();
  if (gy.n() != N || g.out_size(H) != Ho || g.out_size(W) != Wo)
    throw std::invalid_argument("conv2d_weight_grad: shape mismatch");
  const int K = Ci * g.kernel * g.kernel;
  Tensor gw(Co, Ci, g.kernel, g.kernel);
  std::vector<double> cols(static_cast<std::size_t>(K) * Ho * Wo);
  MapMat GW(gw.data(), Co, K);
  for (int n = 0; n < N; ++n) {
    im2col(x.sample(n), Ci, H, W, g, Ho, Wo, cols.data());
    ConstMapMat C(cols.data(), K, static_cast<Eigen::Index>(Ho) * Wo);
    ConstMapMat G(gy.sample(n), Co, static_cast<Eigen::Index>(Ho) * Wo);
    GW.noalias() += G * C.transpose();
  }
  return gw;
}

inline Tensor upsample_nearest(const Tensor& x, int f) {
  Tensor y(x.n(), x.c(), x.h() * f, x.w() * f);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx) y.at(n, c, yy, xx) = x.at(n, c, yy / f, xx / f);
  return y;
}

// Adjoint of upsample_nearest: f x f block sums.
inline Tensor sum_pool(const Tensor& x, int f) {
  if (x.h() % f != 0 || x.w() % f != 0) throw std::invalid_argument("sum_pool: size not divisible");
  Tensor y(x.n(), x.c(), x.h() / f, x.w() / f);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < x.h(); ++yy)
        for (int xx = 0; xx < x.w(); ++xx) y.at(n, c, yy / f, xx / f) += x.at(n, c, yy, xx);
  return y;
}

/// Sub-pixel rearrangement: out(y, x, k) = in(y/s, x/s, k*s*s + (y%s)*s + x%s).
inline Tensor pixel_shuffle(const Tensor& x, int s) {
  const int s2 = s * s;
  if (s < 1 || x.c() % s2 != 0)
    throw std::invalid_argument("pixel_shuffle: channel count not divisible by scale^2");
  Tensor y(x.n(), x.c() / s2, x.h() * s, x.w() * s);
  for (int n = 0; n < y.n(); ++n)
    for (int k = 0; k < y.c(); ++k)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx)
          y.at(n, k, yy, xx) = x.at(n, k * s2 + (yy % s) * s + (xx % s), yy / s, xx / s);
  return y;
}

inline Tensor pixel_unshuffle(const Tensor& y, int s) {
  const int s2 = s * s;
  if (s < 1 || y.h() % s != 0 || y.w() % s != 0)
    throw std::invalid_argument("pixel_unshuffle: spatial size not divisible by scale");
  Tensor x(y.n(), y.c() * s2, y.h() / s, y.w() / s);
  for (int n = 0; n < y.n(); ++n)
    for (int k = 0; k < y.c(); ++k)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx)
          x.at(n, k * s2 + (yy % s) * s + (xx % s), yy / s, xx / s) = y.at(n, k, yy, xx);
  return x;
}

/// Per-sample sparse linear map between spatial grids, applied channel-wise.
/// Crops, pastes and bilinear resizes are all expressed this way so that a
/// single forward/adjoint pair covers their gradients.
struct Resampler {
  struct Tap {
    std::uint32_t out;
    std::uint32_t in;
    double weight;
  };
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<std::vector<Tap>> taps;  // one list per sample

  Tensor apply(const Tensor& x) const {
    check(x, in_h, in_w, "Resampler::apply");
    Tensor y(x.n(), x.c(), out_h, out_w);
    const std::size_t in_plane = static_cast<std::size_t>(in_h) * in_w;
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c) {
        const double* src = x.sample(n) + c * in_plane;
        double* dst = y.sample(n) + c * out_plane;
        for (const Tap& t : taps[n]) dst[t.out] += t.weight * src[t.in];
      }
    return y;
  }

  Tensor apply_adjoint(const Tensor& y) const {
    check(y, out_h, out_w, "Resampler::apply_adjoint");
    Tensor x(y.n(), y.c(), in_h, in_w);
    const std::size_t in_plane = static_cast<std::size_t>(in_h) * in_w;
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int n = 0; n < y.n(); ++n)
      for (int c = 0; c < y.c(); ++c) {
        const double* src = y.sample(n) + c * out_plane;
        double* dst = x.sample(n) + c * in_plane;
        for (const Tap& t : taps[n]) dst[t.in] += t.weight * src[t.out];
      }
    return x;
  }

 private:
  void check(const Tensor& t, int h, int w, const char* what) const {
    if (t.h() != h || t.w() != w || static_cast<std::size_t>(t.n()) != taps.size())
      throw std::invalid_argument(std::string(what) + ": tensor " + t.shape().str() +
                                  " does not match resampler geometry");
  }
};

/// Half-pixel-center bilinear weights mapping the source rectangle
/// [y0, y0+src_h) x [x0, x0+src_w) of an in_h x in_w grid onto out_h x out_w.
/// Samples falling outside the source rectangle clamp to its border.
inline std::vector<Resampler::Tap> bilinear_taps(int /*in_h*/, int in_w, int y0, int x0, int src_h, int src_w,
                                                 int out_h, int out_w) {
  std::vector<Resampler::Tap> taps;
  taps.reserve(static_cast<std::size_t>(out_h) * out_w * 4);
  const double sy = static_cast<double>(src_h) / out_h;
  const double sx = static_cast<double>(src_w) / out_w;
  auto axis = [](int o, double scale, int len, int& i0, int& i1, double& f) {
    double pos = (o + 0.5) * scale - 0.5;
    if (pos < 0) pos = 0;
    if (pos > len - 1) pos = len - 1;
    i0 = static_cast<int>(pos);
    i1 = i0 + 1 < len ? i0 + 1 : i0;
    f = pos - i0;
  };
  for (int oy = 0; oy < out_h; ++oy) {
    int ya, yb;
    double fy;
    axis(oy, sy, src_h, ya, yb, fy);
    for (int ox = 0; ox < out_w; ++ox) {
      int xa, xb;
      double fx;
      axis(ox, sx, src_w, xa, xb, fx);
      const auto out = static_cast<std::uint32_t>(oy * out_w + ox);
      auto add = [&](int yy, int xx, double wgt) {
        if (wgt == 0.0) return;
        const auto in = static_cast<std::uint32_t>((y0 + yy) * in_w + (x0 + xx));
        taps.push_back({out, in, wgt});
      };
      add(ya, xa, (1 - fy) * (1 - fx));
      add(ya, xb, (1 - fy) * fx);
      add(yb, xa, fy * (1 - fx));
      add(yb, xb, fy * fx);
    }
  }
  return taps;
}

}  // namespace inpaint::kernels
