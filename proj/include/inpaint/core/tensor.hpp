// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense 4-D NCHW tensor of doubles. Everything flowing through the networks
// (images, masks, features, scalar losses) is one of these; scalars are
// 1x1x1x1 and per-sample scalars are Nx1x1x1.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace inpaint {

struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "[" << n << "x" << c << "x" << h << "x" << w << "]";
    return os.str();
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape_(s), data_(s.numel(), fill) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw std::invalid_argument("Tensor: non-positive dimension " + s.str());
  }
  Tensor(int n, int c, int h, int w, double fill = 0.0) : Tensor(Shape{n, c, h, w}, fill) {}
  Tensor(Shape s, std::vector<double> data) : shape_(s), data_(std::move(data)) {
    if (data_.size() != s.numel())
      throw std::invalid_argument("Tensor: data size does not match shape " + s.str());
  }

  static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  // Pointer to the start of sample `n`.
  double* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.h * shape_.w; }
  const double* sample(int n) const {
    return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.h * shape_.w;
  }
  std::size_t sample_size() const { return static_cast<std::size_t>(shape_.c) * shape_.h * shape_.w; }

  double item() const {
    if (data_.size() != 1) throw std::logic_error("Tensor::item on non-scalar " + shape_.str());
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
}

}  // namespace inpaint
