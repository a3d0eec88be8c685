// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image files via OpenCV's codecs. Images are always 8-bit RGB in memory.

#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "inpaint/imagecore.hpp"

namespace inpaint {

/// Reads any format OpenCV decodes; grey and alpha inputs become RGB.
inline ImageTensor read_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image '" + path + "'");
  const int H = bgr.rows, W = bgr.cols;
  std::vector<double> data(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) data[(static_cast<std::size_t>(y) * W + x) * 3 + c] = row[x][2 - c];
  }
  return ImageTensor(H, W, 3, RangeTag::kUint8, std::move(data));
}

/// Writes a uint8 image; the format follows the file extension.
inline void write_image(const std::string& path, const ImageTensor& img) {
  if (img.range() != RangeTag::kUint8) throw std::invalid_argument("write_image: image must be uint8");
  cv::Mat out(img.height(), img.width(), img.channels() == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (img.channels() == 3) {
        auto& px = out.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) px[2 - c] = static_cast<std::uint8_t>(img.at(y, x, c));
      } else {
        out.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(img.at(y, x, 0));
      }
    }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  bool ok = false;
  try {
    ok = cv::imwrite(path, out);
  } catch (const cv::Exception& e) {
    throw std::runtime_error("cannot write image '" + path + "': " + e.what());
  }
  if (!ok) throw std::runtime_error("cannot write image '" + path + "'");
}

/// Mask files: white (>= 128) marks a known pixel, black a missing one.
inline BinaryMask read_mask(const std::string& path) {
  cv::Mat g = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw std::runtime_error("cannot read mask '" + path + "'");
  BinaryMask m(g.rows, g.cols, 1);
  for (int y = 0; y < g.rows; ++y)
    for (int x = 0; x < g.cols; ++x) m.set(y, x, g.at<std::uint8_t>(y, x) >= 128);
  return m;
}

inline void write_mask(const std::string& path, const BinaryMask& m) {
  std::vector<double> data(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) data[i] = m.data()[i] ? 255.0 : 0.0;
  write_image(path, ImageTensor(m.height(), m.width(), 1, RangeTag::kUint8, std::move(data)));
}

}  // namespace inpaint
