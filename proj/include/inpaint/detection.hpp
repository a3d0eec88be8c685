// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Boxes of objects to remove. A pretrained detector is integrated through a
// sidecar file or an external command that prints the sidecar format; a stub
// source returns fixed boxes for tests and scripted runs.
//
// Sidecar format: one JSON object per line,
//   {"class_name": "dog", "class_id": 16, "confidence": 0.93, "box": [x0, y0, x1, y1]}
// with half-open integer pixel boxes. Blank lines are ignored.

#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "inpaint/imagecore.hpp"

namespace inpaint {

struct Detection {
  std::string class_name;
  int class_id = 0;
  double confidence = 0.0;
  BoundingBox box;

  bool operator==(const Detection&) const = default;
};

enum class DetectorKind { kStub, kSidecar, kExternalCommand };

struct DetectorSpec {
  DetectorKind kind = DetectorKind::kStub;
  std::vector<std::string> class_allowlist{"dog"};
  double confidence_threshold = 0.5;
  double nms_iou_threshold = 0.45;

  // Source-specific settings.
  std::vector<BoundingBox> stub_boxes;
  std::string stub_class_name = "dog";
  int stub_class_id = 16;  // "dog" in the 80-class COCO ordering
  std::string sidecar_path;
  std::string command;

  void validate() const {
    if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
      throw std::invalid_argument("DetectorSpec: confidence_threshold must lie in [0, 1]");
    if (!(nms_iou_threshold >= 0.0 && nms_iou_threshold <= 1.0))
      throw std::invalid_argument("DetectorSpec: nms_iou_threshold must lie in [0, 1]");
  }
};

inline std::string to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::kStub: return "stub";
    case DetectorKind::kSidecar: return "sidecar";
    case DetectorKind::kExternalCommand: return "external-command";
  }
  return "?";
}

inline DetectorKind parse_detector_kind(const std::string& s) {
  if (s == "stub") return DetectorKind::kStub;
  if (s == "sidecar") return DetectorKind::kSidecar;
  if (s == "external-command" || s == "command") return DetectorKind::kExternalCommand;
  throw std::invalid_argument("unknown detector kind '" + s + "' (expected stub, sidecar or external-command)");
}

// ---- sidecar ---------------------------------------------------------------

inline nlohmann::json detection_to_json(const Detection& d) {
  return {{"class_name", d.class_name},
          {"class_id", d.class_id},
          {"confidence", d.confidence},
          {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}}};
}

inline std::string format_detections(const std::vector<Detection>& dets) {
  std::string out;
  for (const Detection& d : dets) out += detection_to_json(d).dump() + "\n";
  return out;
}

/// Parses sidecar text; `source` names the origin in error messages.
inline std::vector<Detection> parse_detections(std::istream& in, const std::string& source) {
  std::vector<Detection> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      return std::runtime_error(source + ":" + std::to_string(lineno) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed record: ") + e.what());
    }
    Detection d;
    try {
      d.class_name = j.at("class_name").get<std::string>();
      d.class_id = j.at("class_id").get<int>();
      d.confidence = j.at("confidence").get<double>();
      const auto& b = j.at("box");
      if (!b.is_array() || b.size() != 4) throw fail("box must be [x0, y0, x1, y1]");
      for (const auto& v : b)
        if (!v.is_number_integer()) throw fail("box coordinates must be integers");
      d.box = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("bad field: ") + e.what());
    }
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0))
      throw fail("confidence " + std::to_string(d.confidence) + " outside [0, 1]");
    if (d.class_id < 0) throw fail("negative class_id");
    if (d.box.x0 < 0 || d.box.y0 < 0 || d.box.x0 >= d.box.x1 || d.box.y0 >= d.box.y1)
      throw fail("degenerate box " + d.box.str());
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<Detection> load_detections_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detection sidecar '" + path + "'");
  return parse_detections(in, path);
}

/// Rejects detections whose box does not fit an H x W image.
inline void validate_for_image(const std::vector<Detection>& dets, int H, int W) {
  for (const Detection& d : dets)
    if (!d.box.valid_for(H, W))
      throw std::invalid_argument("detection box " + d.box.str() + " outside " + std::to_string(W) + "x" +
                                  std::to_string(H) + " image");
}

// ---- sources ---------------------------------------------------------------

/// Returns the configured boxes as detections, in configuration order.
inline std::vector<Detection> stub_detector(int H, int W, const std::vector<BoundingBox>& boxes,
                                            const std::string& class_name = "dog", int class_id = 16) {
  std::vector<Detection> out;
  for (const BoundingBox& b : boxes) {
    if (!b.valid_for(H, W)) throw std::invalid_argument("stub_detector: box " + b.str() + " outside frame");
    out.push_back({class_name, class_id, 1.0, b});
  }
  return out;
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

/// Runs `<command> <image-path>` and parses its standard output.
inline std::vector<Detection> run_detector_command(const std::string& command, const std::string& image_path) {
  const std::string cmd = command + " " + shell_quote(image_path);
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("failed to launch detector command: " + command);
  std::string output;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) output.append(buf.data(), n);
  const int status = pclose(pipe);
  if (status != 0) throw std::runtime_error("detector command exited with status " + std::to_string(status));
  std::istringstream in(output);
  return parse_detections(in, "detector output");
}

inline std::vector<Detection> run_detector(const DetectorSpec& spec, const std::string& image_path, int H, int W) {
  std::vector<Detection> dets;
  switch (spec.kind) {
    case DetectorKind::kStub:
      dets = stub_detector(H, W, spec.stub_boxes, spec.stub_class_name, spec.stub_class_id);
      break;
    case DetectorKind::kSidecar:
      if (spec.sidecar_path.empty()) throw std::invalid_argument("sidecar detector needs a sidecar path");
      dets = load_detections_sidecar(spec.sidecar_path);
      break;
    case DetectorKind::kExternalCommand:
      if (spec.command.empty()) throw std::invalid_argument("external-command detector needs a command");
      dets = run_detector_command(spec.command, image_path);
      break;
  }
  validate_for_image(dets, H, W);
  return dets;
}

// ---- post-processing -------------------------------------------------------

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const long long ix = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const long long iy = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const long long inter = ix * iy;
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// Deterministic NMS order: confidence descending, then class_id, then box.
inline bool nms_before(const Detection& a, const Detection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  return a.box < b.box;
}

/// Greedy per-class suppression: a detection survives iff its IoU with every
/// already kept detection of the same class is below `iou_threshold`.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) throw std::invalid_argument("nms: threshold outside [0, 1]");
  std::stable_sort(dets.begin(), dets.end(), nms_before);
  std::vector<Detection> kept;
  for (Detection& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

/// Allowlisted classes at or above the confidence threshold, then NMS. An
/// empty allowlist selects nothing.
inline std::vector<Detection> select_targets(const std::vector<Detection>& dets, const DetectorSpec& spec) {
  spec.validate();
  std::vector<Detection> keep;
  for (const Detection& d : dets) {
    const bool allowed = std::find(spec.class_allowlist.begin(), spec.class_allowlist.end(), d.class_name) !=
                         spec.class_allowlist.end();
    if (allowed && d.confidence >= spec.confidence_threshold) keep.push_back(d);
  }
  return nms(std::move(keep), spec.nms_iou_threshold);
}

inline std::vector<BoundingBox> boxes_of(const std::vector<Detection>& dets) {
  std::vector<BoundingBox> out;
  for (const Detection& d : dets) out.push_back(d.box);
  return out;
}

}  // namespace inpaint
