// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end object removal: detect -> mask -> downscale -> inpaint ->
// upscale -> composite. Also the key=value configuration format, the batch
// evaluation report and the command-line front end.

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "inpaint/detection.hpp"
#include "inpaint/generator.hpp"
#include "inpaint/io.hpp"
#include "inpaint/superres.hpp"
#include "inpaint/training.hpp"

namespace inpaint {

// ---- key=value configuration ------------------------------------------------

/// Every key the configuration file may contain. Keys without a prefix drive
/// the inference pipeline; "train." keys drive train-inpaint, "sr." keys
/// train-sr and "eval." keys the eval command.
inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "detector", "detector.classes", "detector.confidence", "detector.nms_iou", "detector.boxes",
      "detector.sidecar", "detector.command", "inpaint_checkpoint", "sr_checkpoint", "mask_dilate", "input_size",
      "output_dir", "metrics", "seed",
      "train.image_dir", "train.manifest", "train.val_fraction", "train.base_width", "train.critic_width",
      "train.use_attention", "train.batch_size", "train.n_critic", "train.learning_rate", "train.beta1",
      "train.beta2", "train.gamma", "train.max_steps", "train.checkpoint_interval", "train.output_dir",
      "train.resume_from", "train.hole_min_frac", "train.hole_max_frac", "train.w_coarse_l1", "train.w_refine_l1",
      "train.w_gan_global", "train.w_gan_local", "train.w_gp",
      "sr.image_dir", "sr.manifest", "sr.width", "sr.residual_blocks", "sr.adversarial", "sr.critic_width",
      "sr.w_adversarial", "sr.w_gp", "sr.n_critic", "sr.batch_size", "sr.learning_rate", "sr.max_steps",
      "sr.checkpoint_interval", "sr.output_dir", "sr.resume_from",
      "eval.manifest", "eval.image_dir", "eval.split", "eval.report", "eval.hole_min_frac", "eval.hole_max_frac"};
  return keys;
}

/// Flat key=value settings. '#' starts a comment; blank lines are ignored;
/// whitespace around keys and values is trimmed. Later assignments win.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& in, const std::string& source) {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key = value");
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), source + ":" + std::to_string(lineno));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value, const std::string& where = "override") {
    if (!known_config_keys().count(key)) throw std::invalid_argument(where + ": unknown config key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <class T>
  T get(const std::string& key, T fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
      if (v == "false" || v == "0" || v == "off" || v == "no") return false;
      throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + v + "'");
    } else {
      std::istringstream is(v);
      T out{};
      if (!(is >> out) || !(is >> std::ws).eof())
        throw std::invalid_argument("config key '" + key + "': cannot parse '" + v + "'");
      return out;
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, sep)) {
    item = KeyValues::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// "x0,y0,x1,y1"
inline BoundingBox parse_box(const std::string& s) {
  const auto parts = split_list(s, ',');
  if (parts.size() != 4) throw std::invalid_argument("box '" + s + "': expected x0,y0,x1,y1");
  int v[4];
  for (int i = 0; i < 4; ++i) {
    std::size_t used = 0;
    try {
      v[i] = std::stoi(parts[static_cast<std::size_t>(i)], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != parts[static_cast<std::size_t>(i)].size()) throw std::invalid_argument("box '" + s + "': bad integer");
  }
  BoundingBox b{v[0], v[1], v[2], v[3]};
  if (b.x0 < 0 || b.y0 < 0 || b.x0 >= b.x1 || b.y0 >= b.y1) throw std::invalid_argument("box '" + s + "' is empty");
  return b;
}

/// "256", "256x192" (height x width) or "256,192".
inline std::pair<int, int> parse_size(const std::string& s) {
  auto parts = split_list(s, s.find('x') != std::string::npos ? 'x' : ',');
  if (parts.size() == 1) parts.push_back(parts[0]);
  if (parts.size() != 2) throw std::invalid_argument("size '" + s + "': expected H or HxW");
  try {
    const int h = std::stoi(parts[0]), w = std::stoi(parts[1]);
    if (h < 1 || w < 1) throw std::invalid_argument("");
    return {h, w};
  } catch (const std::exception&) {
    throw std::invalid_argument("size '" + s + "': expected positive integers");
  }
}

// ---- pipeline ----------------------------------------------------------------

struct PipelineConfig {
  DetectorSpec detector;
  std::string inpaint_checkpoint;
  std::string sr_checkpoint;  // empty: bilinear upscaling
  int mask_dilate = 0;
  int input_h = 256, input_w = 256;
  std::string output_dir = "out";
  bool metrics = false;

  void validate() const {
    detector.validate();
    if (inpaint_checkpoint.empty()) throw std::invalid_argument("pipeline: inpaint_checkpoint is not set");
    if (!std::filesystem::exists(inpaint_checkpoint))
      throw std::invalid_argument("pipeline: inpaint checkpoint '" + inpaint_checkpoint + "' does not exist");
    if (!sr_checkpoint.empty() && !std::filesystem::exists(sr_checkpoint))
      throw std::invalid_argument("pipeline: sr checkpoint '" + sr_checkpoint + "' does not exist");
    if (mask_dilate < 0) throw std::invalid_argument("pipeline: mask_dilate must be >= 0");
    if (input_h < 1 || input_w < 1) throw std::invalid_argument("pipeline: input_size must be positive");
  }
};

inline DetectorSpec detector_spec_from(const KeyValues& kv) {
  DetectorSpec d;
  d.kind = parse_detector_kind(kv.str("detector", "stub"));
  if (kv.has("detector.classes")) d.class_allowlist = split_list(kv.str("detector.classes"), ',');
  d.confidence_threshold = kv.get("detector.confidence", d.confidence_threshold);
  d.nms_iou_threshold = kv.get("detector.nms_iou", d.nms_iou_threshold);
  for (const auto& b : split_list(kv.str("detector.boxes"), ';')) d.stub_boxes.push_back(parse_box(b));
  d.sidecar_path = kv.str("detector.sidecar");
  d.command = kv.str("detector.command");
  return d;
}

inline PipelineConfig pipeline_config_from(const KeyValues& kv) {
  PipelineConfig c;
  c.detector = detector_spec_from(kv);
  c.inpaint_checkpoint = kv.str("inpaint_checkpoint");
  c.sr_checkpoint = kv.str("sr_checkpoint");
  c.mask_dilate = kv.get("mask_dilate", c.mask_dilate);
  if (kv.has("input_size")) std::tie(c.input_h, c.input_w) = parse_size(kv.str("input_size"));
  c.output_dir = kv.str("output_dir", c.output_dir);
  c.metrics = kv.get("metrics", c.metrics);
  return c;
}

/// Models loaded once and shared read-only across runs.
struct PipelineModels {
  Generator generator;
  std::optional<SRNet> sr;
};

inline PipelineModels load_models(const PipelineConfig& cfg) {
  cfg.validate();
  PipelineModels m{load_generator(cfg.inpaint_checkpoint), std::nullopt};
  const GeneratorConfig& g = m.generator.config();
  if (g.input_h != cfg.input_h || g.input_w != cfg.input_w)
    throw std::invalid_argument("pipeline: input_size " + std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) +
                                " differs from the inpaint checkpoint's " + std::to_string(g.input_h) + "x" +
                                std::to_string(g.input_w));
  if (!cfg.sr_checkpoint.empty()) {
    m.sr = load_sr_net(cfg.sr_checkpoint);
    if (m.sr->config().input_h != cfg.input_h || m.sr->config().input_w != cfg.input_w)
      throw std::invalid_argument("pipeline: sr checkpoint input size differs from input_size");
  }
  return m;
}

/// Inpaints at model resolution: squash-resizes image and mask to the model
/// input, completes, and returns the normalized completion.
inline ImageTensor inpaint_at_model_size(const Generator& g, const ImageTensor& image_u8, const BinaryMask& mask) {
  const int h = g.config().input_h, w = g.config().input_w;
  const BinaryMask small = resize_mask(mask, h, w, 0.5);
  if (small.known_count() == 0)
    throw std::invalid_argument("hole covers the whole frame at model resolution; nothing to attend to");
  return complete_image(g, normalize(resize_bilinear(image_u8, h, w)), small).completed;
}

/// x4 with the network when present, bilinear otherwise. Normalized in and out.
inline ImageTensor upscale(const std::optional<SRNet>& sr, const ImageTensor& img) {
  if (sr) return sr_forward(*sr, img);
  return resize_bilinear(img, 4 * img.height(), 4 * img.width());
}

inline nlohmann::json metrics_json(const ImageMetrics& m) {
  return {{"l1", m.l1}, {"l2", m.l2}, {"psnr", m.psnr}, {"tv", m.tv}};
}

struct PipelineResult {
  std::string output_path;
  bool target_found = false;
  nlohmann::json report;
};

inline std::string output_path_for(const std::string& image_path, const std::string& output_dir) {
  return (std::filesystem::path(output_dir) / (std::filesystem::path(image_path).stem().string() + "_inpainted.png"))
      .string();
}

/// Full pipeline on one image. The output is always PNG so that pixels
/// outside the hole survive bit-exactly. A JSON line describing the run is
/// appended to <output_dir>/run_report.jsonl.
inline PipelineResult run_pipeline(const std::string& image_path, const PipelineConfig& cfg,
                                   const PipelineModels& models, std::ostream* log = &std::cerr) {
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double, std::milli>(b - a).count(); };
  const auto t0 = clock::now();
  const ImageTensor image = read_image(image_path);
  const int H = image.height(), W = image.width();

  PipelineResult res;
  res.output_path = output_path_for(image_path, cfg.output_dir);
  nlohmann::json& rep = res.report;
  rep["image"] = image_path;
  rep["output"] = res.output_path;
  rep["warnings"] = nlohmann::json::array();

  const auto dets = select_targets(run_detector(cfg.detector, image_path, H, W), cfg.detector);
  const auto t1 = clock::now();
  rep["detections"] = nlohmann::json::array();
  for (const auto& d : dets) rep["detections"].push_back(detection_to_json(d));

  nlohmann::json timings{{"detect_ms", ms(t0, t1)}};
  if (dets.empty()) {
    write_image(res.output_path, image);
    rep["status"] = "no target found";
    rep["mask"] = {{"missing_pixels", 0}, {"missing_fraction", 0.0}};
    if (log) *log << image_path << ": no target found, input copied to " << res.output_path << "\n";
  } else {
    res.target_found = true;
    const BinaryMask mask = mask_from_boxes(boxes_of(dets), H, W, cfg.mask_dilate);
    const double frac = static_cast<double>(mask.missing_count()) / static_cast<double>(mask.size());
    if (frac > 0.5) {
      const std::string w = "hole covers " + std::to_string(static_cast<int>(frac * 100)) +
                            "% of the frame; large removals tend to look worse";
      rep["warnings"].push_back(w);
      if (log) *log << "warning: " << image_path << ": " << w << "\n";
    }
    const ImageTensor small = inpaint_at_model_size(models.generator, image, mask);
    const auto t2 = clock::now();
    const ImageTensor big = denormalize(resize_bilinear(upscale(models.sr, small), H, W));
    const auto t3 = clock::now();
    const ImageTensor out = composite_back(image, big, mask);
    write_image(res.output_path, out);
    const auto t4 = clock::now();
    rep["status"] = "ok";
    rep["mask"] = {{"missing_pixels", mask.missing_count()}, {"missing_fraction", frac}, {"dilate", cfg.mask_dilate}};
    rep["upscaler"] = models.sr ? "network" : "bilinear";
    timings["inpaint_ms"] = ms(t1, t2);
    timings["upscale_ms"] = ms(t2, t3);
    timings["composite_ms"] = ms(t3, t4);
    if (cfg.metrics) {
      rep["metrics_vs_input"] = metrics_json(eval_metrics(out, image));
      rep["metrics_vs_input_hole"] = metrics_json(eval_metrics(out, image, &mask));
    }
    if (log) *log << image_path << ": removed " << dets.size() << " object(s), wrote " << res.output_path << "\n";
  }
  timings["total_ms"] = ms(t0, clock::now());
  rep["timings"] = timings;

  std::filesystem::create_directories(cfg.output_dir);
  const std::string report_path = (std::filesystem::path(cfg.output_dir) / "run_report.jsonl").string();
  std::ofstream rf(report_path, std::ios::app);
  if (!rf) throw std::runtime_error("cannot open run report '" + report_path + "'");
  rf << rep.dump() << "\n";
  return res;
}

inline PipelineResult run_pipeline(const std::string& image_path, const PipelineConfig& cfg,
                                   std::ostream* log = &std::cerr) {
  return run_pipeline(image_path, cfg, load_models(cfg), log);
}

// ---- evaluation ----------------------------------------------------------------

/// Maps (normalized ground truth at model size, hole mask) to a normalized
/// completion. Only the known pixels of the ground truth may be used.
using Completer = std::function<ImageTensor(const ImageTensor&, const BinaryMask&)>;

inline Completer generator_completer(const Generator& g) {
  return [&g](const ImageTensor& gt, const BinaryMask& mask) { return complete_image(g, gt, mask).completed; };
}

struct EvalOptions {
  int input_h = 256, input_w = 256;
  std::string split = "val";  // "train", "val" or "all"
  double hole_min_frac = 0.25;
  double hole_max_frac = 0.5;
  std::uint64_t seed = 0;
};

struct EvalRow {
  std::string image;
  ImageMetrics full, hole;
};

inline nlohmann::json eval_row_json(const EvalRow& r) {
  return {{"image", r.image}, {"full", metrics_json(r.full)}, {"hole", metrics_json(r.hole)}};
}

/// One row per readable image plus a final "mean" row. Holes are synthetic
/// rectangles drawn from a generator seeded by opts.seed, so ground truth is
/// known everywhere. Metrics are computed at model resolution in uint8 units.
inline std::vector<EvalRow> eval_dataset(const Manifest& manifest, const EvalOptions& opts, const Completer& complete,
                                         const std::string& report_path = "", std::ostream* log = &std::cerr) {
  std::vector<std::string> files;
  for (const auto& e : manifest.entries)
    if (opts.split == "all" || e.split == opts.split) files.push_back(e.path);
  if (files.empty()) throw std::invalid_argument("eval: manifest has no images in split '" + opts.split + "'");
  Rng rng(opts.seed);
  std::vector<EvalRow> rows;
  for (const auto& rel : files) {
    // Draw the hole first so the sequence does not depend on which files decode.
    const BinaryMask mask = random_rect_hole(rng, opts.input_h, opts.input_w, opts.hole_min_frac, opts.hole_max_frac).first;
    ImageTensor gt;
    try {
      gt = resize_bilinear(read_image(manifest.full_path(rel)), opts.input_h, opts.input_w);
    } catch (const std::exception& e) {
      if (log) *log << "warning: skipping unreadable image: " << e.what() << "\n";
      continue;
    }
    const ImageTensor pred = denormalize(complete(normalize(gt), mask));
    rows.push_back({rel, eval_metrics(pred, gt), eval_metrics(pred, gt, &mask)});
  }
  if (rows.empty()) throw std::runtime_error("eval: no readable image");
  EvalRow mean{"mean", {0, 0, 0, 0}, {0, 0, 0, 0}};
  auto acc = [](ImageMetrics& a, const ImageMetrics& b) { a.l1 += b.l1, a.l2 += b.l2, a.psnr += b.psnr, a.tv += b.tv; };
  for (const auto& r : rows) acc(mean.full, r.full), acc(mean.hole, r.hole);
  const double n = static_cast<double>(rows.size());
  for (ImageMetrics* m : {&mean.full, &mean.hole}) m->l1 /= n, m->l2 /= n, m->psnr /= n, m->tv /= n;
  rows.push_back(mean);
  if (!report_path.empty()) {
    const auto parent = std::filesystem::path(report_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write eval report '" + report_path + "'");
    for (const auto& r : rows) out << eval_row_json(r).dump() << "\n";
  }
  return rows;
}

// ---- training configuration from key=value -----------------------------------------

inline TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig c;
  if (kv.has("input_size")) std::tie(c.generator.input_h, c.generator.input_w) = parse_size(kv.str("input_size"));
  c.generator.base_width = kv.get("train.base_width", c.generator.base_width);
  c.generator.use_attention = kv.get("train.use_attention", c.generator.use_attention);
  c.critic_width = kv.get("train.critic_width", c.critic_width);
  c.batch_size = kv.get("train.batch_size", c.batch_size);
  c.n_critic = kv.get("train.n_critic", c.n_critic);
  c.learning_rate = kv.get("train.learning_rate", c.learning_rate);
  c.beta1 = kv.get("train.beta1", c.beta1);
  c.beta2 = kv.get("train.beta2", c.beta2);
  c.gamma = kv.get("train.gamma", c.gamma);
  c.max_steps = kv.get("train.max_steps", c.max_steps);
  c.seed = kv.get("seed", c.seed);
  c.hole_min_frac = kv.get("train.hole_min_frac", c.hole_min_frac);
  c.hole_max_frac = kv.get("train.hole_max_frac", c.hole_max_frac);
  c.loss.w_coarse_l1 = kv.get("train.w_coarse_l1", c.loss.w_coarse_l1);
  c.loss.w_refine_l1 = kv.get("train.w_refine_l1", c.loss.w_refine_l1);
  c.loss.w_gan_global = kv.get("train.w_gan_global", c.loss.w_gan_global);
  c.loss.w_gan_local = kv.get("train.w_gan_local", c.loss.w_gan_local);
  c.loss.w_gp = kv.get("train.w_gp", c.loss.w_gp);
  c.image_dir = kv.str("train.image_dir");
  c.manifest_path = kv.str("train.manifest");
  c.val_fraction = kv.get("train.val_fraction", c.val_fraction);
  c.checkpoint_interval = kv.get("train.checkpoint_interval", c.checkpoint_interval);
  c.output_dir = kv.str("train.output_dir", c.output_dir);
  c.resume_from = kv.str("train.resume_from");
  return c;
}

inline SRTrainConfig sr_train_config_from(const KeyValues& kv) {
  SRTrainConfig c;
  if (kv.has("input_size")) std::tie(c.net.input_h, c.net.input_w) = parse_size(kv.str("input_size"));
  c.net.width = kv.get("sr.width", c.net.width);
  c.net.n_residual_blocks = kv.get("sr.residual_blocks", c.net.n_residual_blocks);
  c.net.adversarial = kv.get("sr.adversarial", c.net.adversarial);
  c.critic_width = kv.get("sr.critic_width", c.critic_width);
  c.w_adversarial = kv.get("sr.w_adversarial", c.w_adversarial);
  c.w_gp = kv.get("sr.w_gp", c.w_gp);
  c.n_critic = kv.get("sr.n_critic", c.n_critic);
  c.batch_size = kv.get("sr.batch_size", c.batch_size);
  c.learning_rate = kv.get("sr.learning_rate", c.learning_rate);
  c.max_steps = kv.get("sr.max_steps", c.max_steps);
  c.seed = kv.get("seed", c.seed);
  c.image_dir = kv.str("sr.image_dir");
  c.manifest_path = kv.str("sr.manifest");
  c.checkpoint_interval = kv.get("sr.checkpoint_interval", c.checkpoint_interval);
  c.output_dir = kv.str("sr.output_dir", c.output_dir);
  c.resume_from = kv.str("sr.resume_from");
  return c;
}

// ---- command line --------------------------------------------------------------

inline constexpr int kExitOk = 0, kExitUsage = 1, kExitRuntime = 2;

namespace cli_detail {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline std::string format_metrics(const ImageMetrics& m) {
  std::ostringstream os;
  os << "l1=" << m.l1 << " l2=" << m.l2 << " psnr=" << m.psnr << " tv=" << m.tv;
  return os.str();
}

}  // namespace cli_detail

/// In-process entry point. Exit codes: 0 success, 1 usage error, 2 runtime
/// error. Normal output goes to `out`, diagnostics to `err`.
inline int cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Object removal by detection, inpainting and super-resolution", "inpaint"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::vector<std::string> sets;
  auto common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    sc->add_option("--set", sets, "override a configuration key (key=value), repeatable");
    sc->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { seed = s, seed_given = true; },
                                           "seed for every random choice");
  };

  std::string image, output, mask_path, checkpoint, pred_path, gt_path, report, manifest_path, image_dir, split;
  std::vector<std::string> boxes;
  int dilate = -1;
  std::int64_t steps = -1;
  bool identity = false;

  auto* run = app.add_subcommand("run", "remove detected objects from a photo");
  common(run);
  run->add_option("--image", image, "input photo")->required()->check(CLI::ExistingFile);
  run->add_option("--output-dir", output, "directory for the result and run report");
  run->add_option("--box", boxes, "stub detection x0,y0,x1,y1 (selects the stub detector), repeatable");

  auto* detect = app.add_subcommand("detect", "print selected detections as JSON lines");
  common(detect);
  detect->add_option("--image", image, "input photo")->required()->check(CLI::ExistingFile);
  detect->add_option("--box", boxes, "stub detection x0,y0,x1,y1, repeatable");
  detect->add_option("--out", output, "write a detection sidecar instead of printing");

  auto* mask = app.add_subcommand("mask", "write the hole mask for the selected detections");
  common(mask);
  mask->add_option("--image", image, "input photo")->required()->check(CLI::ExistingFile);
  mask->add_option("--box", boxes, "stub detection x0,y0,x1,y1, repeatable");
  mask->add_option("--dilate", dilate, "grow boxes by this many pixels");
  mask->add_option("--out", output, "mask file (black = missing)")->required();

  auto* inpaint_cmd = app.add_subcommand("inpaint", "fill a mask at model resolution");
  common(inpaint_cmd);
  inpaint_cmd->add_option("--checkpoint", checkpoint, "inpainting checkpoint");
  inpaint_cmd->add_option("--image", image, "input image")->required()->check(CLI::ExistingFile);
  inpaint_cmd->add_option("--mask", mask_path, "mask file (black = missing)")->required()->check(CLI::ExistingFile);
  inpaint_cmd->add_option("--out", output, "output image")->required();

  auto* upscale_cmd = app.add_subcommand("upscale", "x4 super-resolution (bilinear without a checkpoint)");
  common(upscale_cmd);
  upscale_cmd->add_option("--checkpoint", checkpoint, "super-resolution checkpoint");
  upscale_cmd->add_option("--image", image, "input image")->required()->check(CLI::ExistingFile);
  upscale_cmd->add_option("--out", output, "output image")->required();

  auto* train_inpaint = app.add_subcommand("train-inpaint", "train the inpainting networks");
  common(train_inpaint);
  train_inpaint->add_option("--steps", steps, "generator steps to run to");
  train_inpaint->add_option("--image-dir", image_dir, "training images");
  train_inpaint->add_option("--output-dir", output, "checkpoint and metrics directory");
  train_inpaint->add_option("--resume", checkpoint, "checkpoint to resume from");

  auto* train_sr = app.add_subcommand("train-sr", "train the super-resolution network");
  common(train_sr);
  train_sr->add_option("--steps", steps, "steps to run to");
  train_sr->add_option("--image-dir", image_dir, "training images");
  train_sr->add_option("--output-dir", output, "checkpoint directory");
  train_sr->add_option("--resume", checkpoint, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "metrics over a dataset with synthetic holes");
  common(eval);
  eval->add_option("--manifest", manifest_path, "dataset manifest");
  eval->add_option("--image-dir", image_dir, "image directory (every file is evaluated)");
  eval->add_option("--split", split, "train, val or all");
  eval->add_option("--report", report, "report file (JSON lines)");
  eval->add_option("--checkpoint", checkpoint, "inpainting checkpoint");
  eval->add_flag("--identity", identity, "use a stub that returns the ground truth");

  auto* metrics = app.add_subcommand("metrics", "compare two images");
  metrics->add_option("--pred", pred_path, "predicted image")->required()->check(CLI::ExistingFile);
  metrics->add_option("--gt", gt_path, "ground-truth image")->required()->check(CLI::ExistingFile);
  metrics->add_option("--mask", mask_path, "restrict to the hole of this mask")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << (e.get_name() == "CallForHelp" && app.get_subcommands().size() == 1 ? app.get_subcommands()[0]->help()
                                                                                : app.help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // CLI11 reports a stray positional for an unknown subcommand.
    std::string msg = e.what();
    if (argc > 1 && app.get_subcommands().empty() && argv[1][0] != '-')
      msg = "unknown subcommand '" + std::string(argv[1]) + "'";
    const auto active = app.get_subcommands();
    err << "error: " << msg << "\n\n" << (active.empty() ? app.help() : active.front()->help());
    return kExitUsage;
  }

  try {
    KeyValues kv;
    if (!config_path.empty()) kv = KeyValues::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw cli_detail::UsageError("--set expects key=value, got '" + s + "'");
      kv.set(KeyValues::trim(s.substr(0, eq)), KeyValues::trim(s.substr(eq + 1)), "--set");
    }
    if (seed_given) kv.set("seed", std::to_string(seed));
    if (!boxes.empty()) {
      std::string joined;
      for (const auto& b : boxes) joined += (joined.empty() ? "" : ";") + b;
      kv.set("detector", "stub");
      kv.set("detector.boxes", joined);
    }

    if (run->parsed()) {
      if (!output.empty()) kv.set("output_dir", output);
      const PipelineResult r = run_pipeline(image, pipeline_config_from(kv), &err);
      out << r.output_path << "\n";
      if (!r.target_found) out << "no target found\n";
    } else if (detect->parsed()) {
      const DetectorSpec spec = detector_spec_from(kv);
      const ImageTensor img = read_image(image);
      const std::string text = format_detections(select_targets(run_detector(spec, image, img.height(), img.width()), spec));
      if (output.empty()) {
        out << text;
      } else {
        std::ofstream f(output);
        if (!(f << text)) throw std::runtime_error("cannot write '" + output + "'");
      }
    } else if (mask->parsed()) {
      const DetectorSpec spec = detector_spec_from(kv);
      const ImageTensor img = read_image(image);
      const auto dets = select_targets(run_detector(spec, image, img.height(), img.width()), spec);
      const int d = dilate >= 0 ? dilate : kv.get("mask_dilate", 0);
      const BinaryMask m = mask_from_boxes(boxes_of(dets), img.height(), img.width(), d);
      write_mask(output, m);
      out << m.missing_count() << " missing pixels\n";
    } else if (inpaint_cmd->parsed()) {
      const Generator g = load_generator(checkpoint.empty() ? kv.str("inpaint_checkpoint") : checkpoint);
      const ImageTensor img = read_image(image);
      const BinaryMask m = read_mask(mask_path);
      if (m.height() != img.height() || m.width() != img.width())
        throw std::invalid_argument("mask dims differ from image dims");
      write_image(output, denormalize(inpaint_at_model_size(g, img, m)));
      out << output << "\n";
    } else if (upscale_cmd->parsed()) {
      const std::string ck = checkpoint.empty() ? kv.str("sr_checkpoint") : checkpoint;
      std::optional<SRNet> sr;
      if (!ck.empty()) sr = load_sr_net(ck);
      ImageTensor img = read_image(image);
      if (sr) img = resize_bilinear(img, sr->config().input_h, sr->config().input_w);
      write_image(output, denormalize(upscale(sr, normalize(img))));
      out << output << "\n";
    } else if (train_inpaint->parsed()) {
      TrainConfig c = train_config_from(kv);
      if (steps >= 0) c.max_steps = steps;
      if (!image_dir.empty()) c.image_dir = image_dir;
      if (!output.empty()) c.output_dir = output;
      if (!checkpoint.empty()) c.resume_from = checkpoint;
      out << train_loop(c, &err) << "\n";
    } else if (train_sr->parsed()) {
      SRTrainConfig c = sr_train_config_from(kv);
      if (steps >= 0) c.max_steps = steps;
      if (!image_dir.empty()) c.image_dir = image_dir;
      if (!output.empty()) c.output_dir = output;
      if (!checkpoint.empty()) c.resume_from = checkpoint;
      out << train_sr_loop(c) << "\n";
    } else if (eval->parsed()) {
      EvalOptions o;
      if (kv.has("input_size")) std::tie(o.input_h, o.input_w) = parse_size(kv.str("input_size"));
      o.split = split.empty() ? kv.str("eval.split", "val") : split;
      o.hole_min_frac = kv.get("eval.hole_min_frac", o.hole_min_frac);
      o.hole_max_frac = kv.get("eval.hole_max_frac", o.hole_max_frac);
      o.seed = kv.get<std::uint64_t>("seed", 0);
      if (manifest_path.empty()) manifest_path = kv.str("eval.manifest");
      if (image_dir.empty()) image_dir = kv.str("eval.image_dir");
      Manifest m;
      if (!manifest_path.empty()) {
        m = load_manifest(manifest_path);
      } else if (!image_dir.empty()) {
        m = build_manifest(image_dir, 0.0, o.seed);
        if (split.empty() && !kv.has("eval.split")) o.split = "all";
      } else {
        throw cli_detail::UsageError("eval needs --manifest or --image-dir");
      }
      std::optional<Generator> g;
      Completer complete;
      if (identity) {
        complete = [](const ImageTensor& gt, const BinaryMask&) { return gt; };
      } else {
        g.emplace(load_generator(checkpoint.empty() ? kv.str("inpaint_checkpoint") : checkpoint));
        if (!kv.has("input_size")) o.input_h = g->config().input_h, o.input_w = g->config().input_w;
        complete = generator_completer(*g);
      }
      if (report.empty()) report = kv.str("eval.report");
      const auto rows = eval_dataset(m, o, complete, report, &err);
      for (const auto& r : rows)
        out << r.image << " full " << cli_detail::format_metrics(r.full) << " | hole "
            << cli_detail::format_metrics(r.hole) << "\n";
    } else if (metrics->parsed()) {
      const ImageTensor p = read_image(pred_path), g = read_image(gt_path);
      std::optional<BinaryMask> m;
      if (!mask_path.empty()) m = read_mask(mask_path);
      out << cli_detail::format_metrics(eval_metrics(p, g, m ? &*m : nullptr)) << "\n";
    }
  } catch (const cli_detail::UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace inpaint
