// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion, the adversarial training loop, metrics and checkpoints.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "inpaint/checkpoint.hpp"
#include "inpaint/critics.hpp"
#include "inpaint/generator.hpp"
#include "inpaint/io.hpp"
#include "inpaint/nn/adam.hpp"
#include "json.hpp"

namespace inpaint {

// ---- metrics ---------------------------------------------------------------

inline constexpr double kPsnrCap = 100.0;

/// Errors in uint8 intensity units: l1 = mean |d|, l2 = mean d^2,
/// psnr = 10 log10(255^2 / l2) capped at kPsnrCap, tv = mean |difference| over
/// horizontally and vertically adjacent pixel pairs of `pred` (all channels).
struct ImageMetrics {
  double l1 = 0, l2 = 0, psnr = kPsnrCap, tv = 0;
};

inline double psnr_from_mse(double mse) {
  const double peak2 = 255.0 * 255.0;
  return 10.0 * std::log10(peak2 / std::max(mse, peak2 * std::pow(10.0, -kPsnrCap / 10.0)));
}

/// `region`, when given, restricts every statistic to its missing pixels
/// (tv to pairs with both pixels missing).
inline ImageMetrics eval_metrics(const ImageTensor& pred, const ImageTensor& gt, const BinaryMask* region = nullptr) {
  if (!pred.same_dims(gt)) throw std::invalid_argument("eval_metrics: image dims differ");
  if (pred.range() != RangeTag::kUint8 || gt.range() != RangeTag::kUint8)
    throw std::invalid_argument("eval_metrics: images must be uint8");
  if (region && (region->height() != pred.height() || region->width() != pred.width()))
    throw std::invalid_argument("eval_metrics: region dims differ");
  const int H = pred.height(), W = pred.width(), C = pred.channels();
  auto in = [&](int y, int x) { return !region || !region->known(y, x); };
  ImageMetrics m;
  double n = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!in(y, x)) continue;
      for (int c = 0; c < C; ++c) {
        const double d = pred.at(y, x, c) - gt.at(y, x, c);
        m.l1 += std::fabs(d);
        m.l2 += d * d;
      }
      n += C;
    }
  if (n > 0) m.l1 /= n, m.l2 /= n;
  m.psnr = psnr_from_mse(m.l2);
  double tv = 0, pairs = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!in(y, x)) continue;
      for (int c = 0; c < C; ++c) {
        if (x + 1 < W && in(y, x + 1)) tv += std::fabs(pred.at(y, x + 1, c) - pred.at(y, x, c)), pairs += 1;
        if (y + 1 < H && in(y + 1, x)) tv += std::fabs(pred.at(y + 1, x, c) - pred.at(y, x, c)), pairs += 1;
      }
    }
  m.tv = pairs > 0 ? tv / pairs : 0.0;
  return m;
}

/// Exact 1-D Wasserstein-1 distance between two equal-size empirical samples.
inline double w1_oracle_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || a.size() != b.size()) throw std::invalid_argument("w1_oracle_1d: need equal, nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// ---- manifest --------------------------------------------------------------

struct ManifestEntry {
  std::string path;   // relative to Manifest::root
  std::string split;  // "train" or "val"
  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::string root;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  std::vector<ManifestEntry> entries;  // sorted by path

  std::vector<std::string> files(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(e.path);
    return out;
  }
  std::string full_path(const std::string& rel) const { return (std::filesystem::path(root) / rel).string(); }

  bool operator==(const Manifest&) const = default;
};

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::set<std::string> known{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp", ".ppm", ".pgm"};
  return known.count(ext) > 0;
}

/// Position of a file name in [0, 1), fixed by (seed, name) alone.
inline double split_hash(std::uint64_t seed, const std::string& name) {
  char s[8];
  std::memcpy(s, &seed, 8);
  std::uint64_t h = fnv1a(s, 8);
  h = fnv1a(name.data(), name.size(), h);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Lists image files under `dir` (recursively), sorted by relative path. A file
/// is held out for validation when its split hash falls below val_fraction,
/// so adding or removing files never moves any other file between splits.
inline Manifest build_manifest(const std::string& dir, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0 && val_fraction < 1)) throw std::invalid_argument("build_manifest: val_fraction must lie in [0, 1)");
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("build_manifest: '" + dir + "' is not a directory");
  Manifest m;
  m.root = dir;
  m.seed = seed;
  m.val_fraction = val_fraction;
  std::vector<std::string> rel;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && has_image_extension(e.path()))
      rel.push_back(std::filesystem::relative(e.path(), dir).generic_string());
  if (rel.empty()) throw std::runtime_error("build_manifest: no image files in '" + dir + "'");
  std::sort(rel.begin(), rel.end());
  for (auto& r : rel) {
    const bool val = split_hash(seed, r) < val_fraction;
    m.entries.push_back({std::move(r), val ? "val" : "train"});
  }
  return m;
}

inline void save_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j{{"root", m.root}, {"seed", m.seed}, {"val_fraction", m.val_fraction}, {"files", nlohmann::json::array()}};
  for (const auto& e : m.entries) j["files"].push_back({{"path", e.path}, {"split", e.split}});
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("cannot write manifest '" + path + "'");
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest '" + path + "'");
  try {
    const auto j = nlohmann::json::parse(f);
    Manifest m;
    m.root = j.at("root").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.val_fraction = j.at("val_fraction").get<double>();
    for (const auto& e : j.at("files")) {
      ManifestEntry me{e.at("path").get<std::string>(), e.at("split").get<std::string>()};
      if (me.split != "train" && me.split != "val") throw std::runtime_error("unknown split '" + me.split + "'");
      m.entries.push_back(std::move(me));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest '" + path + "': " + e.what());
  }
}

// ---- configuration and state -----------------------------------------------

struct TrainConfig {
  GeneratorConfig generator;
  int critic_width = 16;
  LossWeights loss;
  double gamma = 0.99;  // discount per pixel of distance into the hole
  int batch_size = 8;
  int n_critic = 5;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  std::int64_t max_steps = 1000;
  std::uint64_t seed = 0;
  double hole_min_frac = 0.25;  // hole side as a fraction of the frame side
  double hole_max_frac = 0.5;
  std::string image_dir;
  std::string manifest_path;
  double val_fraction = 0.2;
  std::int64_t checkpoint_interval = 100;
  std::string output_dir = "runs/inpaint";
  std::string resume_from;

  int input_h() const { return generator.input_h; }
  int input_w() const { return generator.input_w; }

  CriticConfig global_critic() const { return {critic_width, input_h(), input_w(), 0.2}; }
  CriticConfig local_critic() const { return {critic_width, input_h() / 2, input_w() / 2, 0.2}; }
  nn::AdamConfig adam() const { return {learning_rate, beta1, beta2, 1e-8}; }

  void validate() const {
    generator.validate();
    loss.validate();
    if (input_h() % 32 != 0 || input_w() % 32 != 0)
      throw std::invalid_argument("TrainConfig: input size must be a multiple of 32 (local critic sees half of it)");
    if (critic_width < 1) throw std::invalid_argument("TrainConfig: critic_width must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (n_critic < 1) throw std::invalid_argument("TrainConfig: n_critic must be >= 1");
    if (!(learning_rate >= 0)) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw std::invalid_argument("TrainConfig: Adam betas must lie in [0, 1)");
    if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("TrainConfig: gamma must lie in (0, 1]");
    if (!(hole_min_frac > 0 && hole_min_frac <= hole_max_frac && hole_max_frac < 1))
      throw std::invalid_argument("TrainConfig: need 0 < hole_min_frac <= hole_max_frac < 1");
    if (max_steps < 0) throw std::invalid_argument("TrainConfig: max_steps must be >= 0");
    if (checkpoint_interval < 1) throw std::invalid_argument("TrainConfig: checkpoint_interval must be >= 1");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"generator", to_json(c.generator)},
          {"critic_width", c.critic_width},
          {"loss", {c.loss.w_coarse_l1, c.loss.w_refine_l1, c.loss.w_gan_global, c.loss.w_gan_local, c.loss.w_gp}},
          {"gamma", c.gamma},
          {"batch_size", c.batch_size},
          {"n_critic", c.n_critic},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"max_steps", c.max_steps},
          {"seed", c.seed},
          {"hole_min_frac", c.hole_min_frac},
          {"hole_max_frac", c.hole_max_frac}};
}

struct TrainState {
  Generator generator;
  Critic global_critic;
  Critic local_critic;
  nn::AdamState adam_generator, adam_global, adam_local;
  std::int64_t step = 0;
  Rng rng;
  std::int64_t critic_updates = 0;
  std::int64_t generator_updates = 0;

  static TrainState init(const TrainConfig& cfg) {
    cfg.validate();
    Rng root(cfg.seed);
    const std::uint64_t sg = root.next_u64(), sc1 = root.next_u64(), sc2 = root.next_u64();
    TrainState s{Generator(cfg.generator, sg), Critic(cfg.global_critic(), sc1, "global"),
                 Critic(cfg.local_critic(), sc2, "local"), {}, {}, {}, 0, root.split(1), 0, 0};
    s.adam_generator = nn::AdamState::for_params(s.generator.params());
    s.adam_global = nn::AdamState::for_params(s.global_critic.params());
    s.adam_local = nn::AdamState::for_params(s.local_critic.params());
    return s;
  }

  TrainState clone() const {
    return TrainState{generator.clone(), global_critic.clone(), local_critic.clone(), adam_generator, adam_global,
                      adam_local, step, rng, critic_updates, generator_updates};
  }

  /// Deep, bit-exact equality.
  bool equals(const TrainState& o) const {
    return generator.config() == o.generator.config() && generator.params().equals(o.generator.params()) &&
           global_critic.params().equals(o.global_critic.params()) &&
           local_critic.params().equals(o.local_critic.params()) && adam_generator == o.adam_generator &&
           adam_global == o.adam_global && adam_local == o.adam_local && step == o.step && rng == o.rng &&
           critic_updates == o.critic_updates && generator_updates == o.generator_updates;
  }
};

// ---- checkpoints -----------------------------------------------------------

inline constexpr const char* kInpaintCheckpointKind = "inpaint";

namespace training_detail {

inline void put_params(Checkpoint& ck, const std::string& prefix, const nn::ParamSet& p, const nn::AdamState* adam) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    ck.add(prefix + "/" + p.name(i), p.value(i));
    if (adam) {
      ck.add(prefix + ".adam_m/" + p.name(i), adam->m[i]);
      ck.add(prefix + ".adam_v/" + p.name(i), adam->v[i]);
    }
  }
}

inline void get_params(const Checkpoint& ck, const std::string& prefix, nn::ParamSet& p, nn::AdamState* adam) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto load = [&](const std::string& name, Tensor& dst) {
      const Tensor& t = ck.get(name);
      if (t.shape() != dst.shape()) throw CheckpointError("checkpoint array '" + name + "' has shape " + t.shape().str());
      dst = t;
    };
    load(prefix + "/" + p.name(i), p.mutable_value(i));
    if (adam) {
      load(prefix + ".adam_m/" + p.name(i), adam->m[i]);
      load(prefix + ".adam_v/" + p.name(i), adam->v[i]);
    }
  }
}

}  // namespace training_detail

inline void save_train_state(const TrainState& s, const std::string& path) {
  Checkpoint ck;
  ck.kind = kInpaintCheckpointKind;
  ck.header = {{"generator", to_json(s.generator.config())},
               {"global_critic", to_json(s.global_critic.config())},
               {"local_critic", to_json(s.local_critic.config())},
               {"step", s.step},
               {"rng", s.rng.serialize()},
               {"adam_t", {s.adam_generator.t, s.adam_global.t, s.adam_local.t}},
               {"critic_updates", s.critic_updates},
               {"generator_updates", s.generator_updates}};
  training_detail::put_params(ck, "generator", s.generator.params(), &s.adam_generator);
  training_detail::put_params(ck, "global", s.global_critic.params(), &s.adam_global);
  training_detail::put_params(ck, "local", s.local_critic.params(), &s.adam_local);
  save_checkpoint(ck, path);
}

inline TrainState load_train_state(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path, kInpaintCheckpointKind);
  try {
    const auto& h = ck.header;
    TrainState s{Generator(generator_config_from_json(h.at("generator")), 0),
                 Critic(critic_config_from_json(h.at("global_critic")), 0, "global"),
                 Critic(critic_config_from_json(h.at("local_critic")), 0, "local"),
                 {}, {}, {}, h.at("step").get<std::int64_t>(), Rng::deserialize(h.at("rng").get<std::string>()),
                 h.at("critic_updates").get<std::int64_t>(), h.at("generator_updates").get<std::int64_t>()};
    s.adam_generator = nn::AdamState::for_params(s.generator.params());
    s.adam_global = nn::AdamState::for_params(s.global_critic.params());
    s.adam_local = nn::AdamState::for_params(s.local_critic.params());
    const auto t = h.at("adam_t").get<std::vector<std::int64_t>>();
    if (t.size() != 3) throw CheckpointError("checkpoint '" + path + "' has a malformed optimizer header");
    s.adam_generator.t = t[0], s.adam_global.t = t[1], s.adam_local.t = t[2];
    training_detail::get_params(ck, "generator", s.generator.params(), &s.adam_generator);
    training_detail::get_params(ck, "global", s.global_critic.params(), &s.adam_global);
    training_detail::get_params(ck, "local", s.local_critic.params(), &s.adam_local);
    if (!s.generator.params().all_finite()) throw CheckpointError("checkpoint '" + path + "' holds non-finite weights");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "' has a malformed header: " + e.what());
  }
}

/// Generator weights only (for inference).
inline Generator load_generator(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path, kInpaintCheckpointKind);
  Generator g(generator_config_from_json(ck.header.at("generator")), 0);
  training_detail::get_params(ck, "generator", g.params(), nullptr);
  return g;
}

// ---- data ------------------------------------------------------------------

/// Training tensors for one batch. `known` and `weights` are N x 1 x H x W.
struct Batch {
  Tensor gt, holed, known, weights;
  std::vector<BoundingBox> holes;

  int size() const { return gt.n(); }
};

inline Batch make_batch(const std::vector<ImageTensor>& images, const std::vector<BinaryMask>& masks, double gamma) {
  if (images.size() != masks.size()) throw std::invalid_argument("make_batch: one mask per image");
  std::vector<ImageTensor> holed;
  std::vector<WeightMap> weights;
  Batch b;
  for (std::size_t i = 0; i < images.size(); ++i) {
    holed.push_back(apply_hole(images[i], masks[i]));
    weights.push_back(discount_map(masks[i], gamma));
    b.holes.push_back(hole_bounds(masks[i]).value_or(BoundingBox{}));
  }
  b.gt = images_to_tensor(images);
  b.holed = images_to_tensor(holed);
  b.known = masks_to_tensor(masks);
  b.weights = weights_to_tensor(weights);
  return b;
}

/// Manifest-backed image store. Decoded, resized and normalized images are
/// cached; unreadable files are reported once and then skipped.
class Dataset {
 public:
  Dataset(Manifest m, int height, int width, std::ostream* log = &std::cerr)
      : manifest_(std::move(m)), h_(height), w_(width), log_(log) {
    train_ = manifest_.files("train");
    val_ = manifest_.files("val");
  }

  const Manifest& manifest() const { return manifest_; }
  const std::vector<std::string>& train_files() const { return train_; }
  const std::vector<std::string>& val_files() const { return val_; }

  const ImageTensor* load(const std::string& rel) {
    if (auto it = cache_.find(rel); it != cache_.end()) return &it->second;
    if (bad_.count(rel)) return nullptr;
    try {
      ImageTensor img = normalize(resize_bilinear(read_image(manifest_.full_path(rel)), h_, w_));
      return &cache_.emplace(rel, std::move(img)).first->second;
    } catch (const std::exception& e) {
      bad_.insert(rel);
      if (log_) *log_ << "warning: skipping unreadable training image: " << e.what() << "\n";
      return nullptr;
    }
  }

  std::size_t unreadable_count() const { return bad_.size(); }

 private:
  Manifest manifest_;
  int h_, w_;
  std::ostream* log_;
  std::vector<std::string> train_, val_;
  std::map<std::string, ImageTensor> cache_;
  std::set<std::string> bad_;
};

/// Draws batch_size training images (with replacement) and a fresh random
/// rectangular hole for each, all from state.rng.
inline Batch next_batch(Dataset& data, TrainState& state, const TrainConfig& cfg) {
  const auto& files = data.train_files();
  if (files.empty()) throw std::runtime_error("next_batch: manifest has no training images");
  std::vector<ImageTensor> images;
  std::vector<BinaryMask> masks;
  while (static_cast<int>(images.size()) < cfg.batch_size) {
    if (data.unreadable_count() >= files.size())
      throw std::runtime_error("next_batch: no readable training image left to fill a batch");
    const auto& rel = files[static_cast<std::size_t>(state.rng.uniform_int(0, static_cast<std::int64_t>(files.size()) - 1))];
    const ImageTensor* img = data.load(rel);
    if (!img) continue;
    images.push_back(*img);
    masks.push_back(random_rect_hole(state.rng, cfg.input_h(), cfg.input_w(), cfg.hole_min_frac, cfg.hole_max_frac).first);
  }
  return make_batch(images, masks, cfg.gamma);
}

/// Fixed validation batch: every validation image with a hole drawn from a
/// generator seeded only by cfg.seed.
inline Batch make_validation_batch(Dataset& data, const TrainConfig& cfg) {
  Rng rng(cfg.seed ^ 0x5eed5eed5eed5eedull);
  std::vector<ImageTensor> images;
  std::vector<BinaryMask> masks;
  for (const auto& rel : data.val_files()) {
    const ImageTensor* img = data.load(rel);
    if (!img) continue;
    images.push_back(*img);
    masks.push_back(random_rect_hole(rng, cfg.input_h(), cfg.input_w(), cfg.hole_min_frac, cfg.hole_max_frac).first);
  }
  if (images.empty()) throw std::runtime_error("make_validation_batch: no readable validation image");
  return make_batch(images, masks, cfg.gamma);
}

/// Mean per-sample discounted L1 of the refined output.
inline double validation_loss(const Generator& g, const Batch& val) {
  ad::NoGradGuard ng;
  double total = 0;
  for (int n = 0; n < val.size(); ++n) {
    auto pick = [n](const Tensor& t) { return Tensor(Shape{1, t.c(), t.h(), t.w()}, std::vector<double>(t.sample(n), t.sample(n) + t.sample_size())); };
    const Tensor known = pick(val.known);
    Generator::Output out = g.forward(pick(val.holed), known);
    total += discounted_l1(out.refined, pick(val.gt), pick(val.weights)).item();
  }
  return total / val.size();
}

// ---- training step ---------------------------------------------------------

struct MetricsRecord {
  std::int64_t step = 0;
  ImageMetrics metrics;  // completed batch vs ground truth, batch mean
  std::map<std::string, double> losses;

  nlohmann::json to_json() const {
    nlohmann::json j{{"step", step}, {"l1", metrics.l1}, {"l2", metrics.l2}, {"psnr", metrics.psnr}, {"tv", metrics.tv}};
    for (const auto& [k, v] : losses) j["losses"][k] = v;
    return j;
  }
};

namespace training_detail {

inline void require_finite(double v, const std::string& term, std::int64_t step) {
  if (!std::isfinite(v)) throw std::runtime_error("non-finite " + term + " loss at step " + std::to_string(step));
}

inline std::vector<Tensor> values(const std::vector<ad::Var>& vs) {
  std::vector<Tensor> out;
  out.reserve(vs.size());
  for (const auto& v : vs) out.push_back(v.value());
  return out;
}

inline ImageMetrics batch_metrics(const Tensor& completed, const Tensor& gt) {
  ImageMetrics m;
  for (int n = 0; n < gt.n(); ++n) {
    const ImageMetrics e = eval_metrics(denormalize(completed, n), denormalize(gt, n));
    m.l1 += e.l1 / gt.n(), m.l2 += e.l2 / gt.n(), m.tv += e.tv / gt.n();
  }
  m.psnr = psnr_from_mse(m.l2);
  return m;
}

}  // namespace training_detail

/// n_critic updates of both critics, then one generator update, all on
/// `batch`. Mutates `state` in place.
inline MetricsRecord train_step(const Batch& batch, TrainState& state, const TrainConfig& cfg) {
  using training_detail::require_finite;
  const std::int64_t step = state.step + 1;
  const nn::AdamConfig adam = cfg.adam();
  const LocalCrop crop = make_local_crop(batch.known, cfg.input_h() / 2, cfg.input_w() / 2);
  const Tensor real_local = crop.apply(batch.gt);
  Tensor hole(batch.known.shape());
  for (std::size_t i = 0; i < hole.size(); ++i) hole[i] = 1.0 - batch.known[i];
  const Critic& dg = state.global_critic;
  const Critic& dl = state.local_critic;
  CriticFn global_fn = [&dg](const ad::Var& x) { return dg(x); };
  CriticFn local_fn = [&dl](const ad::Var& x) { return dl(x); };

  MetricsRecord rec;
  rec.step = step;
  for (int k = 0; k < cfg.n_critic; ++k) {
    Tensor fake;
    {
      ad::NoGradGuard ng;
      Generator::Output out = state.generator.forward(batch.holed, batch.known);
      fake = paste_known(out.refined, batch.holed, batch.known).value();
    }
    const Tensor fake_local = crop.apply(fake);
    ad::Var gp_g = gradient_penalty(global_fn, batch.gt, fake, hole, state.rng);
    ad::Var gp_l = gradient_penalty(local_fn, real_local, fake_local, crop.hole, state.rng);
    ad::Var loss_g = wgan_critic_loss(dg(ad::constant(batch.gt)), dg(ad::constant(fake)), gp_g, cfg.loss.w_gp);
    ad::Var loss_l = wgan_critic_loss(dl(ad::constant(real_local)), dl(ad::constant(fake_local)), gp_l, cfg.loss.w_gp);
    require_finite(gp_g.item(), "global gradient penalty", step);
    require_finite(gp_l.item(), "local gradient penalty", step);
    require_finite(loss_g.item(), "global critic", step);
    require_finite(loss_l.item(), "local critic", step);
    ad::Var total = ad::add(loss_g, loss_l);
    std::vector<ad::Var> targets = state.global_critic.params().vars();
    const std::size_t n_global = targets.size();
    for (const auto& v : state.local_critic.params().vars()) targets.push_back(v);
    std::vector<Tensor> grads = training_detail::values(ad::grad(total, targets));
    std::vector<Tensor> gl(std::make_move_iterator(grads.begin() + static_cast<std::ptrdiff_t>(n_global)),
                           std::make_move_iterator(grads.end()));
    grads.resize(n_global);
    nn::adam_step(state.global_critic.params(), grads, state.adam_global, adam);
    nn::adam_step(state.local_critic.params(), gl, state.adam_local, adam);
    ++state.critic_updates;
    rec.losses["critic_global"] = loss_g.item();
    rec.losses["critic_local"] = loss_l.item();
    rec.losses["gp_global"] = gp_g.item();
    rec.losses["gp_local"] = gp_l.item();
  }

  Generator::Output out = state.generator.forward(batch.holed, batch.known);
  ad::Var completed = paste_known(out.refined, batch.holed, batch.known);
  GeneratorObjective obj = generator_objective(out.coarse, out.refined, batch.gt, batch.weights, dg(completed),
                                               dl(crop.apply(completed)), cfg.loss);
  require_finite(obj.coarse_l1, "coarse reconstruction", step);
  require_finite(obj.refine_l1, "refined reconstruction", step);
  require_finite(obj.gan_global, "global adversarial", step);
  require_finite(obj.gan_local, "local adversarial", step);
  require_finite(obj.total.item(), "total generator", step);
  nn::adam_step(state.generator.params(), training_detail::values(ad::grad(obj.total, state.generator.params().vars())),
                state.adam_generator, adam);
  ++state.generator_updates;
  if (!state.generator.params().all_finite()) throw std::runtime_error("non-finite generator weights at step " + std::to_string(step));

  rec.losses["coarse_l1"] = obj.coarse_l1;
  rec.losses["refine_l1"] = obj.refine_l1;
  rec.losses["gan_global"] = obj.gan_global;
  rec.losses["gan_local"] = obj.gan_local;
  rec.losses["generator_total"] = obj.total.item();
  rec.metrics = training_detail::batch_metrics(completed.value(), batch.gt);
  state.step = step;
  return rec;
}

// ---- loop ------------------------------------------------------------------

inline std::string checkpoint_path(const std::string& dir, std::int64_t step) {
  std::ostringstream os;
  os << "checkpoint-" << std::setw(8) << std::setfill('0') << step << ".ckpt";
  return (std::filesystem::path(dir) / os.str()).string();
}

inline std::string metrics_log_path(const std::string& dir) {
  return (std::filesystem::path(dir) / "metrics.jsonl").string();
}

/// Keeps the first `records` lines of a metrics log (used when resuming).
inline void truncate_metrics_log(const std::string& path, std::int64_t records) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> lines;
  std::string line;
  while (static_cast<std::int64_t>(lines.size()) < records && std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << "\n";
}

inline Manifest resolve_manifest(const TrainConfig& cfg) {
  if (!cfg.manifest_path.empty() && std::filesystem::exists(cfg.manifest_path)) return load_manifest(cfg.manifest_path);
  if (cfg.image_dir.empty()) throw std::invalid_argument("training needs image_dir or an existing manifest");
  Manifest m = build_manifest(cfg.image_dir, cfg.val_fraction, cfg.seed);
  if (!cfg.manifest_path.empty()) save_manifest(m, cfg.manifest_path);
  return m;
}

/// Runs until state.step == max_steps, appending one JSON line per step to
/// <output_dir>/metrics.jsonl and checkpointing every checkpoint_interval
/// steps and at the end. Returns the final checkpoint path.
inline std::string train_loop(const TrainConfig& cfg, std::ostream* log = &std::cerr) {
  cfg.validate();
  Dataset data(resolve_manifest(cfg), cfg.input_h(), cfg.input_w(), log);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string log_path = metrics_log_path(cfg.output_dir);
  TrainState state = cfg.resume_from.empty() ? TrainState::init(cfg) : load_train_state(cfg.resume_from);
  if (!cfg.resume_from.empty() &&
      (state.generator.config().input_h != cfg.input_h() || state.generator.config().input_w != cfg.input_w()))
    throw std::invalid_argument("train_loop: checkpoint input size differs from the configuration");
  truncate_metrics_log(log_path, state.step);
  std::ofstream metrics(log_path, std::ios::app);
  if (!metrics) throw std::runtime_error("cannot open metrics log '" + log_path + "'");

  std::string last = checkpoint_path(cfg.output_dir, state.step);
  if (state.step >= cfg.max_steps) {
    save_train_state(state, last);
    return last;
  }
  while (state.step < cfg.max_steps) {
    const Batch batch = next_batch(data, state, cfg);
    const MetricsRecord rec = train_step(batch, state, cfg);
    metrics << rec.to_json().dump() << "\n";
    metrics.flush();
    if (!metrics) throw std::runtime_error("failed writing metrics log '" + log_path + "'");
    if (state.step % cfg.checkpoint_interval == 0 || state.step == cfg.max_steps) {
      last = checkpoint_path(cfg.output_dir, state.step);
      save_train_state(state, last);
    }
  }
  return last;
}

}  // namespace inpaint
