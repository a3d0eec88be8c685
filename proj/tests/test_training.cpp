// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "inpaint/training.hpp"
#include "support/finite_diff.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

namespace inpaint {
namespace {

using testing::brute_force_w1;
using testing::TempDir;

// ---- metrics ---------------------------------------------------------------

ImageTensor constant(int h, int w, double v) { return ImageTensor::filled(h, w, 3, RangeTag::kUint8, v); }

TEST(EvalMetrics, IdenticalImagesHitTheCap) {
  Rng rng(1);
  ImageTensor img = testing::striped_texture(rng, 8, 9);
  ImageMetrics m = eval_metrics(img, img);
  EXPECT_EQ(m.l1, 0.0);
  EXPECT_EQ(m.l2, 0.0);
  EXPECT_EQ(m.psnr, kPsnrCap);
  EXPECT_EQ(m.tv, eval_metrics(img, constant(8, 9, 0)).tv);
}

TEST(EvalMetrics, OffByOneClosedForm) {
  ImageMetrics m = eval_metrics(constant(5, 7, 101), constant(5, 7, 100));
  EXPECT_EQ(m.l1, 1.0);
  EXPECT_EQ(m.l2, 1.0);
  EXPECT_NEAR(m.psnr, 20.0 * std::log10(255.0), 1e-12);
  EXPECT_NEAR(m.psnr, 48.1308, 1e-3);
  EXPECT_EQ(m.tv, 0.0);
}

TEST(EvalMetrics, CheckerboardTotalVariation) {
  ImageTensor cb(2, 2, 1, RangeTag::kUint8, {0, 255, 255, 0});
  EXPECT_EQ(eval_metrics(cb, cb).tv, 255.0);
  ImageTensor cb3(2, 2, 3, RangeTag::kUint8, {0, 0, 0, 255, 255, 255, 255, 255, 255, 0, 0, 0});
  EXPECT_EQ(eval_metrics(cb3, cb3).tv, 255.0);
}

TEST(EvalMetrics, TotalVariationMatchesPairEnumeration) {
  Rng rng(2);
  ImageTensor img = testing::striped_texture(rng, 6, 5);
  double sum = 0;
  int pairs = 0;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 5; ++x)
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
          if (dx + dy != 1 || y + dy >= 6 || x + dx >= 5) continue;
          for (int c = 0; c < 3; ++c) sum += std::fabs(img.at(y + dy, x + dx, c) - img.at(y, x, c)), ++pairs;
        }
  EXPECT_NEAR(eval_metrics(img, img).tv, sum / pairs, 1e-12);
}

TEST(EvalMetrics, PsnrDecreasesAsErrorGrows) {
  double prev = kPsnrCap + 1;
  for (int d = 0; d <= 50; d += 5) {
    const double p = eval_metrics(constant(4, 4, 100 + d), constant(4, 4, 100)).psnr;
    EXPECT_LT(p, prev);
    prev = p;
  }
  EXPECT_THROW(eval_metrics(constant(4, 4, 0), constant(4, 5, 0)), std::invalid_argument);
}

TEST(EvalMetrics, RegionRestrictsToHolePixels) {
  ImageTensor gt = constant(4, 4, 100);
  std::vector<double> p(48, 100.0);
  for (int c = 0; c < 3; ++c) p[(1 * 4 + 1) * 3 + c] = 110, p[(0 * 4 + 3) * 3 + c] = 200;
  ImageTensor pred(4, 4, 3, RangeTag::kUint8, p);
  BinaryMask hole = mask_from_boxes({{0, 0, 2, 2}}, 4, 4);
  ImageMetrics m = eval_metrics(pred, gt, &hole);
  EXPECT_DOUBLE_EQ(m.l1, 10.0 / 4);
  EXPECT_DOUBLE_EQ(m.l2, 100.0 / 4);
  // pairs inside the 2x2 hole: 4, two of them touch the 110 pixel
  EXPECT_DOUBLE_EQ(m.tv, 10.0 * 2 / 4);
}

// ---- W1 oracle -------------------------------------------------------------


std::vector<double> dyadic_list(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = static_cast<double>(rng.uniform_int(-64, 64)) / 8.0;  // exact sums
  return v;
}

TEST(W1Oracle, MatchesExhaustiveCouplingExactly) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto a = dyadic_list(rng, n), b = dyadic_list(rng, n);
    EXPECT_EQ(w1_oracle_1d(a, b), brute_force_w1(a, b));
  }
}

TEST(W1Oracle, TranslationAndIdentity) {
  Rng rng(4);
  auto a = dyadic_list(rng, 6);
  auto shuffled = a;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(w1_oracle_1d(a, shuffled), 0.0);
  auto b = a;
  for (double& x : b) x += 2.5;
  EXPECT_EQ(w1_oracle_1d(a, b), 2.5);
  EXPECT_THROW(w1_oracle_1d({1, 2}, {1}), std::invalid_argument);
  EXPECT_THROW(w1_oracle_1d({}, {}), std::invalid_argument);
}

TEST(W1Oracle, MetricAxioms) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(8), b(8), c(8);
    for (int i = 0; i < 8; ++i) a[i] = rng.normal(), b[i] = rng.normal(1, 2), c[i] = rng.normal(-1, 0.5);
    EXPECT_EQ(w1_oracle_1d(a, b), w1_oracle_1d(b, a));
    EXPECT_LE(w1_oracle_1d(a, c), w1_oracle_1d(a, b) + w1_oracle_1d(b, c) + 1e-12);
    EXPECT_GT(w1_oracle_1d(a, b), 0.0);
  }
}

// ---- manifest --------------------------------------------------------------

void touch_images(const std::string& dir, const std::vector<std::string>& names) {
  for (const auto& n : names) write_image((std::filesystem::path(dir) / n).string(), constant(4, 4, 50));
}

TEST(Manifest, PartitionFollowsTheSplitHash) {
  TempDir dir("manifest");
  std::vector<std::string> names;
  for (int i = 0; i < 10; ++i) names.push_back("photo" + std::to_string(i) + ".png");
  touch_images(dir.str(), names);
  std::ofstream(dir.file("notes.txt")) << "not an image";
  Manifest m = build_manifest(dir.str(), 0.2, 7);
  ASSERT_EQ(m.entries.size(), 10u);
  EXPECT_TRUE(std::is_sorted(m.entries.begin(), m.entries.end(), [](auto& a, auto& b) { return a.path < b.path; }));
  const auto train = m.files("train"), val = m.files("val");
  EXPECT_EQ(train.size() + val.size(), 10u);
  for (const auto& v : val) EXPECT_EQ(std::count(train.begin(), train.end(), v), 0);
  // independent recomputation of the hash rule
  for (const auto& e : m.entries) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](unsigned char byte) { h = (h ^ byte) * 1099511628211ull; };
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>((7ull >> (8 * i)) & 0xff));
    for (char ch : e.path) mix(static_cast<unsigned char>(ch));
    EXPECT_EQ(e.split, static_cast<double>(h >> 11) / 9007199254740992.0 < 0.2 ? "val" : "train") << e.path;
  }
}

TEST(Manifest, SplitFractionIsRespectedInAggregate) {
  std::size_t val = 0;
  for (int i = 0; i < 20000; ++i) val += split_hash(11, "f" + std::to_string(i) + ".jpg") < 0.2;
  EXPECT_NEAR(static_cast<double>(val) / 20000, 0.2, 0.01);
}

TEST(Manifest, DeterministicAndStableUnderInsertion) {
  TempDir dir("manifest-stable");
  touch_images(dir.str(), {"a.png", "b.png", "c.jpg", "sub/d.png", "e.png", "f.png"});
  Manifest m1 = build_manifest(dir.str(), 0.3, 99);
  EXPECT_EQ(m1, build_manifest(dir.str(), 0.3, 99));
  touch_images(dir.str(), {"bb.png"});
  Manifest m2 = build_manifest(dir.str(), 0.3, 99);
  ASSERT_EQ(m2.entries.size(), 7u);
  for (const auto& e : m1.entries) {
    auto it = std::find_if(m2.entries.begin(), m2.entries.end(), [&](auto& x) { return x.path == e.path; });
    ASSERT_NE(it, m2.entries.end());
    EXPECT_EQ(it->split, e.split);
  }
}

TEST(Manifest, SaveLoadRoundTripAndErrors) {
  TempDir dir("manifest-io");
  touch_images(dir.str(), {"x.png", "y.png"});
  Manifest m = build_manifest(dir.str(), 0.5, 3);
  save_manifest(m, dir.file("out/manifest.json"));
  EXPECT_EQ(load_manifest(dir.file("out/manifest.json")), m);
  TempDir empty("manifest-empty");
  EXPECT_THROW(build_manifest(empty.str(), 0.2, 0), std::runtime_error);
  EXPECT_THROW(build_manifest(empty.file("missing"), 0.2, 0), std::runtime_error);
}

// ---- batches ---------------------------------------------------------------

TrainConfig tiny_config(const std::string& image_dir, const std::string& out_dir) {
  TrainConfig c;
  c.generator.base_width = 4;
  c.generator.input_h = c.generator.input_w = 32;
  c.critic_width = 2;
  c.batch_size = 2;
  c.n_critic = 2;
  c.max_steps = 3;
  c.seed = 42;
  c.image_dir = image_dir;
  c.output_dir = out_dir;
  c.checkpoint_interval = 2;
  return c;
}

struct Fixture {
  TempDir images{"train-images"};
  TempDir out{"train-out"};
  TrainConfig cfg;
  Fixture() {
    testing::write_striped_dataset(images.str(), 6, 40, 48, 1);
    cfg = tiny_config(images.str(), out.str());
  }
  Dataset dataset() const { return Dataset(build_manifest(cfg.image_dir, cfg.val_fraction, cfg.seed), 32, 32, nullptr); }
};

TEST(NextBatch, DeterministicUnderFixedState) {
  Fixture f;
  Dataset d1 = f.dataset(), d2 = f.dataset();
  TrainState s1 = TrainState::init(f.cfg), s2 = TrainState::init(f.cfg);
  Batch a = next_batch(d1, s1, f.cfg), b = next_batch(d2, s2, f.cfg);
  EXPECT_TRUE(a.gt == b.gt);
  EXPECT_TRUE(a.known == b.known);
  EXPECT_TRUE(s1.rng == s2.rng);
  EXPECT_EQ(a.gt.shape(), (Shape{2, 3, 32, 32}));
}

TEST(NextBatch, HoledSamplesFollowTheHoleRule) {
  Fixture f;
  Dataset d = f.dataset();
  TrainState s = TrainState::init(f.cfg);
  Batch b = next_batch(d, s, f.cfg);
  for (int n = 0; n < b.size(); ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          if (b.known.at(n, 0, y, x) == 1.0) {
            EXPECT_EQ(b.holed.at(n, c, y, x), b.gt.at(n, c, y, x));
          } else {
            EXPECT_EQ(b.holed.at(n, c, y, x), 1.0);
          }
        }
}

TEST(NextBatch, HoleSizesStayWithinBoundsOverManyDraws) {
  Fixture f;
  f.cfg.batch_size = 1;
  f.cfg.hole_min_frac = 0.3;
  f.cfg.hole_max_frac = 0.6;
  Dataset d = f.dataset();
  TrainState s = TrainState::init(f.cfg);
  int lo = 1000, hi = 0;
  for (int i = 0; i < 1000; ++i) {
    Batch b = next_batch(d, s, f.cfg);
    const BoundingBox& h = b.holes[0];
    ASSERT_TRUE(h.valid_for(32, 32));
    EXPECT_EQ(static_cast<std::size_t>(h.area()), static_cast<std::size_t>(32 * 32 - b.known.sum()));
    for (int side : {h.width(), h.height()}) {
      EXPECT_GE(side, 10);  // ceil(0.3 * 32)
      EXPECT_LE(side, 19);  // floor(0.6 * 32)
      lo = std::min(lo, side), hi = std::max(hi, side);
    }
  }
  EXPECT_EQ(lo, 10);
  EXPECT_EQ(hi, 19);
}

TEST(NextBatch, UnreadableFilesAreSkippedWithAWarning) {
  Fixture f;
  std::ofstream(f.images.file("zz_broken.png")) << "garbage";
  f.cfg.val_fraction = 0.0;
  std::ostringstream log;
  Dataset d(build_manifest(f.cfg.image_dir, 0.0, f.cfg.seed), 32, 32, &log);
  TrainState s = TrainState::init(f.cfg);
  f.cfg.batch_size = 1;
  for (int i = 0; i < 60; ++i) next_batch(d, s, f.cfg);
  EXPECT_EQ(d.unreadable_count(), 1u);
  EXPECT_NE(log.str().find("zz_broken.png"), std::string::npos);

  TempDir bad("all-broken");
  std::ofstream(bad.file("a.png")) << "x";
  std::ofstream(bad.file("b.png")) << "y";
  Dataset broken(build_manifest(bad.str(), 0.0, 0), 32, 32, nullptr);
  EXPECT_THROW(next_batch(broken, s, f.cfg), std::runtime_error);
}

// ---- train_step ------------------------------------------------------------

TEST(TrainStep, UpdatesEveryParameterSetAndCountsCriticSteps) {
  Fixture f;
  f.cfg.n_critic = 3;
  Dataset d = f.dataset();
  TrainState s = TrainState::init(f.cfg);
  TrainState before = s.clone();
  MetricsRecord rec = train_step(next_batch(d, s, f.cfg), s, f.cfg);
  EXPECT_EQ(rec.step, 1);
  EXPECT_EQ(s.step, 1);
  EXPECT_EQ(s.critic_updates, 3);
  EXPECT_EQ(s.generator_updates, 1);
  EXPECT_FALSE(s.generator.params().equals(before.generator.params()));
  EXPECT_FALSE(s.global_critic.params().equals(before.global_critic.params()));
  EXPECT_FALSE(s.local_critic.params().equals(before.local_critic.params()));
  for (const char* k : {"coarse_l1", "refine_l1", "gan_global", "gan_local", "gp_global", "gp_local", "critic_global"})
    EXPECT_TRUE(rec.losses.count(k)) << k;
  train_step(next_batch(d, s, f.cfg), s, f.cfg);
  EXPECT_EQ(s.critic_updates, 6);
  EXPECT_EQ(s.generator_updates, 2);
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  Fixture f;
  f.cfg.learning_rate = 0.0;
  Dataset d = f.dataset();
  TrainState s = TrainState::init(f.cfg);
  TrainState before = s.clone();
  train_step(next_batch(d, s, f.cfg), s, f.cfg);
  EXPECT_TRUE(s.generator.params().equals(before.generator.params()));
  EXPECT_TRUE(s.global_critic.params().equals(before.global_critic.params()));
  EXPECT_TRUE(s.local_critic.params().equals(before.local_critic.params()));
}

TEST(TrainStep, BitExactAcrossIdenticalRuns) {
  Fixture f;
  Dataset d = f.dataset();
  TrainState s = TrainState::init(f.cfg);
  Batch b = next_batch(d, s, f.cfg);
  TrainState a = s.clone(), c = s.clone();
  MetricsRecord ra = train_step(b, a, f.cfg), rc = train_step(b, c, f.cfg);
  EXPECT_TRUE(a.equals(c));
  EXPECT_EQ(ra.to_json().dump(), rc.to_json().dump());
}

TEST(TrainStep, ValidationLossIsFiniteAndPositive) {
  Fixture f;
  f.cfg.val_fraction = 0.5;
  Dataset d = f.dataset();
  ASSERT_FALSE(d.val_files().empty());
  TrainState s = TrainState::init(f.cfg);
  const double v = validation_loss(s.generator, make_validation_batch(d, f.cfg));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
  EXPECT_EQ(v, validation_loss(s.generator, make_validation_batch(d, f.cfg)));
}

// ---- checkpoints -----------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  Fixture f;
  Dataset d = f.dataset();
  TrainState s = TrainState::init(f.cfg);
  train_step(next_batch(d, s, f.cfg), s, f.cfg);
  const std::string path = f.out.file("state.ckpt");
  save_train_state(s, path);
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
  TrainState loaded = load_train_state(path);
  EXPECT_TRUE(loaded.equals(s));
  Generator g = load_generator(path);
  EXPECT_TRUE(g.params().equals(s.generator.params()));
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  Fixture f;
  TrainState s = TrainState::init(f.cfg);
  const std::string path = f.out.file("t.ckpt");
  save_train_state(s, path);
  const auto size = std::filesystem::file_size(path);
  for (auto keep : {size - 1, size / 2, std::uintmax_t{10}}) {
    std::filesystem::copy_file(path, path + ".cut", std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(path + ".cut", keep);
    EXPECT_THROW(load_train_state(path + ".cut"), CheckpointError);
  }
  EXPECT_THROW(load_train_state(f.out.file("missing.ckpt")), CheckpointError);
}

TEST(Checkpoint, VersionMismatchIsExplicit) {
  Fixture f;
  TrainState s = TrainState::init(f.cfg);
  const std::string path = f.out.file("v.ckpt");
  save_train_state(s, path);
  {
    std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(8);
    const std::uint32_t v = 7;
    io.write(reinterpret_cast<const char*>(&v), 4);
  }
  try {
    load_train_state(path);
    FAIL() << "expected a version error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version mismatch"), std::string::npos);
  }
}

TEST(Checkpoint, WrongModelKindIsRejected) {
  TempDir dir("kind");
  Checkpoint ck;
  ck.kind = "superres";
  ck.header = {{"x", 1}};
  ck.add("w", Tensor(1, 2, 3, 4, 0.5));
  save_checkpoint(ck, dir.file("sr.ckpt"));
  EXPECT_EQ(load_checkpoint(dir.file("sr.ckpt")), ck);
  EXPECT_THROW(load_train_state(dir.file("sr.ckpt")), CheckpointError);
}

// ---- train_loop ------------------------------------------------------------

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

TEST(TrainLoop, ZeroStepsWritesInitialCheckpoint) {
  Fixture f;
  f.cfg.max_steps = 0;
  const std::string path = train_loop(f.cfg, nullptr);
  EXPECT_TRUE(std::filesystem::exists(path));
  EXPECT_EQ(load_train_state(path).step, 0);
  EXPECT_TRUE(load_train_state(path).equals(TrainState::init(f.cfg)));
  EXPECT_TRUE(read_lines(metrics_log_path(f.cfg.output_dir)).empty());
}

TEST(TrainLoop, LogHasOneRecordPerStepAndResumeIsExact) {
  Fixture f;
  f.cfg.max_steps = 4;
  f.cfg.manifest_path = f.out.file("manifest.json");
  const std::string final_path = train_loop(f.cfg, nullptr);
  const auto full_log = read_lines(metrics_log_path(f.cfg.output_dir));
  ASSERT_EQ(full_log.size(), 4u);
  for (std::size_t i = 0; i < full_log.size(); ++i)
    EXPECT_EQ(nlohmann::json::parse(full_log[i]).at("step").get<int>(), static_cast<int>(i + 1));
  const TrainState full = load_train_state(final_path);

  TempDir out2("resume");
  TrainConfig c2 = f.cfg;
  c2.output_dir = out2.str();
  c2.max_steps = 2;
  const std::string mid = train_loop(c2, nullptr);
  // pretend the run died after a third, unsaved step
  std::ofstream(metrics_log_path(c2.output_dir), std::ios::app) << "{\"step\":3,\"junk\":true}\n";
  c2.max_steps = 4;
  c2.resume_from = mid;
  const std::string resumed_path = train_loop(c2, nullptr);
  EXPECT_EQ(read_lines(metrics_log_path(c2.output_dir)), full_log);
  EXPECT_TRUE(load_train_state(resumed_path).equals(full));
}

TEST(TrainConfig, Validation) {
  TrainConfig c = tiny_config("", "");
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config("", "");
  c.n_critic = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config("", "");
  c.generator.input_h = 48;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace inpaint
