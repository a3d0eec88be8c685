// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "inpaint/detection.hpp"

namespace inpaint {
namespace {

namespace fs = std::filesystem;

std::vector<Detection> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_detections(in, "test");
}

TEST(Sidecar, EmptyInputGivesNoDetections) { EXPECT_TRUE(parse("").empty()); }

TEST(Sidecar, ParsesOneRecord) {
  auto d = parse(R"({"class_name": "dog", "class_id": 16, "confidence": 0.75, "box": [1, 2, 30, 40]})");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0], (Detection{"dog", 16, 0.75, {1, 2, 30, 40}}));
}

TEST(Sidecar, RejectsConfidenceAboveOneWithLineNumber) {
  const std::string text =
      "{\"class_name\": \"dog\", \"class_id\": 16, \"confidence\": 0.5, \"box\": [0, 0, 4, 4]}\n"
      "\n"
      "{\"class_name\": \"dog\", \"class_id\": 16, \"confidence\": 1.5, \"box\": [0, 0, 4, 4]}\n";
  try {
    parse(text);
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("test:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("confidence"), std::string::npos) << e.what();
  }
}

TEST(Sidecar, MalformedLinesNameTheirLine) {
  for (const std::string& bad : {std::string("not json"), std::string(R"({"class_name": "dog"})"),
                                std::string(R"({"class_name": "dog", "class_id": 1, "confidence": 0.5, "box": [0, 0, 4]})"),
                                std::string(R"({"class_name": "dog", "class_id": 1, "confidence": 0.5, "box": [5, 0, 4, 4]})"),
                                std::string(R"({"class_name": "dog", "class_id": -2, "confidence": 0.5, "box": [0, 0, 4, 4]})")}) {
    try {
      parse("\n" + bad + "\n");
      FAIL() << "accepted: " << bad;
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find("test:2"), std::string::npos) << e.what();
    }
  }
}

TEST(Sidecar, FileRoundTrip) {
  const fs::path p = fs::temp_directory_path() / "inpaint_sidecar_test.jsonl";
  std::vector<Detection> dets{{"dog", 16, 0.9, {0, 0, 5, 5}}, {"cat", 15, 0.25, {3, 4, 9, 10}}};
  std::ofstream(p) << format_detections(dets);
  EXPECT_EQ(load_detections_sidecar(p.string()), dets);
  fs::remove(p);
  EXPECT_THROW(load_detections_sidecar(p.string()), std::runtime_error);
}

TEST(StubDetector, Behaviour) {
  EXPECT_TRUE(stub_detector(10, 10, {}).empty());
  auto d = stub_detector(10, 10, {{5, 5, 9, 9}, {0, 0, 2, 2}});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].box, (BoundingBox{5, 5, 9, 9}));
  EXPECT_EQ(d[1].box, (BoundingBox{0, 0, 2, 2}));
  EXPECT_EQ(d[0].confidence, 1.0);
  EXPECT_THROW(stub_detector(10, 10, {{0, 0, 11, 3}}), std::invalid_argument);
}

TEST(ExternalCommand, ParsesStdoutAndChecksExitStatus) {
  const fs::path script = fs::temp_directory_path() / "inpaint_fake_detector.sh";
  std::ofstream(script) << "#!/bin/sh\n"
                           "echo '{\"class_name\": \"dog\", \"class_id\": 16, \"confidence\": 0.8, \"box\": [1, 1, 3, 3]}'\n";
  fs::permissions(script, fs::perms::owner_all);
  auto d = run_detector_command(script.string(), "/some path/with 'quote'.png");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].box, (BoundingBox{1, 1, 3, 3}));
  EXPECT_THROW(run_detector_command("false", "x.png"), std::runtime_error);
  fs::remove(script);
}

TEST(Iou, Examples) {
  EXPECT_EQ(iou({0, 0, 4, 4}, {0, 0, 4, 4}), 1.0);
  EXPECT_EQ(iou({0, 0, 4, 4}, {4, 0, 8, 4}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 4, 4}, {2, 0, 6, 4}), 1.0 / 3.0);
}

BoundingBox random_box(Rng& rng, int H = 12, int W = 12) {
  const int x0 = static_cast<int>(rng.uniform_int(0, W - 1)), y0 = static_cast<int>(rng.uniform_int(0, H - 1));
  return {x0, y0, static_cast<int>(rng.uniform_int(x0 + 1, W)), static_cast<int>(rng.uniform_int(y0 + 1, H))};
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(iou(a, a), 1.0);
  }
}

TEST(Nms, Examples) {
  std::vector<Detection> disjoint{{"dog", 16, 0.9, {0, 0, 2, 2}}, {"dog", 16, 0.8, {5, 5, 7, 7}}};
  EXPECT_EQ(nms(disjoint, 0.5).size(), 2u);
  std::vector<Detection> same{{"dog", 16, 0.8, {0, 0, 4, 4}}, {"dog", 16, 0.9, {0, 0, 4, 4}}};
  auto kept = nms(same, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].confidence, 0.9);
  // different classes never suppress each other
  std::vector<Detection> classes{{"dog", 16, 0.9, {0, 0, 4, 4}}, {"cat", 15, 0.8, {0, 0, 4, 4}}};
  EXPECT_EQ(nms(classes, 0.5).size(), 2u);
}

// Exhaustive oracle: the greedy result is the unique subset S such that every
// detection (in NMS order) is in S iff no earlier member of S of the same
// class overlaps it at or above the threshold.
std::vector<Detection> nms_subset_oracle(std::vector<Detection> dets, double t) {
  std::sort(dets.begin(), dets.end(), nms_before);
  const int n = static_cast<int>(dets.size());
  std::vector<int> solutions;
  for (int s = 0; s < (1 << n); ++s) {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      bool blocked = false;
      for (int j = 0; j < i; ++j)
        if ((s >> j & 1) && dets[j].class_id == dets[i].class_id && iou(dets[j].box, dets[i].box) >= t) blocked = true;
      ok = ((s >> i & 1) != 0) == !blocked;
    }
    if (ok) solutions.push_back(s);
  }
  EXPECT_EQ(solutions.size(), 1u);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i)
    if (solutions.front() >> i & 1) out.push_back(dets[i]);
  return out;
}

std::vector<Detection> random_dets(Rng& rng, int max_n) {
  std::vector<Detection> dets;
  const int n = static_cast<int>(rng.uniform_int(0, max_n));
  for (int i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.uniform_int(0, 1));
    // coarse confidences so ties (and the tie-break) actually occur
    dets.push_back({cls ? "dog" : "cat", cls ? 16 : 15, static_cast<double>(rng.uniform_int(1, 4)) / 4.0,
                    random_box(rng, 8, 8)});
  }
  return dets;
}

TEST(Nms, MatchesExhaustiveOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    auto dets = random_dets(rng, 6);
    const double t = rng.uniform(0.1, 0.9);
    EXPECT_EQ(nms(dets, t), nms_subset_oracle(dets, t));
  }
}

TEST(Nms, SubsetAndIdempotent) {
  Rng rng(22);
  for (int trial = 0; trial < 300; ++trial) {
    auto dets = random_dets(rng, 8);
    const double t = rng.uniform(0.0, 1.0);
    auto once = nms(dets, t);
    for (const Detection& k : once) EXPECT_NE(std::find(dets.begin(), dets.end(), k), dets.end());
    EXPECT_EQ(nms(once, t), once);
  }
}

TEST(SelectTargets, SingleClassRestriction) {
  DetectorSpec spec;  // allowlist {"dog"}
  std::vector<Detection> dets{{"dog", 16, 0.9, {0, 0, 4, 4}}, {"cat", 15, 0.95, {5, 5, 9, 9}}};
  auto kept = select_targets(dets, spec);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].class_name, "dog");
}

TEST(SelectTargets, EmptyInputAndThreshold) {
  DetectorSpec spec;
  EXPECT_TRUE(select_targets({}, spec).empty());
  EXPECT_TRUE(select_targets({{"dog", 16, 0.4, {0, 0, 4, 4}}}, spec).empty());
  EXPECT_EQ(select_targets({{"dog", 16, 0.5, {0, 0, 4, 4}}}, spec).size(), 1u);
}

TEST(SelectTargets, EmptyAllowlistSelectsNothing) {
  DetectorSpec spec;
  spec.class_allowlist.clear();
  EXPECT_TRUE(select_targets({{"dog", 16, 0.99, {0, 0, 4, 4}}}, spec).empty());
}

TEST(SelectTargets, InvalidThresholdsRejected) {
  DetectorSpec spec;
  spec.confidence_threshold = 1.5;
  EXPECT_THROW(select_targets({}, spec), std::invalid_argument);
}

}  // namespace
}  // namespace inpaint
