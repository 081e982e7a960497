// SPDX-License-Identifier: Apache-2.0
#include "ctdet/eval.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

using namespace ctdet;
using namespace ctdet::eval;
using geometry::QuadBox;
using geometry::Vec2;

namespace {

QuadBox jitter_quad(const QuadBox& q, double frac, Rng& rng) {
  auto rect = geometry::min_area_rect(q);
  double amp = frac * std::min(rect.width, rect.height);
  for (;;) {
    std::array<Vec2, 4> pts;
    for (int i = 0; i < 4; ++i)
      pts[i] = {q[i].x + rng.uniform(-amp, amp), q[i].y + rng.uniform(-amp, amp)};
    try {
      return geometry::make_quad(pts);
    } catch (const std::invalid_argument&) {
    }
  }
}

}  // namespace

TEST_CASE("perfect detections score 1.0 at every threshold") {
  Rng rng(4040);
  std::vector<std::vector<Detection>> dets(3);
  std::vector<std::vector<GtInstance>> gts(3);
  for (int img = 0; img < 3; ++img) {
    for (int i = 0; i < 4; ++i) {
      QuadBox q = oracles::random_quad(rng, 200);
      gts[img].push_back({q, false});
      dets[img].push_back({q, 0.9});
    }
    // A don't-care gt plus a detection covering it: absorbed silently.
    QuadBox dc = oracles::random_quad(rng, 200);
    gts[img].push_back({dc, true});
    dets[img].push_back({dc, 0.8});
  }
  for (double thr : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    EvalResult r = match_and_score(dets, gts, thr);
    CHECK(r.precision == doctest::Approx(1.0));
    CHECK(r.recall == doctest::Approx(1.0));
    CHECK(r.f1 == doctest::Approx(1.0));
    CHECK(r.ignored_detections == 3);
  }
}

TEST_CASE("empty detections give zero scores by convention") {
  std::vector<std::vector<Detection>> dets(1);
  std::vector<std::vector<GtInstance>> gts(1);
  Rng rng(1);
  gts[0].push_back({oracles::random_quad(rng, 50), false});
  EvalResult r = match_and_score(dets, gts, 0.5);
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
}

TEST_CASE("greedy matching agrees with the oracle on randomized small cases") {
  Rng rng(4141);
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<Detection> dets;
    std::vector<GtInstance> gts;
    int ng = static_cast<int>(rng.uniform_int(0, 6));
    int nd = static_cast<int>(rng.uniform_int(0, 6));
    for (int i = 0; i < ng; ++i)
      gts.push_back({oracles::random_quad(rng, 60), rng.uniform() < 0.25});
    for (int i = 0; i < nd; ++i) {
      QuadBox base = (ng > 0 && rng.uniform() < 0.7)
                         ? jitter_quad(gts[static_cast<size_t>(rng.uniform_int(0, ng - 1))].quad,
                                       0.3, rng)
                         : oracles::random_quad(rng, 60);
      dets.push_back({base, rng.uniform(0.05, 1.0)});
    }
    double thr = rng.uniform(0.3, 0.7);
    EvalResult got = match_and_score({dets}, {gts}, thr);
    oracles::OracleCounts expect = oracles::greedy_match_oracle(dets, gts, thr);
    CHECK(got.true_positives == expect.tp);
    CHECK(got.false_positives == expect.fp);
    CHECK(got.ignored_detections == expect.ignored);
    CHECK(got.total_trainable_gts == expect.gts);
    CHECK(got.true_positives <= std::min(nd, ng));
    CHECK(got.precision >= 0.0);
    CHECK(got.precision <= 1.0);
    CHECK(got.recall >= 0.0);
    CHECK(got.recall <= 1.0);
  }
}

TEST_CASE("sweep: jittered detections give monotone nonincreasing F1") {
  Rng rng(4242);
  std::vector<std::vector<Detection>> dets(4);
  std::vector<std::vector<GtInstance>> gts(4);
  for (int img = 0; img < 4; ++img)
    for (int i = 0; i < 5; ++i) {
      QuadBox q = oracles::random_quad(rng, 300, 20.0);
      gts[img].push_back({q, false});
      dets[img].push_back({jitter_quad(q, 0.1, rng), rng.uniform(0.5, 1.0)});
    }
  std::vector<double> thresholds{0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9};
  auto rows = sweep_iou(dets, gts, thresholds);
  REQUIRE(rows.size() == 9);
  for (size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].f1 <= rows[i - 1].f1 + 1e-12);

  CHECK_THROWS_AS(sweep_iou(dets, gts, {0.9, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(sweep_iou(dets, gts, {0.0, 0.5}), std::invalid_argument);
}

TEST_CASE("adding an unmatched low-score detection lowers precision, keeps recall") {
  Rng rng(4343);
  std::vector<Detection> dets;
  std::vector<GtInstance> gts;
  for (int i = 0; i < 4; ++i) {
    QuadBox q = oracles::random_quad(rng, 100);
    gts.push_back({q, false});
    dets.push_back({q, rng.uniform(0.5, 1.0)});
  }
  EvalResult before = match_and_score({dets}, {gts}, 0.5);
  // Far-away box, score below all others.
  dets.push_back({geometry::make_quad({Vec2{500, 500}, Vec2{520, 500}, Vec2{520, 510},
                                       Vec2{500, 510}}),
                  0.01});
  EvalResult after = match_and_score({dets}, {gts}, 0.5);
  CHECK(after.precision < before.precision);
  CHECK(after.recall == doctest::Approx(before.recall));
}

TEST_CASE("evaluation invariant to image ordering") {
  Rng rng(4444);
  std::vector<std::vector<Detection>> dets(3);
  std::vector<std::vector<GtInstance>> gts(3);
  for (int img = 0; img < 3; ++img)
    for (int i = 0; i < 3; ++i) {
      QuadBox q = oracles::random_quad(rng, 80);
      gts[img].push_back({q, rng.uniform() < 0.2});
      dets[img].push_back({jitter_quad(q, 0.2, rng), rng.uniform(0.1, 1.0)});
    }
  EvalResult a = match_and_score(dets, gts, 0.5);
  std::reverse(dets.begin(), dets.end());
  std::reverse(gts.begin(), gts.end());
  EvalResult b = match_and_score(dets, gts, 0.5);
  CHECK(a.true_positives == b.true_positives);
  CHECK(a.false_positives == b.false_positives);
  CHECK(a.f1 == doctest::Approx(b.f1));
}

TEST_CASE("equal-score detections resolve by input index") {
  QuadBox gt_quad = geometry::make_quad({Vec2{0, 0}, Vec2{40, 0}, Vec2{40, 20}, Vec2{0, 20}});
  std::vector<GtInstance> gts{{gt_quad, false}};
  Rng rng(4545);
  Detection d1{jitter_quad(gt_quad, 0.05, rng), 0.7};
  Detection d2{jitter_quad(gt_quad, 0.05, rng), 0.7};
  EvalResult r = match_and_score({{d1, d2}}, {gts}, 0.5);
  // First by input index wins the gt; the second becomes a false positive.
  CHECK(r.true_positives == 1);
  CHECK(r.false_positives == 1);
}

TEST_CASE("sweep table csv shape") {
  std::vector<ThresholdScore> rows{{0.5, 1, 1, 1}, {0.6, 0.9, 0.8, 0.85}};
  std::string csv = sweep_table_csv(rows);
  CHECK(csv.find("iou_threshold,precision,recall,f1\n") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
