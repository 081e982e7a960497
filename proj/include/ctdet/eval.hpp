// SPDX-License-Identifier: Apache-2.0
//
// Detection evaluation: greedy IoU matching with don't-care handling,
// precision/recall/F1, and the IoU-threshold sweep.
//
// Matching protocol (replayed verbatim by the test oracle): per image,
// detections are visited by descending score (ties: earlier input index).
// Each detection matches the not-yet-matched ground truth with the highest
// IoU >= threshold (ties: lower gt index); don't-care ground truths are
// always available and absorb detections without counting them as TP or FP.
// Unmatched detections are false positives. Recall divides by the number of
// trainable (non-don't-care) ground truths.
#pragma once

#include <string>
#include <vector>

#include "ctdet/geometry.hpp"

namespace ctdet::eval {

using geometry::Detection;
using geometry::QuadBox;

struct GtInstance {
  QuadBox quad;
  bool dont_care = false;
};

struct ThresholdScore {
  double iou_threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int true_positives = 0;
  int false_positives = 0;
  int ignored_detections = 0;  // absorbed by don't-care regions
  int total_trainable_gts = 0;
  std::vector<ThresholdScore> per_threshold;
};

EvalResult match_and_score(const std::vector<std::vector<Detection>>& dets_per_image,
                           const std::vector<std::vector<GtInstance>>& gts_per_image,
                           double iou_threshold);

// One matching pass per threshold; thresholds must be ascending in (0, 1].
std::vector<ThresholdScore> sweep_iou(const std::vector<std::vector<Detection>>& dets,
                                      const std::vector<std::vector<GtInstance>>& gts,
                                      const std::vector<double>& thresholds);

std::string sweep_table_csv(const std::vector<ThresholdScore>& rows);

}  // namespace ctdet::eval
