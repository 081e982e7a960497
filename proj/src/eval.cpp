// SPDX-License-Identifier: Apache-2.0
#include "ctdet/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ctdet::eval {

namespace {

struct Counts {
  int tp = 0, fp = 0, ignored = 0, gts = 0;
};

Counts match_image(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts,
                   double thr) {
  Counts c;
  for (const GtInstance& g : gts)
    if (!g.dont_care) c.gts++;

  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });

  std::vector<uint8_t> gt_matched(gts.size(), 0);
  for (size_t di : order) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (!gts[gi].dont_care && gt_matched[gi]) continue;
      double iou = geometry::quad_iou(dets[di].box, gts[gi].quad);
      if (iou >= thr && iou > best_iou) {
        best_iou = iou;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt < 0) {
      c.fp++;
    } else if (gts[best_gt].dont_care) {
      c.ignored++;
    } else {
      gt_matched[best_gt] = 1;
      c.tp++;
    }
  }
  return c;
}

void fill_prf(EvalResult& r) {
  int denom_p = r.true_positives + r.false_positives;
  r.precision = denom_p > 0 ? static_cast<double>(r.true_positives) / denom_p : 0.0;
  r.recall = r.total_trainable_gts > 0
                 ? static_cast<double>(r.true_positives) / r.total_trainable_gts
                 : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
}

}  // namespace

EvalResult match_and_score(const std::vector<std::vector<Detection>>& dets_per_image,
                           const std::vector<std::vector<GtInstance>>& gts_per_image,
                           double iou_threshold) {
  if (dets_per_image.size() != gts_per_image.size())
    throw std::invalid_argument("match_and_score: image count mismatch");
  EvalResult r;
  for (size_t i = 0; i < dets_per_image.size(); ++i) {
    Counts c = match_image(dets_per_image[i], gts_per_image[i], iou_threshold);
    r.true_positives += c.tp;
    r.false_positives += c.fp;
    r.ignored_detections += c.ignored;
    r.total_trainable_gts += c.gts;
  }
  fill_prf(r);
  return r;
}

std::vector<ThresholdScore> sweep_iou(const std::vector<std::vector<Detection>>& dets,
                                      const std::vector<std::vector<GtInstance>>& gts,
                                      const std::vector<double>& thresholds) {
  for (size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] <= 0.0 || thresholds[i] > 1.0)
      throw std::invalid_argument("sweep_iou: thresholds must be in (0, 1]");
    if (i > 0 && thresholds[i] <= thresholds[i - 1])
      throw std::invalid_argument("sweep_iou: thresholds must be ascending");
  }
  std::vector<ThresholdScore> out;
  for (double thr : thresholds) {
    EvalResult r = match_and_score(dets, gts, thr);
    out.push_back({thr, r.precision, r.recall, r.f1});
  }
  return out;
}

std::string sweep_table_csv(const std::vector<ThresholdScore>& rows) {
  std::string out = "iou_threshold,precision,recall,f1\n";
  char buf[128];
  for (const ThresholdScore& t : rows) {
    std::snprintf(buf, sizeof(buf), "%.4f,%.6f,%.6f,%.6f\n", t.iou_threshold, t.precision,
                  t.recall, t.f1);
    out += buf;
  }
  return out;
}

}  // namespace ctdet::eval
