// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: dice loss on the score map, per-pixel IoU loss and
// angle loss on the rotated-box geometry, MSE on the contour map, and the
// weighted joint loss. All computations run in double precision and every
// loss can also return its analytic gradient w.r.t. the predictions.
#pragma once

#include <array>
#include <span>
#include <vector>

namespace ctdet::losses {

struct LossWeights {
  double lambda_cls = 0.01;
  double beta_contour = 0.1;
  double lambda_iou = 1.0;
  double epsilon = 1e-5;
};

struct LossReport {
  double l_score = 0.0;
  double l_iou = 0.0;
  double l_theta = 0.0;
  double l_geo = 0.0;
  double l_contour = 0.0;
  double l_total = 0.0;
  bool all_masked = false;   // dice saw no unmasked pixels
  bool no_positive = false;  // geometry losses saw no positive pixels
};

using Span = std::span<const double>;

// 1 - 2*sum(pred*gt) / (sum(pred) + sum(gt) + eps), sums over pixels where
// mask != 0. Returns 0 and sets *all_masked when the mask is empty.
double dice_loss(Span pred, Span gt, Span mask, double eps,
                 std::vector<double>* grad_pred = nullptr, bool* all_masked = nullptr);

// Mean over positive pixels of -log((I + eps) / (U + eps)) for the
// axis-aligned-in-frame rectangles described by the 4 distance channels
// (order: top, right, bottom, left). Scale-invariant up to eps effects.
double iou_box_loss(const std::array<Span, 4>& pred_d, const std::array<Span, 4>& gt_d,
                    Span pos_mask, double eps,
                    std::array<std::vector<double>, 4>* grad_pred = nullptr,
                    bool* no_positive = nullptr);

// Single-location convenience used by tests and decoding diagnostics.
double iou_box_loss_single(const std::array<double, 4>& pred_d,
                           const std::array<double, 4>& gt_d, double eps);

// Mean over positive pixels of 1 - cos(pred - gt); range [0, 2].
double angle_loss(Span pred_theta, Span gt_theta, Span pos_mask,
                  std::vector<double>* grad_pred = nullptr, bool* no_positive = nullptr);

// Mean squared error over pixels where mask != 0.
double contour_loss(Span pred, Span gt, Span mask, std::vector<double>* grad_pred = nullptr);

// l_geo = lambda_iou * l_iou + l_theta;
// l_total = l_geo + lambda_cls * l_score (+ beta_contour * l_contour unless
// the variant has no contour branch). Throws NumericError when a component
// is non-finite, naming the offending term.
LossReport total_loss(double l_score, double l_iou, double l_theta, double l_contour,
                      const LossWeights& w, bool include_contour);

}  // namespace ctdet::losses
