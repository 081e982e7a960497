// SPDX-License-Identifier: Apache-2.0
#include "ctdet/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ctdet/common.hpp"

namespace ctdet::losses {

namespace {

void check_same_size(size_t a, size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

}  // namespace

double dice_loss(Span pred, Span gt, Span mask, double eps,
                 std::vector<double>* grad_pred, bool* all_masked) {
  check_same_size(pred.size(), gt.size(), "dice_loss");
  check_same_size(pred.size(), mask.size(), "dice_loss");
  double sum_p = 0.0, sum_g = 0.0, sum_pg = 0.0, sum_m = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    sum_m += 1.0;
    sum_p += pred[i];
    sum_g += gt[i];
    sum_pg += pred[i] * gt[i];
  }
  if (all_masked) *all_masked = (sum_m == 0.0);
  if (grad_pred) grad_pred->assign(pred.size(), 0.0);
  if (sum_m == 0.0) return 0.0;

  double numer = 2.0 * sum_pg;
  double denom = sum_p + sum_g + eps;
  double loss = 1.0 - numer / denom;
  if (grad_pred) {
    double d2 = denom * denom;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (mask[i] == 0.0) continue;
      (*grad_pred)[i] = -(2.0 * gt[i] * denom - numer) / d2;
    }
  }
  return loss;
}

namespace {

struct PixelIou {
  double loss;
  std::array<double, 4> grad;
};

// Distances order: top, right, bottom, left. Heights pair channels {0,2},
// widths pair {1,3}.
PixelIou iou_at_pixel(const std::array<double, 4>& p, const std::array<double, 4>& g,
                      double eps) {
  double hp = p[0] + p[2], wp = p[1] + p[3];
  double hg = g[0] + g[2], wg = g[1] + g[3];
  double ih = std::min(p[0], g[0]) + std::min(p[2], g[2]);
  double iw = std::min(p[1], g[1]) + std::min(p[3], g[3]);
  double inter = ih * iw;
  double uni = hp * wp + hg * wg - inter;
  double loss = -std::log((inter + eps) / (uni + eps));

  PixelIou out{loss, {}};
  for (int k = 0; k < 4; ++k) {
    bool height_ch = (k == 0 || k == 2);
    double d_i = (p[k] <= g[k] ? 1.0 : 0.0) * (height_ch ? iw : ih);
    double d_area = height_ch ? wp : hp;
    double d_u = d_area - d_i;
    out.grad[k] = -d_i / (inter + eps) + d_u / (uni + eps);
  }
  return out;
}

}  // namespace

double iou_box_loss(const std::array<Span, 4>& pred_d, const std::array<Span, 4>& gt_d,
                    Span pos_mask, double eps,
                    std::array<std::vector<double>, 4>* grad_pred, bool* no_positive) {
  size_t n = pos_mask.size();
  for (int k = 0; k < 4; ++k) {
    check_same_size(pred_d[k].size(), n, "iou_box_loss");
    check_same_size(gt_d[k].size(), n, "iou_box_loss");
  }
  if (grad_pred)
    for (auto& g : *grad_pred) g.assign(n, 0.0);

  double total = 0.0;
  double count = 0.0;
  std::vector<size_t> positives;
  for (size_t i = 0; i < n; ++i) {
    if (pos_mask[i] == 0.0) continue;
    positives.push_back(i);
    count += 1.0;
  }
  if (no_positive) *no_positive = positives.empty();
  if (positives.empty()) return 0.0;

  for (size_t i : positives) {
    PixelIou px = iou_at_pixel({pred_d[0][i], pred_d[1][i], pred_d[2][i], pred_d[3][i]},
                               {gt_d[0][i], gt_d[1][i], gt_d[2][i], gt_d[3][i]}, eps);
    total += px.loss;
    if (grad_pred)
      for (int k = 0; k < 4; ++k) (*grad_pred)[k][i] = px.grad[k] / count;
  }
  return total / count;
}

double iou_box_loss_single(const std::array<double, 4>& pred_d,
                           const std::array<double, 4>& gt_d, double eps) {
  return iou_at_pixel(pred_d, gt_d, eps).loss;
}

double angle_loss(Span pred_theta, Span gt_theta, Span pos_mask,
                  std::vector<double>* grad_pred, bool* no_positive) {
  size_t n = pos_mask.size();
  check_same_size(pred_theta.size(), n, "angle_loss");
  check_same_size(gt_theta.size(), n, "angle_loss");
  if (grad_pred) grad_pred->assign(n, 0.0);
  double count = 0.0;
  for (size_t i = 0; i < n; ++i)
    if (pos_mask[i] != 0.0) count += 1.0;
  if (no_positive) *no_positive = (count == 0.0);
  if (count == 0.0) return 0.0;

  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (pos_mask[i] == 0.0) continue;
    double d = pred_theta[i] - gt_theta[i];
    total += 1.0 - std::cos(d);
    if (grad_pred) (*grad_pred)[i] = std::sin(d) / count;
  }
  return total / count;
}

double contour_loss(Span pred, Span gt, Span mask, std::vector<double>* grad_pred) {
  size_t n = pred.size();
  check_same_size(gt.size(), n, "contour_loss");
  check_same_size(mask.size(), n, "contour_loss");
  if (grad_pred) grad_pred->assign(n, 0.0);
  double count = 0.0;
  for (size_t i = 0; i < n; ++i)
    if (mask[i] != 0.0) count += 1.0;
  if (count == 0.0) return 0.0;

  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (mask[i] == 0.0) continue;
    double d = pred[i] - gt[i];
    total += d * d;
    if (grad_pred) (*grad_pred)[i] = 2.0 * d / count;
  }
  return total / count;
}

LossReport total_loss(double l_score, double l_iou, double l_theta, double l_contour,
                      const LossWeights& w, bool include_contour) {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) throw NumericError(std::string("total_loss: non-finite ") + name);
  };
  check(l_score, "l_score");
  check(l_iou, "l_iou");
  check(l_theta, "l_theta");
  if (include_contour) check(l_contour, "l_contour");

  LossReport r;
  r.l_score = l_score;
  r.l_iou = l_iou;
  r.l_theta = l_theta;
  r.l_contour = include_contour ? l_contour : 0.0;
  r.l_geo = w.lambda_iou * l_iou + l_theta;
  r.l_total = r.l_geo + w.lambda_cls * l_score +
              (include_contour ? w.beta_contour * l_contour : 0.0);
  check(r.l_total, "l_total");
  return r;
}

}  // namespace ctdet::losses
