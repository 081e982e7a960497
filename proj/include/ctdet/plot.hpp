// SPDX-License-Identifier: Apache-2.0
//
// Static chart and overlay emitters: loss curves from a training log,
// F1-vs-IoU curve from a sweep table, and ground-truth target visualizations.
#pragma once

#include <string>
#include <vector>

#include "ctdet/targets.hpp"

namespace ctdet::plot {

void plot_loss_curves(const std::string& log_csv_path, const std::string& out_path);
void plot_f1_vs_iou(const std::string& table_csv_path, const std::string& out_path);

// Writes <prefix>_contour.bmp (heatmap), <prefix>_score.bmp (overlay with
// score region and quads) and <prefix>_contour_values.csv (raw map) into
// out_dir.
void render_target_overlays(const targets::AnnotatedImage& sample,
                            const targets::TargetMaps& maps, const std::string& out_dir,
                            const std::string& prefix);

}  // namespace ctdet::plot
