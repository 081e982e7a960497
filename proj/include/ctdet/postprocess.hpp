// SPDX-License-Identifier: Apache-2.0
//
// Dense-output decoding: per-pixel rotated-box reconstruction above a score
// threshold, then suppression (greedy NMS, optionally preceded by
// locality-aware row-major merging).
#pragma once

#include <span>
#include <string>
#include <vector>

#include "ctdet/geometry.hpp"

namespace ctdet::postprocess {

using geometry::Detection;

enum class MergeMode { Standard, LocalityAware };

struct DecodeConfig {
  double score_threshold = 0.8;
  double nms_iou = 0.2;
  int max_detections = 1000;
  MergeMode merge_mode = MergeMode::Standard;

  void validate() const;
};

const char* merge_mode_name(MergeMode m);
MergeMode merge_mode_from_name(const std::string& name);

struct DecodeResult {
  std::vector<Detection> detections;  // row-major emission order
  int skipped = 0;                    // pixels dropped for non-finite/degenerate geometry
};

// Maps are h*w row-major at output (1/4) resolution; dist channels in
// output-map pixel units ordered top,right,bottom,left. Emitted boxes are in
// input-image pixels.
DecodeResult decode_rbox(std::span<const float> score,
                         const std::array<std::span<const float>, 4>& dist,
                         std::span<const float> angle, int h, int w,
                         const DecodeConfig& cfg);

// Suppression per cfg.merge_mode; output sorted by score descending, at most
// cfg.max_detections entries.
std::vector<Detection> nms(const std::vector<Detection>& dets, const DecodeConfig& cfg);

}  // namespace ctdet::postprocess
