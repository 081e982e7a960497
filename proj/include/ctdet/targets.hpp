// SPDX-License-Identifier: Apache-2.0
//
// Dense training targets from per-image quad annotations: instance contour
// band map, shrunk score map, per-pixel rotated-box distances/angle, and a
// train-ignore mask. All maps live at 1/4 of the input resolution.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctdet/geometry.hpp"
#include "ctdet/image.hpp"

namespace ctdet::targets {

using geometry::QuadBox;

struct Instance {
  QuadBox quad;
  std::string transcription;
  bool dont_care = false;
};

struct AnnotatedImage {
  image::ImageU8 img;
  std::vector<Instance> instances;
};

// Distance channel order used everywhere: top, right, bottom, left.
struct TargetMaps {
  int h = 0;
  int w = 0;
  std::vector<float> contour;               // values in {0, 0.6, 0.9, 1}
  std::vector<float> score;                 // {0, 1}
  std::array<std::vector<float>, 4> dist;   // output-map pixel units (input px / 4)
  std::vector<float> angle;                 // radians
  std::vector<float> ignore;                // {0, 1}; score && ignore never both 1
};

struct TargetConfig {
  double shrink_ratio = 0.3;
  double min_side_px = 2.0;  // at output resolution; smaller instances are ignored
};

// Boundary pixels of the quad under 8-connected Bresenham tracing of its
// edges (vertices mapped to the containing pixel). Unclipped; callers skip
// out-of-canvas entries.
std::vector<std::pair<int, int>> contour_boundary_pixels(const QuadBox& q);

// Smoothed border map: 1.0 on the traced boundary set, 0.9 at Chebyshev
// distance 1 from it, 0.6 at distance 2..3, 0 elsewhere. Bands from several
// instances compose by maximum (equivalently: distance to the union set).
std::vector<float> make_contour_target(const std::vector<QuadBox>& quads, int h, int w);

struct ScoreTargets {
  std::vector<float> score;
  std::vector<float> ignore;
  std::vector<int32_t> owner;  // index into the quads list, -1 where none
};

// score = union of rasterized shrunk trainable quads; ignore = unshrunk
// don't-care quads plus instances whose shrunk polygon degenerates or whose
// min side (min-area-rect) is below cfg.min_side_px. Overlap ownership:
// smaller-area instance wins, ties broken by lower index.
ScoreTargets make_score_target(const std::vector<QuadBox>& quads,
                               const std::vector<uint8_t>& dont_care, int h, int w,
                               const TargetConfig& cfg);

struct RboxTargets {
  std::array<std::vector<float>, 4> dist;
  std::vector<float> angle;
};

// Fills the 5 geometry channels at score=1 pixels. Rare pixels whose center
// lands exactly on the fitted rectangle boundary (possible at shrink ratio
// 0) are cleared from the score map so that positives always carry strictly
// positive distances.
RboxTargets make_rbox_target(const std::vector<QuadBox>& quads, int h, int w,
                             std::vector<float>& score, const TargetConfig& cfg);

// Composes the three generators at 1/4 resolution. Image dims must be
// divisible by 4. Degenerate/too-small instances are routed to ignore.
TargetMaps build_targets(const AnnotatedImage& sample, const TargetConfig& cfg);

}  // namespace ctdet::targets
