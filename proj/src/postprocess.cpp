// SPDX-License-Identifier: Apache-2.0
#include "ctdet/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctdet/common.hpp"

namespace ctdet::postprocess {

using geometry::QuadBox;
using geometry::Vec2;

void DecodeConfig::validate() const {
  if (score_threshold < 0.0 || score_threshold > 1.0)
    throw ConfigError("decode: score_threshold outside [0,1]");
  if (nms_iou < 0.0 || nms_iou > 1.0) throw ConfigError("decode: nms_iou outside [0,1]");
  if (max_detections <= 0) throw ConfigError("decode: max_detections must be positive");
}

const char* merge_mode_name(MergeMode m) {
  return m == MergeMode::Standard ? "standard" : "locality_aware";
}

MergeMode merge_mode_from_name(const std::string& name) {
  if (name == "standard") return MergeMode::Standard;
  if (name == "locality_aware") return MergeMode::LocalityAware;
  throw ConfigError("unknown merge mode: " + name);
}

DecodeResult decode_rbox(std::span<const float> score,
                         const std::array<std::span<const float>, 4>& dist,
                         std::span<const float> angle, int h, int w,
                         const DecodeConfig& cfg) {
  cfg.validate();
  const size_t n = static_cast<size_t>(h) * w;
  if (score.size() != n || angle.size() != n)
    throw std::invalid_argument("decode_rbox: map shape mismatch");
  for (const auto& d : dist)
    if (d.size() != n) throw std::invalid_argument("decode_rbox: map shape mismatch");

  DecodeResult out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      size_t i = static_cast<size_t>(y) * w + x;
      float s = score[i];
      if (s < cfg.score_threshold) continue;
      // Channel order: top, right, bottom, left. Rescale map units to input px.
      double dt = dist[0][i] * 4.0, dr = dist[1][i] * 4.0;
      double db = dist[2][i] * 4.0, dl = dist[3][i] * 4.0;
      double th = angle[i];
      if (!std::isfinite(dt) || !std::isfinite(dr) || !std::isfinite(db) ||
          !std::isfinite(dl) || !std::isfinite(th) || !std::isfinite(s)) {
        out.skipped++;
        continue;
      }
      double bw = dl + dr, bh = dt + db;
      if (bw <= 1e-6 || bh <= 1e-6) {
        out.skipped++;
        continue;
      }
      Vec2 g{(x + 0.5) * 4.0, (y + 0.5) * 4.0};
      Vec2 ux{std::cos(th), std::sin(th)};
      Vec2 uy{-std::sin(th), std::cos(th)};
      // In-frame offsets of the pixel relative to the box center.
      double a = (dl - dr) * 0.5;
      double b = (dt - db) * 0.5;
      Vec2 c = g - ux * a - uy * b;
      try {
        QuadBox q = geometry::make_rotated_box(c, bw, bh, th).as_quad();
        out.detections.push_back({q, std::clamp(static_cast<double>(s), 0.0, 1.0)});
      } catch (const std::exception&) {
        out.skipped++;
      }
    }
  }
  return out;
}

namespace {

std::vector<Detection> standard_nms(std::vector<Detection> dets, const DecodeConfig& cfg) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<Detection> kept;
  for (size_t idx : order) {
    bool suppressed = false;
    for (const Detection& k : kept)
      if (geometry::quad_iou(dets[idx].box, k.box) > cfg.nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) {
      kept.push_back(dets[idx]);
      if (static_cast<int>(kept.size()) >= cfg.max_detections) break;
    }
  }
  return kept;
}

// Row-major weighted merging of consecutive overlapping boxes (weights are
// detection scores), as used by EAST-style decoders ahead of standard NMS.
std::vector<Detection> locality_merge(const std::vector<Detection>& dets,
                                      const DecodeConfig& cfg) {
  std::vector<Detection> merged;
  bool active = false;
  std::array<Vec2, 4> acc{};
  double weight = 0.0;
  double best = 0.0;

  auto flush = [&]() {
    if (!active) return;
    try {
      QuadBox q = geometry::make_quad(
          {acc[0] * (1.0 / weight), acc[1] * (1.0 / weight), acc[2] * (1.0 / weight),
           acc[3] * (1.0 / weight)});
      merged.push_back({q, best});
    } catch (const std::exception&) {
      // merged vertices collapsed; drop the group
    }
    active = false;
  };

  for (const Detection& d : dets) {
    double w = std::max(d.score, 1e-6);
    if (active) {
      QuadBox current = geometry::make_quad(
          {acc[0] * (1.0 / weight), acc[1] * (1.0 / weight), acc[2] * (1.0 / weight),
           acc[3] * (1.0 / weight)});
      if (geometry::quad_iou(current, d.box) > cfg.nms_iou) {
        for (int i = 0; i < 4; ++i) acc[i] = acc[i] + d.box[i] * w;
        weight += w;
        best = std::max(best, d.score);
        continue;
      }
      flush();
    }
    for (int i = 0; i < 4; ++i) acc[i] = d.box[i] * w;
    weight = w;
    best = d.score;
    active = true;
  }
  flush();
  return merged;
}

}  // namespace

std::vector<Detection> nms(const std::vector<Detection>& dets, const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.merge_mode == MergeMode::LocalityAware)
    return standard_nms(locality_merge(dets, cfg), cfg);
  return standard_nms(dets, cfg);
}

}  // namespace ctdet::postprocess
