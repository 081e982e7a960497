// SPDX-License-Identifier: Apache-2.0
#include "ctdet/targets.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>

#include "ctdet/common.hpp"

namespace ctdet::targets {

using geometry::RotatedBox;
using geometry::Vec2;

std::vector<std::pair<int, int>> contour_boundary_pixels(const QuadBox& q) {
  std::vector<std::pair<int, int>> out;
  const auto& v = q.vertices();
  for (int e = 0; e < 4; ++e) {
    int x0 = static_cast<int>(std::floor(v[e].x));
    int y0 = static_cast<int>(std::floor(v[e].y));
    int x1 = static_cast<int>(std::floor(v[(e + 1) % 4].x));
    int y1 = static_cast<int>(std::floor(v[(e + 1) % 4].y));
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      out.emplace_back(x0, y0);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  return out;
}

std::vector<float> make_contour_target(const std::vector<QuadBox>& quads, int h, int w) {
  // Work on a 3-px padded grid so boundary pixels just outside the canvas
  // still cast their bands in (only distances <= 3 carry nonzero values).
  constexpr int kPad = 3;
  const int ph = h + 2 * kPad, pw = w + 2 * kPad;
  std::vector<int> dist(static_cast<size_t>(ph) * pw, -1);
  std::deque<std::pair<int, int>> frontier;
  for (const QuadBox& q : quads) {
    for (auto [x, y] : contour_boundary_pixels(q)) {
      int px = x + kPad, py = y + kPad;
      if (px < 0 || px >= pw || py < 0 || py >= ph) continue;
      size_t idx = static_cast<size_t>(py) * pw + px;
      if (dist[idx] != 0) {
        dist[idx] = 0;
        frontier.emplace_back(px, py);
      }
    }
  }
  // Multi-source BFS over the 8-neighborhood computes exact Chebyshev
  // distance; only depth <= 3 matters for the band values.
  while (!frontier.empty()) {
    auto [x, y] = frontier.front();
    frontier.pop_front();
    int d = dist[static_cast<size_t>(y) * pw + x];
    if (d >= 3) continue;
    for (int oy = -1; oy <= 1; ++oy)
      for (int ox = -1; ox <= 1; ++ox) {
        int nx = x + ox, ny = y + oy;
        if (nx < 0 || nx >= pw || ny < 0 || ny >= ph) continue;
        size_t idx = static_cast<size_t>(ny) * pw + nx;
        if (dist[idx] == -1) {
          dist[idx] = d + 1;
          frontier.emplace_back(nx, ny);
        }
      }
  }
  std::vector<float> out(static_cast<size_t>(h) * w, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int d = dist[static_cast<size_t>(y + kPad) * pw + (x + kPad)];
      float v = 0.0f;
      if (d == 0)
        v = 1.0f;
      else if (d == 1)
        v = 0.9f;
      else if (d == 2 || d == 3)
        v = 0.6f;
      out[static_cast<size_t>(y) * w + x] = v;
    }
  return out;
}

namespace {

struct InstanceGeometry {
  std::optional<QuadBox> shrunk;
  std::optional<RotatedBox> rect;
  bool keep = false;  // trainable with valid geometry
};

InstanceGeometry analyze_instance(const QuadBox& q, const TargetConfig& cfg) {
  InstanceGeometry g;
  try {
    g.rect = geometry::min_area_rect(q);
  } catch (const std::invalid_argument&) {
    return g;
  }
  if (std::min(g.rect->width, g.rect->height) < cfg.min_side_px) return g;
  try {
    g.shrunk = geometry::shrink_quad(q, cfg.shrink_ratio);
  } catch (const std::exception&) {
    return g;
  }
  g.keep = true;
  return g;
}

void paint_mask(std::vector<float>& map, const std::vector<uint8_t>& mask) {
  for (size_t i = 0; i < map.size(); ++i)
    if (mask[i]) map[i] = 1.0f;
}

}  // namespace

ScoreTargets make_score_target(const std::vector<QuadBox>& quads,
                               const std::vector<uint8_t>& dont_care, int h, int w,
                               const TargetConfig& cfg) {
  if (quads.size() != dont_care.size())
    throw std::invalid_argument("make_score_target: flag/quad count mismatch");
  const size_t n = static_cast<size_t>(h) * w;
  ScoreTargets t;
  t.score.assign(n, 0.0f);
  t.ignore.assign(n, 0.0f);
  t.owner.assign(n, -1);

  std::vector<InstanceGeometry> geo(quads.size());
  std::vector<size_t> trainable;
  for (size_t i = 0; i < quads.size(); ++i) {
    if (dont_care[i]) {
      paint_mask(t.ignore, geometry::rasterize_polygon(quads[i], h, w));
      continue;
    }
    geo[i] = analyze_instance(quads[i], cfg);
    if (geo[i].keep)
      trainable.push_back(i);
    else
      paint_mask(t.ignore, geometry::rasterize_polygon(quads[i], h, w));
  }

  // Paint larger instances first so the final owner of a contested pixel is
  // the smallest-area instance; equal areas resolve to the lower index.
  std::sort(trainable.begin(), trainable.end(), [&](size_t a, size_t b) {
    double aa = quads[a].area(), ab = quads[b].area();
    if (aa != ab) return aa > ab;
    return a > b;
  });
  for (size_t i : trainable) {
    auto mask = geometry::rasterize_polygon(*geo[i].shrunk, h, w);
    for (size_t px = 0; px < n; ++px)
      if (mask[px]) {
        t.score[px] = 1.0f;
        t.owner[px] = static_cast<int32_t>(i);
      }
  }
  for (size_t px = 0; px < n; ++px)
    if (t.ignore[px] > 0.0f) {
      t.score[px] = 0.0f;
      t.owner[px] = -1;
    }
  return t;
}

RboxTargets make_rbox_target(const std::vector<QuadBox>& quads, int h, int w,
                             std::vector<float>& score, const TargetConfig& cfg) {
  const size_t n = static_cast<size_t>(h) * w;
  if (score.size() != n) throw std::invalid_argument("make_rbox_target: score shape mismatch");
  RboxTargets t;
  for (auto& d : t.dist) d.assign(n, 0.0f);
  t.angle.assign(n, 0.0f);

  std::vector<uint8_t> no_dc(quads.size(), 0);
  ScoreTargets own = make_score_target(quads, no_dc, h, w, cfg);
  std::vector<std::optional<RotatedBox>> rects(quads.size());
  for (size_t i = 0; i < quads.size(); ++i) {
    try {
      rects[i] = geometry::min_area_rect(quads[i]);
    } catch (const std::invalid_argument&) {
    }
  }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t px = static_cast<size_t>(y) * w + x;
      if (score[px] != 1.0f) continue;
      int32_t o = own.owner[px];
      if (o < 0 || !rects[o]) {
        score[px] = 0.0f;
        continue;
      }
      Vec2 p{x + 0.5, y + 0.5};
      try {
        auto d = geometry::point_edge_distances(p, *rects[o]);
        t.dist[0][px] = static_cast<float>(d.top);
        t.dist[1][px] = static_cast<float>(d.right);
        t.dist[2][px] = static_cast<float>(d.bottom);
        t.dist[3][px] = static_cast<float>(d.left);
        t.angle[px] = static_cast<float>(rects[o]->theta);
      } catch (const std::invalid_argument&) {
        score[px] = 0.0f;  // center on the rect border; unusable as a positive
      }
    }
  return t;
}

TargetMaps build_targets(const AnnotatedImage& sample, const TargetConfig& cfg) {
  if (sample.img.h % 4 != 0 || sample.img.w % 4 != 0)
    throw ConfigError("build_targets: image dims must be divisible by 4");
  int h = sample.img.h / 4;
  int w = sample.img.w / 4;

  std::vector<QuadBox> quads;
  std::vector<uint8_t> dont_care;
  quads.reserve(sample.instances.size());
  for (const Instance& inst : sample.instances) {
    quads.push_back(inst.quad.scaled(0.25, 0.25));
    dont_care.push_back(inst.dont_care ? 1 : 0);
  }

  ScoreTargets st = make_score_target(quads, dont_care, h, w, cfg);
  TargetMaps maps;
  maps.h = h;
  maps.w = w;
  maps.score = st.score;
  maps.ignore = std::move(st.ignore);

  RboxTargets rt = make_rbox_target(quads, h, w, maps.score, cfg);
  maps.dist = std::move(rt.dist);
  maps.angle = std::move(rt.angle);

  // Contour bands come from kept trainable instances only; don't-care and
  // degenerate regions are handled by the ignore mask instead.
  std::vector<QuadBox> contour_quads;
  for (size_t i = 0; i < quads.size(); ++i) {
    if (dont_care[i]) continue;
    InstanceGeometry g = analyze_instance(quads[i], cfg);
    if (g.keep) contour_quads.push_back(quads[i]);
  }
  maps.contour = make_contour_target(contour_quads, h, w);
  return maps;
}

}  // namespace ctdet::targets
