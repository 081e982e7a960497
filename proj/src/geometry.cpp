// SPDX-License-Identifier: Apache-2.0
#include "ctdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ctdet::geometry {

namespace {

constexpr double kEps = 1e-9;

int sign_of(double d) { return (d > kEps) - (d < -kEps); }

double cross3(Vec2 o, Vec2 a, Vec2 b) { return (a - o).cross(b - o); }

bool segments_properly_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  int d1 = sign_of(cross3(a, b, c));
  int d2 = sign_of(cross3(a, b, d));
  int d3 = sign_of(cross3(c, d, a));
  int d4 = sign_of(cross3(c, d, b));
  return d1 * d2 < 0 && d3 * d4 < 0;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  Vec2 ab = b - a;
  double len2 = ab.dot(ab);
  if (len2 <= kEps * kEps) return (p - a).norm();
  double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

}  // namespace

double Vec2::norm() const { return std::sqrt(x * x + y * y); }

double polygon_area(std::span<const Vec2> pts) {
  double s = 0.0;
  size_t n = pts.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = pts[i];
    const Vec2& q = pts[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * s;
}

bool is_simple_quad(const std::array<Vec2, 4>& p) {
  // Only the two non-adjacent edge pairs can cross in a quad.
  return !segments_properly_intersect(p[0], p[1], p[2], p[3]) &&
         !segments_properly_intersect(p[1], p[2], p[3], p[0]);
}

QuadBox QuadBox::translated(Vec2 t) const {
  QuadBox r = *this;
  for (auto& p : r.v_) p = p + t;
  return r;
}

QuadBox QuadBox::scaled(double sx, double sy) const {
  QuadBox r = *this;
  for (auto& p : r.v_) p = {p.x * sx, p.y * sy};
  return r;
}

QuadBox make_quad(const std::array<Vec2, 4>& pts) {
  std::array<Vec2, 4> p = pts;
  for (const Vec2& q : p)
    if (!std::isfinite(q.x) || !std::isfinite(q.y))
      throw std::invalid_argument("quad: non-finite vertex");

  double area = polygon_area(p);
  if (std::abs(area) <= kEps) throw std::invalid_argument("quad: degenerate (zero area)");
  if (area < 0.0) std::reverse(p.begin(), p.end());
  if (!is_simple_quad(p)) throw std::invalid_argument("quad: self-intersecting");

  // Start from the top-left-most vertex: lexicographic min by (y, x).
  int start = 0;
  for (int i = 1; i < 4; ++i) {
    if (p[i].y < p[start].y - kEps ||
        (std::abs(p[i].y - p[start].y) <= kEps && p[i].x < p[start].x))
      start = i;
  }
  QuadBox q;
  for (int i = 0; i < 4; ++i) q.v_[i] = p[(start + i) % 4];
  return q;
}

std::array<Vec2, 4> RotatedBox::corners() const {
  Vec2 ux{std::cos(theta), std::sin(theta)};
  Vec2 uy{-std::sin(theta), std::cos(theta)};
  Vec2 hw = ux * (0.5 * width);
  Vec2 hh = uy * (0.5 * height);
  return {center - hw - hh, center + hw - hh, center + hw + hh, center - hw + hh};
}

QuadBox RotatedBox::as_quad() const { return make_quad(corners()); }

void canonicalize_box(double& width, double& height, double& theta) {
  double q = std::floor((theta + M_PI / 4.0) / (M_PI / 2.0));
  theta -= q * (M_PI / 2.0);
  auto turns = static_cast<long long>(q);
  if (((turns % 2) + 2) % 2 != 0) std::swap(width, height);
}

RotatedBox make_rotated_box(Vec2 center, double width, double height, double theta) {
  if (!(width > 0.0) || !(height > 0.0))
    throw std::invalid_argument("rotated box: non-positive size");
  if (theta < -M_PI / 4.0 - kEps || theta >= 3.0 * M_PI / 4.0)
    throw std::invalid_argument("rotated box: theta outside [-pi/4, 3pi/4)");
  return RotatedBox{center, width, height, theta};
}

// Intersection of triangles (o,a,b) and (o,c,d) with sign bookkeeping; part
// of the fan decomposition of polygon intersection.
namespace {

// Clip polygon (in `poly`) by the half-plane left of directed line a->b.
void clip_halfplane(std::vector<Vec2>& poly, Vec2 a, Vec2 b) {
  std::vector<Vec2> out;
  out.reserve(poly.size() + 2);
  size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    Vec2 p = poly[i];
    Vec2 q = poly[(i + 1) % n];
    double sp = cross3(a, b, p);
    double sq = cross3(a, b, q);
    if (sp >= -kEps) out.push_back(p);
    if ((sp > kEps && sq < -kEps) || (sp < -kEps && sq > kEps)) {
      double t = sp / (sp - sq);
      out.push_back(p + (q - p) * t);
    }
  }
  poly = std::move(out);
}

double triangle_pair_area(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  Vec2 o{0.0, 0.0};
  int s1 = sign_of(cross3(o, a, b));
  int s2 = sign_of(cross3(o, c, d));
  if (s1 == 0 || s2 == 0) return 0.0;
  if (s1 < 0) std::swap(a, b);
  if (s2 < 0) std::swap(c, d);
  std::vector<Vec2> poly{o, a, b};
  clip_halfplane(poly, o, c);
  if (poly.size() >= 3) clip_halfplane(poly, c, d);
  if (poly.size() >= 3) clip_halfplane(poly, d, o);
  double area = poly.size() >= 3 ? std::abs(polygon_area(poly)) : 0.0;
  return s1 * s2 < 0 ? -area : area;
}

}  // namespace

double polygon_intersection_area(std::span<const Vec2> a, std::span<const Vec2> b) {
  double total = 0.0;
  size_t na = a.size(), nb = b.size();
  for (size_t i = 0; i < na; ++i)
    for (size_t j = 0; j < nb; ++j)
      total += triangle_pair_area(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb]);
  return std::abs(total);
}

double quad_iou(const QuadBox& a, const QuadBox& b) {
  double area_a = a.area();
  double area_b = b.area();
  if (area_a <= kEps || area_b <= kEps) return 0.0;
  double inter = polygon_intersection_area(a.vertices(), b.vertices());
  inter = std::min(inter, std::min(area_a, area_b));
  double uni = area_a + area_b - inter;
  if (uni <= kEps) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace {

// Andrew monotone chain; returns hull in counter-clockwise (math) order.
std::vector<Vec2> convex_hull(std::array<Vec2, 4> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  std::vector<Vec2> h;
  for (const Vec2& p : pts) {
    while (h.size() >= 2 && cross3(h[h.size() - 2], h.back(), p) <= kEps) h.pop_back();
    h.push_back(p);
  }
  size_t lower = h.size() + 1;
  for (int i = 3; i >= 0; --i) {
    const Vec2& p = pts[i];
    while (h.size() >= lower && cross3(h[h.size() - 2], h.back(), p) <= kEps) h.pop_back();
    h.push_back(p);
  }
  h.pop_back();
  return h;
}

}  // namespace

RotatedBox min_area_rect(const QuadBox& q) {
  std::vector<Vec2> hull = convex_hull(q.vertices());
  if (hull.size() < 3) throw std::invalid_argument("min_area_rect: collinear vertices");

  double best_area = std::numeric_limits<double>::infinity();
  RotatedBox best;
  size_t n = hull.size();
  for (size_t i = 0; i < n; ++i) {
    Vec2 e = hull[(i + 1) % n] - hull[i];
    double len = e.norm();
    if (len <= kEps) continue;
    Vec2 ux = e * (1.0 / len);
    Vec2 uy{-ux.y, ux.x};
    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (const Vec2& p : hull) {
      double u = p.dot(ux), v = p.dot(uy);
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
    double w = umax - umin, h = vmax - vmin;
    double area = w * h;
    if (area < best_area - kEps) {
      best_area = area;
      Vec2 c = ux * (0.5 * (umin + umax)) + uy * (0.5 * (vmin + vmax));
      double theta = std::atan2(ux.y, ux.x);
      canonicalize_box(w, h, theta);
      best = RotatedBox{c, w, h, theta};
    }
  }
  if (!(best_area < 1e300) || best.width <= kEps || best.height <= kEps)
    throw std::invalid_argument("min_area_rect: degenerate input");
  return best;
}

QuadBox shrink_quad(const QuadBox& q, double ratio) {
  if (ratio < 0.0 || ratio >= 0.5)
    throw std::invalid_argument("shrink_quad: ratio must be in [0, 0.5)");
  const auto& v = q.vertices();
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    Vec2 next = v[(i + 1) % 4];
    Vec2 prev = v[(i + 3) % 4];
    double len_next = (next - v[i]).norm();
    double len_prev = (prev - v[i]).norm();
    double r = std::min(len_next, len_prev);
    Vec2 dir_next = len_next > kEps ? (next - v[i]) * (1.0 / len_next) : Vec2{};
    Vec2 dir_prev = len_prev > kEps ? (prev - v[i]) * (1.0 / len_prev) : Vec2{};
    out[i] = v[i] + (dir_next + dir_prev) * (ratio * r);
  }
  double area = polygon_area(out);
  if (area <= kEps || !is_simple_quad(out))
    throw std::runtime_error("shrink_quad: polygon collapsed");
  return make_quad(out);
}

EdgeDistances point_edge_distances(Vec2 p, const RotatedBox& r) {
  Vec2 ux{std::cos(r.theta), std::sin(r.theta)};
  Vec2 uy{-std::sin(r.theta), std::cos(r.theta)};
  Vec2 d = p - r.center;
  double a = d.dot(ux);
  double b = d.dot(uy);
  EdgeDistances e;
  e.left = 0.5 * r.width + a;
  e.right = 0.5 * r.width - a;
  e.top = 0.5 * r.height + b;
  e.bottom = 0.5 * r.height - b;
  if (e.left <= 0.0 || e.right <= 0.0 || e.top <= 0.0 || e.bottom <= 0.0)
    throw std::invalid_argument("point_edge_distances: point not strictly inside box");
  return e;
}

bool point_in_polygon(Vec2 p, std::span<const Vec2> poly) {
  size_t n = poly.size();
  for (size_t i = 0; i < n; ++i)
    if (point_segment_distance(p, poly[i], poly[(i + 1) % n]) <= kEps) return true;
  // Even-odd crossing count with half-open vertical spans.
  bool inside = false;
  for (size_t i = 0; i < n; ++i) {
    Vec2 a = poly[i];
    Vec2 b = poly[(i + 1) % n];
    if ((a.y > p.y) != (b.y > p.y)) {
      double x_at = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (x_at > p.x) inside = !inside;
    }
  }
  return inside;
}

std::vector<uint8_t> rasterize_polygon(const QuadBox& q, int h, int w) {
  std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
  const auto& v = q.vertices();
  double xmin = v[0].x, xmax = v[0].x, ymin = v[0].y, ymax = v[0].y;
  for (const Vec2& p : v) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  int x0 = std::max(0, static_cast<int>(std::floor(xmin - 0.5)));
  int x1 = std::min(w - 1, static_cast<int>(std::ceil(xmax)));
  int y0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
  int y1 = std::min(h - 1, static_cast<int>(std::ceil(ymax)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (point_in_polygon({x + 0.5, y + 0.5}, v))
        mask[static_cast<size_t>(y) * w + x] = 1;
  return mask;
}

}  // namespace ctdet::geometry
