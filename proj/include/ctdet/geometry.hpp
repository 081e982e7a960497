// SPDX-License-Identifier: Apache-2.0
//
// Pure 2D geometry for quadrilateral text instances: canonical quad
// ordering, polygon IoU via triangle-fan clipping, minimum-area rotated
// rectangle fitting, EAST-style polygon shrinking and rasterization.
//
// Coordinate convention: image pixels, +x right, +y down. Angles are
// measured counter-clockwise from the +x axis in this (x, y) frame.
// A quad stored in a QuadBox is ordered clockwise on screen, which makes
// its shoelace sum positive.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ctdet::geometry {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const;
};

// Signed area of a closed polygon, positive for clockwise-on-screen order.
double polygon_area(std::span<const Vec2> pts);

bool is_simple_quad(const std::array<Vec2, 4>& pts);

// A word instance as 4 vertices, clockwise on screen starting from the
// top-left-most vertex (lexicographic min by (y, x)). Always simple with
// strictly positive area; construct via make_quad.
class QuadBox {
 public:
  const std::array<Vec2, 4>& vertices() const { return v_; }
  Vec2 operator[](int i) const { return v_[i]; }
  double area() const { return polygon_area(v_); }
  QuadBox translated(Vec2 t) const;
  QuadBox scaled(double sx, double sy) const;

 private:
  friend QuadBox make_quad(const std::array<Vec2, 4>& pts);
  std::array<Vec2, 4> v_{};
};

// Normalizes vertex order (any winding, any start vertex) and validates the
// QuadBox invariants. Throws std::invalid_argument on degenerate or
// self-intersecting input.
QuadBox make_quad(const std::array<Vec2, 4>& pts);

// Center/size/angle rotated rectangle. theta lives in [-pi/4, 3*pi/4);
// min_area_rect outputs the tight canonical form with theta in
// [-pi/4, pi/4), width measured along the theta axis.
struct RotatedBox {
  Vec2 center;
  double width = 0.0;
  double height = 0.0;
  double theta = 0.0;

  std::array<Vec2, 4> corners() const;
  QuadBox as_quad() const;
};

RotatedBox make_rotated_box(Vec2 center, double width, double height, double theta);

// Reduce (width, height, theta) so theta falls in [-pi/4, pi/4), swapping
// the axes for odd quarter-turns.
void canonicalize_box(double& width, double& height, double& theta);

struct Detection {
  QuadBox box;
  double score = 0.0;  // in [0, 1]
};

// Intersection area of two simple polygons (triangle-fan decomposition;
// handles non-convex input). Inputs must be positively oriented.
double polygon_intersection_area(std::span<const Vec2> a, std::span<const Vec2> b);

// area(a intersect b) / area(a union b). Degenerate input gives 0.
double quad_iou(const QuadBox& a, const QuadBox& b);

// Minimum-area enclosing rotated rectangle (rotating calipers over the
// convex hull). Throws std::invalid_argument when the vertices are
// collinear.
RotatedBox min_area_rect(const QuadBox& q);

// Moves every vertex inward along its two incident edges by
// ratio * min(length of the two edges at that vertex). Throws
// std::invalid_argument for ratio outside [0, 0.5) and NumericError-style
// std::runtime_error when the result collapses (callers treat the instance
// as too small and mark it ignore).
QuadBox shrink_quad(const QuadBox& q, double ratio);

struct EdgeDistances {
  double top = 0.0;
  double right = 0.0;
  double bottom = 0.0;
  double left = 0.0;
};

// Perpendicular distances from p to the four edges of r, in the box frame.
// top + bottom == height and left + right == width. p must be strictly
// inside r (throws otherwise).
EdgeDistances point_edge_distances(Vec2 p, const RotatedBox& r);

// True when p is inside the polygon or on its boundary.
bool point_in_polygon(Vec2 p, std::span<const Vec2> poly);

// mask[y*w + x] = 1 iff pixel center (x+0.5, y+0.5) is inside or on q.
std::vector<uint8_t> rasterize_polygon(const QuadBox& q, int h, int w);

}  // namespace ctdet::geometry
