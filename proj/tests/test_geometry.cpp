// SPDX-License-Identifier: Apache-2.0
#include "ctdet/geometry.hpp"

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

using namespace ctdet::geometry;
using ctdet::Rng;

namespace {

QuadBox square(double x0, double y0, double side) {
  return make_quad({Vec2{x0, y0}, Vec2{x0 + side, y0}, Vec2{x0 + side, y0 + side},
                    Vec2{x0, y0 + side}});
}

QuadBox rotate_quad(const QuadBox& q, double angle, Vec2 about) {
  double c = std::cos(angle), s = std::sin(angle);
  std::array<Vec2, 4> pts;
  for (int i = 0; i < 4; ++i) {
    Vec2 d = q[i] - about;
    pts[i] = about + Vec2{d.x * c - d.y * s, d.x * s + d.y * c};
  }
  return make_quad(pts);
}

}  // namespace

TEST_CASE("make_quad normalizes order and validates") {
  // Any input winding / start vertex lands on the same canonical order.
  QuadBox a = make_quad({Vec2{0, 0}, Vec2{10, 0}, Vec2{10, 4}, Vec2{0, 4}});
  QuadBox b = make_quad({Vec2{10, 4}, Vec2{10, 0}, Vec2{0, 0}, Vec2{0, 4}});
  for (int i = 0; i < 4; ++i) {
    CHECK(a[i].x == doctest::Approx(b[i].x));
    CHECK(a[i].y == doctest::Approx(b[i].y));
  }
  CHECK(a[0].x == 0);
  CHECK(a[0].y == 0);
  CHECK(a.area() == doctest::Approx(40.0));

  CHECK_THROWS_AS(make_quad({Vec2{0, 0}, Vec2{1, 0}, Vec2{2, 0}, Vec2{3, 0}}),
                  std::invalid_argument);
  // bowtie
  CHECK_THROWS_AS(make_quad({Vec2{0, 0}, Vec2{10, 0}, Vec2{0, 10}, Vec2{10, 10}}),
                  std::invalid_argument);
}

TEST_CASE("quad_iou basic values") {
  QuadBox u = square(0, 0, 1);
  CHECK(quad_iou(u, u) == doctest::Approx(1.0));
  CHECK(quad_iou(square(0, 0, 1), square(5, 5, 1)) == doctest::Approx(0.0));
  // 1x1 squares offset by 0.5 in x: overlap 0.5, union 1.5.
  CHECK(quad_iou(square(0, 0, 1), square(0.5, 0, 1)) == doctest::Approx(1.0 / 3).epsilon(1e-9));
}

TEST_CASE("quad_iou invariants on random quads") {
  Rng rng(101);
  for (int i = 0; i < 200; ++i) {
    QuadBox a = oracles::random_quad(rng, 100);
    QuadBox b = oracles::random_quad(rng, 100);
    double iab = quad_iou(a, b);
    double iba = quad_iou(b, a);
    CHECK(iab == doctest::Approx(iba).epsilon(1e-9));
    CHECK(iab >= 0.0);
    CHECK(iab <= 1.0);
    CHECK(quad_iou(a, a) == doctest::Approx(1.0));
  }
}

TEST_CASE("quad_iou agrees with Monte-Carlo sampling") {
  Rng rng(202);
  for (int i = 0; i < 40; ++i) {
    QuadBox a = oracles::random_quad(rng, 60);
    QuadBox b = oracles::random_quad(rng, 60);
    double exact = quad_iou(a, b);
    double mc = oracles::mc_quad_iou(a, b, 100000, 1000 + i);
    CHECK(std::abs(exact - mc) <= 0.01);
  }
}

TEST_CASE("min_area_rect on rectangles") {
  QuadBox r = make_quad({Vec2{0, 0}, Vec2{10, 0}, Vec2{10, 4}, Vec2{0, 4}});
  RotatedBox box = min_area_rect(r);
  CHECK(box.center.x == doctest::Approx(5.0));
  CHECK(box.center.y == doctest::Approx(2.0));
  CHECK(box.width == doctest::Approx(10.0));
  CHECK(box.height == doctest::Approx(4.0));
  CHECK(box.theta == doctest::Approx(0.0));

  QuadBox rot = rotate_quad(r, M_PI / 6, {5, 2});
  RotatedBox box2 = min_area_rect(rot);
  CHECK(box2.width == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(box2.height == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(box2.theta == doctest::Approx(M_PI / 6).epsilon(1e-6));

  RotatedBox unit = min_area_rect(square(0, 0, 1));
  CHECK(unit.width == doctest::Approx(1.0));
  CHECK(unit.height == doctest::Approx(1.0));
  CHECK(unit.theta == doctest::Approx(0.0));

  CHECK_THROWS_AS(min_area_rect(make_quad({Vec2{0, 0}, Vec2{10, 0}, Vec2{10, 1e-12},
                                           Vec2{5, 1e-12}})),
                  std::invalid_argument);
}

TEST_CASE("min_area_rect contains vertices and beats sampled orientations") {
  Rng rng(303);
  for (int i = 0; i < 120; ++i) {
    QuadBox q = oracles::random_quad(rng, 80);
    RotatedBox r = min_area_rect(q);
    for (const Vec2& v : q.vertices()) {
      EdgeDistances d = point_edge_distances(
          {v.x, v.y}, RotatedBox{r.center, r.width + 1e-5, r.height + 1e-5, r.theta});
      CHECK(d.top > -1e-6);
      CHECK(d.right > -1e-6);
      CHECK(d.bottom > -1e-6);
      CHECK(d.left > -1e-6);
    }
    double area = r.width * r.height;
    for (int k = 0; k < 36; ++k)
      CHECK(area <= oracles::enclosing_area_at_angle(q, k * M_PI / 36.0) + 1e-9);
  }
}

namespace {

// True when the caliper minimum is well separated: with a near-tie between
// two hull edges, rotation can legitimately flip which one wins.
bool unique_caliper_min(const QuadBox& q) {
  std::vector<double> areas;
  for (int i = 0; i < 4; ++i) {
    Vec2 e = q[(i + 1) % 4] - q[i];
    areas.push_back(oracles::enclosing_area_at_angle(q, std::atan2(e.y, e.x)));
  }
  std::sort(areas.begin(), areas.end());
  return areas[1] > areas[0] * 1.01;
}

}  // namespace

TEST_CASE("min_area_rect rigid-motion equivariance") {
  Rng rng(404);
  int checked = 0;
  for (int i = 0; i < 120; ++i) {
    QuadBox q = oracles::random_quad(rng, 50);
    // Half the cases are exact rectangles: their fit is unique after
    // canonicalization no matter which caliper edge is selected.
    if (i % 2 == 0) q = min_area_rect(q).as_quad();
    if (i % 2 != 0 && !unique_caliper_min(q)) continue;
    ++checked;

    RotatedBox r0 = min_area_rect(q);
    double phi = rng.uniform(-M_PI, M_PI);
    Vec2 t{rng.uniform(-20, 20), rng.uniform(-20, 20)};
    QuadBox q2 = rotate_quad(q, phi, {0, 0}).translated(t);
    RotatedBox r1 = min_area_rect(q2);

    // Size matches up to the width/height swap of angle canonicalization.
    bool same = std::abs(r1.width - r0.width) < 1e-6 && std::abs(r1.height - r0.height) < 1e-6;
    bool swapped = std::abs(r1.width - r0.height) < 1e-6 && std::abs(r1.height - r0.width) < 1e-6;
    CHECK((same || swapped));

    double c = std::cos(phi), s = std::sin(phi);
    Vec2 expect{r0.center.x * c - r0.center.y * s + t.x, r0.center.x * s + r0.center.y * c + t.y};
    CHECK(r1.center.x == doctest::Approx(expect.x).epsilon(1e-6));
    CHECK(r1.center.y == doctest::Approx(expect.y).epsilon(1e-6));

    // Angles agree modulo pi/2 (canonical range reduction).
    double diff = std::remainder(r1.theta - (r0.theta + phi), M_PI / 2);
    CHECK(std::abs(diff) < 1e-6);
  }
  CHECK(checked >= 60);
}

TEST_CASE("shrink_quad examples") {
  QuadBox sq = square(0, 0, 10);
  QuadBox same = shrink_quad(sq, 0.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(same[i].x == sq[i].x);
    CHECK(same[i].y == sq[i].y);
  }
  QuadBox shrunk = shrink_quad(sq, 0.3);
  CHECK(shrunk[0].x == doctest::Approx(3.0));
  CHECK(shrunk[0].y == doctest::Approx(3.0));
  CHECK(shrunk[2].x == doctest::Approx(7.0));
  CHECK(shrunk[2].y == doctest::Approx(7.0));
  CHECK(shrunk.area() == doctest::Approx(16.0));

  QuadBox tiny = shrink_quad(square(0, 0, 2), 0.49);
  CHECK(tiny.area() == doctest::Approx(0.04 * 0.04).epsilon(1e-6));

  CHECK_THROWS_AS(shrink_quad(sq, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(shrink_quad(sq, -0.1), std::invalid_argument);
}

TEST_CASE("shrink_quad area strictly decreasing in ratio") {
  Rng rng(505);
  for (int i = 0; i < 60; ++i) {
    QuadBox q = oracles::random_quad(rng, 60, 8.0);
    double prev = q.area();
    for (double ratio : {0.1, 0.2, 0.3, 0.4}) {
      try {
        QuadBox s = shrink_quad(q, ratio);
        CHECK(s.area() < prev);
        prev = s.area();
      } catch (const std::runtime_error&) {
        break;  // collapsed; acceptable for sharply concave quads
      }
    }
  }
}

TEST_CASE("point_edge_distances") {
  RotatedBox box{{5, 2}, 10, 4, 0};
  EdgeDistances c = point_edge_distances({5, 2}, box);
  CHECK(c.top == doctest::Approx(2));
  CHECK(c.right == doctest::Approx(5));
  CHECK(c.bottom == doctest::Approx(2));
  CHECK(c.left == doctest::Approx(5));

  EdgeDistances d = point_edge_distances({1, 1}, box);
  CHECK(d.top == doctest::Approx(1));
  CHECK(d.right == doctest::Approx(9));
  CHECK(d.bottom == doctest::Approx(3));
  CHECK(d.left == doctest::Approx(1));

  // Rotating box and point together leaves the in-frame distances unchanged.
  double phi = M_PI / 6;
  double cs = std::cos(phi), sn = std::sin(phi);
  Vec2 p{1, 1};
  Vec2 pr{p.x * cs - p.y * sn, p.x * sn + p.y * cs};
  Vec2 cr{box.center.x * cs - box.center.y * sn, box.center.x * sn + box.center.y * cs};
  EdgeDistances dr = point_edge_distances(pr, RotatedBox{cr, 10, 4, phi});
  CHECK(dr.top == doctest::Approx(d.top).epsilon(1e-6));
  CHECK(dr.right == doctest::Approx(d.right).epsilon(1e-6));
  CHECK(dr.bottom == doctest::Approx(d.bottom).epsilon(1e-6));
  CHECK(dr.left == doctest::Approx(d.left).epsilon(1e-6));

  CHECK_THROWS_AS(point_edge_distances({100, 100}, box), std::invalid_argument);
}

TEST_CASE("point_edge_distances sums equal box size") {
  Rng rng(606);
  for (int i = 0; i < 100; ++i) {
    double w = rng.uniform(2, 40), h = rng.uniform(2, 40);
    double theta = rng.uniform(-M_PI / 4, 3 * M_PI / 4 - 1e-9);
    RotatedBox box{{rng.uniform(-20, 20), rng.uniform(-20, 20)}, w, h, theta};
    Vec2 ux{std::cos(theta), std::sin(theta)}, uy{-std::sin(theta), std::cos(theta)};
    Vec2 p = box.center + ux * rng.uniform(-0.49 * w, 0.49 * w) +
             uy * rng.uniform(-0.49 * h, 0.49 * h);
    EdgeDistances d = point_edge_distances(p, box);
    CHECK(d.top + d.bottom == doctest::Approx(h).epsilon(1e-6));
    CHECK(d.left + d.right == doctest::Approx(w).epsilon(1e-6));
  }
}

TEST_CASE("rasterize_polygon") {
  QuadBox full = make_quad({Vec2{-1, -1}, Vec2{5, -1}, Vec2{5, 5}, Vec2{-1, 5}});
  auto mask = rasterize_polygon(full, 4, 4);
  int ones = 0;
  for (uint8_t v : mask) ones += v;
  CHECK(ones == 16);

  QuadBox off = make_quad({Vec2{100, 100}, Vec2{110, 100}, Vec2{110, 110}, Vec2{100, 110}});
  auto empty = rasterize_polygon(off, 8, 8);
  for (uint8_t v : empty) CHECK(v == 0);
}

TEST_CASE("rasterize_polygon matches winding-number brute force") {
  Rng rng(707);
  for (int i = 0; i < 60; ++i) {
    QuadBox q = oracles::random_quad(rng, 32);
    auto mask = rasterize_polygon(q, 32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        bool expect = oracles::winding_inside({x + 0.5, y + 0.5}, q.vertices());
        CHECK(static_cast<bool>(mask[y * 32 + x]) == expect);
      }
  }
}

TEST_CASE("canonicalize_box reduces angle") {
  double w = 10, h = 4, theta = M_PI / 2;
  canonicalize_box(w, h, theta);
  CHECK(w == doctest::Approx(4));
  CHECK(h == doctest::Approx(10));
  CHECK(theta == doctest::Approx(0.0));

  w = 10, h = 4, theta = M_PI / 4;
  canonicalize_box(w, h, theta);
  CHECK(theta == doctest::Approx(-M_PI / 4));
  CHECK(w == doctest::Approx(4));
}
