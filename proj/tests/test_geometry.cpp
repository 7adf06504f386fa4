#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cen/geometry.hpp"
#include "oracles.hpp"

using namespace cen;

namespace {

BinaryMask strip_mask(int w, int h, Point2 center, double angle, double half_width, double half_length) {
  BinaryMask m(w, h);
  const Point2 along{std::sin(angle), std::cos(angle)};
  const Point2 across{std::cos(angle), -std::sin(angle)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Point2 d = Point2{double(x), double(y)} - center;
      if (std::abs(dot(d, across)) <= half_width && std::abs(dot(d, along)) <= half_length) m.set(x, y);
    }
  }
  return m;
}

}  // namespace

TEST(ConvexHull, DropsInteriorPoint) {
  const std::vector<Point2> pts{{0, 0}, {4, 0}, {4, 4}, {0, 4}, {2, 2}};
  const auto hull = convex_hull(pts);
  const std::vector<Point2> want{{0, 0}, {4, 0}, {4, 4}, {0, 4}};
  EXPECT_EQ(hull, want);
}

TEST(ConvexHull, SinglePoint) {
  const std::vector<Point2> pts{{1, 1}};
  EXPECT_EQ(convex_hull(pts), pts);
}

TEST(ConvexHull, EmptyInputThrows) {
  EXPECT_THROW(convex_hull({}), InputError);
}

TEST(ConvexHull, DropsCollinearPoints) {
  const std::vector<Point2> pts{{0, 0}, {1, 0}, {2, 0}, {2, 2}, {0, 2}, {0, 1}};
  EXPECT_EQ(convex_hull(pts).size(), 4u);
}

TEST(ConvexHull, RandomDiscContainment) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point2> pts;
    while (pts.size() < 50) {
      Point2 p{U(rng), U(rng)};
      if (dot(p, p) <= 1) pts.push_back(p);
    }
    const auto hull = convex_hull(pts);
    ASSERT_GE(hull.size(), 3u);
    for (std::size_t i = 0; i < hull.size(); ++i) {
      const Point2 a = hull[i], b = hull[(i + 1) % hull.size()], c = hull[(i + 2) % hull.size()];
      EXPECT_GT(cross(b - a, c - b), 0.0);  // strictly convex, CCW
      for (const auto& p : pts) EXPECT_GE(cross(b - a, p - a), -1e-12);
    }
  }
}

TEST(MinAreaRect, UnitSquare) {
  const std::vector<Point2> pts{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const auto r = min_area_rect(pts);
  EXPECT_NEAR(r.center.x, 0.5, 1e-12);
  EXPECT_NEAR(r.center.y, 0.5, 1e-12);
  EXPECT_NEAR(r.width, 1.0, 1e-12);
  EXPECT_NEAR(r.height, 1.0, 1e-12);
  EXPECT_NEAR(std::remainder(r.angle, std::numbers::pi / 2), 0.0, 1e-12);
}

TEST(MinAreaRect, RotatedSquare) {
  const double a = std::numbers::pi / 6;
  std::vector<Point2> pts;
  for (Point2 p : {Point2{0, 0}, Point2{1, 0}, Point2{1, 1}, Point2{0, 1}}) {
    pts.push_back({std::cos(a) * p.x - std::sin(a) * p.y, std::sin(a) * p.x + std::cos(a) * p.y});
  }
  const auto r = min_area_rect(pts);
  EXPECT_NEAR(r.area(), 1.0, 1e-9);
  EXPECT_NEAR(std::remainder(r.angle - a, std::numbers::pi / 2), 0.0, 1e-9);
  EXPECT_GE(r.angle, -std::numbers::pi / 2);
  EXPECT_LT(r.angle, std::numbers::pi / 2);
}

TEST(MinAreaRect, BeatsAngleSweepAndContainsPoints) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-10, 10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Point2> pts(20);
    for (auto& p : pts) p = {U(rng), U(rng)};
    const auto r = min_area_rect(pts);
    EXPECT_LE(r.area(), oracle::sweep_min_area(pts) + 1e-6);
    for (const auto& p : pts) EXPECT_TRUE(oracle::rect_contains(r, p, 1e-6));
  }
}

TEST(MinAreaRect, PermutationAndRotationInvariance) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-5, 5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Point2> pts(15);
    for (auto& p : pts) p = {U(rng), U(rng)};
    const double area = min_area_rect(pts).area();
    auto shuffled = pts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_NEAR(min_area_rect(shuffled).area(), area, 1e-6);
    const double a = U(rng);
    for (auto& p : shuffled) p = {std::cos(a) * p.x - std::sin(a) * p.y, std::sin(a) * p.x + std::cos(a) * p.y};
    EXPECT_NEAR(min_area_rect(shuffled).area(), area, 1e-6);
  }
}

TEST(MinAreaRect, EmptyThrows) { EXPECT_THROW(min_area_rect({}), InputError); }

TEST(SpineLine, VerticalStrip) {
  BinaryMask m(200, 400);
  for (int y = 0; y < 400; ++y) {
    for (int x = 95; x <= 105; ++x) m.set(x, y);
  }
  const auto l = spine_line(m);
  EXPECT_NEAR(l.a, 1.0, 1e-6);
  EXPECT_NEAR(l.b, 0.0, 1e-6);
  EXPECT_NEAR(l.c, -100.0, 1e-6);
}

TEST(SpineLine, LargestComponentWins) {
  BinaryMask m(200, 400);
  for (int y = 0; y < 400; ++y) {
    for (int x = 95; x <= 105; ++x) m.set(x, y);
  }
  for (int y = 8; y < 13; ++y) {
    for (int x = 8; x < 13; ++x) m.set(x, y);
  }
  const auto l = spine_line(m);
  EXPECT_NEAR(l.a, 1.0, 1e-6);
  EXPECT_NEAR(l.b, 0.0, 1e-6);
  EXPECT_NEAR(l.c, -100.0, 1e-6);
}

TEST(SpineLine, RotatedStrip) {
  const double ang = 10.0 * std::numbers::pi / 180.0;
  const Point2 center{99.5, 199.5};
  const auto m = strip_mask(200, 400, center, ang, 5.0, 150.0);
  const auto l = spine_line(m);
  const auto want = SpineLine::through(center, {std::sin(ang), std::cos(ang)});
  EXPECT_NEAR(l.a, want.a, 2e-3);
  EXPECT_NEAR(l.b, want.b, 2e-3);
  EXPECT_NEAR(l.signed_distance(center), 0.0, 0.5);
  EXPECT_NEAR(l.a * l.a + l.b * l.b, 1.0, 1e-12);
}

TEST(SpineLine, EmptyMaskThrows) {
  BinaryMask m(10, 10);
  try {
    spine_line(m);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_STREQ(e.what(), "empty spine mask");
  }
}

TEST(SpineLine, Canonicalization) {
  const auto l = SpineLine::from_coefficients(-2, 0, 200);
  EXPECT_EQ(l.a, 1.0);
  EXPECT_EQ(l.c, -100.0);
  const auto h = SpineLine::from_coefficients(0, -3, 6);
  EXPECT_EQ(h.b, 1.0);
  EXPECT_EQ(h.c, -2.0);
}

TEST(ReflectBox, VerticalLine) {
  const auto r = reflect_box({20, 30, 10, 10}, SpineLine::from_coefficients(1, 0, -100));
  EXPECT_NEAR(r.x, 171, 1e-12);
  EXPECT_NEAR(r.y, 30, 1e-12);
  EXPECT_EQ(r.w, 10);
  EXPECT_EQ(r.h, 10);
  EXPECT_NEAR(r.center().x, 175.5, 1e-12);
}

TEST(ReflectBox, FixedPointOnLine) {
  const BoundingBox b{95.5, 10, 10, 6};  // center x = 100
  const auto r = reflect_box(b, SpineLine::from_coefficients(1, 0, -100));
  EXPECT_NEAR(r.x, b.x, 1e-12);
  EXPECT_NEAR(r.y, b.y, 1e-12);
}

TEST(ReflectBox, DiagonalSwapsCoordinates) {
  const double k = 1.0 / std::sqrt(2.0);
  const auto r = reflect_box({10, 30, 5, 5}, SpineLine::from_coefficients(k, -k, 0));
  EXPECT_NEAR(r.x, 30, 1e-12);
  EXPECT_NEAR(r.y, 10, 1e-12);
  EXPECT_EQ(r.w, 5);
  EXPECT_EQ(r.h, 5);
}

TEST(ReflectBox, RandomPairsSatisfyBothConstraints) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-500, 500), S(1, 100), A(0, 2 * std::numbers::pi);
  for (int i = 0; i < 1000; ++i) {
    const double t = A(rng);
    const auto line = SpineLine::from_coefficients(std::cos(t), std::sin(t), U(rng));
    const BoundingBox b{U(rng), U(rng), S(rng), S(rng)};
    const auto r = reflect_box(b, line);
    EXPECT_EQ(r.w, b.w);
    EXPECT_EQ(r.h, b.h);
    const Point2 c0 = b.center(), c1 = r.center();
    const double mx = (c0.x + c1.x) / 2, my = (c0.y + c1.y) / 2;
    EXPECT_NEAR(line.a * mx + line.b * my + line.c, 0.0, 1e-9);
    EXPECT_NEAR(-line.b * (c1.x - c0.x) + line.a * (c1.y - c0.y), 0.0, 1e-9);
    const auto back = reflect_box(r, line);
    EXPECT_NEAR(back.x, b.x, 1e-9);
    EXPECT_NEAR(back.y, b.y, 1e-9);
  }
}

TEST(ExpandPatch, Examples) {
  EXPECT_EQ(expand_patch({100, 100, 40, 20}), (BoundingBox{90, 95, 60, 30}));
  EXPECT_EQ(expand_patch({0, 0, 4, 4}), (BoundingBox{-1, -1, 6, 6}));
}

TEST(ExpandPatch, ShrinkInverts) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(-100, 100), S(0.5, 80);
  for (int i = 0; i < 200; ++i) {
    const BoundingBox b{U(rng), U(rng), S(rng), S(rng)};
    const auto back = shrink_patch(expand_patch(b));
    EXPECT_NEAR(back.x, b.x, 1e-12);
    EXPECT_NEAR(back.y, b.y, 1e-12);
    EXPECT_NEAR(back.w, b.w, 1e-12);
    EXPECT_NEAR(back.h, b.h, 1e-12);
  }
}
