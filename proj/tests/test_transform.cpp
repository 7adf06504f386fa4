#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cen/transform.hpp"
#include "oracles.hpp"

using namespace cen;

TEST(StnParams, Validation) {
  EXPECT_THROW(StnParams::make(0, 1, 0, 0, 0), InputError);
  EXPECT_THROW(StnParams::make(1, -1, 0, 0, 0), InputError);
  EXPECT_THROW(StnParams::make(1, 1, NAN, 0, 0), InputError);
  const auto p = StnParams::from_raw({std::log(2.0), 0, 1, 2, 3});
  EXPECT_NEAR(p.sx, 2.0, 1e-15);
  EXPECT_EQ(p.sy, 1.0);
  EXPECT_THROW((CanonicalSize{1, 64}.validate()), InputError);
}

TEST(ComposeTransform, IdentityPlacement) {
  const auto t = compose_transform({90, 95, 60, 30}, StnParams::identity(), {64, 64});
  const auto a = map_point(t, {0, 0});
  const auto b = map_point(t, {63, 63});
  EXPECT_DOUBLE_EQ(a.x, 90);
  EXPECT_DOUBLE_EQ(a.y, 95);
  EXPECT_DOUBLE_EQ(b.x, 149);
  EXPECT_DOUBLE_EQ(b.y, 124);
  const auto c = map_point(t, {63, 0});
  EXPECT_DOUBLE_EQ(c.x, 149);
  EXPECT_DOUBLE_EQ(c.y, 95);
}

TEST(ComposeTransform, CornersExactForRandomBoxes) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-200, 200), S(2, 300);
  for (int i = 0; i < 200; ++i) {
    const BoundingBox e{U(rng), U(rng), S(rng), S(rng)};
    const auto t = compose_transform(e, StnParams::identity(), {64, 64});
    const auto p = map_point(t, {63, 63});
    EXPECT_NEAR(p.x, e.x + e.w - 1, 1e-12 * (1 + std::abs(e.x + e.w)));
    EXPECT_NEAR(p.y, e.y + e.h - 1, 1e-12 * (1 + std::abs(e.y + e.h)));
    EXPECT_EQ(map_point(t, {0, 0}), (Point2{e.x, e.y}));
  }
}

TEST(ComposeTransform, PureTranslation) {
  const auto t = compose_transform({0, 0, 64, 64}, StnParams::make(1, 1, 5, 0, 0), {64, 64});
  const auto p = map_point(t, {0, 0});
  EXPECT_DOUBLE_EQ(p.x, 5);
  EXPECT_DOUBLE_EQ(p.y, 0);
}

TEST(ComposeTransform, QuarterTurn) {
  const auto t = compose_transform({0, 0, 64, 64}, StnParams::make(1, 1, 0, 0, std::numbers::pi / 2), {64, 64});
  const auto p = map_point(t, {1, 0});
  EXPECT_NEAR(p.x, 0, 1e-15);
  EXPECT_NEAR(p.y, 1, 1e-15);
}

TEST(MapPoint, IdentityAndInverse) {
  EXPECT_EQ(map_point(AffineTransform::identity(), {3.5, 7}), (Point2{3.5, 7}));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int i = 0; i < 200; ++i) {
    const auto t = compose_transform({50 * U(rng), 50 * U(rng), 10 + 40 * (U(rng) + 1), 10 + 40 * (U(rng) + 1)},
                                     StnParams::make(1 + 0.5 * U(rng), 1 + 0.5 * U(rng), U(rng), U(rng), 3 * U(rng)));
    const Point2 p{100 * U(rng), 100 * U(rng)};
    const auto back = map_point(t.inverse(), map_point(t, p));
    EXPECT_NEAR(back.x, p.x, 1e-9);
    EXPECT_NEAR(back.y, p.y, 1e-9);
  }
}

TEST(AffineTransform, SingularInverseThrows) {
  AffineTransform t;
  t.m00 = 0;
  EXPECT_THROW(t.inverse(), NumericError);
}

TEST(GradTransform, TranslationEntryIsPlacementScale) {
  const BoundingBox e{90, 95, 60, 30};
  const auto j = grad_transform(e, StnParams::identity(), {64, 64}, {10, 20});
  EXPECT_DOUBLE_EQ(j[0][2], 59.0 / 63.0);
  EXPECT_DOUBLE_EQ(j[1][3], 29.0 / 63.0);
  EXPECT_EQ(j[0][3], 0.0);
  EXPECT_EQ(j[1][2], 0.0);
}

TEST(GradTransform, ScaleCrossTermsVanishAtZeroAngle) {
  const BoundingBox e{0, 0, 33, 17};
  const auto j = grad_transform(e, StnParams::make(1.3, 0.7, 0.2, -0.1, 0.0), {64, 64}, {5, 9});
  const double rx = 32.0 / 63.0, ry = 16.0 / 63.0;
  EXPECT_EQ(j[1][0], 0.0);  // ry * sin(0) * u
  EXPECT_EQ(j[0][1], -0.0);
  EXPECT_DOUBLE_EQ(j[0][0], rx * 5);
  EXPECT_DOUBLE_EQ(j[1][1], ry * 9);
  EXPECT_DOUBLE_EQ(j[0][4], rx * (-0.7 * 9));
  EXPECT_DOUBLE_EQ(j[1][4], ry * (1.3 * 5));
}

TEST(GradTransform, MatchesCentralDifferences) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1, 1);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const BoundingBox e{100 * U(rng), 100 * U(rng), 20 + 50 * (U(rng) + 1), 20 + 50 * (U(rng) + 1)};
    const auto params = trial == 0 ? StnParams::identity()
                                   : StnParams::make(1 + 0.5 * U(rng), 1 + 0.5 * U(rng), 3 * U(rng), 3 * U(rng),
                                                     3 * U(rng));
    const Point2 q{32 + 32 * U(rng), 32 + 32 * U(rng)};
    const auto j = grad_transform(e, params, {64, 64}, q);
    for (int k = 0; k < StnParams::kCount; ++k) {
      auto hi = params.as_array(), lo = hi;
      hi[k] += h;
      lo[k] -= h;
      const auto ph = map_point(compose_transform(e, StnParams::from_array(hi)), q);
      const auto pl = map_point(compose_transform(e, StnParams::from_array(lo)), q);
      EXPECT_LT(oracle::rel_error(j[0][k], (ph.x - pl.x) / (2 * h)), 1e-6) << "x, param " << k;
      EXPECT_LT(oracle::rel_error(j[1][k], (ph.y - pl.y) / (2 * h)), 1e-6) << "y, param " << k;
    }
  }
}

TEST(ComposeTransform, LipschitzInParams) {
  // |dT(q)| <= sum_k |J_k| * eps with |J| bounded by placement scale times canvas size
  const BoundingBox e{10, 20, 80, 50};
  const auto p = StnParams::make(1.1, 0.9, 0.3, -0.2, 0.4);
  const double rx = 79.0 / 63.0, ry = 49.0 / 63.0, span = 63.0;
  const double bound = std::max(rx, ry) * (2 * span + 1 + (p.sx + p.sy) * span);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> U(-1, 1), Q(0, 63);
  for (int i = 0; i < 100; ++i) {
    const double eps = 1e-3 * U(rng);
    auto a = p.as_array();
    a[static_cast<std::size_t>(i % 5)] += eps;
    const Point2 q{Q(rng), Q(rng)};
    const auto d = map_point(compose_transform(e, StnParams::from_array(a)), q) - map_point(compose_transform(e, p), q);
    EXPECT_LE(std::hypot(d.x, d.y), bound * std::abs(eps) * 1.01);
  }
}
