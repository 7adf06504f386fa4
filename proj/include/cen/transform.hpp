#pragma once

// Affine mapping from the canonical contralateral-patch grid into image
// coordinates. The transform is the product of a box placement matrix
//
//   R = [ (w''-1)/(w0-1)        0        x'' ]
//       [       0        (h''-1)/(h0-1)  y'' ]
//
// and the regressed refinement
//
//   A = [ sx*cos(t)  -sy*sin(t)  tx ]
//       [ sx*sin(t)   sy*cos(t)  ty ]
//       [     0           0       1 ]
//
// where (x'', y'', w'', h'') is the expanded contralateral patch.

#include <array>
#include <cmath>
#include <string>

#include "cen/error.hpp"
#include "cen/geometry.hpp"

namespace cen {

struct StnParams {
  double sx = 1.0;
  double sy = 1.0;
  double tx = 0.0;
  double ty = 0.0;
  double theta = 0.0;

  static constexpr int kCount = 5;

  static StnParams identity() { return {}; }

  /// Validated construction; scales must be positive and all values finite.
  static StnParams make(double sx, double sy, double tx, double ty, double theta) {
    StnParams p{sx, sy, tx, ty, theta};
    p.validate();
    return p;
  }

  /// Maps unconstrained regressor outputs (log sx, log sy, tx, ty, theta).
  static StnParams from_raw(const std::array<double, kCount>& raw) {
    return make(std::exp(raw[0]), std::exp(raw[1]), raw[2], raw[3], raw[4]);
  }

  void validate() const {
    detail::require(std::isfinite(sx) && std::isfinite(sy) && std::isfinite(tx) &&
                        std::isfinite(ty) && std::isfinite(theta),
                    "STN parameters must be finite");
    detail::require(sx > 0.0 && sy > 0.0, "STN scales must be positive");
  }

  std::array<double, kCount> as_array() const { return {sx, sy, tx, ty, theta}; }
  static StnParams from_array(const std::array<double, kCount>& v) {
    return {v[0], v[1], v[2], v[3], v[4]};
  }
};

struct CanonicalSize {
  int w0 = 64;
  int h0 = 64;

  void validate() const {
    detail::require(w0 >= 2 && h0 >= 2, "canonical patch size must be at least 2x2");
  }
};

/// 2x3 matrix mapping homogeneous (u, v, 1) to (x, y).
struct AffineTransform {
  double m00 = 1.0, m01 = 0.0, m02 = 0.0;
  double m10 = 0.0, m11 = 1.0, m12 = 0.0;

  static AffineTransform identity() { return {}; }

  Point2 apply(Point2 p) const {
    return {m00 * p.x + m01 * p.y + m02, m10 * p.x + m11 * p.y + m12};
  }

  double determinant() const { return m00 * m11 - m01 * m10; }

  AffineTransform inverse() const {
    const double det = determinant();
    if (!(std::abs(det) > 1e-12)) throw NumericError("affine transform is singular");
    AffineTransform inv;
    inv.m00 = m11 / det;
    inv.m01 = -m01 / det;
    inv.m10 = -m10 / det;
    inv.m11 = m00 / det;
    inv.m02 = -(inv.m00 * m02 + inv.m01 * m12);
    inv.m12 = -(inv.m10 * m02 + inv.m11 * m12);
    return inv;
  }
};

inline Point2 map_point(const AffineTransform& t, Point2 p) { return t.apply(p); }

namespace detail {

struct PlacementScale {
  double rx;
  double ry;
};

inline PlacementScale placement_scale(const BoundingBox& expanded, const CanonicalSize& canon) {
  return {(expanded.w - 1.0) / (canon.w0 - 1.0), (expanded.h - 1.0) / (canon.h0 - 1.0)};
}

}  // namespace detail

inline AffineTransform compose_transform(const BoundingBox& expanded, const StnParams& params,
                                         const CanonicalSize& canon = {}) {
  canon.validate();
  const auto [rx, ry] = detail::placement_scale(expanded, canon);
  const double c = std::cos(params.theta), s = std::sin(params.theta);
  AffineTransform t;
  t.m00 = rx * params.sx * c;
  t.m01 = -rx * params.sy * s;
  t.m02 = rx * params.tx + expanded.x;
  t.m10 = ry * params.sx * s;
  t.m11 = ry * params.sy * c;
  t.m12 = ry * params.ty + expanded.y;
  return t;
}

/// Row 0 holds d(image x)/d(sx, sy, tx, ty, theta); row 1 the same for y.
using TransformJacobian = std::array<std::array<double, StnParams::kCount>, 2>;

inline TransformJacobian grad_transform(const BoundingBox& expanded, const StnParams& params,
                                        const CanonicalSize& canon, Point2 p) {
  const auto [rx, ry] = detail::placement_scale(expanded, canon);
  const double c = std::cos(params.theta), s = std::sin(params.theta);
  const double u = p.x, v = p.y;
  TransformJacobian j{};
  j[0] = {rx * c * u, -rx * s * v, rx, 0.0, rx * (-params.sx * s * u - params.sy * c * v)};
  j[1] = {ry * s * u, ry * c * v, 0.0, ry, ry * (params.sx * c * u - params.sy * s * v)};
  return j;
}

}  // namespace cen
