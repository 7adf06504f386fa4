#pragma once

// Spine-line extraction and contralateral patch geometry.
//
// Coordinates are image pixels with pixel (col, row) located at (x, y) = (col,
// row). A box (x, y, w, h) covers the pixel span [x, x+w-1] x [y, y+h-1], so its
// center is (x + (w-1)/2, y + (h-1)/2).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <queue>
#include <span>
#include <vector>

#include "cen/error.hpp"

namespace cen {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }

struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double right() const { return x + w - 1.0; }
  double bottom() const { return y + h - 1.0; }
  Point2 center() const { return {x + (w - 1.0) / 2.0, y + (h - 1.0) / 2.0}; }
  double area() const { return w * h; }
  bool valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
           std::isfinite(h) && w > 0.0 && h > 0.0;
  }

  static BoundingBox from_center(Point2 c, double w, double h) {
    return {c.x - (w - 1.0) / 2.0, c.y - (h - 1.0) / 2.0, w, h};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Line a*x + b*y + c = 0 with a^2 + b^2 = 1 and a >= 0 (b >= 0 when a == 0).
struct SpineLine {
  double a = 1.0;
  double b = 0.0;
  double c = 0.0;

  /// Normalizes and canonicalizes arbitrary coefficients.
  static SpineLine from_coefficients(double a, double b, double c) {
    const double norm = std::hypot(a, b);
    detail::require(std::isfinite(norm) && norm > 0.0 && std::isfinite(c),
                    "degenerate line coefficients");
    a /= norm;
    b /= norm;
    c /= norm;
    if (a < 0.0 || (a == 0.0 && b < 0.0)) {
      a = -a;
      b = -b;
      c = -c;
    }
    return {a, b, c};
  }

  /// Line through `p` with direction `dir`.
  static SpineLine through(Point2 p, Point2 dir) {
    const double a = dir.y;
    const double b = -dir.x;
    return from_coefficients(a, b, -(a * p.x + b * p.y));
  }

  double signed_distance(Point2 p) const { return a * p.x + b * p.y + c; }

  Point2 reflect(Point2 p) const {
    const double d = signed_distance(p);
    return {p.x - 2.0 * d * a, p.y - 2.0 * d * b};
  }
};

struct RotatedRect {
  Point2 center;
  double width = 0.0;   // extent along (cos angle, sin angle)
  double height = 0.0;  // extent along (-sin angle, cos angle)
  double angle = 0.0;   // radians in [-pi/2, pi/2)

  double area() const { return width * height; }
  Point2 axis_u() const { return {std::cos(angle), std::sin(angle)}; }
  Point2 axis_v() const { return {-std::sin(angle), std::cos(angle)}; }

  /// Corners in counter-clockwise order starting at (-w/2, -h/2).
  std::array<Point2, 4> corners() const {
    const Point2 u = (width / 2.0) * axis_u();
    const Point2 v = (height / 2.0) * axis_v();
    return {center - u - v, center + u - v, center + u + v, center - u + v};
  }
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major, nonzero = foreground

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {
    detail::require(w >= 0 && h >= 0, "negative mask dimensions");
  }

  bool at(int col, int row) const { return data[static_cast<std::size_t>(row) * width + col] != 0; }
  void set(int col, int row, bool v = true) {
    data[static_cast<std::size_t>(row) * width + col] = v ? 1 : 0;
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
  }
};

/// Counter-clockwise hull (Andrew's monotone chain) without collinear vertices.
inline std::vector<Point2> convex_hull(std::span<const Point2> points) {
  if (points.empty()) throw InputError("no foreground points");
  std::vector<Point2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](Point2 p, Point2 q) {
    return p.x < q.x || (p.x == q.x && p.y < q.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;

  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    const auto& p = pts[i];
    while (k >= lower && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= 0.0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

/// Minimum-area enclosing rectangle by rotating calipers: one side of the
/// optimum is collinear with a hull edge, so every edge direction is tried.
/// Accepts any point set; the hull is recomputed internally.
inline RotatedRect min_area_rect(std::span<const Point2> points) {
  if (points.empty()) throw InputError("no foreground points");
  const std::vector<Point2> hull = convex_hull(points);
  if (hull.size() == 1) return {hull[0], 0.0, 0.0, 0.0};

  RotatedRect best;
  double best_area = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point2 edge = hull[(i + 1) % hull.size()] - hull[i];
    const double len = std::hypot(edge.x, edge.y);
    if (len == 0.0) continue;
    const Point2 u = (1.0 / len) * edge;
    const Point2 n{-u.y, u.x};
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double nmin = umin, nmax = -umin;
    for (const auto& p : hull) {
      const double pu = dot(p, u), pn = dot(p, n);
      umin = std::min(umin, pu);
      umax = std::max(umax, pu);
      nmin = std::min(nmin, pn);
      nmax = std::max(nmax, pn);
    }
    const double area = (umax - umin) * (nmax - nmin);
    if (area < best_area) {
      best_area = area;
      best.center = (0.5 * (umin + umax)) * u + (0.5 * (nmin + nmax)) * n;
      best.width = umax - umin;
      best.height = nmax - nmin;
      best.angle = std::atan2(u.y, u.x);
    }
  }
  constexpr double pi = std::numbers::pi;
  if (best.angle >= pi / 2.0) best.angle -= pi;
  if (best.angle < -pi / 2.0) best.angle += pi;
  return best;
}

/// Pixel-center coordinates of the largest 4-connected foreground component.
/// Ties go to the component reached first in raster order.
inline std::vector<Point2> largest_component(const BinaryMask& mask) {
  detail::require(mask.data.size() == static_cast<std::size_t>(mask.width) * mask.height,
                  "mask data length does not match its dimensions");
  const int W = mask.width, H = mask.height;
  std::vector<int> label(mask.data.size(), -1);
  std::vector<int> sizes;
  std::vector<std::size_t> seeds;
  std::queue<std::size_t> frontier;
  for (std::size_t start = 0; start < mask.data.size(); ++start) {
    if (!mask.data[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    int size = 0;
    label[start] = id;
    frontier.push(start);
    while (!frontier.empty()) {
      const std::size_t idx = frontier.front();
      frontier.pop();
      ++size;
      const int col = static_cast<int>(idx % W), row = static_cast<int>(idx / W);
      const std::array<std::array<int, 2>, 4> nbrs{{{col - 1, row}, {col + 1, row}, {col, row - 1}, {col, row + 1}}};
      for (auto [c, r] : nbrs) {
        if (c < 0 || r < 0 || c >= W || r >= H) continue;
        const std::size_t j = static_cast<std::size_t>(r) * W + c;
        if (mask.data[j] && label[j] < 0) {
          label[j] = id;
          frontier.push(j);
        }
      }
    }
    sizes.push_back(size);
    seeds.push_back(start);
  }
  if (sizes.empty()) throw InputError("empty spine mask");

  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<Point2> pts;
  pts.reserve(sizes[best]);
  for (std::size_t idx = seeds[best]; idx < label.size(); ++idx) {
    if (label[idx] == best) pts.push_back({static_cast<double>(idx % W), static_cast<double>(idx / W)});
  }
  return pts;
}

/// Symmetry axis through the midpoints of the two short edges of the minimum
/// rectangle around the largest spine component. For a square rectangle the
/// candidate closer to vertical wins.
inline SpineLine spine_line(const BinaryMask& mask) {
  const std::vector<Point2> pts = largest_component(mask);
  const RotatedRect rect = min_area_rect(pts);
  const Point2 u = rect.axis_u(), v = rect.axis_v();
  const double tol = 1e-9 * std::max({1.0, rect.width, rect.height});
  Point2 dir;
  if (rect.width > rect.height + tol) {
    dir = u;
  } else if (rect.height > rect.width + tol) {
    dir = v;
  } else {
    dir = std::abs(u.y) >= std::abs(v.y) ? u : v;
  }
  if (rect.width == 0.0 && rect.height == 0.0) dir = {0.0, 1.0};
  return SpineLine::through(rect.center, dir);
}

/// Mirror a box across the line, keeping its size. Solves the pair of
/// constraints: the center midpoint lies on the line and the center
/// displacement is parallel to the line normal.
inline BoundingBox reflect_box(const BoundingBox& box, const SpineLine& line) {
  const Point2 mirrored = line.reflect(box.center());
  return BoundingBox::from_center(mirrored, box.w, box.h);
}

inline constexpr double kPatchMargin = 0.25;

/// Grows a box by a quarter of its size on every side.
inline BoundingBox expand_patch(const BoundingBox& box) {
  const double dx = kPatchMargin * box.w, dy = kPatchMargin * box.h;
  return {box.x - dx, box.y - dy, box.w + 2.0 * dx, box.h + 2.0 * dy};
}

/// Inverse of expand_patch.
inline BoundingBox shrink_patch(const BoundingBox& expanded) {
  const double w = expanded.w / (1.0 + 2.0 * kPatchMargin);
  const double h = expanded.h / (1.0 + 2.0 * kPatchMargin);
  return {expanded.x + kPatchMargin * w, expanded.y + kPatchMargin * h, w, h};
}

}  // namespace cen
