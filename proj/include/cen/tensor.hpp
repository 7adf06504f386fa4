#pragma once

// Feature-map sampling and RoI pooling.
//
// Image coordinates map to feature coordinates by dividing by the stride with
// no half-pixel offset, so feature cell (i, j) sits at image point
// (stride * j, stride * i). Samples that fall outside the map read zeros.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cen/error.hpp"
#include "cen/geometry.hpp"
#include "cen/transform.hpp"

namespace cen {

/// Channel-major C x H x W tensor at a known stride (image pixels per cell).
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  int stride = 1;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, int stride_px = 1)
      : channels(c), height(h), width(w), stride(stride_px),
        data(static_cast<std::size_t>(c) * h * w, 0.0) {
    detail::require(c >= 0 && h >= 0 && w >= 0, "negative feature map dimensions");
    detail::require(stride_px >= 1, "feature stride must be >= 1");
  }

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int c, int y, int x) const {
    return static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x;
  }
  double& at(int c, int y, int x) { return data[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data[index(c, y, x)]; }

  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  void validate() const {
    detail::require(data.size() == static_cast<std::size_t>(channels) * plane(),
                    "feature map data length does not match C*H*W");
    detail::require(stride >= 1, "feature stride must be >= 1");
    for (double v : data) detail::require(std::isfinite(v), "feature map contains non-finite values");
  }
};

/// Flattened pooled features, channel-major (length 49*C after 7x7 pooling).
using FeatureVector = std::vector<double>;

namespace detail {

/// The four bilinear taps around a feature-space point. Out-of-range taps
/// keep their weight but carry offset -1 so they read as zero.
struct BilinearTaps {
  std::array<std::ptrdiff_t, 4> offset;  // (y0,x0) (y0,x1) (y1,x0) (y1,x1) within a plane
  std::array<double, 4> weight;
  double wx;
  double wy;
};

inline BilinearTaps bilinear_taps(const FeatureMap& f, double fx, double fy) {
  const double x0f = std::floor(fx), y0f = std::floor(fy);
  BilinearTaps t;
  t.wx = fx - x0f;
  t.wy = fy - y0f;
  const auto cell = [&](double xf, double yf) -> std::ptrdiff_t {
    if (xf < 0.0 || yf < 0.0 || xf > f.width - 1 || yf > f.height - 1) return -1;
    return static_cast<std::ptrdiff_t>(yf) * f.width + static_cast<std::ptrdiff_t>(xf);
  };
  t.offset = {cell(x0f, y0f), cell(x0f + 1, y0f), cell(x0f, y0f + 1), cell(x0f + 1, y0f + 1)};
  t.weight = {(1 - t.wx) * (1 - t.wy), t.wx * (1 - t.wy), (1 - t.wx) * t.wy, t.wx * t.wy};
  return t;
}

inline double tap_value(const double* plane, std::ptrdiff_t off) { return off < 0 ? 0.0 : plane[off]; }

inline Point2 canonical_point(int u, int v, int out_w, int out_h, const CanonicalSize& canon) {
  const double su = out_w > 1 ? (canon.w0 - 1.0) / (out_w - 1.0) : 0.0;
  const double sv = out_h > 1 ? (canon.h0 - 1.0) / (out_h - 1.0) : 0.0;
  return {u * su, v * sv};
}

}  // namespace detail

/// Bilinear read at image coordinates (x, y) with zero padding.
inline double bilinear_sample(const FeatureMap& f, double x, double y, int channel) {
  detail::require(channel >= 0 && channel < f.channels, "channel index out of range");
  const auto taps = detail::bilinear_taps(f, x / f.stride, y / f.stride);
  const double* plane = f.data.data() + static_cast<std::size_t>(channel) * f.plane();
  double v = 0.0;
  for (int k = 0; k < 4; ++k) v += taps.weight[k] * detail::tap_value(plane, taps.offset[k]);
  return v;
}

/// Resamples `f` on an out_w x out_h grid spread over the canonical patch
/// grid and pushed through `t`. The result is patch-local (stride 1).
inline FeatureMap sample_patch(const FeatureMap& f, const AffineTransform& t, int out_w, int out_h,
                               const CanonicalSize& canon) {
  detail::require(out_w >= 1 && out_h >= 1, "patch size must be positive");
  FeatureMap out(f.channels, out_h, out_w, 1);
  const double inv_stride = 1.0 / f.stride;
  for (int v = 0; v < out_h; ++v) {
    for (int u = 0; u < out_w; ++u) {
      const Point2 p = t.apply(detail::canonical_point(u, v, out_w, out_h, canon));
      const auto taps = detail::bilinear_taps(f, p.x * inv_stride, p.y * inv_stride);
      for (int c = 0; c < f.channels; ++c) {
        const double* plane = f.data.data() + static_cast<std::size_t>(c) * f.plane();
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += taps.weight[k] * detail::tap_value(plane, taps.offset[k]);
        out.at(c, v, u) = acc;
      }
    }
  }
  return out;
}

/// Overload whose canonical grid coincides with the output grid.
inline FeatureMap sample_patch(const FeatureMap& f, const AffineTransform& t, int out_w, int out_h) {
  return sample_patch(f, t, out_w, out_h, CanonicalSize{std::max(out_w, 2), std::max(out_h, 2)});
}

struct SamplerGrad {
  std::array<double, StnParams::kCount> params{};  // d/d(sx, sy, tx, ty, theta)
  FeatureMap features;                             // d/dF, same shape as the input map
};

/// Backward pass of sample_patch(f, compose_transform(expanded, params, canon), ...).
inline SamplerGrad sample_patch_grad(const FeatureMap& f, const BoundingBox& expanded,
                                     const StnParams& params, const CanonicalSize& canon,
                                     const FeatureMap& upstream) {
  detail::require(upstream.channels == f.channels && upstream.height >= 1 && upstream.width >= 1,
                  "upstream gradient shape mismatch");
  detail::require(upstream.data.size() == upstream.plane() * upstream.channels,
                  "upstream gradient shape mismatch");
  const int out_w = upstream.width, out_h = upstream.height;
  const AffineTransform t = compose_transform(expanded, params, canon);
  SamplerGrad g;
  g.features = FeatureMap(f.channels, f.height, f.width, f.stride);
  const double inv_stride = 1.0 / f.stride;

  for (int v = 0; v < out_h; ++v) {
    for (int u = 0; u < out_w; ++u) {
      const Point2 q = detail::canonical_point(u, v, out_w, out_h, canon);
      const Point2 p = t.apply(q);
      const auto taps = detail::bilinear_taps(f, p.x * inv_stride, p.y * inv_stride);
      double gx = 0.0, gy = 0.0;  // d(loss)/d(image x, y) at this sample
      for (int c = 0; c < f.channels; ++c) {
        const double up = upstream.at(c, v, u);
        if (up == 0.0) continue;
        const std::size_t base = static_cast<std::size_t>(c) * f.plane();
        const double* plane = f.data.data() + base;
        const double v00 = detail::tap_value(plane, taps.offset[0]);
        const double v01 = detail::tap_value(plane, taps.offset[1]);
        const double v10 = detail::tap_value(plane, taps.offset[2]);
        const double v11 = detail::tap_value(plane, taps.offset[3]);
        gx += up * ((1 - taps.wy) * (v01 - v00) + taps.wy * (v11 - v10));
        gy += up * ((1 - taps.wx) * (v10 - v00) + taps.wx * (v11 - v01));
        for (int k = 0; k < 4; ++k) {
          if (taps.offset[k] >= 0) g.features.data[base + taps.offset[k]] += up * taps.weight[k];
        }
      }
      gx *= inv_stride;
      gy *= inv_stride;
      if (gx == 0.0 && gy == 0.0) continue;
      const auto j = grad_transform(expanded, params, canon, q);
      for (int k = 0; k < StnParams::kCount; ++k) g.params[k] += gx * j[0][k] + gy * j[1][k];
    }
  }
  return g;
}

inline constexpr int kPooledSize = 7;

struct RoiPoolResult {
  FeatureVector values;
  std::vector<std::ptrdiff_t> argmax;  // flat index into the source data, -1 for empty bins
};

/// Max RoI pooling with floor/ceil bin edges. The box is rounded to feature
/// cells after dividing by the stride.
inline RoiPoolResult roi_pool_with_argmax(const FeatureMap& f, const BoundingBox& box,
                                          int pooled = kPooledSize) {
  detail::require(pooled >= 1, "pooled size must be positive");
  const double s = f.stride;
  const int start_w = static_cast<int>(std::round(box.x / s));
  const int start_h = static_cast<int>(std::round(box.y / s));
  const int end_w = static_cast<int>(std::round(box.right() / s));
  const int end_h = static_cast<int>(std::round(box.bottom() / s));
  if (end_w < 0 || end_h < 0 || start_w > f.width - 1 || start_h > f.height - 1) {
    throw InputError("empty RoI");
  }
  const double bin_w = std::max(end_w - start_w + 1, 1) / static_cast<double>(pooled);
  const double bin_h = std::max(end_h - start_h + 1, 1) / static_cast<double>(pooled);

  RoiPoolResult r;
  const std::size_t n = static_cast<std::size_t>(f.channels) * pooled * pooled;
  r.values.assign(n, 0.0);
  r.argmax.assign(n, -1);
  for (int ph = 0; ph < pooled; ++ph) {
    const int hs = std::clamp(static_cast<int>(std::floor(ph * bin_h)) + start_h, 0, f.height);
    const int he = std::clamp(static_cast<int>(std::ceil((ph + 1) * bin_h)) + start_h, 0, f.height);
    for (int pw = 0; pw < pooled; ++pw) {
      const int ws = std::clamp(static_cast<int>(std::floor(pw * bin_w)) + start_w, 0, f.width);
      const int we = std::clamp(static_cast<int>(std::ceil((pw + 1) * bin_w)) + start_w, 0, f.width);
      if (he <= hs || we <= ws) continue;
      for (int c = 0; c < f.channels; ++c) {
        const std::size_t out = (static_cast<std::size_t>(c) * pooled + ph) * pooled + pw;
        double best = -std::numeric_limits<double>::infinity();
        std::ptrdiff_t best_idx = -1;
        for (int y = hs; y < he; ++y) {
          for (int x = ws; x < we; ++x) {
            const std::size_t idx = f.index(c, y, x);
            if (f.data[idx] > best) {
              best = f.data[idx];
              best_idx = static_cast<std::ptrdiff_t>(idx);
            }
          }
        }
        r.values[out] = best;
        r.argmax[out] = best_idx;
      }
    }
  }
  return r;
}

inline FeatureVector roi_pool(const FeatureMap& f, const BoundingBox& box, int pooled = kPooledSize) {
  return roi_pool_with_argmax(f, box, pooled).values;
}

/// Routes pooled gradients back to the winning cells.
inline FeatureMap roi_pool_backward(const FeatureMap& f, const RoiPoolResult& forward,
                                    std::span<const double> upstream) {
  detail::require(upstream.size() == forward.argmax.size(), "upstream gradient shape mismatch");
  FeatureMap g(f.channels, f.height, f.width, f.stride);
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    if (forward.argmax[i] >= 0) g.data[static_cast<std::size_t>(forward.argmax[i])] += upstream[i];
  }
  return g;
}

}  // namespace cen
