#pragma once

// End-to-end contralateral enhancement for fully and weakly supervised
// detection, plus the IoU / NMS post-processing it relies on.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "cen/error.hpp"
#include "cen/fusion.hpp"
#include "cen/geometry.hpp"
#include "cen/stn.hpp"
#include "cen/tensor.hpp"
#include "cen/transform.hpp"

namespace cen {

struct Detection {
  BoundingBox box;
  int class_id = 1;  // 1..m; 0 marks class-agnostic proposals
  double score = 0.0;
};

struct Proposal {
  BoundingBox box;
  double score = 1.0;
};

/// Per-cell class probabilities on the stride-32 grid, laid out m x H x W.
struct ProbabilityMap {
  int classes = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> values;

  static constexpr int kCellSize = 32;

  ProbabilityMap() = default;
  ProbabilityMap(int m, int h, int w)
      : classes(m), grid_h(h), grid_w(w), values(static_cast<std::size_t>(m) * h * w, 0.0) {}

  double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * grid_h + y) * grid_w + x]; }
  double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * grid_h + y) * grid_w + x]; }

  void validate() const {
    detail::require(classes >= 1 && grid_h >= 0 && grid_w >= 0, "invalid probability map dimensions");
    detail::require(values.size() == static_cast<std::size_t>(classes) * grid_h * grid_w,
                    "probability map data length mismatch");
    for (double v : values) detail::require(v >= 0.0 && v <= 1.0, "probabilities must lie in [0, 1]");
  }
};

/// Intersection over union with inclusive pixel spans.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x) + 1.0;
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y) + 1.0;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Greedy NMS in descending score order (stable on ties). With per_class set,
/// only boxes of the same class suppress each other.
inline std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold, bool per_class = true) {
  detail::require(iou_threshold > 0.0 && iou_threshold <= 1.0, "NMS threshold must lie in (0, 1]");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return dets[i].score > dets[j].score; });
  std::vector<Detection> kept;
  for (auto i : order) {
    const auto& d = dets[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return (!per_class || k.class_id == d.class_id) && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct PipelineThresholds {
  int max_proposals = 100;
  double proposal_nms = 0.7;
  double final_nms = 0.5;
  double score_threshold = 0.05;
  int max_detections = 20;
  int top_k = 10;
  double weak_threshold = 0.5;
};

/// Everything computed for one proposal on its way into the head.
struct EnhancedFeatures {
  BoundingBox contralateral;  // mirrored proposal
  BoundingBox expanded;       // mirrored proposal grown by a quarter per side
  StnParams params;
  FeatureVector f;
  FeatureVector f_hat;
};

/// Pools the proposal and, for fused heads, its refined contralateral patch.
inline EnhancedFeatures contralateral_features(const FeatureMap& f, const BoundingBox& proposal,
                                               const SpineLine& line, const StnPredictor& stn, bool with_contra = true,
                                               const CanonicalSize& canon = {}) {
  EnhancedFeatures e;
  e.f = roi_pool(f, proposal);
  if (!with_contra) return e;
  e.contralateral = reflect_box(proposal, line);
  e.expanded = expand_patch(e.contralateral);
  e.params = stn.uses_input() ? stn.predict(make_stn_input(f, proposal, e.expanded, canon)) : stn.predict(FeatureMap{});
  const FeatureMap patch =
      sample_patch(f, compose_transform(e.expanded, e.params, canon), canon.w0, canon.h0, canon);
  e.f_hat = roi_pool(patch, BoundingBox{0.0, 0.0, static_cast<double>(canon.w0), static_cast<double>(canon.h0)});
  return e;
}

inline HeadOutput enhance(const FeatureMap& f, const BoundingBox& proposal, const SpineLine& line,
                          const StnPredictor& stn, const HeadWeights& weights, const HeadConfig& config,
                          const CanonicalSize& canon = {}) {
  const auto e = contralateral_features(f, proposal, line, stn, config.fused, canon);
  return head_forward(head_input(config, e.f, config.fused ? std::span<const double>(e.f_hat)
                                                           : std::span<const double>(e.f)),
                      weights, config);
}

/// Fully supervised inference: top proposals, class-agnostic proposal NMS,
/// per-proposal enhancement and box refinement, per-class final NMS, score
/// filtering and the detection cap.
inline std::vector<Detection> run_fully_supervised(const FeatureMap& f, std::span<const Proposal> proposals,
                                                   const SpineLine& line, const StnPredictor& stn,
                                                   const HeadWeights& weights, const HeadConfig& config,
                                                   const PipelineThresholds& th = {},
                                                   const CanonicalSize& canon = {}) {
  detail::require(config.mode == HeadMode::kFullySupervised, "fully supervised inference needs a box head");
  if (proposals.empty()) return {};

  std::vector<Detection> cands;
  cands.reserve(proposals.size());
  for (const auto& p : proposals) cands.push_back({p.box, 0, p.score});
  std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  if (cands.size() > static_cast<std::size_t>(th.max_proposals)) cands.resize(th.max_proposals);
  cands = nms(cands, th.proposal_nms, /*per_class=*/false);

  std::vector<Detection> refined;
  refined.reserve(cands.size());
  for (const auto& c : cands) {
    const auto out = enhance(f, c.box, line, stn, weights, config, canon);
    const auto r = apply_offsets(c.box, out);
    refined.push_back({r.box, r.class_id, r.score});
  }

  std::vector<Detection> finals = nms(refined, th.final_nms, /*per_class=*/true);
  std::erase_if(finals, [&](const Detection& d) { return !(d.score > th.score_threshold); });
  if (finals.size() > static_cast<std::size_t>(th.max_detections)) finals.resize(th.max_detections);
  return finals;
}

inline BoundingBox cell_box(int x, int y) {
  constexpr double s = ProbabilityMap::kCellSize;
  return {s * x, s * y, s, s};
}

/// The k highest (class, y, x) entries, ties in lexicographic order.
inline std::vector<Detection> extract_weak_proposals(const ProbabilityMap& p, int k = 10) {
  detail::require(k >= 1, "k must be at least 1");
  std::vector<std::size_t> order(p.values.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](auto i, auto j) { return p.values[i] > p.values[j] || (p.values[i] == p.values[j] && i < j); });
  std::vector<Detection> out;
  out.reserve(take);
  const std::size_t plane = static_cast<std::size_t>(p.grid_h) * p.grid_w;
  for (std::size_t n = 0; n < take; ++n) {
    const std::size_t idx = order[n];
    const int c = static_cast<int>(idx / plane);
    const int y = static_cast<int>((idx % plane) / p.grid_w);
    const int x = static_cast<int>(idx % p.grid_w);
    out.push_back({cell_box(x, y), c + 1, p.values[idx]});
  }
  return out;
}

/// Weakly supervised inference: every cell whose probability exceeds the
/// threshold for some class becomes a 32x32 proposal, re-scored by the head.
/// Results are ordered by score (stable in raster order).
inline std::vector<Detection> run_weakly_supervised(const FeatureMap& f, const ProbabilityMap& p,
                                                    const SpineLine& line, const StnPredictor& stn,
                                                    const HeadWeights& weights, const HeadConfig& config,
                                                    double threshold = 0.5, const CanonicalSize& canon = {}) {
  detail::require(config.mode == HeadMode::kWeaklySupervised, "weakly supervised inference needs a class-only head");
  detail::require(f.stride == ProbabilityMap::kCellSize && f.height == p.grid_h && f.width == p.grid_w,
                  "feature map and probability map grids differ");
  std::vector<Detection> out;
  for (int y = 0; y < p.grid_h; ++y) {
    for (int x = 0; x < p.grid_w; ++x) {
      bool hit = false;
      for (int c = 0; c < p.classes && !hit; ++c) hit = p.at(c, y, x) > threshold;
      if (!hit) continue;
      const BoundingBox box = cell_box(x, y);
      const auto head = enhance(f, box, line, stn, weights, config, canon);
      const int j = argmax_class(head.probs);
      out.push_back({box, j + 1, head.probs[j]});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

}  // namespace cen
