#pragma once

// Detection and segmentation metrics: AP (center-inside and IoU matching),
// weak localization accuracy, the detection confusion matrix, the two-class
// FCN segmentation scores and the Wilcoxon signed-rank test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cen/error.hpp"
#include "cen/geometry.hpp"
#include "cen/pipeline.hpp"

namespace cen {

struct GroundTruth {
  std::string image_id;
  int class_id = 1;
  BoundingBox box;
};

struct ImageDetection {
  std::string image_id;
  Detection det;
};

struct MatchRule {
  enum class Kind { kCenterInside, kIouAbove };
  Kind kind = Kind::kIouAbove;
  double t = 0.5;

  static MatchRule center_inside() { return {Kind::kCenterInside, 0.0}; }
  static MatchRule iou_above(double t) {
    detail::require(t > 0.0 && t <= 1.0, "IoU threshold must lie in (0, 1]");
    return {Kind::kIouAbove, t};
  }

  bool accepts(const BoundingBox& pred, const BoundingBox& gt) const {
    if (kind == Kind::kCenterInside) {
      const Point2 c = pred.center();
      return c.x >= gt.x && c.x <= gt.right() && c.y >= gt.y && c.y <= gt.bottom();
    }
    return iou(pred, gt) > t;
  }
};

struct ApResult {
  std::map<int, double> per_class;  // classes with at least one ground truth
  double mean = 0.0;
};

/// All-point interpolated AP from a ranked list of TP flags.
inline double all_point_ap(const std::vector<bool>& tp, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> precision(n), recall(n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    hits += tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(hits) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Per-class AP: detections in descending score order each claim the
/// unmatched same-class ground truth with the highest IoU among those the rule
/// accepts. Each ground truth is matched at most once.
inline ApResult average_precision(std::span<const ImageDetection> dets, std::span<const GroundTruth> gts,
                                  const MatchRule& rule) {
  if (gts.empty()) throw InputError("empty evaluation set");
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> gt_index;
  std::map<int, std::size_t> gt_count;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    gt_index[{gts[i].image_id, gts[i].class_id}].push_back(i);
    ++gt_count[gts[i].class_id];
  }

  ApResult r;
  for (const auto& [cls, count] : gt_count) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].det.class_id == cls) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return dets[a].det.score > dets[b].det.score; });
    std::vector<bool> matched(gts.size(), false), tp;
    tp.reserve(order.size());
    for (auto di : order) {
      const auto& d = dets[di];
      const auto it = gt_index.find({d.image_id, cls});
      std::ptrdiff_t best = -1;
      double best_iou = -1.0;
      if (it != gt_index.end()) {
        for (auto gi : it->second) {
          if (matched[gi] || !rule.accepts(d.det.box, gts[gi].box)) continue;
          const double o = iou(d.det.box, gts[gi].box);
          if (o > best_iou) {
            best_iou = o;
            best = static_cast<std::ptrdiff_t>(gi);
          }
        }
      }
      if (best >= 0) matched[static_cast<std::size_t>(best)] = true;
      tp.push_back(best >= 0);
    }
    r.per_class[cls] = all_point_ap(tp, count);
  }
  double sum = 0.0;
  for (const auto& [cls, ap] : r.per_class) sum += ap;
  r.mean = sum / static_cast<double>(r.per_class.size());
  return r;
}

struct LocalizationTable {
  std::vector<double> thresholds;
  std::map<int, std::vector<double>> per_class;  // one accuracy per threshold
  std::vector<double> mean;                      // mean over classes, per threshold
};

/// Fraction of images containing class c whose class-c predictions overlap a
/// class-c ground truth at IoU > T.
inline LocalizationTable localization_accuracy(std::span<const ImageDetection> dets, std::span<const GroundTruth> gts,
                                               std::vector<double> thresholds = {0.1, 0.3, 0.5, 0.7}) {
  LocalizationTable table;
  table.thresholds = thresholds;
  std::map<int, std::set<std::string>> images;
  for (const auto& g : gts) images[g.class_id].insert(g.image_id);

  for (const auto& [cls, ids] : images) {
    std::vector<double> acc;
    for (double t : thresholds) {
      std::size_t hits = 0;
      for (const auto& id : ids) {
        bool hit = false;
        for (const auto& d : dets) {
          if (hit) break;
          if (d.image_id != id || d.det.class_id != cls) continue;
          for (const auto& g : gts) {
            if (g.image_id == id && g.class_id == cls && iou(d.det.box, g.box) > t) {
              hit = true;
              break;
            }
          }
        }
        hits += hit ? 1 : 0;
      }
      acc.push_back(static_cast<double>(hits) / static_cast<double>(ids.size()));
    }
    table.per_class[cls] = std::move(acc);
  }
  table.mean.assign(thresholds.size(), 0.0);
  for (std::size_t k = 0; k < thresholds.size() && !table.per_class.empty(); ++k) {
    for (const auto& [cls, acc] : table.per_class) table.mean[k] += acc[k];
    table.mean[k] /= static_cast<double>(table.per_class.size());
  }
  return table;
}

/// (m+1) x (m+1) counts; row = ground-truth class, column = predicted class,
/// index 0 = background.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int m = 0)
      : num_classes(m), counts(static_cast<std::size_t>(m + 1) * (m + 1), 0) {}

  std::int64_t& at(int row, int col) { return counts[static_cast<std::size_t>(row) * (num_classes + 1) + col]; }
  std::int64_t at(int row, int col) const {
    return counts[static_cast<std::size_t>(row) * (num_classes + 1) + col];
  }
  std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
};

/// Detections, highest score first, each hit the unmatched ground truth in the
/// same image with IoU > iou_t, preferring the same class and then the larger
/// IoU.
inline ConfusionMatrix confusion_matrix(std::span<const ImageDetection> dets, std::span<const GroundTruth> gts,
                                        int num_classes, double iou_t = 0.5) {
  detail::require(num_classes >= 1, "confusion matrix needs at least one class");
  const auto check = [&](int c) { detail::require(c >= 1 && c <= num_classes, "class id out of range"); };
  for (const auto& g : gts) check(g.class_id);
  for (const auto& d : dets) check(d.det.class_id);

  ConfusionMatrix cm(num_classes);
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].det.score > dets[b].det.score; });
  std::vector<bool> matched(gts.size(), false);
  for (auto di : order) {
    const auto& d = dets[di];
    std::ptrdiff_t best = -1;
    bool best_same = false;
    double best_iou = -1.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (matched[gi] || gts[gi].image_id != d.image_id) continue;
      const double o = iou(d.det.box, gts[gi].box);
      if (!(o > iou_t)) continue;
      const bool same = gts[gi].class_id == d.det.class_id;
      if (best < 0 || (same && !best_same) || (same == best_same && o > best_iou)) {
        best = static_cast<std::ptrdiff_t>(gi);
        best_same = same;
        best_iou = o;
      }
    }
    if (best >= 0) {
      matched[static_cast<std::size_t>(best)] = true;
      ++cm.at(gts[static_cast<std::size_t>(best)].class_id, d.det.class_id);
    } else {
      ++cm.at(0, d.det.class_id);
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    if (!matched[gi]) ++cm.at(gts[gi].class_id, 0);
  }
  return cm;
}

struct SegmentationScores {
  double dice = 0.0;
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
  double mean_iu = 0.0;
  double fw_iu = 0.0;
};

/// Dice plus the FCN pixel accuracy, mean accuracy, mean IU and frequency
/// weighted IU over the foreground/background problem. Classes absent from
/// the ground truth are left out of the class means.
inline SegmentationScores segmentation_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  detail::require(pred.width == gt.width && pred.height == gt.height && pred.data.size() == gt.data.size(),
                  "mask size mismatch");
  // n[i][j]: pixels of true class i predicted as j (0 = background, 1 = foreground)
  double n[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t k = 0; k < gt.data.size(); ++k) n[gt.data[k] ? 1 : 0][pred.data[k] ? 1 : 0] += 1.0;

  SegmentationScores s;
  const double p_fg = n[0][1] + n[1][1], g_fg = n[1][0] + n[1][1];
  s.dice = (p_fg + g_fg) > 0 ? 2.0 * n[1][1] / (p_fg + g_fg) : 1.0;
  const double total = n[0][0] + n[0][1] + n[1][0] + n[1][1];
  if (total == 0) return s;
  s.pixel_acc = (n[0][0] + n[1][1]) / total;
  int present = 0;
  for (int i = 0; i < 2; ++i) {
    const double t_i = n[i][0] + n[i][1];
    if (t_i == 0) continue;
    ++present;
    const double union_i = t_i + n[0][i] + n[1][i] - n[i][i];
    const double iu = n[i][i] / union_i;
    s.mean_acc += n[i][i] / t_i;
    s.mean_iu += iu;
    s.fw_iu += t_i * iu;
  }
  s.mean_acc /= present;
  s.mean_iu /= present;
  s.fw_iu /= total;
  return s;
}

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  int n = 0;  // non-zero differences
  double p_value = 1.0;
  bool exact = false;
};

inline constexpr int kWilcoxonExactMax = 12;

/// Midranks (1-based) of |d|, ties sharing the average rank.
inline std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Two-sided signed-rank test on paired samples. Zero differences are
/// dropped. Up to 12 pairs the null distribution is counted exactly over all
/// sign assignments; beyond that a tie- and continuity-corrected normal
/// approximation is used.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs) {
  std::vector<double> diff;
  for (const auto& [a, b] : pairs) {
    const double d = b - a;
    detail::require(std::isfinite(d), "non-finite paired values");
    if (d != 0.0) diff.push_back(d);
  }
  if (diff.size() < 5) throw InputError("insufficient data");

  std::vector<double> mag(diff.size());
  std::transform(diff.begin(), diff.end(), mag.begin(), [](double d) { return std::abs(d); });
  const std::vector<double> ranks = midranks(mag);

  WilcoxonResult r;
  r.n = static_cast<int>(diff.size());
  for (std::size_t i = 0; i < diff.size(); ++i) (diff[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
  r.statistic = std::min(r.w_plus, r.w_minus);

  if (r.n <= kWilcoxonExactMax) {
    // Distribution of the positive-rank sum over doubled (integral) midranks.
    std::vector<std::int64_t> twice(ranks.size());
    std::int64_t total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      twice[i] = std::llround(2.0 * ranks[i]);
      total += twice[i];
    }
    std::vector<std::int64_t> ways(static_cast<std::size_t>(total) + 1, 0);
    ways[0] = 1;
    for (auto rk : twice) {
      for (std::int64_t s = total; s >= rk; --s) ways[s] += ways[s - rk];
    }
    const std::int64_t observed = std::llround(2.0 * r.statistic);
    std::int64_t extreme = 0;
    for (std::int64_t s = 0; s <= total; ++s) {
      if (std::min(s, total - s) <= observed) extreme += ways[s];
    }
    r.p_value = static_cast<double>(extreme) / std::ldexp(1.0, r.n);
    r.exact = true;
    return r;
  }

  const double n = r.n;
  double tie_term = 0.0;
  std::map<double, int> groups;
  for (double rk : ranks) ++groups[rk];
  for (const auto& [rk, t] : groups) tie_term += static_cast<double>(t) * t * t - t;
  const double mean = n * (n + 1) / 4.0;
  const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.statistic - mean) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

}  // namespace cen
