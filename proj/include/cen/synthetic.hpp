#pragma once

// Synthetic bilaterally symmetric "chest" scenes.
//
// The background is a smooth function of (|s|, t), the distance from and the
// position along a vertical symmetry axis, so it is mirror-symmetric by
// construction. Normal anatomy is planted as mirrored blob pairs; lesions are
// blobs on one side only. Blob textures are class specific, so a lesion and a
// normal blob of the same class look identical locally and only the
// contralateral side tells them apart.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "cen/error.hpp"
#include "cen/evaluation.hpp"
#include "cen/geometry.hpp"
#include "cen/io.hpp"
#include "cen/pipeline.hpp"
#include "cen/tensor.hpp"

namespace cen {

enum class StnMode { kIdentity, kLinear };

struct RunConfig {
  std::uint64_t seed = 0;
  int train_scenes = 50;
  int test_scenes = 20;
  int lesions_per_scene = 2;
  int normal_pairs = 3;  // mirrored distractor blob pairs per scene
  int background_proposals = 3;
  double noise_sigma = 0.05;
  int num_classes = 4;
  int channels = 8;
  int image_size = 512;
  double max_tilt_deg = 0.0;
  StnMode stn_mode = StnMode::kIdentity;

  int hidden = 512;
  int epochs = 150;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double stn_learning_rate = 1e-4;

  PipelineThresholds thresholds;

  static constexpr int kMaxClasses = 8;
  static constexpr int kMaxChannels = 8;

  void validate() const {
    detail::require(train_scenes >= 1 && test_scenes >= 1, "need at least one train and one test scene");
    detail::require(lesions_per_scene >= 0 && normal_pairs >= 0 && background_proposals >= 0,
                    "object counts must be non-negative");
    detail::require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "noise_sigma must be >= 0");
    detail::require(num_classes >= 1 && num_classes <= kMaxClasses, "num_classes must lie in [1, 8]");
    detail::require(channels >= 1 && channels <= kMaxChannels, "channels must lie in [1, 8]");
    detail::require(image_size >= 192 && image_size % 32 == 0, "image_size must be a multiple of 32, >= 192");
    detail::require(max_tilt_deg >= 0.0 && max_tilt_deg <= 20.0, "max_tilt_deg must lie in [0, 20]");
    detail::require(hidden >= 1 && epochs >= 0 && learning_rate > 0.0 && momentum >= 0.0 && momentum < 1.0 &&
                        stn_learning_rate > 0.0,
                    "invalid training hyperparameters");
    const auto& t = thresholds;
    detail::require(t.max_proposals >= 1 && t.max_detections >= 1 && t.top_k >= 1, "counts must be positive");
    detail::require(t.proposal_nms > 0 && t.proposal_nms <= 1 && t.final_nms > 0 && t.final_nms <= 1,
                    "NMS thresholds must lie in (0, 1]");
    detail::require(t.score_threshold >= 0 && t.score_threshold < 1 && t.weak_threshold >= 0 &&
                        t.weak_threshold < 1,
                    "score thresholds must lie in [0, 1)");
  }

  /// Applies `key = value` overrides. Unknown keys are rejected.
  void apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) set(key, value);
    validate();
  }

  void set(const std::string& key, const std::string& value) {
    const auto num = [&] { return io::parse_number(value, key); };
    const auto integer = [&] {
      const double v = num();
      if (v != std::floor(v) || std::abs(v) > 1e15) throw InputError(key + " must be an integer");
      return static_cast<long long>(v);
    };
    if (key == "seed") {
      const auto v = integer();
      detail::require(v >= 0, "seed must be non-negative");
      seed = static_cast<std::uint64_t>(v);
    } else if (key == "train_scenes") train_scenes = static_cast<int>(integer());
    else if (key == "test_scenes") test_scenes = static_cast<int>(integer());
    else if (key == "lesions_per_scene") lesions_per_scene = static_cast<int>(integer());
    else if (key == "normal_pairs") normal_pairs = static_cast<int>(integer());
    else if (key == "background_proposals") background_proposals = static_cast<int>(integer());
    else if (key == "noise_sigma") noise_sigma = num();
    else if (key == "num_classes") num_classes = static_cast<int>(integer());
    else if (key == "channels") channels = static_cast<int>(integer());
    else if (key == "image_size") image_size = static_cast<int>(integer());
    else if (key == "max_tilt_deg") max_tilt_deg = num();
    else if (key == "stn_mode") {
      if (value == "identity") stn_mode = StnMode::kIdentity;
      else if (value == "linear") stn_mode = StnMode::kLinear;
      else throw InputError("stn_mode must be identity or linear");
    } else if (key == "hidden") hidden = static_cast<int>(integer());
    else if (key == "epochs") epochs = static_cast<int>(integer());
    else if (key == "learning_rate") learning_rate = num();
    else if (key == "momentum") momentum = num();
    else if (key == "stn_learning_rate") stn_learning_rate = num();
    else if (key == "max_proposals") thresholds.max_proposals = static_cast<int>(integer());
    else if (key == "proposal_nms") thresholds.proposal_nms = num();
    else if (key == "final_nms") thresholds.final_nms = num();
    else if (key == "score_threshold") thresholds.score_threshold = num();
    else if (key == "max_detections") thresholds.max_detections = static_cast<int>(integer());
    else if (key == "top_k") thresholds.top_k = static_cast<int>(integer());
    else if (key == "weak_threshold") thresholds.weak_threshold = num();
    else throw InputError("unknown config key: " + key);
  }
};

/// A planted blob. `side` is +1/-1 for lesions and 0 for mirrored pairs.
struct PlantedBlob {
  int class_id = 1;
  double s = 0.0;  // distance from the axis
  double t = 0.0;  // position along the axis
  double radius = 10.0;
  double amplitude = 1.0;
  int side = 0;
};

struct SyntheticScene {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<double> image;  // row-major intensities
  BinaryMask spine_mask;
  FeatureMap features;  // stride 32
  ProbabilityMap probabilities;
  SpineLine axis;
  std::vector<GroundTruth> lesions;
  std::vector<BoundingBox> normal_boxes;  // both members of every mirrored pair
  std::vector<Proposal> proposals;
  std::vector<PlantedBlob> blobs;
};

inline constexpr int kSceneStride = 32;

namespace detail {

/// Class-specific blob texture in the blob's local (mirror-folded) frame.
inline double blob_texture(int class_id, double dx, double dy, double radius) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double r2 = dx * dx + dy * dy;
  const double g = std::exp(-r2 / (2.0 * radius * radius));
  const double sx = std::cos(two_pi * dx / 8.0), sy = std::cos(two_pi * dy / 8.0);
  switch (class_id) {
    case 1: return g;
    case 2: return -g;
    case 3: return g * sx;
    case 4: return g * sy;
    case 5: return 0.5 * g * (1.0 + sx);
    case 6: return -0.5 * g * (1.0 + sy);
    case 7: return g - std::exp(-r2 / (0.5 * radius * radius));
    default: return g * sx * sy;
  }
}

struct AxisFrame {
  double x0;  // axis crosses y = y0 at x = x0
  double y0;
  double cos_t;
  double sin_t;

  /// Signed distance from the axis (positive to the right) and position along it.
  std::pair<double, double> local(double x, double y) const {
    const double px = x - x0, py = y - y0;
    return {cos_t * px - sin_t * py, sin_t * px + cos_t * py};
  }
  Point2 global(double s, double t) const {
    return {x0 + cos_t * s + sin_t * t, y0 - sin_t * s + cos_t * t};
  }
};

struct Background {
  double lung_s, lung_t, lung_ss, lung_st, lung_amp;
  double rib_amp, rib_period, rib_slant, rib_phase;
  double spine_amp, spine_width;
  std::array<double, 3> amp, ws, phs, wt, pht;

  double operator()(double abs_s, double t) const {
    double v = lung_amp * std::exp(-(abs_s - lung_s) * (abs_s - lung_s) / (2 * lung_ss * lung_ss) -
                                   (t - lung_t) * (t - lung_t) / (2 * lung_st * lung_st));
    v += rib_amp * std::cos(2.0 * std::numbers::pi * (t + rib_slant * abs_s) / rib_period + rib_phase);
    v += spine_amp * std::exp(-abs_s * abs_s / (2 * spine_width * spine_width));
    for (int q = 0; q < 3; ++q) v += amp[q] * std::cos(ws[q] * abs_s + phs[q]) * std::cos(wt[q] * t + pht[q]);
    return v;
  }
};

/// Eight per-cell statistics of a padded (W+2) x (H+2) image.
inline FeatureMap cell_features(const std::vector<double>& padded, int width, int height, int channels) {
  const int pw = width + 2;
  const auto px = [&](int x, int y) { return padded[static_cast<std::size_t>(y + 1) * pw + (x + 1)]; };
  const int gw = width / kSceneStride, gh = height / kSceneStride;
  FeatureMap f(channels, gh, gw, kSceneStride);
  constexpr int n = kSceneStride * kSceneStride;
  for (int cy = 0; cy < gh; ++cy) {
    for (int cx = 0; cx < gw; ++cx) {
      double sum = 0, sq = 0, agx = 0, agy = 0, alap = 0, inner = 0;
      double mx = -std::numeric_limits<double>::infinity(), mn = -mx;
      for (int y = cy * kSceneStride; y < (cy + 1) * kSceneStride; ++y) {
        for (int x = cx * kSceneStride; x < (cx + 1) * kSceneStride; ++x) {
          const double v = px(x, y);
          sum += v;
          sq += v * v;
          mx = std::max(mx, v);
          mn = std::min(mn, v);
          agx += std::abs(px(x + 1, y) - px(x - 1, y)) / 2.0;
          agy += std::abs(px(x, y + 1) - px(x, y - 1)) / 2.0;
          alap += std::abs(px(x + 1, y) + px(x - 1, y) + px(x, y + 1) + px(x, y - 1) - 4.0 * v);
          const int lx = x - cx * kSceneStride, ly = y - cy * kSceneStride;
          if (lx >= 8 && lx < 24 && ly >= 8 && ly < 24) inner += v;
        }
      }
      const double mean = sum / n;
      const std::array<double, RunConfig::kMaxChannels> stats{
          mean, std::sqrt(std::max(0.0, sq / n - mean * mean)), agx / n, agy / n, mx, mn, inner / 256.0 - mean,
          alap / n};
      for (int c = 0; c < channels; ++c) f.at(c, cy, cx) = stats[c];
    }
  }
  return f;
}

inline BoundingBox blob_box(Point2 center, double radius) {
  const double side = std::round(4.0 * radius) + 1.0;
  return BoundingBox::from_center(center, side, side);
}

}  // namespace detail

/// Deterministic in (config.seed, index).
inline SyntheticScene generate_scene(const RunConfig& cfg, int index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xFFFFFFFFu), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5CE1Eu};
  std::mt19937_64 rng(seq);
  const auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const auto pick = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };

  SyntheticScene sc;
  sc.image_id = "scene" + std::to_string(index);
  sc.width = sc.height = cfg.image_size;
  const int W = sc.width, H = sc.height;
  const double scale = cfg.image_size / 512.0;

  // Axis on a cell boundary: mirrored cells coincide.
  const int cells = W / kSceneStride;
  const int k = cells / 2 + (cells >= 8 ? pick(-1, 1) : 0);
  const double tilt = cfg.max_tilt_deg > 0 ? uni(-cfg.max_tilt_deg, cfg.max_tilt_deg) * std::numbers::pi / 180.0 : 0.0;
  const detail::AxisFrame frame{kSceneStride * k - 0.5, (H - 1) / 2.0, std::cos(tilt), std::sin(tilt)};
  sc.axis = SpineLine::through({frame.x0, frame.y0}, {frame.sin_t, frame.cos_t});

  detail::Background bg{};
  bg.lung_s = uni(110, 140) * scale;
  bg.lung_t = uni(-20, 20) * scale;
  bg.lung_ss = uni(50, 70) * scale;
  bg.lung_st = uni(120, 160) * scale;
  bg.lung_amp = -uni(0.4, 0.8);
  bg.rib_amp = uni(0.1, 0.3);
  bg.rib_period = uni(35, 50) * scale;
  bg.rib_slant = uni(0.2, 0.5);
  bg.rib_phase = uni(0, 2 * std::numbers::pi);
  bg.spine_amp = uni(0.6, 1.0);
  bg.spine_width = 12.0 * scale;
  for (int q = 0; q < 3; ++q) {
    bg.amp[q] = uni(0.1, 0.3);
    bg.ws[q] = uni(0.005, 0.03) / scale;
    bg.phs[q] = uni(0, 2 * std::numbers::pi);
    bg.wt[q] = uni(0.005, 0.03) / scale;
    bg.pht[q] = uni(0, 2 * std::numbers::pi);
  }

  // Placement in folded coordinates (|s|, t): no object on or next to
  // another's mirror image.
  const double t_half = (H - 1) / 2.0;
  const auto fits = [&](double s, double t, double radius, bool both_sides, int side) {
    const double margin = 2.0 * radius + 2.0;
    for (int sd : {-1, 1}) {
      if (!both_sides && sd != side) continue;
      const Point2 c = frame.global(sd * s, t);
      if (c.x - margin < 0 || c.y - margin < 0 || c.x + margin > W - 1 || c.y + margin > H - 1) return false;
    }
    for (const auto& b : sc.blobs) {
      if (std::hypot(b.s - s, b.t - t) < 2.0 * (b.radius + radius) + 16.0 * scale) return false;
    }
    return true;
  };
  const auto place = [&](int side) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      PlantedBlob b;
      b.class_id = pick(1, cfg.num_classes);
      b.radius = uni(10, 18) * scale;
      b.amplitude = uni(0.8, 1.2);
      b.s = uni(50, 200) * scale;
      b.t = uni(-t_half + 60 * scale, t_half - 60 * scale);
      b.side = side == 0 ? 0 : (pick(0, 1) ? 1 : -1);
      if (fits(b.s, b.t, b.radius, b.side == 0, b.side)) {
        sc.blobs.push_back(b);
        return;
      }
    }
  };
  for (int i = 0; i < cfg.lesions_per_scene; ++i) place(1);
  for (int i = 0; i < cfg.normal_pairs; ++i) place(0);

  // Render with a one-pixel border so gradients are defined at the edges.
  const int pw = W + 2, ph = H + 2;
  std::vector<double> padded(static_cast<std::size_t>(pw) * ph);
  for (int y = -1; y <= H; ++y) {
    for (int x = -1; x <= W; ++x) {
      const auto [s, t] = frame.local(x, y);
      padded[static_cast<std::size_t>(y + 1) * pw + (x + 1)] = bg(std::abs(s), t);
    }
  }
  for (const auto& b : sc.blobs) {
    for (int sd : {-1, 1}) {
      if (b.side != 0 && b.side != sd) continue;
      const Point2 c = frame.global(sd * b.s, b.t);
      const double reach = 4.0 * b.radius + 2.0;
      const int x0 = std::max(-1, static_cast<int>(std::floor(c.x - reach)));
      const int x1 = std::min(W, static_cast<int>(std::ceil(c.x + reach)));
      const int y0 = std::max(-1, static_cast<int>(std::floor(c.y - reach)));
      const int y1 = std::min(H, static_cast<int>(std::ceil(c.y + reach)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const auto [s, t] = frame.local(x, y);
          if (s * sd <= 0.0) continue;
          padded[static_cast<std::size_t>(y + 1) * pw + (x + 1)] +=
              b.amplitude * detail::blob_texture(b.class_id, std::abs(s) - b.s, t - b.t, b.radius);
        }
      }
    }
  }
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (auto& v : padded) v += noise(rng);
  }

  sc.image.resize(static_cast<std::size_t>(W) * H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) sc.image[static_cast<std::size_t>(y) * W + x] = padded[static_cast<std::size_t>(y + 1) * pw + x + 1];
  sc.features = detail::cell_features(padded, W, H, cfg.channels);

  // Spine mask: a band along the axis plus a speck of segmentation noise.
  sc.spine_mask = BinaryMask(W, H);
  const double half_width = 10.0 * scale;
  const double t_top = -t_half + uni(20, 50) * scale, t_bot = t_half - uni(20, 50) * scale;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto [s, t] = frame.local(x, y);
      if (std::abs(s) <= half_width && t >= t_top && t <= t_bot) sc.spine_mask.set(x, y);
    }
  }
  const int speck_x = pick(2, 12), speck_y = pick(2, 12);
  for (int y = speck_y; y < speck_y + 4; ++y)
    for (int x = speck_x; x < speck_x + 4; ++x) sc.spine_mask.set(x, y);

  // Ground truth, distractor boxes and simulated upstream proposals.
  const auto jitter = [&](const BoundingBox& b) {
    const double f = std::exp(uni(-0.15, 0.15));
    const Point2 c = b.center();
    return BoundingBox::from_center({c.x + uni(-0.1, 0.1) * b.w, c.y + uni(-0.1, 0.1) * b.h}, b.w * f, b.h * f);
  };
  std::vector<BoundingBox> objects;
  for (const auto& b : sc.blobs) {
    for (int sd : {-1, 1}) {
      if (b.side != 0 && b.side != sd) continue;
      const BoundingBox box = detail::blob_box(frame.global(sd * b.s, b.t), b.radius);
      objects.push_back(box);
      if (b.side != 0) sc.lesions.push_back({sc.image_id, b.class_id, box});
      else sc.normal_boxes.push_back(box);
      sc.proposals.push_back({jitter(box), uni(0.3, 1.0)});
    }
  }
  for (int i = 0, attempts = 0; i < cfg.background_proposals && attempts < 500; ++attempts) {
    const double side = std::round(uni(40, 72) * scale);
    const BoundingBox box{std::round(uni(0, W - side)), std::round(uni(0, H - side)), side, side};
    if (std::any_of(objects.begin(), objects.end(), [&](const auto& o) { return iou(o, box) > 0.1; })) continue;
    sc.proposals.push_back({box, uni(0.05, 0.5)});
    ++i;
  }

  // Probability map of a symmetry-blind weak detector: it fires on every blob.
  sc.probabilities = ProbabilityMap(cfg.num_classes, H / kSceneStride, W / kSceneStride);
  for (const auto& b : sc.blobs) {
    for (int sd : {-1, 1}) {
      if (b.side != 0 && b.side != sd) continue;
      const Point2 c = frame.global(sd * b.s, b.t);
      const double spread = b.radius + 16.0 * scale;
      for (int gy = 0; gy < sc.probabilities.grid_h; ++gy) {
        for (int gx = 0; gx < sc.probabilities.grid_w; ++gx) {
          const double d = std::hypot(kSceneStride * gx + 15.5 - c.x, kSceneStride * gy + 15.5 - c.y);
          double& p = sc.probabilities.at(b.class_id - 1, gy, gx);
          p = std::max(p, 0.9 * std::exp(-d * d / (2 * spread * spread)));
        }
      }
    }
  }
  return sc;
}

/// 8-bit rendering of the scene intensities for inspection.
inline io::GrayImage render_image(const SyntheticScene& sc) {
  io::GrayImage img{sc.width, sc.height, {}};
  img.data.reserve(sc.image.size());
  for (double v : sc.image) img.data.push_back(static_cast<std::uint8_t>(std::clamp((v + 2.0) / 4.0, 0.0, 1.0) * 255.0 + 0.5));
  return img;
}

}  // namespace cen
