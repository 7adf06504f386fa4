#pragma once

// Additive-subtractive fusion and the two-layer prediction head.
//
// merged = [f + f_hat ; f - f_hat]
// hidden = relu(W1 * merged + b1)
// raw    = W2 * hidden + b2
//
// Fully supervised heads emit m class logits followed by four blocks of m box
// offsets (dx, dy, dw, dh); weakly supervised heads emit the m logits only.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cen/error.hpp"
#include "cen/geometry.hpp"
#include "cen/tensor.hpp"

namespace cen {

inline FeatureVector fuse(std::span<const double> f, std::span<const double> f_hat) {
  detail::require(f.size() == f_hat.size(), "fuse: feature length mismatch");
  const std::size_t n = f.size();
  FeatureVector out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f[i] + f_hat[i];
    out[n + i] = f[i] - f_hat[i];
  }
  return out;
}

/// Recovers (f, f_hat) from a fused vector.
inline std::pair<FeatureVector, FeatureVector> unfuse(std::span<const double> merged) {
  detail::require(merged.size() % 2 == 0, "unfuse: odd length");
  const std::size_t n = merged.size() / 2;
  FeatureVector f(n), f_hat(n);
  for (std::size_t i = 0; i < n; ++i) {
    f[i] = (merged[i] + merged[n + i]) / 2.0;
    f_hat[i] = (merged[i] - merged[n + i]) / 2.0;
  }
  return {std::move(f), std::move(f_hat)};
}

enum class HeadMode { kFullySupervised, kWeaklySupervised };

struct HeadConfig {
  int num_classes = 1;
  int feature_len = 49;
  int hidden = 512;
  HeadMode mode = HeadMode::kFullySupervised;
  bool fused = true;  // false: the head sees proposal features only

  int input_len() const { return fused ? 2 * feature_len : feature_len; }
  int output_len() const { return mode == HeadMode::kFullySupervised ? 5 * num_classes : num_classes; }

  void validate() const {
    detail::require(num_classes >= 1, "head needs at least one class");
    detail::require(feature_len >= 1 && hidden >= 1, "head dimensions must be positive");
  }
};

struct HeadWeights {
  Eigen::MatrixXd w1;  // hidden x input_len
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // output_len x hidden
  Eigen::VectorXd b2;

  bool matches(const HeadConfig& c) const {
    return w1.rows() == c.hidden && w1.cols() == c.input_len() && b1.size() == c.hidden &&
           w2.rows() == c.output_len() && w2.cols() == c.hidden && b2.size() == c.output_len();
  }

  void validate(const HeadConfig& c) const {
    detail::require(matches(c), "head weights do not match the head configuration");
    detail::require(w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(),
                    "head weights must be finite");
  }
};

inline HeadWeights zero_head(const HeadConfig& c) {
  c.validate();
  return {Eigen::MatrixXd::Zero(c.hidden, c.input_len()), Eigen::VectorXd::Zero(c.hidden),
          Eigen::MatrixXd::Zero(c.output_len(), c.hidden), Eigen::VectorXd::Zero(c.output_len())};
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, biases included.
inline HeadWeights init_head(const HeadConfig& c, std::uint64_t seed) {
  HeadWeights w = zero_head(c);
  std::mt19937_64 rng(seed);
  const auto fill = [&](auto& m, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  fill(w.w1, c.input_len());
  fill(w.b1, c.input_len());
  fill(w.w2, c.hidden);
  fill(w.b2, c.hidden);
  return w;
}

struct HeadOutput {
  std::vector<double> probs;
  std::vector<double> dx, dy, dw, dh;  // empty for weakly supervised heads
};

namespace detail {

inline void check_input(std::span<const double> merged, const HeadWeights& w, const HeadConfig& c) {
  c.validate();
  require(w.matches(c), "head weights do not match the head configuration");
  require(merged.size() == static_cast<std::size_t>(c.input_len()), "head input length mismatch");
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double mx = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - mx).exp();
  return e / e.sum();
}

struct ForwardCache {
  Eigen::VectorXd pre;     // W1 x + b1
  Eigen::VectorXd hidden;  // relu(pre)
  Eigen::VectorXd raw;     // W2 hidden + b2
  Eigen::VectorXd probs;
};

inline ForwardCache forward(std::span<const double> merged, const HeadWeights& w, const HeadConfig& c) {
  const Eigen::Map<const Eigen::VectorXd> x(merged.data(), static_cast<Eigen::Index>(merged.size()));
  ForwardCache fc;
  fc.pre = w.w1 * x + w.b1;
  fc.hidden = fc.pre.cwiseMax(0.0);
  fc.raw = w.w2 * fc.hidden + w.b2;
  fc.probs = softmax(fc.raw.head(c.num_classes));
  return fc;
}

}  // namespace detail

inline HeadOutput head_forward(std::span<const double> merged, const HeadWeights& w, const HeadConfig& c) {
  detail::check_input(merged, w, c);
  const auto fc = detail::forward(merged, w, c);
  HeadOutput out;
  const int m = c.num_classes;
  out.probs.assign(fc.probs.data(), fc.probs.data() + m);
  if (c.mode == HeadMode::kFullySupervised) {
    const auto block = [&](int k) {
      return std::vector<double>(fc.raw.data() + (k + 1) * m, fc.raw.data() + (k + 2) * m);
    };
    out.dx = block(0);
    out.dy = block(1);
    out.dw = block(2);
    out.dh = block(3);
  }
  return out;
}

struct HeadGrad {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
  Eigen::VectorXd input;
};

namespace detail {

inline HeadGrad backprop_raw(std::span<const double> merged, const HeadWeights& w, const ForwardCache& fc,
                             const Eigen::VectorXd& draw) {
  const Eigen::Map<const Eigen::VectorXd> x(merged.data(), static_cast<Eigen::Index>(merged.size()));
  HeadGrad g;
  g.w2 = draw * fc.hidden.transpose();
  g.b2 = draw;
  const Eigen::VectorXd dpre =
      ((w.w2.transpose() * draw).array() * (fc.pre.array() > 0.0).cast<double>()).matrix();
  g.w1 = dpre * x.transpose();
  g.b1 = dpre;
  g.input = w.w1.transpose() * dpre;
  return g;
}

}  // namespace detail

/// Reverse-mode gradients given d(loss)/d(head outputs). `upstream` uses the
/// HeadOutput layout; missing offset blocks count as zero.
inline HeadGrad head_backward(std::span<const double> merged, const HeadWeights& w, const HeadConfig& c,
                              const HeadOutput& upstream) {
  detail::check_input(merged, w, c);
  const int m = c.num_classes;
  detail::require(upstream.probs.size() == static_cast<std::size_t>(m), "upstream gradient shape mismatch");
  const auto fc = detail::forward(merged, w, c);

  Eigen::VectorXd draw = Eigen::VectorXd::Zero(c.output_len());
  const Eigen::Map<const Eigen::VectorXd> gp(upstream.probs.data(), m);
  draw.head(m) = fc.probs.cwiseProduct((gp.array() - fc.probs.dot(gp)).matrix());
  if (c.mode == HeadMode::kFullySupervised) {
    const std::array<const std::vector<double>*, 4> blocks{&upstream.dx, &upstream.dy, &upstream.dw, &upstream.dh};
    for (int k = 0; k < 4; ++k) {
      if (blocks[k]->empty()) continue;
      detail::require(blocks[k]->size() == static_cast<std::size_t>(m), "upstream gradient shape mismatch");
      for (int j = 0; j < m; ++j) draw((k + 1) * m + j) = (*blocks[k])[j];
    }
  }
  return detail::backprop_raw(merged, w, fc, draw);
}

/// Supervision for one proposal. label is 1..m, or 0 for "no disease", which
/// trains towards the uniform class distribution. Offsets are regression
/// targets (dx, dy, dw, dh) for the labelled class.
struct HeadTarget {
  int label = 0;
  std::optional<std::array<double, 4>> offsets;
};

inline double smooth_l1(double d) { return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; }
inline double smooth_l1_grad(double d) { return std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0); }

inline std::array<double, 4> box_offsets(const BoundingBox& from, const BoundingBox& to) {
  return {(to.x - from.x) / from.w, (to.y - from.y) / from.h, std::log(to.w / from.w), std::log(to.h / from.h)};
}

namespace detail {

inline Eigen::VectorXd target_distribution(int label, int m) {
  require(label >= 0 && label <= m, "class label out of range");
  if (label == 0) return Eigen::VectorXd::Constant(m, 1.0 / m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  y(label - 1) = 1.0;
  return y;
}

}  // namespace detail

/// Cross-entropy (+ smooth-L1 on offsets) loss and its gradients, using the
/// softmax/cross-entropy shortcut p - y for the class logits.
inline std::pair<double, HeadGrad> head_loss_backward(std::span<const double> merged, const HeadWeights& w,
                                                      const HeadConfig& c, const HeadTarget& target,
                                                      double offset_weight = 1.0) {
  detail::check_input(merged, w, c);
  const int m = c.num_classes;
  const auto fc = detail::forward(merged, w, c);
  const Eigen::VectorXd y = detail::target_distribution(target.label, m);

  double loss = -(y.array() * fc.probs.array().max(1e-300).log()).sum();
  Eigen::VectorXd draw = Eigen::VectorXd::Zero(c.output_len());
  draw.head(m) = fc.probs - y;
  if (c.mode == HeadMode::kFullySupervised && target.offsets && target.label > 0) {
    for (int k = 0; k < 4; ++k) {
      const int idx = (k + 1) * m + target.label - 1;
      const double d = fc.raw(idx) - (*target.offsets)[k];
      loss += offset_weight * smooth_l1(d);
      draw(idx) = offset_weight * smooth_l1_grad(d);
    }
  }
  return {loss, detail::backprop_raw(merged, w, fc, draw)};
}

struct RefinedBox {
  BoundingBox box;
  int class_id = 1;  // 1-based
  double score = 0.0;
};

inline int argmax_class(const std::vector<double>& probs) {
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

/// Applies the offsets of the most probable class:
/// x' = w*dx + x, y' = h*dy + y, w' = w*exp(dw), h' = h*exp(dh).
inline RefinedBox apply_offsets(const BoundingBox& box, const HeadOutput& out) {
  detail::require(!out.probs.empty() && out.dx.size() == out.probs.size() && out.dy.size() == out.probs.size() &&
                      out.dw.size() == out.probs.size() && out.dh.size() == out.probs.size(),
                  "apply_offsets needs a fully supervised head output");
  const int j = argmax_class(out.probs);
  RefinedBox r;
  r.box = {box.w * out.dx[j] + box.x, box.h * out.dy[j] + box.y, box.w * std::exp(out.dw[j]),
           box.h * std::exp(out.dh[j])};
  r.class_id = j + 1;
  r.score = out.probs[j];
  return r;
}

struct TrainingSample {
  FeatureVector f;
  FeatureVector f_hat;  // ignored by proposal-only heads
  HeadTarget target;
};

struct TrainOptions {
  int epochs = 200;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double offset_weight = 1.0;
  std::uint64_t seed = 0;
  bool zero_init = false;
};

struct TrainResult {
  HeadWeights weights;
  std::vector<double> loss_history;  // loss before each epoch's update
};

/// Head input for one sample: fused features or the proposal features alone.
inline FeatureVector head_input(const HeadConfig& c, std::span<const double> f, std::span<const double> f_hat) {
  if (c.fused) return fuse(f, f_hat);
  return FeatureVector(f.begin(), f.end());
}

/// Mean loss over a batch and, optionally, its gradients w.r.t. the weights
/// and the inputs. Rows of `x` are head inputs.
inline double batch_loss(const Eigen::MatrixXd& x, const std::vector<HeadTarget>& targets, const HeadWeights& w,
                         const HeadConfig& c, double offset_weight, HeadGrad* grad,
                         Eigen::MatrixXd* dinput = nullptr) {
  const Eigen::Index n = x.rows();
  const int m = c.num_classes;
  Eigen::MatrixXd pre = x * w.w1.transpose();
  pre.rowwise() += w.b1.transpose();
  const Eigen::MatrixXd hidden = pre.cwiseMax(0.0);
  Eigen::MatrixXd raw = hidden * w.w2.transpose();
  raw.rowwise() += w.b2.transpose();

  Eigen::MatrixXd draw = Eigen::MatrixXd::Zero(n, c.output_len());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd p = detail::softmax(raw.row(i).head(m).transpose());
    const Eigen::VectorXd y = detail::target_distribution(targets[i].label, m);
    loss -= (y.array() * p.array().max(1e-300).log()).sum();
    draw.row(i).head(m) = (p - y).transpose();
    const auto& t = targets[i];
    if (c.mode == HeadMode::kFullySupervised && t.offsets && t.label > 0) {
      for (int k = 0; k < 4; ++k) {
        const int idx = (k + 1) * m + t.label - 1;
        const double d = raw(i, idx) - (*t.offsets)[k];
        loss += offset_weight * smooth_l1(d);
        draw(i, idx) = offset_weight * smooth_l1_grad(d);
      }
    }
  }
  loss /= static_cast<double>(n);
  if (grad == nullptr && dinput == nullptr) return loss;
  draw /= static_cast<double>(n);
  const Eigen::MatrixXd dpre = ((draw * w.w2).array() * (pre.array() > 0.0).cast<double>()).matrix();
  if (grad != nullptr) {
    grad->w2 = draw.transpose() * hidden;
    grad->b2 = draw.colwise().sum().transpose();
    grad->w1 = dpre.transpose() * x;
    grad->b1 = dpre.colwise().sum().transpose();
  }
  if (dinput != nullptr) *dinput = dpre * w.w1;
  return loss;
}

/// Full-batch gradient descent with heavy-ball momentum.
inline TrainResult train_head(const std::vector<TrainingSample>& data, const HeadConfig& c,
                              const TrainOptions& opt) {
  c.validate();
  detail::require(!data.empty(), "training set is empty");
  detail::require(opt.learning_rate > 0.0, "learning rate must be positive");
  detail::require(opt.epochs >= 0, "epoch count must be non-negative");

  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), c.input_len());
  std::vector<HeadTarget> targets;
  targets.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::require(data[i].f.size() == static_cast<std::size_t>(c.feature_len), "training feature length mismatch");
    const FeatureVector in = head_input(c, data[i].f, c.fused ? std::span<const double>(data[i].f_hat)
                                                               : std::span<const double>(data[i].f));
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(in.data(), c.input_len());
    detail::target_distribution(data[i].target.label, c.num_classes);
    targets.push_back(data[i].target);
  }

  TrainResult r{opt.zero_init ? zero_head(c) : init_head(c, opt.seed), {}};
  HeadWeights& w = r.weights;
  HeadWeights vel = zero_head(c);
  HeadGrad g;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const double loss = batch_loss(x, targets, w, c, opt.offset_weight, &g);
    if (!std::isfinite(loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
    r.loss_history.push_back(loss);
    vel.w1 = opt.momentum * vel.w1 - opt.learning_rate * g.w1;
    vel.b1 = opt.momentum * vel.b1 - opt.learning_rate * g.b1;
    vel.w2 = opt.momentum * vel.w2 - opt.learning_rate * g.w2;
    vel.b2 = opt.momentum * vel.b2 - opt.learning_rate * g.b2;
    w.w1 += vel.w1;
    w.b1 += vel.b1;
    w.w2 += vel.w2;
    w.b2 += vel.b2;
  }
  return r;
}

}  // namespace cen
