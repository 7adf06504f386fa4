#pragma once

// Sources of STN parameters. The convolutional regressor is replaced by either
// injected parameters or a linear map over the two stacked 64x64 patches
// (padded proposal, expanded contralateral patch).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <span>

#include "cen/error.hpp"
#include "cen/geometry.hpp"
#include "cen/tensor.hpp"
#include "cen/transform.hpp"

namespace cen {

class StnPredictor {
 public:
  virtual ~StnPredictor() = default;
  /// False when predict() ignores its input, letting callers skip building it.
  virtual bool uses_input() const { return true; }
  /// `input` is the 2 x h0 x w0 stack produced by make_stn_input.
  virtual StnParams predict(const FeatureMap& input) const = 0;
};

/// Always returns the same parameters; identity by default.
class FixedStn final : public StnPredictor {
 public:
  FixedStn() = default;
  explicit FixedStn(const StnParams& p) : params_(p) { params_.validate(); }

  bool uses_input() const override { return false; }
  StnParams predict(const FeatureMap&) const override { return params_; }

 private:
  StnParams params_;
};

/// raw = W * vec(input) + b, then scales pass through exp(). Zero weights give
/// the identity refinement.
class LinearStn final : public StnPredictor {
 public:
  explicit LinearStn(const CanonicalSize& canon = {})
      : canon_(canon),
        weights_(Eigen::MatrixXd::Zero(StnParams::kCount, 2 * canon.w0 * canon.h0)),
        bias_(Eigen::VectorXd::Zero(StnParams::kCount)) {
    canon.validate();
  }

  const CanonicalSize& canonical_size() const { return canon_; }
  Eigen::MatrixXd& weights() { return weights_; }
  const Eigen::MatrixXd& weights() const { return weights_; }
  Eigen::VectorXd& bias() { return bias_; }
  const Eigen::VectorXd& bias() const { return bias_; }

  std::array<double, StnParams::kCount> raw(const FeatureMap& input) const {
    detail::require(input.data.size() == static_cast<std::size_t>(weights_.cols()),
                    "STN input must be 2 x h0 x w0");
    const Eigen::Map<const Eigen::VectorXd> x(input.data.data(), weights_.cols());
    const Eigen::VectorXd r = weights_ * x + bias_;
    return {r(0), r(1), r(2), r(3), r(4)};
  }

  StnParams predict(const FeatureMap& input) const override { return StnParams::from_raw(raw(input)); }

  /// Gradients of the loss w.r.t. W and b given d(loss)/d(params).
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> backward(const FeatureMap& input,
                                                       const std::array<double, StnParams::kCount>& dparams) const {
    const StnParams p = predict(input);
    Eigen::VectorXd draw(StnParams::kCount);
    draw << dparams[0] * p.sx, dparams[1] * p.sy, dparams[2], dparams[3], dparams[4];
    const Eigen::Map<const Eigen::VectorXd> x(input.data.data(), weights_.cols());
    return {draw * x.transpose(), draw};
  }

 private:
  CanonicalSize canon_;
  Eigen::MatrixXd weights_;
  Eigen::VectorXd bias_;
};

namespace detail {

inline void channel_mean_into(const FeatureMap& patch, FeatureMap& dst, int dst_channel) {
  const double inv = patch.channels > 0 ? 1.0 / patch.channels : 0.0;
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) {
      double s = 0.0;
      for (int c = 0; c < patch.channels; ++c) s += patch.at(c, y, x);
      dst.at(dst_channel, y, x) = s * inv;
    }
  }
}

}  // namespace detail

/// Regressor input: the proposal padded to the expanded-patch size and the
/// expanded contralateral patch, each resampled to w0 x h0 and averaged over
/// feature channels.
inline FeatureMap make_stn_input(const FeatureMap& f, const BoundingBox& proposal, const BoundingBox& expanded_contra,
                                 const CanonicalSize& canon = {}) {
  FeatureMap input(2, canon.h0, canon.w0, 1);
  const auto id = StnParams::identity();
  detail::channel_mean_into(
      sample_patch(f, compose_transform(expand_patch(proposal), id, canon), canon.w0, canon.h0, canon), input, 0);
  detail::channel_mean_into(
      sample_patch(f, compose_transform(expanded_contra, id, canon), canon.w0, canon.h0, canon), input, 1);
  return input;
}

}  // namespace cen
