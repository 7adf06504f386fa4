#pragma once

// Proposal-only vs. contralaterally fused head on synthetic scenes.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cen/error.hpp"
#include "cen/evaluation.hpp"
#include "cen/fusion.hpp"
#include "cen/io.hpp"
#include "cen/pipeline.hpp"
#include "cen/stn.hpp"
#include "cen/synthetic.hpp"

namespace cen {

struct ApSummary {
  ApResult ap_center;
  ApResult ap50;
  ApResult ap75;
};

struct HeadRun {
  std::string name;
  HeadConfig config;
  HeadWeights weights;
  std::vector<double> loss_history;
  std::vector<ImageDetection> detections;
  ApSummary ap;
};

struct ExperimentReport {
  RunConfig config;
  HeadRun baseline;  // proposal features only
  HeadRun fused;     // additive-subtractive fusion with the contralateral patch
  std::vector<GroundTruth> ground_truth;
};

namespace detail {

struct PreparedSample {
  FeatureVector f;
  FeatureVector f_hat;
  BoundingBox proposal;
  BoundingBox expanded;  // expanded contralateral patch
  const FeatureMap* features = nullptr;
  HeadTarget target;
};

inline HeadTarget label_proposal(const BoundingBox& proposal, const std::vector<GroundTruth>& lesions) {
  HeadTarget t;
  double best = 0.0;
  for (const auto& g : lesions) {
    const double o = iou(proposal, g.box);
    if (o >= 0.5 && o > best) {
      best = o;
      t.label = g.class_id;
      t.offsets = box_offsets(proposal, g.box);
    }
  }
  return t;
}

inline ApSummary summarize(const std::vector<ImageDetection>& dets, const std::vector<GroundTruth>& gts) {
  return {average_precision(dets, gts, MatchRule::center_inside()),
          average_precision(dets, gts, MatchRule::iou_above(0.5)),
          average_precision(dets, gts, MatchRule::iou_above(0.75))};
}

/// Joint training of a fused head and a linear STN: head gradients flow back
/// through RoI pooling and the sampler into the STN parameters.
inline TrainResult train_joint(std::vector<PreparedSample>& samples, const HeadConfig& hc, const TrainOptions& opt,
                               LinearStn& stn, double stn_lr) {
  const CanonicalSize canon = stn.canonical_size();
  const BoundingBox patch_box{0.0, 0.0, static_cast<double>(canon.w0), static_cast<double>(canon.h0)};
  const int L = hc.feature_len;
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());

  std::vector<FeatureMap> stn_inputs;
  stn_inputs.reserve(samples.size());
  std::vector<HeadTarget> targets;
  for (const auto& s : samples) {
    stn_inputs.push_back(make_stn_input(*s.features, s.proposal, s.expanded, canon));
    targets.push_back(s.target);
  }

  TrainResult r{init_head(hc, opt.seed), {}};
  HeadWeights vel = zero_head(hc);
  Eigen::MatrixXd stn_vel_w = Eigen::MatrixXd::Zero(stn.weights().rows(), stn.weights().cols());
  Eigen::VectorXd stn_vel_b = Eigen::VectorXd::Zero(stn.bias().size());
  Eigen::MatrixXd x(n, hc.input_len());
  std::vector<StnParams> params(samples.size());
  std::vector<FeatureMap> patches(samples.size());
  std::vector<RoiPoolResult> pooled(samples.size());

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      params[i] = stn.predict(stn_inputs[i]);
      patches[i] = sample_patch(*s.features, compose_transform(s.expanded, params[i], canon), canon.w0, canon.h0, canon);
      pooled[i] = roi_pool_with_argmax(patches[i], patch_box);
      const FeatureVector in = fuse(s.f, pooled[i].values);
      x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(in.data(), hc.input_len());
    }
    HeadGrad g;
    Eigen::MatrixXd dx;
    const double loss = batch_loss(x, targets, r.weights, hc, opt.offset_weight, &g, &dx);
    if (!std::isfinite(loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
    r.loss_history.push_back(loss);

    Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(stn.weights().rows(), stn.weights().cols());
    Eigen::VectorXd gb = Eigen::VectorXd::Zero(stn.bias().size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      std::vector<double> dfhat(static_cast<std::size_t>(L));
      for (int j = 0; j < L; ++j) dfhat[j] = dx(i, j) - dx(i, L + j);
      const FeatureMap dpatch = roi_pool_backward(patches[i], pooled[i], dfhat);
      const SamplerGrad sg = sample_patch_grad(*s.features, s.expanded, params[i], canon, dpatch);
      const auto [dw, db] = stn.backward(stn_inputs[i], sg.params);
      gw += dw;
      gb += db;
    }

    vel.w1 = opt.momentum * vel.w1 - opt.learning_rate * g.w1;
    vel.b1 = opt.momentum * vel.b1 - opt.learning_rate * g.b1;
    vel.w2 = opt.momentum * vel.w2 - opt.learning_rate * g.w2;
    vel.b2 = opt.momentum * vel.b2 - opt.learning_rate * g.b2;
    r.weights.w1 += vel.w1;
    r.weights.b1 += vel.b1;
    r.weights.w2 += vel.w2;
    r.weights.b2 += vel.b2;
    stn_vel_w = opt.momentum * stn_vel_w - stn_lr * gw;
    stn_vel_b = opt.momentum * stn_vel_b - stn_lr * gb;
    stn.weights() += stn_vel_w;
    stn.bias() += stn_vel_b;
  }
  return r;
}

}  // namespace detail

inline ExperimentReport run_experiment(const RunConfig& cfg) {
  cfg.validate();
  ExperimentReport rep;
  rep.config = cfg;
  const CanonicalSize canon{};

  std::vector<SyntheticScene> train, test;
  for (int i = 0; i < cfg.train_scenes; ++i) train.push_back(generate_scene(cfg, i));
  for (int i = 0; i < cfg.test_scenes; ++i) test.push_back(generate_scene(cfg, cfg.train_scenes + i));

  const FixedStn identity;
  std::vector<detail::PreparedSample> prepared;
  for (const auto& sc : train) {
    const SpineLine line = spine_line(sc.spine_mask);
    for (const auto& p : sc.proposals) {
      const auto e = contralateral_features(sc.features, p.box, line, identity, true, canon);
      prepared.push_back({e.f, e.f_hat, p.box, e.expanded, &sc.features, detail::label_proposal(p.box, sc.lesions)});
    }
  }
  detail::require(!prepared.empty(), "no training proposals were generated");

  const int feature_len = kPooledSize * kPooledSize * cfg.channels;
  const auto make_config = [&](bool fused) {
    return HeadConfig{cfg.num_classes, feature_len, cfg.hidden, HeadMode::kFullySupervised, fused};
  };
  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.learning_rate = cfg.learning_rate;
  opt.momentum = cfg.momentum;
  opt.seed = cfg.seed;

  std::vector<TrainingSample> samples;
  samples.reserve(prepared.size());
  for (const auto& s : prepared) samples.push_back({s.f, s.f_hat, s.target});

  rep.baseline.name = "baseline";
  rep.baseline.config = make_config(false);
  auto base = train_head(samples, rep.baseline.config, opt);
  rep.baseline.weights = std::move(base.weights);
  rep.baseline.loss_history = std::move(base.loss_history);

  rep.fused.name = "cen";
  rep.fused.config = make_config(true);
  std::unique_ptr<StnPredictor> stn;
  if (cfg.stn_mode == StnMode::kLinear) {
    auto linear = std::make_unique<LinearStn>(canon);
    auto joint = detail::train_joint(prepared, rep.fused.config, opt, *linear, cfg.stn_learning_rate);
    rep.fused.weights = std::move(joint.weights);
    rep.fused.loss_history = std::move(joint.loss_history);
    stn = std::move(linear);
  } else {
    auto fused = train_head(samples, rep.fused.config, opt);
    rep.fused.weights = std::move(fused.weights);
    rep.fused.loss_history = std::move(fused.loss_history);
    stn = std::make_unique<FixedStn>();
  }

  for (const auto& sc : test) {
    rep.ground_truth.insert(rep.ground_truth.end(), sc.lesions.begin(), sc.lesions.end());
    const SpineLine line = spine_line(sc.spine_mask);
    for (HeadRun* run : {&rep.baseline, &rep.fused}) {
      const auto dets =
          run_fully_supervised(sc.features, sc.proposals, line, *stn, run->weights, run->config, cfg.thresholds, canon);
      for (const auto& d : dets) run->detections.push_back({sc.image_id, d});
    }
  }
  if (rep.ground_truth.empty()) throw InputError("empty evaluation set");
  rep.baseline.ap = detail::summarize(rep.baseline.detections, rep.ground_truth);
  rep.fused.ap = detail::summarize(rep.fused.detections, rep.ground_truth);
  return rep;
}

inline std::vector<io::MetricRow> experiment_metrics(const ExperimentReport& rep) {
  std::vector<io::MetricRow> rows;
  for (const HeadRun* run : {&rep.baseline, &rep.fused}) {
    const std::array<std::pair<const char*, const ApResult*>, 3> metrics{
        {{"ap_center", &run->ap.ap_center}, {"ap50", &run->ap.ap50}, {"ap75", &run->ap.ap75}}};
    for (const auto& [name, ap] : metrics) {
      const std::string metric = std::string(name) + "." + run->name;
      const std::string thr = std::string(name) == "ap50" ? "0.5" : std::string(name) == "ap75" ? "0.75" : "";
      for (const auto& [cls, v] : ap->per_class) rows.push_back({metric, std::to_string(cls), thr, v});
      rows.push_back({metric, "all", thr, ap->mean});
    }
  }
  return rows;
}

inline std::string format_report(const ExperimentReport& rep) {
  std::ostringstream os;
  char line[128];
  os << "head       AP-center   AP50      AP75\n";
  for (const HeadRun* run : {&rep.baseline, &rep.fused}) {
    std::snprintf(line, sizeof line, "%-10s %-11.4f %-9.4f %.4f\n", run->name.c_str(), run->ap.ap_center.mean,
                  run->ap.ap50.mean, run->ap.ap75.mean);
    os << line;
  }
  return os.str();
}

/// Writes summary.csv, detections_<head>.csv, ground_truth.csv and
/// train_loss.csv under `dir`.
inline void write_experiment(const ExperimentReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    io::write_metrics_csv(out, experiment_metrics(rep));
  }
  const auto to_records = [](const std::vector<ImageDetection>& dets) {
    std::vector<io::BoxRecord> rows;
    for (const auto& d : dets) rows.push_back({d.image_id, d.det.class_id, d.det.box, d.det.score});
    return rows;
  };
  for (const HeadRun* run : {&rep.baseline, &rep.fused}) {
    io::save_boxes_csv((dir / ("detections_" + run->name + ".csv")).string(), to_records(run->detections));
  }
  std::vector<io::BoxRecord> gts;
  for (const auto& g : rep.ground_truth) gts.push_back({g.image_id, g.class_id, g.box, std::nullopt});
  io::save_boxes_csv((dir / "ground_truth.csv").string(), gts);
  std::ofstream loss(dir / "train_loss.csv", std::ios::binary);
  loss << "head,epoch,loss\n";
  for (const HeadRun* run : {&rep.baseline, &rep.fused}) {
    for (std::size_t e = 0; e < run->loss_history.size(); ++e) {
      loss << run->name << ',' << e << ',' << io::format_number(run->loss_history[e]) << '\n';
    }
  }
}

}  // namespace cen
