#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cen/cen.hpp"

using namespace cen;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.train_scenes = 6;
  c.test_scenes = 4;
  c.hidden = 32;
  c.epochs = 30;
  return c;
}

int axis_column(const SyntheticScene& sc) {
  // axis x = 32k - 0.5
  return static_cast<int>(std::lround((-sc.axis.c / sc.axis.a + 0.5) / kSceneStride));
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Synthetic, SameSeedAndIndexIsBitIdentical) {
  RunConfig c;
  c.seed = 7;
  const auto a = generate_scene(c, 3), b = generate_scene(c, 3);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.features.data, b.features.data);
  EXPECT_EQ(a.probabilities.values, b.probabilities.values);
  ASSERT_EQ(a.proposals.size(), b.proposals.size());
  for (std::size_t i = 0; i < a.proposals.size(); ++i) {
    EXPECT_EQ(a.proposals[i].box.x, b.proposals[i].box.x);
    EXPECT_EQ(a.proposals[i].score, b.proposals[i].score);
  }
  const auto other = generate_scene(c, 4);
  EXPECT_NE(a.image, other.image);
}

TEST(Synthetic, ShapesFollowConfig) {
  RunConfig c;
  c.image_size = 256;
  c.channels = 5;
  c.num_classes = 3;
  const auto sc = generate_scene(c, 0);
  EXPECT_EQ(sc.image.size(), 256u * 256u);
  EXPECT_EQ(sc.features.channels, 5);
  EXPECT_EQ(sc.features.height, 8);
  EXPECT_EQ(sc.features.width, 8);
  EXPECT_EQ(sc.probabilities.classes, 3);
  EXPECT_EQ(sc.probabilities.grid_h, 8);
  for (const auto& g : sc.lesions) {
    EXPECT_GE(g.class_id, 1);
    EXPECT_LE(g.class_id, 3);
  }
}

TEST(Synthetic, NoiseFreeSceneWithoutLesionsIsMirrorSymmetric) {
  RunConfig c;
  c.noise_sigma = 0.0;
  c.lesions_per_scene = 0;
  for (int idx = 0; idx < 5; ++idx) {
    const auto sc = generate_scene(c, idx);
    const int k = axis_column(sc);
    const auto& f = sc.features;
    double worst = 0.0;
    for (int ch = 0; ch < f.channels; ++ch)
      for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
          const int mx = 2 * k - 1 - x;
          if (mx < 0 || mx >= f.width) continue;
          worst = std::max(worst, std::abs(f.at(ch, y, x) - f.at(ch, y, mx)));
        }
    EXPECT_LT(worst, 1e-6) << "scene " << idx;
  }
}

TEST(Synthetic, LesionCellIsAsymmetric) {
  RunConfig c;
  int checked = 0;
  for (int idx = 0; idx < 10; ++idx) {
    const auto sc = generate_scene(c, idx);
    const int k = axis_column(sc);
    const auto& f = sc.features;
    for (const auto& g : sc.lesions) {
      const Point2 ctr = g.box.center();
      const int x = static_cast<int>(ctr.x) / kSceneStride, y = static_cast<int>(ctr.y) / kSceneStride;
      const int mx = 2 * k - 1 - x;
      ASSERT_TRUE(mx >= 0 && mx < f.width);
      double diff = 0.0;
      for (int ch = 0; ch < f.channels; ++ch) diff = std::max(diff, std::abs(f.at(ch, y, x) - f.at(ch, y, mx)));
      EXPECT_GT(diff, 5.0 * c.noise_sigma);
      ++checked;
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Synthetic, SpineMaskRecoversAxis) {
  RunConfig c;
  for (int idx = 0; idx < 5; ++idx) {
    const auto sc = generate_scene(c, idx);
    const auto line = spine_line(sc.spine_mask);
    EXPECT_NEAR(line.a, sc.axis.a, 1e-6);
    EXPECT_NEAR(line.b, sc.axis.b, 1e-6);
    EXPECT_NEAR(line.c, sc.axis.c, 1e-6);
  }
}

TEST(Synthetic, ProposalsCoverEveryPlantedObject) {
  const auto sc = generate_scene(RunConfig{}, 2);
  EXPECT_EQ(sc.lesions.size(), 2u);
  EXPECT_EQ(sc.normal_boxes.size(), 6u);
  for (const auto& g : sc.lesions) {
    double best = 0.0;
    for (const auto& p : sc.proposals) best = std::max(best, iou(p.box, g.box));
    EXPECT_GT(best, 0.4);
  }
}

TEST(Synthetic, NormalBoxesComeInMirroredPairs) {
  const auto sc = generate_scene(RunConfig{}, 1);
  ASSERT_EQ(sc.normal_boxes.size() % 2, 0u);
  for (std::size_t i = 0; i < sc.normal_boxes.size(); i += 2) {
    const auto r = reflect_box(sc.normal_boxes[i], sc.axis);
    EXPECT_NEAR(r.x, sc.normal_boxes[i + 1].x, 1e-6);
    EXPECT_NEAR(r.y, sc.normal_boxes[i + 1].y, 1e-6);
  }
}

TEST(RunConfig, SetAndApply) {
  RunConfig c;
  c.apply({{"seed", "12"}, {"noise_sigma", "0.3"}, {"stn_mode", "linear"}, {"final_nms", "0.4"}});
  EXPECT_EQ(c.seed, 12u);
  EXPECT_DOUBLE_EQ(c.noise_sigma, 0.3);
  EXPECT_EQ(c.stn_mode, StnMode::kLinear);
  EXPECT_DOUBLE_EQ(c.thresholds.final_nms, 0.4);
}

TEST(RunConfig, RejectsBadInput) {
  RunConfig c;
  EXPECT_THROW(c.set("colour", "1"), InputError);
  EXPECT_THROW(c.set("epochs", "2.5"), InputError);
  EXPECT_THROW(c.set("seed", "-1"), InputError);
  EXPECT_THROW(c.set("stn_mode", "affine"), InputError);
  EXPECT_THROW(c.set("noise_sigma", "abc"), InputError);
  EXPECT_THROW(c.apply({{"num_classes", "9"}}), InputError);
  RunConfig d;
  EXPECT_THROW(d.apply({{"image_size", "200"}}), InputError);
}

TEST(Experiment, SmallRunReportsAllColumns) {
  const auto rep = run_experiment(small_config());
  EXPECT_FALSE(rep.ground_truth.empty());
  EXPECT_EQ(rep.baseline.loss_history.size(), 30u);
  EXPECT_EQ(rep.fused.loss_history.size(), 30u);
  for (const HeadRun* run : {&rep.baseline, &rep.fused}) {
    for (const ApResult* ap : {&run->ap.ap_center, &run->ap.ap50, &run->ap.ap75}) {
      EXPECT_GE(ap->mean, 0.0);
      EXPECT_LE(ap->mean, 1.0);
    }
    EXPECT_GE(run->ap.ap_center.mean + 1e-12, run->ap.ap50.mean);
    EXPECT_GE(run->ap.ap50.mean + 1e-12, run->ap.ap75.mean);
    EXPECT_LE(run->detections.size(), 20u * 4u);
  }
  const auto text = format_report(rep);
  EXPECT_NE(text.find("AP-center"), std::string::npos);
  EXPECT_NE(text.find("AP50"), std::string::npos);
  EXPECT_NE(text.find("AP75"), std::string::npos);
  const auto rows = experiment_metrics(rep);
  int all_rows = 0;
  for (const auto& r : rows) all_rows += r.cls == "all";
  EXPECT_EQ(all_rows, 6);
}

TEST(Experiment, LinearStnRunCompletes) {
  auto c = small_config();
  c.stn_mode = StnMode::kLinear;
  c.epochs = 5;
  const auto rep = run_experiment(c);
  EXPECT_EQ(rep.fused.loss_history.size(), 5u);
  for (double l : rep.fused.loss_history) EXPECT_TRUE(std::isfinite(l));
}

TEST(Experiment, FusedHeadFindsPlantedLesions) {
  RunConfig c;
  c.train_scenes = 25;
  c.test_scenes = 10;
  c.hidden = 128;
  const auto rep = run_experiment(c);
  EXPECT_GT(rep.fused.ap.ap50.mean, 0.4);
  EXPECT_GT(rep.fused.ap.ap50.mean, rep.baseline.ap.ap50.mean);
}

TEST(Experiment, NoiseErasesTheFusionAdvantage) {
  RunConfig c;
  c.train_scenes = 25;
  c.test_scenes = 10;
  c.hidden = 128;
  c.noise_sigma = 0.05;
  const auto clean = run_experiment(c);
  c.noise_sigma = 3.0;
  const auto noisy = run_experiment(c);
  const double gap_clean = clean.fused.ap.ap50.mean - clean.baseline.ap.ap50.mean;
  const double gap_noisy = noisy.fused.ap.ap50.mean - noisy.baseline.ap.ap50.mean;
  EXPECT_GT(gap_clean, 0.1);
  EXPECT_LT(gap_noisy, gap_clean);
  EXPECT_LT(std::abs(gap_noisy), 0.15);
}

TEST(Experiment, DivergenceIsReported) {
  auto c = small_config();
  c.learning_rate = 1e300;
  c.epochs = 20;
  try {
    run_experiment(c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Experiment, WrittenArtifactsAreDeterministic) {
  const auto dir = std::filesystem::temp_directory_path() / "cen_synthetic_test";
  std::filesystem::remove_all(dir);
  const auto c = small_config();
  write_experiment(run_experiment(c), dir / "a");
  write_experiment(run_experiment(c), dir / "b");
  for (const char* name :
       {"summary.csv", "detections_baseline.csv", "detections_cen.csv", "ground_truth.csv", "train_loss.csv"}) {
    const auto a = read_file(dir / "a" / name);
    EXPECT_FALSE(a.empty()) << name;
    EXPECT_EQ(a, read_file(dir / "b" / name)) << name;
  }
  const auto loss = read_file(dir / "a" / "train_loss.csv");
  EXPECT_EQ(loss.substr(0, loss.find('\n')), "head,epoch,loss");
  std::filesystem::remove_all(dir);
}
