// Trains a small fused head on a few synthetic scenes, then detects lesions in
// a held-out scene and prints them next to the planted ground truth.
#include <cstdio>

#include "cen/cen.hpp"

using namespace cen;

int main() {
  RunConfig cfg;
  cfg.seed = 3;

  const FixedStn identity;
  std::vector<TrainingSample> samples;
  for (int i = 0; i < cfg.train_scenes; ++i) {
    const auto sc = generate_scene(cfg, i);
    const auto line = spine_line(sc.spine_mask);
    for (const auto& p : sc.proposals) {
      const auto e = contralateral_features(sc.features, p.box, line, identity);
      samples.push_back({e.f, e.f_hat, detail::label_proposal(p.box, sc.lesions)});
    }
  }

  const HeadConfig head{cfg.num_classes, kPooledSize * kPooledSize * cfg.channels, cfg.hidden,
                        HeadMode::kFullySupervised, true};
  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.learning_rate = cfg.learning_rate;
  const auto trained = train_head(samples, head, opt);
  std::printf("trained on %zu proposals, final loss %.4f\n", samples.size(), trained.loss_history.back());

  const auto scene = generate_scene(cfg, 100);
  const auto line = spine_line(scene.spine_mask);
  std::printf("spine line: %.3f x + %.3f y + %.3f = 0\n", line.a, line.b, line.c);

  const auto dets = run_fully_supervised(scene.features, scene.proposals, line, identity, trained.weights, head);
  std::printf("\nplanted lesions\n");
  for (const auto& g : scene.lesions) {
    std::printf("  class %d  box (%.1f, %.1f, %.1f, %.1f)\n", g.class_id, g.box.x, g.box.y, g.box.w, g.box.h);
  }
  std::printf("\ndetections\n");
  for (const auto& d : dets) {
    double best = 0.0;
    for (const auto& g : scene.lesions) best = std::max(best, iou(d.box, g.box));
    std::printf("  class %d  score %.3f  box (%.1f, %.1f, %.1f, %.1f)  best IoU %.2f\n", d.class_id, d.score,
                d.box.x, d.box.y, d.box.w, d.box.h, best);
  }
  return 0;
}
