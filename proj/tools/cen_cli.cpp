// Command-line front end: one subcommand per pipeline stage, CSV on stdout.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cen/cen.hpp"

namespace fs = std::filesystem;
using namespace cen;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;

  RunConfig config() const {
    RunConfig c;
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw InputError("cannot open " + config_path);
      kv = io::parse_key_values(in);
    }
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos || eq == 0) throw InputError("--set expects key=value, got '" + o + "'");
      kv[o.substr(0, eq)] = o.substr(eq + 1);
    }
    if (seed) kv["seed"] = std::to_string(*seed);
    c.apply(kv);
    return c;
  }

  fs::path out(const std::string& name) const {
    fs::create_directories(out_dir);
    return fs::path(out_dir) / name;
  }
};

// Inputs shared by several subcommands.
struct MapArgs {
  std::string features;
  int stride = 32;
  std::string line;
  std::string mask;

  FeatureMap load_features() const { return io::to_feature_map(io::load_ctf(features), stride); }
  SpineLine spine() const {
    if (!line.empty() && !mask.empty()) throw InputError("give either --line or --mask, not both");
    if (!line.empty()) return io::parse_line(line);
    if (!mask.empty()) return spine_line(io::load_mask(mask));
    throw InputError("a spine line is required: pass --line a,b,c or --mask spine.pgm");
  }
};

void add_map_options(CLI::App* cmd, MapArgs& m, bool needs_line) {
  cmd->add_option("--features", m.features, "feature map (CTF1, dims C,H,W)")->required();
  cmd->add_option("--stride", m.stride, "image pixels per feature cell")->capture_default_str();
  if (needs_line) {
    cmd->add_option("--line", m.line, "spine line a,b,c");
    cmd->add_option("--mask", m.mask, "spine mask (binary PGM)");
  }
}

FeatureVector load_vector(const std::string& arg) {
  if (fs::exists(arg)) return io::to_vector(io::load_ctf(arg));
  FeatureVector v;
  for (const auto& part : io::split(arg, ',')) v.push_back(io::parse_number(part, "vector element"));
  return v;
}

std::vector<Detection> to_detections(const std::vector<io::BoxRecord>& rows) {
  std::vector<Detection> out;
  for (const auto& r : rows) {
    if (!r.score) throw InputError("every box needs a score");
    out.push_back({r.box, r.class_id, *r.score});
  }
  return out;
}

std::vector<ImageDetection> to_image_detections(const std::vector<io::BoxRecord>& rows) {
  std::vector<ImageDetection> out;
  for (const auto& r : rows) {
    if (!r.score) throw InputError("every prediction needs a score");
    out.push_back({r.image_id, {r.box, r.class_id, *r.score}});
  }
  return out;
}

std::vector<GroundTruth> to_ground_truth(const std::vector<io::BoxRecord>& rows) {
  std::vector<GroundTruth> out;
  for (const auto& r : rows) out.push_back({r.image_id, r.class_id, r.box});
  return out;
}

void print_detections(const std::string& image_id, const std::vector<Detection>& dets) {
  std::vector<io::BoxRecord> rows;
  for (const auto& d : dets) rows.push_back({image_id, d.class_id, d.box, d.score});
  io::write_boxes_csv(std::cout, rows);
}

void print_map(const FeatureMap& m) {
  std::cout << "channel,row,col,value\n";
  for (int c = 0; c < m.channels; ++c)
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x)
        std::cout << c << ',' << y << ',' << x << ',' << io::format_number(m.at(c, y, x)) << '\n';
}

// Recovers the head layout from the archive shapes.
HeadConfig head_config_for(const HeadWeights& w, int channels, HeadMode mode) {
  HeadConfig hc;
  hc.mode = mode;
  hc.feature_len = kPooledSize * kPooledSize * channels;
  hc.hidden = static_cast<int>(w.w1.rows());
  if (w.w1.cols() == 2 * hc.feature_len) hc.fused = true;
  else if (w.w1.cols() == hc.feature_len) hc.fused = false;
  else throw InputError("head input width does not match the feature map channels");
  const int per_class = mode == HeadMode::kFullySupervised ? 5 : 1;
  if (w.w2.rows() % per_class != 0) throw InputError("head output width does not fit the head mode");
  hc.num_classes = static_cast<int>(w.w2.rows()) / per_class;
  w.validate(hc);
  return hc;
}

std::unique_ptr<StnPredictor> make_stn(const std::string& params) {
  if (params.empty()) return std::make_unique<FixedStn>();
  return std::make_unique<FixedStn>(io::parse_stn_params(params));
}

void write_scene(const SyntheticScene& sc, const Globals& g) {
  const std::string p = sc.image_id + "_";
  io::save_pgm(g.out(p + "image.pgm").string(), render_image(sc));
  io::save_pgm(g.out(p + "spine.pgm").string(), io::to_image(sc.spine_mask));
  io::save_ctf(g.out(p + "features.ctf").string(), io::to_tensor(sc.features));
  io::save_ctf(g.out(p + "probs.ctf").string(), io::to_tensor(sc.probabilities));
  std::vector<io::BoxRecord> props, lesions;
  for (const auto& q : sc.proposals) props.push_back({sc.image_id, 0, q.box, q.score});
  for (const auto& l : sc.lesions) lesions.push_back({l.image_id, l.class_id, l.box, std::nullopt});
  io::save_boxes_csv(g.out(p + "proposals.csv").string(), props);
  io::save_boxes_csv(g.out(p + "lesions.csv").string(), lesions);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contralaterally enhanced detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "key = value configuration file");
  app.add_option("--seed", g.seed, "seed override");
  app.add_option("--out", g.out_dir, "output directory for file artifacts");
  app.add_option("--set", g.overrides, "config override key=value (repeatable)");

  std::function<void()> action;

  // spine-line
  std::string mask_path;
  auto* spine = app.add_subcommand("spine-line", "fit the spine line to a binary mask");
  spine->add_option("mask", mask_path, "spine mask (binary PGM)")->required();
  spine->callback([&] {
    action = [&] {
      const auto l = spine_line(io::load_mask(mask_path));
      std::cout << "a,b,c\n"
                << io::format_number(l.a) << ',' << io::format_number(l.b) << ',' << io::format_number(l.c) << '\n';
    };
  });

  // reflect
  std::string line_arg, box_arg;
  auto* reflect = app.add_subcommand("reflect", "mirror a box across a spine line");
  reflect->add_option("--line", line_arg, "a,b,c")->required();
  reflect->add_option("--box", box_arg, "x,y,w,h")->required();
  reflect->callback([&] {
    action = [&] {
      const auto r = reflect_box(io::parse_box(box_arg), io::parse_line(line_arg));
      std::cout << "x,y,w,h\n"
                << io::format_number(r.x) << ',' << io::format_number(r.y) << ',' << io::format_number(r.w) << ','
                << io::format_number(r.h) << '\n';
    };
  });

  // stn-apply
  MapArgs stn_map;
  std::string stn_box, stn_params;
  int canon_size = 64;
  bool from_proposal = false;
  auto* stn_apply = app.add_subcommand("stn-apply", "resample a patch through the STN transform");
  add_map_options(stn_apply, stn_map, true);
  stn_apply->add_option("--box", stn_box, "patch x,y,w,h in image pixels")->required();
  stn_apply->add_option("--params", stn_params, "\"sx sy tx ty theta\" (identity by default)");
  stn_apply->add_option("--size", canon_size, "canonical patch side")->capture_default_str();
  stn_apply->add_flag("--from-proposal", from_proposal, "treat --box as a proposal: reflect and expand it first");
  stn_apply->callback([&] {
    action = [&] {
      const auto f = stn_map.load_features();
      BoundingBox patch = io::parse_box(stn_box);
      if (from_proposal) patch = expand_patch(reflect_box(patch, stn_map.spine()));
      const CanonicalSize canon{canon_size, canon_size};
      canon.validate();
      const auto params = stn_params.empty() ? StnParams::identity() : io::parse_stn_params(stn_params);
      const auto out = sample_patch(f, compose_transform(patch, params, canon), canon.w0, canon.h0, canon);
      if (!g.out_dir.empty()) io::save_ctf(g.out("patch.ctf").string(), io::to_tensor(out));
      print_map(out);
    };
  });

  // roi-pool
  MapArgs pool_map;
  std::string pool_box;
  int pooled = kPooledSize;
  auto* roi = app.add_subcommand("roi-pool", "max-pool a box to a fixed grid");
  add_map_options(roi, pool_map, false);
  roi->add_option("--box", pool_box, "x,y,w,h in image pixels")->required();
  roi->add_option("--pooled", pooled, "output grid side")->capture_default_str();
  roi->callback([&] {
    action = [&] {
      const auto f = pool_map.load_features();
      const auto v = roi_pool(f, io::parse_box(pool_box), pooled);
      FeatureMap m(f.channels, pooled, pooled);
      m.data = v;
      if (!g.out_dir.empty()) io::save_ctf(g.out("pooled.ctf").string(), io::to_tensor(m));
      print_map(m);
    };
  });

  // fuse
  std::string fuse_f, fuse_fhat;
  auto* fuse_cmd = app.add_subcommand("fuse", "additive-subtractive fusion of two feature vectors");
  fuse_cmd->add_option("--f", fuse_f, "proposal features (CTF1 vector or comma list)")->required();
  fuse_cmd->add_option("--fhat", fuse_fhat, "contralateral features (CTF1 vector or comma list)")->required();
  fuse_cmd->callback([&] {
    action = [&] {
      const auto merged = fuse(load_vector(fuse_f), load_vector(fuse_fhat));
      if (!g.out_dir.empty()) io::save_ctf(g.out("fused.ctf").string(), io::to_tensor(merged));
      std::cout << "index,value\n";
      for (std::size_t i = 0; i < merged.size(); ++i) std::cout << i << ',' << io::format_number(merged[i]) << '\n';
    };
  });

  // nms
  std::string nms_boxes;
  std::optional<double> nms_iou;
  bool agnostic = false;
  auto* nms_cmd = app.add_subcommand("nms", "greedy non-maximum suppression per image");
  nms_cmd->add_option("--boxes", nms_boxes, "boxes CSV with scores")->required();
  nms_cmd->add_option("--iou", nms_iou, "suppression threshold (default: final_nms)");
  nms_cmd->add_flag("--class-agnostic", agnostic, "let boxes of different classes suppress each other");
  nms_cmd->callback([&] {
    action = [&] {
      const auto cfg = g.config();
      const double t = nms_iou.value_or(cfg.thresholds.final_nms);
      detail::require(t > 0.0 && t <= 1.0, "IoU threshold must lie in (0, 1]");
      const auto rows = io::load_boxes_csv(nms_boxes);
      std::vector<std::string> order;
      std::map<std::string, std::vector<io::BoxRecord>> by_image;
      for (const auto& r : rows) {
        if (!by_image.count(r.image_id)) order.push_back(r.image_id);
        by_image[r.image_id].push_back(r);
      }
      std::vector<io::BoxRecord> kept;
      for (const auto& id : order) {
        for (const auto& d : nms(to_detections(by_image[id]), t, !agnostic)) kept.push_back({id, d.class_id, d.box, d.score});
      }
      io::write_boxes_csv(std::cout, kept);
    };
  });

  // infer-full
  MapArgs full_map;
  std::string full_props, full_head, full_params;
  auto* full = app.add_subcommand("infer-full", "fully supervised inference over scored proposals");
  add_map_options(full, full_map, true);
  full->add_option("--proposals", full_props, "boxes CSV with scores")->required();
  full->add_option("--head", full_head, "head archive (W1,b1,W2,b2)")->required();
  full->add_option("--params", full_params, "fixed STN parameters \"sx sy tx ty theta\"");
  full->callback([&] {
    action = [&] {
      const auto cfg = g.config();
      const auto f = full_map.load_features();
      const auto line = full_map.spine();
      const auto w = io::load_head(full_head);
      const auto hc = head_config_for(w, f.channels, HeadMode::kFullySupervised);
      const auto rows = io::load_boxes_csv(full_props);
      std::vector<Proposal> props;
      for (const auto& d : to_detections(rows)) props.push_back({d.box, d.score});
      const auto stn = make_stn(full_params);
      const auto dets = run_fully_supervised(f, props, line, *stn, w, hc, cfg.thresholds);
      print_detections(rows.empty() ? "image" : rows.front().image_id, dets);
    };
  });

  // infer-weak
  MapArgs weak_map;
  std::string weak_probs, weak_head, weak_params, weak_id = "image";
  std::optional<double> weak_threshold;
  auto* weak = app.add_subcommand("infer-weak", "weakly supervised inference from a probability map");
  add_map_options(weak, weak_map, true);
  weak->add_option("--probs", weak_probs, "probability map (CTF1, dims m,H/32,W/32)")->required();
  weak->add_option("--head", weak_head, "class-only head archive")->required();
  weak->add_option("--threshold", weak_threshold, "cell threshold (default: weak_threshold)");
  weak->add_option("--params", weak_params, "fixed STN parameters \"sx sy tx ty theta\"");
  weak->add_option("--image-id", weak_id, "image id for the output rows")->capture_default_str();
  weak->callback([&] {
    action = [&] {
      const auto cfg = g.config();
      const auto f = weak_map.load_features();
      const auto p = io::to_probability_map(io::load_ctf(weak_probs));
      const auto w = io::load_head(weak_head);
      const auto hc = head_config_for(w, f.channels, HeadMode::kWeaklySupervised);
      detail::require(hc.num_classes == p.classes, "head class count differs from the probability map");
      const double t = weak_threshold.value_or(cfg.thresholds.weak_threshold);
      detail::require(t >= 0.0 && t < 1.0, "threshold must lie in [0, 1)");
      const auto stn = make_stn(weak_params);
      print_detections(weak_id, run_weakly_supervised(f, p, weak_map.spine(), *stn, w, hc, t));
    };
  });

  // eval
  struct EvalArgs {
    bool ap = false, accuracy = false, confusion = false, seg = false, wilcoxon = false;
    std::string pred, gt, pred_mask, gt_mask, pairs, rule = "iou";
    double iou = 0.5;
    int classes = 0;
    std::vector<double> thresholds{0.1, 0.3, 0.5, 0.7};
  } ev;
  auto* eval = app.add_subcommand("eval", "detection, localization, segmentation and significance metrics");
  eval->add_flag("--ap", ev.ap, "average precision");
  eval->add_flag("--accuracy", ev.accuracy, "localization accuracy per IoU threshold");
  eval->add_flag("--confusion", ev.confusion, "confusion matrix (row: truth, column: prediction, 0 = none)");
  eval->add_flag("--seg", ev.seg, "segmentation scores of two masks");
  eval->add_flag("--wilcoxon", ev.wilcoxon, "signed-rank test on paired scores");
  eval->add_option("--pred", ev.pred, "predicted boxes CSV");
  eval->add_option("--gt", ev.gt, "ground-truth boxes CSV");
  eval->add_option("--rule", ev.rule, "AP matching: iou or center")->check(CLI::IsMember({"iou", "center"}));
  eval->add_option("--iou", ev.iou, "IoU threshold for AP and confusion")->capture_default_str();
  eval->add_option("--classes", ev.classes, "class count for the confusion matrix");
  eval->add_option("--thresholds", ev.thresholds, "IoU thresholds for --accuracy")->delimiter(',');
  eval->add_option("--pred-mask", ev.pred_mask, "predicted mask (PGM)");
  eval->add_option("--gt-mask", ev.gt_mask, "ground-truth mask (PGM)");
  eval->add_option("--pairs", ev.pairs, "CSV with two numeric columns of paired scores");
  eval->callback([&] {
    action = [&] {
      if (!(ev.ap || ev.accuracy || ev.confusion || ev.seg || ev.wilcoxon)) {
        throw InputError("choose at least one of --ap --accuracy --confusion --seg --wilcoxon");
      }
      std::vector<io::MetricRow> rows;
      const auto need = [](const std::string& v, const char* flag) {
        if (v.empty()) throw InputError(std::string("missing ") + flag);
        return v;
      };
      const auto fmt = [](double v) { return io::format_number(v); };
      if (ev.ap || ev.accuracy || ev.confusion) {
        const auto dets = to_image_detections(io::load_boxes_csv(need(ev.pred, "--pred")));
        const auto gts = to_ground_truth(io::load_boxes_csv(need(ev.gt, "--gt")));
        if (ev.ap) {
          const auto rule = ev.rule == "center" ? MatchRule::center_inside() : MatchRule::iou_above(ev.iou);
          const auto r = average_precision(dets, gts, rule);
          const std::string thr = ev.rule == "center" ? "center" : fmt(ev.iou);
          for (const auto& [c, v] : r.per_class) rows.push_back({"ap", std::to_string(c), thr, v});
          rows.push_back({"ap", "all", thr, r.mean});
        }
        if (ev.accuracy) {
          const auto t = localization_accuracy(dets, gts, ev.thresholds);
          for (std::size_t i = 0; i < t.thresholds.size(); ++i) {
            for (const auto& [c, v] : t.per_class) rows.push_back({"accuracy", std::to_string(c), fmt(t.thresholds[i]), v[i]});
            rows.push_back({"accuracy", "all", fmt(t.thresholds[i]), t.mean[i]});
          }
        }
        if (ev.confusion) {
          int m = ev.classes;
          if (m == 0) {
            for (const auto& d : dets) m = std::max(m, d.det.class_id);
            for (const auto& gt : gts) m = std::max(m, gt.class_id);
          }
          const auto cm = confusion_matrix(dets, gts, m, ev.iou);
          for (int r = 0; r <= m; ++r)
            for (int c = 0; c <= m; ++c)
              rows.push_back({"confusion", std::to_string(r) + "->" + std::to_string(c), fmt(ev.iou),
                              static_cast<double>(cm.at(r, c))});
        }
      }
      if (ev.seg) {
        const auto s = segmentation_metrics(io::load_mask(need(ev.pred_mask, "--pred-mask")),
                                            io::load_mask(need(ev.gt_mask, "--gt-mask")));
        for (const auto& [name, v] : std::vector<std::pair<const char*, double>>{
                 {"dice", s.dice}, {"pixel_acc", s.pixel_acc}, {"mean_acc", s.mean_acc}, {"mean_iu", s.mean_iu},
                 {"fw_iu", s.fw_iu}}) {
          rows.push_back({name, "all", "", v});
        }
      }
      if (ev.wilcoxon) {
        std::ifstream in(need(ev.pairs, "--pairs"));
        if (!in) throw InputError("cannot open " + ev.pairs);
        std::vector<std::pair<double, double>> pairs;
        std::string row;
        std::getline(in, row);  // header
        for (int lineno = 2; std::getline(in, row); ++lineno) {
          if (!row.empty() && row.back() == '\r') row.pop_back();
          if (row.empty()) continue;
          const auto v = io::parse_list(row, 2, "pairs line " + std::to_string(lineno));
          pairs.emplace_back(v[0], v[1]);
        }
        const auto w = wilcoxon_signed_rank(pairs);
        rows.push_back({"wilcoxon_statistic", "all", "", w.statistic});
        rows.push_back({"wilcoxon_w_plus", "all", "", w.w_plus});
        rows.push_back({"wilcoxon_w_minus", "all", "", w.w_minus});
        rows.push_back({"wilcoxon_n", "all", "", static_cast<double>(w.n)});
        rows.push_back({"wilcoxon_p", "all", w.exact ? "exact" : "normal", w.p_value});
      }
      io::write_metrics_csv(std::cout, rows);
    };
  });

  // gen
  int gen_index = 0, gen_count = 1;
  auto* gen = app.add_subcommand("gen", "write synthetic scenes to --out");
  gen->add_option("--index", gen_index, "first scene index")->capture_default_str();
  gen->add_option("--count", gen_count, "number of scenes")->capture_default_str();
  gen->callback([&] {
    action = [&] {
      const auto cfg = g.config();
      if (g.out_dir.empty()) throw InputError("gen needs --out");
      if (gen_index < 0 || gen_count < 1) throw InputError("--index must be >= 0 and --count >= 1");
      std::cout << "image_id,width,height,a,b,c,lesions,proposals\n";
      for (int i = gen_index; i < gen_index + gen_count; ++i) {
        const auto sc = generate_scene(cfg, i);
        write_scene(sc, g);
        std::cout << sc.image_id << ',' << sc.width << ',' << sc.height << ',' << io::format_number(sc.axis.a) << ','
                  << io::format_number(sc.axis.b) << ',' << io::format_number(sc.axis.c) << ','
                  << sc.lesions.size() << ',' << sc.proposals.size() << '\n';
      }
    };
  });

  // experiment
  auto* experiment = app.add_subcommand("experiment", "train proposal-only and fused heads, compare AP");
  experiment->callback([&] {
    action = [&] {
      const auto cfg = g.config();
      const auto rep = run_experiment(cfg);
      if (!g.out_dir.empty()) {
        write_experiment(rep, g.out_dir);
        io::save_head(g.out("head_baseline.ctf").string(), rep.baseline.weights);
        io::save_head(g.out("head_cen.ctf").string(), rep.fused.weights);
      }
      std::cerr << format_report(rep);
      io::write_metrics_csv(std::cout, experiment_metrics(rep));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    action();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
