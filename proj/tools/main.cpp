// SPDX-License-Identifier: Apache-2.0
//
// Command-line frontend: train, predict, eval, sweep-iou, synth,
// render-targets, plot. Exit codes: 0 success, 1 categorized runtime error,
// 2 usage error.
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctdet/datasets.hpp"
#include "ctdet/eval.hpp"
#include "ctdet/plot.hpp"
#include "ctdet/study.hpp"
#include "ctdet/training.hpp"

namespace fs = std::filesystem;
using namespace ctdet;

namespace {

bool g_deterministic = false;

// Accepts "a,b,c" lists and "lo:hi:step" ranges.
std::vector<double> parse_thresholds(const std::string& spec) {
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0)
      throw ConfigError("bad threshold range: " + spec);
    for (double v = lo; v <= hi + 1e-9; v += step) out.push_back(v);
  } else {
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      out.push_back(std::stod(tok));
    }
  }
  if (out.empty()) throw ConfigError("no thresholds in: " + spec);
  return out;
}

// Pred/gt directories pair files by stem; gt files may carry a "gt_" prefix.
struct EvalData {
  std::vector<std::vector<geometry::Detection>> dets;
  std::vector<std::vector<eval::GtInstance>> gts;
};

EvalData load_eval_dirs(const std::string& pred_dir, const std::string& gt_dir) {
  if (!fs::exists(gt_dir)) throw DataError("gt dir not found: " + gt_dir);
  if (!fs::exists(pred_dir)) throw DataError("pred dir not found: " + pred_dir);
  std::vector<fs::path> gt_files;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".txt") gt_files.push_back(e.path());
  std::sort(gt_files.begin(), gt_files.end());
  if (gt_files.empty()) throw DataError("no gt .txt files in " + gt_dir);

  EvalData data;
  auto warn = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
  for (const fs::path& gt_path : gt_files) {
    std::string stem = gt_path.stem().string();
    if (stem.rfind("gt_", 0) == 0) stem = stem.substr(3);
    std::vector<eval::GtInstance> gts;
    for (const auto& inst : datasets::parse_icdar_gt(gt_path.string(), warn))
      gts.push_back({inst.quad, inst.dont_care});
    data.gts.push_back(std::move(gts));

    fs::path pred_path = fs::path(pred_dir) / (stem + ".txt");
    if (fs::exists(pred_path))
      data.dets.push_back(datasets::parse_predictions(pred_path.string()));
    else
      data.dets.emplace_back();
  }
  return data;
}

datasets::SynthConfig synth_config_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open synth config: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("synth config parse error: ") + e.what());
  }
  datasets::SynthConfig c;
  if (j.contains("canvas")) c.canvas = j["canvas"].get<int>();
  if (j.contains("words_min")) c.words_min = j["words_min"].get<int>();
  if (j.contains("words_max")) c.words_max = j["words_max"].get<int>();
  if (j.contains("rotation_range")) c.rotation_range = j["rotation_range"].get<double>();
  if (j.contains("font_height_min")) c.font_height_min = j["font_height_min"].get<double>();
  if (j.contains("font_height_max")) c.font_height_max = j["font_height_max"].get<double>();
  if (j.contains("background"))
    c.background = datasets::background_from_name(j["background"].get<std::string>());
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  if (j.contains("allow_overlap")) c.allow_overlap = j["allow_overlap"].get<bool>();
  return c;
}

void print_eval_table(const eval::EvalResult& r) {
  std::printf("precision=%.3f recall=%.3f f1=%.3f tp=%d fp=%d ignored=%d gts=%d\n", r.precision,
              r.recall, r.f1, r.true_positives, r.false_positives, r.ignored_detections,
              r.total_trainable_gts);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contour-assisted scene text detection toolkit"};
  app.require_subcommand(1);
  app.add_flag("--deterministic", g_deterministic,
               "suppress timestamps so outputs are byte-identical across runs");

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "train a model from a run config");
  std::string train_config, train_resume;
  cmd_train->add_option("--config", train_config, "run config JSON")->required();
  cmd_train->add_option("--resume", train_resume, "checkpoint to resume from");

  // ---- predict ----
  auto* cmd_predict = app.add_subcommand("predict", "run inference over an image directory");
  std::string pr_ckpt, pr_in, pr_out, pr_merge;
  double pr_thresh = -1, pr_nms = -1;
  bool pr_overlay = false, pr_contour = false;
  cmd_predict->add_option("--checkpoint", pr_ckpt)->required();
  cmd_predict->add_option("--input-dir", pr_in)->required();
  cmd_predict->add_option("--out-dir", pr_out)->required();
  cmd_predict->add_option("--score-threshold", pr_thresh, "override checkpoint decode config");
  cmd_predict->add_option("--nms-iou", pr_nms);
  cmd_predict->add_option("--merge", pr_merge, "standard|locality_aware");
  cmd_predict->add_flag("--overlay", pr_overlay, "write detection overlay images");
  cmd_predict->add_flag("--contour-overlay", pr_contour, "write contour heatmaps");

  // ---- eval ----
  auto* cmd_eval = app.add_subcommand("eval", "score predictions against ground truth");
  std::string ev_pred, ev_gt, ev_thresholds = "0.5", ev_out;
  cmd_eval->add_option("--pred-dir", ev_pred)->required();
  cmd_eval->add_option("--gt-dir", ev_gt)->required();
  cmd_eval->add_option("--thresholds", ev_thresholds, "list a,b,c or range lo:hi:step");
  cmd_eval->add_option("--out", ev_out, "write csv table");

  // ---- sweep-iou ----
  auto* cmd_sweep = app.add_subcommand("sweep-iou", "P/R/F1 over a range of IoU thresholds");
  std::string sw_pred, sw_gt, sw_thresholds = "0.5:0.9:0.05", sw_out;
  cmd_sweep->add_option("--pred-dir", sw_pred)->required();
  cmd_sweep->add_option("--gt-dir", sw_gt)->required();
  cmd_sweep->add_option("--thresholds", sw_thresholds);
  cmd_sweep->add_option("--out", sw_out, "write csv table");

  // ---- synth ----
  auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string sy_config, sy_out;
  int sy_count = 8;
  uint64_t sy_seed = 0;
  bool sy_seed_set = false;
  cmd_synth->add_option("--config", sy_config, "synth config JSON (optional)");
  cmd_synth->add_option("--out-dir", sy_out)->required();
  cmd_synth->add_option("--count", sy_count, "number of images");
  cmd_synth->add_option("--seed", sy_seed)->each([&](const std::string&) { sy_seed_set = true; });

  // ---- render-targets ----
  auto* cmd_render = app.add_subcommand("render-targets",
                                        "visualize training targets for one sample");
  std::string rt_image, rt_gt, rt_synth_cfg, rt_out = ".", rt_prefix = "sample";
  int rt_index = 0;
  double rt_shrink = 0.3;
  cmd_render->add_option("--image", rt_image, "input .ppm image");
  cmd_render->add_option("--gt", rt_gt, "ICDAR gt file for --image");
  cmd_render->add_option("--synth-config", rt_synth_cfg, "render a generated sample instead");
  cmd_render->add_option("--index", rt_index, "sample index for --synth-config");
  cmd_render->add_option("--out-dir", rt_out);
  cmd_render->add_option("--prefix", rt_prefix);
  cmd_render->add_option("--shrink-ratio", rt_shrink);

  // ---- plot ----
  auto* cmd_plot = app.add_subcommand("plot", "render charts from csv logs/tables");
  std::string pl_kind, pl_input, pl_out;
  cmd_plot->add_option("--kind", pl_kind, "loss_curves|f1_vs_iou")->required();
  cmd_plot->add_option("--input", pl_input, "csv input (training log or sweep table)")
      ->required();
  cmd_plot->add_option("--out", pl_out, "output image (.bmp)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    auto t0 = std::chrono::steady_clock::now();
    if (*cmd_train) {
      training::RunConfig cfg = training::load_run_config(train_config);
      training::TrainResult r = training::train(cfg, &std::cout, train_resume);
      if (r.diverged) throw NumericError("training diverged: " + r.divergence_message);
      std::cout << "trained " << r.steps_completed << " steps; final l_total "
                << r.last_report.l_total << "; checkpoint " << r.final_checkpoint << "\n";
    } else if (*cmd_predict) {
      training::LoadedCheckpoint ck = training::load_checkpoint(pr_ckpt);
      training::PredictOptions opts;
      opts.decode = ck.config.decode;
      if (pr_thresh >= 0) opts.decode.score_threshold = pr_thresh;
      if (pr_nms >= 0) opts.decode.nms_iou = pr_nms;
      if (!pr_merge.empty()) opts.decode.merge_mode = postprocess::merge_mode_from_name(pr_merge);
      opts.overlay = pr_overlay;
      opts.contour_overlay = pr_contour;
      training::PredictSummary s = training::predict(*ck.model, pr_in, pr_out, opts, &std::cout);
      std::cout << "predicted " << s.images << " images, " << s.detections << " detections";
      if (s.skipped_pixels > 0) std::cout << " (" << s.skipped_pixels << " pixels skipped)";
      std::cout << "\n";
    } else if (*cmd_eval) {
      EvalData data = load_eval_dirs(ev_pred, ev_gt);
      std::vector<double> thresholds = parse_thresholds(ev_thresholds);
      auto rows = eval::sweep_iou(data.dets, data.gts, thresholds);
      for (const auto& row : rows)
        std::printf("iou=%.2f precision=%.3f recall=%.3f f1=%.3f\n", row.iou_threshold,
                    row.precision, row.recall, row.f1);
      print_eval_table(eval::match_and_score(data.dets, data.gts, thresholds.front()));
      if (!ev_out.empty()) {
        std::ofstream f(ev_out, std::ios::binary);
        f << eval::sweep_table_csv(rows);
      }
    } else if (*cmd_sweep) {
      EvalData data = load_eval_dirs(sw_pred, sw_gt);
      auto rows = eval::sweep_iou(data.dets, data.gts, parse_thresholds(sw_thresholds));
      std::string csv = eval::sweep_table_csv(rows);
      std::cout << csv;
      if (!sw_out.empty()) {
        std::ofstream f(sw_out, std::ios::binary);
        f << csv;
      }
    } else if (*cmd_synth) {
      datasets::SynthConfig cfg;
      if (!sy_config.empty()) cfg = synth_config_from_file(sy_config);
      if (sy_seed_set) cfg.seed = sy_seed;
      auto samples = datasets::generate_synthetic(cfg, sy_count);
      datasets::write_dataset(sy_out, samples);
      int words = 0;
      for (const auto& s : samples) words += static_cast<int>(s.instances.size());
      std::cout << "wrote " << samples.size() << " images (" << words << " instances) to "
                << sy_out << "\n";
    } else if (*cmd_render) {
      targets::AnnotatedImage sample;
      if (!rt_synth_cfg.empty()) {
        sample = datasets::generate_synthetic_image(synth_config_from_file(rt_synth_cfg),
                                                    rt_index);
      } else {
        if (rt_image.empty() || rt_gt.empty())
          throw ConfigError("render-targets needs --image/--gt or --synth-config");
        sample.img = image::read_pnm(rt_image);
        sample.instances = datasets::parse_icdar_gt(
            rt_gt, [](const std::string& m) { std::cerr << "warning: " << m << "\n"; });
      }
      targets::TargetConfig tc;
      tc.shrink_ratio = rt_shrink;
      targets::TargetMaps maps = targets::build_targets(sample, tc);
      plot::render_target_overlays(sample, maps, rt_out, rt_prefix);
      std::cout << "wrote target overlays to " << rt_out << "/" << rt_prefix << "_*.bmp\n";
    } else if (*cmd_plot) {
      if (pl_kind == "loss_curves")
        plot::plot_loss_curves(pl_input, pl_out);
      else if (pl_kind == "f1_vs_iou")
        plot::plot_f1_vs_iou(pl_input, pl_out);
      else
        throw ConfigError("unknown plot kind: " + pl_kind);
      std::cout << "wrote " << pl_out << "\n";
    }
    if (!g_deterministic) {
      double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "done in " << dt << " s\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
