// SPDX-License-Identifier: Apache-2.0
#include "ctdet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace ctdet::training {

namespace fs = std::filesystem;
using json = nlohmann::json;
using image::ImageU8;
using model::Model;
using nn::Tensor;

// ---- config ----------------------------------------------------------------

void RunConfig::validate() const {
  backbone.validate();
  if (stages.empty()) throw ConfigError("run: at least one stage required");
  for (const StageConfig& s : stages) {
    if (s.input_size <= 0 || s.input_size % 32 != 0)
      throw ConfigError("run: stage input_size must be a positive multiple of 32");
    if (s.steps <= 0) throw ConfigError("run: stage steps must be positive");
    if (s.lr <= 0.0) throw ConfigError("run: stage lr must be positive");
  }
  if (batch_size <= 0) throw ConfigError("run: batch_size must be positive");
  if (weights.lambda_cls < 0 || weights.beta_contour < 0 || weights.lambda_iou < 0 ||
      weights.epsilon < 0)
    throw ConfigError("run: loss weights must be >= 0");
  decode.validate();
  if (dataset.format != datasets::DatasetFormat::Synthetic || !dataset.root.empty())
    ;  // file-backed datasets are validated on load
  else
    dataset.synth.validate();
}

int RunConfig::total_steps() const {
  int n = 0;
  for (const StageConfig& s : stages) n += s.steps;
  return n;
}

namespace {

json stage_to_json(const StageConfig& s) {
  return json{{"input_size", s.input_size}, {"steps", s.steps}, {"lr", s.lr}};
}

json backbone_to_json(const model::BackboneConfig& b) {
  return json{{"stage_channels", b.stage_channels},
              {"decoder_channels", b.decoder_channels},
              {"input_size", b.input_size},
              {"gn_groups", b.gn_groups},
              {"geo_scale", b.geo_scale},
              {"pretrained_id", b.pretrained_id},
              {"stop_contour_gradient", b.stop_contour_gradient}};
}

model::BackboneConfig backbone_from_json(const json& j) {
  model::BackboneConfig b;
  if (j.contains("stage_channels")) b.stage_channels = j["stage_channels"].get<std::vector<int>>();
  if (j.contains("decoder_channels"))
    b.decoder_channels = j["decoder_channels"].get<std::vector<int>>();
  if (j.contains("input_size")) b.input_size = j["input_size"].get<int>();
  if (j.contains("gn_groups")) b.gn_groups = j["gn_groups"].get<int>();
  if (j.contains("geo_scale")) b.geo_scale = j["geo_scale"].get<double>();
  if (j.contains("pretrained_id")) b.pretrained_id = j["pretrained_id"].get<std::string>();
  if (j.contains("stop_contour_gradient"))
    b.stop_contour_gradient = j["stop_contour_gradient"].get<bool>();
  return b;
}

json dataset_to_json(const datasets::DatasetSpec& d) {
  return json{{"format", datasets::dataset_format_name(d.format)},
              {"root", d.root},
              {"split", d.split},
              {"synth_count", d.synth_count},
              {"synth",
               {{"canvas", d.synth.canvas},
                {"words_min", d.synth.words_min},
                {"words_max", d.synth.words_max},
                {"rotation_range", d.synth.rotation_range},
                {"font_height_min", d.synth.font_height_min},
                {"font_height_max", d.synth.font_height_max},
                {"background", datasets::background_name(d.synth.background)},
                {"seed", d.synth.seed},
                {"allow_overlap", d.synth.allow_overlap}}},
              {"augment",
               {{"enabled", d.augment.enabled},
                {"scale_min", d.augment.scale_min},
                {"scale_max", d.augment.scale_max},
                {"crop_size", d.augment.crop_size},
                {"min_crop_overlap", d.augment.min_crop_overlap}}}};
}

datasets::DatasetSpec dataset_from_json(const json& j) {
  datasets::DatasetSpec d;
  if (j.contains("format")) d.format = datasets::dataset_format_from_name(j["format"]);
  if (j.contains("root")) d.root = j["root"].get<std::string>();
  if (j.contains("split")) d.split = j["split"].get<std::string>();
  if (j.contains("synth_count")) d.synth_count = j["synth_count"].get<int>();
  if (j.contains("synth")) {
    const json& s = j["synth"];
    if (s.contains("canvas")) d.synth.canvas = s["canvas"].get<int>();
    if (s.contains("words_min")) d.synth.words_min = s["words_min"].get<int>();
    if (s.contains("words_max")) d.synth.words_max = s["words_max"].get<int>();
    if (s.contains("rotation_range")) d.synth.rotation_range = s["rotation_range"].get<double>();
    if (s.contains("font_height_min"))
      d.synth.font_height_min = s["font_height_min"].get<double>();
    if (s.contains("font_height_max"))
      d.synth.font_height_max = s["font_height_max"].get<double>();
    if (s.contains("background"))
      d.synth.background = datasets::background_from_name(s["background"]);
    if (s.contains("seed")) d.synth.seed = s["seed"].get<uint64_t>();
    if (s.contains("allow_overlap")) d.synth.allow_overlap = s["allow_overlap"].get<bool>();
  }
  if (j.contains("augment")) {
    const json& a = j["augment"];
    if (a.contains("enabled")) d.augment.enabled = a["enabled"].get<bool>();
    if (a.contains("scale_min")) d.augment.scale_min = a["scale_min"].get<double>();
    if (a.contains("scale_max")) d.augment.scale_max = a["scale_max"].get<double>();
    if (a.contains("crop_size")) d.augment.crop_size = a["crop_size"].get<int>();
    if (a.contains("min_crop_overlap"))
      d.augment.min_crop_overlap = a["min_crop_overlap"].get<double>();
  }
  return d;
}

json decode_to_json(const postprocess::DecodeConfig& c) {
  return json{{"score_threshold", c.score_threshold},
              {"nms_iou", c.nms_iou},
              {"max_detections", c.max_detections},
              {"merge_mode", postprocess::merge_mode_name(c.merge_mode)}};
}

postprocess::DecodeConfig decode_from_json(const json& j) {
  postprocess::DecodeConfig c;
  if (j.contains("score_threshold")) c.score_threshold = j["score_threshold"].get<double>();
  if (j.contains("nms_iou")) c.nms_iou = j["nms_iou"].get<double>();
  if (j.contains("max_detections")) c.max_detections = j["max_detections"].get<int>();
  if (j.contains("merge_mode"))
    c.merge_mode = postprocess::merge_mode_from_name(j["merge_mode"]);
  return c;
}

json run_config_to_json_obj(const RunConfig& cfg) {
  json stages = json::array();
  for (const StageConfig& s : cfg.stages) stages.push_back(stage_to_json(s));
  return json{{"variant", model::variant_name(cfg.variant)},
              {"backbone", backbone_to_json(cfg.backbone)},
              {"weights",
               {{"lambda_cls", cfg.weights.lambda_cls},
                {"beta_contour", cfg.weights.beta_contour},
                {"lambda_iou", cfg.weights.lambda_iou},
                {"epsilon", cfg.weights.epsilon}}},
              {"stages", stages},
              {"batch_size", cfg.batch_size},
              {"seed", cfg.seed},
              {"dataset", dataset_to_json(cfg.dataset)},
              {"decode", decode_to_json(cfg.decode)},
              {"out_dir", cfg.out_dir},
              {"checkpoint_every", cfg.checkpoint_every},
              {"log_every", cfg.log_every},
              {"contour_warmup_steps", cfg.contour_warmup_steps},
              {"clip_norm", cfg.clip_norm},
              {"target",
               {{"shrink_ratio", cfg.target.shrink_ratio},
                {"min_side_px", cfg.target.min_side_px}}},
              {"eval_every", cfg.eval_every},
              {"early_stop_f1", cfg.early_stop_f1}};
}

RunConfig run_config_from_json_obj(const json& j) {
  RunConfig cfg;
  if (j.contains("variant")) cfg.variant = model::variant_from_name(j["variant"]);
  if (j.contains("backbone")) cfg.backbone = backbone_from_json(j["backbone"]);
  if (j.contains("weights")) {
    const json& w = j["weights"];
    if (w.contains("lambda_cls")) cfg.weights.lambda_cls = w["lambda_cls"].get<double>();
    if (w.contains("beta_contour")) cfg.weights.beta_contour = w["beta_contour"].get<double>();
    if (w.contains("lambda_iou")) cfg.weights.lambda_iou = w["lambda_iou"].get<double>();
    if (w.contains("epsilon")) cfg.weights.epsilon = w["epsilon"].get<double>();
  }
  if (j.contains("stages")) {
    cfg.stages.clear();
    for (const json& s : j["stages"]) {
      StageConfig st;
      if (s.contains("input_size")) st.input_size = s["input_size"].get<int>();
      if (s.contains("steps")) st.steps = s["steps"].get<int>();
      if (s.contains("lr")) st.lr = s["lr"].get<double>();
      cfg.stages.push_back(st);
    }
  }
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("dataset")) cfg.dataset = dataset_from_json(j["dataset"]);
  if (j.contains("decode")) cfg.decode = decode_from_json(j["decode"]);
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("checkpoint_every")) cfg.checkpoint_every = j["checkpoint_every"].get<int>();
  if (j.contains("log_every")) cfg.log_every = j["log_every"].get<int>();
  if (j.contains("contour_warmup_steps"))
    cfg.contour_warmup_steps = j["contour_warmup_steps"].get<int>();
  if (j.contains("clip_norm")) cfg.clip_norm = j["clip_norm"].get<double>();
  if (j.contains("target")) {
    const json& t = j["target"];
    if (t.contains("shrink_ratio")) cfg.target.shrink_ratio = t["shrink_ratio"].get<double>();
    if (t.contains("min_side_px")) cfg.target.min_side_px = t["min_side_px"].get<double>();
  }
  if (j.contains("eval_every")) cfg.eval_every = j["eval_every"].get<int>();
  if (j.contains("early_stop_f1")) cfg.early_stop_f1 = j["early_stop_f1"].get<double>();
  return cfg;
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  return run_config_to_json_obj(cfg).dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("run config parse error: ") + e.what());
  }
  return run_config_from_json_obj(j);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open run config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return run_config_from_json(ss.str());
}

// ---- checkpoints -------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'C', 'T', 'C', 'K', '0', '0', '0', '1'};
}

void save_checkpoint(const std::string& path, const Model& m, const RunConfig& cfg, int step,
                     int64_t adam_t, bool deterministic) {
  json manifest = json::array();
  for (const nn::Parameter* p : m.parameters())
    manifest.push_back(json{{"name", p->name}, {"shape", p->value.shape}});
  json header{{"version", 1},
              {"variant", model::variant_name(m.kind())},
              {"backbone", backbone_to_json(m.config())},
              {"run_config", run_config_to_json_obj(cfg)},
              {"step", step},
              {"adam_t", adam_t},
              {"params", manifest}};
  if (!deterministic) header["created_unix"] = static_cast<int64_t>(::time(nullptr));
  std::string head = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(kCkptMagic, sizeof(kCkptMagic));
  uint64_t len = head.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const nn::Parameter* p : m.parameters()) {
    auto write_blob = [&](const Tensor& t) {
      f.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    };
    write_blob(p->value);
    write_blob(p->adam_m);
    write_blob(p->adam_v);
  }
  if (!f) throw DataError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (f.gcount() != 8 || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string head(len, '\0');
  f.read(head.data(), static_cast<std::streamsize>(len));
  if (!f) throw DataError("truncated checkpoint header: " + path);
  json header = json::parse(head);

  LoadedCheckpoint out;
  out.config = run_config_from_json_obj(header["run_config"]);
  out.step = header["step"].get<int>();
  out.adam_t = header["adam_t"].get<int64_t>();
  model::VariantKind kind = model::variant_from_name(header["variant"]);
  model::BackboneConfig backbone = backbone_from_json(header["backbone"]);
  out.model = std::make_unique<Model>(kind, backbone, out.config.seed);

  for (const json& entry : header["params"]) {
    std::string name = entry["name"].get<std::string>();
    nn::Parameter* p = out.model->find_parameter(name);
    if (!p) throw DataError("checkpoint parameter unknown to model: " + name);
    auto shape = entry["shape"].get<std::vector<int>>();
    if (shape != p->value.shape) throw DataError("checkpoint shape mismatch for " + name);
    auto read_blob = [&](Tensor& t) {
      f.read(reinterpret_cast<char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    };
    read_blob(p->value);
    read_blob(p->adam_m);
    read_blob(p->adam_v);
  }
  if (!f) throw DataError("truncated checkpoint blobs: " + path);
  return out;
}

// ---- batching ---------------------------------------------------------------

ImageU8 pad_to_multiple32(const ImageU8& img) {
  int nh = (img.h + 31) / 32 * 32;
  int nw = (img.w + 31) / 32 * 32;
  if (nh == img.h && nw == img.w) return img;
  ImageU8 out(nh, nw, img.c, 128);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

Tensor images_to_tensor(const std::vector<const ImageU8*>& batch) {
  if (batch.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  int h = batch[0]->h, w = batch[0]->w;
  Tensor t({static_cast<int>(batch.size()), 3, h, w});
  for (size_t n = 0; n < batch.size(); ++n) {
    const ImageU8& img = *batch[n];
    if (img.h != h || img.w != w)
      throw std::invalid_argument("images_to_tensor: mixed sizes in batch");
    for (int c = 0; c < 3; ++c) {
      float* dst = t.data.data() + ((n * 3) + c) * static_cast<size_t>(h) * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          dst[y * w + x] = img.at(y, x, img.c == 3 ? c : 0) / 255.0f;
    }
  }
  return t;
}

std::vector<geometry::Detection> decode_sample(const model::NetworkOutputs& out, int n,
                                               const postprocess::DecodeConfig& cfg,
                                               int* skipped) {
  int h = out.score.dim(2), w = out.score.dim(3);
  size_t hw = static_cast<size_t>(h) * w;
  const float* sc = out.score.data.data() + static_cast<size_t>(n) * hw;
  const float* an = out.angle.data.data() + static_cast<size_t>(n) * hw;
  const float* di = out.distances.data.data() + static_cast<size_t>(n) * 4 * hw;
  std::array<std::span<const float>, 4> dist{
      std::span<const float>(di, hw), std::span<const float>(di + hw, hw),
      std::span<const float>(di + 2 * hw, hw), std::span<const float>(di + 3 * hw, hw)};
  auto decoded = postprocess::decode_rbox(std::span<const float>(sc, hw), dist,
                                          std::span<const float>(an, hw), h, w, cfg);
  if (skipped) *skipped += decoded.skipped;
  return postprocess::nms(decoded.detections, cfg);
}

eval::EvalResult evaluate_on_samples(const Model& m,
                                     const std::vector<datasets::AnnotatedImage>& samples,
                                     const postprocess::DecodeConfig& decode,
                                     double iou_threshold) {
  std::vector<std::vector<geometry::Detection>> dets;
  std::vector<std::vector<eval::GtInstance>> gts;
  for (const auto& sample : samples) {
    ImageU8 padded = pad_to_multiple32(sample.img);
    model::NetworkOutputs out = m.infer(images_to_tensor({&padded}));
    dets.push_back(decode_sample(out, 0, decode, nullptr));
    std::vector<eval::GtInstance> g;
    for (const auto& inst : sample.instances) g.push_back({inst.quad, inst.dont_care});
    gts.push_back(std::move(g));
  }
  return eval::match_and_score(dets, gts, iou_threshold);
}

// ---- training loop ------------------------------------------------------------

namespace {

// Deterministic fit of a sample to the stage size when augmentation is off:
// mid-gray pad then top-left crop.
datasets::AnnotatedImage fit_to_size(const datasets::AnnotatedImage& sample, int size) {
  if (sample.img.h == size && sample.img.w == size) return sample;
  datasets::AnnotatedImage out;
  out.img = ImageU8(size, size, sample.img.c, 128);
  for (int y = 0; y < std::min(size, sample.img.h); ++y)
    for (int x = 0; x < std::min(size, sample.img.w); ++x)
      for (int c = 0; c < sample.img.c; ++c) out.img.at(y, x, c) = sample.img.at(y, x, c);
  out.instances = sample.instances;
  return out;
}

struct PreparedSample {
  ImageU8 img;
  targets::TargetMaps maps;
};

struct BatchMaps {
  std::vector<double> gt_score, gt_contour, gt_angle, mask, pos;
  std::array<std::vector<double>, 4> gt_dist;
};

void append_sample_maps(BatchMaps& b, const targets::TargetMaps& m) {
  size_t n = m.score.size();
  for (size_t i = 0; i < n; ++i) {
    b.gt_score.push_back(m.score[i]);
    b.gt_contour.push_back(m.contour[i]);
    b.gt_angle.push_back(m.angle[i]);
    b.mask.push_back(m.ignore[i] > 0 ? 0.0 : 1.0);
    b.pos.push_back(m.score[i] == 1.0f ? 1.0 : 0.0);
    for (int k = 0; k < 4; ++k) b.gt_dist[k].push_back(m.dist[k][i]);
  }
}

std::vector<double> to_double(const Tensor& t) {
  std::vector<double> out(t.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = t.data[i];
  return out;
}

// Distances tensor is N,4,H,W; losses want per-channel batch-flattened maps.
std::array<std::vector<double>, 4> dist_to_double(const Tensor& t) {
  int n = t.dim(0), h = t.dim(2), w = t.dim(3);
  size_t hw = static_cast<size_t>(h) * w;
  std::array<std::vector<double>, 4> out;
  for (auto& v : out) v.resize(static_cast<size_t>(n) * hw);
  for (int img = 0; img < n; ++img)
    for (int k = 0; k < 4; ++k) {
      const float* src = t.data.data() + (static_cast<size_t>(img) * 4 + k) * hw;
      double* dst = out[k].data() + static_cast<size_t>(img) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] = src[i];
    }
  return out;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

TrainResult train(const RunConfig& cfg, std::ostream* console, const std::string& resume_from) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream cf(fs::path(cfg.out_dir) / "config.json", std::ios::binary);
    cf << run_config_to_json(cfg);
  }

  std::vector<datasets::AnnotatedImage> data = datasets::load_dataset(
      cfg.dataset, [&](const std::string& msg) {
        if (console) *console << "warning: " << msg << "\n";
      });
  if (data.empty()) throw DataError("train: dataset is empty");

  std::unique_ptr<Model> owned;
  int start_step = 0;
  int64_t adam_t = 0;
  if (!resume_from.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume_from);
    if (ck.model->kind() != cfg.variant)
      throw ConfigError("resume: checkpoint variant differs from run config");
    owned = std::move(ck.model);
    start_step = ck.step;
    adam_t = ck.adam_t;
  } else {
    owned = std::make_unique<Model>(cfg.variant, cfg.backbone, cfg.seed);
  }
  Model& net = *owned;
  const bool has_contour = model::variant_has_contour(cfg.variant);

  TrainResult result;
  result.log_path = (fs::path(cfg.out_dir) / "train_log.csv").string();
  std::ofstream log(result.log_path, std::ios::binary);
  log << "step,stage,lr,l_score,l_iou,l_theta,l_geo";
  if (has_contour) log << ",l_contour";
  log << ",l_total,batch_hash\n";

  std::ofstream eval_log;
  if (cfg.eval_every > 0) {
    eval_log.open(fs::path(cfg.out_dir) / "eval_log.csv", std::ios::binary);
    eval_log << "step,precision,recall,f1\n";
  }

  // Target cache for the deterministic (augmentation off) pipeline.
  std::map<std::pair<size_t, int>, std::shared_ptr<const PreparedSample>> cache;
  auto prepare = [&](size_t idx, int size,
                     uint64_t sample_stream) -> std::shared_ptr<const PreparedSample> {
    if (!cfg.dataset.augment.enabled) {
      auto key = std::make_pair(idx, size);
      auto it = cache.find(key);
      if (it != cache.end()) return it->second;
      datasets::AnnotatedImage fitted = fit_to_size(data[idx], size);
      auto ps = std::make_shared<PreparedSample>();
      ps->img = fitted.img;
      ps->maps = targets::build_targets(fitted, cfg.target);
      cache.emplace(key, ps);
      return ps;
    }
    Rng rng(derive_seed(cfg.seed, sample_stream));
    datasets::AugmentConfig aug = cfg.dataset.augment;
    aug.crop_size = size;
    datasets::AnnotatedImage cropped = datasets::augment(data[idx], aug, rng);
    auto ps = std::make_shared<PreparedSample>();
    ps->img = cropped.img;
    ps->maps = targets::build_targets(cropped, cfg.target);
    return ps;
  };

  // Epoch-shuffled index stream.
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();  // force shuffle on first use
  uint64_t epoch = 0;
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      Rng rng(derive_seed(cfg.seed, 0xE90C0000ULL + epoch));
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
      cursor = 0;
      ++epoch;
    }
    return order[cursor++];
  };
  // Replay the stream consumed before the resume point.
  for (int s = 0; s < start_step * cfg.batch_size; ++s) next_index();

  int global_step = start_step;
  uint64_t sample_counter = static_cast<uint64_t>(start_step) * cfg.batch_size;
  std::string last_ckpt;

  auto save_at = [&](const std::string& name, int steps_done) {
    std::string path = (fs::path(cfg.out_dir) / name).string();
    save_checkpoint(path, net, cfg, steps_done, adam_t);
    last_ckpt = path;
    return path;
  };

  int stage_start = 0;
  for (size_t stage_idx = 0; stage_idx < cfg.stages.size(); ++stage_idx) {
    const StageConfig& stage = cfg.stages[stage_idx];
    int stage_end = stage_start + stage.steps;
    if (global_step >= stage_end) {
      stage_start = stage_end;
      continue;
    }
    if (console)
      *console << "stage " << stage_idx + 1 << "/" << cfg.stages.size() << ": size "
               << stage.input_size << ", steps " << stage.steps << ", lr " << stage.lr << "\n";

    for (; global_step < stage_end; ++global_step) {
      // Assemble batch.
      std::vector<std::shared_ptr<const PreparedSample>> batch;
      batch.reserve(cfg.batch_size);
      uint64_t hash = 0xcbf29ce484222325ULL;
      for (int b = 0; b < cfg.batch_size; ++b) {
        size_t idx = next_index();
        batch.push_back(prepare(idx, stage.input_size, sample_counter++));
        hash = fnv1a64(batch.back()->img.data.data(), batch.back()->img.data.size(), hash);
      }
      std::vector<const ImageU8*> imgs;
      for (const auto& ps : batch) imgs.push_back(&ps->img);

      nn::Tape tape;
      model::ForwardMaps maps = net.forward(tape, images_to_tensor(imgs));

      BatchMaps gt;
      for (const auto& ps : batch) append_sample_maps(gt, ps->maps);

      std::vector<double> pred_score = to_double(maps.score->value);
      std::vector<double> pred_angle = to_double(maps.angle->value);
      auto pred_dist = dist_to_double(maps.distances->value);

      std::vector<double> g_score;
      std::array<std::vector<double>, 4> g_dist;
      std::vector<double> g_angle, g_contour;
      bool all_masked = false, no_pos = false;

      double l_score = losses::dice_loss(pred_score, gt.gt_score, gt.mask,
                                         cfg.weights.epsilon, &g_score, &all_masked);
      std::array<losses::Span, 4> pd{pred_dist[0], pred_dist[1], pred_dist[2], pred_dist[3]};
      std::array<losses::Span, 4> gd{gt.gt_dist[0], gt.gt_dist[1], gt.gt_dist[2], gt.gt_dist[3]};
      double l_iou = losses::iou_box_loss(pd, gd, gt.pos, cfg.weights.epsilon, &g_dist, &no_pos);
      double l_theta = losses::angle_loss(pred_angle, gt.gt_angle, gt.pos, &g_angle, nullptr);
      double l_contour = 0.0;
      std::vector<double> pred_contour;
      if (has_contour) {
        pred_contour = to_double(maps.contour->value);
        l_contour = losses::contour_loss(pred_contour, gt.gt_contour, gt.mask, &g_contour);
      }

      losses::LossReport report;
      try {
        report = losses::total_loss(l_score, l_iou, l_theta, l_contour, cfg.weights, has_contour);
      } catch (const NumericError& e) {
        result.diverged = true;
        result.divergence_message = e.what();
        break;
      }
      report.all_masked = all_masked;
      report.no_positive = no_pos;
      result.last_report = report;

      // Seed output gradients with the weighted loss gradients.
      bool warmup = global_step < cfg.contour_warmup_steps && has_contour;
      auto seed = [](nn::Var v, const std::vector<double>& g, double scale) {
        float* dst = v->ensure_grad().data.data();
        for (size_t i = 0; i < g.size(); ++i) dst[i] += static_cast<float>(g[i] * scale);
      };
      if (!warmup) {
        seed(maps.score, g_score, cfg.weights.lambda_cls);
        seed(maps.angle, g_angle, 1.0);
        // Distances grads arrive per channel; scatter back to N,4,H,W.
        int nb = maps.distances->value.dim(0);
        int hw = maps.distances->value.dim(2) * maps.distances->value.dim(3);
        float* dd = maps.distances->ensure_grad().data.data();
        for (int img = 0; img < nb; ++img)
          for (int k = 0; k < 4; ++k) {
            const double* src = g_dist[k].data() + static_cast<size_t>(img) * hw;
            float* dst = dd + (static_cast<size_t>(img) * 4 + k) * hw;
            for (int i = 0; i < hw; ++i)
              dst[i] += static_cast<float>(src[i] * cfg.weights.lambda_iou);
          }
      }
      if (has_contour) seed(maps.contour, g_contour, cfg.weights.beta_contour);

      net.zero_grads();
      tape.backward();
      nn::clip_global_norm(net.parameters(), cfg.clip_norm);
      nn::adam_step(net.parameters(), {stage.lr, 0.9, 0.999, 1e-8}, ++adam_t);

      if (cfg.log_every > 0 && global_step % cfg.log_every == 0) {
        char line[320];
        if (has_contour)
          std::snprintf(line, sizeof(line), "%d,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s\n",
                        global_step, stage_idx, stage.lr, report.l_score, report.l_iou,
                        report.l_theta, report.l_geo, report.l_contour, report.l_total,
                        hex64(hash).c_str());
        else
          std::snprintf(line, sizeof(line), "%d,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s\n",
                        global_step, stage_idx, stage.lr, report.l_score, report.l_iou,
                        report.l_theta, report.l_geo, report.l_total, hex64(hash).c_str());
        log << line;
      }

      int done = global_step + 1;
      if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)
        save_at("ckpt_last.ctck", done);
      if (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
        eval::EvalResult er = evaluate_on_samples(net, data, cfg.decode, 0.5);
        result.final_train_f1 = er.f1;
        char line[128];
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f\n", done, er.precision, er.recall,
                      er.f1);
        eval_log << line;
        eval_log.flush();
        if (console)
          *console << "step " << done << ": train F1@0.5 = " << er.f1 << "\n";
        if (cfg.early_stop_f1 > 0.0 && er.f1 >= cfg.early_stop_f1) {
          result.early_stopped = true;
          ++global_step;
          break;
        }
      }
    }
    stage_start = stage_end;
    if (result.diverged || result.early_stopped) break;
  }

  result.steps_completed = global_step;
  if (!result.diverged) {
    result.final_checkpoint = save_at("ckpt_final.ctck", global_step);
  } else {
    result.final_checkpoint = last_ckpt;
    if (console)
      *console << "training aborted: " << result.divergence_message
               << (last_ckpt.empty() ? " (no checkpoint retained)"
                                     : " (last good checkpoint: " + last_ckpt + ")")
               << "\n";
  }
  log.flush();
  return result;
}

// ---- prediction ---------------------------------------------------------------

PredictSummary predict(const Model& m, const std::string& input_dir,
                       const std::string& out_dir, const PredictOptions& opts,
                       std::ostream* console) {
  opts.decode.validate();
  if (!fs::exists(input_dir)) throw DataError("predict: input dir not found: " + input_dir);
  fs::create_directories(out_dir);

  bool want_contour = opts.contour_overlay;
  if (want_contour && !model::variant_has_contour(m.kind())) {
    if (console)
      *console << "warning: baseline checkpoint has no contour branch; overlay flag ignored\n";
    want_contour = false;
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("predict: no .ppm/.pgm images in " + input_dir);

  PredictSummary summary;
  for (const fs::path& file : files) {
    ImageU8 raw = image::read_pnm(file.string());
    ImageU8 padded = pad_to_multiple32(raw);
    model::NetworkOutputs out = m.infer(images_to_tensor({&padded}));
    int skipped = 0;
    auto dets = decode_sample(out, 0, opts.decode, &skipped);
    summary.images++;
    summary.detections += static_cast<int>(dets.size());
    summary.skipped_pixels += skipped;

    std::string stem = file.stem().string();
    std::ofstream pf(fs::path(out_dir) / (stem + ".txt"), std::ios::binary);
    pf << datasets::serialize_predictions(dets);

    if (opts.overlay) {
      ImageU8 overlay = raw.c == 3 ? raw : ImageU8(raw.h, raw.w, 3, 0);
      if (raw.c != 3)
        for (int y = 0; y < raw.h; ++y)
          for (int x = 0; x < raw.w; ++x)
            for (int c = 0; c < 3; ++c) overlay.at(y, x, c) = raw.at(y, x, 0);
      for (const auto& d : dets) image::draw_polygon(overlay, d.box, {40, 220, 40});
      image::write_bmp((fs::path(out_dir) / (stem + "_overlay.bmp")).string(), overlay);
    }
    if (want_contour) {
      int ch = out.contour.dim(2), cw = out.contour.dim(3);
      ImageU8 heat(ch, cw, 3);
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
          image::Rgb c = image::heat_color(out.contour.data[static_cast<size_t>(y) * cw + x]);
          heat.at(y, x, 0) = c.r;
          heat.at(y, x, 1) = c.g;
          heat.at(y, x, 2) = c.b;
        }
      image::write_bmp((fs::path(out_dir) / (stem + "_contour.bmp")).string(), heat);
    }
  }
  return summary;
}

}  // namespace ctdet::training
