// SPDX-License-Identifier: Apache-2.0
//
// Training loop: staged fixed-size schedule, adaptive-moment optimizer with
// global-norm clipping, per-step loss logging with batch content hashes,
// checkpointing, and inference over image directories.
#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctdet/datasets.hpp"
#include "ctdet/eval.hpp"
#include "ctdet/losses.hpp"
#include "ctdet/model.hpp"
#include "ctdet/postprocess.hpp"

namespace ctdet::training {

struct StageConfig {
  int input_size = 256;  // divisible by 32
  int steps = 1000;
  double lr = 1e-3;
};

struct RunConfig {
  model::VariantKind variant = model::VariantKind::Baseline;
  model::BackboneConfig backbone;
  losses::LossWeights weights;
  std::vector<StageConfig> stages{{256, 1000, 1e-3}, {384, 300, 1e-4}};
  int batch_size = 8;
  uint64_t seed = 0;
  datasets::DatasetSpec dataset;
  postprocess::DecodeConfig decode;
  std::string out_dir = "run";
  int checkpoint_every = 500;
  int log_every = 1;
  // Optional contour-only warm-up: for the first N steps only the contour
  // branch receives gradient.
  int contour_warmup_steps = 0;
  double clip_norm = 5.0;
  targets::TargetConfig target;
  // Train-set evaluation cadence (0 = off) and early-stop F1 at IoU 0.5.
  int eval_every = 0;
  double early_stop_f1 = 0.0;

  void validate() const;
  int total_steps() const;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

struct TrainResult {
  std::string log_path;
  std::string final_checkpoint;
  int steps_completed = 0;
  bool diverged = false;
  std::string divergence_message;
  bool early_stopped = false;
  double final_train_f1 = -1.0;  // -1 when eval_every == 0
  losses::LossReport last_report;
};

TrainResult train(const RunConfig& cfg, std::ostream* console = nullptr,
                  const std::string& resume_from = "");

// Checkpoint container: magic + JSON header (config snapshot, parameter
// manifest, step) + raw float32 blobs (values and optimizer moments).
void save_checkpoint(const std::string& path, const model::Model& m, const RunConfig& cfg,
                     int step, int64_t adam_t, bool deterministic = true);

struct LoadedCheckpoint {
  std::unique_ptr<model::Model> model;
  RunConfig config;
  int step = 0;
  int64_t adam_t = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

struct PredictOptions {
  postprocess::DecodeConfig decode;
  bool overlay = false;          // detection overlay images
  bool contour_overlay = false;  // contour heatmaps (warned+ignored for Baseline)
};

struct PredictSummary {
  int images = 0;
  int detections = 0;
  int skipped_pixels = 0;
};

PredictSummary predict(const model::Model& m, const std::string& input_dir,
                       const std::string& out_dir, const PredictOptions& opts,
                       std::ostream* console = nullptr);

// Decode+NMS a single sample's maps (batch index n of the given outputs).
std::vector<geometry::Detection> decode_sample(const model::NetworkOutputs& out, int n,
                                               const postprocess::DecodeConfig& cfg,
                                               int* skipped = nullptr);

// Forward+decode each sample and score against its own annotations.
eval::EvalResult evaluate_on_samples(const model::Model& m,
                                     const std::vector<datasets::AnnotatedImage>& samples,
                                     const postprocess::DecodeConfig& decode,
                                     double iou_threshold);

// Bottom/right mid-gray padding to the next multiple of 32; coordinates are
// unchanged by the transform.
image::ImageU8 pad_to_multiple32(const image::ImageU8& img);

nn::Tensor images_to_tensor(const std::vector<const image::ImageU8*>& batch);

}  // namespace ctdet::training
