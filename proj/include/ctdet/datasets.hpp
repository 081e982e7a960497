// SPDX-License-Identifier: Apache-2.0
//
// Data ingestion and generation: ICDAR-format ground-truth parsing,
// SSD-style scale+crop augmentation, and a deterministic synthetic
// scene-text generator with exact quadrilateral ground truth.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ctdet/common.hpp"
#include "ctdet/targets.hpp"

namespace ctdet::datasets {

using targets::AnnotatedImage;
using targets::Instance;

struct AugmentConfig {
  bool enabled = true;
  double scale_min = 0.5;
  double scale_max = 2.0;
  int crop_size = 512;            // divisible by 32
  double min_crop_overlap = 0.3;  // surviving-area fraction below which an instance
                                  // becomes don't-care

  void validate() const;
};

enum class Background { Noise, Gradient, Texture };

struct SynthConfig {
  int canvas = 256;
  int words_min = 2;
  int words_max = 5;
  double rotation_range = 0.35;  // radians, symmetric about 0
  double font_height_min = 12.0;
  double font_height_max = 28.0;
  Background background = Background::Noise;
  uint64_t seed = 0;
  bool allow_overlap = false;  // stress-testing only

  void validate() const;
};

enum class DatasetFormat { Icdar2015, Icdar2013, Synthetic };

struct DatasetSpec {
  DatasetFormat format = DatasetFormat::Synthetic;
  std::string root;  // for icdar formats: directory with images/ and gt/ or a manifest
  std::string split = "train";
  int synth_count = 8;
  SynthConfig synth;
  AugmentConfig augment;
};

const char* dataset_format_name(DatasetFormat f);
DatasetFormat dataset_format_from_name(const std::string& s);
const char* background_name(Background b);
Background background_from_name(const std::string& s);

using WarnFn = std::function<void(const std::string&)>;

// One instance per line: "x1,y1,...,y4,transcription" or the ICDAR2013
// rectangle form "xmin,ymin,xmax,ymax,transcription". Tolerates a UTF-8 BOM
// and CR line endings. Malformed lines throw DataError with file and line;
// unusable vertex orders are repaired when possible and flagged don't-care
// via `warn`.
std::vector<Instance> parse_icdar_gt(const std::string& path, const WarnFn& warn = {});
std::vector<Instance> parse_icdar_gt_text(const std::string& text, const std::string& name,
                                          const WarnFn& warn = {});
std::string serialize_gt(const std::vector<Instance>& instances);

// Prediction files: "x1,y1,...,y4,score" per line.
std::vector<geometry::Detection> parse_predictions(const std::string& path);
std::string serialize_predictions(const std::vector<geometry::Detection>& dets);

// Uniform scale in [scale_min, scale_max], then a crop_size x crop_size crop
// padded with mid-gray. Instances losing more than (1 - min_crop_overlap) of
// their area become don't-care; instances missing the window entirely are
// dropped. Identity when cfg.enabled is false.
AnnotatedImage augment(const AnnotatedImage& sample, const AugmentConfig& cfg, Rng& rng);

// Deterministic per (cfg.seed, index); images carry high-contrast glyph-block
// words whose exact quads are the ground truth.
AnnotatedImage generate_synthetic_image(const SynthConfig& cfg, int index);
std::vector<AnnotatedImage> generate_synthetic(const SynthConfig& cfg, int n);

// Dataset directory layout: images/NNNNNN.ppm, gt/NNNNNN.txt, manifest.txt
// with tab-separated image/gt pairs.
void write_dataset(const std::string& dir, const std::vector<AnnotatedImage>& samples);
std::vector<AnnotatedImage> load_dataset_dir(const std::string& dir, const WarnFn& warn = {});
std::vector<AnnotatedImage> load_dataset(const DatasetSpec& spec, const WarnFn& warn = {});

}  // namespace ctdet::datasets
