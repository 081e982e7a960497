// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder detection network and the five task wirings:
//   Baseline  - detection head only.
//   Aux1      - shared encoder, twin decoders (detection / contour).
//   Aux2      - fully shared encoder+decoder, extra contour output channel.
//   Cascade1  - standalone contour net; its map joins the image as a 4th
//               input channel of a separate detection net (nothing shared).
//   Cascade2  - shared encoder+decoder; contour map concatenated with the
//               last decoder feature, then three 3x3 depth-32 convs before
//               the detection head.
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctdet/nn.hpp"

namespace ctdet::model {

enum class VariantKind { Baseline, Aux1, Aux2, Cascade1, Cascade2 };

const char* variant_name(VariantKind k);
VariantKind variant_from_name(const std::string& name);
bool variant_has_contour(VariantKind k);

struct BackboneConfig {
  std::vector<int> stage_channels{16, 32, 64, 128, 256};
  std::vector<int> decoder_channels{128, 64, 32};
  int input_size = 256;  // divisible by 32
  int gn_groups = 8;
  // Upper bound (input px) for a predicted box side; 0 means input_size.
  double geo_scale = 0.0;
  std::string pretrained_id;
  bool stop_contour_gradient = false;  // ablation: cut the cascade merge gradient

  double effective_geo_scale() const { return geo_scale > 0.0 ? geo_scale : input_size; }
  void validate() const;
};

struct ForwardMaps {
  nn::Var score;      // N,1,H/4,W/4 in (0,1)
  nn::Var distances;  // N,4,H/4,W/4 >= 0, output-map pixel units
  nn::Var angle;      // N,1,H/4,W/4 in (-pi/4, pi/4)
  nn::Var contour;    // N,1,H/4,W/4 in (0,1); null for Baseline
};

struct NetworkOutputs {
  nn::Tensor score, distances, angle, contour;
  bool has_contour = false;
};

struct SubsystemCount {
  std::string name;
  int64_t params = 0;
  bool used_by_detection = false;
  bool used_by_contour = false;
};

struct SharedParameterReport {
  std::vector<SubsystemCount> subsystems;
  int64_t total = 0;
  int64_t shared = 0;  // parameters in both the contour and detection graphs
  bool has_contour_branch = false;
};

class Model {
 public:
  Model(VariantKind kind, BackboneConfig cfg, uint64_t seed);

  // images: N,3,H,W with values in [0,1]; H and W divisible by 32.
  ForwardMaps forward(nn::Tape& tape, const nn::Tensor& images) const;
  // Forward on a throwaway tape; checks outputs for non-finite values and
  // throws NumericError naming the first offending layer.
  NetworkOutputs infer(const nn::Tensor& images) const;

  VariantKind kind() const { return kind_; }
  const BackboneConfig& config() const { return cfg_; }
  const std::vector<nn::Parameter*>& parameters() const { return param_ptrs_; }
  nn::Parameter* find_parameter(const std::string& name) const;
  int64_t parameter_count() const;
  SharedParameterReport shared_parameter_report() const;
  void zero_grads() const;

 private:
  struct Impl;
  VariantKind kind_;
  BackboneConfig cfg_;
  std::shared_ptr<Impl> impl_;
  std::vector<std::unique_ptr<nn::Parameter>> params_;
  std::vector<nn::Parameter*> param_ptrs_;
};

}  // namespace ctdet::model
