// SPDX-License-Identifier: Apache-2.0
//
// Capacity study harness: trains each variant with an identical schedule and
// seed, then evaluates on the training set itself to measure fitting ability.
#pragma once

#include <vector>

#include "ctdet/eval.hpp"
#include "ctdet/training.hpp"

namespace ctdet::eval {

struct VariantRunResult {
  model::VariantKind kind = model::VariantKind::Baseline;
  EvalResult train_set_eval;
  losses::LossReport final_loss;
  int steps = 0;
  bool diverged = false;
  std::string message;
  double wall_seconds = 0.0;
};

// `base` supplies the shared seed, backbone, schedule and dataset; the
// variant field is overridden per run. Divergent runs are reported, not
// fatal. Each run writes under base.out_dir/<variant>.
std::vector<VariantRunResult> capacity_study(const training::RunConfig& base,
                                             const std::vector<model::VariantKind>& variants,
                                             std::ostream* console = nullptr);

std::string capacity_table(const std::vector<VariantRunResult>& rows);

}  // namespace ctdet::eval
