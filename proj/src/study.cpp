// SPDX-License-Identifier: Apache-2.0
#include "ctdet/study.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <ostream>

namespace ctdet::eval {

std::vector<VariantRunResult> capacity_study(const training::RunConfig& base,
                                             const std::vector<model::VariantKind>& variants,
                                             std::ostream* console) {
  std::vector<VariantRunResult> out;
  for (model::VariantKind kind : variants) {
    training::RunConfig cfg = base;
    cfg.variant = kind;
    cfg.out_dir =
        (std::filesystem::path(base.out_dir) / model::variant_name(kind)).string();

    VariantRunResult row;
    row.kind = kind;
    auto t0 = std::chrono::steady_clock::now();
    try {
      if (console) *console << "== variant " << model::variant_name(kind) << "\n";
      training::TrainResult tr = training::train(cfg, console);
      row.steps = tr.steps_completed;
      row.diverged = tr.diverged;
      row.message = tr.divergence_message;
      row.final_loss = tr.last_report;
      if (!tr.diverged) {
        training::LoadedCheckpoint ck = training::load_checkpoint(tr.final_checkpoint);
        auto data = datasets::load_dataset(cfg.dataset);
        row.train_set_eval =
            training::evaluate_on_samples(*ck.model, data, cfg.decode, 0.5);
      }
    } catch (const std::exception& e) {
      row.diverged = true;
      row.message = e.what();
    }
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(row));
  }
  return out;
}

std::string capacity_table(const std::vector<VariantRunResult>& rows) {
  std::string out = "variant,precision,recall,f1,steps,l_total,wall_s\n";
  char buf[192];
  for (const VariantRunResult& r : rows) {
    if (r.diverged) {
      std::snprintf(buf, sizeof(buf), "%s,diverged,,,%d,,%.1f\n", model::variant_name(r.kind),
                    r.steps, r.wall_seconds);
    } else {
      std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f,%d,%.6g,%.1f\n",
                    model::variant_name(r.kind), r.train_set_eval.precision,
                    r.train_set_eval.recall, r.train_set_eval.f1, r.steps,
                    r.final_loss.l_total, r.wall_seconds);
    }
    out += buf;
  }
  return out;
}

}  // namespace ctdet::eval
