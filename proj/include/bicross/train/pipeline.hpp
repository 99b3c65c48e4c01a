#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>

#include "json.hpp"

#include "bicross/eval/metrics.hpp"
#include "bicross/synth/dataset.hpp"
#include "bicross/train/checkpoint.hpp"
#include "bicross/train/config.hpp"
#include "bicross/train/data.hpp"
#include "bicross/train/trainer.hpp"

namespace bicross::train {

struct PipelineResult {
  eval::Metrics baseline_target;  // source-only spike model on the target test split
  eval::Metrics modality_target;  // cross-modality student before adaptation
  eval::Metrics bicross_target;   // student after the cross-domain stage
  double uncertainty_correlation = 0.0;
  double seconds = 0.0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path baseline_checkpoint;
};

inline void write_resolved_config(const TrainConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir / "config.json", std::ios::trunc);
  nlohmann::json j = cfg.to_flat_json();
  f << j.dump(2) << '\n';
  if (!f) throw IoError("cannot write " + (out_dir / "config.json").string());
}

inline nlohmann::json eval_row(const std::string& stage, const std::string& model, const std::string& split,
                               const eval::Metrics& m) {
  return {{"type", "eval"}, {"stage", stage}, {"model", model}, {"split", split}, {"metrics", m}, {"final", true}};
}

// All stages in order, plus the source-only baseline, on an existing dataset.
inline PipelineResult run_pipeline(const TrainConfig& cfg, const std::filesystem::path& out_dir,
                                   const std::function<void(const std::string&)>& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  write_resolved_config(cfg, out_dir);
  auto data = std::make_shared<const DataSplits>(load_splits(cfg));
  Trainer tr(cfg, data, out_dir);
  PipelineResult res;

  note("pretrain");
  const RunState pre = tr.pretrain_rgb();
  note("modality");
  const RunState mod = tr.train_cross_modality(pre);
  res.uncertainty_correlation = tr.uncertainty_rank_correlation(tr.spike_net(), mod.model("spike"), data->src_holdout);
  res.modality_target = tr.evaluate(tr.spike_net(), mod.model("spike"), data->tgt_test);
  note("domain");
  const RunState dom = tr.train_cross_domain(mod);
  res.bicross_target = tr.evaluate(tr.spike_net(), dom.model("student"), data->tgt_test);
  note("source");
  const RunState base = tr.train_source_only();
  res.baseline_target = tr.evaluate(tr.spike_net(), base.model("spike"), data->tgt_test);

  tr.log().append(eval_row(kStageSource, "spike", "target_test", res.baseline_target));
  tr.log().append(eval_row(kStageModality, "spike", "target_test", res.modality_target));
  tr.log().append(eval_row(kStageDomain, "student", "target_test", res.bicross_target));
  tr.log().append({{"type", "uncertainty"}, {"stage", kStageModality}, {"split", "source_holdout"},
                   {"rank_correlation", res.uncertainty_correlation}});
  res.final_checkpoint = tr.checkpoint_path(kStageDomain);
  res.baseline_checkpoint = tr.checkpoint_path(kStageSource);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// Desk-scale setup: 64x64, 32 spike planes, 200 + 200 samples, fog on the target domain.
inline synth::DatasetConfig desk_dataset(std::uint64_t seed) {
  synth::DatasetConfig d;
  d.seed = seed;
  d.n_source = 200;
  d.n_target = 200;
  d.target_shift = synth::ShiftKind::fog;
  d.shift_strength = 1.0;
  return d;
}

}  // namespace bicross::train
