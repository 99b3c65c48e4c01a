#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/core/image_io.hpp"
#include "bicross/eval/loss_suite.hpp"
#include "bicross/eval/render.hpp"
#include "bicross/eval/report.hpp"
#include "bicross/spike/simulator.hpp"
#include "bicross/spike/spk_io.hpp"
#include "bicross/synth/dataset.hpp"
#include "bicross/synth/scene.hpp"
#include "bicross/train/checkpoint.hpp"
#include "bicross/train/config.hpp"
#include "bicross/train/data.hpp"
#include "bicross/train/pipeline.hpp"
#include "bicross/train/trainer.hpp"

namespace bicross::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr const char* kSeedEnv = "BICROSS_SEED";
inline constexpr double kGradcheckTolerance = 1e-4;

namespace fs = std::filesystem;

// Seed from the environment, if set.
inline std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv(kSeedEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  const std::string s(v);
  if (s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(std::string(kSeedEnv) + " must be a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(std::string(kSeedEnv) + " is out of range: '" + s + "'");
  }
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

inline void print_resolved(std::ostream& out, const nlohmann::json& cfg, const std::string& seed) {
  out << "resolved config: " << cfg.dump() << "\n";
  out << "seed: " << seed << "\n";
}

// ---- make-dataset ---------------------------------------------------------

struct MakeDatasetOptions {
  std::string out;
  std::string config;
  bool desk = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_source;
  std::optional<int> n_target;
  std::optional<std::string> shift;
  std::optional<double> strength;
  std::optional<double> theta;
  std::optional<int> interp;
  std::optional<int> threads;
  bool dry_run = false;
};

inline synth::DatasetConfig resolve_dataset(const MakeDatasetOptions& o) {
  synth::DatasetConfig c = o.desk ? train::desk_dataset(synth::DatasetConfig{}.seed) : synth::DatasetConfig{};
  if (!o.config.empty()) {
    try {
      synth::from_json(read_json_file(o.config), c);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad dataset config value: " + std::string(e.what()));
    }
  }
  if (o.seed) c.seed = *o.seed;
  if (o.n_source) c.n_source = *o.n_source;
  if (o.n_target) c.n_target = *o.n_target;
  if (o.shift) c.target_shift = synth::shift_from_string(*o.shift);
  if (o.strength) c.shift_strength = *o.strength;
  if (o.theta) c.theta = *o.theta;
  if (o.interp) c.interp_factor = *o.interp;
  if (o.threads) c.threads = *o.threads;
  if (auto s = env_seed()) c.seed = *s;
  c.validate();
  return c;
}

inline int run_make_dataset(const MakeDatasetOptions& o, std::ostream& out) {
  const auto cfg = resolve_dataset(o);
  nlohmann::json j = cfg;
  j["threads"] = cfg.threads;
  print_resolved(out, j, std::to_string(cfg.seed));
  if (o.dry_run) {
    out << "plan: write " << cfg.n_source << " source and " << cfg.n_target << " target samples ("
        << synth::to_string(cfg.target_shift) << " shift) plus " << synth::kManifestName << " to " << o.out << "\n";
    return kExitOk;
  }
  const auto m = synth::make_dataset(cfg, o.out);
  out << "wrote " << m.samples.size() << " samples to " << (fs::path(o.out) / synth::kManifestName).string() << "\n";
  return kExitOk;
}

// ---- encode ---------------------------------------------------------------

struct EncodeOptions {
  std::string input;
  std::string output;
  std::string rate_image;
  double theta = 0.4;
  double freq = 1280.0;
  double dt = synth::SceneConfig{}.exposure_dt;
  int interp = 1;
  int threads = 1;
  std::string reset = "hard";
  bool dry_run = false;
};

inline bool is_pnm(const fs::path& p) {
  const auto e = p.extension().string();
  return e == ".pgm" || e == ".ppm" || e == ".pnm";
}

inline std::vector<fs::path> frame_files(const fs::path& input) {
  if (!fs::exists(input)) throw IoError("input not found: " + input.string());
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_regular_file() && is_pnm(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .pgm/.ppm frames in " + input.string());
  return files;
}

// 8-bit frames to normalized luminance; RGB frames go through the luma weights.
inline spike::LuminanceSequence load_frames(const std::vector<fs::path>& files, double dt) {
  spike::LuminanceSequence lum;
  for (std::size_t k = 0; k < files.size(); ++k) {
    const Image8 img = read_pnm(files[k]);
    if (k == 0) {
      lum = spike::LuminanceSequence(static_cast<int>(files.size()), img.height, img.width, dt);
    } else if (img.height != lum.h || img.width != lum.w) {
      throw InvalidInput(files[k].string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " but the first frame is " + std::to_string(lum.w) + "x" + std::to_string(lum.h));
    }
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const std::size_t p = (static_cast<std::size_t>(y) * img.width + x) * img.channels;
        double v;
        if (img.channels == 3) {
          v = synth::luma(img.pixels[p] / 255.0, img.pixels[p + 1] / 255.0, img.pixels[p + 2] / 255.0);
        } else {
          v = img.pixels[p] / 255.0;
        }
        lum.at(static_cast<int>(k), y, x) = v;
      }
    }
  }
  return lum;
}

inline spike::ResetMode parse_reset(const std::string& s) {
  if (s == "hard") return spike::ResetMode::hard;
  if (s == "residual") return spike::ResetMode::residual;
  throw InvalidParameter("unknown reset mode '" + s + "' (expected hard or residual)");
}

inline int run_encode(const EncodeOptions& o, std::ostream& out) {
  spike::SimulatorConfig sim;
  sim.theta = o.theta;
  sim.freq_hz = o.freq;
  sim.reset = parse_reset(o.reset);
  sim.threads = o.threads;
  if (!(o.theta > 0.0)) throw InvalidParameter("theta must be positive");
  if (!(o.freq > 0.0)) throw InvalidParameter("freq must be positive");
  if (!(o.dt > 0.0)) throw InvalidParameter("dt must be positive");
  if (o.interp < 1) throw InvalidParameter("interp must be >= 1");
  if (o.threads < 1) throw InvalidParameter("threads must be >= 1");
  const auto files = frame_files(o.input);
  print_resolved(out,
                 {{"input", o.input}, {"frames", files.size()}, {"output", o.output}, {"theta", o.theta},
                  {"freq_hz", o.freq}, {"dt", o.dt}, {"interp", o.interp}, {"reset", o.reset}, {"threads", o.threads},
                  {"rate_image", o.rate_image}},
                 "none (encoding is deterministic)");
  if (o.dry_run) {
    out << "plan: encode " << files.size() << " frame(s) x" << o.interp << " into " << o.output;
    if (!o.rate_image.empty()) out << " and write the firing-rate image to " << o.rate_image;
    out << "\n";
    return kExitOk;
  }
  const auto lum = load_frames(files, o.dt);
  const auto stream = spike::simulate_spikes(spike::interpolate_frames(lum, o.interp), sim);
  spike::write_spk(stream, o.output);
  out << "wrote " << o.output << " (T=" << stream.t << ", H=" << stream.h << ", W=" << stream.w << ")\n";
  if (!o.rate_image.empty()) {
    write_pnm(Image8{stream.w, stream.h, 1, spike::firing_rate_image(stream)}, o.rate_image);
    out << "wrote " << o.rate_image << "\n";
  }
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainOptions {
  std::string stage = "all";
  std::string config;
  std::string resume;
  std::string from;
  std::string dataset;
  std::string out;
  bool desk = false;
  bool dry_run = false;
};

inline train::TrainConfig resolve_train(const std::string& config, bool desk, const std::string& dataset,
                                        const std::string& out_dir) {
  train::TrainConfig c = desk ? train::desk_profile() : train::paper_profile();
  if (!config.empty()) c.update_from_flat_json(read_json_file(config));
  if (!dataset.empty()) c.dataset = dataset;
  if (!out_dir.empty()) c.out_dir = out_dir;
  if (auto s = env_seed()) c.seed = *s;
  c.validate();
  return c;
}

// Keys in which a checkpoint's config differs from the current one; paths are ignored.
inline std::vector<std::string> config_differences(const train::TrainConfig& cfg, const nlohmann::json& saved) {
  std::vector<std::string> diff;
  const auto now = cfg.to_flat_json();
  for (const auto& [key, v] : now.items()) {
    if (key == "dataset" || key == "out_dir") continue;
    if (!saved.contains(key) || saved.at(key) != v) diff.push_back(key);
  }
  return diff;
}

inline std::string upstream_stage(const std::string& stage) {
  if (stage == train::kStageModality) return train::kStagePretrain;
  if (stage == train::kStageDomain) return train::kStageModality;
  return {};
}

inline int run_train(const TrainOptions& o, std::ostream& out) {
  static const std::vector<std::string> stages{train::kStagePretrain, train::kStageModality, train::kStageDomain,
                                               train::kStageSource, "all"};
  if (std::find(stages.begin(), stages.end(), o.stage) == stages.end()) {
    throw ConfigError("unknown stage '" + o.stage + "'");
  }
  const auto cfg = resolve_train(o.config, o.desk, o.dataset, o.out);
  print_resolved(out, cfg.to_flat_json(), std::to_string(cfg.seed));
  const fs::path out_dir = cfg.out_dir;

  if (o.stage == "all") {
    if (!o.resume.empty() || !o.from.empty()) throw ConfigError("--resume and --from apply to single stages only");
    if (o.dry_run) {
      out << "plan: pretrain, modality, domain and source stages on " << cfg.dataset << ", writing checkpoints, "
          << eval::kMetricLogName << " and " << eval::kConfigName << " to " << out_dir.string() << "\n";
      return kExitOk;
    }
    const auto r = train::run_pipeline(cfg, out_dir, [&](const std::string& s) { out << "stage " << s << std::endl; });
    out << "source-only target: " << nlohmann::json(r.baseline_target).dump() << "\n";
    out << "cross-domain target: " << nlohmann::json(r.bicross_target).dump() << "\n";
    out << "uncertainty rank correlation: " << r.uncertainty_correlation << "\n";
    out << "seconds: " << r.seconds << "\n";
    return kExitOk;
  }

  // upstream checkpoint first, so a missing file fails before any data is read
  std::optional<train::RunState> upstream;
  fs::path upstream_path;
  const std::string up = upstream_stage(o.stage);
  if (!up.empty()) {
    upstream_path = o.from.empty() ? out_dir / (up + ".ckpt") : fs::path(o.from);
    if (!fs::exists(upstream_path)) {
      throw IoError(up + " checkpoint not found: " + upstream_path.string() + " (run `train --stage " + up +
                    "` first or pass --from)");
    }
    upstream = train::checkpoint_load(upstream_path);
  } else if (!o.from.empty()) {
    throw ConfigError("--from does not apply to stage '" + o.stage + "'");
  }
  std::optional<train::RunState> resume;
  if (!o.resume.empty()) {
    resume = train::checkpoint_load(o.resume);
    const auto diff = config_differences(cfg, resume->config);
    if (!diff.empty()) {
      std::string keys;
      for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
      throw ConfigError("resume checkpoint " + o.resume + " was written with a different config (" + keys + ")");
    }
  }

  const fs::path target = out_dir / (o.stage + ".ckpt");
  if (o.dry_run) {
    out << "plan: stage " << o.stage << " on " << cfg.dataset;
    if (upstream) out << " from " << upstream_path.string();
    if (resume) out << " resuming at epoch " << resume->epoch;
    out << ", writing " << target.string() << ", " << eval::kMetricLogName << " and " << eval::kConfigName << "\n";
    return kExitOk;
  }
  auto data = std::make_shared<const train::DataSplits>(train::load_splits(cfg));
  train::write_resolved_config(cfg, out_dir);
  train::Trainer tr(cfg, data, out_dir);
  if (o.stage == train::kStagePretrain) {
    tr.pretrain_rgb(resume);
  } else if (o.stage == train::kStageModality) {
    tr.train_cross_modality(*upstream, resume);
  } else if (o.stage == train::kStageDomain) {
    tr.train_cross_domain(*upstream, resume);
  } else {
    tr.train_source_only(resume);
  }
  out << "wrote " << target.string() << "\n";
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string model;
  std::string split = "target_test";
  std::string dataset;
  std::string render;
  int limit = 4;
  bool dry_run = false;
};

inline std::string default_model(const std::string& stage) {
  if (stage == train::kStagePretrain) return "rgb";
  if (stage == train::kStageDomain) return "student";
  return "spike";
}

inline const std::vector<train::PreparedSample>& pick_split(const train::DataSplits& d, const std::string& split) {
  if (split == "source_train") return d.src_train;
  if (split == "source_holdout") return d.src_holdout;
  if (split == "target_train") return d.tgt_train;
  if (split == "target_test") return d.tgt_test;
  throw ConfigError("unknown split '" + split + "'");
}

inline int run_eval(const EvalOptions& o, std::ostream& out) {
  const auto ckpt = train::checkpoint_load(o.checkpoint);
  auto cfg = train::TrainConfig::from_flat_json(ckpt.config);
  if (!o.dataset.empty()) cfg.dataset = o.dataset;
  const std::string model = o.model.empty() ? default_model(ckpt.stage) : o.model;
  const auto& params = ckpt.model(model);
  print_resolved(out, cfg.to_flat_json(), std::to_string(cfg.seed) + " (from checkpoint; splits depend on it)");
  if (o.limit < 0) throw InvalidParameter("limit must be >= 0");
  if (o.dry_run) {
    out << "plan: evaluate model '" << model << "' from " << o.checkpoint << " on " << o.split;
    if (!o.render.empty()) out << ", rendering up to " << o.limit << " samples into " << o.render;
    out << "\n";
    return kExitOk;
  }
  auto data = std::make_shared<const train::DataSplits>(train::load_splits(cfg));
  const auto& samples = pick_split(*data, o.split);
  if (samples.empty()) throw IoError("split " + o.split + " is empty");
  train::Trainer tr(cfg, data);
  const net::DepthNet& net = model == "rgb" ? tr.rgb_net() : tr.spike_net();
  const auto m = tr.evaluate(net, params, samples);
  nlohmann::json j{{"checkpoint", o.checkpoint}, {"stage", ckpt.stage}, {"model", model},
                   {"split", o.split},          {"metrics", m}};
  j["uncertainty_rank_correlation"] = tr.uncertainty_rank_correlation(net, params, samples);
  out << j.dump(2) << "\n";
  if (!o.render.empty()) {
    fs::create_directories(o.render);
    const auto n = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(o.limit));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = samples[i];
      const auto [depth, unc] = tr.predict(net, params, s);
      const fs::path base = fs::path(o.render) / s.id;
      eval::render_map(depth, base.string() + "_depth.pgm");
      eval::render_map(unc, base.string() + "_unc.pgm");
      eval::render_map(s.depth, base.string() + "_gt.pgm");
    }
    out << "rendered " << n << " sample(s) into " << o.render << "\n";
  }
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

struct GradcheckOptions {
  bool all = false;
  std::vector<std::string> only;
  std::uint64_t seed = 7;
  bool dry_run = false;
};

inline int run_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  std::uint64_t seed = o.seed;
  if (auto s = env_seed()) seed = *s;
  const losses::LossConfig lc;
  print_resolved(out, {{"losses", nlohmann::json(lc)}, {"tolerance", kGradcheckTolerance}, {"only", o.only}},
                 std::to_string(seed));
  if (o.dry_run) {
    out << "plan: finite-difference checks of every loss"
        << (o.only.empty() ? std::string() : " (reporting only the selected ones)") << "; nothing is written\n";
    return kExitOk;
  }
  const auto checks = eval::run_loss_gradchecks(seed, lc);
  bool ok = true;
  std::size_t shown = 0;
  out << std::left << std::setw(28) << "loss" << std::setw(8) << "shape" << std::setw(9) << "coords"
      << std::setw(14) << "max_rel_err" << "status\n";
  for (const auto& c : checks) {
    if (!o.only.empty() && std::find(o.only.begin(), o.only.end(), c.name) == o.only.end()) continue;
    ++shown;
    const bool pass = c.result.max_rel_error < kGradcheckTolerance;
    ok = ok && pass;
    std::ostringstream err;
    err << std::scientific << std::setprecision(2) << c.result.max_rel_error;
    out << std::left << std::setw(28) << c.name << std::setw(8)
        << (std::to_string(c.h) + "x" + std::to_string(c.w)) << std::setw(9) << c.result.checked << std::setw(14)
        << err.str() << (pass ? "PASS" : "FAIL") << "\n";
  }
  if (shown == 0) throw ConfigError("no gradient check matches the requested names");
  return ok ? kExitOk : kExitFailure;
}

// ---- report ---------------------------------------------------------------

struct ReportOptions {
  std::string run;
  bool dry_run = false;
};

inline int run_report(const ReportOptions& o, std::ostream& out) {
  const fs::path dir = o.run;
  std::string hash = "unknown";
  if (fs::exists(dir / eval::kConfigName)) {
    const auto cfg = train::TrainConfig::from_flat_json(read_json_file(dir / eval::kConfigName));
    print_resolved(out, cfg.to_flat_json(), std::to_string(cfg.seed));
  } else {
    print_resolved(out, {{"run", o.run}}, hash);
  }
  if (o.dry_run) {
    out << "plan: read " << (dir / eval::kMetricLogName).string() << ", write " << (dir / eval::kReportName).string()
        << " and " << (dir / eval::kSummaryName).string() << "\n";
    if (!fs::exists(dir / eval::kMetricLogName)) out << "note: " << eval::kMetricLogName << " is missing\n";
    return kExitOk;
  }
  const auto rep = eval::report(dir);
  out << rep.text;
  return kExitOk;
}

// ---- dispatch -------------------------------------------------------------

// Parses argv, runs one subcommand and maps errors onto exit codes:
// 0 success, 1 runtime failure, 2 usage, config or format error.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spike-camera depth estimation with cross-modality and cross-domain training"};
  app.name("bicross");
  app.require_subcommand(0, 1);

  MakeDatasetOptions mk;
  auto* c_mk = app.add_subcommand("make-dataset", "Generate a synthetic source/target dataset");
  c_mk->add_option("--out", mk.out, "Output directory")->required();
  c_mk->add_option("--config", mk.config, "Dataset config (JSON)");
  c_mk->add_flag("--desk", mk.desk, "Desk-scale preset (200 + 200 samples, fog)");
  c_mk->add_option("--seed", mk.seed, "Base seed");
  c_mk->add_option("--n-source", mk.n_source, "Source sample count");
  c_mk->add_option("--n-target", mk.n_target, "Target sample count");
  c_mk->add_option("--shift", mk.shift, "Target shift: none, fog, rain_noise, layout");
  c_mk->add_option("--strength", mk.strength, "Shift strength in [0, 1]");
  c_mk->add_option("--theta", mk.theta, "Firing threshold");
  c_mk->add_option("--interp", mk.interp, "Frame interpolation factor");
  c_mk->add_option("--threads", mk.threads, "Worker threads");
  c_mk->add_flag("--dry-run", mk.dry_run, "Print the plan and write nothing");

  EncodeOptions en;
  auto* c_en = app.add_subcommand("encode", "Encode PGM/PPM frames into a .spk stream");
  c_en->add_option("--input", en.input, "Frame file or directory of frames")->required();
  c_en->add_option("--output", en.output, "Output .spk file")->required();
  c_en->add_option("--theta", en.theta, "Firing threshold")->capture_default_str();
  c_en->add_option("--freq", en.freq, "Firing clock in Hz (metadata)")->capture_default_str();
  c_en->add_option("--dt", en.dt, "Integration step per frame")->capture_default_str();
  c_en->add_option("--interp", en.interp, "Linear interpolation factor")->capture_default_str();
  c_en->add_option("--reset", en.reset, "hard or residual")->capture_default_str();
  c_en->add_option("--threads", en.threads, "Row-band threads")->capture_default_str();
  c_en->add_option("--rate-image", en.rate_image, "Also write the firing-rate image (PGM)");
  c_en->add_flag("--dry-run", en.dry_run, "Print the plan and write nothing");

  TrainOptions tr;
  auto* c_tr = app.add_subcommand("train", "Run a training stage");
  c_tr->add_option("--stage", tr.stage, "pretrain, modality, domain, source or all")->capture_default_str();
  c_tr->add_option("--config", tr.config, "Flat JSON config");
  c_tr->add_option("--resume", tr.resume, "Checkpoint of the same stage to continue");
  c_tr->add_option("--from", tr.from, "Upstream checkpoint (default <out>/<previous stage>.ckpt)");
  c_tr->add_option("--dataset", tr.dataset, "Manifest or dataset directory");
  c_tr->add_option("--out", tr.out, "Run directory");
  c_tr->add_flag("--desk", tr.desk, "Desk-scale profile");
  c_tr->add_flag("--dry-run", tr.dry_run, "Print the plan and write nothing");

  EvalOptions ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  c_ev->add_option("--model", ev.model, "Model inside the checkpoint (default by stage)");
  c_ev->add_option("--split", ev.split, "source_train, source_holdout, target_train or target_test")
      ->capture_default_str();
  c_ev->add_option("--dataset", ev.dataset, "Override the dataset path");
  c_ev->add_option("--render", ev.render, "Write depth, uncertainty and ground-truth maps here");
  c_ev->add_option("--limit", ev.limit, "Samples to render")->capture_default_str();
  c_ev->add_flag("--dry-run", ev.dry_run, "Print the plan and write nothing");

  GradcheckOptions gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  c_gc->add_flag("--all", gc.all, "Check every loss (default)");
  c_gc->add_option("--only", gc.only, "Restrict the table to these losses");
  c_gc->add_option("--seed", gc.seed, "Instance seed")->capture_default_str();
  c_gc->add_flag("--dry-run", gc.dry_run, "Print the plan and write nothing");

  ReportOptions rp;
  auto* c_rp = app.add_subcommand("report", "Summarize a run directory");
  c_rp->add_option("--run", rp.run, "Run directory")->required();
  c_rp->add_flag("--dry-run", rp.dry_run, "Print the plan and write nothing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (app.get_subcommands().empty()) {
    err << app.help();
    return kExitUsage;
  }
  try {
    if (c_mk->parsed()) return run_make_dataset(mk, out);
    if (c_en->parsed()) return run_encode(en, out);
    if (c_tr->parsed()) return run_train(tr, out);
    if (c_ev->parsed()) return run_eval(ev, out);
    if (c_gc->parsed()) return run_gradcheck(gc, out);
    if (c_rp->parsed()) return run_report(rp, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidParameter& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace bicross::cli
