#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/eval/metrics.hpp"
#include "bicross/train/config.hpp"

namespace bicross::eval {

inline constexpr const char* kMetricLogName = "metrics.jsonl";
inline constexpr const char* kConfigName = "config.json";
inline constexpr const char* kReportName = "report.txt";
inline constexpr const char* kSummaryName = "summary.json";

struct EvalRow {
  std::string stage;
  std::string model;
  std::string split;
  std::optional<int> epoch;
  bool final = false;
  nlohmann::json metrics;  // kept as parsed so values print verbatim
};

struct Comparison {
  nlohmann::json baseline;
  nlohmann::json ours;
  double abs_rel_improvement = 0.0;  // (base - ours) / base
  double delta1_gain = 0.0;
};

struct Report {
  std::vector<EvalRow> rows;
  std::optional<Comparison> comparison;
  std::vector<std::string> warnings;
  std::string text;
  nlohmann::json summary;
};

// Relative AbsRel drop of `ours` against `base`.
inline double improvement(double base, double ours) {
  if (!(base > 0.0)) throw DegenerateInput("improvement: baseline value must be positive");
  return (base - ours) / base;
}

namespace detail {

inline std::vector<EvalRow> read_eval_rows(const std::filesystem::path& log, std::vector<std::string>& warnings) {
  std::ifstream f(log);
  if (!f) throw IoError("cannot read " + log.string());
  std::vector<EvalRow> rows;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      warnings.push_back(log.filename().string() + " line " + std::to_string(n) + " is not JSON; skipped");
      continue;
    }
    if (j.value("type", "") != "eval") continue;
    if (!j.contains("metrics") || !j["metrics"].is_object()) {
      warnings.push_back(log.filename().string() + " line " + std::to_string(n) + " has no metrics; skipped");
      continue;
    }
    EvalRow r;
    r.stage = j.value("stage", "?");
    r.model = j.value("model", "?");
    r.split = j.value("split", "?");
    if (j.contains("epoch") && j["epoch"].is_number_integer()) r.epoch = j["epoch"].get<int>();
    r.final = j.value("final", false);
    r.metrics = j["metrics"];
    rows.push_back(std::move(r));
  }
  return rows;
}

// The last final row matching (stage, model, split), else the last epoch row.
inline const EvalRow* pick(const std::vector<EvalRow>& rows, const std::string& stage, const std::string& model,
                           const std::string& split) {
  const EvalRow* any = nullptr;
  const EvalRow* fin = nullptr;
  for (const auto& r : rows) {
    if (r.stage != stage || r.model != model || r.split != split) continue;
    any = &r;
    if (r.final) fin = &r;
  }
  return fin ? fin : any;
}

inline std::string cell(const nlohmann::json& m, const char* key) {
  if (!m.contains(key)) return "-";
  return m[key].dump();
}

}  // namespace detail

// Reads run_dir/metrics.jsonl (and config.json when present) into a text table
// plus a machine-readable summary.
inline Report build_report(const std::filesystem::path& run_dir) {
  const auto log = run_dir / kMetricLogName;
  const auto cfg_path = run_dir / kConfigName;
  if (!std::filesystem::exists(log)) {
    throw IoError("no metric log in " + run_dir.string() + "; expected " + kMetricLogName + " (and " + kConfigName +
                  ") written by a training run");
  }
  Report rep;
  rep.rows = detail::read_eval_rows(log, rep.warnings);
  if (rep.rows.empty()) rep.warnings.push_back(std::string(kMetricLogName) + " contains no eval rows");

  nlohmann::json config_hash = nullptr;
  if (std::filesystem::exists(cfg_path)) {
    try {
      std::ifstream f(cfg_path);
      const auto cfg = train::TrainConfig::from_flat_json(nlohmann::json::parse(f));
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(cfg.hash()));
      config_hash = buf;
    } catch (const std::exception& e) {
      rep.warnings.push_back(std::string(kConfigName) + " unreadable: " + e.what());
    }
  } else {
    rep.warnings.push_back(std::string("missing ") + kConfigName + "; config_hash omitted");
  }

  const EvalRow* base = detail::pick(rep.rows, "source", "spike", "target_test");
  const EvalRow* ours = detail::pick(rep.rows, "domain", "student", "target_test");
  if (base && ours) {
    Comparison c;
    c.baseline = base->metrics;
    c.ours = ours->metrics;
    c.abs_rel_improvement = improvement(base->metrics.at("abs_rel").get<double>(), ours->metrics.at("abs_rel").get<double>());
    c.delta1_gain = ours->metrics.at("delta1").get<double>() - base->metrics.at("delta1").get<double>();
    rep.comparison = c;
  } else {
    rep.warnings.push_back("source-only or cross-domain target rows missing; no comparison");
  }

  std::ostringstream t;
  t << "stage     model    split           epoch  abs_rel  sq_rel  rmse  delta1  delta2  delta3\n";
  for (const auto& r : rep.rows) {
    t << r.stage << "  " << r.model << "  " << r.split << "  " << (r.epoch ? std::to_string(*r.epoch) : "final") << "  "
      << detail::cell(r.metrics, "abs_rel") << "  " << detail::cell(r.metrics, "sq_rel") << "  "
      << detail::cell(r.metrics, "rmse") << "  " << detail::cell(r.metrics, "delta1") << "  "
      << detail::cell(r.metrics, "delta2") << "  " << detail::cell(r.metrics, "delta3") << "\n";
  }
  if (rep.comparison) {
    const auto& c = *rep.comparison;
    char buf[160];
    std::snprintf(buf, sizeof buf, "\nsource-only vs cross-domain student on target_test: abs_rel %.4f -> %.4f (%.1f%%), delta1 %+.4f\n",
                  c.baseline.at("abs_rel").get<double>(), c.ours.at("abs_rel").get<double>(),
                  100.0 * c.abs_rel_improvement, c.delta1_gain);
    t << buf;
  }
  for (const auto& w : rep.warnings) t << "warning: " << w << "\n";
  rep.text = t.str();

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    nlohmann::json j{{"stage", r.stage}, {"model", r.model}, {"split", r.split}, {"metrics", r.metrics}};
    j["epoch"] = r.epoch ? nlohmann::json(*r.epoch) : nlohmann::json(nullptr);
    rows.push_back(std::move(j));
  }
  rep.summary = {{"stage", rep.rows.empty() ? nlohmann::json(nullptr) : nlohmann::json(rep.rows.back().stage)},
                 {"metrics", rows},
                 {"config_hash", config_hash},
                 {"warnings", rep.warnings}};
  if (rep.comparison) {
    rep.summary["comparison"] = {{"baseline", rep.comparison->baseline},
                                 {"bicross", rep.comparison->ours},
                                 {"abs_rel_improvement", rep.comparison->abs_rel_improvement},
                                 {"delta1_gain", rep.comparison->delta1_gain}};
  }
  return rep;
}

// build_report plus report.txt and summary.json written into run_dir.
inline Report report(const std::filesystem::path& run_dir) {
  Report rep = build_report(run_dir);
  {
    std::ofstream f(run_dir / kReportName, std::ios::trunc);
    f << rep.text;
    if (!f) throw IoError("cannot write " + (run_dir / kReportName).string());
  }
  std::ofstream f(run_dir / kSummaryName, std::ios::trunc);
  f << rep.summary.dump(2) << '\n';
  if (!f) throw IoError("cannot write " + (run_dir / kSummaryName).string());
  return rep;
}

}  // namespace bicross::eval
