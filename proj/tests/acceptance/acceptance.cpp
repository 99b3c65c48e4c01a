#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bicross/core/rng.hpp"
#include "bicross/eval/loss_suite.hpp"
#include "bicross/eval/metrics.hpp"
#include "bicross/losses/losses.hpp"
#include "bicross/net/params.hpp"
#include "bicross/spike/simulator.hpp"
#include "bicross/spike/spk_io.hpp"
#include "bicross/synth/dataset.hpp"
#include "bicross/train/pipeline.hpp"

namespace fs = std::filesystem;
using namespace bicross;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

template <typename F>
void criterion(const std::string& name, F&& f) {
  try {
    report(name, f());
  } catch (const std::exception& e) {
    report(name, {false, std::string("exception: ") + e.what()});
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Tensor> unit_vectors(SplitMix64& rng, int b, int g) {
  std::vector<Tensor> out;
  for (int i = 0; i < b; ++i) {
    Tensor v({g});
    double sq = 0.0;
    for (auto& e : v.storage()) {
      e = rng.normal();
      sq += e * e;
    }
    for (auto& e : v.storage()) e /= std::sqrt(sq);
    out.push_back(std::move(v));
  }
  return out;
}

Tensor random_map(SplitMix64& rng, int h, int w, double lo, double hi) {
  Tensor t({h, w});
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

net::ParameterSet jittered_disc(std::uint64_t seed) {
  net::ParameterSet p = losses::make_discriminator(8, 4, seed);
  SplitMix64 rng(derive_seed(seed, 77));
  for (auto& prm : p) {
    for (auto& v : prm.value.storage()) v = rng.normal(0.0, 2.0);
  }
  return p;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = eval::run_loss_gradchecks(7);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  bool sizes_ok = true;
  for (const auto& c : checks) {
    if (c.result.max_rel_error >= worst) {
      worst = c.result.max_rel_error;
      worst_name = c.name;
    }
    sizes_ok = sizes_ok && c.h >= 4 && c.h <= 8 && c.w >= 4 && c.w <= 8;
  }
  std::ostringstream d;
  d << checks.size() << " losses, worst " << worst_name << " " << worst << ", " << secs << " s";
  return {!checks.empty() && sizes_ok && worst < 1e-4 && secs < 60.0, d.str()};
}

Outcome analytic_values() {
  std::ostringstream d;
  bool ok = true;

  std::vector<Tensor> same(4, Tensor({3}, std::vector<double>{1.0, 0.0, 0.0}));
  const double ckd = losses::ckd_loss(losses::ckd_pair_prob(same, same, 0.5));
  ok = ok && std::abs(ckd - std::log(4.0)) <= 1e-9;
  d << "ckd " << ckd;

  const double l2 = std::numbers::ln2;
  const Tensor pred({1, 2}, std::vector<double>{2.0, 1.0});
  const Tensor gt({1, 2}, std::vector<double>{1.0, 1.0});
  const double sig = losses::sig_loss(pred, gt, 0.5).value;
  ok = ok && std::abs(sig - 0.375 * l2 * l2) <= 1e-9;
  d << ", sig " << sig;

  net::ParameterSet disc = losses::make_discriminator(6, 4, 1);
  for (auto& v : disc.value("disc.fc2.w").storage()) v = 0.0;
  disc.value("disc.fc2.b")[0] = 0.0;
  SplitMix64 rng(3);
  Tensor a({6}), b({6});
  for (auto& v : a.storage()) v = rng.normal();
  for (auto& v : b.storage()) v = rng.normal();
  const double glfa = losses::glfa_loss(disc, a, b, 1.0).value;
  ok = ok && std::abs(glfa - 2.0 * l2) <= 1e-9;
  d << ", glfa " << glfa;

  const double mod = losses::mod_loss({1.0, 1.0, 1.0, 1.0, 1.0});
  losses::LossConfig unc_off;
  unc_off.unc_in_domain = false;
  const double dom = losses::dom_loss({0.5, 1.0, 0.0});
  const double dom_off = losses::dom_loss({0.5, 1.0, 0.0}, unc_off);
  ok = ok && std::abs(mod - 3.2) <= 1e-12 && std::abs(dom - 0.6) <= 1e-12 && std::abs(dom_off - 0.6) <= 1e-12;
  d << ", mod " << mod << ", dom " << dom;
  return {ok, d.str()};
}

Outcome invariants() {
  std::ostringstream d;
  bool ok = true;
  SplitMix64 rng(2024);

  double row_err = 0.0;
  for (int b = 1; b <= 8; ++b) {
    for (int trial = 0; trial < 10; ++trial) {
      const int g = static_cast<int>(rng.integer(2, 16));
      const Tensor h = losses::ckd_pair_prob(unit_vectors(rng, b, g), unit_vectors(rng, b, g), rng.uniform(0.05, 2.0));
      for (int i = 0; i < b; ++i) {
        double s = 0.0;
        for (int j = 0; j < b; ++j) {
          ok = ok && h[i * b + j] >= 0.0;
          s += h[i * b + j];
        }
        row_err = std::max(row_err, std::abs(s - 1.0));
      }
    }
  }
  ok = ok && row_err <= 1e-9;
  d << "row sum err " << row_err;

  double scale_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = static_cast<int>(rng.integer(1, 8)), w = static_cast<int>(rng.integer(1, 8));
    const Tensor p = random_map(rng, h, w, 0.5, 20.0), g = random_map(rng, h, w, 0.5, 20.0);
    const double c = std::exp(rng.uniform(-3.0, 3.0)), lambda = rng.uniform();
    Tensor sp = p, sg = g;
    for (auto& v : sp.storage()) v *= c;
    for (auto& v : sg.storage()) v *= c;
    scale_err = std::max(scale_err, std::abs(losses::sig_loss(sp, sg, lambda).value - losses::sig_loss(p, g, lambda).value));
  }
  ok = ok && scale_err <= 1e-9;
  d << ", sig scale err " << scale_err;

  bool ema_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const net::ParameterSet t = jittered_disc(2 * trial + 1), s = jittered_disc(2 * trial + 2);
    const net::ParameterSet u = net::ema_update(t, s, rng.uniform());
    for (std::size_t i = 0; i < u.size(); ++i) {
      for (std::size_t j = 0; j < u[i].value.size(); ++j) {
        const double x = t[i].value[j], y = s[i].value[j];
        ema_ok = ema_ok && u[i].value[j] >= std::min(x, y) && u[i].value[j] <= std::max(x, y);
      }
    }
    ema_ok = ema_ok && net::ema_update(t, s, 1.0) == t && net::ema_update(t, s, 0.0) == s;
  }
  ok = ok && ema_ok;
  d << ", ema " << (ema_ok ? "ok" : "violated");

  bool mask_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = static_cast<int>(rng.integer(1, 12)), w = static_cast<int>(rng.integer(1, 12));
    const Tensor e = random_map(rng, h, w, 0.0, rng.uniform(0.01, 2.0));
    double mean = 0.0;
    for (double v : e.storage()) mean += v;
    mean /= static_cast<double>(e.size());
    double var = 0.0;
    for (double v : e.storage()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(e.size());
    const auto m = losses::build_mask(e);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      mask_ok = mask_ok && m.mask[i] == (e[i] <= var ? 1 : 0);
      kept += m.mask[i];
    }
    mask_ok = mask_ok && m.selected_fraction == static_cast<double>(kept) / static_cast<double>(e.size());
  }
  ok = ok && mask_ok;
  d << ", mask " << (mask_ok ? "ok" : "violated");

  bool delta_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = static_cast<int>(rng.integer(1, 16)), w = static_cast<int>(rng.integer(1, 16));
    const Tensor g = random_map(rng, h, w, 1.0, 20.0);
    Tensor p = g;
    const double spread = rng.uniform(0.0, 1.5);
    for (auto& v : p.storage()) v *= std::exp(rng.uniform(-spread, spread));
    const auto m = eval::compute_metrics(p, g);
    delta_ok = delta_ok && m.delta1 <= m.delta2 && m.delta2 <= m.delta3;
  }
  ok = ok && delta_ok;
  d << ", delta order " << (delta_ok ? "ok" : "violated");
  return {ok, d.str()};
}

Outcome spike_conservation() {
  SplitMix64 rng(99);
  int bad = 0;
  spike::SimulatorConfig cfg;
  cfg.reset = spike::ResetMode::residual;
  for (int c = 0; c < 100; ++c) {
    const int t = static_cast<int>(rng.integer(1, 256));
    cfg.theta = std::ldexp(static_cast<double>(rng.integer(1, 64)), -6);
    const double dt = std::ldexp(1.0, -static_cast<int>(rng.integer(0, 3)));
    const double lum = std::ldexp(static_cast<double>(rng.integer(0, 64)), -6) * cfg.theta / dt;
    const int h = static_cast<int>(rng.integer(1, 4)), w = static_cast<int>(rng.integer(1, 4));
    const auto s = spike::simulate_spikes(spike::LuminanceSequence(t, h, w, dt, lum), cfg);
    const auto expected = static_cast<std::size_t>(std::floor(lum * dt * t / cfg.theta)) * s.pixels();
    bad += s.total_spikes() != expected;
  }

  SplitMix64 srng(200);
  int bad_spk = 0;
  for (int c = 0; c < 200; ++c) {
    spike::SpikeStream s(static_cast<int>(srng.integer(1, 256)), static_cast<int>(srng.integer(1, 64)),
                         static_cast<int>(srng.integer(1, 64)), srng.uniform(1.0, 5000.0), srng.uniform(0.01, 4.0));
    for (auto& b : s.bits) b = static_cast<std::uint8_t>(srng.next() & 1u);
    const auto bytes = spike::encode_spk(s);
    const auto back = spike::decode_spk(bytes);
    bad_spk += !(back == s) || spike::encode_spk(back) != bytes;
  }
  std::ostringstream d;
  d << "count mismatches " << bad << "/100, spk mismatches " << bad_spk << "/200";
  return {bad == 0 && bad_spk == 0, d.str()};
}

std::string describe(const eval::Metrics& m) {
  std::ostringstream d;
  d << "AbsRel " << m.abs_rel << " delta1 " << m.delta1;
  return d.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = (fs::temp_directory_path() / "bicross_acceptance").string();
  std::uint64_t seed = 2024;
  bool skip_e2e = false;
  app.add_option("--work", work, "scratch directory for the desk runs");
  app.add_option("--seed", seed, "desk run seed");
  app.add_flag("--skip-e2e", skip_e2e, "only the fast checks");
  CLI11_PARSE(app, argc, argv);

  criterion("gradient suite", gradient_suite);
  criterion("analytic loss values", analytic_values);
  criterion("invariant suite", invariants);
  criterion("spike conservation and spk roundtrip", spike_conservation);

  if (skip_e2e) {
    std::cout << "SKIP end-to-end, uncertainty correlation, determinism" << std::endl;
    return failures == 0 ? 0 : 1;
  }

  const fs::path root(work);
  const fs::path data = root / "data";
  train::PipelineResult first, second;
  bool have_first = false, have_second = false;
  try {
    fs::remove_all(root);
    const auto t0 = std::chrono::steady_clock::now();
    synth::make_dataset(train::desk_dataset(seed), data);
    const double data_secs = seconds_since(t0);
    train::TrainConfig cfg = train::desk_profile();
    cfg.seed = seed;
    cfg.dataset = data.string();
    auto progress = [](const std::string& s) { std::cout << "  stage " << s << std::endl; };
    first = train::run_pipeline(cfg, root / "run1", progress);
    first.seconds += data_secs;
    have_first = true;
    second = train::run_pipeline(cfg, root / "run2", progress);
    have_second = true;
  } catch (const std::exception& e) {
    std::cout << "desk run failed: " << e.what() << std::endl;
  }

  criterion("end-to-end desk run", [&]() -> Outcome {
    if (!have_first) return {false, "no desk run"};
    const auto& s = first.bicross_target;
    const auto& b = first.baseline_target;
    std::ostringstream d;
    d << "student " << describe(s) << ", baseline " << describe(b) << ", required AbsRel <= " << 0.9 * b.abs_rel
      << ", " << first.seconds << " s";
    return {s.abs_rel <= 0.9 * b.abs_rel && s.delta1 > b.delta1 && first.seconds < 1800.0, d.str()};
  });

  criterion("uncertainty rank correlation", [&]() -> Outcome {
    if (!have_first) return {false, "no desk run"};
    std::ostringstream d;
    d << "spearman " << first.uncertainty_correlation;
    return {first.uncertainty_correlation > 0.2, d.str()};
  });

  criterion("determinism", [&]() -> Outcome {
    if (!have_first || !have_second) return {false, "missing desk run"};
    const auto a = spike::read_file_bytes(first.final_checkpoint);
    const auto b = spike::read_file_bytes(second.final_checkpoint);
    const bool base_same = spike::read_file_bytes(first.baseline_checkpoint) ==
                           spike::read_file_bytes(second.baseline_checkpoint);
    std::ostringstream d;
    d << first.final_checkpoint.filename().string() << " " << a.size() << " bytes, "
      << (a == b ? "identical" : "different") << "; baseline " << (base_same ? "identical" : "different");
    return {!a.empty() && a == b && base_same, d.str()};
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
