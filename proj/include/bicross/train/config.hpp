#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/losses/losses.hpp"
#include "bicross/net/model.hpp"

namespace bicross::train {

struct TrainConfig {
  std::uint64_t seed = 2024;
  int batch_size = 8;
  double lr_backbone = 1e-5;
  double lr_decoder = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs_pretrain = 30;
  int epochs_modality = 10;
  int epochs_glfa = 10;
  int epochs_ugds = 10;
  double alpha = 0.999;
  int warmup_steps = 100;
  bool combined_domain = false;  // GLFA and UGDS in every step instead of alternating epochs
  double source_holdout = 0.1;   // held-back source slice: warm-up data and uncertainty check
  double target_test = 0.2;      // target slice kept for evaluation only
  double max_skip_fraction = 0.5;
  int t_start = 0;               // first spike plane fed to the network
  double eval_d_min = 1e-3;
  double eval_d_max = 20.0;
  int disc_hidden = 32;
  std::string dataset;
  std::string out_dir = "run";
  net::NetworkConfig net;
  losses::LossConfig loss;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr_backbone >= 0.0) || !(lr_decoder >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam moment coefficients must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (epochs_pretrain < 0 || epochs_modality < 0 || epochs_glfa < 0 || epochs_ugds < 0) {
      throw ConfigError("epoch counts must be >= 0");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (!(source_holdout > 0.0 && source_holdout < 1.0)) throw ConfigError("source_holdout must lie in (0, 1)");
    if (!(target_test > 0.0 && target_test < 1.0)) throw ConfigError("target_test must lie in (0, 1)");
    if (!(max_skip_fraction >= 0.0 && max_skip_fraction <= 1.0)) {
      throw ConfigError("max_skip_fraction must lie in [0, 1]");
    }
    if (t_start < 0) throw ConfigError("t_start must be >= 0");
    if (!(eval_d_min > 0.0) || !(eval_d_max > eval_d_min)) throw ConfigError("evaluation clamp needs 0 < d_min < d_max");
    if (disc_hidden < 1) throw ConfigError("disc_hidden must be >= 1");
    net.validate();
    loss.validate();
  }

  bool operator==(const TrainConfig& o) const { return to_flat_json() == o.to_flat_json(); }

  // One flat key namespace covering training, network and loss fields.
  nlohmann::json to_flat_json() const {
    nlohmann::json j{{"seed", seed},
                     {"batch_size", batch_size},
                     {"lr_backbone", lr_backbone},
                     {"lr_decoder", lr_decoder},
                     {"beta1", beta1},
                     {"beta2", beta2},
                     {"adam_eps", adam_eps},
                     {"epochs_pretrain", epochs_pretrain},
                     {"epochs_modality", epochs_modality},
                     {"epochs_glfa", epochs_glfa},
                     {"epochs_ugds", epochs_ugds},
                     {"alpha", alpha},
                     {"warmup_steps", warmup_steps},
                     {"combined_domain", combined_domain},
                     {"source_holdout", source_holdout},
                     {"target_test", target_test},
                     {"max_skip_fraction", max_skip_fraction},
                     {"t_start", t_start},
                     {"eval_d_min", eval_d_min},
                     {"eval_d_max", eval_d_max},
                     {"disc_hidden", disc_hidden},
                     {"dataset", dataset},
                     {"out_dir", out_dir}};
    nlohmann::json n = net;
    n.erase("input_kind");
    j.update(n);
    j.update(nlohmann::json(loss));
    return j;
  }

  // Unknown keys are rejected; missing keys keep their current values.
  void update_from_flat_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const std::set<std::string> known = [&] {
      std::set<std::string> k;
      const nlohmann::json all = to_flat_json();
      for (const auto& [key, _] : all.items()) k.insert(key);
      return k;
    }();
    for (const auto& [key, _] : j.items()) {
      if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    try {
      seed = j.value("seed", seed);
      batch_size = j.value("batch_size", batch_size);
      lr_backbone = j.value("lr_backbone", lr_backbone);
      lr_decoder = j.value("lr_decoder", lr_decoder);
      beta1 = j.value("beta1", beta1);
      beta2 = j.value("beta2", beta2);
      adam_eps = j.value("adam_eps", adam_eps);
      epochs_pretrain = j.value("epochs_pretrain", epochs_pretrain);
      epochs_modality = j.value("epochs_modality", epochs_modality);
      epochs_glfa = j.value("epochs_glfa", epochs_glfa);
      epochs_ugds = j.value("epochs_ugds", epochs_ugds);
      alpha = j.value("alpha", alpha);
      warmup_steps = j.value("warmup_steps", warmup_steps);
      combined_domain = j.value("combined_domain", combined_domain);
      source_holdout = j.value("source_holdout", source_holdout);
      target_test = j.value("target_test", target_test);
      max_skip_fraction = j.value("max_skip_fraction", max_skip_fraction);
      t_start = j.value("t_start", t_start);
      eval_d_min = j.value("eval_d_min", eval_d_min);
      eval_d_max = j.value("eval_d_max", eval_d_max);
      disc_hidden = j.value("disc_hidden", disc_hidden);
      dataset = j.value("dataset", dataset);
      out_dir = j.value("out_dir", out_dir);
      nlohmann::json n = net;
      for (const auto& [key, v] : n.items()) {
        if (j.contains(key)) n[key] = j.at(key);
      }
      net = n.get<net::NetworkConfig>();
      losses::from_json(j, loss);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad config value: ") + e.what());
    }
  }

  static TrainConfig from_flat_json(const nlohmann::json& j) {
    TrainConfig c;
    c.update_from_flat_json(j);
    return c;
  }

  std::uint64_t hash() const { return fnv1a64(to_flat_json().dump()); }

  net::NetworkConfig net_for(net::InputKind kind) const {
    net::NetworkConfig n = net;
    n.input_kind = kind;
    return n;
  }
};

// Desk-scale profile: reduced epochs and larger constant learning rates so the
// full pipeline fits a CPU time budget.
inline TrainConfig desk_profile() {
  TrainConfig c;
  c.epochs_pretrain = 10;
  c.epochs_modality = 5;
  c.epochs_glfa = 5;
  c.epochs_ugds = 5;
  c.lr_backbone = 5e-4;
  c.lr_decoder = 1e-3;
  return c;
}

inline TrainConfig paper_profile() { return TrainConfig{}; }

}  // namespace bicross::train
