#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/core/tensor.hpp"
#include "bicross/spike/simulator.hpp"
#include "bicross/synth/dataset.hpp"
#include "bicross/train/config.hpp"

namespace bicross::train {

// Network-ready tensors for one record.
struct PreparedSample {
  std::string id;
  Tensor rgb;    // {3,H,W}
  Tensor spike;  // {T_model,H,W}, binary
  Tensor depth;  // {1,H,W}
};

struct DataSplits {
  std::vector<PreparedSample> src_train;
  std::vector<PreparedSample> src_holdout;
  std::vector<PreparedSample> tgt_train;  // labels present on disk but never read by training
  std::vector<PreparedSample> tgt_test;
};

inline PreparedSample prepare_sample(const synth::Sample& s, const TrainConfig& cfg) {
  const auto& n = cfg.net;
  if (s.depth.dim(0) != n.height || s.depth.dim(1) != n.width) {
    throw ConfigError("sample " + s.id + " is " + Tensor::shape_string(s.depth.shape()) + " but the network expects " +
                      std::to_string(n.height) + "x" + std::to_string(n.width));
  }
  if (cfg.t_start + n.t_model > s.spikes.t) {
    throw ConfigError("sample " + s.id + " has " + std::to_string(s.spikes.t) + " spike planes; t_start + t_model = " +
                      std::to_string(cfg.t_start + n.t_model));
  }
  PreparedSample p;
  p.id = s.id;
  p.rgb = s.rgb;
  p.spike = spike::bin_stream(s.spikes, cfg.t_start, n.t_model).to_tensor();
  p.depth = s.depth.reshaped({1, n.height, n.width});
  return p;
}

inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline constexpr std::uint64_t kSplitTag = 0x5B117;

inline DataSplits split_samples(const std::vector<synth::Sample>& source, const std::vector<synth::Sample>& target,
                                const TrainConfig& cfg) {
  if (source.size() < 2) throw ConfigError("need at least two source samples, found " + std::to_string(source.size()));
  if (target.size() < 2) throw ConfigError("need at least two target samples, found " + std::to_string(target.size()));
  DataSplits d;
  auto take = [&](const std::vector<synth::Sample>& all, double frac, std::uint64_t tag,
                  std::vector<PreparedSample>& first, std::vector<PreparedSample>& rest) {
    const auto perm = seeded_permutation(all.size(), derive_seed(cfg.seed ^ kSplitTag, tag));
    auto n_first = static_cast<std::size_t>(std::llround(frac * static_cast<double>(all.size())));
    n_first = std::clamp<std::size_t>(n_first, 1, all.size() - 1);
    std::vector<std::size_t> a(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_first));
    std::vector<std::size_t> b(perm.begin() + static_cast<std::ptrdiff_t>(n_first), perm.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (auto i : a) first.push_back(prepare_sample(all[i], cfg));
    for (auto i : b) rest.push_back(prepare_sample(all[i], cfg));
  };
  take(source, cfg.source_holdout, 1, d.src_holdout, d.src_train);
  take(target, cfg.target_test, 2, d.tgt_test, d.tgt_train);
  return d;
}

inline DataSplits load_splits(const TrainConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset configured (set 'dataset' to a manifest or its directory)");
  const auto m = synth::load_manifest(cfg.dataset);
  const auto n_src = m.count(synth::Domain::source), n_tgt = m.count(synth::Domain::target);
  if (n_src < 2 || n_tgt < 2) {
    throw IoError("manifest " + cfg.dataset + " lists " + std::to_string(n_src) + " source and " + std::to_string(n_tgt) +
                  " target samples; at least two of each are required");
  }
  return split_samples(synth::load_samples(m, synth::Domain::source), synth::load_samples(m, synth::Domain::target), cfg);
}

// Line-delimited JSON metric log, appended to.
class MetricLog {
 public:
  MetricLog() = default;
  explicit MetricLog(std::filesystem::path path) : path_(std::move(path)) {}

  void append(const nlohmann::json& row) const {
    if (path_.empty()) return;
    std::ofstream f(path_, std::ios::app);
    if (!f) throw IoError("cannot append to " + path_.string());
    f << row.dump() << '\n';
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace bicross::train
