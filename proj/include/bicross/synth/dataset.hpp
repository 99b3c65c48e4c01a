#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/core/image_io.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/core/tensor.hpp"
#include "bicross/spike/simulator.hpp"
#include "bicross/spike/spk_io.hpp"
#include "bicross/synth/scene.hpp"

namespace bicross::synth {

struct DatasetConfig {
  std::uint64_t seed = 2024;
  int n_source = 200;
  int n_target = 200;
  ShiftKind target_shift = ShiftKind::fog;
  double shift_strength = 1.0;
  double theta = 0.4;
  double freq_hz = 1280.0;
  spike::ResetMode reset = spike::ResetMode::hard;
  int interp_factor = 1;
  int threads = 1;
  SceneConfig scene;

  void validate() const {
    if (n_source < 0 || n_target < 0) throw InvalidParameter("sample counts must be >= 0");
    if (!(theta > 0.0)) throw InvalidParameter("theta must be positive");
    if (!(freq_hz > 0.0)) throw InvalidParameter("freq_hz must be positive");
    if (interp_factor < 1) throw InvalidParameter("interp_factor must be >= 1");
    if (threads < 1) throw InvalidParameter("threads must be >= 1");
    if (!(shift_strength >= 0.0 && shift_strength <= 1.0)) throw InvalidParameter("shift_strength must lie in [0, 1]");
    scene.validate();
  }
};

inline void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"n_source", c.n_source},
                     {"n_target", c.n_target},
                     {"target_shift", to_string(c.target_shift)},
                     {"shift_strength", c.shift_strength},
                     {"theta", c.theta},
                     {"freq_hz", c.freq_hz},
                     {"reset", c.reset == spike::ResetMode::hard ? "hard" : "residual"},
                     {"interp_factor", c.interp_factor},
                     {"scene", c.scene}};
}

inline void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.n_source = j.value("n_source", c.n_source);
  c.n_target = j.value("n_target", c.n_target);
  if (j.contains("target_shift")) c.target_shift = shift_from_string(j.at("target_shift").get<std::string>());
  c.shift_strength = j.value("shift_strength", c.shift_strength);
  c.theta = j.value("theta", c.theta);
  c.freq_hz = j.value("freq_hz", c.freq_hz);
  if (j.contains("reset")) {
    const auto r = j.at("reset").get<std::string>();
    if (r == "hard") {
      c.reset = spike::ResetMode::hard;
    } else if (r == "residual") {
      c.reset = spike::ResetMode::residual;
    } else {
      throw ConfigError("unknown reset mode '" + r + "'");
    }
  }
  c.interp_factor = j.value("interp_factor", c.interp_factor);
  c.threads = j.value("threads", c.threads);
  if (j.contains("scene")) from_json(j.at("scene"), c.scene);
}

struct SampleRecord {
  std::string id;
  std::string rgb;    // paths relative to the manifest directory
  std::string spk;
  std::string depth;
  Domain domain = Domain::source;
  ShiftKind shift = ShiftKind::none;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> samples;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  std::size_t count(Domain d) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [d](const SampleRecord& r) { return r.domain == d; }));
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& r : m.samples) {
    samples.push_back({{"id", r.id},
                       {"rgb", r.rgb},
                       {"spk", r.spk},
                       {"depth", r.depth},
                       {"domain", to_string(r.domain)},
                       {"shift", to_string(r.shift)}});
  }
  return nlohmann::json{{"samples", samples}, {"seed", m.seed}, {"config", m.config}};
}

inline constexpr const char* kManifestName = "manifest.json";

inline DatasetManifest load_manifest(const std::filesystem::path& path_or_dir) {
  namespace fs = std::filesystem;
  const fs::path path = fs::is_directory(path_or_dir) ? path_or_dir / kManifestName : path_or_dir;
  std::ifstream f(path);
  if (!f) throw IoError("manifest not found: " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what(), 0);
  }
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.value("config", nlohmann::json::object());
    for (const auto& s : j.at("samples")) {
      SampleRecord r;
      r.id = s.at("id").get<std::string>();
      r.rgb = s.at("rgb").get<std::string>();
      r.spk = s.at("spk").get<std::string>();
      r.depth = s.at("depth").get<std::string>();
      r.domain = domain_from_string(s.at("domain").get<std::string>());
      r.shift = shift_from_string(s.at("shift").get<std::string>());
      m.samples.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + " is missing fields: " + e.what(), 0);
  }
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    for (std::size_t k = i + 1; k < m.samples.size(); ++k) {
      if (m.samples[i].id == m.samples[k].id) throw FormatError("duplicate sample id " + m.samples[i].id, 0);
    }
  }
  return m;
}

inline Image8 rgb_to_image(const Tensor& rgb) {
  const int h = rgb.dim(1), w = rgb.dim(2);
  Image8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] = spike::to_unit_byte(rgb.at(c, y, x));
      }
    }
  }
  return img;
}

inline Tensor image_to_rgb(const Image8& img) {
  if (img.channels != 3) throw InvalidInput("expected an RGB image");
  Tensor t({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(c, y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0;
      }
    }
  }
  return t;
}

inline spike::SpikeStream encode_scene(const Scene& sc, const DatasetConfig& cfg) {
  spike::SimulatorConfig sim;
  sim.theta = cfg.theta;
  sim.freq_hz = cfg.freq_hz;
  sim.reset = cfg.reset;
  return spike::simulate_spikes(spike::interpolate_frames(sc.lum, cfg.interp_factor), sim);
}

inline std::uint64_t sample_seed(std::uint64_t base, Domain d, int index) {
  return derive_seed(derive_seed(base, d == Domain::source ? 101 : 202), static_cast<std::uint64_t>(index));
}

// The scene a record was rendered from, before any domain shift.
inline Scene sample_scene(const DatasetConfig& cfg, Domain d, int index) {
  return generate_scene(sample_seed(cfg.seed, d, index), cfg.scene);
}

inline Scene shifted_sample_scene(const DatasetConfig& cfg, Domain d, int index) {
  Scene sc = sample_scene(cfg, d, index);
  sc.domain = d;
  if (d == Domain::target) sc = apply_domain_shift(sc, cfg.target_shift, cfg.shift_strength);
  return sc;
}

inline DatasetManifest make_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "samples", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "samples").string() + ": " + ec.message());

  DatasetManifest m;
  m.seed = cfg.seed;
  m.config = cfg;
  m.root = out_dir;
  const int total = cfg.n_source + cfg.n_target;
  for (int i = 0; i < total; ++i) {
    const bool src = i < cfg.n_source;
    const int idx = src ? i : i - cfg.n_source;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04d", src ? "src" : "tgt", idx);
    SampleRecord r;
    r.id = buf;
    r.rgb = "samples/" + r.id + ".ppm";
    r.spk = "samples/" + r.id + ".spk";
    r.depth = "samples/" + r.id + ".depth";
    r.domain = src ? Domain::source : Domain::target;
    r.shift = src ? ShiftKind::none : cfg.target_shift;
    m.samples.push_back(r);
  }

  auto cleanup = [&]() {
    std::error_code ignore;
    for (const auto& r : m.samples) {
      fs::remove(out_dir / r.rgb, ignore);
      fs::remove(out_dir / r.spk, ignore);
      fs::remove(out_dir / r.depth, ignore);
    }
    fs::remove(out_dir / kManifestName, ignore);
    fs::remove(out_dir / "samples", ignore);  // only succeeds if empty
  };

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= total) return;
      {
        std::lock_guard lk(failure_mu);
        if (failure) return;
      }
      try {
        const auto& r = m.samples[static_cast<std::size_t>(i)];
        const int idx = r.domain == Domain::source ? i : i - cfg.n_source;
        const Scene sc = shifted_sample_scene(cfg, r.domain, idx);
        write_pnm(rgb_to_image(sc.rgb), out_dir / r.rgb);
        spike::write_spk(encode_scene(sc, cfg), out_dir / r.spk);
        std::vector<float> depth(sc.depth_gt.size());
        for (std::size_t p = 0; p < depth.size(); ++p) depth[p] = static_cast<float>(sc.depth_gt[p]);
        write_depth_grid(depth, cfg.scene.height, cfg.scene.width, out_dir / r.depth);
      } catch (...) {
        std::lock_guard lk(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int n_threads = std::max(1, std::min(cfg.threads, total));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) {
    cleanup();
    std::rethrow_exception(failure);
  }

  std::ofstream f(out_dir / kManifestName, std::ios::trunc);
  f << manifest_to_json(m).dump(2) << '\n';
  f.close();
  if (!f) {
    cleanup();
    throw IoError("failed to write manifest in " + out_dir.string());
  }
  return m;
}

struct Sample {
  std::string id;
  Domain domain = Domain::source;
  ShiftKind shift = ShiftKind::none;
  Tensor rgb;    // {3,H,W} in [0,1]
  spike::SpikeStream spikes;
  Tensor depth;  // {H,W}
};

inline Sample load_sample(const DatasetManifest& m, const SampleRecord& r) {
  Sample s;
  s.id = r.id;
  s.domain = r.domain;
  s.shift = r.shift;
  auto need = [&](const std::string& rel) {
    const auto p = m.root / rel;
    if (!std::filesystem::exists(p)) throw IoError("sample " + r.id + ": missing file " + p.string());
    return p;
  };
  s.rgb = image_to_rgb(read_pnm(need(r.rgb)));
  s.spikes = spike::read_spk(need(r.spk));
  const DepthGrid g = read_depth_grid(need(r.depth));
  s.depth = Tensor({g.h, g.w});
  for (std::size_t p = 0; p < g.values.size(); ++p) s.depth[p] = g.values[p];
  if (s.rgb.dim(1) != g.h || s.rgb.dim(2) != g.w || s.spikes.h != g.h || s.spikes.w != g.w) {
    throw FormatError("sample " + r.id + ": rgb, spike and depth sizes disagree", 0);
  }
  return s;
}

inline std::vector<Sample> load_samples(const DatasetManifest& m, Domain d) {
  std::vector<Sample> out;
  for (const auto& r : m.samples) {
    if (r.domain == d) out.push_back(load_sample(m, r));
  }
  return out;
}

}  // namespace bicross::synth
