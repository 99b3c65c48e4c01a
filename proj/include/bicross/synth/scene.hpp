#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/core/tensor.hpp"
#include "bicross/spike/stream.hpp"

namespace bicross::synth {

enum class Domain { source, target };
enum class ShiftKind { none, fog, rain_noise, layout };

inline std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

inline std::string to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::none: return "none";
    case ShiftKind::fog: return "fog";
    case ShiftKind::rain_noise: return "rain_noise";
    case ShiftKind::layout: return "layout";
  }
  return "none";
}

inline Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw InvalidParameter("unknown domain '" + s + "'");
}

inline ShiftKind shift_from_string(const std::string& s) {
  if (s == "none") return ShiftKind::none;
  if (s == "fog") return ShiftKind::fog;
  if (s == "rain_noise") return ShiftKind::rain_noise;
  if (s == "layout") return ShiftKind::layout;
  throw InvalidParameter("unknown domain shift '" + s + "'");
}

enum class Shape { rect, ellipse };

// A fronto-parallel textured billboard standing on the ground plane.
struct ObjectSpec {
  Shape shape = Shape::rect;
  double x_center = 0.0;  // world metres, camera at x = 0 in the reference frame
  double depth = 5.0;
  double width = 1.0;
  double height = 1.5;
  std::array<double, 3> color{0.5, 0.5, 0.5};
  double stripe_period = 0.5;  // world metres
  double stripe_amp = 0.15;
};

struct SceneConfig {
  int height = 64;
  int width = 64;
  int t_lum = 32;
  double exposure_dt = 0.25;  // integration step per luminance frame
  int min_objects = 2;
  int max_objects = 5;
  double d_min = 1.0;
  double d_max = 20.0;
  double focal = 64.0;        // pixels
  double cam_height = 1.5;    // metres above ground
  double travel = 0.5;        // total horizontal camera travel over the sequence, metres
  double horizon = 0.4;       // horizon row as a fraction of the image height
  double obj_depth_min = 3.0;
  double obj_depth_max = 16.0;
  int supersample = 2;
  std::vector<ObjectSpec> fixed_objects;  // when non-empty, replaces random placement

  void validate() const {
    if (!(d_min > 0.0)) throw InvalidParameter("d_min must be positive");
    if (!(d_max > d_min)) throw InvalidParameter("d_max must exceed d_min");
    if (height < 1 || width < 1 || t_lum < 1) throw InvalidParameter("scene dimensions must be >= 1");
    if (min_objects < 0 || max_objects < min_objects) throw InvalidParameter("bad object-count range");
    if (!(exposure_dt > 0.0) || !(focal > 0.0) || !(cam_height > 0.0)) {
      throw InvalidParameter("exposure_dt, focal and cam_height must be positive");
    }
    if (supersample < 1) throw InvalidParameter("supersample must be >= 1");
    if (!(obj_depth_min > 0.0) || obj_depth_max < obj_depth_min) throw InvalidParameter("bad object depth range");
  }
};

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json{{"height", c.height},           {"width", c.width},
                     {"t_lum", c.t_lum},             {"exposure_dt", c.exposure_dt},
                     {"min_objects", c.min_objects}, {"max_objects", c.max_objects},
                     {"d_min", c.d_min},             {"d_max", c.d_max},
                     {"focal", c.focal},             {"cam_height", c.cam_height},
                     {"travel", c.travel},           {"horizon", c.horizon},
                     {"obj_depth_min", c.obj_depth_min}, {"obj_depth_max", c.obj_depth_max},
                     {"supersample", c.supersample}};
}

inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.t_lum = j.value("t_lum", c.t_lum);
  c.exposure_dt = j.value("exposure_dt", c.exposure_dt);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.d_min = j.value("d_min", c.d_min);
  c.d_max = j.value("d_max", c.d_max);
  c.focal = j.value("focal", c.focal);
  c.cam_height = j.value("cam_height", c.cam_height);
  c.travel = j.value("travel", c.travel);
  c.horizon = j.value("horizon", c.horizon);
  c.obj_depth_min = j.value("obj_depth_min", c.obj_depth_min);
  c.obj_depth_max = j.value("obj_depth_max", c.obj_depth_max);
  c.supersample = j.value("supersample", c.supersample);
}

struct Scene {
  Tensor rgb;                      // {3,H,W} in [0,1], reference view
  spike::LuminanceSequence lum;    // T_lum frames under horizontal camera travel
  Tensor depth_gt;                 // {H,W} metres, reference view
  std::vector<float> frame_depth;  // T_lum x H x W, per-frame depth used by fog
  Domain domain = Domain::source;
  ShiftKind shift = ShiftKind::none;
  double shift_strength = 0.0;
  std::uint64_t seed = 0;
  SceneConfig cfg;
  std::vector<ObjectSpec> objects;

  bool operator==(const Scene& o) const {
    return rgb == o.rgb && lum == o.lum && depth_gt == o.depth_gt && frame_depth == o.frame_depth &&
           domain == o.domain && shift == o.shift && shift_strength == o.shift_strength && seed == o.seed;
  }
};

inline constexpr std::array<double, 3> kLumaWeights{0.299, 0.587, 0.114};
inline constexpr double kAirlight = 0.8;

inline double luma(double r, double g, double b) {
  return kLumaWeights[0] * r + kLumaWeights[1] * g + kLumaWeights[2] * b;
}

// Depth of the empty scene (ground plane below the horizon, back wall at d_max) at row coordinate v.
inline double ground_depth(const SceneConfig& cfg, double v) {
  const double vh = cfg.horizon * cfg.height;
  if (v <= vh) return cfg.d_max;
  return std::clamp(cfg.focal * cfg.cam_height / (v - vh), cfg.d_min, cfg.d_max);
}

namespace detail {

struct Hit {
  double depth;
  std::array<double, 3> color;
};

inline double hash_noise(std::int64_t a, std::int64_t b, std::uint64_t salt) {
  std::uint64_t h = static_cast<std::uint64_t>(a) * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(b) * 0xC2B2AE3D27D4EB4FULL ^ salt;
  SplitMix64 g(h);
  return g.uniform();
}

struct SceneStyle {
  std::array<double, 3> ground_a{0.45, 0.40, 0.32};
  std::array<double, 3> ground_b{0.30, 0.27, 0.22};
  std::array<double, 3> wall_top{0.85, 0.88, 0.95};
  std::array<double, 3> wall_bottom{0.65, 0.70, 0.78};
  double tile = 1.0;
  std::uint64_t salt = 0;
};

// Shared geometry source for colour and depth: (u, v) are continuous pixel
// coordinates, cam_x the horizontal camera offset in metres.
inline Hit trace(const SceneConfig& cfg, const SceneStyle& style, const std::vector<ObjectSpec>& objs_near_first,
                 double u, double v, double cam_x) {
  const double cx = 0.5 * cfg.width;
  const double vh = cfg.horizon * cfg.height;
  for (const auto& o : objs_near_first) {
    const double x_world = (u - cx) * o.depth / cfg.focal + cam_x;
    const double dx = x_world - o.x_center;
    if (std::abs(dx) > 0.5 * o.width) continue;
    const double v_bottom = vh + cfg.focal * cfg.cam_height / o.depth;
    const double y_world = (v_bottom - v) * o.depth / cfg.focal;  // height above ground
    if (y_world < 0.0 || y_world > o.height) continue;
    if (o.shape == Shape::ellipse) {
      const double ex = dx / (0.5 * o.width);
      const double ey = (y_world - 0.5 * o.height) / (0.5 * o.height);
      if (ex * ex + ey * ey > 1.0) continue;
    }
    const double phase = std::sin(2.0 * 3.14159265358979323846 * (x_world - o.x_center + y_world * 0.35) / o.stripe_period);
    Hit h{o.depth, o.color};
    for (auto& c : h.color) c = std::clamp(c * (1.0 + o.stripe_amp * phase), 0.0, 1.0);
    return h;
  }
  const double d = ground_depth(cfg, v);
  if (v > vh && d < cfg.d_max) {
    const double x_world = (u - cx) * d / cfg.focal + cam_x;
    const auto ix = static_cast<std::int64_t>(std::floor(x_world / style.tile));
    const auto iz = static_cast<std::int64_t>(std::floor(d / style.tile));
    const bool even = ((ix + iz) & 1) == 0;
    const double grain = 0.9 + 0.2 * hash_noise(ix, iz, style.salt);
    Hit h{d, even ? style.ground_a : style.ground_b};
    for (auto& c : h.color) c = std::clamp(c * grain, 0.0, 1.0);
    return h;
  }
  const double t = std::clamp(v / std::max(vh, 1.0), 0.0, 1.0);
  const double x_world = (u - cx) * cfg.d_max / cfg.focal + cam_x;
  const auto ix = static_cast<std::int64_t>(std::floor(x_world / 2.0));
  const double grain = 0.93 + 0.14 * hash_noise(ix, 7, style.salt ^ 0x5bd1e995ULL);
  Hit h{cfg.d_max, {}};
  for (int c = 0; c < 3; ++c) h.color[c] = std::clamp((style.wall_top[c] * (1.0 - t) + style.wall_bottom[c] * t) * grain, 0.0, 1.0);
  return h;
}

inline std::vector<ObjectSpec> sample_objects(const SceneConfig& cfg, SplitMix64& rng) {
  const int n = static_cast<int>(rng.integer(cfg.min_objects, cfg.max_objects));
  std::vector<ObjectSpec> objs;
  for (int i = 0; i < n; ++i) {
    ObjectSpec o;
    o.shape = rng.uniform() < 0.5 ? Shape::rect : Shape::ellipse;
    o.depth = rng.uniform(cfg.obj_depth_min, cfg.obj_depth_max);
    o.width = rng.uniform(0.8, 3.0);
    o.height = rng.uniform(1.0, 3.0);
    const double u_center = rng.uniform(0.0, cfg.width);
    o.x_center = (u_center - 0.5 * cfg.width) * o.depth / cfg.focal;
    for (auto& c : o.color) c = rng.uniform(0.15, 0.95);
    o.stripe_period = rng.uniform(0.25, 0.8);
    o.stripe_amp = rng.uniform(0.1, 0.3);
    objs.push_back(o);
  }
  return objs;
}

inline SceneStyle sample_style(SplitMix64& rng) {
  SceneStyle s;
  const double g = rng.uniform(0.8, 1.2);
  for (auto& c : s.ground_a) c *= g;
  for (auto& c : s.ground_b) c *= g;
  const double w = rng.uniform(0.85, 1.05);
  for (auto& c : s.wall_top) c = std::min(1.0, c * w);
  for (auto& c : s.wall_bottom) c = std::min(1.0, c * w);
  s.tile = rng.uniform(0.8, 1.5);
  s.salt = rng.next();
  return s;
}

inline void render(Scene& sc, const SceneStyle& style) {
  const SceneConfig& cfg = sc.cfg;
  const int h = cfg.height, w = cfg.width, t = cfg.t_lum;
  std::vector<ObjectSpec> near_first = sc.objects;
  std::stable_sort(near_first.begin(), near_first.end(),
                   [](const ObjectSpec& a, const ObjectSpec& b) { return a.depth < b.depth; });

  const int ss = cfg.supersample;
  auto shade = [&](int x, int y, double cam_x, std::array<double, 3>& rgb, double& depth) {
    rgb = {0.0, 0.0, 0.0};
    for (int sy = 0; sy < ss; ++sy) {
      for (int sx = 0; sx < ss; ++sx) {
        const Hit hit = trace(cfg, style, near_first, x + (sx + 0.5) / ss, y + (sy + 0.5) / ss, cam_x);
        for (int c = 0; c < 3; ++c) rgb[c] += hit.color[c];
      }
    }
    for (auto& c : rgb) c /= ss * ss;
    depth = trace(cfg, style, near_first, x + 0.5, y + 0.5, cam_x).depth;
  };

  sc.rgb = Tensor({3, h, w});
  sc.depth_gt = Tensor({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<double, 3> rgb;
      double d;
      shade(x, y, 0.0, rgb, d);
      for (int c = 0; c < 3; ++c) sc.rgb.at(c, y, x) = rgb[c];
      sc.depth_gt[static_cast<std::size_t>(y) * w + x] = d;
    }
  }

  sc.lum = spike::LuminanceSequence(t, h, w, cfg.exposure_dt);
  sc.frame_depth.assign(static_cast<std::size_t>(t) * h * w, 0.0f);
  for (int k = 0; k < t; ++k) {
    const double cam_x = t > 1 ? cfg.travel * (static_cast<double>(k) / (t - 1) - 0.5) : 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::array<double, 3> rgb;
        double d;
        shade(x, y, cam_x, rgb, d);
        sc.lum.at(k, y, x) = luma(rgb[0], rgb[1], rgb[2]);
        sc.frame_depth[(static_cast<std::size_t>(k) * h + y) * w + x] = static_cast<float>(d);
      }
    }
  }
}

inline constexpr std::uint64_t kStyleTag = 11;
inline constexpr std::uint64_t kObjectTag = 12;
inline constexpr std::uint64_t kLayoutTag = 13;
inline constexpr std::uint64_t kRainTag = 14;

}  // namespace detail

// Fully determined by (seed, cfg).
inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Scene sc;
  sc.cfg = cfg;
  sc.seed = seed;
  SplitMix64 style_rng(derive_seed(seed, detail::kStyleTag));
  const detail::SceneStyle style = detail::sample_style(style_rng);
  if (!cfg.fixed_objects.empty()) {
    sc.objects = cfg.fixed_objects;
  } else {
    SplitMix64 obj_rng(derive_seed(seed, detail::kObjectTag));
    sc.objects = detail::sample_objects(cfg, obj_rng);
  }
  detail::render(sc, style);
  return sc;
}

// Multiplicative fog factor t + A (1 - t), t = exp(-strength * depth / d_max).
inline double fog_factor(double depth, double d_max, double strength) {
  const double t = std::exp(-strength * depth / d_max);
  return t + kAirlight * (1.0 - t);
}

inline Scene apply_domain_shift(const Scene& in, ShiftKind kind, double strength) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw InvalidParameter("shift strength must lie in [0, 1]");
  Scene out = in;
  out.shift = kind;
  out.shift_strength = strength;
  if (strength == 0.0 || kind == ShiftKind::none) return out;
  const int h = in.cfg.height, w = in.cfg.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  switch (kind) {
    case ShiftKind::fog: {
      for (std::size_t p = 0; p < plane; ++p) {
        const double f = fog_factor(in.depth_gt[p], in.cfg.d_max, strength);
        for (int c = 0; c < 3; ++c) out.rgb[c * plane + p] *= f;
      }
      for (std::size_t i = 0; i < out.lum.frames.size(); ++i) {
        out.lum.frames[i] *= fog_factor(in.frame_depth[i], in.cfg.d_max, strength);
      }
      break;
    }
    case ShiftKind::rain_noise: {
      SplitMix64 rng(derive_seed(in.seed, detail::kRainTag));
      const double rate = strength * 0.05;
      for (auto& v : out.lum.frames) {
        if (rng.uniform() < rate) v = 1.0;
      }
      break;
    }
    case ShiftKind::layout: {
      SplitMix64 rng(derive_seed(in.seed, detail::kLayoutTag));
      auto fresh = detail::sample_objects(in.cfg, rng);
      std::vector<ObjectSpec> objs = in.objects;
      for (std::size_t i = 0; i < objs.size(); ++i) {
        const bool moved = rng.uniform() < strength;
        if (moved && i < fresh.size()) {
          objs[i].x_center = fresh[i].x_center * objs[i].depth / fresh[i].depth;
          objs[i].depth = fresh[i].depth;
        }
      }
      out.objects = objs;
      SplitMix64 style_rng(derive_seed(in.seed, detail::kStyleTag));
      detail::render(out, detail::sample_style(style_rng));
      break;
    }
    case ShiftKind::none:
      break;
  }
  return out;
}

}  // namespace bicross::synth
