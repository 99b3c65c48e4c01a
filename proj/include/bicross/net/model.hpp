#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "bicross/autograd/ops.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/net/params.hpp"

namespace bicross::net {

enum class InputKind { rgb, spike };

inline std::string to_string(InputKind k) { return k == InputKind::rgb ? "rgb" : "spike"; }

inline InputKind input_kind_from_string(const std::string& s) {
  if (s == "rgb") return InputKind::rgb;
  if (s == "spike") return InputKind::spike;
  throw ConfigError("unknown input kind '" + s + "'");
}

inline constexpr double kMinDepth = 1e-3;
inline constexpr double kMaxDepth = 100.0;

struct NetworkConfig {
  InputKind input_kind = InputKind::spike;
  int height = 64;
  int width = 64;
  int t_model = 32;
  int base_width = 16;     // C: channels after the stem; stage s has C * 2^s
  int encoder_depth = 3;   // number of encoder stages
  int fusion_levels = 3;   // L: decoder fusion stages, taken from the deepest stages
  int decoder_width = 16;
  int global_width = 64;   // G: width of the aggregated global vector
  int token_width = 128;   // D: width of the global token
  int se_reduction = 4;
  int head_hidden = 8;
  int norm_groups = 4;     // group normalisation groups inside encoder and decoder blocks
  double d_init = 5.0;     // initial constant depth, metres
  double unc_init = 1e-3;  // initial constant uncertainty

  int input_channels() const { return input_kind == InputKind::rgb ? 3 : t_model; }

  void validate() const {
    if (fusion_levels < 2) throw ConfigError("fusion_levels must be >= 2");
    if (fusion_levels > encoder_depth) throw ConfigError("fusion_levels cannot exceed encoder_depth");
    for (int v : {height, width, t_model, base_width, encoder_depth, decoder_width, global_width, token_width,
                  se_reduction, head_hidden, norm_groups}) {
      if (v < 1) throw ConfigError("network widths and sizes must be >= 1");
    }
    const int div = 1 << encoder_depth;
    if (height % div != 0 || width % div != 0) {
      throw ConfigError("height and width must be divisible by 2^encoder_depth = " + std::to_string(div));
    }
    if (base_width % norm_groups != 0 || decoder_width % norm_groups != 0) {
      throw ConfigError("base_width and decoder_width must be divisible by norm_groups");
    }
    if (!(d_init > kMinDepth && d_init < kMaxDepth)) throw ConfigError("d_init must lie strictly inside the depth range");
    if (!(unc_init > 0.0)) throw ConfigError("unc_init must be positive");
  }

  bool operator==(const NetworkConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"input_kind", to_string(c.input_kind)},
                     {"height", c.height},
                     {"width", c.width},
                     {"t_model", c.t_model},
                     {"base_width", c.base_width},
                     {"encoder_depth", c.encoder_depth},
                     {"fusion_levels", c.fusion_levels},
                     {"decoder_width", c.decoder_width},
                     {"global_width", c.global_width},
                     {"token_width", c.token_width},
                     {"se_reduction", c.se_reduction},
                     {"head_hidden", c.head_hidden},
                     {"norm_groups", c.norm_groups},
                     {"d_init", c.d_init},
                     {"unc_init", c.unc_init}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  c.input_kind = input_kind_from_string(j.at("input_kind").get<std::string>());
  c.height = j.at("height");
  c.width = j.at("width");
  c.t_model = j.at("t_model");
  c.base_width = j.at("base_width");
  c.encoder_depth = j.at("encoder_depth");
  c.fusion_levels = j.at("fusion_levels");
  c.decoder_width = j.at("decoder_width");
  c.global_width = j.at("global_width");
  c.token_width = j.at("token_width");
  c.se_reduction = j.at("se_reduction");
  c.head_hidden = j.at("head_hidden");
  c.norm_groups = j.at("norm_groups");
  c.d_init = j.at("d_init");
  c.unc_init = j.at("unc_init");
}


// Head pre-activation that maps to depth d.
inline double depth_logit(double d) {
  const double u = (std::log(d) - std::log(kMinDepth)) / (std::log(kMaxDepth) - std::log(kMinDepth));
  return std::log(u / (1.0 - u));
}

struct NetworkOutputs {
  std::vector<ag::Var> decoder_feats;  // L fusion outputs, coarsest first
  ag::Var token;                       // {D}
  ag::Var f_g;                         // {G}, unit norm
  ag::Var depth;                       // {1,H,W}, in [kMinDepth, kMaxDepth]
  ag::Var uncertainty;                 // {1,H,W}, >= 0
};

// Parameters placed on a tape for one step.
class BoundParams {
 public:
  BoundParams(ag::Tape& tape, const ParameterSet& params, bool requires_grad) : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& p : params) vars_.push_back(tape.leaf(p.value, requires_grad));
  }

  ag::Var operator()(const std::string& name) const { return vars_[params_->index(name)]; }
  ag::Var at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }

  // grads[i] += d(loss)/d(param i); parameters that received nothing are skipped.
  void accumulate(std::vector<Tensor>& grads) const {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (vars_[i].has_grad()) grads[i] += vars_[i].grad();
    }
  }

  const ParameterSet& params() const { return *params_; }

 private:
  const ParameterSet* params_;
  std::vector<ag::Var> vars_;
};

// 2-D sin-cos grid: the first half of the channels encodes rows, the second columns,
// at octave-spaced frequencies.
inline Tensor sincos_position(int channels, int h, int w) {
  Tensor pos({channels, h, w});
  const int half = std::max(1, channels / 2);
  for (int ch = 0; ch < channels; ++ch) {
    const bool rows = ch < half;
    const int j = rows ? ch : ch - half;
    const double freq = std::numbers::pi * std::ldexp(1.0, j / 2);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double u = rows ? (y + 0.5) / h : (x + 0.5) / w;
        pos[(static_cast<std::size_t>(ch) * h + y) * w + x] = j % 2 == 0 ? std::sin(freq * u) : std::cos(freq * u);
      }
    }
  }
  return pos;
}

// f_g = normalize(W . mean_spatial(F_h) + b)
inline ag::Var extract_global(const ag::Var& high_level, const ag::Var& proj_w, const ag::Var& proj_b) {
  return ag::l2_normalize(ag::linear(ag::mean_spatial(high_level), proj_w, proj_b));
}

// Dual-branch depth network: optional temporal module (spike only), a
// shared-topology convolutional encoder with a learned global token, a
// multi-level fusion decoder and two three-layer heads (depth, uncertainty).
class DepthNet {
 public:
  explicit DepthNet(NetworkConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    SplitMix64 rng(seed);
    build(rng);
  }

  const NetworkConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  int stage_channels(int s) const { return cfg_.base_width << s; }

  std::vector<int> expected_input_shape() const { return {cfg_.input_channels(), cfg_.height, cfg_.width}; }

  NetworkOutputs forward(ag::Tape& tape, const BoundParams& p, const Tensor& input) const {
    if (input.shape() != expected_input_shape()) {
      throw ConfigError("input shape " + Tensor::shape_string(input.shape()) + " does not match network input " +
                        Tensor::shape_string(expected_input_shape()));
    }
    using namespace ag;
    Var x = tape.leaf(input, false);
    Var f;
    if (cfg_.input_kind == InputKind::spike) {
      Var pooled = mean_spatial(x);
      Var h = relu(linear(pooled, p("temporal.se.fc1.w"), p("temporal.se.fc1.b")));
      Var gate = sigmoid(linear(h, p("temporal.se.fc2.w"), p("temporal.se.fc2.b")));
      x = channel_scale(x, gate);
      f = relu(conv_norm(p, "temporal.stem", x, 2, 1));
      Var r = relu(conv_norm(p, "temporal.res.conv1", f, 1, 1));
      r = conv_norm(p, "temporal.res.conv2", r, 1, 1);
      f = relu(add(f, r));
    } else {
      f = relu(conv_norm(p, "rgb.stem", x, 2, 1));
    }

    f = add(f, p("encoder.pos"));
    std::vector<Var> stages;
    for (int s = 0; s < cfg_.encoder_depth; ++s) {
      const std::string pre = "encoder.stage" + std::to_string(s);
      Var y = relu(conv_norm(p, pre + ".down", f, s == 0 ? 1 : 2, 1));
      Var r = conv_norm(p, pre + ".res", y, 1, 1);
      f = relu(add(y, r));
      stages.push_back(f);
    }

    NetworkOutputs out;
    std::vector<Var> keys, vals;
    for (int s = 0; s < cfg_.encoder_depth; ++s) {
      const std::string pre = "token.stage" + std::to_string(s);
      Var d = mean_spatial(stages[s]);
      keys.push_back(linear(d, p(pre + ".key.w"), p(pre + ".key.b")));
      vals.push_back(linear(d, p(pre + ".value.w"), p(pre + ".value.b")));
    }
    out.token = attend(p("token.query"), keys, vals);
    out.f_g = extract_global(stages.back(), p("global.proj.w"), p("global.proj.b"));

    Var dec;
    for (int l = 0; l < cfg_.fusion_levels; ++l) {
      const int s = cfg_.encoder_depth - 1 - l;
      const std::string pre = "decoder.level" + std::to_string(l);
      Var r = conv2d(stages[s], p(pre + ".reassemble.w"), p(pre + ".reassemble.b"), 1, 0);
      if (l == 0) {
        dec = channel_add(r, linear(out.token, p("decoder.readout.w"), p("decoder.readout.b")));
      } else {
        dec = add(upsample2(dec), r);
      }
      Var t = conv_norm(p, pre + ".fuse1", relu(dec), 1, 1);
      t = conv_norm(p, pre + ".fuse2", relu(t), 1, 1);
      dec = add(dec, t);
      out.decoder_feats.push_back(dec);
    }

    out.depth = exp_bounded(head(p, "head.depth", dec), std::log(kMinDepth), std::log(kMaxDepth));
    out.uncertainty = softplus(head(p, "head.unc", dec));
    return out;
  }

  // Decoder feature shapes for each fusion level, coarsest first.
  std::vector<std::vector<int>> decoder_shapes() const {
    std::vector<std::vector<int>> shapes;
    for (int l = 0; l < cfg_.fusion_levels; ++l) {
      const int s = cfg_.encoder_depth - 1 - l;
      const int div = 2 << s;
      shapes.push_back({cfg_.decoder_width, cfg_.height / div, cfg_.width / div});
    }
    return shapes;
  }

 private:
  ag::Var conv_norm(const BoundParams& p, const std::string& name, const ag::Var& x, int stride, int pad) const {
    ag::Var y = ag::conv2d(x, p(name + ".w"), p(name + ".b"), stride, pad);
    return ag::group_norm(y, p(name + ".norm.g"), p(name + ".norm.b"), cfg_.norm_groups);
  }

  ag::Var head(const BoundParams& p, const std::string& pre, ag::Var x) const {
    using namespace ag;
    x = relu(conv2d(x, p(pre + ".conv1.w"), p(pre + ".conv1.b"), 1, 1));
    while (x.value().dim(1) < cfg_.height) x = upsample2(x);
    x = relu(conv2d(x, p(pre + ".conv2.w"), p(pre + ".conv2.b"), 1, 1));
    return conv2d(x, p(pre + ".conv3.w"), p(pre + ".conv3.b"), 1, 0);
  }

  void conv(SplitMix64& rng, const std::string& name, int out, int in, int k, ParamGroup g, double gain = 1.0) {
    Tensor w({out, in, k, k});
    const double std = gain * std::sqrt(2.0 / (in * k * k));
    for (auto& v : w.storage()) v = rng.normal(0.0, std);
    params_.add(name + ".w", std::move(w), g);
    params_.add(name + ".b", Tensor({out}), g);
  }

  // Convolution followed by group normalisation; residual branches start with a zero scale.
  void conv_gn(SplitMix64& rng, const std::string& name, int out, int in, int k, ParamGroup g, bool residual = false) {
    conv(rng, name, out, in, k, g);
    params_.add(name + ".norm.g", Tensor({out}, residual ? 0.0 : 1.0), g);
    params_.add(name + ".norm.b", Tensor({out}), g);
  }

  void dense(SplitMix64& rng, const std::string& name, int out, int in, ParamGroup g) {
    Tensor w({out, in});
    const double std = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w.storage()) v = rng.normal(0.0, std);
    params_.add(name + ".w", std::move(w), g);
    params_.add(name + ".b", Tensor({out}), g);
  }

  void build(SplitMix64& rng) {
    const auto bb = ParamGroup::backbone;
    const auto dg = ParamGroup::decoder;
    const int c = cfg_.base_width;
    if (cfg_.input_kind == InputKind::spike) {
      const int t = cfg_.t_model;
      const int hidden = std::max(1, t / cfg_.se_reduction);
      dense(rng, "temporal.se.fc1", hidden, t, bb);
      dense(rng, "temporal.se.fc2", t, hidden, bb);
      conv_gn(rng, "temporal.stem", c, t, 3, bb);
      conv_gn(rng, "temporal.res.conv1", c, c, 3, bb);
      conv_gn(rng, "temporal.res.conv2", c, c, 3, bb, true);
    } else {
      conv_gn(rng, "rgb.stem", c, 3, 3, bb);
    }
    {
      params_.add("encoder.pos", sincos_position(c, cfg_.height / 2, cfg_.width / 2), bb);
    }
    int in = c;
    for (int s = 0; s < cfg_.encoder_depth; ++s) {
      const std::string pre = "encoder.stage" + std::to_string(s);
      const int ch = stage_channels(s);
      conv_gn(rng, pre + ".down", ch, in, 3, bb);
      conv_gn(rng, pre + ".res", ch, ch, 3, bb, true);
      in = ch;
    }
    const int d = cfg_.token_width;
    {
      Tensor q({d});
      for (auto& v : q.storage()) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
      params_.add("token.query", std::move(q), bb);
    }
    for (int s = 0; s < cfg_.encoder_depth; ++s) {
      const std::string pre = "token.stage" + std::to_string(s);
      dense(rng, pre + ".key", d, stage_channels(s), bb);
      dense(rng, pre + ".value", d, stage_channels(s), bb);
    }
    dense(rng, "global.proj", cfg_.global_width, stage_channels(cfg_.encoder_depth - 1), bb);

    const int f = cfg_.decoder_width;
    dense(rng, "decoder.readout", f, d, dg);
    for (int l = 0; l < cfg_.fusion_levels; ++l) {
      const int s = cfg_.encoder_depth - 1 - l;
      const std::string pre = "decoder.level" + std::to_string(l);
      conv(rng, pre + ".reassemble", f, stage_channels(s), 1, dg);
      conv_gn(rng, pre + ".fuse1", f, f, 3, dg);
      conv_gn(rng, pre + ".fuse2", f, f, 3, dg, true);
    }
    for (const char* name : {"head.depth", "head.unc"}) {
      const std::string pre = name;
      const int mid = std::max(1, f / 2);
      conv(rng, pre + ".conv1", mid, f, 3, dg);
      conv(rng, pre + ".conv2", cfg_.head_hidden, mid, 3, dg);
      // final layer starts at zero so the map begins constant
      params_.add(pre + ".conv3.w", Tensor({1, cfg_.head_hidden, 1, 1}), dg);
      const double bias = pre == "head.depth" ? depth_logit(cfg_.d_init) : std::log(std::expm1(cfg_.unc_init));
      params_.add(pre + ".conv3.b", Tensor({1}, bias), dg);
    }
  }

  NetworkConfig cfg_;
  ParameterSet params_;
};

}  // namespace bicross::net
