#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bicross/autograd/ops.hpp"
#include "bicross/core/error.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/eval/metrics.hpp"
#include "bicross/losses/losses.hpp"
#include "bicross/net/model.hpp"
#include "bicross/train/adam.hpp"
#include "bicross/train/checkpoint.hpp"
#include "bicross/train/config.hpp"
#include "bicross/train/data.hpp"

namespace bicross::train {

inline constexpr const char* kStagePretrain = "pretrain";
inline constexpr const char* kStageModality = "modality";
inline constexpr const char* kStageDomain = "domain";
inline constexpr const char* kStageSource = "source";

inline std::uint64_t stage_tag(const std::string& stage) { return fnv1a64(stage); }

// One forward pass on its own tape; the tape must outlive its variables.
struct Pass {
  std::unique_ptr<ag::Tape> tape = std::make_unique<ag::Tape>();
  std::unique_ptr<net::BoundParams> bound;
  net::NetworkOutputs out;

  Pass(const net::DepthNet& model, const net::ParameterSet& params, const Tensor& input, bool requires_grad) {
    bound = std::make_unique<net::BoundParams>(*tape, params, requires_grad);
    out = model.forward(*tape, *bound, input);
  }

  void backward(const std::vector<ag::Var>& inputs, double value, std::vector<Tensor> grads,
                std::vector<Tensor>& param_grads) {
    ag::Var root = ag::external_scalar(*tape, inputs, value, std::move(grads));
    tape->backward(root);
    bound->accumulate(param_grads);
  }
};

inline std::vector<Tensor> feature_values(const std::vector<ag::Var>& feats) {
  std::vector<Tensor> v;
  for (const auto& f : feats) v.push_back(f.value());
  return v;
}

inline void scale_tensor(Tensor& t, double s) {
  for (auto& v : t.storage()) v *= s;
}

inline bool all_finite(const std::vector<Tensor>& grads) {
  for (const auto& g : grads) {
    for (double v : g.storage()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

struct StepReport {
  nlohmann::json parts = nlohmann::json::object();
  double total = 0.0;
  bool skipped = false;
  std::size_t skipped_samples = 0;
  std::size_t samples = 0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::shared_ptr<const DataSplits> data, std::filesystem::path out_dir = {})
      : cfg_(std::move(cfg)),
        data_(std::move(data)),
        out_dir_(std::move(out_dir)),
        rgb_net_(cfg_.net_for(net::InputKind::rgb), derive_seed(cfg_.seed, 1)),
        spike_net_(cfg_.net_for(net::InputKind::spike), derive_seed(cfg_.seed, 2)) {
    cfg_.validate();
    if (!out_dir_.empty()) {
      std::filesystem::create_directories(out_dir_);
      log_ = MetricLog(out_dir_ / "metrics.jsonl");
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const DataSplits& data() const { return *data_; }
  const net::DepthNet& rgb_net() const { return rgb_net_; }
  const net::DepthNet& spike_net() const { return spike_net_; }
  const MetricLog& log() const { return log_; }
  std::filesystem::path checkpoint_path(const std::string& stage) const { return out_dir_ / (stage + ".ckpt"); }

  AdamHyper hyper() const { return {cfg_.lr_backbone, cfg_.lr_decoder, cfg_.beta1, cfg_.beta2, cfg_.adam_eps}; }

  // Batches of indices for one epoch; the order depends only on (seed, stage, epoch).
  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const std::string& stage, int epoch) const {
    const auto perm = seeded_permutation(n, derive_seed(derive_seed(cfg_.seed, stage_tag(stage)), epoch));
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += cfg_.batch_size) {
      out.emplace_back(perm.begin() + i, perm.begin() + std::min(n, i + cfg_.batch_size));
    }
    return out;
  }

  // ---- steps -------------------------------------------------------------

  // Sig + uncertainty against ground truth; gradients are batch means.
  StepReport supervised_grads(const net::DepthNet& model, const net::ParameterSet& params,
                              std::span<const PreparedSample* const> batch, std::vector<Tensor>& grads) const {
    StepReport r;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double ls = 0.0, lu = 0.0;
    const bool rgb = model.config().input_kind == net::InputKind::rgb;
    for (const PreparedSample* s : batch) {
      Pass p(model, params, rgb ? s->rgb : s->spike, true);
      const Tensor& d = p.out.depth.value();
      auto sig = losses::sig_loss(d, s->depth, cfg_.loss.lambda_sig);
      const Tensor e = losses::uncertainty_target(d, s->depth);
      auto unc = losses::uncertainty_loss(p.out.uncertainty.value(), e, losses::all_valid(e.size()), cfg_.loss.smooth_l1_beta);
      ls += sig.value * inv_b;
      lu += unc.value * inv_b;
      scale_tensor(sig.grad, inv_b);
      scale_tensor(unc.grad, inv_b);
      p.backward({p.out.depth, p.out.uncertainty}, (sig.value + unc.value) * inv_b, {sig.grad, unc.grad}, grads);
    }
    r.samples = batch.size();
    r.parts = {{"ls", ls}, {"l_unc", lu}};
    r.total = ls + lu;
    return r;
  }

  StepReport supervised_step(const net::DepthNet& model, net::ParameterSet& params, AdamState& opt,
                             std::span<const PreparedSample* const> batch) const {
    auto grads = params.zero_grads();
    StepReport r = supervised_grads(model, params, batch, grads);
    if (!std::isfinite(r.total) || !all_finite(grads)) {
      r.skipped = true;
      return r;
    }
    opt.step(params, grads, hyper());
    return r;
  }

  // Cross-modality objective; the RGB side only receives its own supervised and uncertainty terms.
  StepReport modality_grads(const net::ParameterSet& rgb, const net::ParameterSet& spike,
                            std::span<const PreparedSample* const> batch, std::vector<Tensor>& g_rgb,
                            std::vector<Tensor>& g_spike) const {
    const std::size_t b = batch.size();
    const double inv_b = 1.0 / static_cast<double>(b);
    const auto& lc = cfg_.loss;
    std::vector<Pass> pr, ps;
    pr.reserve(b);
    ps.reserve(b);
    for (const PreparedSample* s : batch) {
      pr.emplace_back(rgb_net_, rgb, s->rgb, true);
      ps.emplace_back(spike_net_, spike, s->spike, true);
    }
    std::vector<Tensor> f_rgb, f_spike;
    for (std::size_t i = 0; i < b; ++i) {
      f_rgb.push_back(pr[i].out.f_g.value());
      f_spike.push_back(ps[i].out.f_g.value());
    }
    const auto ckd = losses::ckd_loss_and_grad(f_rgb, f_spike, lc.tau);

    losses::ModParts parts;
    parts.l_ckd = ckd.value;
    for (std::size_t i = 0; i < b; ++i) {
      const Tensor& gt = batch[i]->depth;
      const Tensor& dr = pr[i].out.depth.value();
      const Tensor& ds = ps[i].out.depth.value();
      auto sig_r = losses::sig_loss(dr, gt, lc.lambda_sig);
      auto sig_s = losses::sig_loss(ds, gt, lc.lambda_sig);
      const auto valid = losses::all_valid(gt.size());
      auto unc_r = losses::uncertainty_loss(pr[i].out.uncertainty.value(), losses::uncertainty_target(dr, gt), valid,
                                            lc.smooth_l1_beta);
      auto unc_s = losses::uncertainty_loss(ps[i].out.uncertainty.value(), losses::uncertainty_target(ds, gt), valid,
                                            lc.smooth_l1_beta);
      auto fkd = losses::fkd_loss(feature_values(pr[i].out.decoder_feats), feature_values(ps[i].out.decoder_feats));
      parts.ls_rgb += sig_r.value * inv_b;
      parts.ls_spike += sig_s.value * inv_b;
      parts.l_unc += (unc_r.value + unc_s.value) * inv_b;
      parts.l_fkd += fkd.value * inv_b;

      scale_tensor(sig_r.grad, inv_b);
      scale_tensor(unc_r.grad, inv_b);
      pr[i].backward({pr[i].out.depth, pr[i].out.uncertainty}, (sig_r.value + unc_r.value) * inv_b,
                     {sig_r.grad, unc_r.grad}, g_rgb);

      scale_tensor(sig_s.grad, inv_b);
      scale_tensor(unc_s.grad, inv_b);
      Tensor g_fg = ckd.grad_spike[i];
      scale_tensor(g_fg, lc.w_distill);
      std::vector<ag::Var> inputs{ps[i].out.depth, ps[i].out.uncertainty, ps[i].out.f_g};
      std::vector<Tensor> grads{sig_s.grad, unc_s.grad, g_fg};
      for (std::size_t l = 0; l < fkd.grad_student.size(); ++l) {
        inputs.push_back(ps[i].out.decoder_feats[l]);
        scale_tensor(fkd.grad_student[l], lc.w_distill * inv_b);
        grads.push_back(fkd.grad_student[l]);
      }
      ps[i].backward(inputs, 0.0, std::move(grads), g_spike);
    }
    StepReport r;
    r.samples = b;
    r.total = losses::mod_loss(parts, lc);
    r.parts = {{"ls_rgb", parts.ls_rgb}, {"ls_spike", parts.ls_spike}, {"l_unc", parts.l_unc},
               {"l_ckd", parts.l_ckd},   {"l_fkd", parts.l_fkd}};
    return r;
  }

  StepReport modality_step(net::ParameterSet& rgb, net::ParameterSet& spike, AdamState& opt_rgb, AdamState& opt_spike,
                           std::span<const PreparedSample* const> batch) const {
    auto g_rgb = rgb.zero_grads();
    auto g_spike = spike.zero_grads();
    StepReport r;
    try {
      r = modality_grads(rgb, spike, batch, g_rgb, g_spike);
    } catch (const NonFiniteLoss&) {
      r.skipped = true;
      return r;
    }
    if (!all_finite(g_rgb) || !all_finite(g_spike)) {
      r.skipped = true;
      return r;
    }
    opt_rgb.step(rgb, g_rgb, hyper());
    opt_spike.step(spike, g_spike, hyper());
    return r;
  }

  // Adversarial alignment of source/target tokens through the reversal layer.
  StepReport glfa_grads(const net::ParameterSet& student, const net::ParameterSet& disc,
                        std::span<const PreparedSample* const> src, std::span<const PreparedSample* const> tgt,
                        std::vector<Tensor>& g_student, std::vector<Tensor>& g_disc) const {
    const std::size_t b = tgt.size();
    const double w = cfg_.loss.w_glfa / static_cast<double>(b);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      Pass ps(spike_net_, student, src[i]->spike, true);
      Pass pt(spike_net_, student, tgt[i]->spike, true);
      auto r = losses::glfa_loss(disc, ps.out.token.value(), pt.out.token.value(), cfg_.loss.grl_scale);
      total += r.value / static_cast<double>(b);
      for (std::size_t k = 0; k < g_disc.size(); ++k) g_disc[k].axpy(w, r.disc_grads[k]);
      scale_tensor(r.encoder_grad_src, w);
      scale_tensor(r.encoder_grad_tgt, w);
      ps.backward({ps.out.token}, 0.0, {r.encoder_grad_src}, g_student);
      pt.backward({pt.out.token}, 0.0, {r.encoder_grad_tgt}, g_student);
    }
    StepReport rep;
    rep.samples = b;
    rep.parts = {{"l_glfa", total}};
    rep.total = losses::dom_loss({0.0, total, 0.0}, cfg_.loss);
    return rep;
  }

  // Uncertainty-guided self-training on target samples against the teacher.
  StepReport ugds_grads(const net::ParameterSet& student, const net::ParameterSet& teacher,
                        std::span<const PreparedSample* const> tgt, std::vector<Tensor>& g_student) const {
    struct Label {
      Tensor d_soft;
      losses::UncertaintyMask mask;
    };
    std::vector<Label> labels;
    std::vector<const PreparedSample*> used;
    StepReport rep;
    rep.samples = tgt.size();
    double frac = 0.0;
    for (const PreparedSample* s : tgt) {
      ag::Tape tape;
      tape.set_grad_enabled(false);
      net::BoundParams bp(tape, teacher, false);
      auto out = spike_net_.forward(tape, bp, s->spike);
      auto mask = losses::build_mask(out.uncertainty.value());
      frac += mask.selected_fraction / static_cast<double>(tgt.size());
      if (mask.selected() == 0) {
        ++rep.skipped_samples;
        continue;
      }
      labels.push_back({out.depth.value(), std::move(mask)});
      used.push_back(s);
    }
    double l_ugts = 0.0, l_unc = 0.0;
    const double inv_n = used.empty() ? 0.0 : 1.0 / static_cast<double>(used.size());
    for (std::size_t i = 0; i < used.size(); ++i) {
      Pass p(spike_net_, student, used[i]->spike, true);
      const Tensor& d = p.out.depth.value();
      auto ug = losses::ugts_loss(d, labels[i].d_soft, labels[i].mask, cfg_.loss.smooth_l1_beta);
      l_ugts += ug->value * inv_n;
      scale_tensor(ug->grad, inv_n);
      std::vector<ag::Var> inputs{p.out.depth};
      std::vector<Tensor> grads{ug->grad};
      if (cfg_.loss.unc_in_domain) {
        auto unc = losses::uncertainty_loss(p.out.uncertainty.value(), losses::uncertainty_target(d, labels[i].d_soft),
                                            labels[i].mask.mask, cfg_.loss.smooth_l1_beta);
        l_unc += unc.value * inv_n;
        scale_tensor(unc.grad, inv_n);
        inputs.push_back(p.out.uncertainty);
        grads.push_back(unc.grad);
      }
      p.backward(inputs, 0.0, std::move(grads), g_student);
    }
    rep.skipped = used.empty();
    rep.parts = {{"l_ugts", l_ugts}, {"l_unc", l_unc}, {"mask_fraction", frac}};
    rep.total = losses::dom_loss({l_ugts, 0.0, l_unc}, cfg_.loss);
    return rep;
  }

  // ---- stages ------------------------------------------------------------

  RunState fresh_state(const std::string& stage) const {
    RunState s;
    s.stage = stage;
    s.config = cfg_.to_flat_json();
    s.rng["seed"] = cfg_.seed;
    return s;
  }

  RunState pretrain_rgb(std::optional<RunState> resume = std::nullopt) const {
    RunState s = resume ? std::move(*resume) : fresh_state(kStagePretrain);
    expect_stage(s, kStagePretrain);
    if (!s.models.count("rgb")) {
      s.models["rgb"] = rgb_net_.params();
      s.optim["rgb"] = AdamState::for_params(s.models["rgb"]);
    }
    run_supervised_epochs(s, rgb_net_, "rgb", cfg_.epochs_pretrain, require(data_->src_train, "source training"));
    persist(s);
    return s;
  }

  RunState train_source_only(std::optional<RunState> resume = std::nullopt) const {
    RunState s = resume ? std::move(*resume) : fresh_state(kStageSource);
    expect_stage(s, kStageSource);
    if (!s.models.count("spike")) {
      s.models["spike"] = spike_net_.params();
      s.optim["spike"] = AdamState::for_params(s.models["spike"]);
    }
    run_supervised_epochs(s, spike_net_, "spike", cfg_.epochs_pretrain + cfg_.epochs_modality,
                          require(data_->src_train, "source training"));
    persist(s);
    return s;
  }

  // The spike student starts from the RGB checkpoint wherever names and shapes agree.
  RunState init_modality(const RunState& rgb_ckpt) const {
    RunState s = fresh_state(kStageModality);
    s.models["rgb"] = rgb_ckpt.model("rgb");
    net::ParameterSet spike = spike_net_.params();
    s.counters["loaded_from_rgb"] = static_cast<std::int64_t>(spike.load_matching(s.models["rgb"]));
    s.models["spike"] = std::move(spike);
    s.optim["rgb"] = AdamState::for_params(s.models["rgb"]);
    s.optim["spike"] = AdamState::for_params(s.models["spike"]);
    return s;
  }

  RunState train_cross_modality(const RunState& rgb_ckpt, std::optional<RunState> resume = std::nullopt) const {
    RunState s = resume ? std::move(*resume) : init_modality(rgb_ckpt);
    expect_stage(s, kStageModality);
    const auto& train = require(data_->src_train, "source training");
    for (int e = s.epoch; e < cfg_.epochs_modality; ++e) {
      for (const auto& idx : epoch_batches(train.size(), kStageModality, e)) {
        const auto batch = gather(train, idx);
        StepReport r = modality_step(s.models["rgb"], s.models["spike"], s.optim["rgb"], s.optim["spike"], batch);
        log_step(s, r, e);
      }
      finish_epoch(s, e, {{"spike", &spike_net_, &s.models["spike"]}});
    }
    persist(s);
    return s;
  }

  // k source-supervised steps on the held-back slice displace the teacher from the student.
  net::ParameterSet warmup_teacher(net::ParameterSet teacher, int k) const {
    if (k <= 0) return teacher;
    const auto& held = require(data_->src_holdout, "source held-out");
    AdamState opt = AdamState::for_params(teacher);
    int round = 0;
    int done = 0;
    while (done < k) {
      for (const auto& idx : epoch_batches(held.size(), "warmup", round)) {
        if (done >= k) break;
        supervised_step(spike_net_, teacher, opt, gather(held, idx));
        ++done;
      }
      ++round;
    }
    return teacher;
  }

  RunState init_domain(const RunState& modality_ckpt) const {
    RunState s = fresh_state(kStageDomain);
    s.models["student"] = modality_ckpt.model("spike");
    s.models["teacher"] = warmup_teacher(s.models["student"], cfg_.warmup_steps);
    s.models["disc"] = losses::make_discriminator(cfg_.net.token_width, cfg_.disc_hidden, derive_seed(cfg_.seed, 3));
    // the student keeps the spike model's optimizer moments
    auto mo = modality_ckpt.optim.find("spike");
    s.optim["student"] = mo != modality_ckpt.optim.end() ? mo->second : AdamState::for_params(s.models["student"]);
    s.optim["disc"] = AdamState::for_params(s.models["disc"]);
    s.counters["warmup_steps"] = cfg_.warmup_steps;
    return s;
  }

  // true for GLFA epochs; the two kinds interleave 1:1 starting with GLFA.
  bool is_glfa_epoch(int e) const {
    const int g = cfg_.epochs_glfa, u = cfg_.epochs_ugds;
    const int paired = 2 * std::min(g, u);
    if (e < paired) return e % 2 == 0;
    return g > u;
  }

  RunState train_cross_domain(const RunState& modality_ckpt, std::optional<RunState> resume = std::nullopt) const {
    RunState s = resume ? std::move(*resume) : init_domain(modality_ckpt);
    expect_stage(s, kStageDomain);
    const auto& src = require(data_->src_train, "source training");
    const auto& tgt = require(data_->tgt_train, "target training");
    const int epochs = cfg_.combined_domain ? std::max(cfg_.epochs_glfa, cfg_.epochs_ugds)
                                            : cfg_.epochs_glfa + cfg_.epochs_ugds;
    for (int e = s.epoch; e < epochs; ++e) {
      const bool glfa = cfg_.combined_domain || is_glfa_epoch(e);
      const bool ugds = cfg_.combined_domain || !glfa;
      const auto batches = epoch_batches(tgt.size(), kStageDomain, e);
      const auto src_order = seeded_permutation(src.size(), derive_seed(derive_seed(cfg_.seed, stage_tag("pair")), e));
      std::size_t skipped = 0, seen = 0, cursor = 0;
      for (const auto& idx : batches) {
        const auto tb = gather(tgt, idx);
        auto g_student = s.models["student"].zero_grads();
        auto g_disc = s.models["disc"].zero_grads();
        StepReport r;
        r.parts = nlohmann::json::object();
        r.samples = tb.size();
        try {
          if (glfa) {
            std::vector<std::size_t> si;
            for (std::size_t k = 0; k < idx.size(); ++k) si.push_back(src_order[cursor++ % src.size()]);
            const auto sb = gather(src, si);
            StepReport a = glfa_grads(s.models["student"], s.models["disc"], sb, tb, g_student, g_disc);
            r.parts.update(a.parts);
            r.total += a.total;
          }
          if (ugds) {
            StepReport u = ugds_grads(s.models["student"], s.models["teacher"], tb, g_student);
            r.parts.update(u.parts);
            r.total += u.total;
            r.skipped_samples = u.skipped_samples;
            r.skipped = u.skipped && !glfa;
          }
        } catch (const NonFiniteLoss&) {
          r.skipped = true;
        }
        if (!r.skipped && (!std::isfinite(r.total) || !all_finite(g_student) || !all_finite(g_disc))) r.skipped = true;
        skipped += r.skipped_samples;
        seen += tb.size();
        if (!r.skipped) {
          s.optim["student"].step(s.models["student"], g_student, hyper());
          if (glfa) s.optim["disc"].step(s.models["disc"], g_disc, hyper());
          net::ema_update_inplace(s.models["teacher"], s.models["student"], cfg_.alpha);
        }
        r.parts["kind"] = glfa && ugds ? "combined" : (glfa ? "glfa" : "ugds");
        log_step(s, r, e);
      }
      s.counters["skipped_samples"] += static_cast<std::int64_t>(skipped);
      if (ugds && seen > 0 && static_cast<double>(skipped) > cfg_.max_skip_fraction * static_cast<double>(seen)) {
        throw Error("domain epoch " + std::to_string(e) + ": " + std::to_string(skipped) + " of " +
                    std::to_string(seen) + " target samples had empty uncertainty masks");
      }
      finish_epoch(s, e,
                   {{"student", &spike_net_, &s.models["student"]}, {"teacher", &spike_net_, &s.models["teacher"]}});
    }
    persist(s);
    return s;
  }

  // ---- evaluation --------------------------------------------------------

  eval::Metrics evaluate(const net::DepthNet& model, const net::ParameterSet& params,
                         const std::vector<PreparedSample>& samples) const {
    eval::MetricAccumulator acc(cfg_.eval_d_min, cfg_.eval_d_max);
    for (const auto& s : samples) acc.add(predict(model, params, s).first, s.depth);
    return acc.result();
  }

  std::pair<Tensor, Tensor> predict(const net::DepthNet& model, const net::ParameterSet& params,
                                    const PreparedSample& s) const {
    ag::Tape tape;
    tape.set_grad_enabled(false);
    net::BoundParams bp(tape, params, false);
    const bool rgb = model.config().input_kind == net::InputKind::rgb;
    auto out = model.forward(tape, bp, rgb ? s.rgb : s.spike);
    return {out.depth.value(), out.uncertainty.value()};
  }

  // Spearman correlation between predicted uncertainty and actual relative error, pooled over pixels.
  double uncertainty_rank_correlation(const net::DepthNet& model, const net::ParameterSet& params,
                                      const std::vector<PreparedSample>& samples) const {
    std::vector<double> u, err;
    for (const auto& s : samples) {
      auto [d, unc] = predict(model, params, s);
      const Tensor e = losses::uncertainty_target(d, s.depth);
      u.insert(u.end(), unc.storage().begin(), unc.storage().end());
      err.insert(err.end(), e.storage().begin(), e.storage().end());
    }
    return eval::rank_correlation(u, err);
  }

 private:
  struct EvalTarget {
    const char* name;
    const net::DepthNet* model;
    const net::ParameterSet* params;
  };

  static const std::vector<PreparedSample>& require(const std::vector<PreparedSample>& v, const char* what) {
    if (v.empty()) throw IoError(std::string("no ") + what + " samples available");
    return v;
  }

  static void expect_stage(const RunState& s, const char* stage) {
    if (s.stage != stage) throw ConfigError("checkpoint is from stage '" + s.stage + "', expected '" + stage + "'");
  }

  static std::vector<const PreparedSample*> gather(const std::vector<PreparedSample>& all,
                                                   const std::vector<std::size_t>& idx) {
    std::vector<const PreparedSample*> out;
    for (auto i : idx) out.push_back(&all[i]);
    return out;
  }

  void run_supervised_epochs(RunState& s, const net::DepthNet& model, const std::string& key, int epochs,
                             const std::vector<PreparedSample>& train) const {
    for (int e = s.epoch; e < epochs; ++e) {
      for (const auto& idx : epoch_batches(train.size(), s.stage, e)) {
        StepReport r = supervised_step(model, s.models[key], s.optim[key], gather(train, idx));
        log_step(s, r, e);
      }
      finish_epoch(s, e, {{key.c_str(), &model, &s.models[key]}});
    }
  }

  void log_step(RunState& s, const StepReport& r, int epoch) const {
    ++s.step;
    if (r.skipped) ++s.counters["skipped_steps"];
    nlohmann::json row{{"type", "train"}, {"stage", s.stage}, {"epoch", epoch}, {"step", s.step},
                       {"loss", r.total},  {"skipped", r.skipped}};
    if (r.skipped_samples) row["skipped_samples"] = r.skipped_samples;
    row.update(r.parts);
    log_.append(row);
  }

  // Writes the final state of a stage; a no-op without an output directory.
  void persist(const RunState& s) const {
    if (!out_dir_.empty()) checkpoint_save(s, checkpoint_path(s.stage));
  }

  void finish_epoch(RunState& s, int e, std::initializer_list<EvalTarget> targets) const {
    s.epoch = e + 1;
    for (const auto& t : targets) {
      const bool rgb = t.model->config().input_kind == net::InputKind::rgb;
      std::vector<std::pair<const char*, const std::vector<PreparedSample>*>> splits{{"source_holdout", &data_->src_holdout}};
      if (!rgb) splits.push_back({"target_test", &data_->tgt_test});
      for (const auto& [split, samples] : splits) {
        if (samples->empty()) continue;
        nlohmann::json row{{"type", "eval"}, {"stage", s.stage}, {"epoch", s.epoch}, {"step", s.step},
                           {"model", t.name}, {"split", split}, {"metrics", evaluate(*t.model, *t.params, *samples)}};
        log_.append(row);
        s.history.push_back(row);
      }
    }
    persist(s);
  }

  TrainConfig cfg_;
  std::shared_ptr<const DataSplits> data_;
  std::filesystem::path out_dir_;
  net::DepthNet rgb_net_;
  net::DepthNet spike_net_;
  MetricLog log_;
};

}  // namespace bicross::train
