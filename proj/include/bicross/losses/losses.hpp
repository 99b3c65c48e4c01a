#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/core/rng.hpp"
#include "bicross/core/tensor.hpp"
#include "bicross/net/params.hpp"

namespace bicross::losses {

struct LossConfig {
  double tau = 0.5;             // contrastive temperature
  double lambda_sig = 0.5;      // scale term weight of the Sig loss
  double w_distill = 0.1;       // weight on CKD + FKD in the cross-modality objective
  double w_glfa = 0.1;          // weight on the alignment term in the cross-domain objective
  double smooth_l1_beta = 1.0;
  double grl_scale = 1.0;       // mu: gradient reversal multiplier
  bool unc_in_domain = true;    // add L_unc (against the pseudo label) to the cross-domain objective

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(lambda_sig >= 0.0 && lambda_sig <= 1.0)) throw ConfigError("lambda_sig must lie in [0, 1]");
    if (!(w_distill >= 0.0) || !(w_glfa >= 0.0)) throw ConfigError("loss weights must be >= 0");
    if (!(smooth_l1_beta > 0.0)) throw ConfigError("smooth_l1_beta must be positive");
    if (!(grl_scale >= 0.0)) throw ConfigError("grl_scale must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"tau", c.tau},           {"lambda_sig", c.lambda_sig},
                     {"w_distill", c.w_distill}, {"w_glfa", c.w_glfa},
                     {"smooth_l1_beta", c.smooth_l1_beta}, {"grl_scale", c.grl_scale},
                     {"unc_in_domain", c.unc_in_domain}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, LossConfig& c) {
  c.tau = j.value("tau", c.tau);
  c.lambda_sig = j.value("lambda_sig", c.lambda_sig);
  c.w_distill = j.value("w_distill", c.w_distill);
  c.w_glfa = j.value("w_glfa", c.w_glfa);
  c.smooth_l1_beta = j.value("smooth_l1_beta", c.smooth_l1_beta);
  c.grl_scale = j.value("grl_scale", c.grl_scale);
  c.unc_in_domain = j.value("unc_in_domain", c.unc_in_domain);
}

// A scalar objective together with its gradient w.r.t. the primary input.
struct ScalarGrad {
  double value = 0.0;
  Tensor grad;
};

inline constexpr double kRefFloor = 1e-3;
inline constexpr double kProbFloor = 1e-12;
inline constexpr double kDiscClamp = 1e-7;

inline Mask all_valid(std::size_t n) { return Mask(n, 1); }

namespace detail {

inline void check_sizes(const Tensor& a, const Tensor& b, const char* what) {
  if (a.size() != b.size()) {
    throw InvalidInput(std::string(what) + ": size mismatch " + Tensor::shape_string(a.shape()) + " vs " +
                       Tensor::shape_string(b.shape()));
  }
}

inline void check_mask(const Tensor& a, std::span<const unsigned char> mask, const char* what) {
  if (mask.size() != a.size()) throw InvalidInput(std::string(what) + ": mask size mismatch");
}

}  // namespace detail

inline double smooth_l1(double x, double beta) {
  const double ax = std::abs(x);
  return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
}

inline double smooth_l1_grad(double x, double beta) {
  const double ax = std::abs(x);
  if (ax < beta) return x / beta;
  return x > 0.0 ? 1.0 : -1.0;
}

// Sig loss over valid pixels: mean(L^2) - lambda * mean(L)^2, L = log pred - log gt.
inline ScalarGrad sig_loss(const Tensor& pred, const Tensor& gt, std::span<const unsigned char> valid,
                           double lambda) {
  detail::check_sizes(pred, gt, "sig_loss");
  detail::check_mask(pred, valid, "sig_loss");
  std::size_t n = 0;
  double sum = 0.0, sum_sq = 0.0;
  std::vector<double> log_ratio(pred.size(), 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    if (!(pred[i] > 0.0) || !(gt[i] > 0.0)) {
      throw InvalidInput("sig_loss: non-positive depth at valid pixel " + std::to_string(i));
    }
    const double l = std::log(pred[i]) - std::log(gt[i]);
    log_ratio[i] = l;
    sum += l;
    sum_sq += l * l;
    ++n;
  }
  if (n == 0) throw DegenerateInput("sig_loss: empty valid mask");
  const double nn = static_cast<double>(n);
  ScalarGrad out;
  out.value = sum_sq / nn - lambda * sum * sum / (nn * nn);
  out.grad = Tensor::zeros_like(pred);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    out.grad[i] = (2.0 * log_ratio[i] / nn - 2.0 * lambda * sum / (nn * nn)) / pred[i];
  }
  return out;
}

inline ScalarGrad sig_loss(const Tensor& pred, const Tensor& gt, double lambda) {
  return sig_loss(pred, gt, all_valid(pred.size()), lambda);
}

namespace detail {

inline void check_batch(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.empty() || b.empty()) throw DegenerateInput("contrastive batch is empty");
  if (a.size() != b.size()) throw InvalidInput("contrastive batches differ in size");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != a[0].size() || b[i].size() != a[0].size()) {
      throw InvalidInput("contrastive vectors differ in width");
    }
  }
}

// h = row softmax of S / tau, S_ij = <a_i, b_j>.
inline Tensor row_softmax_similarity(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double tau) {
  const int n = static_cast<int>(a.size());
  const std::size_t g = a[0].size();
  Tensor h({n, n});
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < g; ++k) s += a[i][k] * b[j][k];
      h[i * n + j] = s / tau;
      mx = std::max(mx, h[i * n + j]);
    }
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += (h[i * n + j] = std::exp(h[i * n + j] - mx));
    for (int j = 0; j < n; ++j) h[i * n + j] /= z;
  }
  return h;
}

}  // namespace detail

// b x b matched-pair probabilities; the denominator is the whole row.
inline Tensor ckd_pair_prob(const std::vector<Tensor>& f_rgb, const std::vector<Tensor>& f_spike, double tau) {
  detail::check_batch(f_rgb, f_spike);
  if (!(tau > 0.0)) throw InvalidParameter("tau must be positive");
  for (const auto* batch : {&f_rgb, &f_spike}) {
    for (const auto& v : *batch) {
      double sq = 0.0;
      for (double e : v.storage()) sq += e * e;
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) throw InvalidInput("ckd_pair_prob: vectors must be unit norm");
    }
  }
  return detail::row_softmax_similarity(f_rgb, f_spike, tau);
}

// Negative log-likelihood of the matched pairs.
inline double ckd_loss(const Tensor& h) {
  if (h.rank() != 2 || h.dim(0) != h.dim(1) || h.dim(0) < 1) throw InvalidInput("ckd_loss: h must be b x b");
  const int n = h.dim(0);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc -= std::log(std::max(h[i * n + i], kProbFloor));
  return acc / n;
}

struct CkdResult {
  double value = 0.0;
  Tensor h;
  std::vector<Tensor> grad_rgb;
  std::vector<Tensor> grad_spike;
};

// CKD loss from raw global vectors with gradients for both sides.
inline CkdResult ckd_loss_and_grad(const std::vector<Tensor>& f_rgb, const std::vector<Tensor>& f_spike,
                                   double tau) {
  detail::check_batch(f_rgb, f_spike);
  if (!(tau > 0.0)) throw InvalidParameter("tau must be positive");
  const int n = static_cast<int>(f_rgb.size());
  const std::size_t g = f_rgb[0].size();
  CkdResult r;
  r.h = detail::row_softmax_similarity(f_rgb, f_spike, tau);
  r.value = ckd_loss(r.h);
  for (int i = 0; i < n; ++i) {
    r.grad_rgb.push_back(Tensor::zeros_like(f_rgb[i]));
    r.grad_spike.push_back(Tensor::zeros_like(f_spike[i]));
  }
  for (int i = 0; i < n; ++i) {
    if (r.h[i * n + i] < kProbFloor) continue;  // floored term is constant
    for (int j = 0; j < n; ++j) {
      const double ds = (r.h[i * n + j] - (i == j ? 1.0 : 0.0)) / (n * tau);
      for (std::size_t k = 0; k < g; ++k) {
        r.grad_rgb[i][k] += ds * f_spike[j][k];
        r.grad_spike[j][k] += ds * f_rgb[i][k];
      }
    }
  }
  return r;
}

struct FkdResult {
  double value = 0.0;
  std::vector<Tensor> grad_student;
  std::vector<Tensor> grad_teacher;  // for checking only; teacher features are constants in training
};

// Per level: mean over spatial positions of the squared channel-vector distance; summed over levels.
inline FkdResult fkd_loss(const std::vector<Tensor>& teacher, const std::vector<Tensor>& student) {
  if (teacher.size() != student.size()) throw InvalidInput("fkd_loss: level counts differ");
  FkdResult r;
  for (std::size_t l = 0; l < teacher.size(); ++l) {
    const Tensor& t = teacher[l];
    const Tensor& s = student[l];
    if (t.shape() != s.shape() || t.rank() != 3) {
      throw InvalidInput("fkd_loss: level " + std::to_string(l) + " shapes differ: " +
                         Tensor::shape_string(t.shape()) + " vs " + Tensor::shape_string(s.shape()));
    }
    const double positions = static_cast<double>(t.dim(1)) * t.dim(2);
    Tensor gs = Tensor::zeros_like(s);
    Tensor gt = Tensor::zeros_like(t);
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double d = t[i] - s[i];
      acc += d * d;
      gs[i] = -2.0 * d / positions;
      gt[i] = 2.0 * d / positions;
    }
    r.value += acc / positions;
    r.grad_student.push_back(std::move(gs));
    r.grad_teacher.push_back(std::move(gt));
  }
  return r;
}

// Relative error map |pred - ref| / ref, ref floored at kRefFloor.
inline Tensor uncertainty_target(const Tensor& pred, const Tensor& ref) {
  detail::check_sizes(pred, ref, "uncertainty_target");
  Tensor e = Tensor::zeros_like(pred);
  for (std::size_t i = 0; i < pred.size(); ++i) e[i] = std::abs(pred[i] - ref[i]) / std::max(ref[i], kRefFloor);
  return e;
}

// Elementwise derivative d E_i / d pred_i.
inline Tensor uncertainty_target_grad(const Tensor& pred, const Tensor& ref) {
  detail::check_sizes(pred, ref, "uncertainty_target_grad");
  Tensor g = Tensor::zeros_like(pred);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - ref[i];
    g[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / std::max(ref[i], kRefFloor);
  }
  return g;
}

// Mean smooth-L1 of (unc - e_soft) over valid pixels; e_soft is a constant.
inline ScalarGrad uncertainty_loss(const Tensor& unc, const Tensor& e_soft, std::span<const unsigned char> valid,
                                   double beta) {
  detail::check_sizes(unc, e_soft, "uncertainty_loss");
  detail::check_mask(unc, valid, "uncertainty_loss");
  std::size_t n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  if (n == 0) throw DegenerateInput("uncertainty_loss: empty valid mask");
  ScalarGrad out;
  out.grad = Tensor::zeros_like(unc);
  for (std::size_t i = 0; i < unc.size(); ++i) {
    if (!valid[i]) continue;
    const double x = unc[i] - e_soft[i];
    out.value += smooth_l1(x, beta);
    out.grad[i] = smooth_l1_grad(x, beta) / static_cast<double>(n);
  }
  out.value /= static_cast<double>(n);
  return out;
}

struct UncertaintyMask {
  Mask mask;
  double e_thresh = 0.0;
  double selected_fraction = 0.0;

  std::size_t selected() const {
    std::size_t n = 0;
    for (auto v : mask) n += v;
    return n;
  }
};

// Keep pixels whose uncertainty does not exceed the population variance of the map.
inline UncertaintyMask build_mask(const Tensor& e_soft) {
  if (e_soft.empty()) throw DegenerateInput("build_mask: empty map");
  double mean = 0.0;
  for (double v : e_soft.storage()) {
    if (!std::isfinite(v)) throw InvalidInput("build_mask: non-finite uncertainty");
    mean += v;
  }
  const double n = static_cast<double>(e_soft.size());
  mean /= n;
  double var = 0.0;
  for (double v : e_soft.storage()) var += (v - mean) * (v - mean);
  var /= n;

  UncertaintyMask m;
  m.e_thresh = var;
  m.mask.resize(e_soft.size());
  std::size_t kept = 0;
  for (std::size_t i = 0; i < e_soft.size(); ++i) {
    m.mask[i] = e_soft[i] <= var ? 1 : 0;
    kept += m.mask[i];
  }
  m.selected_fraction = static_cast<double>(kept) / n;
  return m;
}

// Smooth-L1 between student depth and the pseudo label over selected pixels.
// nullopt tells the caller to skip the sample.
inline std::optional<ScalarGrad> ugts_loss(const Tensor& student_depth, const Tensor& d_soft,
                                           const UncertaintyMask& mask, double beta) {
  detail::check_sizes(student_depth, d_soft, "ugts_loss");
  detail::check_mask(student_depth, mask.mask, "ugts_loss");
  const std::size_t n = mask.selected();
  if (n == 0) return std::nullopt;
  ScalarGrad out;
  out.grad = Tensor::zeros_like(student_depth);
  for (std::size_t i = 0; i < student_depth.size(); ++i) {
    if (!mask.mask[i]) continue;
    const double x = student_depth[i] - d_soft[i];
    out.value += smooth_l1(x, beta);
    out.grad[i] = smooth_l1_grad(x, beta) / static_cast<double>(n);
  }
  out.value /= static_cast<double>(n);
  return out;
}

// Domain discriminator: sigmoid(w2 . relu(W1 x + b1) + b2).
inline net::ParameterSet make_discriminator(int token_width, int hidden, std::uint64_t seed) {
  if (token_width < 1 || hidden < 1) throw ConfigError("discriminator widths must be >= 1");
  SplitMix64 rng(seed);
  net::ParameterSet d;
  Tensor w1({hidden, token_width});
  for (auto& v : w1.storage()) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(token_width)));
  Tensor w2({1, hidden});
  for (auto& v : w2.storage()) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  d.add("disc.fc1.w", std::move(w1), net::ParamGroup::decoder);
  d.add("disc.fc1.b", Tensor({hidden}), net::ParamGroup::decoder);
  d.add("disc.fc2.w", std::move(w2), net::ParamGroup::decoder);
  d.add("disc.fc2.b", Tensor({1}), net::ParamGroup::decoder);
  return d;
}

struct DiscriminatorPass {
  double d = 0.0;        // clamped probability of "source"
  bool clamped = false;
  std::vector<double> pre;  // hidden pre-activations
  double logit = 0.0;
};

inline DiscriminatorPass discriminate(const net::ParameterSet& disc, const Tensor& x) {
  const Tensor& w1 = disc.value("disc.fc1.w");
  const Tensor& b1 = disc.value("disc.fc1.b");
  const Tensor& w2 = disc.value("disc.fc2.w");
  const Tensor& b2 = disc.value("disc.fc2.b");
  const int hidden = w1.dim(0), in = w1.dim(1);
  if (x.size() != static_cast<std::size_t>(in)) throw InvalidInput("discriminator: token width mismatch");
  DiscriminatorPass p;
  p.pre.resize(static_cast<std::size_t>(hidden));
  double z = b2[0];
  for (int r = 0; r < hidden; ++r) {
    double a = b1[r];
    for (int i = 0; i < in; ++i) a += w1[static_cast<std::size_t>(r) * in + i] * x[i];
    p.pre[r] = a;
    z += w2[r] * std::max(a, 0.0);
  }
  p.logit = z;
  const double d = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  p.clamped = d < kDiscClamp || d > 1.0 - kDiscClamp;
  p.d = std::clamp(d, kDiscClamp, 1.0 - kDiscClamp);
  return p;
}

struct GlfaResult {
  double value = 0.0;
  double d_src = 0.0;
  double d_tgt = 0.0;
  std::vector<Tensor> disc_grads;  // true gradient, aligned with the discriminator ParameterSet
  Tensor grad_src;                 // true gradient w.r.t. the source token
  Tensor grad_tgt;
  Tensor encoder_grad_src;         // what the encoder receives: -mu * grad_src
  Tensor encoder_grad_tgt;
};

// -[log d(f_src) + log(1 - d(f_tgt))] with gradient reversal toward the encoder.
inline GlfaResult glfa_loss(const net::ParameterSet& disc, const Tensor& f_src, const Tensor& f_tgt, double mu) {
  const Tensor& w1 = disc.value("disc.fc1.w");
  const Tensor& w2 = disc.value("disc.fc2.w");
  const int hidden = w1.dim(0), in = w1.dim(1);

  GlfaResult r;
  r.disc_grads = disc.zero_grads();
  const std::size_t i_w1 = disc.index("disc.fc1.w"), i_b1 = disc.index("disc.fc1.b");
  const std::size_t i_w2 = disc.index("disc.fc2.w"), i_b2 = disc.index("disc.fc2.b");

  auto side = [&](const Tensor& x, bool is_source, Tensor& grad_x) {
    const DiscriminatorPass p = discriminate(disc, x);
    grad_x = Tensor::zeros_like(x);
    double dz = 0.0;
    if (!p.clamped) dz = is_source ? -(1.0 - p.d) : p.d;
    if (dz != 0.0) {
      r.disc_grads[i_b2][0] += dz;
      for (int k = 0; k < hidden; ++k) {
        const double h = std::max(p.pre[k], 0.0);
        r.disc_grads[i_w2][k] += dz * h;
        if (p.pre[k] <= 0.0) continue;
        const double da = dz * w2[k];
        r.disc_grads[i_b1][k] += da;
        for (int i = 0; i < in; ++i) {
          r.disc_grads[i_w1][static_cast<std::size_t>(k) * in + i] += da * x[i];
          grad_x[i] += da * w1[static_cast<std::size_t>(k) * in + i];
        }
      }
    }
    return p.d;
  };

  r.d_src = side(f_src, true, r.grad_src);
  r.d_tgt = side(f_tgt, false, r.grad_tgt);
  r.value = -(std::log(r.d_src) + std::log(1.0 - r.d_tgt));
  r.encoder_grad_src = Tensor::zeros_like(r.grad_src);
  r.encoder_grad_src.axpy(-mu, r.grad_src);
  r.encoder_grad_tgt = Tensor::zeros_like(r.grad_tgt);
  r.encoder_grad_tgt.axpy(-mu, r.grad_tgt);
  return r;
}

struct ModParts {
  double ls_rgb = 0.0;
  double ls_spike = 0.0;
  double l_unc = 0.0;
  double l_ckd = 0.0;
  double l_fkd = 0.0;
};

struct DomParts {
  double l_ugts = 0.0;
  double l_glfa = 0.0;
  double l_unc = 0.0;
};

namespace detail {
inline void check_finite(std::initializer_list<double> parts, const char* what) {
  for (double v : parts) {
    if (!std::isfinite(v)) throw NonFiniteLoss(std::string(what) + ": non-finite component");
  }
}
}  // namespace detail

// Ls_rgb + Ls_spike + L_unc + w_distill * (L_CKD + L_FKD)
inline double mod_loss(const ModParts& p, const LossConfig& cfg = {}) {
  detail::check_finite({p.ls_rgb, p.ls_spike, p.l_unc, p.l_ckd, p.l_fkd}, "mod_loss");
  return p.ls_rgb + p.ls_spike + p.l_unc + cfg.w_distill * (p.l_ckd + p.l_fkd);
}

// L_UGTS + w_glfa * L_GLFA (+ L_unc when enabled)
inline double dom_loss(const DomParts& p, const LossConfig& cfg = {}) {
  detail::check_finite({p.l_ugts, p.l_glfa, p.l_unc}, "dom_loss");
  return p.l_ugts + cfg.w_glfa * p.l_glfa + (cfg.unc_in_domain ? p.l_unc : 0.0);
}

}  // namespace bicross::losses
