#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bicross/core/rng.hpp"
#include "bicross/core/tensor.hpp"
#include "bicross/eval/gradcheck.hpp"
#include "bicross/losses/losses.hpp"

namespace bicross::eval {

struct LossCheck {
  std::string name;
  GradcheckResult result;
  int h = 0;
  int w = 0;
};

namespace detail {

inline Tensor random_tensor(SplitMix64& rng, std::vector<int> shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_normal(SplitMix64& rng, std::vector<int> shape, double sd) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.normal(0.0, sd);
  return t;
}

inline std::vector<Tensor> slice(const std::vector<NamedTensor>& p, std::size_t from, std::size_t n) {
  std::vector<Tensor> out;
  for (std::size_t i = from; i < from + n; ++i) out.push_back(p[i].value);
  return out;
}

}  // namespace detail

// Gradient checks for every loss on a seeded instance with side lengths in [4, 8].
inline std::vector<LossCheck> run_loss_gradchecks(std::uint64_t seed, const losses::LossConfig& cfg = {},
                                                  const GradcheckOptions& base = {}) {
  using detail::random_normal;
  using detail::random_tensor;
  std::vector<LossCheck> out;
  SplitMix64 rng(seed);
  auto side = [&]() { return static_cast<int>(rng.integer(4, 8)); };
  GradcheckOptions opt = base;
  opt.seed = derive_seed(seed, 1);

  auto record = [&](const std::string& name, int h, int w, const LossProbe& probe, std::vector<NamedTensor> params) {
    out.push_back({name, gradcheck(probe, std::move(params), opt), h, w});
  };

  {  // scale-invariant log loss with a partial mask
    const int h = side(), w = side();
    const Tensor gt = random_tensor(rng, {h, w}, 1.0, 20.0);
    Mask valid(gt.size());
    for (auto& v : valid) v = rng.uniform() < 0.8 ? 1 : 0;
    valid[0] = 1;
    LossProbe p{[=](const std::vector<NamedTensor>& x) { return losses::sig_loss(x[0].value, gt, valid, cfg.lambda_sig).value; },
                [=](const std::vector<NamedTensor>& x) {
                  return std::vector<Tensor>{losses::sig_loss(x[0].value, gt, valid, cfg.lambda_sig).grad};
                }};
    record("sig", h, w, p, {{"pred", random_tensor(rng, {h, w}, 1.0, 20.0)}});
  }

  {  // contrastive global alignment on a batch of b vectors of width g
    const int b = side(), g = side();
    std::vector<NamedTensor> params;
    for (int i = 0; i < b; ++i) params.push_back({"f_rgb" + std::to_string(i), random_normal(rng, {g}, 1.0)});
    for (int i = 0; i < b; ++i) params.push_back({"f_spike" + std::to_string(i), random_normal(rng, {g}, 1.0)});
    const double tau = cfg.tau;
    LossProbe p{[=](const std::vector<NamedTensor>& x) {
                  return losses::ckd_loss_and_grad(detail::slice(x, 0, b), detail::slice(x, b, b), tau).value;
                },
                [=](const std::vector<NamedTensor>& x) {
                  auto r = losses::ckd_loss_and_grad(detail::slice(x, 0, b), detail::slice(x, b, b), tau);
                  std::vector<Tensor> grads = r.grad_rgb;
                  grads.insert(grads.end(), r.grad_spike.begin(), r.grad_spike.end());
                  return grads;
                }};
    record("ckd", b, g, p, std::move(params));
  }

  {  // feature distillation over two levels
    const int h = side(), w = side();
    std::vector<NamedTensor> params{{"teacher0", random_normal(rng, {3, h, w}, 1.0)},
                                    {"teacher1", random_normal(rng, {2, h / 2, w / 2}, 1.0)},
                                    {"student0", random_normal(rng, {3, h, w}, 1.0)},
                                    {"student1", random_normal(rng, {2, h / 2, w / 2}, 1.0)}};
    LossProbe p{[](const std::vector<NamedTensor>& x) {
                  return losses::fkd_loss(detail::slice(x, 0, 2), detail::slice(x, 2, 2)).value;
                },
                [](const std::vector<NamedTensor>& x) {
                  auto r = losses::fkd_loss(detail::slice(x, 0, 2), detail::slice(x, 2, 2));
                  std::vector<Tensor> grads = r.grad_teacher;
                  grads.insert(grads.end(), r.grad_student.begin(), r.grad_student.end());
                  return grads;
                }};
    record("fkd", h, w, p, std::move(params));
  }

  {  // relative-error target, contracted with fixed weights to a scalar
    const int h = side(), w = side();
    const Tensor ref = random_tensor(rng, {h, w}, 1.0, 20.0);
    const Tensor c = random_normal(rng, {h, w}, 1.0);
    LossProbe p{[=](const std::vector<NamedTensor>& x) {
                  const Tensor e = losses::uncertainty_target(x[0].value, ref);
                  double s = 0.0;
                  for (std::size_t i = 0; i < e.size(); ++i) s += c[i] * e[i];
                  return s;
                },
                [=](const std::vector<NamedTensor>& x) {
                  Tensor g = losses::uncertainty_target_grad(x[0].value, ref);
                  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= c[i];
                  return std::vector<Tensor>{g};
                }};
    Tensor pred = ref;
    for (auto& v : pred.storage()) v *= rng.uniform() < 0.5 ? rng.uniform(0.5, 0.9) : rng.uniform(1.1, 1.8);
    record("uncertainty_target", h, w, p, {{"pred", pred}});
  }

  {  // uncertainty regression
    const int h = side(), w = side();
    const Tensor e_soft = random_tensor(rng, {h, w}, 0.0, 1.0);
    Mask valid(e_soft.size(), 1);
    const double beta = cfg.smooth_l1_beta;
    LossProbe p{[=](const std::vector<NamedTensor>& x) { return losses::uncertainty_loss(x[0].value, e_soft, valid, beta).value; },
                [=](const std::vector<NamedTensor>& x) {
                  return std::vector<Tensor>{losses::uncertainty_loss(x[0].value, e_soft, valid, beta).grad};
                }};
    Tensor unc = e_soft;
    for (auto& v : unc.storage()) v += rng.uniform() < 0.5 ? rng.uniform(-0.8, 0.8) : rng.uniform(-3.0, 3.0);
    record("uncertainty", h, w, p, {{"unc", unc}});
  }

  {  // pseudo-label regression on the uncertainty-selected pixels
    const int h = side(), w = side();
    const Tensor d_soft = random_tensor(rng, {h, w}, 1.0, 20.0);
    Tensor e_soft = random_tensor(rng, {h, w}, 0.0, 0.6);
    const losses::UncertaintyMask mask = losses::build_mask(e_soft);
    const double beta = cfg.smooth_l1_beta;
    LossProbe p{[=](const std::vector<NamedTensor>& x) {
                  auto r = losses::ugts_loss(x[0].value, d_soft, mask, beta);
                  return r ? r->value : 0.0;
                },
                [=](const std::vector<NamedTensor>& x) {
                  auto r = losses::ugts_loss(x[0].value, d_soft, mask, beta);
                  return std::vector<Tensor>{r ? r->grad : Tensor::zeros_like(x[0].value)};
                }};
    Tensor student = d_soft;
    for (auto& v : student.storage()) v += rng.uniform() < 0.5 ? rng.uniform(-0.8, 0.8) : rng.uniform(-4.0, 4.0);
    record("ugts", h, w, p, {{"student", student}});
  }

  const int d = side(), hidden = side();
  const net::ParameterSet disc0 = losses::make_discriminator(d, hidden, derive_seed(seed, 2));
  // Redraw until no hidden unit sits on the ReLU kink.
  auto off_kink = [&](const Tensor& x) {
    for (double a : losses::discriminate(disc0, x).pre) {
      if (std::abs(a) < 1e-3) return false;
    }
    return true;
  };
  Tensor f_src0, f_tgt0;
  do {
    f_src0 = random_normal(rng, {d}, 1.0);
  } while (!off_kink(f_src0));
  do {
    f_tgt0 = random_normal(rng, {d}, 1.0);
  } while (!off_kink(f_tgt0));
  {  // discriminator loss, true gradients for discriminator and both tokens
    std::vector<NamedTensor> params;
    for (const auto& q : disc0) params.push_back({q.name, q.value});
    params.push_back({"f_src", f_src0});
    params.push_back({"f_tgt", f_tgt0});
    const std::size_t nd = disc0.size();
    auto rebuild = [disc0, nd](const std::vector<NamedTensor>& x) {
      net::ParameterSet s = disc0;
      for (std::size_t i = 0; i < nd; ++i) s[i].value = x[i].value;
      return s;
    };
    const double mu = cfg.grl_scale;
    LossProbe p{[=](const std::vector<NamedTensor>& x) {
                  return losses::glfa_loss(rebuild(x), x[nd].value, x[nd + 1].value, mu).value;
                },
                [=](const std::vector<NamedTensor>& x) {
                  auto r = losses::glfa_loss(rebuild(x), x[nd].value, x[nd + 1].value, mu);
                  std::vector<Tensor> grads = r.disc_grads;
                  grads.push_back(r.grad_src);
                  grads.push_back(r.grad_tgt);
                  return grads;
                }};
    record("glfa", d, hidden, p, std::move(params));
  }

  {  // reversal contract: the encoder-side gradient equals -mu times the numeric gradient
    const double mu = cfg.grl_scale;
    LossProbe p{[=](const std::vector<NamedTensor>& x) {
                  return -mu * losses::glfa_loss(disc0, x[0].value, x[1].value, mu).value;
                },
                [=](const std::vector<NamedTensor>& x) {
                  auto r = losses::glfa_loss(disc0, x[0].value, x[1].value, mu);
                  return std::vector<Tensor>{r.encoder_grad_src, r.encoder_grad_tgt};
                }};
    record("glfa_reversal", d, hidden, p, {{"f_src", f_src0}, {"f_tgt", f_tgt0}});
  }
  return out;
}

}  // namespace bicross::eval
