#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <set>

#include "bicross/core/rng.hpp"
#include "bicross/eval/loss_suite.hpp"
#include "bicross/losses/losses.hpp"

using namespace bicross;
using namespace bicross::losses;

namespace {

Tensor vec(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor map2(int h, int w, std::vector<double> v) { return Tensor({h, w}, std::move(v)); }

Tensor random_map(SplitMix64& rng, int h, int w, double lo, double hi) {
  Tensor t({h, w});
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<Tensor> random_unit_batch(SplitMix64& rng, int b, int g) {
  std::vector<Tensor> out;
  for (int i = 0; i < b; ++i) {
    Tensor t({g});
    double sq = 0.0;
    for (auto& v : t.storage()) {
      v = rng.normal();
      sq += v * v;
    }
    for (auto& v : t.storage()) v /= std::sqrt(sq);
    out.push_back(t);
  }
  return out;
}

// Discriminator whose output is sigmoid(0) = 0.5 for every input.
net::ParameterSet half_discriminator(int d, int hidden) {
  net::ParameterSet disc = make_discriminator(d, hidden, 1);
  for (auto& v : disc.value("disc.fc2.w").storage()) v = 0.0;
  disc.value("disc.fc2.b")[0] = 0.0;
  return disc;
}

}  // namespace

// ---- analytic values -------------------------------------------------------

TEST(SigLoss, IdentityIsZero) {
  SplitMix64 rng(1);
  const Tensor gt = random_map(rng, 5, 6, 1.0, 20.0);
  EXPECT_EQ(sig_loss(gt, gt, 0.5).value, 0.0);
}

TEST(SigLoss, ScaleInvariantAtLambdaOne) {
  SplitMix64 rng(2);
  const Tensor gt = random_map(rng, 4, 4, 1.0, 20.0);
  Tensor pred = gt;
  for (auto& v : pred.storage()) v *= 3.7;
  EXPECT_NEAR(sig_loss(pred, gt, 1.0).value, 0.0, 1e-12);
}

TEST(SigLoss, TwoPixelExample) {
  const Tensor gt = map2(1, 2, {1.0, 1.0});
  const Tensor pred = map2(1, 2, {2.0, 1.0});
  const double l2 = std::log(2.0);
  const double oracle = 0.5 * l2 * l2 - (0.5 / 4.0) * l2 * l2;
  EXPECT_NEAR(oracle, 3.0 / 8.0 * l2 * l2, 1e-15);
  EXPECT_NEAR(sig_loss(pred, gt, 0.5).value, oracle, 1e-9);
  EXPECT_NEAR(sig_loss(pred, gt, 0.5).value, 0.18017, 1e-5);
}

TEST(SigLoss, MaskRestrictsAverage) {
  const Tensor gt = map2(1, 3, {1.0, 1.0, 1.0});
  const Tensor pred = map2(1, 3, {2.0, 1.0, 50.0});
  const Mask valid{1, 1, 0};
  const double l2 = std::log(2.0);
  EXPECT_NEAR(sig_loss(pred, gt, valid, 0.5).value, 3.0 / 8.0 * l2 * l2, 1e-12);
  EXPECT_EQ(sig_loss(pred, gt, valid, 0.5).grad[2], 0.0);
}

TEST(SigLoss, Errors) {
  const Tensor gt = map2(1, 2, {1.0, 2.0});
  EXPECT_THROW(sig_loss(gt, gt, Mask{0, 0}, 0.5), DegenerateInput);
  EXPECT_THROW(sig_loss(map2(1, 2, {0.0, 1.0}), gt, 0.5), InvalidInput);
  EXPECT_THROW(sig_loss(gt, map2(1, 2, {-1.0, 1.0}), 0.5), InvalidInput);
  EXPECT_THROW(sig_loss(gt, map2(1, 3, {1, 1, 1}), 0.5), InvalidInput);
  // non-positive values are allowed where the mask excludes them
  EXPECT_NO_THROW(sig_loss(map2(1, 2, {0.0, 1.0}), gt, Mask{0, 1}, 0.5));
}

TEST(CkdLoss, UniformSimilaritiesGiveLogB) {
  const Tensor u = vec({0.6, 0.8});
  const std::vector<Tensor> batch(4, u);
  const Tensor h = ckd_pair_prob(batch, batch, 0.5);
  for (double v : h.storage()) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_NEAR(ckd_loss(h), std::log(4.0), 1e-9);
  EXPECT_NEAR(ckd_loss_and_grad(batch, batch, 0.5).value, std::log(4.0), 1e-9);
}

TEST(CkdLoss, BatchOfOneIsZero) {
  SplitMix64 rng(3);
  const auto a = random_unit_batch(rng, 1, 5), b = random_unit_batch(rng, 1, 5);
  const Tensor h = ckd_pair_prob(a, b, 0.5);
  EXPECT_EQ(h[0], 1.0);
  EXPECT_EQ(ckd_loss(h), 0.0);
}

TEST(CkdLoss, PairProbMatchesSoftmaxOracle) {
  SplitMix64 rng(4);
  const auto a = random_unit_batch(rng, 3, 4), b = random_unit_batch(rng, 3, 4);
  const Tensor h = ckd_pair_prob(a, b, 0.5);
  for (int i = 0; i < 3; ++i) {
    double z = 0.0;
    std::vector<double> e(3);
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a[i][k] * b[j][k];
      e[j] = std::exp(s / 0.5);
      z += e[j];
    }
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(h[i * 3 + j], e[j] / z, 1e-14);
  }
}

TEST(CkdLoss, Errors) {
  EXPECT_THROW(ckd_pair_prob({}, {}, 0.5), DegenerateInput);
  EXPECT_THROW(ckd_pair_prob({vec({1, 0})}, {vec({1, 0}), vec({0, 1})}, 0.5), InvalidInput);
  EXPECT_THROW(ckd_pair_prob({vec({2, 0})}, {vec({1, 0})}, 0.5), InvalidInput);
  EXPECT_THROW(ckd_pair_prob({vec({1, 0})}, {vec({1, 0})}, 0.0), InvalidParameter);
  EXPECT_THROW(ckd_loss(Tensor({2, 3})), InvalidInput);
}

TEST(FkdLoss, EqualFeaturesGiveZero) {
  SplitMix64 rng(5);
  std::vector<Tensor> f{Tensor({2, 3, 3}), Tensor({2, 6, 6})};
  for (auto& t : f) {
    for (auto& v : t.storage()) v = rng.normal();
  }
  const auto r = fkd_loss(f, f);
  EXPECT_EQ(r.value, 0.0);
  for (const auto& g : r.grad_student) {
    for (double v : g.storage()) EXPECT_EQ(v, 0.0);
  }
}

TEST(FkdLoss, HandComputedValue) {
  // One level, 2 channels over 2 positions; squared channel distances 5 and 1, mean 3.
  const Tensor t({2, 1, 2}, std::vector<double>{1, 0, 2, 1});
  const Tensor s({2, 1, 2}, std::vector<double>{0, 0, 0, 0});
  EXPECT_NEAR(fkd_loss({t}, {s}).value, 3.0, 1e-15);
  EXPECT_THROW(fkd_loss({t}, {Tensor({2, 2, 1})}), InvalidInput);
  EXPECT_THROW(fkd_loss({t}, {}), InvalidInput);
}

TEST(UncertaintyTarget, RelativeError) {
  const Tensor pred = map2(1, 3, {2.0, 1.0, 0.5});
  const Tensor ref = map2(1, 3, {1.0, 4.0, 0.0});
  const Tensor e = uncertainty_target(pred, ref);
  EXPECT_DOUBLE_EQ(e[0], 1.0);
  EXPECT_DOUBLE_EQ(e[1], 0.75);
  EXPECT_DOUBLE_EQ(e[2], 0.5 / kRefFloor);
}

TEST(UncertaintyLoss, ZeroResidualAndBranches) {
  const Tensor e = map2(1, 2, {0.1, 0.2});
  EXPECT_EQ(uncertainty_loss(e, e, Mask{1, 1}, 1.0).value, 0.0);
  const Tensor unc = map2(1, 2, {0.6, 2.2});
  // residuals 0.5 (quadratic branch) and 2.0 (linear branch)
  EXPECT_NEAR(uncertainty_loss(unc, e, Mask{1, 1}, 1.0).value, (0.125 + 1.5) / 2.0, 1e-12);
  EXPECT_THROW(uncertainty_loss(unc, e, Mask{0, 0}, 1.0), DegenerateInput);
}

TEST(BuildMask, TwoValueExample) {
  const auto m = build_mask(map2(1, 2, {0.0, 1.0}));
  EXPECT_DOUBLE_EQ(m.e_thresh, 0.25);
  EXPECT_EQ(m.mask, (Mask{1, 0}));
  EXPECT_DOUBLE_EQ(m.selected_fraction, 0.5);
}

TEST(BuildMask, ConstantPositiveSelectsNothing) {
  const auto m = build_mask(Tensor({3, 3}, 0.4));
  EXPECT_NEAR(m.e_thresh, 0.0, 1e-30);
  EXPECT_EQ(m.selected(), 0u);
  EXPECT_EQ(m.selected_fraction, 0.0);
}

TEST(BuildMask, ZeroAlwaysSelected) {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor e = random_map(rng, 5, 5, 0.0, 3.0);
    e[static_cast<std::size_t>(rng.integer(0, 24))] = 0.0;
    const auto m = build_mask(e);
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (e[i] == 0.0) {
        EXPECT_EQ(m.mask[i], 1);
      }
    }
  }
}

TEST(BuildMask, NonFiniteRejected) {
  EXPECT_THROW(build_mask(map2(1, 2, {0.1, std::nan("")})), InvalidInput);
  EXPECT_THROW(build_mask(Tensor()), DegenerateInput);
}

TEST(UgtsLoss, Examples) {
  const Tensor d_soft = map2(1, 3, {5.0, 5.0, 5.0});
  UncertaintyMask mask;
  mask.mask = {1, 1, 0};
  const Tensor student = map2(1, 3, {5.5, 7.0, 100.0});
  const auto r = ugts_loss(student, d_soft, mask, 1.0);
  ASSERT_TRUE(r.has_value());
  EXPECT_NEAR(r->value, 0.8125, 1e-12);
  EXPECT_EQ(r->grad[2], 0.0);

  const auto zero = ugts_loss(d_soft, d_soft, mask, 1.0);
  ASSERT_TRUE(zero.has_value());
  EXPECT_EQ(zero->value, 0.0);

  mask.mask = {0, 0, 0};
  EXPECT_FALSE(ugts_loss(student, d_soft, mask, 1.0).has_value());
}

TEST(GlfaLoss, HalfDiscriminatorGivesTwoLnTwo) {
  const auto disc = half_discriminator(6, 4);
  SplitMix64 rng(7);
  Tensor a({6}), b({6});
  for (auto& v : a.storage()) v = rng.normal();
  for (auto& v : b.storage()) v = rng.normal();
  const auto r = glfa_loss(disc, a, b, 1.0);
  EXPECT_EQ(r.d_src, 0.5);
  EXPECT_EQ(r.d_tgt, 0.5);
  EXPECT_NEAR(r.value, 2.0 * std::numbers::ln2, 1e-9);
}

TEST(GlfaLoss, PerfectDiscriminatorNearZero) {
  net::ParameterSet disc = make_discriminator(2, 2, 1);
  disc.value("disc.fc1.w") = Tensor({2, 2}, std::vector<double>{1, 0, 0, 1});
  disc.value("disc.fc1.b") = Tensor({2});
  disc.value("disc.fc2.w") = Tensor({1, 2}, std::vector<double>{14, -14});
  disc.value("disc.fc2.b")[0] = 0.0;
  const auto r = glfa_loss(disc, vec({1, 0}), vec({0, 1}), 1.0);
  const double eps = 1.0 / (1.0 + std::exp(14.0));
  EXPECT_NEAR(r.d_src, 1.0 - eps, 1e-15);
  EXPECT_NEAR(r.d_tgt, eps, 1e-15);
  EXPECT_NEAR(r.value, -2.0 * std::log1p(-eps), 1e-15);
  EXPECT_LT(r.value, 2e-6);

  // saturated outputs are clamped before the logs
  disc.value("disc.fc2.w") = Tensor({1, 2}, std::vector<double>{-1000, 1000});
  const auto worst = glfa_loss(disc, vec({1, 0}), vec({0, 1}), 1.0);
  EXPECT_TRUE(std::isfinite(worst.value));
  EXPECT_NEAR(worst.value, -2.0 * std::log(kDiscClamp), 1e-6);
}

TEST(GlfaLoss, ReversalIsMinusMuTimesTrueGradient) {
  SplitMix64 rng(8);
  const auto disc = make_discriminator(8, 5, 3);
  for (double mu : {0.0, 0.1, 1.0, 2.5}) {
    Tensor a({8}), b({8});
    for (auto& v : a.storage()) v = rng.normal();
    for (auto& v : b.storage()) v = rng.normal();
    const auto r = glfa_loss(disc, a, b, mu);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(r.encoder_grad_src[i], -mu * r.grad_src[i]);
      EXPECT_EQ(r.encoder_grad_tgt[i], -mu * r.grad_tgt[i]);
    }
  }
}

TEST(CompositeLosses, WeightedSums) {
  EXPECT_EQ(mod_loss({}), 0.0);
  EXPECT_EQ(dom_loss({}), 0.0);
  EXPECT_NEAR(mod_loss({1, 1, 1, 1, 1}), 3.2, 1e-12);
  LossConfig cfg;
  cfg.unc_in_domain = false;
  EXPECT_NEAR(dom_loss({0.5, 1.0, 0.0}, cfg), 0.6, 1e-12);
  EXPECT_NEAR(dom_loss({0.5, 1.0, 0.3}), 0.9, 1e-12);
  EXPECT_NEAR(dom_loss({0.5, 1.0, 0.3}, cfg), 0.6, 1e-12);
}

TEST(CompositeLosses, NonFiniteComponentAborts) {
  EXPECT_THROW(mod_loss({1, std::nan(""), 0, 0, 0}), NonFiniteLoss);
  EXPECT_THROW(dom_loss({0, INFINITY, 0}), NonFiniteLoss);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lambda_sig = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.w_glfa = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---- invariants ------------------------------------------------------------

TEST(Invariants, PairProbRowsSumToOne) {
  SplitMix64 rng(9);
  for (int b = 1; b <= 8; ++b) {
    for (int trial = 0; trial < 10; ++trial) {
      const int g = static_cast<int>(rng.integer(1, 16));
      const Tensor h = ckd_pair_prob(random_unit_batch(rng, b, g), random_unit_batch(rng, b, g), rng.uniform(0.05, 2.0));
      for (int i = 0; i < b; ++i) {
        double s = 0.0;
        for (int j = 0; j < b; ++j) {
          ASSERT_GE(h[i * b + j], 0.0);
          s += h[i * b + j];
        }
        ASSERT_NEAR(s, 1.0, 1e-9) << "b=" << b;
      }
    }
  }
}

TEST(Invariants, SigLossJointScaleInvariance) {
  SplitMix64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = static_cast<int>(rng.integer(1, 8)), w = static_cast<int>(rng.integer(1, 8));
    const Tensor pred = random_map(rng, h, w, 0.5, 20.0), gt = random_map(rng, h, w, 0.5, 20.0);
    const double c = std::exp(rng.uniform(-3.0, 3.0));
    const double lambda = rng.uniform();
    Tensor sp = pred, sg = gt;
    for (auto& v : sp.storage()) v *= c;
    for (auto& v : sg.storage()) v *= c;
    ASSERT_NEAR(sig_loss(sp, sg, lambda).value, sig_loss(pred, gt, lambda).value, 1e-9);
  }
}

TEST(Invariants, SigLossMinimisedAtGroundTruthConstant) {
  SplitMix64 rng(11);
  for (double lambda : {0.0, 0.3, 0.5, 0.9}) {
    const double g = rng.uniform(1.0, 20.0);
    const Tensor gt({3, 3}, g);
    EXPECT_EQ(sig_loss(gt, gt, lambda).value, 0.0);
    for (double f : {0.5, 0.9, 0.99, 1.01, 1.1, 2.0}) {
      EXPECT_GT(sig_loss(Tensor({3, 3}, g * f), gt, lambda).value, 0.0) << lambda << " " << f;
    }
  }
}

TEST(Invariants, BuildMaskIndicatorSemantics) {
  SplitMix64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = static_cast<int>(rng.integer(1, 12)), w = static_cast<int>(rng.integer(1, 12));
    const Tensor e = random_map(rng, h, w, 0.0, rng.uniform(0.01, 4.0));
    const double n = static_cast<double>(e.size());
    double mean = 0.0;
    for (double v : e.storage()) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : e.storage()) var += (v - mean) * (v - mean);
    var /= n;
    const auto m = build_mask(e);
    ASSERT_NEAR(m.e_thresh, var, 1e-12);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      ASSERT_EQ(m.mask[i], e[i] <= m.e_thresh ? 1 : 0);
      kept += m.mask[i];
    }
    ASSERT_EQ(m.selected_fraction, static_cast<double>(kept) / n);
  }
}

TEST(Invariants, ReversedStepDoesNotHelpFrozenDiscriminator) {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto disc = make_discriminator(6, 8, static_cast<std::uint64_t>(trial));
    Tensor a({6}), b({6});
    for (auto& v : a.storage()) v = rng.normal();
    for (auto& v : b.storage()) v = rng.normal();
    const auto r = glfa_loss(disc, a, b, 1.0);
    const double eta = 1e-4;
    Tensor a2 = a, b2 = b;
    a2.axpy(-eta, r.encoder_grad_src);
    b2.axpy(-eta, r.encoder_grad_tgt);
    ASSERT_GE(glfa_loss(disc, a2, b2, 1.0).value, r.value - 1e-15);
  }
}

// ---- gradient suite --------------------------------------------------------

TEST(Gradients, EveryLossPassesFiniteDifferences) {
  const auto t0 = std::chrono::steady_clock::now();
  std::set<std::string> names;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& c : eval::run_loss_gradchecks(seed)) {
      names.insert(c.name);
      EXPECT_LT(c.result.max_rel_error, 1e-4) << c.name << " seed " << seed << " worst " << c.result.worst_param;
      EXPECT_GE(c.h, 4);
      EXPECT_LE(c.h, 16);
      EXPECT_GT(c.result.checked, 0u);
    }
  }
  for (const char* n : {"sig", "ckd", "fkd", "uncertainty_target", "uncertainty", "ugts", "glfa", "glfa_reversal"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
}

TEST(Gradients, QuadraticProbeIsExact) {
  eval::LossProbe p{[](const std::vector<eval::NamedTensor>& x) {
                      double s = 0.0;
                      for (double v : x[0].value.storage()) s += v * v;
                      return s;
                    },
                    [](const std::vector<eval::NamedTensor>& x) {
                      Tensor g = x[0].value;
                      for (auto& v : g.storage()) v *= 2.0;
                      return std::vector<Tensor>{g};
                    }};
  SplitMix64 rng(14);
  const auto r = eval::gradcheck(p, {{"p", random_map(rng, 4, 4, -2.0, 2.0)}});
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(Gradients, NonFiniteProbeNamesParameter) {
  eval::LossProbe p{[](const std::vector<eval::NamedTensor>& x) { return std::log(x[0].value[0]); },
                    [](const std::vector<eval::NamedTensor>& x) {
                      return std::vector<Tensor>{Tensor({1}, 1.0 / x[0].value[0])};
                    }};
  try {
    eval::gradcheck(p, {{"weight", Tensor({1}, 1e-7)}});
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_NE(std::string(e.what()).find("weight"), std::string::npos);
  }
}
