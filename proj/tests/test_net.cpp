#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "bicross/core/rng.hpp"
#include "bicross/net/model.hpp"
#include "bicross/net/params.hpp"
#include "bicross/train/trainer.hpp"

using namespace bicross;
using namespace bicross::net;

namespace {

NetworkConfig small(InputKind kind) {
  NetworkConfig c;
  c.input_kind = kind;
  c.height = 16;
  c.width = 16;
  c.t_model = 4;
  c.base_width = 4;
  c.encoder_depth = 3;
  c.fusion_levels = 3;
  c.decoder_width = 4;
  c.global_width = 8;
  c.token_width = 8;
  c.se_reduction = 2;
  c.head_hidden = 4;
  c.norm_groups = 2;
  return c;
}

Tensor random_input(const DepthNet& net, SplitMix64& rng, double lo = 0.0, double hi = 1.0) {
  Tensor x(net.expected_input_shape());
  for (auto& v : x.storage()) v = rng.uniform(lo, hi);
  return x;
}

void jitter(ParameterSet& p, SplitMix64& rng, double sd) {
  for (auto& q : p) {
    for (auto& v : q.value.storage()) v += rng.normal(0.0, sd);
  }
}

// Fixed random weights contracting every output into one scalar.
struct Probe {
  Tensor cd, cu, ct, cg;

  Probe(const NetworkConfig& c, SplitMix64& rng)
      : cd({1, c.height, c.width}), cu({1, c.height, c.width}), ct({c.token_width}), cg({c.global_width}) {
    for (Tensor* t : {&cd, &cu, &ct, &cg}) {
      for (auto& v : t->storage()) v = rng.normal();
    }
  }

  double value(const NetworkOutputs& o) const {
    double s = 0.0;
    auto dot = [&](const Tensor& a, const Tensor& b) {
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    };
    dot(o.depth.value(), cd);
    dot(o.uncertainty.value(), cu);
    dot(o.token.value(), ct);
    dot(o.f_g.value(), cg);
    return s;
  }
};

double probe_value(const DepthNet& net, const ParameterSet& p, const Tensor& x, const Probe& pr) {
  train::Pass pass(net, p, x, false);
  return pr.value(pass.out);
}

}  // namespace

TEST(Net, ZeroInputGivesInitialDepth) {
  for (auto kind : {InputKind::rgb, InputKind::spike}) {
    const DepthNet net(small(kind), 3);
    train::Pass pass(net, net.params(), Tensor(net.expected_input_shape()), false);
    for (double d : pass.out.depth.value().storage()) ASSERT_NEAR(d, 5.0, 1e-12);
    for (double u : pass.out.uncertainty.value().storage()) ASSERT_NEAR(u, 1e-3, 1e-12);
  }
}

TEST(Net, ForwardIsDeterministic) {
  const DepthNet net(small(InputKind::spike), 4);
  SplitMix64 rng(1);
  ParameterSet p = net.params();
  jitter(p, rng, 0.1);
  const Tensor x = random_input(net, rng);
  train::Pass a(net, p, x, false), b(net, p, x, false);
  EXPECT_EQ(a.out.depth.value(), b.out.depth.value());
  EXPECT_EQ(a.out.uncertainty.value(), b.out.uncertainty.value());
  EXPECT_EQ(a.out.token.value(), b.out.token.value());
  for (std::size_t l = 0; l < a.out.decoder_feats.size(); ++l) {
    EXPECT_EQ(a.out.decoder_feats[l].value(), b.out.decoder_feats[l].value());
  }
  EXPECT_EQ(DepthNet(small(InputKind::spike), 4).params(), net.params());
}

TEST(Net, OutputShapes) {
  const auto cfg = small(InputKind::spike);
  const DepthNet net(cfg, 5);
  SplitMix64 rng(2);
  train::Pass pass(net, net.params(), random_input(net, rng), false);
  EXPECT_EQ(pass.out.depth.value().shape(), (std::vector<int>{1, 16, 16}));
  EXPECT_EQ(pass.out.uncertainty.value().shape(), (std::vector<int>{1, 16, 16}));
  EXPECT_EQ(pass.out.token.value().shape(), (std::vector<int>{cfg.token_width}));
  EXPECT_EQ(pass.out.f_g.value().shape(), (std::vector<int>{cfg.global_width}));
  ASSERT_EQ(pass.out.decoder_feats.size(), static_cast<std::size_t>(cfg.fusion_levels));
  const auto shapes = net.decoder_shapes();
  for (std::size_t l = 0; l < shapes.size(); ++l) EXPECT_EQ(pass.out.decoder_feats[l].value().shape(), shapes[l]);
}

TEST(Net, BranchDecoderShapesMatch) {
  const DepthNet rgb(small(InputKind::rgb), 1), spike(small(InputKind::spike), 1);
  SplitMix64 rng(3);
  train::Pass a(rgb, rgb.params(), random_input(rgb, rng), false);
  train::Pass b(spike, spike.params(), random_input(spike, rng), false);
  ASSERT_EQ(a.out.decoder_feats.size(), b.out.decoder_feats.size());
  for (std::size_t l = 0; l < a.out.decoder_feats.size(); ++l) {
    EXPECT_EQ(a.out.decoder_feats[l].value().shape(), b.out.decoder_feats[l].value().shape()) << "level " << l;
  }
}

TEST(Net, SpikeBranchLoadsRgbEncoder) {
  const DepthNet rgb(small(InputKind::rgb), 1), spike(small(InputKind::spike), 2);
  ParameterSet p = spike.params();
  const std::size_t loaded = p.load_matching(rgb.params());
  EXPECT_GT(loaded, 0u);
  EXPECT_EQ(p.value("encoder.stage1.down.w"), rgb.params().value("encoder.stage1.down.w"));
  EXPECT_FALSE(p.contains("rgb.stem.w"));
  EXPECT_TRUE(p.contains("temporal.stem.w"));
}

TEST(Net, InputShapeMismatchIsConfigError) {
  const DepthNet net(small(InputKind::spike), 1);
  EXPECT_THROW(train::Pass(net, net.params(), Tensor({3, 16, 16}), false), ConfigError);
}

TEST(Net, ConfigValidation) {
  auto c = small(InputKind::spike);
  c.fusion_levels = 1;
  EXPECT_THROW(DepthNet(c, 0), ConfigError);
  c = small(InputKind::spike);
  c.base_width = 0;
  EXPECT_THROW(DepthNet(c, 0), ConfigError);
  c = small(InputKind::spike);
  c.height = 12;
  EXPECT_THROW(DepthNet(c, 0), ConfigError);
}

TEST(Net, PositivityUnderRandomParameters) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const DepthNet net(small(trial % 2 ? InputKind::rgb : InputKind::spike), static_cast<std::uint64_t>(trial));
    ParameterSet p = net.params();
    jitter(p, rng, rng.uniform(0.05, 2.0));
    train::Pass pass(net, p, random_input(net, rng, -3.0, 3.0), false);
    for (double d : pass.out.depth.value().storage()) {
      ASSERT_TRUE(std::isfinite(d));
      ASSERT_GT(d, 0.0);
    }
    for (double u : pass.out.uncertainty.value().storage()) {
      ASSERT_TRUE(std::isfinite(u));
      ASSERT_GE(u, 0.0);
    }
  }
}

TEST(Net, GlobalVectorIsUnitNorm) {
  SplitMix64 rng(5);
  const DepthNet net(small(InputKind::spike), 6);
  ParameterSet p = net.params();
  jitter(p, rng, 0.2);
  for (int trial = 0; trial < 5; ++trial) {
    train::Pass pass(net, p, random_input(net, rng), false);
    double sq = 0.0;
    for (double v : pass.out.f_g.value().storage()) sq += v * v;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  }
}

TEST(ExtractGlobal, ConstantFeaturePoolsToChannelValues) {
  ag::Tape tape;
  Tensor f({3, 4, 4});
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 16; ++i) f[c * 16 + i] = c + 1.0;
  }
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  const ag::Var g = extract_global(tape.leaf(f), tape.leaf(eye), tape.leaf(Tensor({3})));
  const double n = std::sqrt(1.0 + 4.0 + 9.0);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(g.value()[c], (c + 1.0) / n, 1e-13);
}

TEST(ExtractGlobal, SpatialPermutationInvariant) {
  SplitMix64 rng(6);
  Tensor f({4, 5, 5}), w({6, 4}), b({6});
  for (Tensor* t : {&f, &w, &b}) {
    for (auto& v : t->storage()) v = rng.normal();
  }
  std::vector<int> perm(25);
  for (int i = 0; i < 25; ++i) perm[i] = i;
  for (int i = 24; i > 0; --i) std::swap(perm[i], perm[rng.integer(0, i)]);
  Tensor fp = f;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 25; ++i) fp[c * 25 + i] = f[c * 25 + perm[i]];
  }
  ag::Tape tape;
  const auto g1 = extract_global(tape.leaf(f), tape.leaf(w), tape.leaf(b)).value();
  const auto g2 = extract_global(tape.leaf(fp), tape.leaf(w), tape.leaf(b)).value();
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-12);
}

TEST(Ema, IdentitiesAndScalarExample) {
  SplitMix64 rng(7);
  ParameterSet t = DepthNet(small(InputKind::spike), 1).params();
  ParameterSet s = DepthNet(small(InputKind::spike), 2).params();
  jitter(t, rng, 0.3);
  jitter(s, rng, 0.3);
  EXPECT_EQ(ema_update(t, s, 1.0), t);
  EXPECT_EQ(ema_update(t, s, 0.0), s);

  ParameterSet one, zero;
  one.add("x", Tensor({1}, 1.0), ParamGroup::backbone);
  zero.add("x", Tensor({1}, 0.0), ParamGroup::backbone);
  EXPECT_NEAR(ema_update(one, zero, 0.9).value("x")[0], 0.9, 1e-15);
}

TEST(Ema, Convexity) {
  SplitMix64 rng(8);
  ParameterSet t = DepthNet(small(InputKind::spike), 1).params();
  ParameterSet s = t;
  jitter(t, rng, 1.0);
  jitter(s, rng, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double alpha = rng.uniform();
    const ParameterSet u = ema_update(t, s, alpha);
    for (std::size_t i = 0; i < u.size(); ++i) {
      for (std::size_t j = 0; j < u[i].value.size(); ++j) {
        const double a = t[i].value[j], b = s[i].value[j];
        ASSERT_GE(u[i].value[j], std::min(a, b));
        ASSERT_LE(u[i].value[j], std::max(a, b));
      }
    }
  }
}

TEST(Ema, Errors) {
  const ParameterSet a = DepthNet(small(InputKind::spike), 1).params();
  const ParameterSet b = DepthNet(small(InputKind::rgb), 1).params();
  EXPECT_THROW(ema_update(a, b, 0.5), InvalidParameter);
  EXPECT_THROW(ema_update(a, a, 1.5), InvalidParameter);
  EXPECT_THROW(ema_update(a, a, -0.1), InvalidParameter);
}

TEST(Net, DirectionalDerivativesMatchFiniteDifferences) {
  for (auto kind : {InputKind::spike, InputKind::rgb}) {
    SplitMix64 rng(kind == InputKind::spike ? 9 : 10);
    const DepthNet net(small(kind), 11);
    ParameterSet p = net.params();
    jitter(p, rng, 0.2);
    const Tensor x = random_input(net, rng);
    const Probe pr(net.config(), rng);

    train::Pass pass(net, p, x, true);
    auto grads = p.zero_grads();
    const auto& o = pass.out;
    pass.backward({o.depth, o.uncertainty, o.token, o.f_g}, pr.value(o), {pr.cd, pr.cu, pr.ct, pr.cg}, grads);

    double worst = 0.0;
    std::string worst_name;
    for (std::size_t i = 0; i < p.size(); ++i) {
      Tensor dir(p[i].value.shape());
      for (auto& v : dir.storage()) v = rng.normal();
      double analytic = 0.0;
      for (std::size_t k = 0; k < dir.size(); ++k) analytic += dir[k] * grads[i][k];
      const double eps = 1e-6;
      ParameterSet a = p, b = p;
      a[i].value.axpy(eps, dir);
      b[i].value.axpy(-eps, dir);
      const double numeric = (probe_value(net, a, x, pr) - probe_value(net, b, x, pr)) / (2.0 * eps);
      const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-5});
      if (err > worst) {
        worst = err;
        worst_name = p[i].name;
      }
    }
    EXPECT_LT(worst, 1e-4) << to_string(kind) << " worst at " << worst_name;
  }
}
