#include <gtest/gtest.h>

#include <random>

#include <sbc/flow.hpp>

#include "oracles.hpp"

using namespace sbc;

namespace {

GLCState<double> scale_glc(const GLCState<double>& g, double s) {
  auto o = g;
  double r = std::sqrt(s);
  for (int j = 0; j < 2; ++j) {
    o.zeta[j] = g.zeta[j] * r;
    o.h[j] = g.h[j] / s;
  }
  o.x = g.x * s;
  o.y = g.y / r;
  o.refresh();
  return o;
}

double rel_drift(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); }

// unbound binaries far apart: stays inside the chart and away from zeta = 0 for the whole span
GLCState<double> drift_state(std::mt19937_64& rng, double zmax = 0.3) {
  for (;;) {
    auto g = oracle::random_glc(rng, zmax, 0.1);
    if (std::abs(g.L(0)) < zmax / 6 || std::abs(g.L(1)) < zmax / 6) continue;
    g.h = {std::abs(g.h[0]), std::abs(g.h[1])};
    g.x = g.x * 20.0;
    g.refresh();
    return g;
  }
}

}  // namespace

TEST(Fields, KeplerUnitExample) {
  auto p = derive_params(1.0, 1.0, 1.0, 1.0);
  auto g = make_glc(C<double>(1.0), C<double>(0.6, 0.8), 0.0, 0.0, C<double>(1.0), C<double>(1.0), C<double>(1.0),
                    C<double>());
  auto e = eval_field(g, p, Field::XHKepler);
  EXPECT_DOUBLE_EQ(e.dzeta(0).re, 1.0);
  EXPECT_DOUBLE_EQ(e.dzeta(1).re, 1.0);
  EXPECT_EQ(e.dzeta(0).im, 0.0);
  EXPECT_EQ(e.dh(0), 0.0);
  EXPECT_EQ(e.dGamma(0).abs(), 0.0);
}

TEST(Fields, KeplerGammaRotation) {
  std::mt19937_64 rng(71);
  auto p = oracle::random_masses(rng);
  for (int n = 0; n < 100; ++n) {
    auto g = oracle::random_glc(rng);
    auto e = eval_field(g, p, Field::XHKepler);
    for (int j = 0; j < 2; ++j) {
      C<double> want = C<double>(0, 1) * g.Gamma[j] * (g.h[j] * g.zeta[j].im / g.zeta[j].norm2());
      EXPECT_LT((e.dGamma(j) - want).abs(), 1e-14);
      EXPECT_EQ(e.dh(j), 0.0);
    }
    EXPECT_EQ(e.dy().abs(), 0.0);
    EXPECT_EQ(e.dx().re, p.mu * g.y.re);
  }
}

TEST(Fields, XVanishesOnCollisionSet) {
  std::mt19937_64 rng(73);
  auto p = oracle::random_masses(rng);
  auto g = oracle::random_glc(rng);
  g.zeta = {C<double>(), C<double>()};
  g.refresh();
  auto e = eval_X(g, p);
  for (double v : e.d) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(eval_XH(g, p), DomainError);
}

TEST(Fields, SingleBinaryCollision) {
  std::mt19937_64 rng(79);
  auto p = oracle::random_masses(rng);
  auto g = oracle::random_glc(rng);
  g.zeta[1] = C<double>();
  g.refresh();
  auto e = eval_X(g, p);
  EXPECT_EQ(e.dzeta(0).abs(), 0.0);
  EXPECT_NEAR(e.dzeta(1).re, g.U[1] * g.U[1] * g.zeta[0].norm2(), 1e-15);
  EXPECT_EQ(e.dzeta(1).im, 0.0);
}

TEST(Fields, XIsRescaledXH) {
  std::mt19937_64 rng(83);
  for (int n = 0; n < 200; ++n) {
    auto p = oracle::random_masses(rng);
    auto g = oracle::random_glc(rng);
    auto X = eval_X(g, p), XH = eval_XH(g, p);
    double w = g.zeta[0].norm2() * g.zeta[1].norm2();
    for (int i = 0; i < 14; ++i) EXPECT_NEAR(X.d[i], w * XH.d[i], 1e-13 * std::max(1.0, std::abs(X.d[i])));
  }
}

TEST(Fields, XHMatchesCartesianPushforward) {
  std::mt19937_64 rng(89);
  double worst = 0;
  for (int n = 0; n < 100; ++n) {
    auto p = oracle::random_masses(rng);
    auto g = oracle::random_glc(rng, 0.4, 0.3);
    // h = (|u|^2 - 1) / |z|^2 makes the finite-difference oracle noisy for small zeta
    if (std::min(g.zeta[0].abs(), g.zeta[1].abs()) < 0.1) continue;
    auto XH = eval_XH(g, p);
    auto ref = oracle::pushforward(g, p);
    for (int i = 0; i < 14; ++i) worst = std::max(worst, std::abs(XH.d[i] - ref[i]) / std::max(1.0, std::abs(ref[i])));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Fields, YEquationFromPotential) {
  std::mt19937_64 rng(97);
  auto p = oracle::random_masses(rng);
  auto g = oracle::random_glc(rng);
  auto e = eval_XH(g, p);
  double h = 1e-5;
  auto K = [&](C<double> d) {
    auto t = g;
    t.x = g.x + d;
    return K_exact(t, p);
  };
  double dre = (K(C<double>(h, 0)) - K(C<double>(-h, 0))) / (2 * h);
  double dim = (K(C<double>(0, h)) - K(C<double>(0, -h))) / (2 * h);
  C<double> dxbar(0.5 * dre, 0.5 * dim);
  EXPECT_LT((e.dy() - dxbar * 2.0).abs(), 1e-8);
}

TEST(Invariants, HamiltonianAgreesWithCartesian) {
  std::mt19937_64 rng(101);
  for (int n = 0; n < 1000; ++n) {
    auto p = oracle::random_masses(rng);
    auto g = oracle::random_glc(rng);
    double H = hamiltonian(g, p);
    EXPECT_NEAR(H, hamiltonian_cartesian(glc_to_cartesian(g, p), p), 1e-12 * std::max(1.0, std::abs(H)));
  }
}

TEST(Invariants, ZeroState) {
  auto p = derive_params(1.0, 1.0, 1.0, 1.0);
  auto g = make_glc(C<double>(0.2), C<double>(0.1), 0.0, 0.0, C<double>(1.0), C<double>(1.0), C<double>(1.0),
                    C<double>());
  EXPECT_NEAR(hamiltonian(g, p) + K_exact(g, p), 0.0, 1e-15);
  EXPECT_EQ(total_angular_momentum(g, p), 0.0);
}

class Drift : public ::testing::TestWithParam<Field> {};

TEST_P(Drift, HamiltonianAndAngularMomentum) {
  std::mt19937_64 rng(103);
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e-13;
  cfg.event_tol = 1e-13;
  cfg.tau_max = 10.0;
  for (int n = 0; n < 5; ++n) {
    auto p = oracle::random_masses(rng);
    // in tau the rescaled field grows |zeta| like |zeta|^2, so X starts closer to collision
    auto g = drift_state(rng, GetParam() == Field::X ? 0.06 : 0.3);
    auto tr = integrate_glc(g, p, GetParam(), cfg);
    ASSERT_TRUE(tr.ok()) << tr.detail;
    auto e = glc_state(tr.back());
    EXPECT_LT(rel_drift(hamiltonian(g, p), hamiltonian(e, p)), 1e-10);
    EXPECT_LT(rel_drift(total_angular_momentum(g, p), total_angular_momentum(e, p)), 1e-10);
  }
}

INSTANTIATE_TEST_SUITE_P(Fields, Drift, ::testing::Values(Field::X, Field::XH));

TEST(Invariants, KeplerLimit) {
  std::mt19937_64 rng(107);
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e-13;
  cfg.tau_max = 10.0;
  for (int n = 0; n < 5; ++n) {
    auto p = oracle::random_masses(rng);
    // |zeta|' ~ |zeta|^2 in tau: small starts keep the blow-up time beyond the span
    auto g = oracle::random_glc(rng, 0.05, 0.1);
    auto tr = integrate_glc(g, p, Field::XKepler, cfg);
    ASSERT_TRUE(tr.ok()) << tr.detail;
    auto e = glc_state(tr.back());
    for (int j = 0; j < 2; ++j) {
      EXPECT_LT(std::abs(e.h[j] - g.h[j]), 1e-12);
      EXPECT_LT(std::abs(e.L(j) - g.L(j)), 1e-12);
    }
    EXPECT_LT((e.y - g.y).abs(), 1e-12);
  }
}

TEST(Invariants, CollinearSubspace) {
  auto p = derive_params(1.0, 2.0, 0.7, 1.3);
  auto g = make_glc(C<double>(0.1), C<double>(-0.08), 0.1, 0.05, C<double>(1.0), C<double>(1.0), C<double>(2.0),
                    C<double>(-0.05));
  IntegratorConfig cfg;
  cfg.tau_max = 10.0;
  auto tr = integrate_glc(g, p, Field::X, cfg);
  ASSERT_TRUE(tr.ok()) << tr.detail;
  for (const auto& v : tr.y)
    for (int i : {1, 3, 7, 9, 11, 13}) EXPECT_LT(std::abs(v[i]), 1e-12);
}

TEST(Invariants, ScalingSymmetry) {
  std::mt19937_64 rng(109);
  auto p = oracle::random_masses(rng);
  auto g = drift_state(rng);
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e-13;
  double T = 0.5, s = 0.3;
  cfg.tau_max = T;
  auto ta = integrate_glc(g, p, Field::XH, cfg);
  ASSERT_TRUE(ta.ok()) << ta.detail;
  cfg.tau_max = std::pow(s, 1.5) * T;
  auto tb = integrate_glc(scale_glc(g, s), p, Field::XH, cfg);
  ASSERT_TRUE(tb.ok()) << tb.detail;
  auto a = glc_state(ta.back()), b = glc_state(tb.back());
  auto u = scale_glc(a, s).pack(), v = b.pack();
  for (int i = 0; i < 14; ++i) EXPECT_LT(std::abs(u[i] - v[i]), 1e-9 * std::max(1.0, std::abs(u[i])));
}
