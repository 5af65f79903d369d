#include <gtest/gtest.h>

#include <random>

#include <sbc/flow.hpp>

#include "oracles.hpp"

using namespace sbc;

namespace {

using V2 = std::array<double, 2>;

void oscillator(const V2& y, V2& d) {
  d[0] = y[1];
  d[1] = -y[0];
}

double oscillator_error(double h, double span) {
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e3;  // never reject: fixed steps
  cfg.event_tol = 1.0;
  cfg.h0 = cfg.hmax = h;
  cfg.tau_max = span;
  auto tr = integrate(oscillator, V2{1.0, 0.0}, cfg);
  auto y = tr.back();
  return std::hypot(y[0] - std::cos(span), y[1] + std::sin(span));
}

}  // namespace

TEST(Tableau, RowSums) {
  const auto& t = dop853::Tableau<dd>::get();
  for (int i = 2; i <= 16; ++i) {
    if (i == 13) continue;
    dd s(0.0);
    for (int j = 1; j < i; ++j) s += t.a[i][j];
    EXPECT_LT(std::abs(num::to_double(s - t.c[i])), 1e-28) << "stage " << i;
  }
  dd b(0.0);
  for (int j = 1; j <= 12; ++j) b += t.b[j];
  EXPECT_LT(std::abs(num::to_double(b - dd(1.0))), 1e-28);
}

TEST(Integrate, ConvergenceOrder) {
  double e1 = oscillator_error(0.5, 10.0), e2 = oscillator_error(0.25, 10.0);
  EXPECT_GE(std::log2(e1 / e2), 7.0);
}

TEST(Integrate, ToleranceHalvingShrinksError) {
  double prev = 1.0;
  for (double tol : {1e-6, 1e-8, 1e-10}) {
    IntegratorConfig cfg;
    cfg.rtol = cfg.atol = tol;
    cfg.event_tol = tol;
    cfg.tau_max = 20.0;
    auto y = integrate(oscillator, V2{1.0, 0.0}, cfg).back();
    double e = std::hypot(y[0] - std::cos(20.0), y[1] + std::sin(20.0));
    EXPECT_LT(e, prev);
    prev = e;
  }
}

TEST(Integrate, DenseOutputMidSegment) {
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e-10;
  cfg.tau_max = 10.0;
  auto tr = integrate(oscillator, V2{1.0, 0.0}, cfg);
  ASSERT_GT(tr.segments.size(), 3u);
  double worst = 0;
  for (const auto& s : tr.segments) {
    double tm = s.t0 + 0.5 * s.h;
    auto y = s.eval(tm);
    worst = std::max(worst, std::hypot(y[0] - std::cos(tm), y[1] + std::sin(tm)));
  }
  EXPECT_LT(worst, 10 * 1e-10 * 10);  // global error after ten time units plus local interpolation
  for (size_t i = 1; i < tr.t.size(); ++i) EXPECT_GT(tr.t[i], tr.t[i - 1]);
}

TEST(Integrate, ExtendedPrecision) {
  using D2 = std::array<dd, 2>;
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e-26;
  cfg.event_tol = 1e-26;
  cfg.tau_max = 1.0;
  auto tr = integrate([](const D2& y, D2& d) { d = {y[1], -y[0]}; }, D2{dd(1.0), dd(0.0)}, cfg);
  // cos(1), sin(1) to 32 digits
  dd c = dd::from_string("0.54030230586813971740093660744297660");
  dd s = dd::from_string("0.84147098480789650665250232163029900");
  EXPECT_LT(std::abs(num::to_double(tr.back()[0] - c)), 1e-24);
  EXPECT_LT(std::abs(num::to_double(tr.back()[1] + s)), 1e-24);
}

TEST(Integrate, ConfigValidation) {
  IntegratorConfig cfg;
  cfg.rtol = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.event_tol = 1e-6;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Integrate, DomainExitTruncates) {
  using V1 = std::array<double, 1>;
  IntegratorConfig cfg;
  cfg.tau_max = 10.0;
  IntegrateOptions<double, 1> opt;
  opt.domain = [](const V1& y) -> std::optional<std::string> {
    if (y[0] > 2.0) return "left";
    return std::nullopt;
  };
  auto tr = integrate([](const V1& y, V1& d) { d[0] = y[0]; }, V1{1.0}, cfg, opt);
  EXPECT_EQ(tr.reason, StopReason::domain_exit);
  EXPECT_LT(tr.t.back(), 10.0);
}

TEST(Sections, LinearFieldHitTime) {
  using V1 = std::array<double, 1>;
  IntegratorConfig cfg;
  cfg.tau_max = 100.0;
  cfg.atol = 1e-24;  // the start value is tiny: keep the control relative
  for (double eps : {1e-2, 1e-5, 1e-8}) {
    Section<double, 1> sec{"x=1", [](const V1& y) { return y[0] - 1.0; }, +1};
    auto c = integrate_to_section([](const V1& y, V1& d) { d[0] = y[0]; }, V1{eps}, sec, cfg);
    EXPECT_NEAR(c.t, std::log(1 / eps), 1e-10);
    EXPECT_LT(c.residual, cfg.event_tol);
  }
}

TEST(Sections, OrientationFilter) {
  IntegratorConfig cfg;
  cfg.tau_max = 10.0;
  // cos(t) crosses zero downward at pi/2 and upward at 3pi/2
  Section<double, 2> up{"up", [](const V2& y) { return y[0]; }, +1};
  auto c = integrate_to_section(oscillator, V2{1.0, 0.0}, up, cfg);
  EXPECT_NEAR(c.t, 1.5 * M_PI, 1e-10);
  EXPECT_GT(c.slope, 0.0);
}

TEST(Sections, TangentialCrossingRejected) {
  using V1 = std::array<double, 1>;
  IntegratorConfig cfg;
  cfg.tau_max = 5.0;
  Section<double, 1> sec{"cubic", [](const V1& y) { return std::pow(y[0] - 1.0, 3); }, 0, 1e-6};
  EXPECT_THROW(integrate_to_section([](const V1&, V1& d) { d[0] = 1.0; }, V1{0.0}, sec, cfg), TransversalityError);
}

TEST(Sections, Timeout) {
  using V1 = std::array<double, 1>;
  IntegratorConfig cfg;
  cfg.tau_max = 1.0;
  Section<double, 1> sec{"far", [](const V1& y) { return y[0] - 10.0; }, 0};
  EXPECT_THROW(integrate_to_section([](const V1&, V1& d) { d[0] = 1.0; }, V1{0.0}, sec, cfg), SectionTimeout);
}

TEST(Sections, ValidityBox) {
  IntegratorConfig cfg;
  cfg.tau_max = 20.0;
  Section<double, 2> sec{"box", [](const V2& y) { return y[0]; }, 0};
  sec.valid = [](const V2& y) { return y[1] > 0.0; };  // only the upward crossing at 3pi/2
  auto c = integrate_to_section(oscillator, V2{1.0, 0.0}, sec, cfg);
  EXPECT_NEAR(c.t, 1.5 * M_PI, 1e-10);
}

TEST(GLCFlow, KeplerClosedForm) {
  std::mt19937_64 rng(113);
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e-13;
  for (int n = 0; n < 5; ++n) {
    auto p = oracle::random_masses(rng);
    auto g = oracle::random_glc(rng, 0.5, 0.2);
    // bound orbits only: h < 0 is the elliptic case
    g.h = {-std::abs(g.h[0]) - 0.05, -std::abs(g.h[1]) - 0.05};
    if (1 + 4 * g.h[0] * g.zeta[0].norm2() <= 0.1 || 1 + 4 * g.h[1] * g.zeta[1].norm2() <= 0.1) continue;
    g.refresh();
    double T = 0.7;
    cfg.tau_max = T;
    auto tr = integrate_glc(g, p, Field::XHKepler, cfg);
    ASSERT_TRUE(tr.ok()) << tr.detail;
    auto c0 = glc_to_cartesian(g, p), c1 = glc_to_cartesian(glc_state(tr.back()), p);
    const double k[2] = {p.k1, p.k2}, M[2] = {p.M1, p.M2};
    for (int j = 0; j < 2; ++j) {
      auto e = oracle::ellipse_from(c0.Q[j], c0.P[j] / M[j], k[j] / M[j]);
      auto [Q, V] = oracle::ellipse_at(e, T);
      EXPECT_LT((Q - c1.Q[j]).abs(), 1e-9 * std::max(1.0, Q.abs()));
      EXPECT_LT((V * M[j] - c1.P[j]).abs(), 1e-9 * std::max(1.0, (V * M[j]).abs()));
    }
    EXPECT_NEAR(num::to_double(tr.back()[14]), T, 1e-12);
  }
}

TEST(GLCFlow, TimeRescaleDuality) {
  std::mt19937_64 rng(127);
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e-13;
  for (int n = 0; n < 3; ++n) {
    auto p = oracle::random_masses(rng);
    auto g = oracle::random_glc(rng, 0.5, 0.2);
    cfg.tau_max = 2.0;
    auto a = integrate_glc(g, p, Field::X, cfg);
    ASSERT_TRUE(a.ok());
    double t = a.back()[14];
    cfg.tau_max = t;
    auto b = integrate_glc(g, p, Field::XH, cfg);
    ASSERT_TRUE(b.ok());
    for (int i = 0; i < 14; ++i)
      EXPECT_LT(std::abs(a.back()[i] - b.back()[i]), 1e-9 * std::max(1.0, std::abs(a.back()[i])));
  }
}

TEST(GLCFlow, GammaStaysUnit) {
  std::mt19937_64 rng(131);
  auto p = oracle::random_masses(rng);
  auto g = oracle::random_glc(rng);
  IntegratorConfig cfg;
  cfg.rtol = cfg.atol = 1e-8;
  cfg.event_tol = 1e-8;
  cfg.tau_max = 20.0;
  auto tr = integrate_glc(g, p, Field::X, cfg);
  for (const auto& v : tr.y) {
    EXPECT_NEAR(std::hypot(v[6], v[7]), 1.0, 1e-14);
    EXPECT_NEAR(std::hypot(v[8], v[9]), 1.0, 1e-14);
  }
}

TEST(GLCFlow, CsvExport) {
  auto p = derive_params(1.0, 1.0, 1.0, 1.0);
  auto g = make_glc(C<double>(0.3), C<double>(0.2), 0.0, 0.0, C<double>(1.0), C<double>(1.0), C<double>(1.0),
                    C<double>());
  IntegratorConfig cfg;
  cfg.tau_max = 0.1;
  auto tr = integrate_glc(g, p, Field::X, cfg);
  auto csv = trajectory_csv(tr);
  EXPECT_EQ(csv.substr(0, 7), "tau,t,z");
  EXPECT_EQ(static_cast<size_t>(std::count(csv.begin(), csv.end(), '\n')), tr.t.size() + 1);
}
