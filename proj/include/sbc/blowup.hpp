#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "flow.hpp"

namespace sbc {

// Directional charts of the RP^3 blow-up of zeta = 0. Homogeneous coordinates are
// (I1, L1, I2, L2) = (alpha, beta, gamma, delta); chart k sets coordinate k to 1.
enum class Chart { alpha = 0, beta = 1, gamma = 2, delta = 3 };

inline const char* to_string(Chart c) {
  switch (c) {
    case Chart::alpha: return "alpha";
    case Chart::beta: return "beta";
    case Chart::gamma: return "gamma";
    case Chart::delta: return "delta";
  }
  return "?";
}

class ChartError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DegenerateValue : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <class T>
struct Fiber {
  std::array<T, 2> h{};
  std::array<C<T>, 2> Gamma{C<T>(T(1.0)), C<T>(T(1.0))};
  C<T> x{T(1.0)}, y{};
};

template <class T>
struct ChartPoint {
  Chart chart = Chart::alpha;
  T r{};
  std::array<T, 3> ratios{};
  Fiber<T> fiber;
  int orientation = 1;

  // homogeneous representative with the distinguished entry equal to 1
  std::array<T, 4> homogeneous() const {
    std::array<T, 4> e;
    int k = static_cast<int>(chart), m = 0;
    for (int i = 0; i < 4; ++i) e[i] = i == k ? T(1.0) : ratios[m++];
    return e;
  }
  bool on_collision_manifold() const { return r == T(0.0); }
};

// chart vector: r, three ratios, h1, h2, Gamma1, Gamma2, x, y, accumulated t
constexpr std::size_t kChartDim = 15;
template <class T>
using ChartVec = std::array<T, kChartDim>;

template <class T>
ChartVec<T> pack(const ChartPoint<T>& c, const T& t = T(0.0)) {
  const auto& f = c.fiber;
  return {c.r,           c.ratios[0],   c.ratios[1],   c.ratios[2], f.h[0], f.h[1], f.Gamma[0].re, f.Gamma[0].im,
          f.Gamma[1].re, f.Gamma[1].im, f.x.re,        f.x.im,      f.y.re, f.y.im, t};
}

template <class T>
ChartPoint<T> unpack(const ChartVec<T>& v, Chart chart, int orientation) {
  ChartPoint<T> c;
  c.chart = chart;
  c.orientation = orientation;
  c.r = v[0];
  c.ratios = {v[1], v[2], v[3]};
  c.fiber.h = {v[4], v[5]};
  c.fiber.Gamma = {C<T>(v[6], v[7]), C<T>(v[8], v[9])};
  c.fiber.x = C<T>(v[10], v[11]);
  c.fiber.y = C<T>(v[12], v[13]);
  return c;
}

template <class T>
ChartPoint<T> to_chart(const GLCState<T>& s, Chart chart) {
  std::array<T, 4> w{s.zeta[0].re, s.zeta[0].im, s.zeta[1].re, s.zeta[1].im};
  int k = static_cast<int>(chart);
  if (w[k] == T(0.0)) throw ChartError(std::string("to_chart: distinguished coordinate of the ") + to_string(chart) +
                                       "-chart is zero");
  ChartPoint<T> c;
  c.chart = chart;
  c.r = w[k];
  int m = 0;
  for (int i = 0; i < 4; ++i)
    if (i != k) c.ratios[m++] = w[i] / w[k];
  c.fiber.h = s.h;
  c.fiber.Gamma = s.Gamma;
  c.fiber.x = s.x;
  c.fiber.y = s.y;
  c.orientation = c.r < T(0.0) ? -1 : 1;
  return c;
}

// chart of the largest homogeneous coordinate
template <class T>
Chart best_chart(const GLCState<T>& s) {
  std::array<double, 4> w{num::to_double(s.zeta[0].re), num::to_double(s.zeta[0].im), num::to_double(s.zeta[1].re),
                          num::to_double(s.zeta[1].im)};
  int k = 0;
  for (int i = 1; i < 4; ++i)
    if (std::abs(w[i]) > std::abs(w[k])) k = i;
  return static_cast<Chart>(k);
}

template <class T>
GLCState<T> from_chart(const ChartPoint<T>& c) {
  auto e = c.homogeneous();
  GLCState<T> s;
  s.zeta = {C<T>(c.r * e[0], c.r * e[1]), C<T>(c.r * e[2], c.r * e[3])};
  s.h = c.fiber.h;
  s.Gamma = c.fiber.Gamma;
  s.x = c.fiber.x;
  s.y = c.fiber.y;
  s.refresh();
  return s;
}

// xi_eta = xi_nu / eta_nu, r_eta = r_nu eta_nu; the orientation flag picks up the sign of the divisor
template <class T>
ChartPoint<T> transition(const ChartPoint<T>& c, Chart target) {
  if (target == c.chart) return c;
  auto e = c.homogeneous();
  int k = static_cast<int>(target);
  if (e[k] == T(0.0))
    throw ChartError(std::string("transition: point is not in the ") + to_string(target) + "-chart");
  ChartPoint<T> o = c;
  o.chart = target;
  o.r = c.r * e[k];
  int m = 0;
  for (int i = 0; i < 4; ++i)
    if (i != k) o.ratios[m++] = e[i] / e[k];
  if (e[k] < T(0.0)) o.orientation = -c.orientation;
  return o;
}

namespace detail {

// Desingularised field Y = X / r in the given chart, written with every power of r explicit
// so that it is regular on r = 0. With zeta = r e, n_j = r^2 m_j and G_j = r g_j:
//   zeta_j' / r^2 = U_j^2 m_k + r^2 m1 m2 (2 h_j + 4 a_j^{-1/3} lam_j r^2 e_j g_j / U_j^2)
//   r' = r A_k,  ratio_i' = A_i - ratio_i A_k
//   fiber' = (fiber component of X) / r
template <class T>
void chart_rhs(const ChartVec<T>& v, ChartVec<T>& out, Chart chart, const MassParams<T>& p, Field field) {
  const bool coupled = field == Field::X;
  const int k = static_cast<int>(chart);
  const T& r = v[0];
  std::array<T, 4> e;
  for (int i = 0, m = 1; i < 4; ++i) e[i] = i == k ? T(1.0) : v[m++];
  C<T> ej[2] = {C<T>(e[0], e[1]), C<T>(e[2], e[3])};
  T m2[2] = {ej[0].norm2(), ej[1].norm2()};
  T h[2] = {v[4], v[5]};
  C<T> G[2] = {C<T>(v[6], v[7]), C<T>(v[8], v[9])};
  T r2 = r * r;
  T U[2] = {solve_U(ej[0] * r, h[0]), solve_U(ej[1] * r, h[1])};
  T U2[2] = {U[0] * U[0], U[1] * U[1]};
  T mm = m2[0] * m2[1];

  C<T> g[2];
  KGrad<T> kg;
  if (coupled) {
    C<T> Q[2];
    for (int j = 0; j < 2; ++j) {
      C<T> gz = G[j] * ej[j] * r;
      Q[j] = gz * gz * (p.lam(j + 1) / U2[j]);
    }
    kg = coupling(Q[0], Q[1], C<T>(v[10], v[11]), p, true);
    g[0] = G[0] * G[0] * ej[0] * kg.dQ1;
    g[1] = G[1] * G[1] * ej[1] * kg.dQ2;
  }

  std::array<T, 4> A;
  for (int j = 0; j < 2; ++j) {
    int kk = 1 - j;
    T a13 = p.a13(j + 1);
    C<T> a(U2[j] * m2[kk] + r2 * mm * 2.0 * h[j], T(0.0));
    T dh(0.0);
    T phase = h[j] * ej[j].im * r2 * m2[kk];
    if (coupled) {
      a += ej[j] * g[j] * (r2 * r2 * mm * 4.0 * p.lam(j + 1) / (a13 * U2[j]));
      dh = 4.0 * a13 * U2[j] * r2 * m2[kk] * g[j].re / p.s(j + 1);
      phase -= r2 * r2 * mm * 2.0 * a13 * g[j].im / (p.s(j + 1) * U2[j]);
    }
    A[2 * j] = a.re;
    A[2 * j + 1] = a.im;
    out[4 + j] = dh;
    out[6 + 2 * j] = -G[j].im * phase;
    out[7 + 2 * j] = G[j].re * phase;
  }
  out[0] = r * A[k];
  for (int i = 0, m = 1; i < 4; ++i)
    if (i != k) {
      out[m] = A[i] - v[m] * A[k];
      ++m;
    }
  T w = r2 * r * mm;
  out[10] = w * p.mu * v[12];
  out[11] = w * p.mu * v[13];
  if (coupled) {
    out[12] = w * 2.0 * kg.dxbar.re;
    out[13] = w * 2.0 * kg.dxbar.im;
  } else {
    out[12] = T(0.0);
    out[13] = T(0.0);
  }
  // dt/ds for ds = r dtau
  out[14] = w;
}

}  // namespace detail

template <class T>
struct ChartDerivative {
  Chart chart = Chart::alpha;
  T dr{};
  std::array<T, 3> dratios{};
  std::array<T, 2> dh{};
  std::array<C<T>, 2> dGamma{};
  C<T> dx{}, dy{};
};

// Y = X / r_eta in the chart of c (regular on r = 0). Field::XKepler drops the coupling.
template <class T>
ChartDerivative<T> eval_X_chart(const ChartPoint<T>& c, const MassParams<T>& p, Field field = Field::X) {
  if (field != Field::X && field != Field::XKepler) throw std::invalid_argument("eval_X_chart: rescaled fields only");
  ChartVec<T> v = pack(c), d{};
  detail::chart_rhs(v, d, c.chart, p, field);
  ChartDerivative<T> o;
  o.chart = c.chart;
  o.dr = d[0];
  o.dratios = {d[1], d[2], d[3]};
  o.dh = {d[4], d[5]};
  o.dGamma = {C<T>(d[6], d[7]), C<T>(d[8], d[9])};
  o.dx = C<T>(d[10], d[11]);
  o.dy = C<T>(d[12], d[13]);
  return o;
}

// d/dtau of zeta along r Y, i.e. the pushforward of the chart field scaled back by r
template <class T>
std::array<C<T>, 2> pushforward_zeta(const ChartPoint<T>& c, const ChartDerivative<T>& d) {
  auto e = c.homogeneous();
  std::array<T, 4> de{};
  for (int i = 0, m = 0; i < 4; ++i)
    if (i != static_cast<int>(c.chart)) de[i] = d.dratios[m++];
  std::array<T, 4> z;
  for (int i = 0; i < 4; ++i) z[i] = c.r * (d.dr * e[i] + c.r * de[i]);
  return {C<T>(z[0], z[1]), C<T>(z[2], z[3])};
}

// Homogeneous pairs in RP^1.
template <class T>
struct ProjectivePair {
  T a{}, b{};
  double value() const { return num::to_double(b) / num::to_double(a); }
};

// sin of the angle between two lines through the origin of R^2
template <class T>
double chordal_distance(const ProjectivePair<T>& u, const ProjectivePair<T>& v) {
  double ua = num::to_double(u.a), ub = num::to_double(u.b), va = num::to_double(v.a), vb = num::to_double(v.b);
  return std::abs(ua * vb - ub * va) / (std::hypot(ua, ub) * std::hypot(va, vb));
}

template <class T>
ProjectivePair<T> kappa1_hom(const std::array<T, 4>& e) {
  return {e[1], e[3]};
}

template <class T>
ProjectivePair<T> kappa2_hom(const std::array<T, 4>& e) {
  const T &al = e[0], &be = e[1], &ga = e[2], &de = e[3];
  return {be * be * be, (al * al * al + 3.0 * be * be * al) - (ga * ga * ga + 3.0 * de * de * ga)};
}

template <class T>
ProjectivePair<T> kappa1(const ChartPoint<T>& c) {
  auto k = kappa1_hom(c.homogeneous());
  if (k.a == T(0.0) && k.b == T(0.0)) throw DegenerateValue("kappa1: both homogeneous entries vanish");
  return k;
}

template <class T>
ProjectivePair<T> kappa2(const ChartPoint<T>& c) {
  auto k = kappa2_hom(c.homogeneous());
  if (k.a == T(0.0) && k.b == T(0.0)) throw DegenerateValue("kappa2: both homogeneous entries vanish");
  return k;
}

// Angle between the level sets of kappa1 and kappa2 at a point of C, measured in the
// chart's ratio coordinates through the gradients of the cross-multiplied pairs.
inline double kappa_transversality(const ChartPoint<double>& c) {
  auto g = [&](int which, const std::array<double, 3>& rt) {
    ChartPoint<double> q = c;
    q.ratios = rt;
    auto e = q.homogeneous();
    auto k0 = which == 1 ? kappa1_hom(c.homogeneous()) : kappa2_hom(c.homogeneous());
    auto k = which == 1 ? kappa1_hom(e) : kappa2_hom(e);
    return k.a * k0.b - k.b * k0.a;
  };
  Eigen::Vector3d g1, g2;
  const double hstep = 1e-6;
  for (int i = 0; i < 3; ++i) {
    auto p = c.ratios, m = c.ratios;
    p[i] += hstep;
    m[i] -= hstep;
    g1[i] = (g(1, p) - g(1, m)) / (2 * hstep);
    g2[i] = (g(2, p) - g(2, m)) / (2 * hstep);
  }
  double n1 = g1.norm(), n2 = g2.norm();
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  return std::asin(std::min(1.0, g1.cross(g2).norm() / (n1 * n2)));
}

struct SpectrumResult {
  std::array<double, 4> eigenvalues{};  // normal directions, ordered as (r, ratio1, ratio2, ratio3)
  int zero_block_dim = 0;
  std::vector<std::complex<double>> all;
  Eigen::MatrixXd jacobian;
  double hyperbolicity_ratio = 0.0;  // -lambda_1 : lambda_2 as lambda_min / lambda_unstable
  double max_offdiag = 0.0;
};

// Numerical Jacobian of Y at the point of N in the alpha-chart, (r, beta, gamma, delta) = (0, 0, 1, 0),
// in the 12 coordinates (r, ratios, h1, h2, theta1, theta2, x, y) with Gamma_j = exp(i theta_j).
template <class T>
SpectrumResult jacobian_at_N(const Fiber<T>& fiber, const MassParams<T>& p) {
  ChartPoint<T> base;
  base.chart = Chart::alpha;
  base.r = T(0.0);
  base.ratios = {T(0.0), T(1.0), T(0.0)};
  base.fiber = fiber;
  auto field12 = [&](const std::array<T, 12>& q) {
    ChartPoint<T> c = base;
    c.r = q[0];
    c.ratios = {q[1], q[2], q[3]};
    c.fiber.h = {q[4], q[5]};
    for (int j = 0; j < 2; ++j) {
      double th = num::to_double(q[6 + j]);
      c.fiber.Gamma[j] = fiber.Gamma[j] * C<T>(T(std::cos(th)), T(std::sin(th)));
    }
    c.fiber.x = C<T>(q[8], q[9]);
    c.fiber.y = C<T>(q[10], q[11]);
    auto d = eval_X_chart(c, p);
    std::array<double, 12> o;
    o[0] = num::to_double(d.dr);
    for (int i = 0; i < 3; ++i) o[1 + i] = num::to_double(d.dratios[i]);
    o[4] = num::to_double(d.dh[0]);
    o[5] = num::to_double(d.dh[1]);
    for (int j = 0; j < 2; ++j) o[6 + j] = num::to_double((c.fiber.Gamma[j].conj() * d.dGamma[j]).im);
    o[8] = num::to_double(d.dx.re);
    o[9] = num::to_double(d.dx.im);
    o[10] = num::to_double(d.dy.re);
    o[11] = num::to_double(d.dy.im);
    return o;
  };
  std::array<T, 12> q0{};
  q0[2] = T(1.0);
  q0[4] = fiber.h[0];
  q0[5] = fiber.h[1];
  q0[8] = fiber.x.re;
  q0[9] = fiber.x.im;
  q0[10] = fiber.y.re;
  q0[11] = fiber.y.im;
  SpectrumResult res;
  res.jacobian = Eigen::MatrixXd::Zero(12, 12);
  const double hs = std::pow(num::epsilon<T>(), 0.2);
  for (int c = 0; c < 12; ++c) {
    auto at = [&](double s) {
      auto q = q0;
      q[c] = q[c] + T(s);
      return field12(q);
    };
    auto f1 = at(-2 * hs), f2 = at(-hs), f3 = at(hs), f4 = at(2 * hs);
    for (int r = 0; r < 12; ++r) res.jacobian(r, c) = (f1[r] - 8 * f2[r] + 8 * f3[r] - f4[r]) / (12 * hs);
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(res.jacobian);
  for (int i = 0; i < 12; ++i) res.all.push_back(es.eigenvalues()[i]);
  for (int i = 0; i < 4; ++i) res.eigenvalues[i] = res.jacobian(i, i);
  double scale = res.jacobian.cwiseAbs().maxCoeff();
  for (const auto& l : res.all)
    if (std::abs(l) < 1e-7 * scale) ++res.zero_block_dim;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 12; ++c)
      if (r != c) res.max_offdiag = std::max(res.max_offdiag, std::abs(res.jacobian(r, c)));
  res.hyperbolicity_ratio = res.eigenvalues[2] / res.eigenvalues[1];
  return res;
}

// ---- integration near collision ----

template <class T>
void renormalize_gamma_chart(ChartVec<T>& v) {
  for (int j = 0; j < 2; ++j) {
    T n = num::sqrt(v[6 + 2 * j] * v[6 + 2 * j] + v[7 + 2 * j] * v[7 + 2 * j]);
    v[6 + 2 * j] = v[6 + 2 * j] / n;
    v[7 + 2 * j] = v[7 + 2 * j] / n;
  }
}


struct NearCollisionConfig {
  IntegratorConfig integrator;
  double switch_at = 1.5;      // switch chart when some |ratio| exceeds this
  double radius = 0.5;         // |zeta| beyond which the orbit is handed back as a GLC state
  double s_max = 200.0;        // budget in desingularised time
  bool stop_on_exit = true;
};

template <class T>
struct ChartSample {
  T s{};
  ChartPoint<T> point;
  T t{};
};

template <class T>
struct ChartSwitch {
  T s{};
  Chart from = Chart::alpha, to = Chart::alpha;
  double continuity = 0.0;  // |zeta before - zeta after|
  int orientation = 1;
};

template <class T>
struct ChartTrajectory {
  std::vector<ChartSample<T>> samples;
  std::vector<ChartSwitch<T>> switches;
  StopReason reason = StopReason::tau_max;
  std::string detail;
  bool ejected = false;
  GLCState<T> handback;  // valid when ejected
  int r_sign_changes = 0;

  const ChartPoint<T>& back() const { return samples.back().point; }
};

template <class T>
double zeta_norm(const ChartPoint<T>& c) {
  auto e = c.homogeneous();
  double s = 0;
  for (const auto& v : e) s += num::to_double(v) * num::to_double(v);
  return std::abs(num::to_double(c.r)) * std::sqrt(s);
}

// Integrates sigma Y (sigma = orientation) in desingularised time s, switching charts when a ratio
// leaves the box [-switch_at, switch_at]; off C, orientation * sign(r) = +1 is physical forward time.
template <class T>
ChartTrajectory<T> integrate_near_collision(const ChartPoint<T>& start, const MassParams<T>& p,
                                            const NearCollisionConfig& cfg, Field field = Field::X) {
  ChartTrajectory<T> out;
  ChartPoint<T> cur = start;
  T s0(0.0), t0(0.0);
  out.samples.push_back({s0, cur, t0});
  double remaining = cfg.s_max;
  int last_sign = cur.r > T(0.0) ? 1 : (cur.r < T(0.0) ? -1 : 0);
  for (int guard = 0; guard < 10000 && remaining > 0; ++guard) {
    const Chart chart = cur.chart;
    const int sigma = cur.orientation;
    IntegratorConfig ic = cfg.integrator;
    ic.tau_max = remaining;
    IntegrateOptions<T, kChartDim> opt;
    opt.keep_segments = false;
    opt.project = [](ChartVec<T>& v) { renormalize_gamma_chart(v); };
    for (int i = 0; i < 3; ++i) {
      Event<T, kChartDim> ev;
      ev.name = "switch";
      double lim = cfg.switch_at;
      ev.g = [i, lim](const ChartVec<T>& v) { return v[1 + i] * v[1 + i] - T(lim * lim); };
      ev.direction = +1;
      opt.events.push_back(ev);
    }
    if (cfg.stop_on_exit) {
      Event<T, kChartDim> ev;
      ev.name = "exit";
      double rad2 = cfg.radius * cfg.radius;
      ev.g = [rad2](const ChartVec<T>& v) {
        T n = v[0] * v[0] * (T(1.0) + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
        return n - T(rad2);
      };
      ev.direction = +1;
      opt.events.push_back(ev);
    }
    auto f = [&p, chart, sigma, field](const ChartVec<T>& v, ChartVec<T>& d) {
      detail::chart_rhs(v, d, chart, p, field);
      if (sigma < 0)
        for (auto& x : d) x = -x;
    };
    auto tr = integrate(f, pack(cur, t0), ic, opt);
    for (std::size_t i = 1; i < tr.t.size(); ++i) {
      auto c = unpack(tr.y[i], chart, sigma);
      int sg = c.r > T(0.0) ? 1 : (c.r < T(0.0) ? -1 : 0);
      if (sg != 0 && last_sign != 0 && sg != last_sign) ++out.r_sign_changes;
      if (sg != 0) last_sign = sg;
      out.samples.push_back({s0 + tr.t[i], c, tr.y[i][14]});
    }
    double used = std::abs(num::to_double(tr.t.back()));
    remaining -= used;
    s0 = s0 + tr.t.back();
    t0 = tr.y.back()[14];
    cur = unpack(tr.y.back(), chart, sigma);
    if (tr.reason != StopReason::event) {
      out.reason = tr.reason;
      out.detail = tr.detail;
      break;
    }
    if (tr.detail == "exit") {
      out.reason = StopReason::event;
      out.detail = "exit";
      out.ejected = true;
      out.handback = from_chart(cur);
      break;
    }
    // chart switch to the largest homogeneous coordinate
    auto e = cur.homogeneous();
    int k = 0;
    for (int i = 1; i < 4; ++i)
      if (num::abs(e[i]) > num::abs(e[k])) k = i;
    auto nxt = transition(cur, static_cast<Chart>(k));
    auto za = from_chart(cur), zb = from_chart(nxt);
    double cont = std::max(num::to_double((za.zeta[0] - zb.zeta[0]).abs()), num::to_double((za.zeta[1] - zb.zeta[1]).abs()));
    out.switches.push_back({s0, cur.chart, nxt.chart, cont, nxt.orientation});
    int sg = nxt.r > T(0.0) ? 1 : (nxt.r < T(0.0) ? -1 : 0);
    if (sg != 0 && last_sign != 0 && sg != last_sign) ++out.r_sign_changes;
    if (sg != 0) last_sign = sg;
    cur = nxt;
    out.samples.push_back({s0, cur, t0});
  }
  if (remaining <= 0 && !out.ejected) {
    out.reason = StopReason::tau_max;
    out.detail = "s budget";
  }
  return out;
}

}  // namespace sbc
