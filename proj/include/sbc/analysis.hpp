#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "blowup.hpp"

namespace sbc {

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- rotated frame J1 = (I1 + I2)/2, J2 = (I1 - I2)/2 ----

template <class T>
struct RotatedPoint {
  T J1{}, J2{}, L1{}, L2{};
  Fiber<T> fiber;
};

template <class T>
RotatedPoint<T> rotate(const GLCState<T>& s) {
  RotatedPoint<T> r;
  r.J1 = (s.zeta[0].re + s.zeta[1].re) * 0.5;
  r.J2 = (s.zeta[0].re - s.zeta[1].re) * 0.5;
  r.L1 = s.zeta[0].im;
  r.L2 = s.zeta[1].im;
  r.fiber.h = s.h;
  r.fiber.Gamma = s.Gamma;
  r.fiber.x = s.x;
  r.fiber.y = s.y;
  return r;
}

template <class T>
GLCState<T> unrotate(const RotatedPoint<T>& r) {
  GLCState<T> s;
  s.zeta = {C<T>(r.J1 + r.J2, r.L1), C<T>(r.J1 - r.J2, r.L2)};
  s.h = r.fiber.h;
  s.Gamma = r.fiber.Gamma;
  s.x = r.fiber.x;
  s.y = r.fiber.y;
  s.refresh();
  return s;
}

// alpha-chart ratios of the rotated frame: (L1, J2, L2) / J1
template <class T>
std::array<T, 3> rotated_ratios(const GLCVec<T>& v) {
  T j1 = (v[0] + v[2]) * 0.5, j2 = (v[0] - v[2]) * 0.5;
  return {v[1] / j1, j2 / j1, v[3] / j1};
}

template <class T>
T rotated_J1(const GLCVec<T>& v) {
  return (v[0] + v[2]) * 0.5;
}

// ---- approximate integrals and the resonant term ----

template <class T>
T kappa_leading(const GLCState<T>& s) {
  const T &I1 = s.zeta[0].re, &L1 = s.zeta[0].im, &I2 = s.zeta[1].re, &L2 = s.zeta[1].im;
  return (I1 * I1 * I1 + 3.0 * I1 * L1 * L1) - (I2 * I2 * I2 + 3.0 * I2 * L2 * L2);
}

namespace detail {

template <class T>
T G7_1(const T& I1, const T& L1, const T& I2, const T& L2) {
  T I1_2 = I1 * I1, L1_2 = L1 * L1, I2_2 = I2 * I2, L2_2 = L2 * L2;
  T I1_3 = I1_2 * I1, I2_3 = I2_2 * I2, I1_4 = I1_2 * I1_2, I2_4 = I2_2 * I2_2, L1_4 = L1_2 * L1_2, L2_4 = L2_2 * L2_2;
  return -2937060.0 * I1_4 * L1_2 * I2 - 3947160.0 * I1_2 * L1_4 * I2 - 1522920.0 * L1_4 * L1_2 * I2 +
         1107225.0 * I1_3 * I2_4 + 3181815.0 * I1 * L1_2 * I2_4 - 807525.0 * I2_4 * I2_3 +
         2447550.0 * I1_3 * I2_2 * L2_2 + 6394710.0 * I1 * L1_2 * I2_2 * L2_2 - 2692305.0 * I2_4 * I2 * L2_2 -
         944468.0 * I1_3 * L2_4 - 899220.0 * I1 * L1_2 * L2_4 - 1503082.0 * I2_3 * L2_4 - 3800244.0 * I2 * L2_4 * L2_2;
}

template <class T>
T G7_2(const T& I1, const T& L1, const T& I2, const T& L2) {
  T I1_3 = I1 * I1 * I1, L2_4 = L2 * L2 * L2 * L2;
  return 56.0 * (18315.0 * I1_3 * I1_3 * I2 - 27973.0 * I1_3 * L2_4 - 32115.0 * I1 * L1 * L1 * L2_4 +
                 27973.0 * I2 * I2 * I2 * L2_4 + 135723.0 * I2 * L2_4 * L2 * L2);
}

template <class T>
T G7_3(const T& I1, const T& L1, const T& I2, const T& L2) {
  return -0.64 * L1 * L1 * (I1 * I1 * I1 + 12.0 * I1 * L1 * L1 - I2 * I2 * I2) * L2 * L2;
}

}  // namespace detail

// h_j here is the full intrinsic energy, i.e. h + h* in the split around the anchor.
template <class T>
T kappa_G5(const GLCState<T>& s) {
  const T &I1 = s.zeta[0].re, &L1 = s.zeta[0].im, &I2 = s.zeta[1].re, &L2 = s.zeta[1].im;
  return -0.8 * (I1 * I1 * I1 + 6.0 * I1 * L1 * L1 - I2 * I2 * I2) * (s.h[0] * L1 * L1 - s.h[1] * L2 * L2);
}

template <class T>
T kappa_G7(const GLCState<T>& s) {
  const T &I1 = s.zeta[0].re, &L1 = s.zeta[0].im, &I2 = s.zeta[1].re, &L2 = s.zeta[1].im;
  const T &h1 = s.h[0], &h2 = s.h[1];
  return h1 * h1 * (detail::G7_1(I1, L1, I2, L2) + 0.5 * detail::G7_2(I1, L1, I2, L2)) +
         h1 * h2 * detail::G7_3(I1, L1, I2, L2) -
         h2 * h2 * (detail::G7_1(I2, L2, I1, L1) - 0.5 * detail::G7_2(I2, L2, I1, L1));
}

template <class T>
T kappa_full(const GLCState<T>& s) {
  return kappa_leading(s) + kappa_G5(s) + kappa_G7(s);
}

template <class T>
T H_integral(const GLCState<T>& s, const MassParams<T>& p) {
  return s.h[0] / p.a13(2) + s.h[1] / p.a13(1);
}

// Leading terms of the resonant polynomial in the h-components, alpha_j = 4 arg Gamma_j.
template <class T>
T R59_leading(const T& I1, const T& I2, const T& L1, const T& L2, double a1, double a2) {
  auto quad = [](const T& x, const T& y) { return x * x + x * y + y * y; };
  auto sext = [](const T& x, const T& y, double c) {
    T x3 = x * x * x, y3 = y * y * y;
    return x3 * x3 + c * x3 * y3 + y3 * y3;
  };
  double ang = 6.0 + 10.0 * std::cos(a1) + 10.0 * std::cos(a2) + 35.0 * std::cos(a1 + a2) + 3.0 * std::cos(a1 - a2);
  T out = (8.0 / 19.0) * (I1 - I2) * quad(I1, I2) * sext(I1, I2, -11.0) * ang;
  auto bterm = [](const T& Ia, const T& La, const T& Ib, double aa, double ab) {
    T Ia3 = Ia * Ia * Ia, Ib3 = Ib * Ib * Ib;
    double w = 109.0 * (10.0 * std::cos(aa) + 35.0 * std::cos(aa + ab) + 3.0 * std::cos(aa - ab)) -
               86.0 * (3.0 + 5.0 * std::cos(ab));
    return -(2.0 / 209.0) * Ia * La * La * (5.0 * Ia3 * Ia3 - 35.0 * Ia3 * Ib3 + 14.0 * Ib3 * Ib3) * w;
  };
  out += bterm(I1, L1, I2, a1, a2) + bterm(I2, L2, I1, a2, a1);
  auto sn = [](double aa, double ab) { return 10.0 * std::sin(aa) + 35.0 * std::sin(aa + ab) + 3.0 * std::sin(aa - ab); };
  out += (256.0 / 13.0) * L1 * L1 * L1 * sext(I1, I2, -5.0) * (sn(a1, a2) - sn(a2, a1));
  return out;
}

// ---- fits ----

struct ExponentFit {
  double slope = 0.0, intercept = 0.0, rms = 0.0;
  double eps_min = 0.0, eps_max = 0.0;
  int used = 0;
};

// least squares of log|y| against log x over rows with finite, nonzero y and
// (when errors are given) error below 10% of the signal
inline ExponentFit fit_exponent(const std::vector<double>& x, const std::vector<double>& y,
                                const std::vector<double>& err = {}) {
  std::vector<double> lx, ly, xs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(std::isfinite(y[i]) && y[i] != 0.0 && x[i] > 0.0)) continue;
    if (!err.empty() && !(err[i] <= 0.1 * std::abs(y[i]))) continue;
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(std::abs(y[i])));
    xs.push_back(x[i]);
  }
  if (lx.size() < 4) throw InsufficientData("fit_exponent: fewer than 4 usable rows");
  const double n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  ExponentFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    double r = ly[i] - (f.intercept + f.slope * lx[i]);
    ss += r * r;
  }
  f.rms = std::sqrt(ss / n);
  f.eps_min = *std::min_element(xs.begin(), xs.end());
  f.eps_max = *std::max_element(xs.begin(), xs.end());
  f.used = static_cast<int>(lx.size());
  return f;
}

// y = a x + b x^2 + c x^3 with standard errors
struct PolyFit {
  std::array<double, 3> coef{};
  std::array<double, 3> sigma{};
  double rms = 0.0;
};

inline PolyFit fit_odd_quadratic(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  if (n < 4) throw InsufficientData("polynomial fit: fewer than 4 rows");
  // columns scaled by the largest x for conditioning
  double xm = *std::max_element(x.begin(), x.end());
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    double u = x[i] / xm;
    A(i, 0) = u;
    A(i, 1) = u * u;
    A(i, 2) = u * u * u;
    b(i) = y[i];
  }
  Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  Eigen::VectorXd r = A * c - b;
  double s2 = n > 3 ? r.squaredNorm() / (n - 3) : 0.0;
  Eigen::MatrixXd cov = (A.transpose() * A).inverse() * s2;
  PolyFit f;
  for (int k = 0; k < 3; ++k) {
    double sc = std::pow(xm, k + 1);
    f.coef[k] = c(k) / sc;
    f.sigma[k] = std::sqrt(std::max(0.0, cov(k, k))) / sc;
  }
  f.rms = std::sqrt(r.squaredNorm() / n);
  return f;
}

// Coefficients of prod_{k=0}^{m} (E - q^k) in powers of the shift E f(eps) = f(q eps); the operator
// annihilates 1, eps, ..., eps^m and maps eps^a to eps^a prod_k (q^a - q^k).
template <class T>
std::vector<T> annihilator(double q, int m) {
  std::vector<T> c{T(1.0)};
  for (int k = 0; k <= m; ++k) {
    std::vector<T> nc(c.size() + 1, T(0.0));
    T qk = T(std::pow(q, k));
    for (std::size_t i = 0; i < c.size(); ++i) {
      nc[i + 1] += c[i];
      nc[i] -= c[i] * qk;
    }
    c = nc;
  }
  return c;
}

inline double annihilator_gain(double q, int m, double a) {
  double g = 1.0;
  for (int k = 0; k <= m; ++k) g *= std::pow(q, a) - std::pow(q, k);
  return g;
}

// ---- block map ----

struct BlockExperiment {
  std::array<double, 2> h_star{0.2, -0.1};
  std::array<std::complex<double>, 2> Gamma_star{std::polar(1.0, 0.3), std::polar(1.0, -0.7)};
  std::complex<double> y_star{0.0, 0.0};
  std::array<double, 3> direction{0.3, 0.8, -0.5};
  std::vector<double> eps;
  double rho = 0.3;     // Sigma_0 at J1 = -rho, Sigma_3 at J1 = +rho
  double box = 1.0;     // Sigma_int half-width in ratio coordinates
  double widen = 1.5;   // exit faces accept transverse ratios up to box * widen
  double r0 = 1e-7;     // start of the collision and ejection orbits next to N
  int annihilate = 5;   // smooth powers eps^0 .. eps^annihilate removed from the h-channel
  bool rerun = true;    // tolerance-halving error estimate
  IntegratorConfig integrator;

  void validate() const {
    for (const auto& g : Gamma_star)
      if (std::abs(std::abs(g) - 1.0) > 1e-12) throw std::invalid_argument("Gamma* must have unit modulus");
    if (eps.size() < 2) throw std::invalid_argument("eps grid needs at least two values");
    for (std::size_t i = 0; i < eps.size(); ++i) {
      if (!(eps[i] > 0.0)) throw std::invalid_argument("eps grid must be positive");
      if (i && !(eps[i] < eps[i - 1])) throw std::invalid_argument("eps grid must be strictly decreasing");
    }
    for (double d : direction)
      if (!(std::abs(d) <= 1.0)) throw std::invalid_argument("direction must lie in the unit box");
    if (direction[0] == 0.0 && direction[1] == 0.0 && direction[2] == 0.0)
      throw std::invalid_argument("direction must be nonzero");
    if (!(rho > 0.0) || !(r0 > 0.0) || !(r0 < rho)) throw std::invalid_argument("need 0 < r0 < rho");
    if (!(box > 0.0) || !(widen >= 1.0)) throw std::invalid_argument("bad section geometry");
    if (annihilate < -1) throw std::invalid_argument("annihilate must be >= -1");
    integrator.validate();
  }
};

inline std::vector<double> geometric_grid(double from, double to, int n) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = from * std::pow(to / from, n > 1 ? static_cast<double>(i) / (n - 1) : 0.0);
  return g;
}

template <class T>
struct CollisionOrbits {
  GLCVec<T> entry;  // collision orbit on Sigma_0
  GLCVec<T> exit;   // ejection orbit on Sigma_3
  long steps = 0;
};

template <class T>
GLCState<T> anchor_state(const BlockExperiment& ex, const T& r) {
  return make_glc<T>(C<T>(r), C<T>(r), T(ex.h_star[0]), T(ex.h_star[1]),
                     unit(C<T>(T(ex.Gamma_star[0].real()), T(ex.Gamma_star[0].imag()))),
                     unit(C<T>(T(ex.Gamma_star[1].real()), T(ex.Gamma_star[1].imag()))), C<T>(T(1.0)),
                     C<T>(T(ex.y_star.real()), T(ex.y_star.imag())));
}

// Collision and ejection orbits through the point of N with the anchor fiber: both are
// attracting in the direction they are integrated (ratios decay), so starting on the
// ray I1 = I2, L = 0 at |zeta| = r0 converges onto them.
template <class T>
CollisionOrbits<T> collision_orbits(const BlockExperiment& ex, const MassParams<T>& p) {
  CollisionOrbits<T> out;
  for (int sgn : {-1, +1}) {
    auto s = anchor_state<T>(ex, T(sgn * ex.r0));
    IntegratorConfig cfg = ex.integrator;
    cfg.tau_max = 1e3 / ex.r0;
    IntegrateOptions<T, kGLCDim> opt;
    opt.keep_segments = false;
    opt.keep_samples = false;
    opt.direction = sgn;
    Event<T, kGLCDim> ev;
    ev.name = "section";
    double target = sgn * ex.rho;
    ev.g = [target](const GLCVec<T>& v) { return rotated_J1(v) - T(target); };
    opt.events.push_back(ev);
    auto tr = integrate_glc(s, p, Field::X, cfg, opt);
    if (tr.reason != StopReason::event)
      throw ExperimentError(std::string(sgn < 0 ? "collision" : "ejection") + " orbit did not reach the section: " +
                            to_string(tr.reason) + " " + tr.detail);
    auto v = tr.back();
    v[14] = T(0.0);
    (sgn < 0 ? out.entry : out.exit) = v;
    out.steps += tr.accepted;
  }
  return out;
}

template <class T>
GLCVec<T> entry_point(const GLCVec<T>& pstar, const T& eps, const std::array<double, 3>& dir) {
  GLCVec<T> v = pstar;
  T j1 = rotated_J1(pstar), j2 = (pstar[0] - pstar[2]) * 0.5;
  v[1] = pstar[1] + j1 * (eps * T(dir[0]));
  j2 = j2 + j1 * (eps * T(dir[1]));
  v[3] = pstar[3] + j1 * (eps * T(dir[2]));
  v[0] = j1 + j2;
  v[2] = j1 - j2;
  v[14] = T(0.0);
  return v;
}

template <class T>
struct FaceCrossing {
  std::string face;  // "beta+", "gamma-", ...
  int axis = 0;      // 0: beta, 1: gamma, 2: delta
  int sign = 1;
  bool outward = true;  // leaving the box (J1 < 0) or coming back (J1 > 0)
  T tau{};
  T r{};  // J1
  std::array<T, 3> ratios{};
  GLCVec<T> state{};
};

template <class T>
struct BlockResult {
  double eps = 0.0;
  GLCVec<T> entry{}, exit{};
  std::array<T, 3> position{};  // (beta3, gamma3, delta3) relative to the ejection orbit
  std::array<T, 2> dh{};        // h_j at exit minus h_j on the ejection orbit
  T dH{}, dkappa{};
  std::vector<FaceCrossing<T>> crossings;
  int r_sign_changes = 0;
  double max_imag = 0.0;
  StopReason reason = StopReason::tau_max;
  std::string diagnostic;
  long steps = 0;
  bool ok() const { return reason == StopReason::event && diagnostic.empty(); }
};

inline const char* axis_name(int a) { return a == 0 ? "beta" : (a == 1 ? "gamma" : "delta"); }

template <class T>
BlockResult<T> block_map(const GLCVec<T>& entry, const BlockExperiment& ex, const MassParams<T>& p,
                         const GLCVec<T>& qstar, const IntegratorConfig& cfg_in) {
  BlockResult<T> out;
  out.entry = entry;
  IntegratorConfig cfg = cfg_in;
  cfg.tau_max = 1e6 / ex.rho;
  IntegrateOptions<T, kGLCDim> opt;
  opt.keep_segments = false;
  opt.keep_samples = false;
  double max_imag = 0.0;
  opt.project = [&max_imag](GLCVec<T>& v) {
    for (int i : {1, 3, 7, 9, 11, 13}) max_imag = std::max(max_imag, std::abs(num::to_double(v[i])));
  };
  Event<T, kGLCDim> s3;
  s3.name = "sigma3";
  double rho = ex.rho;
  s3.g = [rho](const GLCVec<T>& v) { return rotated_J1(v) - T(rho); };
  s3.direction = +1;
  opt.events.push_back(s3);
  for (int a = 0; a < 3; ++a) {
    Event<T, kGLCDim> ev;
    ev.name = axis_name(a);
    ev.terminal = false;
    double b2 = ex.box * ex.box;
    ev.g = [a, b2](const GLCVec<T>& v) {
      T j1 = rotated_J1(v);
      T c = a == 0 ? v[1] : (a == 1 ? (v[0] - v[2]) * 0.5 : v[3]);
      return c * c - b2 * j1 * j1;
    };
    opt.events.push_back(ev);
  }
  Event<T, kGLCDim> rz;
  rz.name = "r=0";
  rz.terminal = false;
  rz.g = [](const GLCVec<T>& v) { return rotated_J1(v); };
  opt.events.push_back(rz);

  auto tr = integrate_glc(glc_state(entry), p, Field::X, cfg, opt);
  out.reason = tr.reason;
  out.steps = tr.accepted;
  out.max_imag = max_imag;
  if (tr.reason != StopReason::event) {
    out.diagnostic = std::string("did not reach Sigma_3: ") + to_string(tr.reason) + " " + tr.detail;
    return out;
  }
  out.exit = tr.back();
  auto crs = tr.crossings;
  std::sort(crs.begin(), crs.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  for (const auto& c : crs) {
    if (c.name == "r=0") {
      ++out.r_sign_changes;
      continue;
    }
    if (c.name == "sigma3") continue;
    FaceCrossing<T> f;
    f.axis = c.name == "beta" ? 0 : (c.name == "gamma" ? 1 : 2);
    f.tau = c.t;
    f.r = rotated_J1(c.y);
    f.ratios = rotated_ratios(c.y);
    f.sign = f.ratios[f.axis] < T(0.0) ? -1 : 1;
    f.outward = f.r < T(0.0);
    f.face = std::string(axis_name(f.axis)) + (f.sign > 0 ? "+" : "-");
    f.state = c.y;
    out.crossings.push_back(f);
  }
  auto re = rotated_ratios(out.exit), rq = rotated_ratios(qstar);
  for (int i = 0; i < 3; ++i) out.position[i] = -(re[i] - rq[i]);
  out.dh = {out.exit[4] - qstar[4], out.exit[5] - qstar[5]};
  auto se = glc_state(out.exit), sq = glc_state(qstar), s0 = glc_state(entry);
  out.dH = H_integral(se, p) - H_integral(sq, p);
  out.dkappa = kappa_full(se) - kappa_full(s0);
  if (out.r_sign_changes != 1) out.diagnostic = "r changed sign " + std::to_string(out.r_sign_changes) + " times";
  return out;
}

// ---- Dulac decomposition ----

template <class T>
struct DulacData {
  bool complete = false;
  std::string issue;
  std::string entry_face, exit_face;
  double r1 = 0, r2 = 0;
  std::array<double, 3> ratios1{}, ratios2{};
  std::array<T, 2> h1{}, h2{};  // h at the two Sigma_int crossings
  std::array<double, 3> exit_position{};
};

template <class T>
DulacData<T> dulac_decompose(const BlockResult<T>& b, const BlockExperiment& ex) {
  DulacData<T> d;
  const FaceCrossing<T>* in = nullptr;
  const FaceCrossing<T>* out = nullptr;
  for (const auto& c : b.crossings) {
    if (c.outward && !in) in = &c;
    if (!c.outward) out = &c;
  }
  if (!in || !out) {
    d.issue = "Sigma_int crossings missing";
    return d;
  }
  d.entry_face = in->face;
  d.exit_face = out->face;
  auto within = [](const std::array<T, 3>& r, int axis, double lim) {
    for (int i = 0; i < 3; ++i)
      if (i != axis && std::abs(num::to_double(r[i])) > lim * (1 + 1e-9)) return false;
    return true;
  };
  if (!within(in->ratios, in->axis, ex.box)) d.issue = "entry crossing outside its face";
  if (!within(out->ratios, out->axis, ex.box * ex.widen)) d.issue = "exit crossing outside the widened face";
  if (in->axis != out->axis || in->sign == out->sign)
    d.issue = "unexpected face pair " + in->face + " -> " + out->face;
  d.r1 = std::abs(num::to_double(in->r));
  d.r2 = std::abs(num::to_double(out->r));
  for (int i = 0; i < 3; ++i) {
    d.ratios1[i] = num::to_double(in->ratios[i]);
    d.ratios2[i] = num::to_double(out->ratios[i]);
    d.exit_position[i] = num::to_double(b.position[i]);
  }
  d.h1 = {in->state[4], in->state[5]};
  d.h2 = {out->state[4], out->state[5]};
  d.complete = d.issue.empty();
  return d;
}

// ---- epsilon sweep ----

template <class T>
struct SweepRow {
  double eps = 0.0;
  BlockResult<T> result;
  std::array<double, 3> position_err{};  // tolerance-halving deltas
  std::array<T, 2> dh_rerun{};
  bool rerun = false;
};

template <class T>
struct SweepTable {
  CollisionOrbits<T> orbits;
  std::vector<SweepRow<T>> rows;
};

// runs f(i) for i in [0, n) on up to `threads` workers; results land in index order
template <class F>
void parallel_for(int n, int threads, F&& f) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(threads);
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += threads) f(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

inline bool is_geometric(const std::vector<double>& eps) {
  if (eps.size() < 2) return false;
  double q = eps[1] / eps[0];
  for (std::size_t i = 1; i < eps.size(); ++i)
    if (std::abs(eps[i] / eps[i - 1] - q) > 1e-9 * q) return false;
  return true;
}

// On a geometric grid the differencing needs eps_{i+k} = q^k eps_i to working precision; the
// double-valued grid carries relative errors of 1e-16, which show up as noise in the h-channel
// once the signal falls below about 1e-20.
template <class T>
std::vector<T> working_grid(const std::vector<double>& eps) {
  std::vector<T> out;
  if (!is_geometric(eps)) {
    for (double e : eps) out.push_back(T(e));
    return out;
  }
  T q = T(eps[1] / eps[0]), e = T(eps[0]);
  for (std::size_t i = 0; i < eps.size(); ++i, e = e * q) out.push_back(e);
  return out;
}

template <class T>
SweepTable<T> epsilon_sweep(const BlockExperiment& ex, const MassParams<T>& p, int threads = 1) {
  ex.validate();
  SweepTable<T> tab;
  tab.orbits = collision_orbits(ex, p);
  const int n = static_cast<int>(ex.eps.size());
  tab.rows.resize(n);
  auto epsT = working_grid<T>(ex.eps);
  parallel_for(n, threads, [&](int i) {
    auto& row = tab.rows[i];
    row.eps = ex.eps[i];
    auto e = entry_point(tab.orbits.entry, epsT[i], ex.direction);
    row.result = block_map(e, ex, p, tab.orbits.exit, ex.integrator);
    row.result.eps = ex.eps[i];
    if (ex.rerun && row.result.ok()) {
      IntegratorConfig half = ex.integrator;
      half.rtol *= 0.5;
      half.atol *= 0.5;
      half.event_tol *= 0.5;
      auto b = block_map(e, ex, p, tab.orbits.exit, half);
      if (b.ok()) {
        row.rerun = true;
        for (int k = 0; k < 3; ++k) row.position_err[k] = std::abs(num::to_double(b.position[k] - row.result.position[k]));
        row.dh_rerun = b.dh;
      }
    }
  });
  return tab;
}

// h-channel signal with the smooth part removed: D_i = sum_k c_k h(eps_{i+k}).
struct ChannelSignal {
  std::vector<double> eps, value, error;
  double gain = 0.0;  // factor multiplying eps^{8/3}
};

template <class T>
ChannelSignal h_channel(const SweepTable<T>& tab, const BlockExperiment& ex, int j) {
  const auto& rows = tab.rows;
  const int m = ex.annihilate;
  ChannelSignal s;
  if (rows.size() < 2) return s;
  std::vector<double> grid;
  for (const auto& r : rows) grid.push_back(r.eps);
  if (!is_geometric(grid)) throw std::invalid_argument("h-channel differencing needs a geometric eps grid");
  double q = rows[1].eps / rows[0].eps;
  auto c = annihilator<T>(q, m);
  s.gain = annihilator_gain(q, m, 8.0 / 3.0);
  for (std::size_t i = 0; i + c.size() <= rows.size(); ++i) {
    T d(0.0), dr(0.0);
    bool ok = true, rer = true;
    for (std::size_t k = 0; k < c.size(); ++k) {
      const auto& r = rows[i + k];
      ok = ok && r.result.ok();
      rer = rer && r.rerun;
      d += c[k] * r.result.dh[j];
      if (r.rerun) dr += c[k] * r.dh_rerun[j];
    }
    if (!ok) continue;
    s.eps.push_back(rows[i].eps);
    s.value.push_back(num::to_double(d));
    s.error.push_back(rer ? std::abs(num::to_double(d - dr)) : 0.0);
  }
  // a single rerun delta can be small by accident; no row is credited with less than the median error
  if (!s.error.empty()) {
    auto e = s.error;
    std::nth_element(e.begin(), e.begin() + e.size() / 2, e.end());
    double floor = e[e.size() / 2];
    for (auto& v : s.error) v = std::max(v, floor);
  }
  return s;
}

struct ChannelFits {
  std::map<std::string, ExponentFit> slopes;
  std::map<std::string, std::string> failures;
  bool exceptional = false;  // |F| below 10x the noise floor
};

template <class T>
ChannelFits fit_channels(const SweepTable<T>& tab, const BlockExperiment& ex) {
  ChannelFits out;
  auto attempt = [&](const std::string& name, const std::vector<double>& x, const std::vector<double>& y,
                     const std::vector<double>& e) {
    try {
      out.slopes[name] = fit_exponent(x, y, e);
    } catch (const std::exception& err) {
      out.failures[name] = err.what();
    }
  };
  for (int j = 0; j < 2; ++j) {
    auto s = h_channel(tab, ex, j);
    attempt("h" + std::to_string(j + 1), s.eps, s.value, s.error);
    if (j == 0) {
      double big = 0, noise = 0;
      for (std::size_t i = 0; i < s.value.size(); ++i) {
        big = std::max(big, std::abs(s.value[i]));
        noise = std::max(noise, s.error[i]);
      }
      out.exceptional = !(big > 10.0 * noise);
    }
  }
  std::vector<double> x, e0;
  std::array<std::vector<double>, 3> pos, perr;
  std::vector<double> r1, b1, d1, g1;
  for (const auto& r : tab.rows) {
    if (!r.result.ok()) continue;
    x.push_back(r.eps);
    for (int k = 0; k < 3; ++k) {
      pos[k].push_back(num::to_double(r.result.position[k]));
      perr[k].push_back(r.rerun ? r.position_err[k] : 0.0);
    }
    auto d = dulac_decompose(r.result, ex);
    r1.push_back(d.complete ? d.r1 : std::nan(""));
    b1.push_back(d.complete ? d.ratios1[0] : std::nan(""));
    d1.push_back(d.complete ? d.ratios1[2] : std::nan(""));
  }
  for (int k = 0; k < 3; ++k)
    if (ex.direction[k] != 0.0) attempt(std::string("position_") + axis_name(k), x, pos[k], perr[k]);
  attempt("D1_r", x, r1, {});
  if (ex.direction[0] != 0.0) attempt("D1_beta", x, b1, {});
  if (ex.direction[2] != 0.0) attempt("D1_delta", x, d1, {});
  return out;
}

// T deviation of the fiber across the collision manifold: |h_j(exit face) - h_j(entry face)| against r1
template <class T>
std::pair<std::vector<double>, std::vector<double>> transition_deviation(const SweepTable<T>& tab,
                                                                         const BlockExperiment& ex, int j) {
  std::vector<double> r, dev;
  for (const auto& row : tab.rows) {
    auto d = dulac_decompose(row.result, ex);
    if (!d.complete) continue;
    r.push_back(d.r1);
    dev.push_back(std::abs(num::to_double(d.h2[j] - d.h1[j])));
  }
  return {r, dev};
}

// ---- drift order of the kappa integrals ----

struct KappaDriftRow {
  double eps = 0.0;
  double leading = 0.0, full = 0.0;
};

// Trajectories of X from eps * zeta_hat over a tau-span span/eps (the leading field is quadratic, so
// orbits at scale eps are similar over this span). Drift is the largest deviation along the orbit.
template <class T>
std::vector<KappaDriftRow> kappa_drift(const GLCState<T>& base, const MassParams<T>& p, const std::vector<double>& eps,
                                       double span, const IntegratorConfig& cfg_in) {
  std::vector<KappaDriftRow> rows;
  for (double e : eps) {
    auto s = base;
    for (int j = 0; j < 2; ++j) s.zeta[j] = base.zeta[j] * T(e);
    s.refresh();
    IntegratorConfig cfg = cfg_in;
    cfg.tau_max = span / e;
    IntegrateOptions<T, kGLCDim> opt;
    opt.keep_segments = false;
    T k0 = kappa_leading(s), kf = kappa_full(s);
    double dl = 0.0, df = 0.0;
    opt.project = [&](GLCVec<T>& v) {
      auto g = glc_state(v, false);
      dl = std::max(dl, std::abs(num::to_double(kappa_leading(g) - k0)));
      df = std::max(df, std::abs(num::to_double(kappa_full(g) - kf)));
    };
    opt.keep_samples = false;
    auto tr = integrate_glc(s, p, Field::X, cfg, opt);
    if (!tr.ok()) throw ExperimentError(std::string("kappa drift run failed: ") + to_string(tr.reason) + " " + tr.detail);
    rows.push_back({e, dl, df});
  }
  return rows;
}

// ---- check suites shared by the CLI and the acceptance run ----

inline C<double> sample_unit(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> th(-M_PI, M_PI);
  double t = th(rng);
  return {std::cos(t), std::sin(t)};
}

inline MassParams<double> sample_masses(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> m(0.5, 2.0);
  double a = m(rng), b = m(rng), c = m(rng), d = m(rng);
  return derive_params(a, b, c, d);
}

// |zeta_j| in [zmax/20, zmax], |h_j| <= hmax, inside the GLC neighbourhood
inline GLCState<double> sample_glc(std::mt19937_64& rng, double zmax, double hmax) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    C<double> z1(zmax * u(rng), zmax * u(rng)), z2(zmax * u(rng), zmax * u(rng));
    if (z1.abs() > zmax || z2.abs() > zmax || z1.abs() < 0.05 * zmax || z2.abs() < 0.05 * zmax) continue;
    double h1 = hmax * u(rng), h2 = hmax * u(rng);
    if (1.0 + 4.0 * h1 * z1.norm2() <= 0.1 || 1.0 + 4.0 * h2 * z2.norm2() <= 0.1) continue;
    C<double> x(1.0 + 0.2 * u(rng), 0.2 * u(rng)), y(0.3 * u(rng), 0.3 * u(rng));
    auto g1 = sample_unit(rng), g2 = sample_unit(rng);
    return make_glc(z1, z2, h1, h2, g1, g2, x, y);
  }
}

// unbound binaries far from each other, so a tau-span of order 10 stays in the chart
inline GLCState<double> sample_drift_state(std::mt19937_64& rng, Field field) {
  double zmax = field == Field::X ? 0.06 : 0.3;
  for (;;) {
    auto g = sample_glc(rng, zmax, 0.1);
    if (std::abs(g.L(0)) < zmax / 6 || std::abs(g.L(1)) < zmax / 6) continue;
    g.h = {std::abs(g.h[0]), std::abs(g.h[1])};
    g.x = g.x * 20.0;
    g.refresh();
    return g;
  }
}

struct ConservationDrift {
  double H = 0.0, angular_momentum = 0.0;
  bool ok = false;
  std::string detail;
};

template <class T>
ConservationDrift conservation_drift(const GLCState<T>& g, const MassParams<T>& p, Field field, const IntegratorConfig& cfg) {
  ConservationDrift d;
  IntegrateOptions<T, kGLCDim> opt;
  opt.keep_segments = false;
  opt.keep_samples = false;
  auto tr = integrate_glc(g, p, field, cfg, opt);
  d.ok = tr.ok();
  d.detail = tr.ok() ? "" : std::string(to_string(tr.reason)) + " " + tr.detail;
  auto e = glc_state(tr.back());
  auto rel = [](const T& a, const T& b) {
    double x = num::to_double(a), y = num::to_double(b);
    return std::abs(x - y) / std::max(1.0, std::abs(x));
  };
  d.H = rel(hamiltonian(g, p), hamiltonian(e, p));
  d.angular_momentum = rel(total_angular_momentum(g, p), total_angular_momentum(e, p));
  return d;
}

struct KeplerDrift {
  double h = 0.0, L = 0.0, y = 0.0;
  bool ok = false;
};

template <class T>
KeplerDrift kepler_drift(const GLCState<T>& g, const MassParams<T>& p, const IntegratorConfig& cfg) {
  KeplerDrift d;
  IntegrateOptions<T, kGLCDim> opt;
  opt.keep_segments = false;
  opt.keep_samples = false;
  auto tr = integrate_glc(g, p, Field::XKepler, cfg, opt);
  d.ok = tr.ok();
  auto e = glc_state(tr.back());
  for (int j = 0; j < 2; ++j) {
    d.h = std::max(d.h, std::abs(num::to_double(e.h[j] - g.h[j])));
    d.L = std::max(d.L, std::abs(num::to_double(e.L(j) - g.L(j))));
  }
  d.y = num::to_double((e.y - g.y).abs());
  return d;
}

// error exponent of the degree-8 potential expansion under zeta -> s zeta, s in [1e-3, 1e-1],
// evaluated in double-double; the base state has |Q_j / x| of order one at s = 1
inline ExponentFit kseries_exponent(GLCState<double> g, const MassParams<double>& p) {
  for (int j = 0; j < 2; ++j) g.zeta[j] = g.zeta[j] * (2.0 / (g.zeta[j].abs() * std::sqrt(p.lam(j + 1))));
  g.refresh();
  auto pd = p.as<dd>();
  std::vector<double> s, err;
  for (double v : geometric_grid(1e-3, 1e-1, 9)) {
    auto t = g;
    t.zeta = {g.zeta[0] * v, g.zeta[1] * v};
    t.refresh();
    auto td = t.as<dd>();
    s.push_back(v);
    err.push_back(std::abs(num::to_double(K_series(td, pd, 8) - K_exact(td, pd))));
  }
  return fit_exponent(s, err);
}

struct ManifoldDrift {
  double kappa1 = 0.0, kappa2 = 0.0;
  int switches = 0;
  std::size_t samples = 0;
  std::string reason;
};

// largest chordal deviation of kappa1, kappa2 from their start values along an orbit on C
template <class T>
ManifoldDrift collision_manifold_drift(const ChartPoint<T>& start, const MassParams<T>& p, NearCollisionConfig cfg) {
  ManifoldDrift d;
  cfg.stop_on_exit = false;
  auto k1 = kappa1(start), k2 = kappa2(start);
  auto tr = integrate_near_collision(start, p, cfg);
  d.switches = static_cast<int>(tr.switches.size());
  d.samples = tr.samples.size();
  d.reason = to_string(tr.reason);
  for (const auto& sm : tr.samples) {
    d.kappa1 = std::max(d.kappa1, chordal_distance(kappa1_hom(sm.point.homogeneous()), k1));
    d.kappa2 = std::max(d.kappa2, chordal_distance(kappa2_hom(sm.point.homogeneous()), k2));
  }
  return d;
}

template <class T>
ChartPoint<T> sample_on_C(std::mt19937_64& rng, Chart chart) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ChartPoint<T> c;
  c.chart = chart;
  c.r = T(0.0);
  for (auto& v : c.ratios) v = T(u(rng));
  c.fiber.h = {T(0.5 * u(rng)), T(0.5 * u(rng))};
  auto g1 = sample_unit(rng), g2 = sample_unit(rng);
  c.fiber.Gamma = {C<T>(T(g1.re), T(g1.im)), C<T>(T(g2.re), T(g2.im))};
  c.fiber.x = C<T>(T(2.0 + u(rng)), T(u(rng)));
  c.fiber.y = C<T>(T(0.5 * u(rng)), T(0.5 * u(rng)));
  return c;
}

}  // namespace sbc
