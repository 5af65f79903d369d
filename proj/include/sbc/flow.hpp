#pragma once

#include <algorithm>
#include <cstdio>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dop853_tableau.hpp"
#include "dynamics.hpp"

namespace sbc {

struct IntegratorConfig {
  double rtol = 1e-12;
  double atol = 1e-14;
  double hmax = 0.0;  // 0: unbounded
  double h0 = 0.0;    // 0: automatic
  Precision precision = Precision::standard;
  double tau_max = 1e3;
  double event_tol = 1e-13;
  long max_steps = 2000000;

  void validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw std::invalid_argument("integrator tolerances must be positive");
    if (!(event_tol > 0.0)) throw std::invalid_argument("event tolerance must be positive");
    if (event_tol > std::max(rtol, atol)) throw std::invalid_argument("event tolerance must not exceed the step tolerance");
    if (!(tau_max > 0.0)) throw std::invalid_argument("tau span must be positive");
  }
};

namespace dop853 {

template <class T>
struct Tableau {
  T c[17]{};
  T a[17][17]{};
  T b[17]{};
  T bhh[17]{};
  T er[17]{};
  T d[8][17]{};

  static const Tableau& get() {
    static const Tableau tab = [] {
      Tableau t;
      for (const auto& e : dop853::c) t.c[e.i] = num::from_string<T>(e.v);
      for (const auto& e : dop853::a) t.a[e.i][e.j] = num::from_string<T>(e.v);
      for (const auto& e : dop853::b) t.b[e.i] = num::from_string<T>(e.v);
      for (const auto& e : dop853::bhh) t.bhh[e.i] = num::from_string<T>(e.v);
      for (const auto& e : dop853::er) t.er[e.i] = num::from_string<T>(e.v);
      for (const auto& e : dop853::d) t.d[e.i][e.j] = num::from_string<T>(e.v);
      return t;
    }();
    return tab;
  }
};

}  // namespace dop853

// One accepted step with its 7th-order continuous extension on [t0, t0 + h].
template <class T, std::size_t N>
struct Segment {
  using Vec = std::array<T, N>;
  T t0{}, h{};
  std::array<Vec, 8> rc{};

  Vec eval(const T& t) const {
    T s = (t - t0) / h, s1 = 1.0 - s;
    Vec y;
    for (std::size_t i = 0; i < N; ++i)
      y[i] = rc[0][i] +
             s * (rc[1][i] + s1 * (rc[2][i] + s * (rc[3][i] + s1 * (rc[4][i] + s * (rc[5][i] + s1 * (rc[6][i] + s * rc[7][i]))))));
    return y;
  }
  T t1() const { return t0 + h; }
};

template <class T, std::size_t N>
struct Event {
  using Vec = std::array<T, N>;
  std::string name;
  std::function<T(const Vec&)> g;
  int direction = 0;  // +1: g increasing through 0, -1: decreasing, 0: either
  bool terminal = true;
  double min_slope = 0.0;  // |dg/dtau| below this at the root -> tangential
  std::function<bool(const Vec&)> accept;  // roots failing this are ignored
};

template <class T, std::size_t N>
struct Crossing {
  std::array<T, N> y{};
  T t{};
  int event = -1;
  std::string name;
  double residual = 0.0;
  double slope = 0.0;
  bool tangential = false;
};

enum class StopReason { tau_max, event, domain_exit, step_underflow, max_steps, nonfinite };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::tau_max: return "tau_max";
    case StopReason::event: return "event";
    case StopReason::domain_exit: return "domain_exit";
    case StopReason::step_underflow: return "step_underflow";
    case StopReason::max_steps: return "max_steps";
    case StopReason::nonfinite: return "nonfinite";
  }
  return "?";
}

template <class T, std::size_t N>
struct Trajectory {
  using Vec = std::array<T, N>;
  std::vector<T> t;
  std::vector<Vec> y;
  std::vector<Segment<T, N>> segments;
  std::vector<Crossing<T, N>> crossings;
  StopReason reason = StopReason::tau_max;
  std::string detail;
  long accepted = 0, rejected = 0, evaluations = 0;

  const Vec& back() const { return y.back(); }
  bool ok() const { return reason == StopReason::tau_max || reason == StopReason::event; }

  Vec dense(const T& tq) const {
    if (segments.empty()) return y.front();
    auto it = std::lower_bound(segments.begin(), segments.end(), tq,
                               [](const Segment<T, N>& s, const T& v) { return s.t1() < v; });
    if (it == segments.end()) it = std::prev(segments.end());
    return it->eval(tq);
  }
};

template <class T, std::size_t N>
struct IntegrateOptions {
  using Vec = std::array<T, N>;
  std::vector<Event<T, N>> events;
  // returns a message when the state has left the admissible domain
  std::function<std::optional<std::string>(const Vec&)> domain;
  // applied to every accepted state (e.g. projection back to a constraint)
  std::function<void(Vec&)> project;
  bool keep_segments = true;
  bool keep_samples = true;
  int direction = +1;
};

namespace detail {

template <class T>
double dbl(const T& v) { return num::to_double(v); }

}  // namespace detail

// Adaptive Dormand-Prince 8(5,3) with PI step control and dense output.
template <class T, std::size_t N, class F>
Trajectory<T, N> integrate(F&& f, const std::array<T, N>& y0, const IntegratorConfig& cfg,
                           const IntegrateOptions<T, N>& opt = {}) {
  using Vec = std::array<T, N>;
  cfg.validate();
  const auto& tab = dop853::Tableau<T>::get();
  Trajectory<T, N> tr;
  const double dir = opt.direction >= 0 ? 1.0 : -1.0;
  const double uround = num::epsilon<T>();
  const double hmax = cfg.hmax > 0.0 ? cfg.hmax : cfg.tau_max;
  const double beta = 0.04, expo1 = 1.0 / 8.0 - beta * 0.2, safe = 0.9;
  const double facc1 = 1.0 / 0.333, facc2 = 1.0 / 6.0;

  T t(0.0);
  Vec y = y0;
  std::array<Vec, 17> k;
  // trial stages that leave the field's domain poison the step, which is then rejected
  auto call = [&](const Vec& yy, Vec& out) {
    ++tr.evaluations;
    try {
      f(yy, out);
    } catch (const std::domain_error&) {
      out.fill(T(std::numeric_limits<double>::quiet_NaN()));
    } catch (const std::runtime_error&) {
      out.fill(T(std::numeric_limits<double>::quiet_NaN()));
    }
  };
  tr.t.push_back(t);
  tr.y.push_back(y);
  f(y, k[1]);
  ++tr.evaluations;

  auto scale = [&](std::size_t i, const Vec& a, const Vec& b) {
    return cfg.atol + cfg.rtol * std::max(std::abs(detail::dbl(a[i])), std::abs(detail::dbl(b[i])));
  };

  double h;
  if (cfg.h0 > 0.0) {
    h = cfg.h0;
  } else {
    double dnf = 0, dny = 0;
    for (std::size_t i = 0; i < N; ++i) {
      double sk = cfg.atol + cfg.rtol * std::abs(detail::dbl(y[i]));
      dnf += std::pow(detail::dbl(k[1][i]) / sk, 2);
      dny += std::pow(detail::dbl(y[i]) / sk, 2);
    }
    h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
    h = std::min(h, hmax);
    Vec y1;
    for (std::size_t i = 0; i < N; ++i) y1[i] = y[i] + (dir * h) * k[1][i];
    Vec k2;
    call(y1, k2);
    for (auto& v : k2)
      if (!num::finite(v)) v = T(0.0);
    double der2 = 0;
    for (std::size_t i = 0; i < N; ++i) {
      double sk = cfg.atol + cfg.rtol * std::abs(detail::dbl(y[i]));
      der2 += std::pow(detail::dbl(k2[i] - k[1][i]) / sk, 2);
    }
    der2 = std::sqrt(der2) / h;
    double der12 = std::max(der2, std::sqrt(dnf));
    double h1 = der12 <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 0.125);
    h = std::min({100.0 * h, h1, hmax});
  }

  std::vector<double> gprev(opt.events.size());
  for (std::size_t e = 0; e < opt.events.size(); ++e) gprev[e] = detail::dbl(opt.events[e].g(y));

  double facold = 1e-4;
  bool reject = false, last = false;
  Vec ynew, ytmp, bsum;
  for (;;) {
    if (tr.accepted + tr.rejected >= cfg.max_steps) {
      tr.reason = StopReason::max_steps;
      break;
    }
    double tabs = std::abs(detail::dbl(t));
    if (0.1 * h <= tabs * uround) {
      tr.reason = StopReason::step_underflow;
      tr.detail = "step size underflow at tau = " + std::to_string(tabs);
      break;
    }
    if (tabs + 1.01 * h >= cfg.tau_max) {
      h = cfg.tau_max - tabs;
      last = true;
    }
    T hh = last ? T(dir * cfg.tau_max) - t : T(dir * h);

    for (int s = 2; s <= 12; ++s) {
      for (std::size_t i = 0; i < N; ++i) {
        T acc(0.0);
        for (int j = 1; j < s; ++j)
          if (tab.a[s][j] != T(0.0)) acc += tab.a[s][j] * k[j][i];
        ytmp[i] = y[i] + hh * acc;
      }
      call(ytmp, k[s]);
    }
    for (std::size_t i = 0; i < N; ++i) {
      T acc(0.0);
      for (int j : {1, 6, 7, 8, 9, 10, 11, 12}) acc += tab.b[j] * k[j][i];
      bsum[i] = acc;
      ynew[i] = y[i] + hh * acc;
    }
    bool finite = true;
    for (std::size_t i = 0; i < N; ++i) finite = finite && num::finite(ynew[i]);

    double err = 0, err2 = 0;
    if (finite) {
      for (std::size_t i = 0; i < N; ++i) {
        double sk = 1.0 / scale(i, y, ynew);
        T e3 = bsum[i] - tab.bhh[1] * k[1][i] - tab.bhh[9] * k[9][i] - tab.bhh[12] * k[12][i];
        T e5(0.0);
        for (int j : {1, 6, 7, 8, 9, 10, 11, 12}) e5 += tab.er[j] * k[j][i];
        double q3 = detail::dbl(e3) * sk, q5 = detail::dbl(e5) * sk;
        err2 += q3 * q3;
        err += q5 * q5;
      }
      double deno = err + 0.01 * err2;
      err = h * err * std::sqrt(1.0 / (deno <= 0.0 ? double(N) : deno * N));
    } else {
      err = 1e10;
    }

    double fac11 = std::pow(std::max(err, 1e-300), expo1);
    double fac = fac11 * std::pow(facold, -beta);
    fac = std::max(facc2, std::min(facc1, fac / safe));
    double hnew = h / fac;

    if (err <= 1.0 && finite) {
      facold = std::max(err, 1e-4);
      ++tr.accepted;
      call(ynew, k[13]);

      Segment<T, N> seg;
      seg.t0 = t;
      seg.h = hh;
      if (opt.keep_segments || !opt.events.empty()) {
        for (std::size_t i = 0; i < N; ++i) {
          seg.rc[0][i] = y[i];
          T ydiff = ynew[i] - y[i];
          seg.rc[1][i] = ydiff;
          T bspl = hh * k[1][i] - ydiff;
          seg.rc[2][i] = bspl;
          seg.rc[3][i] = ydiff - hh * k[13][i] - bspl;
        }
        for (int s = 14; s <= 16; ++s) {
          for (std::size_t i = 0; i < N; ++i) {
            T acc(0.0);
            for (int j = 1; j < s; ++j)
              if (tab.a[s][j] != T(0.0)) acc += tab.a[s][j] * k[j][i];
            ytmp[i] = y[i] + hh * acc;
          }
          call(ytmp, k[s]);
        }
        for (int r = 4; r <= 7; ++r)
          for (std::size_t i = 0; i < N; ++i) {
            T acc(0.0);
            for (int j = 1; j <= 16; ++j)
              if (tab.d[r][j] != T(0.0)) acc += tab.d[r][j] * k[j][i];
            seg.rc[r][i] = hh * acc;
          }
      }

      T tnew = t + hh;
      if (opt.project) opt.project(ynew);

      // events on the dense output of this step
      int fired = -1;
      T tfire{};
      Vec yfire{};
      for (std::size_t e = 0; e < opt.events.size(); ++e) {
        const auto& ev = opt.events[e];
        double g0 = gprev[e], g1 = detail::dbl(ev.g(ynew));
        gprev[e] = g1;
        bool up = g0 < 0.0 && g1 >= 0.0, down = g0 > 0.0 && g1 <= 0.0;
        if (!((up && ev.direction >= 0) || (down && ev.direction <= 0))) continue;
        T lo = t, hi = tnew;
        double glo = g0;
        T tm = hi;
        Vec ym = ynew;
        double gm = g1;
        for (int it = 0; it < 200; ++it) {
          tm = 0.5 * (lo + hi);
          ym = seg.eval(tm);
          gm = detail::dbl(ev.g(ym));
          if (std::abs(gm) < cfg.event_tol * 1e-3) break;
          if ((gm < 0.0) == (glo < 0.0)) {
            lo = tm;
            glo = gm;
          } else {
            hi = tm;
          }
          if (std::abs(detail::dbl(hi - lo)) <= std::abs(detail::dbl(tm)) * uround * 4) break;
        }
        // one Newton polish with a central-difference slope of g along the dense output
        T dt = T(std::max(std::abs(h) * 1e-4, 1e-12));
        double gp = detail::dbl(ev.g(seg.eval(tm + dt))), gmn = detail::dbl(ev.g(seg.eval(tm - dt)));
        double slope = (gp - gmn) / (2.0 * detail::dbl(dt));
        if (slope != 0.0 && std::isfinite(slope)) {
          T tn = tm - T(gm / slope);
          if ((tn - t) * dir >= T(0.0) && (tnew - tn) * dir >= T(0.0)) {
            Vec yn = seg.eval(tn);
            double gn = detail::dbl(ev.g(yn));
            if (std::abs(gn) <= std::abs(gm)) {
              tm = tn;
              ym = yn;
              gm = gn;
            }
          }
        }
        if (ev.accept && !ev.accept(ym)) continue;
        Crossing<T, N> cr;
        cr.y = ym;
        cr.t = tm;
        cr.event = static_cast<int>(e);
        cr.name = ev.name;
        cr.residual = std::abs(gm);
        cr.slope = slope * dir;
        cr.tangential = std::abs(slope) <= ev.min_slope;
        tr.crossings.push_back(cr);
        if (ev.terminal && (fired < 0 || (tm - tfire) * dir < T(0.0))) {
          fired = static_cast<int>(e);
          tfire = tm;
          yfire = ym;
        }
      }

      if (opt.keep_segments) tr.segments.push_back(seg);
      if (fired >= 0) {
        // drop non-terminal crossings located after the terminal one
        std::erase_if(tr.crossings, [&](const Crossing<T, N>& c) { return (c.t - tfire) * dir > T(0.0); });
        t = tfire;
        y = yfire;
        if (opt.keep_samples) {
          tr.t.push_back(t);
          tr.y.push_back(y);
        }
        tr.reason = StopReason::event;
        tr.detail = opt.events[fired].name;
        for (const auto& c : tr.crossings)
          if (c.event == fired && c.t == tfire && c.tangential) tr.detail += " (tangential)";
        break;
      }

      t = tnew;
      y = ynew;
      k[1] = k[13];
      if (opt.keep_samples) {
        tr.t.push_back(t);
        tr.y.push_back(y);
      }
      if (opt.domain) {
        if (auto msg = opt.domain(y)) {
          tr.reason = StopReason::domain_exit;
          tr.detail = *msg;
          break;
        }
      }
      if (last) {
        tr.reason = StopReason::tau_max;
        break;
      }
      if (std::abs(hnew) > hmax) hnew = hmax;
      if (reject) hnew = std::min(hnew, h);
      reject = false;
    } else {
      if (!finite) hnew = h * 0.1;
      else hnew = h / std::min(facc1, fac11 / safe);
      reject = true;
      if (tr.accepted >= 1) ++tr.rejected;
      last = false;
    }
    h = hnew;
  }
  if (!opt.keep_samples) {
    tr.t.push_back(t);
    tr.y.push_back(y);
  }
  return tr;
}

// GLC state plus accumulated physical time t as the last component.
constexpr std::size_t kGLCDim = 15;
template <class T>
using GLCVec = std::array<T, kGLCDim>;
template <class T>
using GLCTrajectory = Trajectory<T, kGLCDim>;

template <class T>
GLCVec<T> glc_augment(const GLCState<T>& s, const T& t = T(0.0)) {
  GLCVec<T> v;
  auto a = s.pack();
  std::copy(a.begin(), a.end(), v.begin());
  v[14] = t;
  return v;
}

template <class T>
GLCState<T> glc_state(const GLCVec<T>& v, bool refresh = true) {
  typename GLCState<T>::Vec a;
  std::copy(v.begin(), v.begin() + 14, a.begin());
  return GLCState<T>::unpack(a, refresh);
}

// dt/dtau = |zeta1|^2 |zeta2|^2 for the rescaled fields; X_H already runs in t.
template <class T>
void glc_augmented_rhs(const GLCVec<T>& v, GLCVec<T>& out, const MassParams<T>& p, Field field) {
  typename GLCState<T>::Vec a, d;
  std::copy(v.begin(), v.begin() + 14, a.begin());
  if (field == Field::XH || field == Field::XHKepler) {
    if ((a[0] * a[0] + a[1] * a[1]) == T(0.0) || (a[2] * a[2] + a[3] * a[3]) == T(0.0))
      throw DomainError("X_H is singular at zeta_j = 0");
  }
  detail::glc_rhs(a, d, p, field);
  std::copy(d.begin(), d.end(), out.begin());
  out[14] = (field == Field::XH || field == Field::XHKepler) ? T(1.0) : time_rescale<T>(a);
}

template <class T>
void renormalize_gamma(GLCVec<T>& v) {
  for (int j = 0; j < 2; ++j) {
    T n = num::sqrt(v[6 + 2 * j] * v[6 + 2 * j] + v[7 + 2 * j] * v[7 + 2 * j]);
    v[6 + 2 * j] = v[6 + 2 * j] / n;
    v[7 + 2 * j] = v[7 + 2 * j] / n;
  }
}

// Working neighbourhood of the GLC chart: away from the branch point of U and not escaped.
struct GLCLimits {
  double min_disc = 1e-3;
  double max_zeta = 1e3;
};

template <class T>
std::optional<std::string> glc_domain_check(const GLCVec<T>& v, const GLCLimits& lim = {}) {
  for (const auto& c : v)
    if (!num::finite(c)) return "non-finite state";
  for (int j = 0; j < 2; ++j) {
    double n = num::to_double(v[2 * j] * v[2 * j] + v[2 * j + 1] * v[2 * j + 1]);
    double disc = 1.0 + 4.0 * num::to_double(v[4 + j]) * n;
    if (!(disc > lim.min_disc))
      return "left the GLC neighbourhood: 1 + 4 h |zeta|^2 = " + std::to_string(disc) + " (binary " + std::to_string(j + 1) + ")";
    if (n > lim.max_zeta * lim.max_zeta) return "escaped: |zeta_" + std::to_string(j + 1) + "| above limit";
  }
  return std::nullopt;
}

template <class T>
GLCTrajectory<T> integrate_glc(const GLCState<T>& start, const MassParams<T>& p, Field field,
                               const IntegratorConfig& cfg, IntegrateOptions<T, kGLCDim> opt = {}) {
  if (auto msg = glc_domain_check(glc_augment(start), GLCLimits{0.0, 1e300})) throw DomainError("start state: " + *msg);
  auto user_domain = opt.domain;
  opt.domain = [user_domain](const GLCVec<T>& v) -> std::optional<std::string> {
    if (auto m = glc_domain_check(v)) return m;
    if (user_domain) return user_domain(v);
    return std::nullopt;
  };
  auto user_project = opt.project;
  opt.project = [user_project](GLCVec<T>& v) {
    renormalize_gamma(v);
    if (user_project) user_project(v);
  };
  auto f = [&p, field](const GLCVec<T>& v, GLCVec<T>& out) { glc_augmented_rhs(v, out, p, field); };
  auto tr = integrate(f, glc_augment(start), cfg, opt);
  if (tr.reason == StopReason::step_underflow || tr.reason == StopReason::max_steps) {
    // U has a square-root branch point on 1 + 4 h |zeta|^2 = 0; steps collapse on approach
    const auto& v = tr.back();
    for (int j = 0; j < 2; ++j) {
      double disc = num::to_double(1.0 + 4.0 * v[4 + j] * (v[2 * j] * v[2 * j] + v[2 * j + 1] * v[2 * j + 1]));
      if (disc < 1e-2) {
        tr.reason = StopReason::domain_exit;
        tr.detail = "approached the GLC neighbourhood boundary 1 + 4 h |zeta|^2 = 0 (binary " + std::to_string(j + 1) + ")";
      }
    }
  }
  return tr;
}

class SectionTimeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransversalityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T, std::size_t N>
struct Section {
  std::string id;
  std::function<T(const std::array<T, N>&)> g;
  int orientation = 0;
  double min_slope = 1e-10;
  // optional validity box; crossings outside it are ignored
  std::function<bool(const std::array<T, N>&)> valid;
};

// Integrates until the first valid crossing of the section.
template <class T, std::size_t N, class F>
Crossing<T, N> integrate_to_section(F&& f, const std::array<T, N>& start, const Section<T, N>& sec,
                                    const IntegratorConfig& cfg, IntegrateOptions<T, N> opt = {}) {
  Event<T, N> ev;
  ev.name = sec.id;
  ev.g = sec.g;
  ev.direction = sec.orientation;
  ev.terminal = true;
  ev.min_slope = sec.min_slope;
  ev.accept = sec.valid;
  opt.events.push_back(ev);
  opt.keep_samples = false;
  opt.keep_segments = false;
  auto tr = integrate(std::forward<F>(f), start, cfg, opt);
  int id = static_cast<int>(opt.events.size()) - 1;
  for (const auto& c : tr.crossings) {
    if (c.event != id) continue;
    if (c.tangential) throw TransversalityError("tangential crossing of section " + sec.id);
    return c;
  }
  throw SectionTimeout("no crossing of section " + sec.id + " (" + to_string(tr.reason) + ": " + tr.detail + ")");
}

// CSV: tau, t, then the 14 GLC components.
template <class T>
std::string trajectory_csv(const GLCTrajectory<T>& tr) {
  std::string out = "tau,t,zeta1_re,zeta1_im,zeta2_re,zeta2_im,h1,h2,Gamma1_re,Gamma1_im,Gamma2_re,Gamma2_im,x_re,x_im,y_re,y_im\n";
  char buf[64];
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", num::to_double(tr.t[i]));
    out += buf;
    std::snprintf(buf, sizeof buf, ",%.17g", num::to_double(tr.y[i][14]));
    out += buf;
    for (int k = 0; k < 14; ++k) {
      std::snprintf(buf, sizeof buf, ",%.17g", num::to_double(tr.y[i][k]));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace sbc
