#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "coords.hpp"

namespace sbc {

class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Coupling potential K^ as a function of the physical separations.
// grad holds dK/dQ1, dK/dQ2 (holomorphic Wirtinger) and dK/d(conj x).
template <class T>
struct KGrad {
  T K{};
  C<T> dQ1{}, dQ2{}, dxbar{};
};

template <class T>
KGrad<T> coupling(const C<T>& Q1, const C<T>& Q2, const C<T>& x, const MassParams<T>& p,
                  bool with_grad = true) {
  const std::array<T, 4> d{p.d1, p.d2, p.d3, p.d4};
  const std::array<T, 4> al{p.c2, p.c2, -p.c1, -p.c1};
  const std::array<T, 4> be{-p.c4, p.c3, -p.c4, p.c3};
  KGrad<T> g;
  for (int i = 0; i < 4; ++i) {
    C<T> w = x + Q1 * al[i] + Q2 * be[i];
    T n2 = w.norm2();
    if (!(n2 > T(0.0))) throw SingularityError("coupling potential: vanishing cross-binary distance");
    T inv = 1.0 / num::sqrt(n2);
    g.K += d[i] * inv;
    if (with_grad) {
      T f = -0.5 * d[i] * inv * inv * inv;
      C<T> wb = w.conj() * f;
      g.dQ1 += wb * al[i];
      g.dQ2 += wb * be[i];
      g.dxbar += w * f;
    }
  }
  return g;
}

template <class T>
T K_cartesian(const CartesianState<T>& s, const MassParams<T>& p) {
  return coupling(s.Q[0], s.Q[1], s.x, p, false).K;
}

template <class T>
T K_exact(const GLCState<T>& s, const MassParams<T>& p) {
  auto Q = separations(s, p);
  return coupling(Q[0], Q[1], s.x, p, false).K;
}

enum class WKind { W2, W3, W4, Wc };

// Real values of the homogeneous polynomials, written as sums of conjugate pairs.
template <class T>
T W2(const C<T>& Q) {
  return 6.0 * (Q * Q).re + 2.0 * Q.norm2();
}
template <class T>
T W3(const C<T>& Q) {
  return 10.0 * (Q * Q * Q).re + 6.0 * Q.norm2() * Q.re;
}
template <class T>
T W4(const C<T>& Q) {
  C<T> q2 = Q * Q;
  T n = Q.norm2();
  return 70.0 * (q2 * q2).re + 40.0 * n * q2.re + 18.0 * n * n;
}
template <class T>
T Wc(const C<T>& Q1, const C<T>& Q2) {
  C<T> a = Q1 * Q1, b = Q2 * Q2;
  T n1 = Q1.norm2(), n2 = Q2.norm2();
  return 70.0 * (a * b).re + 20.0 * n1 * b.re + 20.0 * n2 * a.re + 6.0 * (a * b.conj()).re + 12.0 * n1 * n2;
}

template <class T>
T eval_W(WKind k, const C<T>& Q, const C<T>& Q2 = C<T>()) {
  switch (k) {
    case WKind::W2: return W2(Q);
    case WKind::W3: return W3(Q);
    case WKind::W4: return W4(Q);
    case WKind::Wc: return Wc(Q, Q2);
  }
  return T(0.0);
}

class UnsupportedOrder : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Truncated expansion in xi_j = Q_j / x; degree counts powers of zeta (Q ~ zeta^2).
template <class T>
T K_series_Q(const C<T>& Q1, const C<T>& Q2, const C<T>& x, const MassParams<T>& p, int degree) {
  if (degree != 4 && degree != 6 && degree != 8) throw UnsupportedOrder("K_series: degree must be 4, 6 or 8");
  C<T> q1 = Q1 / x, q2 = Q2 / x;
  T acc = p.b0 + p.b12 * W2(q1) + p.b22 * W2(q2);
  if (degree >= 6) acc += p.b13 * W3(q1) + p.b23 * W3(q2);
  if (degree >= 8) acc += p.b14 * W4(q1) + p.b24 * W4(q2) + p.bc * Wc(q1, q2);
  return acc / x.abs();
}

template <class T>
T K_series(const GLCState<T>& s, const MassParams<T>& p, int degree) {
  auto Q = separations(s, p);
  return K_series_Q(Q[0], Q[1], s.x, p, degree);
}

// Residuals of the three partial-derivative relations, derivatives by
// 4th-order central differences of K_exact at fixed (h, x).
//   r1 = |Re(zeta dK/dzeta)|
//   r2 = |Gamma dK/dz - U dK/dzeta|,  z = zeta Gamma / U  (K through z only)
//   r3 = |Gamma dK/dGamma - 2 zeta dK/dzeta|, Gamma dK/dGamma = -i dK/dtheta on |Gamma| = 1
struct PartialResiduals {
  std::array<double, 2> r1{}, r2{}, r3{};
  double max() const {
    double m = 0.0;
    for (int j = 0; j < 2; ++j) m = std::max({m, r1[j], r2[j], r3[j]});
    return m;
  }
};

namespace detail {

template <class T, class F>
T central4(F&& f, const T& step) {
  return (f(-2.0 * step) - 8.0 * f(-step) + 8.0 * f(step) - f(2.0 * step)) / (12.0 * step);
}

}  // namespace detail

template <class T>
PartialResiduals check_partial_relations(const GLCState<T>& s, const MassParams<T>& p) {
  PartialResiduals out;
  const double eps = num::epsilon<T>();
  for (int j = 0; j < 2; ++j) {
    double scale = std::max(1.0, num::to_double(s.zeta[j].abs()));
    T hs = T(std::pow(eps, 0.2) * scale);
    auto Kz = [&](const C<T>& dz) {
      GLCState<T> t = s;
      t.zeta[j] = s.zeta[j] + dz;
      t.refresh();
      return K_exact(t, p);
    };
    T dI = detail::central4([&](T e) { return Kz(C<T>(e, T(0.0))); }, hs);
    T dL = detail::central4([&](T e) { return Kz(C<T>(T(0.0), e)); }, hs);
    C<T> dzeta(dI * 0.5, -dL * 0.5);

    // K as a function of z_j with the other binary frozen
    auto Q = separations(s, p);
    auto Kzz = [&](const C<T>& dz) {
      C<T> z = s.zeta[j] * s.Gamma[j] / s.U[j] + dz;
      std::array<C<T>, 2> QQ = Q;
      QQ[j] = z * z * p.lam(j + 1);
      return coupling(QQ[0], QQ[1], s.x, p, false).K;
    };
    T eI = detail::central4([&](T e) { return Kzz(C<T>(e, T(0.0))); }, hs);
    T eL = detail::central4([&](T e) { return Kzz(C<T>(T(0.0), e)); }, hs);
    C<T> dz(eI * 0.5, -eL * 0.5);

    auto Kg = [&](T th) {
      GLCState<T> t = s;
      double c = std::cos(num::to_double(th)), sn = std::sin(num::to_double(th));
      t.Gamma[j] = s.Gamma[j] * C<T>(T(c), T(sn));
      return K_exact(t, p);
    };
    T dth = detail::central4(Kg, T(std::pow(eps, 0.2)));
    C<T> gdg(T(0.0), -dth);

    C<T> zd = s.zeta[j] * dzeta;
    out.r1[j] = std::abs(num::to_double(zd.re));
    out.r2[j] = num::to_double((s.Gamma[j] * dz - dzeta * s.U[j]).abs());
    out.r3[j] = num::to_double((gdg - zd * T(2.0)).abs());
  }
  return out;
}

}  // namespace sbc
