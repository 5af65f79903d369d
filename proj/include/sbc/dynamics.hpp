#pragma once

#include <array>

#include "potential.hpp"

namespace sbc {

enum class Field { X, XH, XKepler, XHKepler };

template <class T>
struct VectorFieldEval {
  typename GLCState<T>::Vec d{};
  Field field = Field::X;

  C<T> dzeta(int j) const { return {d[2 * j], d[2 * j + 1]}; }
  T dh(int j) const { return d[4 + j]; }
  C<T> dGamma(int j) const { return {d[6 + 2 * j], d[7 + 2 * j]}; }
  C<T> dx() const { return {d[10], d[11]}; }
  C<T> dy() const { return {d[12], d[13]}; }
};

namespace detail {

// Rescaled field X = |zeta1|^2 |zeta2|^2 X_H with the |zeta_j|^-2 factors
// cancelled by hand. With G_j = Gamma_j^2 zeta_j dK/dQ_j:
//   zeta_j' = U_j^2 n_k + n1 n2 (2 h_j + 4 a_j^{-1/3} lam_j zeta_j G_j / U_j^2)
//   h_j'    = 4 a_j^{1/3} U_j^2 n_k Re G_j / s_j
//   Gamma_j' = i Gamma_j (h_j L_j n_k - 2 n1 n2 a_j^{1/3} Im G_j / (s_j U_j^2))
//   x' = n1 n2 mu y,   y' = 2 n1 n2 dK/d(conj x)
// For X_H every term is divided by n1 n2.
template <class T>
void glc_rhs(const typename GLCState<T>::Vec& v, typename GLCState<T>::Vec& out, const MassParams<T>& p,
             Field field) {
  const bool coupled = field == Field::X || field == Field::XH;
  const bool physical = field == Field::XH || field == Field::XHKepler;
  C<T> zeta[2] = {C<T>(v[0], v[1]), C<T>(v[2], v[3])};
  T h[2] = {v[4], v[5]};
  C<T> G[2] = {C<T>(v[6], v[7]), C<T>(v[8], v[9])};
  T n[2] = {zeta[0].norm2(), zeta[1].norm2()};
  T U[2] = {solve_U(zeta[0], h[0]), solve_U(zeta[1], h[1])};
  T U2[2] = {U[0] * U[0], U[1] * U[1]};

  KGrad<T> kg;
  C<T> Gq[2];
  if (coupled) {
    C<T> Q[2];
    for (int j = 0; j < 2; ++j) {
      C<T> gz = G[j] * zeta[j];
      Q[j] = gz * gz * (p.lam(j + 1) / U2[j]);
    }
    kg = coupling(Q[0], Q[1], C<T>(v[10], v[11]), p, true);
    Gq[0] = G[0] * G[0] * zeta[0] * kg.dQ1;
    Gq[1] = G[1] * G[1] * zeta[1] * kg.dQ2;
  }

  // weights: kepler terms carry n_k (X) or 1/n_j (X_H); coupling terms n1 n2 (X) or 1
  T nn = physical ? T(1.0) : n[0] * n[1];
  for (int j = 0; j < 2; ++j) {
    int k = 1 - j;
    T wk = physical ? T(1.0) / n[j] : n[k];
    T a13 = p.a13(j + 1);
    C<T> dz(U2[j] * wk + nn * 2.0 * h[j], T(0.0));
    T dh(0.0);
    T phase = h[j] * zeta[j].im * wk;
    if (coupled) {
      dz += zeta[j] * Gq[j] * (nn * 4.0 * p.lam(j + 1) / (a13 * U2[j]));
      dh = 4.0 * a13 * U2[j] * wk * Gq[j].re / p.s(j + 1);
      phase -= nn * 2.0 * a13 * Gq[j].im / (p.s(j + 1) * U2[j]);
    }
    out[2 * j] = dz.re;
    out[2 * j + 1] = dz.im;
    out[4 + j] = dh;
    out[6 + 2 * j] = -G[j].im * phase;
    out[7 + 2 * j] = G[j].re * phase;
  }
  out[10] = nn * p.mu * v[12];
  out[11] = nn * p.mu * v[13];
  if (coupled) {
    out[12] = nn * 2.0 * kg.dxbar.re;
    out[13] = nn * 2.0 * kg.dxbar.im;
  } else {
    out[12] = T(0.0);
    out[13] = T(0.0);
  }
}

}  // namespace detail

template <class T>
VectorFieldEval<T> eval_field(const GLCState<T>& s, const MassParams<T>& p, Field f) {
  if ((f == Field::XH || f == Field::XHKepler) &&
      (s.zeta[0].norm2() == T(0.0) || s.zeta[1].norm2() == T(0.0)))
    throw DomainError("X_H is singular at zeta_j = 0; use the rescaled field X");
  VectorFieldEval<T> e;
  e.field = f;
  detail::glc_rhs(s.pack(), e.d, p, f);
  return e;
}

template <class T>
VectorFieldEval<T> eval_X(const GLCState<T>& s, const MassParams<T>& p) { return eval_field(s, p, Field::X); }
template <class T>
VectorFieldEval<T> eval_XH(const GLCState<T>& s, const MassParams<T>& p) { return eval_field(s, p, Field::XH); }
template <class T>
VectorFieldEval<T> eval_X_kepler(const GLCState<T>& s, const MassParams<T>& p) {
  return eval_field(s, p, Field::XKepler);
}

template <class T>
T hamiltonian(const GLCState<T>& s, const MassParams<T>& p) {
  return 0.5 * p.a1_13 * s.h[0] + 0.5 * p.a2_13 * s.h[1] + 0.5 * p.mu * s.y.norm2() - K_exact(s, p);
}

// Im(conj Q_j P_j) = -a_j^{1/3} L_j / 2
template <class T>
T total_angular_momentum(const GLCState<T>& s, const MassParams<T>& p) {
  return -0.5 * (p.a1_13 * s.zeta[0].im + p.a2_13 * s.zeta[1].im) + (s.x.conj() * s.y).im;
}

template <class T>
T hamiltonian_cartesian(const CartesianState<T>& s, const MassParams<T>& p) {
  T H = 0.5 * p.mu * s.y.norm2() - K_cartesian(s, p);
  H += s.P[0].norm2() / (2.0 * p.M1) - p.k1 / s.Q[0].abs();
  H += s.P[1].norm2() / (2.0 * p.M2) - p.k2 / s.Q[1].abs();
  return H;
}

template <class T>
T angular_momentum_cartesian(const CartesianState<T>& s) {
  return (s.Q[0].conj() * s.P[0]).im + (s.Q[1].conj() * s.P[1]).im + (s.x.conj() * s.y).im;
}

// dt/dtau for the rescaled field
template <class T>
T time_rescale(const typename GLCState<T>::Vec& v) {
  return (v[0] * v[0] + v[1] * v[1]) * (v[2] * v[2] + v[3] * v[3]);
}

}  // namespace sbc
