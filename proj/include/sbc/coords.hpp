#pragma once

#include <array>
#include <optional>

#include "num.hpp"
#include "params.hpp"

namespace sbc {

template <class T>
using C = Cplx<T>;

template <class T>
struct CartesianState {
  std::array<C<T>, 2> Q{}, P{};
  C<T> x{}, y{};
};

// Levi-Civita variables: z = sqrt(2 Q~), u = conj(z) P~
template <class T>
struct LCState {
  std::array<C<T>, 2> z{}, u{};
  C<T> x{}, y{};
};

// Generalised Levi-Civita variables. I_j = Re zeta_j, L_j = Im zeta_j.
// U caches |u_j|; call refresh() after touching zeta or h.
template <class T>
struct GLCState {
  std::array<C<T>, 2> zeta{};
  std::array<T, 2> h{};
  std::array<C<T>, 2> Gamma{C<T>(T(1.0)), C<T>(T(1.0))};
  C<T> x{T(1.0)}, y{};
  std::array<T, 2> U{T(1.0), T(1.0)};

  static constexpr int dim = 14;
  using Vec = std::array<T, dim>;

  T I(int j) const { return zeta[j].re; }
  T L(int j) const { return zeta[j].im; }

  void refresh();

  Vec pack() const {
    return {zeta[0].re, zeta[0].im, zeta[1].re, zeta[1].im, h[0], h[1], Gamma[0].re, Gamma[0].im,
            Gamma[1].re, Gamma[1].im, x.re, x.im, y.re, y.im};
  }
  static GLCState unpack(const Vec& v, bool with_refresh = true) {
    GLCState s;
    s.zeta = {C<T>(v[0], v[1]), C<T>(v[2], v[3])};
    s.h = {v[4], v[5]};
    s.Gamma = {C<T>(v[6], v[7]), C<T>(v[8], v[9])};
    s.x = C<T>(v[10], v[11]);
    s.y = C<T>(v[12], v[13]);
    if (with_refresh) s.refresh();
    return s;
  }

  template <class S>
  GLCState<S> as() const {
    typename GLCState<S>::Vec w;
    auto v = pack();
    for (int i = 0; i < dim; ++i) w[i] = num::cast<S>(v[i]);
    return GLCState<S>::unpack(w);
  }
};

// Positive root of U^2(U^2-1) = h|zeta|^2 on the branch U(0,h) = 1.
template <class T>
T solve_U(const C<T>& zeta, const T& h) {
  T disc = 1.0 + 4.0 * h * zeta.norm2();
  if (!(disc > T(0.0))) throw DomainError("solve_U: 1 + 4 h |zeta|^2 <= 0, outside the working neighbourhood");
  return num::sqrt((1.0 + num::sqrt(disc)) * 0.5);
}

template <class T>
void GLCState<T>::refresh() {
  U = {solve_U(zeta[0], h[0]), solve_U(zeta[1], h[1])};
}

template <class T>
GLCState<T> make_glc(C<T> z1, C<T> z2, T h1, T h2, C<T> G1, C<T> G2, C<T> x, C<T> y) {
  GLCState<T> s;
  s.zeta = {z1, z2};
  s.h = {h1, h2};
  s.Gamma = {G1, G2};
  s.x = x;
  s.y = y;
  s.refresh();
  return s;
}

template <class T>
LCState<T> cartesian_to_lc(const CartesianState<T>& s, const MassParams<T>& p,
                           const LCState<T>* previous = nullptr) {
  LCState<T> o;
  for (int j = 0; j < 2; ++j) {
    if (s.Q[j].norm2() == T(0.0)) throw DomainError("cartesian_to_lc: Q_j = 0, Levi-Civita branch undefined");
    T sj = p.s(j + 1);
    C<T> Qt = s.Q[j] * sj;
    C<T> Pt = s.P[j] / sj;
    C<T> z = csqrt(Qt * T(2.0));
    if (previous && (z - previous->z[j]).norm2() > (z + previous->z[j]).norm2()) z = -z;
    o.z[j] = z;
    o.u[j] = z.conj() * Pt;
  }
  o.x = s.x;
  o.y = s.y;
  return o;
}

template <class T>
CartesianState<T> lc_to_cartesian(const LCState<T>& s, const MassParams<T>& p) {
  CartesianState<T> o;
  for (int j = 0; j < 2; ++j) {
    if (s.z[j].norm2() == T(0.0)) throw DomainError("lc_to_cartesian: z_j = 0, momentum undefined");
    T sj = p.s(j + 1);
    C<T> Qt = s.z[j] * s.z[j] * T(0.5);
    C<T> Pt = s.u[j] / s.z[j].conj();
    o.Q[j] = Qt / sj;
    o.P[j] = Pt * sj;
  }
  o.x = s.x;
  o.y = s.y;
  return o;
}

// h_given supplies h_j where z_j = 0 (the energy relation is then 0/0).
template <class T>
GLCState<T> lc_to_glc(const LCState<T>& s, const MassParams<T>& p,
                      std::optional<std::array<T, 2>> h_given = std::nullopt) {
  GLCState<T> o;
  for (int j = 0; j < 2; ++j) {
    T a13 = p.a13(j + 1);
    T un = s.u[j].abs();
    if (un == T(0.0)) throw DomainError("lc_to_glc: u_j = 0, Gamma undefined");
    o.zeta[j] = s.u[j].conj() * s.z[j] / a13;
    T zn = s.z[j].norm2();
    if (zn == T(0.0)) {
      if (!h_given) throw DomainError("lc_to_glc: z_j = 0 requires h_j to be supplied");
      o.h[j] = (*h_given)[j];
    } else {
      o.h[j] = a13 * a13 * (un * un - 1.0) / zn;
    }
    o.Gamma[j] = s.u[j] / un;
  }
  o.x = s.x;
  o.y = s.y;
  o.refresh();
  return o;
}

template <class T>
LCState<T> glc_to_lc(const GLCState<T>& s, const MassParams<T>& p) {
  LCState<T> o;
  for (int j = 0; j < 2; ++j) {
    T U = solve_U(s.zeta[j], s.h[j]);
    o.u[j] = s.Gamma[j] * U;
    o.z[j] = s.zeta[j] * s.Gamma[j] * (p.a13(j + 1) / U);
  }
  o.x = s.x;
  o.y = s.y;
  return o;
}

template <class T>
CartesianState<T> glc_to_cartesian(const GLCState<T>& s, const MassParams<T>& p) {
  for (int j = 0; j < 2; ++j)
    if (s.zeta[j].norm2() == T(0.0)) throw DomainError("glc_to_cartesian: zeta_j = 0 is a binary collision");
  return lc_to_cartesian(glc_to_lc(s, p), p);
}

template <class T>
GLCState<T> cartesian_to_glc(const CartesianState<T>& s, const MassParams<T>& p) {
  return lc_to_glc(cartesian_to_lc(s, p), p);
}

// physical separations Q_j = lam_j Gamma_j^2 zeta_j^2 / U_j^2
template <class T>
std::array<C<T>, 2> separations(const GLCState<T>& s, const MassParams<T>& p) {
  std::array<C<T>, 2> Q;
  for (int j = 0; j < 2; ++j) {
    C<T> gz = s.Gamma[j] * s.zeta[j];
    Q[j] = gz * gz * (p.lam(j + 1) / (s.U[j] * s.U[j]));
  }
  return Q;
}

// Scaling symmetry Q -> sQ, x -> sx, P -> s^{-1/2}P, y -> s^{-1/2}y.
template <class T>
CartesianState<T> scale_state(const CartesianState<T>& s, const T& f) {
  T r = 1.0 / num::sqrt(f);
  CartesianState<T> o = s;
  for (int j = 0; j < 2; ++j) {
    o.Q[j] = s.Q[j] * f;
    o.P[j] = s.P[j] * r;
  }
  o.x = s.x * f;
  o.y = s.y * r;
  return o;
}

}  // namespace sbc
