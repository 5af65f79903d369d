#pragma once

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "num.hpp"

namespace sbc {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <class T>
struct MassParams {
  T m1, m2, m3, m4;
  T M1, M2, k1, k2, mu;
  T d1, d2, d3, d4;
  T c1, c2, c3, c4;
  T a1, a2;
  T b0, b12, b22, b13, b23, b14, b24, bc;

  // chain helpers
  T a1_13, a2_13;     // a_j^{1/3}
  T s1, s2;           // 4 k_j M_j
  T lam1, lam2;       // Q_j = lam_j Gamma_j^2 zeta_j^2 / U_j^2

  T a13(int j) const { return j == 1 ? a1_13 : a2_13; }
  T s(int j) const { return j == 1 ? s1 : s2; }
  T lam(int j) const { return j == 1 ? lam1 : lam2; }
  T a(int j) const { return j == 1 ? a1 : a2; }

  template <class S>
  MassParams<S> as() const;
};

namespace detail {

template <class T>
void fill_derived(MassParams<T>& p) {
  const T &m1 = p.m1, &m2 = p.m2, &m3 = p.m3, &m4 = p.m4;
  T s12 = m1 + m2, s34 = m3 + m4;
  p.M1 = m1 * m2 / s12;
  p.M2 = m3 * m4 / s34;
  p.k1 = m1 * m2;
  p.k2 = m3 * m4;
  p.mu = (s12 + s34) / (s12 * s34);
  p.d1 = m1 * m3;
  p.d2 = m1 * m4;
  p.d3 = m2 * m3;
  p.d4 = m2 * m4;
  p.c1 = p.M1 / m2;
  p.c2 = p.M1 / m1;
  p.c3 = p.M2 / m4;
  p.c4 = p.M2 / m3;
  p.a1 = 16.0 * p.k1 * p.k1 * p.M1;
  p.a2 = 16.0 * p.k2 * p.k2 * p.M2;
  p.b0 = s12 * s34;
  T q12 = s12 * s12, q34 = s34 * s34;
  p.b12 = p.b0 * p.k1 / (8.0 * q12);
  p.b22 = p.b0 * p.k2 / (8.0 * q34);
  p.b13 = p.b0 * p.k1 * (m1 - m2) / (16.0 * q12 * s12);
  // odd term of the second binary: Q2 enters the distances with the opposite orientation to Q1
  p.b23 = p.b0 * p.k2 * (m4 - m3) / (16.0 * q34 * s34);
  p.b14 = p.b0 * p.k1 * (m1 * m1 - m1 * m2 + m2 * m2) / (128.0 * q12 * q12);
  p.b24 = p.b0 * p.k2 * (m3 * m3 - m3 * m4 + m4 * m4) / (128.0 * q34 * q34);
  p.bc = 3.0 * p.M1 * p.M2 / 64.0;
  p.a1_13 = num::cbrt(p.a1);
  p.a2_13 = num::cbrt(p.a2);
  p.s1 = 4.0 * p.k1 * p.M1;
  p.s2 = 4.0 * p.k2 * p.M2;
  p.lam1 = p.a1_13 * p.a1_13 / (2.0 * p.s1);
  p.lam2 = p.a2_13 * p.a2_13 / (2.0 * p.s2);
}

}  // namespace detail

template <class T = double>
MassParams<T> derive_params(T m1, T m2, T m3, T m4) {
  for (const T& m : {m1, m2, m3, m4})
    if (!(m > T(0.0)) || !num::finite(m)) throw DomainError("masses must be positive and finite");
  MassParams<T> p{};
  p.m1 = m1;
  p.m2 = m2;
  p.m3 = m3;
  p.m4 = m4;
  detail::fill_derived(p);
  return p;
}

template <class T>
template <class S>
MassParams<S> MassParams<T>::as() const {
  return derive_params<S>(num::cast<S>(m1), num::cast<S>(m2), num::cast<S>(m3), num::cast<S>(m4));
}

struct ParamDeviation {
  std::string field;
  double rel;
};

struct ParamReport {
  double max_rel = 0.0;
  std::string worst;
  std::vector<ParamDeviation> fields;
  std::vector<std::string> sign_violations;

  std::vector<std::string> flagged(double tol) const {
    std::vector<std::string> out;
    for (const auto& f : fields)
      if (f.rel > tol) out.push_back(f.field);
    return out;
  }
};

template <class T>
ParamReport validate_params(const MassParams<T>& p) {
  ParamReport rep;
  MassParams<T> q = p;
  detail::fill_derived(q);
  auto check = [&](const char* name, const T& have, const T& want, bool positive) {
    double h = num::to_double(have), w = num::to_double(want);
    double scale = std::max(std::abs(w), std::abs(h));
    double rel = scale == 0.0 ? 0.0 : std::abs(h - w) / scale;
    if (!std::isfinite(h)) rel = INFINITY;
    rep.fields.push_back({name, rel});
    if (rel > rep.max_rel) {
      rep.max_rel = rel;
      rep.worst = name;
    }
    if (positive && !(h > 0.0)) rep.sign_violations.push_back(name);
  };
#define SBC_CHECK(f, pos) check(#f, p.f, q.f, pos)
  SBC_CHECK(M1, true); SBC_CHECK(M2, true); SBC_CHECK(k1, true); SBC_CHECK(k2, true);
  SBC_CHECK(mu, true);
  SBC_CHECK(d1, true); SBC_CHECK(d2, true); SBC_CHECK(d3, true); SBC_CHECK(d4, true);
  SBC_CHECK(c1, true); SBC_CHECK(c2, true); SBC_CHECK(c3, true); SBC_CHECK(c4, true);
  SBC_CHECK(a1, true); SBC_CHECK(a2, true);
  SBC_CHECK(b0, true); SBC_CHECK(b12, true); SBC_CHECK(b22, true);
  SBC_CHECK(b13, false); SBC_CHECK(b23, false);
  SBC_CHECK(b14, true); SBC_CHECK(b24, true); SBC_CHECK(bc, true);
#undef SBC_CHECK
  return rep;
}

}  // namespace sbc
