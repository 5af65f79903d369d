#pragma once

#include <cmath>
#include <string_view>
#include <type_traits>

#include "dd.hpp"

namespace sbc {

enum class Precision { standard, extended };

namespace num {

inline double sqrt(double x) { return std::sqrt(x); }
inline double cbrt(double x) { return std::cbrt(x); }
inline double abs(double x) { return std::fabs(x); }
inline double to_double(double x) { return x; }
inline bool finite(double x) { return std::isfinite(x); }

inline dd sqrt(const dd& x) { return sbc::sqrt(x); }
inline dd cbrt(const dd& x) { return sbc::cbrt(x); }
inline dd abs(const dd& x) { return sbc::abs(x); }
inline double to_double(const dd& x) { return x.hi + x.lo; }
inline bool finite(const dd& x) { return sbc::isfinite(x); }

template <class T>
T from_string(std::string_view s);

template <>
inline double from_string<double>(std::string_view s) {
  return to_double(dd::from_string(s));
}

template <>
inline dd from_string<dd>(std::string_view s) {
  return dd::from_string(s);
}

template <class T>
T cast(double v) {
  return T(v);
}

template <class T>
T cast(const dd& v) {
  if constexpr (std::is_same_v<T, dd>) return v;
  else return to_double(v);
}

template <class T>
constexpr double epsilon() {
  if constexpr (std::is_same_v<T, dd>) return 4.93038065763132e-32;
  else return 2.220446049250313e-16;
}

}  // namespace num

template <class T>
struct Cplx {
  T re{};
  T im{};

  Cplx() = default;
  Cplx(T r) : re(r), im(0.0) {}
  Cplx(T r, T i) : re(r), im(i) {}
  template <class S, class = std::enable_if_t<!std::is_same_v<S, T>>>
  explicit Cplx(const Cplx<S>& o) : re(num::cast<T>(o.re)), im(num::cast<T>(o.im)) {}

  Cplx conj() const { return {re, -im}; }
  T norm2() const { return re * re + im * im; }
  T abs() const { return num::sqrt(norm2()); }

  Cplx& operator+=(const Cplx& b) { re += b.re; im += b.im; return *this; }
  Cplx& operator-=(const Cplx& b) { re -= b.re; im -= b.im; return *this; }
  Cplx& operator*=(const Cplx& b) { return *this = *this * b; }
  Cplx& operator*=(const T& s) { re *= s; im *= s; return *this; }

  friend Cplx operator+(const Cplx& a, const Cplx& b) { return {a.re + b.re, a.im + b.im}; }
  friend Cplx operator-(const Cplx& a, const Cplx& b) { return {a.re - b.re, a.im - b.im}; }
  friend Cplx operator-(const Cplx& a) { return {-a.re, -a.im}; }
  friend Cplx operator*(const Cplx& a, const Cplx& b) {
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
  }
  friend Cplx operator*(const Cplx& a, const T& s) { return {a.re * s, a.im * s}; }
  friend Cplx operator*(const T& s, const Cplx& a) { return {a.re * s, a.im * s}; }
  friend Cplx operator/(const Cplx& a, const T& s) { return {a.re / s, a.im / s}; }
  friend Cplx operator/(const Cplx& a, const Cplx& b) {
    T d = b.norm2();
    return {(a.re * b.re + a.im * b.im) / d, (a.im * b.re - a.re * b.im) / d};
  }
};

template <class T>
Cplx<T> conj(const Cplx<T>& z) { return z.conj(); }
template <class T>
T norm2(const Cplx<T>& z) { return z.norm2(); }
template <class T>
T cabs(const Cplx<T>& z) { return z.abs(); }

// principal square root, cut along the negative real axis
template <class T>
Cplx<T> csqrt(const Cplx<T>& z) {
  T r = z.abs();
  if (r == T(0.0)) return {T(0.0), T(0.0)};
  if (z.re >= T(0.0)) {
    T t = num::sqrt((r + z.re) * 0.5);
    return {t, z.im / (2.0 * t)};
  }
  T t = num::sqrt((r - z.re) * 0.5);
  if (z.im < T(0.0)) t = -t;
  return {z.im / (2.0 * t), t};
}

template <class T>
Cplx<T> unit(const Cplx<T>& z) { return z / z.abs(); }

}  // namespace sbc
