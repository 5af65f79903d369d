#pragma once

// Double-double arithmetic: an unevaluated sum hi + lo with |lo| <= ulp(hi)/2.
// Requires a build without floating-point contraction (-ffp-contract=off).

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>

namespace sbc {

struct dd {
  double hi = 0.0;
  double lo = 0.0;

  constexpr dd() = default;
  constexpr dd(double h) : hi(h), lo(0.0) {}
  constexpr dd(int h) : hi(static_cast<double>(h)), lo(0.0) {}
  constexpr dd(double h, double l) : hi(h), lo(l) {}

  explicit operator double() const { return hi + lo; }

  static dd from_string(std::string_view s);
  std::string to_string(int digits = 32) const;
};

namespace ddimpl {

inline dd quick_two_sum(double a, double b) {
  double s = a + b;
  return {s, b - (s - a)};
}

inline dd two_sum(double a, double b) {
  double s = a + b;
  double bb = s - a;
  return {s, (a - (s - bb)) + (b - bb)};
}

inline dd two_prod(double a, double b) {
  double p = a * b;
  return {p, std::fma(a, b, -p)};
}

}  // namespace ddimpl

inline dd operator-(const dd& a) { return {-a.hi, -a.lo}; }

inline dd operator+(const dd& a, const dd& b) {
  dd s = ddimpl::two_sum(a.hi, b.hi);
  dd t = ddimpl::two_sum(a.lo, b.lo);
  s.lo += t.hi;
  s = ddimpl::quick_two_sum(s.hi, s.lo);
  s.lo += t.lo;
  return ddimpl::quick_two_sum(s.hi, s.lo);
}

inline dd operator+(const dd& a, double b) {
  dd s = ddimpl::two_sum(a.hi, b);
  s.lo += a.lo;
  return ddimpl::quick_two_sum(s.hi, s.lo);
}
inline dd operator+(double a, const dd& b) { return b + a; }

inline dd operator-(const dd& a, const dd& b) { return a + (-b); }
inline dd operator-(const dd& a, double b) { return a + (-b); }
inline dd operator-(double a, const dd& b) { return (-b) + a; }

inline dd operator*(const dd& a, const dd& b) {
  dd p = ddimpl::two_prod(a.hi, b.hi);
  p.lo += a.hi * b.lo + a.lo * b.hi;
  return ddimpl::quick_two_sum(p.hi, p.lo);
}

inline dd operator*(const dd& a, double b) {
  dd p = ddimpl::two_prod(a.hi, b);
  p.lo += a.lo * b;
  return ddimpl::quick_two_sum(p.hi, p.lo);
}
inline dd operator*(double a, const dd& b) { return b * a; }

inline dd operator/(const dd& a, const dd& b) {
  double q1 = a.hi / b.hi;
  dd r = a - b * q1;
  double q2 = r.hi / b.hi;
  r = r - b * q2;
  double q3 = r.hi / b.hi;
  dd q = ddimpl::quick_two_sum(q1, q2);
  return q + q3;
}
inline dd operator/(const dd& a, double b) { return a / dd(b); }
inline dd operator/(double a, const dd& b) { return dd(a) / b; }

inline dd& operator+=(dd& a, const dd& b) { return a = a + b; }
inline dd& operator-=(dd& a, const dd& b) { return a = a - b; }
inline dd& operator*=(dd& a, const dd& b) { return a = a * b; }
inline dd& operator/=(dd& a, const dd& b) { return a = a / b; }

inline bool operator==(const dd& a, const dd& b) { return a.hi == b.hi && a.lo == b.lo; }
inline bool operator!=(const dd& a, const dd& b) { return !(a == b); }
inline bool operator<(const dd& a, const dd& b) { return a.hi < b.hi || (a.hi == b.hi && a.lo < b.lo); }
inline bool operator>(const dd& a, const dd& b) { return b < a; }
inline bool operator<=(const dd& a, const dd& b) { return !(b < a); }
inline bool operator>=(const dd& a, const dd& b) { return !(a < b); }

inline dd abs(const dd& a) { return a.hi < 0.0 ? -a : a; }
inline dd fabs(const dd& a) { return abs(a); }

inline dd sqr(const dd& a) {
  dd p = ddimpl::two_prod(a.hi, a.hi);
  p.lo += 2.0 * a.hi * a.lo;
  return ddimpl::quick_two_sum(p.hi, p.lo);
}

inline dd sqrt(const dd& a) {
  if (a.hi <= 0.0) return dd(a.hi == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN());
  double x = 1.0 / std::sqrt(a.hi);
  double ax = a.hi * x;
  dd ax2 = sqr(dd(ax));
  return ddimpl::two_sum(ax, (a - ax2).hi * (x * 0.5));
}

// real cube root, two Newton steps on x^3 = a from the double estimate
inline dd cbrt(const dd& a) {
  if (a.hi == 0.0) return dd(0.0);
  dd x(std::cbrt(a.hi));
  for (int i = 0; i < 2; ++i) x = x - (x * x * x - a) / (3.0 * sqr(x));
  return x;
}

inline dd ldexp(const dd& a, int e) { return {std::ldexp(a.hi, e), std::ldexp(a.lo, e)}; }

inline bool isfinite(const dd& a) { return std::isfinite(a.hi) && std::isfinite(a.lo); }

inline dd npow(dd a, int n) {
  bool inv = n < 0;
  unsigned m = static_cast<unsigned>(inv ? -n : n);
  dd r(1.0);
  while (m) {
    if (m & 1u) r *= a;
    a = sqr(a);
    m >>= 1u;
  }
  return inv ? dd(1.0) / r : r;
}

inline dd dd::from_string(std::string_view s) {
  std::size_t i = 0;
  bool neg = false;
  while (i < s.size() && s[i] == ' ') ++i;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) neg = s[i++] == '-';
  dd r(0.0);
  int frac = 0;
  bool dot = false;
  for (; i < s.size(); ++i) {
    char c = s[i];
    if (c == '.') {
      dot = true;
    } else if (c >= '0' && c <= '9') {
      r = r * 10.0 + static_cast<double>(c - '0');
      if (dot) ++frac;
    } else {
      break;
    }
  }
  int ex = 0;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) ex = std::atoi(std::string(s.substr(i + 1)).c_str());
  ex -= frac;
  if (ex > 0) r *= npow(dd(10.0), ex);
  if (ex < 0) r /= npow(dd(10.0), -ex);
  return neg ? -r : r;
}

inline std::string dd::to_string(int digits) const {
  if (!std::isfinite(hi)) return std::to_string(hi);
  if (hi == 0.0) return "0";
  dd a = abs(*this);
  int e = static_cast<int>(std::floor(std::log10(a.hi)));
  dd m = e >= 0 ? a / npow(dd(10.0), e) : a * npow(dd(10.0), -e);
  if (m.hi >= 10.0) { m = m / 10.0; ++e; }
  if (m.hi < 1.0) { m = m * 10.0; --e; }
  std::string out = hi < 0 ? "-" : "";
  for (int k = 0; k < digits; ++k) {
    int d = static_cast<int>(std::floor(m.hi));
    if (d < 0) d = 0;
    if (d > 9) d = 9;
    out.push_back(static_cast<char>('0' + d));
    if (k == 0) out.push_back('.');
    m = (m - static_cast<double>(d)) * 10.0;
  }
  out += "e" + std::to_string(e);
  return out;
}

inline std::ostream& operator<<(std::ostream& os, const dd& a) { return os << a.to_string(); }

}  // namespace sbc
