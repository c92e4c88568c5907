#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "polycert/linalg.hpp"
#include "polycert/scalar.hpp"

// Closed-interval arithmetic over the generic scalar contract. Endpoint order
// is checked at construction. Rounding is to-nearest (no outward rounding);
// downstream certificates carry explicit slack that dominates last-ulp
// effects.

namespace polycert {

template <class S>
struct Interval {
  S lo, hi;

  Interval() : lo(S(0.0)), hi(S(0.0)) {}
  Interval(S l, S h) : lo(l), hi(h) {
    if (!(val(lo) <= val(hi))) {
      throw std::invalid_argument("Interval: lo > hi (or NaN endpoint)");
    }
  }
  static Interval point(S x) { return Interval(x, x); }
};

template <class S>
double width(const Interval<S>& x) { return val(x.hi) - val(x.lo); }

template <class S>
bool contains(const Interval<S>& x, double p, double tol = 0.0) {
  return val(x.lo) - tol <= p && p <= val(x.hi) + tol;
}

template <class S>
Interval<S> operator+(const Interval<S>& a, const Interval<S>& b) {
  return {a.lo + b.lo, a.hi + b.hi};
}

template <class S>
Interval<S> operator-(const Interval<S>& a, const Interval<S>& b) {
  return {a.lo - b.hi, a.hi - b.lo};
}

template <class S>
Interval<S> operator-(const Interval<S>& a) {
  return {-a.hi, -a.lo};
}

template <class S>
Interval<S> operator*(const Interval<S>& a, const Interval<S>& b) {
  const S p1 = a.lo * b.lo, p2 = a.lo * b.hi, p3 = a.hi * b.lo, p4 = a.hi * b.hi;
  return {min(min(p1, p2), min(p3, p4)), max(max(p1, p2), max(p3, p4))};
}

template <class S>
Interval<S> operator*(const S& c, const Interval<S>& x) {
  const S p1 = c * x.lo, p2 = c * x.hi;
  return {min(p1, p2), max(p1, p2)};
}

template <class S>
Interval<S> operator/(const Interval<S>& a, const Interval<S>& b) {
  if (val(b.lo) <= 0.0 && val(b.hi) >= 0.0) {
    throw std::domain_error("Interval: division by interval containing zero");
  }
  const Interval<S> inv{S(1.0) / b.hi, S(1.0) / b.lo};
  return a * inv;
}

template <class S>
Interval<S> sqr(const Interval<S>& x) {
  const S a = x.lo * x.lo, b = x.hi * x.hi;
  if (val(x.lo) >= 0.0) return {a, b};
  if (val(x.hi) <= 0.0) return {b, a};
  return {S(0.0), max(a, b)};
}

template <class S>
Interval<S> tanh(const Interval<S>& x) {
  return {tanh(x.lo), tanh(x.hi)};
}

namespace detail {
// Does some c + k*period (integer k) land inside [a, b]?
inline bool hits_grid(double a, double b, double c, double period) {
  const double kmin = std::ceil((a - c) / period);
  const double kmax = std::floor((b - c) / period);
  return kmin <= kmax;
}
}  // namespace detail

template <class S>
Interval<S> cos(const Interval<S>& x) {
  constexpr double pi = std::numbers::pi;
  const double a = val(x.lo), b = val(x.hi);
  if (b - a >= 2.0 * pi) return {S(-1.0), S(1.0)};
  const S ca = cos(x.lo), cb = cos(x.hi);
  S lo = detail::hits_grid(a, b, pi, 2.0 * pi) ? S(-1.0) : min(ca, cb);
  S hi = detail::hits_grid(a, b, 0.0, 2.0 * pi) ? S(1.0) : max(ca, cb);
  return {lo, hi};
}

template <class S>
Interval<S> sin(const Interval<S>& x) {
  constexpr double pi = std::numbers::pi;
  const double a = val(x.lo), b = val(x.hi);
  if (b - a >= 2.0 * pi) return {S(-1.0), S(1.0)};
  const S sa = sin(x.lo), sb = sin(x.hi);
  S lo = detail::hits_grid(a, b, -0.5 * pi, 2.0 * pi) ? S(-1.0) : min(sa, sb);
  S hi = detail::hits_grid(a, b, 0.5 * pi, 2.0 * pi) ? S(1.0) : max(sa, sb);
  return {lo, hi};
}

template <class S>
Interval<S> intersect(const Interval<S>& a, const Interval<S>& b) {
  const S lo = max(a.lo, b.lo);
  const S hi = min(a.hi, b.hi);
  if (val(lo) > val(hi)) {
    throw empty_intersection_error("intersect: empty interval intersection");
  }
  return {lo, hi};
}

// ---- boxes (interval vectors), stored as endpoint vectors ----

template <class S>
struct IntervalVector {
  std::vector<S> lo, hi;

  IntervalVector() = default;
  IntervalVector(std::vector<S> l, std::vector<S> h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("IntervalVector: size mismatch");
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (!(val(lo[i]) <= val(hi[i]))) {
        throw std::invalid_argument("IntervalVector: lo > hi at some entry");
      }
    }
  }
  static IntervalVector point(std::vector<S> x) {
    auto c = x;
    return IntervalVector(std::move(x), std::move(c));
  }

  std::size_t size() const { return lo.size(); }
  Interval<S> get(std::size_t i) const { return {lo[i], hi[i]}; }
  void set(std::size_t i, const Interval<S>& x) { lo[i] = x.lo; hi[i] = x.hi; }
};

inline IntervalVector<Var> lift(const IntervalVector<double>& b) {
  return IntervalVector<Var>(lift(b.lo), lift(b.hi));
}

template <class S>
IntervalVector<S> box_cast(const IntervalVector<double>& b) {
  return IntervalVector<S>(vec_cast<S>(b.lo), vec_cast<S>(b.hi));
}

template <class S>
bool box_contains(const IntervalVector<S>& b, const std::vector<double>& x, double tol = 0.0) {
  if (b.size() != x.size()) return false;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (x[i] < val(b.lo[i]) - tol || x[i] > val(b.hi[i]) + tol) return false;
  }
  return true;
}

// Entry replacement x_{i:y}: copy of x whose i-th component is y's i-th
// component (0-based).
template <class S>
std::vector<S> replace_entry(const std::vector<S>& x, std::size_t i, const std::vector<S>& y) {
  if (i >= x.size() || x.size() != y.size()) {
    throw std::invalid_argument("replace_entry: bad index or size");
  }
  std::vector<S> out = x;
  out[i] = y[i];
  return out;
}

// ---- interval matrices ----

template <class S>
struct IntervalMatrix {
  Mat<S> lo, hi;

  IntervalMatrix() = default;
  IntervalMatrix(Mat<S> l, Mat<S> h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.r != hi.r || lo.c != hi.c) {
      throw std::invalid_argument("IntervalMatrix: shape mismatch");
    }
    for (std::size_t i = 0; i < lo.a.size(); ++i) {
      if (!(val(lo.a[i]) <= val(hi.a[i]))) {
        throw std::invalid_argument("IntervalMatrix: lo > hi at some entry");
      }
    }
  }
  static IntervalMatrix point(Mat<S> m) {
    auto c = m;
    return IntervalMatrix(std::move(m), std::move(c));
  }

  std::size_t rows() const { return lo.r; }
  std::size_t cols() const { return lo.c; }
  Interval<S> get(std::size_t i, std::size_t j) const { return {lo(i, j), hi(i, j)}; }
  void set(std::size_t i, std::size_t j, const Interval<S>& x) {
    lo(i, j) = x.lo;
    hi(i, j) = x.hi;
  }
};

// Entrywise-sum interval matrix product.
template <class S>
IntervalMatrix<S> matmul(const IntervalMatrix<S>& A, const IntervalMatrix<S>& B) {
  if (A.cols() != B.rows()) throw std::invalid_argument("interval matmul: size mismatch");
  IntervalMatrix<S> out(Mat<S>(A.rows(), B.cols()), Mat<S>(A.rows(), B.cols()));
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t j = 0; j < B.cols(); ++j) {
      Interval<S> acc{S(0.0), S(0.0)};
      for (std::size_t k = 0; k < A.cols(); ++k) acc = acc + A.get(i, k) * B.get(k, j);
      out.set(i, j, acc);
    }
  }
  return out;
}

template <class S>
IntervalVector<S> matvec(const IntervalMatrix<S>& A, const IntervalVector<S>& x) {
  if (A.cols() != x.size()) throw std::invalid_argument("interval matvec: size mismatch");
  IntervalVector<S> out(std::vector<S>(A.rows(), S(0.0)), std::vector<S>(A.rows(), S(0.0)));
  for (std::size_t i = 0; i < A.rows(); ++i) {
    Interval<S> acc{S(0.0), S(0.0)};
    for (std::size_t k = 0; k < A.cols(); ++k) acc = acc + A.get(i, k) * x.get(k);
    out.set(i, acc);
  }
  return out;
}

// Product of a point matrix with a box, evaluated through the sign split so
// each output endpoint is two fused inner products.
template <class SP, class S>
IntervalVector<promote_t<SP, S>> interval_matvec(const Mat<SP>& P, const IntervalVector<S>& x) {
  if (P.c != x.size()) throw std::invalid_argument("interval_matvec: size mismatch");
  auto [pp, pn] = pos_neg_split(P);
  using R = promote_t<SP, S>;
  std::vector<R> lo(P.r), hi(P.r);
  std::span<const S> xl{x.lo.data(), x.lo.size()}, xh{x.hi.data(), x.hi.size()};
  for (std::size_t i = 0; i < P.r; ++i) {
    lo[i] = dot(pp.row(i), xl) + dot(pn.row(i), xh);
    hi[i] = dot(pp.row(i), xh) + dot(pn.row(i), xl);
  }
  return IntervalVector<R>(std::move(lo), std::move(hi));
}

// ---- southeast order ----

// E >=_SE 0: every lower component nonnegative and every upper component
// nonpositive.
template <class S>
bool se_geq_zero(const std::vector<S>& lower, const std::vector<S>& upper) {
  if (lower.size() != upper.size()) throw std::invalid_argument("se_geq_zero: size mismatch");
  for (const S& x : lower) {
    if (!(val(x) >= 0.0)) return false;
  }
  for (const S& x : upper) {
    if (!(val(x) <= 0.0)) return false;
  }
  return true;
}

// Minimum slack of the southeast condition; nonnegative iff it holds.
inline double se_margin(const std::vector<double>& lower, const std::vector<double>& upper) {
  if (lower.size() != upper.size()) throw std::invalid_argument("se_margin: size mismatch");
  double m = std::numeric_limits<double>::infinity();
  for (double x : lower) m = std::min(m, x);
  for (double x : upper) m = std::min(m, -x);
  return m;
}

}  // namespace polycert
