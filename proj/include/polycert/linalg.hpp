#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "polycert/autodiff.hpp"
#include "polycert/scalar.hpp"

// Small dense row-major matrices and vectors, generic over the scalar type.
// Inner loops funnel through dot() so tracked-scalar products record fused
// tape nodes.

namespace polycert {

template <class S>
inline constexpr bool is_tracked_v = std::is_same_v<S, Var>;

template <class A, class B>
using promote_t = std::conditional_t<is_tracked_v<A> || is_tracked_v<B>, Var, double>;

template <class S>
struct Mat {
  std::size_t r = 0, c = 0;
  std::vector<S> a;

  Mat() = default;
  Mat(std::size_t rows, std::size_t cols) : r(rows), c(cols), a(rows * cols, S(0.0)) {}

  static Mat zero(std::size_t rows, std::size_t cols) { return Mat(rows, cols); }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = S(1.0);
    return m;
  }

  static Mat from_rows(const std::vector<std::vector<double>>& rows) {
    Mat m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.c) throw std::invalid_argument("Mat: ragged rows");
      for (std::size_t j = 0; j < m.c; ++j) m(i, j) = S(rows[i][j]);
    }
    return m;
  }

  S& operator()(std::size_t i, std::size_t j) { return a[i * c + j]; }
  const S& operator()(std::size_t i, std::size_t j) const { return a[i * c + j]; }

  std::span<const S> row(std::size_t i) const { return {a.data() + i * c, c}; }
  std::span<S> row(std::size_t i) { return {a.data() + i * c, c}; }
};

template <class S>
Mat<S> transpose(const Mat<S>& m) {
  Mat<S> t(m.c, m.r);
  for (std::size_t i = 0; i < m.r; ++i)
    for (std::size_t j = 0; j < m.c; ++j) t(j, i) = m(i, j);
  return t;
}

inline Mat<Var> lift(const Mat<double>& m) {
  Mat<Var> out(m.r, m.c);
  for (std::size_t i = 0; i < m.a.size(); ++i) out.a[i] = Var(m.a[i]);
  return out;
}

inline std::vector<Var> lift(const std::vector<double>& v) {
  return std::vector<Var>(v.begin(), v.end());
}

template <class S>
std::vector<double> values_of(const std::vector<S>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = val(v[i]);
  return out;
}

template <class SA, class SB>
std::vector<promote_t<SA, SB>> matvec(const Mat<SA>& m, const std::vector<SB>& x) {
  if (m.c != x.size()) throw std::invalid_argument("matvec: size mismatch");
  std::vector<promote_t<SA, SB>> out(m.r);
  std::span<const SB> xs{x.data(), x.size()};
  for (std::size_t i = 0; i < m.r; ++i) out[i] = dot(m.row(i), xs);
  return out;
}

template <class SA, class SB>
Mat<promote_t<SA, SB>> matmul(const Mat<SA>& A, const Mat<SB>& B) {
  if (A.c != B.r) throw std::invalid_argument("matmul: size mismatch");
  Mat<SB> Bt = transpose(B);
  Mat<promote_t<SA, SB>> out(A.r, B.c);
  for (std::size_t i = 0; i < A.r; ++i)
    for (std::size_t j = 0; j < B.c; ++j) out(i, j) = dot(A.row(i), Bt.row(j));
  return out;
}

template <class S>
Mat<S> mat_add(const Mat<S>& A, const Mat<S>& B) {
  if (A.r != B.r || A.c != B.c) throw std::invalid_argument("mat_add: size mismatch");
  Mat<S> out(A.r, A.c);
  for (std::size_t i = 0; i < A.a.size(); ++i) out.a[i] = A.a[i] + B.a[i];
  return out;
}

template <class S>
Mat<S> mat_sub(const Mat<S>& A, const Mat<S>& B) {
  if (A.r != B.r || A.c != B.c) throw std::invalid_argument("mat_sub: size mismatch");
  Mat<S> out(A.r, A.c);
  for (std::size_t i = 0; i < A.a.size(); ++i) out.a[i] = A.a[i] - B.a[i];
  return out;
}

// Entrywise split M = P + N with P = max(M, 0) >= 0 and N = min(M, 0) <= 0.
template <class S>
std::pair<Mat<S>, Mat<S>> pos_neg_split(const Mat<S>& m) {
  Mat<S> pos(m.r, m.c), neg(m.r, m.c);
  for (std::size_t i = 0; i < m.a.size(); ++i) {
    pos.a[i] = relu(m.a[i]);
    neg.a[i] = m.a[i] - pos.a[i];
  }
  return {pos, neg};
}

template <class S>
std::pair<std::vector<S>, std::vector<S>> pos_neg_split(std::span<const S> v) {
  std::vector<S> pos(v.size()), neg(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    pos[i] = relu(v[i]);
    neg[i] = v[i] - pos[i];
  }
  return {pos, neg};
}

template <class S>
std::vector<S> vec_add(const std::vector<S>& a, const std::vector<S>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("vec_add: size mismatch");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <class S>
std::vector<S> vec_sub(const std::vector<S>& a, const std::vector<S>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("vec_sub: size mismatch");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <class S>
std::span<const S> as_span(const std::vector<S>& v) {
  return {v.data(), v.size()};
}

template <class S>
Mat<S> mat_cast(const Mat<double>& m) {
  Mat<S> out(m.r, m.c);
  for (std::size_t i = 0; i < m.a.size(); ++i) out.a[i] = S(m.a[i]);
  return out;
}

template <class S>
std::vector<S> vec_cast(const std::vector<double>& v) {
  std::vector<S> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = S(v[i]);
  return out;
}

}  // namespace polycert
