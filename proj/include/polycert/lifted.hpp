#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "polycert/embedding.hpp"
#include "polycert/interval.hpp"
#include "polycert/linalg.hpp"
#include "polycert/parallel.hpp"
#include "polycert/rng.hpp"
#include "polycert/scalar.hpp"

// Polytopes as images of hyperrectangles: for y_lo <= Hx <= y_hi with a tall
// full-rank H, the dynamics lift to dy/dt = H f(H+_eta y, w) where H+_eta
// ranges over the left inverses H_dagger + eta N^T. Certifying the polytope
// reduces to a box certificate for the lifted field, with each face tightened
// first by propagating the range-space constraint N^T y = 0.

namespace polycert {

struct Polytope {
  Mat<double> H;
  std::vector<double> y_lo, y_hi;
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const Mat<double>& m) {
  Eigen::MatrixXd e(m.r, m.c);
  for (std::size_t i = 0; i < m.r; ++i)
    for (std::size_t j = 0; j < m.c; ++j) e(i, j) = m(i, j);
  return e;
}

inline Mat<double> from_eigen(const Eigen::MatrixXd& e) {
  Mat<double> m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  for (std::size_t i = 0; i < m.r; ++i)
    for (std::size_t j = 0; j < m.c; ++j) m(i, j) = e(i, j);
  return m;
}

}  // namespace detail

// Orthonormal basis of the left null space of a tall full-rank H. The kernel
// is first parameterized from the reduced row echelon form of H^T, one vector
// per free column, then orthonormalized in that order. Starting from the
// echelon parameterization keeps each basis vector supported on as few
// coordinates as H allows (block-structured H yields block-supported columns),
// which is what makes constraint propagation over N^T y = 0 effective; a
// factorization-based basis would smear every column across all coordinates.
inline Mat<double> nullspace_basis(const Mat<double>& H) {
  const std::size_t m = H.r, n = H.c;
  if (m < n) throw std::invalid_argument("nullspace_basis: H has more columns than rows");
  Mat<double> a = transpose(H);
  double scale = 0.0;
  for (double v : a.a) scale = std::max(scale, std::abs(v));
  const double tol = std::max(scale, 1.0) * 1e-12;

  std::vector<bool> is_pivot(m, false);
  std::vector<std::size_t> pivot_row_of(m, 0);
  std::size_t row = 0;
  for (std::size_t col = 0; col < m && row < n; ++col) {
    std::size_t best = row;
    for (std::size_t i = row + 1; i < n; ++i) {
      if (std::abs(a(i, col)) > std::abs(a(best, col))) best = i;
    }
    if (std::abs(a(best, col)) <= tol) continue;
    if (best != row) {
      for (std::size_t j = 0; j < m; ++j) std::swap(a(row, j), a(best, j));
    }
    const double p = a(row, col);
    for (std::size_t j = 0; j < m; ++j) a(row, j) /= p;
    a(row, col) = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == row) continue;
      const double f = a(i, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) a(i, j) -= f * a(row, j);
      a(i, col) = 0.0;
    }
    is_pivot[col] = true;
    pivot_row_of[col] = row;
    ++row;
  }
  if (row < n) throw std::invalid_argument("nullspace_basis: rank-deficient H");

  Mat<double> N(m, m - n);
  std::size_t out = 0;
  for (std::size_t f = 0; f < m; ++f) {
    if (is_pivot[f]) continue;
    N(f, out) = 1.0;
    for (std::size_t c = 0; c < m; ++c) {
      if (is_pivot[c]) N(c, out) = -a(pivot_row_of[c], f);
    }
    ++out;
  }

  for (std::size_t j = 0; j < N.c; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double proj = 0.0;
      for (std::size_t i = 0; i < m; ++i) proj += N(i, j) * N(i, k);
      if (proj == 0.0) continue;
      for (std::size_t i = 0; i < m; ++i) N(i, j) -= proj * N(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) norm += N(i, j) * N(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < m; ++i) N(i, j) /= norm;
    for (std::size_t i = 0; i < m; ++i) {
      if (std::abs(N(i, j)) > 1e-9) {
        if (N(i, j) < 0.0) {
          for (std::size_t k = 0; k < m; ++k) N(k, j) = -N(k, j);
        }
        break;
      }
    }
  }
  return N;
}

inline Mat<double> pinv_left(const Mat<double>& H) {
  const Eigen::MatrixXd He = detail::to_eigen(H);
  const Eigen::MatrixXd G = He.transpose() * He;
  return detail::from_eigen(Eigen::MatrixXd(G.inverse() * He.transpose()));
}

template <class S>
struct Lifting {
  Mat<double> H;
  Mat<double> H_dagger;
  Mat<double> N;
  Mat<S> eta;
};

template <class S>
Mat<S> left_inverse(const Lifting<S>& L) {
  if (L.N.c == 0) return mat_cast<S>(L.H_dagger);
  const Mat<S> etaNt = matmul(L.eta, transpose(L.N));
  return mat_add(mat_cast<S>(L.H_dagger), etaNt);
}

template <class S>
Lifting<S> make_lifting(const Mat<double>& H, Mat<S> eta) {
  Lifting<S> L{H, pinv_left(H), nullspace_basis(H), std::move(eta)};
  const std::size_t n = H.c, m = H.r;
  if (L.eta.r != n || L.eta.c != m - n) {
    throw std::invalid_argument("make_lifting: eta must be n x (m-n)");
  }
  for (std::size_t j = 0; j < L.N.c; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += L.N(i, j) * H(i, k);
      if (std::abs(acc) > 1e-10) throw std::runtime_error("make_lifting: N'H != 0");
    }
  }
  const Mat<S> hp = left_inverse(L);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      double acc = i == k ? -1.0 : 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += val(hp(i, j)) * H(j, k);
      if (std::abs(acc) > 1e-10) throw std::runtime_error("make_lifting: H+H != I");
    }
  }
  return L;
}

template <class S>
Lifting<S> make_lifting(const Mat<double>& H) {
  return make_lifting<S>(H, Mat<S>(H.c, H.r - H.c));
}

// One constraint-propagation sweep: for every null-space direction r and
// coordinate j, solve row r of N^T y = 0 for y_j over the current box and
// intersect. Pivot ratios are formed per term so symmetric rows cancel
// exactly. An empty intersection means the box misses the range of H.
inline IntervalVector<double> refine(const Mat<double>& N, const IntervalVector<double>& ybox) {
  const std::size_t m = N.r;
  if (ybox.size() != m) throw std::invalid_argument("refine: box dimension mismatch");
  IntervalVector<double> z = ybox;
  for (std::size_t r = 0; r < N.c; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const double arj = N(j, r);
      if (std::abs(arj) <= 1e-12) continue;
      Interval<double> cand{0.0, 0.0};
      for (std::size_t k = 0; k < m; ++k) {
        if (k == j) continue;
        cand = cand + (-N(k, r) / arj) * z.get(k);
      }
      z.set(j, intersect(cand, z.get(j)));
    }
  }
  return z;
}

// Throws on structural defects; empty_intersection_error signals a polytope
// whose box is inconsistent with the range of H.
inline void validate_polytope(const Polytope& P) {
  const std::size_t m = P.H.r, n = P.H.c;
  if (m < n || n == 0) throw std::invalid_argument("polytope: H must be tall with n >= 1");
  if (P.y_lo.size() != m || P.y_hi.size() != m) {
    throw std::invalid_argument("polytope: bound vectors must have m entries");
  }
  const IntervalVector<double> ybox(P.y_lo, P.y_hi);
  refine(nullspace_basis(P.H), ybox);
}

// ---- lifted embedding field ----

namespace detail {

// Row i of the interval product H * [M], as lower/upper coefficient vectors
// selected by the sign of H's entries.
template <class S>
std::vector<S> h_jacobian_row(std::span<const double> hpos, std::span<const double> hneg,
                              const Mat<S>& m_first_t, const Mat<S>& m_second_t) {
  std::vector<S> out(m_first_t.r);
  for (std::size_t j = 0; j < m_first_t.r; ++j) {
    out[j] = dot(hpos, m_first_t.row(j)) + dot(hneg, m_second_t.row(j));
  }
  return out;
}

}  // namespace detail

// Component i of the lifted inclusion over a refined face box and one
// disturbance sub-box. The coupling (H M_x + H M_u C) H+_eta is assembled in
// matrix form before interval evaluation so the composition stays first
// order.
template <class S>
S lifted_row(const ClosedLoop<S>& cl, const Lifting<S>& lifting, const Mat<S>& hplus_t,
             const InclusionParts<S>& P, const IntervalVector<double>& yref, std::size_t i,
             bool upper) {
  const std::size_t n = cl.sys.n, q = cl.sys.q;
  const std::size_t m = lifting.H.r;
  const auto [hip, hin] = pos_neg_split(lifting.H.row(i));
  const auto hips = as_span(hip), hins = as_span(hin);

  const Mat<S> mxa_t = transpose(upper ? P.mj.mx.hi : P.mj.mx.lo);
  const Mat<S> mxb_t = transpose(upper ? P.mj.mx.lo : P.mj.mx.hi);
  const Mat<S> mua_t = transpose(upper ? P.mj.mu.hi : P.mj.mu.lo);
  const Mat<S> mub_t = transpose(upper ? P.mj.mu.lo : P.mj.mu.hi);
  const Mat<S> mwa_t = transpose(upper ? P.mj.mw.hi : P.mj.mw.lo);
  const Mat<S> mwb_t = transpose(upper ? P.mj.mw.lo : P.mj.mw.hi);

  const std::vector<S> rx = detail::h_jacobian_row(hips, hins, mxa_t, mxb_t);
  const std::vector<S> ru = detail::h_jacobian_row(hips, hins, mua_t, mub_t);
  const std::vector<S> rw = detail::h_jacobian_row(hips, hins, mwa_t, mwb_t);

  const auto [rup, run] = pos_neg_split(as_span(ru));
  std::vector<S> s(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto ca = upper ? P.c_hi_t.row(j) : P.c_lo_t.row(j);
    const auto cb = upper ? P.c_lo_t.row(j) : P.c_hi_t.row(j);
    s[j] = rx[j] + dot(as_span(rup), ca) + dot(as_span(run), cb);
  }
  std::vector<S> prow(m);
  for (std::size_t k = 0; k < m; ++k) prow[k] = dot(as_span(s), hplus_t.row(k));
  const auto [pp, pn] = pos_neg_split(as_span(prow));

  S out = upper ? dot(as_span(pp), as_span(yref.hi)) + dot(as_span(pn), as_span(yref.lo))
                : dot(as_span(pp), as_span(yref.lo)) + dot(as_span(pn), as_span(yref.hi));
  out = out - dot(as_span(rx), as_span(P.mj.x0));
  out = out - dot(as_span(ru), as_span(P.mj.u0));
  const auto& da = upper ? P.relax.d_hi : P.relax.d_lo;
  const auto& db = upper ? P.relax.d_lo : P.relax.d_hi;
  out = out + dot(as_span(rup), as_span(da)) + dot(as_span(run), as_span(db));
  if (q > 0) {
    const auto rwsplit = pos_neg_split(as_span(rw));
    out = out + dot(as_span(upper ? rwsplit.first : rwsplit.second), as_span(P.wdiff));
  }
  out = out + dot(lifting.H.row(i), as_span(P.f0));
  return out;
}

// One component of the lifted embedding field: face i of the y-box is
// tightened by refine, mapped through H+_eta to a state box, and the lifted
// inclusion row is reduced over the disturbance partitions.
template <class S>
S lifted_face_component(const ClosedLoop<S>& cl, const Lifting<S>& lifting,
                        const IntervalVector<double>& ybox, std::size_t i, bool upper) {
  const IntervalVector<double> face =
      upper ? IntervalVector<double>(replace_entry(ybox.lo, i, ybox.hi), ybox.hi)
            : IntervalVector<double>(ybox.lo, replace_entry(ybox.hi, i, ybox.lo));
  const IntervalVector<double> yref = refine(lifting.N, face);
  if (cl.disturbance.partition.empty()) {
    throw std::invalid_argument("lifted embedding: disturbance has no partitions");
  }

  const Mat<S> hplus = left_inverse(lifting);
  const Mat<S> hplus_t = transpose(hplus);
  const IntervalVector<S> xbox = interval_matvec(hplus, box_cast<S>(yref));
  const ControlRelaxation<S> ctrl = control_relaxation(cl.policy, xbox);

  bool first = true;
  S acc(0.0);
  for (const auto& wsub : cl.disturbance.partition) {
    const auto parts = inclusion_parts(cl, xbox, box_cast<S>(wsub), ctrl);
    const S v = lifted_row(cl, lifting, hplus_t, parts, yref, i, upper);
    if (first) {
      acc = v;
      first = false;
    } else {
      acc = upper ? max(acc, v) : min(acc, v);
    }
  }
  return acc;
}

template <class S>
FieldBounds<S> lifted_embedding_field(const ClosedLoop<S>& cl, const Lifting<S>& lifting,
                                      const IntervalVector<double>& ybox) {
  const std::size_t m = lifting.H.r;
  if (ybox.size() != m) {
    throw std::invalid_argument("lifted_embedding_field: box dimension mismatch");
  }
  FieldBounds<S> out{std::vector<S>(m, S(0.0)), std::vector<S>(m, S(0.0))};
  auto eval_face = [&](std::size_t f) {
    const std::size_t i = f % m;
    const bool upper = f >= m;
    const S v = lifted_face_component(cl, lifting, ybox, i, upper);
    (upper ? out.hi[i] : out.lo[i]) = v;
  };
  if constexpr (std::is_same_v<S, double>) {
    parallel_for(2 * m, eval_face);
  } else {
    for (std::size_t f = 0; f < 2 * m; ++f) eval_face(f);
  }
  return out;
}

inline Certificate certify_polytope(const ClosedLoop<double>& cl, const Lifting<double>& lifting,
                                    const IntervalVector<double>& ybox) {
  return certificate_from_field(lifted_embedding_field(cl, lifting, ybox));
}

// ---- lifting design from a closed-loop linearization ----

// H = T^{-1} where T columns are eigenvectors of A_cl ordered by descending
// eigenvalue, each scaled so its first non-vanishing entry is +1. Only real
// diagonalizable spectra are supported.
inline Mat<double> lifting_from_linearization(const Mat<double>& Acl) {
  if (Acl.r != Acl.c || Acl.r == 0) {
    throw std::invalid_argument("lifting_from_linearization: A must be square");
  }
  const std::size_t n = Acl.r;
  const Eigen::MatrixXd Ae = detail::to_eigen(Acl);
  Eigen::EigenSolver<Eigen::MatrixXd> es(Ae);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("lifting_from_linearization: eigensolver failed");
  }
  const auto evals = es.eigenvalues();
  const auto evecs = es.eigenvectors();
  for (Eigen::Index k = 0; k < evals.size(); ++k) {
    if (std::abs(evals[k].imag()) > 1e-9 * std::max(1.0, std::abs(evals[k].real()))) {
      throw unsupported_error("lifting_from_linearization: complex spectrum");
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return evals[static_cast<Eigen::Index>(a)].real() >
           evals[static_cast<Eigen::Index>(b)].real();
  });

  Eigen::MatrixXd T(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    Eigen::VectorXd v = evecs.col(static_cast<Eigen::Index>(order[c])).real();
    Eigen::Index pivot = -1;
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      if (std::abs(v[k]) > 1e-9) {
        pivot = k;
        break;
      }
    }
    if (pivot < 0) throw unsupported_error("lifting_from_linearization: null eigenvector");
    T.col(static_cast<Eigen::Index>(c)) = v / v[pivot];
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(T);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (!(smin > 1e-9 * smax)) {
    throw unsupported_error("lifting_from_linearization: defective spectrum");
  }
  return detail::from_eigen(T.inverse());
}

// ---- runtime equivalence of the lifted and original flows ----

// Integrates both systems with matching disturbance samples and returns the
// worst mismatch max_t ||H x(t) - y(t)||_inf. The disturbance callback must be
// a pure function of time.
template <class WFn>
double lifted_simulate_check(const ClosedLoop<double>& cl, const Lifting<double>& lifting,
                             const std::vector<double>& x0, WFn&& wfn, double dt,
                             double tfinal) {
  const Mat<double> hplus = left_inverse(lifting);
  auto fx = [&](const std::vector<double>& x, const std::vector<double>& w) {
    return closed_loop_rhs(cl, x, w);
  };
  auto fy = [&](const std::vector<double>& y, const std::vector<double>& w) {
    return matvec(lifting.H, closed_loop_rhs(cl, matvec(hplus, y), w));
  };
  const std::vector<double> y0 = matvec(lifting.H, x0);
  const Trajectory tx = rk4_simulate(fx, x0, wfn, dt, tfinal);
  const Trajectory ty = rk4_simulate(fy, y0, wfn, dt, tfinal);
  double worst = 0.0;
  for (std::size_t k = 0; k < tx.x.size(); ++k) {
    const std::vector<double> hx = matvec(lifting.H, tx.x[k]);
    for (std::size_t i = 0; i < hx.size(); ++i) {
      worst = std::max(worst, std::abs(hx[i] - ty.x[k][i]));
    }
  }
  return worst;
}

// A state on the boundary of the polytope: sampled from the state box of the
// refined y-box, shifted onto the active face hyperplane, and rejected until
// the lifted point lies inside the box. Sampling the face box directly would
// not work since box samples generally miss the range of H.
inline std::vector<double> polytope_boundary_point(const Lifting<double>& lifting,
                                                   const IntervalVector<double>& ybox,
                                                   std::size_t face, bool upper, Rng& rng) {
  const std::size_t n = lifting.H.c;
  const IntervalVector<double> yref = refine(lifting.N, ybox);
  const IntervalVector<double> xbox = interval_matvec(left_inverse(lifting), yref);
  const auto hf = lifting.H.row(face);
  double norm2 = 0.0;
  for (const double v : hf) norm2 += v * v;
  const double target = upper ? ybox.hi[face] : ybox.lo[face];
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<double> x = rng.uniform_vec(xbox.lo, xbox.hi);
    double hx = 0.0;
    for (std::size_t k = 0; k < n; ++k) hx += hf[k] * x[k];
    const double shift = (target - hx) / norm2;
    for (std::size_t k = 0; k < n; ++k) x[k] += shift * hf[k];
    if (box_contains(ybox, matvec(lifting.H, x), 1e-9)) return x;
  }
  throw std::runtime_error("polytope_boundary_point: no admissible sample found");
}

// ---- low-dimensional polytope geometry for plot data ----

struct PolytopeGraph {
  std::vector<std::vector<double>> vertices;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
};

// Enumerates the vertices of <H, lo, hi> by solving every n-row, lo/hi side
// combination and keeping solutions inside the polytope; edges connect
// vertices sharing n-1 active constraints. Intended for plot data, so only
// state dimensions up to 3 are supported.
inline PolytopeGraph polytope_graph(const Mat<double>& H, const IntervalVector<double>& ybox) {
  const std::size_t m = H.r, n = H.c;
  if (ybox.size() != m) throw std::invalid_argument("polytope_graph: bound length mismatch");
  if (n < 1 || n > 3) throw unsupported_error("polytope_graph: state dimension above 3");

  double yscale = 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    yscale = std::max({yscale, std::abs(ybox.lo[i]), std::abs(ybox.hi[i])});
  }
  const double tol = 1e-9 * yscale;

  PolytopeGraph g;
  std::vector<std::size_t> rows(n);
  auto visit = [&](const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < n; ++j) {
        A(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = H(idx[k], j);
      }
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) return;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
      for (std::size_t k = 0; k < n; ++k) {
        rhs(static_cast<Eigen::Index>(k)) = (mask >> k & 1u) ? ybox.hi[idx[k]] : ybox.lo[idx[k]];
      }
      const Eigen::VectorXd x = lu.solve(rhs);
      std::vector<double> v(n);
      for (std::size_t j = 0; j < n; ++j) v[j] = x(static_cast<Eigen::Index>(j));
      if (!box_contains(ybox, matvec(H, v), tol)) continue;
      bool dup = false;
      for (const auto& u : g.vertices) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) d = std::max(d, std::abs(u[j] - v[j]));
        if (d <= 1e-7 * yscale) {
          dup = true;
          break;
        }
      }
      if (!dup) g.vertices.push_back(std::move(v));
    }
  };
  std::function<void(std::size_t, std::size_t)> choose = [&](std::size_t start, std::size_t k) {
    if (k == n) {
      visit(rows);
      return;
    }
    for (std::size_t i = start; i + (n - k) <= m; ++i) {
      rows[k] = i;
      choose(i + 1, k + 1);
    }
  };
  choose(0, 0);

  // Active (row, side) pairs per vertex, recomputed from H so coincident
  // constraints are all counted.
  std::vector<std::vector<std::pair<std::size_t, int>>> active(g.vertices.size());
  for (std::size_t vi = 0; vi < g.vertices.size(); ++vi) {
    const std::vector<double> hx = matvec(H, g.vertices[vi]);
    for (std::size_t i = 0; i < m; ++i) {
      if (std::abs(hx[i] - ybox.lo[i]) <= 10.0 * tol) active[vi].push_back({i, 0});
      if (std::abs(hx[i] - ybox.hi[i]) <= 10.0 * tol) active[vi].push_back({i, 1});
    }
  }
  for (std::size_t a = 0; a < g.vertices.size(); ++a) {
    for (std::size_t b = a + 1; b < g.vertices.size(); ++b) {
      std::size_t shared = 0;
      for (const auto& pa : active[a]) {
        for (const auto& pb : active[b]) {
          if (pa == pb) ++shared;
        }
      }
      if (shared + 1 >= n) g.edges.push_back({a, b});
    }
  }
  return g;
}

}  // namespace polycert
