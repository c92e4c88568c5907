#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "polycert/interval.hpp"

// Open-loop control systems xdot = f(x, u, w) with interval Jacobian
// evaluators, mixed-Jacobian mean value bounds, disturbance partitioning,
// and a fixed-step RK4 simulator.

namespace polycert {

template <class S>
struct OpenLoopSystem {
  std::size_t n = 0;  // states
  std::size_t p = 0;  // inputs
  std::size_t q = 0;  // disturbances

  using Vec = std::vector<S>;
  using Box = IntervalVector<S>;

  std::function<Vec(const Vec&, const Vec&, const Vec&)> f;
  std::function<IntervalMatrix<S>(const Box&, const Box&, const Box&)> jac_x;
  std::function<IntervalMatrix<S>(const Box&, const Box&, const Box&)> jac_u;
  std::function<IntervalMatrix<S>(const Box&, const Box&, const Box&)> jac_w;
};

enum class Corner { lower, upper };

struct AnchorCorner {
  Corner x = Corner::lower;
  Corner u = Corner::lower;
  Corner w = Corner::lower;
};

template <class S>
struct MixedJacobian {
  IntervalMatrix<S> mx, mu, mw;
  std::vector<S> x0, u0, w0;
};

namespace detail {

template <class S>
std::vector<S> corner_point(const IntervalVector<S>& b, Corner c) {
  return c == Corner::lower ? b.lo : b.hi;
}

// Coordinates before index j collapse onto the anchor; j and later stay whole.
template <class S>
IntervalVector<S> anchor_before(const IntervalVector<S>& b, const std::vector<S>& a,
                                std::size_t j) {
  IntervalVector<S> out = b;
  for (std::size_t k = 0; k < j && k < out.size(); ++k) {
    out.lo[k] = a[k];
    out.hi[k] = a[k];
  }
  return out;
}

}  // namespace detail

// Interval matrices (M_x, M_u, M_w) and anchor such that for all points in
// the boxes,
//   f(x,u,w) in f(x0,u0,w0) + M_x (x - x0) + M_u (u - u0) + M_w (w - w0).
// Column j of each block is the interval partial derivative evaluated with
// every coordinate earlier in the (x, u, w) ordering pinned to the anchor,
// which is the componentwise mean value enclosure along that ordering.
template <class S>
MixedJacobian<S> mixed_jacobian_bound(const OpenLoopSystem<S>& sys, const IntervalVector<S>& x,
                                      const IntervalVector<S>& u, const IntervalVector<S>& w,
                                      AnchorCorner corner = {}) {
  if (x.size() != sys.n || u.size() != sys.p || w.size() != sys.q) {
    throw std::invalid_argument("mixed_jacobian_bound: box dims do not match system");
  }
  MixedJacobian<S> out;
  out.x0 = detail::corner_point(x, corner.x);
  out.u0 = detail::corner_point(u, corner.u);
  out.w0 = detail::corner_point(w, corner.w);

  out.mx = IntervalMatrix<S>(Mat<S>(sys.n, sys.n), Mat<S>(sys.n, sys.n));
  for (std::size_t j = 0; j < sys.n; ++j) {
    const IntervalMatrix<S> jac = sys.jac_x(detail::anchor_before(x, out.x0, j), u, w);
    for (std::size_t i = 0; i < sys.n; ++i) out.mx.set(i, j, jac.get(i, j));
  }

  const IntervalVector<S> xd = IntervalVector<S>::point(out.x0);
  out.mu = IntervalMatrix<S>(Mat<S>(sys.n, sys.p), Mat<S>(sys.n, sys.p));
  for (std::size_t j = 0; j < sys.p; ++j) {
    const IntervalMatrix<S> jac = sys.jac_u(xd, detail::anchor_before(u, out.u0, j), w);
    for (std::size_t i = 0; i < sys.n; ++i) out.mu.set(i, j, jac.get(i, j));
  }

  const IntervalVector<S> ud = IntervalVector<S>::point(out.u0);
  out.mw = IntervalMatrix<S>(Mat<S>(sys.n, sys.q), Mat<S>(sys.n, sys.q));
  for (std::size_t j = 0; j < sys.q; ++j) {
    const IntervalMatrix<S> jac = sys.jac_w(xd, ud, detail::anchor_before(w, out.w0, j));
    for (std::size_t i = 0; i < sys.n; ++i) out.mw.set(i, j, jac.get(i, j));
  }
  return out;
}

// ---- disturbance sets ----

struct DisturbanceSpec {
  IntervalVector<double> box;
  std::vector<IntervalVector<double>> partition;

  static DisturbanceSpec none() {
    DisturbanceSpec d;
    d.box = IntervalVector<double>(std::vector<double>{}, std::vector<double>{});
    d.partition = {d.box};
    return d;
  }

  static DisturbanceSpec whole(IntervalVector<double> b) {
    DisturbanceSpec d;
    d.box = std::move(b);
    d.partition = {d.box};
    return d;
  }

  // Splits every coordinate whose interval straddles zero into its negative
  // and positive halves; enumeration is odometer order, last coordinate
  // fastest.
  static DisturbanceSpec sign_split(IntervalVector<double> b) {
    DisturbanceSpec d;
    d.box = std::move(b);
    std::vector<std::vector<Interval<double>>> choices(d.box.size());
    for (std::size_t i = 0; i < d.box.size(); ++i) {
      const double lo = d.box.lo[i], hi = d.box.hi[i];
      if (lo < 0.0 && hi > 0.0) {
        choices[i] = {{lo, 0.0}, {0.0, hi}};
      } else {
        choices[i] = {{lo, hi}};
      }
    }
    std::vector<std::size_t> idx(d.box.size(), 0);
    while (true) {
      IntervalVector<double> sub = d.box;
      for (std::size_t i = 0; i < idx.size(); ++i) sub.set(i, choices[i][idx[i]]);
      d.partition.push_back(std::move(sub));
      std::size_t i = idx.size();
      while (i > 0) {
        --i;
        if (++idx[i] < choices[i].size()) break;
        idx[i] = 0;
        if (i == 0) return d;
      }
      if (idx.empty()) return d;
    }
  }
};

// ---- worst case over disturbance partitions ----

// A pair of lower/upper component vectors; unlike IntervalVector no ordering
// between the two is required.
template <class S>
struct FieldBounds {
  std::vector<S> lo, hi;
};

template <class S>
FieldBounds<S> partition_minmax_field(const std::vector<FieldBounds<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("partition_minmax_field: no partitions");
  FieldBounds<S> out = parts[0];
  for (std::size_t k = 1; k < parts.size(); ++k) {
    if (parts[k].lo.size() != out.lo.size() || parts[k].hi.size() != out.hi.size()) {
      throw std::invalid_argument("partition_minmax_field: size mismatch");
    }
    for (std::size_t i = 0; i < out.lo.size(); ++i) out.lo[i] = min(out.lo[i], parts[k].lo[i]);
    for (std::size_t i = 0; i < out.hi.size(); ++i) out.hi[i] = max(out.hi[i], parts[k].hi[i]);
  }
  return out;
}

// ---- simulation ----

struct Trajectory {
  std::vector<double> t;
  std::vector<std::vector<double>> x;
};

// Classical RK4 with fixed step; the disturbance is sampled once per step
// and held constant across the four stages.
template <class Field, class WFn>
Trajectory rk4_simulate(Field&& f, const std::vector<double>& x0, WFn&& wfn, double dt,
                        double tfinal) {
  if (!(dt > 0.0)) throw config_error("simulate: dt must be positive");
  const std::size_t steps =
      tfinal > 0.0 ? static_cast<std::size_t>(std::ceil(tfinal / dt - 1e-9)) : 0;
  const std::size_t n = x0.size();

  Trajectory traj;
  traj.t.reserve(steps + 1);
  traj.x.reserve(steps + 1);
  traj.t.push_back(0.0);
  traj.x.push_back(x0);

  std::vector<double> x = x0, xs(n);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::vector<double> w = wfn(static_cast<double>(k) * dt);
    const std::vector<double> k1 = f(x, w);
    for (std::size_t i = 0; i < n; ++i) xs[i] = x[i] + 0.5 * dt * k1[i];
    const std::vector<double> k2 = f(xs, w);
    for (std::size_t i = 0; i < n; ++i) xs[i] = x[i] + 0.5 * dt * k2[i];
    const std::vector<double> k3 = f(xs, w);
    for (std::size_t i = 0; i < n; ++i) xs[i] = x[i] + dt * k3[i];
    const std::vector<double> k4 = f(xs, w);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (!std::isfinite(x[i])) throw std::runtime_error("simulate: non-finite state");
    }
    traj.t.push_back(static_cast<double>(k + 1) * dt);
    traj.x.push_back(x);
  }
  return traj;
}

// ---- builtin models ----

template <class S>
OpenLoopSystem<S> make_linear(const Mat<double>& A, const Mat<double>& B, const Mat<double>& E) {
  if (A.r != A.c || B.r != A.r || (E.a.size() > 0 && E.r != A.r)) {
    throw std::invalid_argument("make_linear: inconsistent shapes");
  }
  OpenLoopSystem<S> sys;
  sys.n = A.r;
  sys.p = B.c;
  sys.q = E.c;
  const Mat<S> As = mat_cast<S>(A), Bs = mat_cast<S>(B), Es = mat_cast<S>(E);
  sys.f = [As, Bs, Es](const std::vector<S>& x, const std::vector<S>& u,
                       const std::vector<S>& w) {
    std::vector<S> out = vec_add(matvec(As, x), matvec(Bs, u));
    if (Es.c > 0) out = vec_add(out, matvec(Es, w));
    return out;
  };
  using Box = IntervalVector<S>;
  sys.jac_x = [As](const Box&, const Box&, const Box&) { return IntervalMatrix<S>::point(As); };
  sys.jac_u = [Bs](const Box&, const Box&, const Box&) { return IntervalMatrix<S>::point(Bs); };
  sys.jac_w = [Es](const Box&, const Box&, const Box&) { return IntervalMatrix<S>::point(Es); };
  return sys;
}

template <class S>
OpenLoopSystem<S> make_double_integrator() {
  return make_linear<S>(Mat<double>::from_rows({{0.0, 1.0}, {0.0, 0.0}}),
                        Mat<double>::from_rows({{0.0}, {1.0}}), Mat<double>(2, 0));
}

// Segway: state (phi, v, phidot) with input u. Eleven multiplicative
// disturbances (1 + w_k), one per coefficient in reading order; the constant
// 208.3 and the second denominator stay exact.
template <class S>
OpenLoopSystem<S> make_segway() {
  OpenLoopSystem<S> sys;
  sys.n = 3;
  sys.p = 1;
  sys.q = 11;

  sys.f = [](const std::vector<S>& x, const std::vector<S>& u, const std::vector<S>& w) {
    const S phi = x[0], v = x[1], r = x[2], uu = u[0];
    const S c = cos(phi), s = sin(phi);
    const S a1 = S(1.8) * (S(1.0) + w[0]);
    const S a2 = S(11.5) * (S(1.0) + w[1]);
    const S a3 = S(9.8) * (S(1.0) + w[2]);
    const S a4 = S(10.9) * (S(1.0) + w[3]);
    const S a5 = S(68.4) * (S(1.0) + w[4]);
    const S a6 = S(1.2) * (S(1.0) + w[5]);
    const S a7 = S(24.7) * (S(1.0) + w[6]);
    const S b1 = S(9.3) * (S(1.0) + w[7]);
    const S b2 = S(58.8) * (S(1.0) + w[8]);
    const S b3 = S(38.6) * (S(1.0) + w[9]);
    const S b4 = S(234.5) * (S(1.0) + w[10]);
    const S n1 = c * (a2 * v + a3 * s - a1 * uu) - a4 * uu + a5 * v - a6 * r * r * s;
    const S n2 = (b1 * uu - b2 * v) * c + b3 * uu - b4 * v - s * (S(208.3) + r * r * c);
    return std::vector<S>{r, n1 / (c - a7), n2 / (c * c - S(24.7))};
  };

  using Box = IntervalVector<S>;
  using IM = IntervalMatrix<S>;
  using I = Interval<S>;

  struct Common {
    I c, s, c2, s2, vv, r, uu;
    I a1, a2, a3, a4, a5, a6, a7, b1, b2, b3, b4;
    I n1, d1, d1sq, n2, d2, d2sq;
  };
  auto common = [](const Box& x, const Box& u, const Box& w) {
    Common z;
    const I phi = x.get(0);
    z.c = cos(phi);
    z.s = sin(phi);
    z.c2 = cos(S(2.0) * phi);
    z.s2 = sin(S(2.0) * phi);
    z.vv = x.get(1);
    z.r = x.get(2);
    z.uu = u.get(0);
    const I one = I::point(S(1.0));
    z.a1 = S(1.8) * (one + w.get(0));
    z.a2 = S(11.5) * (one + w.get(1));
    z.a3 = S(9.8) * (one + w.get(2));
    z.a4 = S(10.9) * (one + w.get(3));
    z.a5 = S(68.4) * (one + w.get(4));
    z.a6 = S(1.2) * (one + w.get(5));
    z.a7 = S(24.7) * (one + w.get(6));
    z.b1 = S(9.3) * (one + w.get(7));
    z.b2 = S(58.8) * (one + w.get(8));
    z.b3 = S(38.6) * (one + w.get(9));
    z.b4 = S(234.5) * (one + w.get(10));
    z.n1 = z.c * (z.a2 * z.vv + z.a3 * z.s - z.a1 * z.uu) - z.a4 * z.uu + z.a5 * z.vv -
           z.a6 * sqr(z.r) * z.s;
    z.d1 = z.c - z.a7;
    z.d1sq = sqr(z.d1);
    z.n2 = (z.b1 * z.uu - z.b2 * z.vv) * z.c + z.b3 * z.uu - z.b4 * z.vv -
           z.s * (I::point(S(208.3)) + sqr(z.r) * z.c);
    z.d2 = sqr(z.c) - I::point(S(24.7));
    z.d2sq = sqr(z.d2);
    return z;
  };

  sys.jac_x = [common](const Box& x, const Box& u, const Box& w) {
    const Common z = common(x, u, w);
    IM jac(Mat<S>(3, 3), Mat<S>(3, 3));
    jac.set(0, 2, I::point(S(1.0)));
    const I dn1dphi = z.s * (z.a1 * z.uu - z.a2 * z.vv) + z.a3 * z.c2 - z.a6 * sqr(z.r) * z.c;
    jac.set(1, 0, dn1dphi / z.d1 + z.n1 * z.s / z.d1sq);
    jac.set(1, 1, (z.a2 * z.c + z.a5) / z.d1);
    jac.set(1, 2, (S(-2.0) * (z.a6 * (z.r * z.s))) / z.d1);
    const I dn2dphi = (z.b2 * z.vv - z.b1 * z.uu) * z.s - S(208.3) * z.c - sqr(z.r) * z.c2;
    jac.set(2, 0, dn2dphi / z.d2 + z.n2 * z.s2 / z.d2sq);
    jac.set(2, 1, (-(z.b2 * z.c) - z.b4) / z.d2);
    jac.set(2, 2, -(z.r * z.s2) / z.d2);
    return jac;
  };

  sys.jac_u = [common](const Box& x, const Box& u, const Box& w) {
    const Common z = common(x, u, w);
    IM jac(Mat<S>(3, 1), Mat<S>(3, 1));
    jac.set(1, 0, (-(z.a1 * z.c) - z.a4) / z.d1);
    jac.set(2, 0, (z.b1 * z.c + z.b3) / z.d2);
    return jac;
  };

  sys.jac_w = [common](const Box& x, const Box& u, const Box& w) {
    const Common z = common(x, u, w);
    IM jac(Mat<S>(3, 11), Mat<S>(3, 11));
    jac.set(1, 0, (S(-1.8) * (z.uu * z.c)) / z.d1);
    jac.set(1, 1, (S(11.5) * (z.vv * z.c)) / z.d1);
    jac.set(1, 2, (S(4.9) * z.s2) / z.d1);
    jac.set(1, 3, (S(-10.9) * z.uu) / z.d1);
    jac.set(1, 4, (S(68.4) * z.vv) / z.d1);
    jac.set(1, 5, (S(-1.2) * (sqr(z.r) * z.s)) / z.d1);
    jac.set(1, 6, (S(24.7) * z.n1) / z.d1sq);
    jac.set(2, 7, (S(9.3) * (z.uu * z.c)) / z.d2);
    jac.set(2, 8, (S(-58.8) * (z.vv * z.c)) / z.d2);
    jac.set(2, 9, (S(38.6) * z.uu) / z.d2);
    jac.set(2, 10, (S(-234.5) * z.vv) / z.d2);
    return jac;
  };

  return sys;
}

// Platoon of N vehicles, state (p_1, v_1, ..., p_N, v_N):
//   pdot_j = v_j,  vdot_j = sigma(u_j) (1 + w_j),  sigma(u) = 10 tanh(u / 10).
template <class S>
OpenLoopSystem<S> make_platoon(std::size_t vehicles) {
  if (vehicles < 1) throw config_error("platoon: need at least one vehicle");
  OpenLoopSystem<S> sys;
  sys.n = 2 * vehicles;
  sys.p = vehicles;
  sys.q = vehicles;

  sys.f = [vehicles](const std::vector<S>& x, const std::vector<S>& u, const std::vector<S>& w) {
    std::vector<S> out(2 * vehicles, S(0.0));
    for (std::size_t j = 0; j < vehicles; ++j) {
      out[2 * j] = x[2 * j + 1];
      out[2 * j + 1] = S(10.0) * tanh(u[j] / S(10.0)) * (S(1.0) + w[j]);
    }
    return out;
  };

  using Box = IntervalVector<S>;
  using IM = IntervalMatrix<S>;
  using I = Interval<S>;

  sys.jac_x = [vehicles](const Box&, const Box&, const Box&) {
    Mat<S> m(2 * vehicles, 2 * vehicles);
    for (std::size_t j = 0; j < vehicles; ++j) m(2 * j, 2 * j + 1) = S(1.0);
    return IM::point(m);
  };
  sys.jac_u = [vehicles](const Box&, const Box& u, const Box& w) {
    IM jac(Mat<S>(2 * vehicles, vehicles), Mat<S>(2 * vehicles, vehicles));
    const I one = I::point(S(1.0));
    const I ten = I::point(S(10.0));
    for (std::size_t j = 0; j < vehicles; ++j) {
      const I t = tanh(u.get(j) / ten);
      jac.set(2 * j + 1, j, (one - sqr(t)) * (one + w.get(j)));
    }
    return jac;
  };
  sys.jac_w = [vehicles](const Box&, const Box& u, const Box&) {
    IM jac(Mat<S>(2 * vehicles, vehicles), Mat<S>(2 * vehicles, vehicles));
    const I ten = I::point(S(10.0));
    for (std::size_t j = 0; j < vehicles; ++j) {
      jac.set(2 * j + 1, j, S(10.0) * tanh(u.get(j) / ten));
    }
    return jac;
  };

  return sys;
}

// Observation maps S_j (6 x 2N) so vehicle j's input is net(S_j x): every
// third vehicle sees (x_j, x_{j-3} - x_j, x_j - x_{j+3}), the others see
// (0, x_{j-1} - x_j, x_j - x_{j+1}); out-of-range neighbours read as zero.
inline std::vector<Mat<double>> platoon_observation_maps(std::size_t vehicles) {
  if (vehicles < 1) throw config_error("platoon: need at least one vehicle");
  std::vector<Mat<double>> maps;
  maps.reserve(vehicles);
  for (std::size_t j = 1; j <= vehicles; ++j) {
    Mat<double> m(6, 2 * vehicles);
    auto add = [&](std::size_t pair, std::size_t vehicle1, double sign) {
      if (vehicle1 < 1 || vehicle1 > vehicles) return;
      m(2 * pair, 2 * (vehicle1 - 1)) += sign;
      m(2 * pair + 1, 2 * (vehicle1 - 1) + 1) += sign;
    };
    if (j % 3 == 0) {
      add(0, j, 1.0);
      add(1, j - 3, 1.0);
      add(1, j, -1.0);
      add(2, j, 1.0);
      add(2, j + 3, -1.0);
    } else {
      add(1, j - 1, 1.0);
      add(1, j, -1.0);
      add(2, j, 1.0);
      add(2, j + 1, -1.0);
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace polycert
