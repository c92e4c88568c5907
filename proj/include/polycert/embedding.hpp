#pragma once

#include <cstddef>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "polycert/dynamics.hpp"
#include "polycert/interval.hpp"
#include "polycert/linalg.hpp"
#include "polycert/neural.hpp"
#include "polycert/parallel.hpp"
#include "polycert/scalar.hpp"

// Closed-loop interval inclusion for neural-network feedback. An affine
// relaxation of the controller supplies control bounds plus coupling rows that
// fold into componentwise mean-value Jacobian bounds of the open-loop field.
// Evaluating the inclusion on the faces of a box yields an embedding field
// whose sign pattern at a single point decides robust forward invariance.

namespace polycert {

template <class S>
struct ClosedLoop {
  OpenLoopSystem<S> sys;
  Policy<S> policy;
  DisturbanceSpec disturbance;
};

template <class S>
std::vector<S> closed_loop_rhs(const ClosedLoop<S>& cl, const std::vector<S>& x,
                               const std::vector<S>& w) {
  return cl.sys.f(x, cl.policy.forward(x), w);
}

// Controller relaxation over a fixed state box. Disturbance partitions share
// the box, so this is computed once per face and reused across partitions.
template <class S>
struct ControlRelaxation {
  AffineBounds<S> relax;
  Mat<S> c_lo_t, c_hi_t;
  IntervalVector<S> ubox;
};

template <class S>
ControlRelaxation<S> control_relaxation(const Policy<S>& policy, const IntervalVector<S>& xbox) {
  ControlRelaxation<S> ctrl;
  ctrl.relax = crown(policy, xbox);
  ctrl.ubox = interval_output(ctrl.relax, xbox);
  ctrl.c_lo_t = transpose(ctrl.relax.c_lo);
  ctrl.c_hi_t = transpose(ctrl.relax.c_hi);
  return ctrl;
}

// Everything the per-row assembly needs on a fixed state box and disturbance
// sub-box: controller relaxation, control bounds, mean-value Jacobian bounds
// anchored at the lower corner, and the field value at that anchor.
template <class S>
struct InclusionParts {
  IntervalVector<S> xbox;
  AffineBounds<S> relax;
  Mat<S> c_lo_t, c_hi_t;
  IntervalVector<S> ubox;
  MixedJacobian<S> mj;
  std::vector<S> f0;
  std::vector<S> wdiff;
};

template <class S>
InclusionParts<S> inclusion_parts(const ClosedLoop<S>& cl, const IntervalVector<S>& xbox,
                                  const IntervalVector<S>& wbox,
                                  const ControlRelaxation<S>& ctrl) {
  InclusionParts<S> parts;
  parts.xbox = xbox;
  parts.relax = ctrl.relax;
  parts.ubox = ctrl.ubox;
  parts.mj = mixed_jacobian_bound(cl.sys, xbox, parts.ubox, wbox);
  parts.c_lo_t = ctrl.c_lo_t;
  parts.c_hi_t = ctrl.c_hi_t;
  parts.f0 = cl.sys.f(parts.mj.x0, parts.mj.u0, parts.mj.w0);
  parts.wdiff = vec_sub(wbox.hi, wbox.lo);
  return parts;
}

template <class S>
InclusionParts<S> inclusion_parts(const ClosedLoop<S>& cl, const IntervalVector<S>& xbox,
                                  const IntervalVector<S>& wbox) {
  return inclusion_parts(cl, xbox, wbox, control_relaxation(cl.policy, xbox));
}

// Lower bound of output row i of the closed-loop field over the box pair.
template <class S>
S inclusion_row_lower(const InclusionParts<S>& P, std::size_t i) {
  const std::size_t n = P.xbox.size();
  const auto [mup, mun] = pos_neg_split(P.mj.mu.lo.row(i));
  const auto mups = as_span(mup), muns = as_span(mun);
  const auto mxrow = P.mj.mx.lo.row(i);

  std::vector<S> h(n);
  for (std::size_t j = 0; j < n; ++j) {
    h[j] = mxrow[j] + dot(mups, P.c_lo_t.row(j)) + dot(muns, P.c_hi_t.row(j));
  }
  const auto [hp, hn] = pos_neg_split(as_span(h));
  std::vector<S> dcoef(n);
  for (std::size_t j = 0; j < n; ++j) dcoef[j] = hp[j] - mxrow[j];

  S out = dot(as_span(dcoef), as_span(P.xbox.lo)) + dot(as_span(hn), as_span(P.xbox.hi));
  const auto mwsplit = pos_neg_split(P.mj.mw.lo.row(i));
  out = out + dot(as_span(mwsplit.second), as_span(P.wdiff));
  out = out - dot(P.mj.mu.lo.row(i), as_span(P.mj.u0));
  out = out + dot(mups, as_span(P.relax.d_lo)) + dot(muns, as_span(P.relax.d_hi));
  return out + P.f0[i];
}

// Upper bound of output row i; mirrors the lower form with the roles of the
// relaxation sides and endpoint selections exchanged.
template <class S>
S inclusion_row_upper(const InclusionParts<S>& P, std::size_t i) {
  const std::size_t n = P.xbox.size();
  const auto [mup, mun] = pos_neg_split(P.mj.mu.hi.row(i));
  const auto mups = as_span(mup), muns = as_span(mun);
  const auto mxrow = P.mj.mx.hi.row(i);

  std::vector<S> h(n);
  for (std::size_t j = 0; j < n; ++j) {
    h[j] = mxrow[j] + dot(mups, P.c_hi_t.row(j)) + dot(muns, P.c_lo_t.row(j));
  }
  const auto [hp, hn] = pos_neg_split(as_span(h));
  std::vector<S> dcoef(n);
  for (std::size_t j = 0; j < n; ++j) dcoef[j] = hn[j] - mxrow[j];

  S out = dot(as_span(dcoef), as_span(P.xbox.lo)) + dot(as_span(hp), as_span(P.xbox.hi));
  const auto mwsplit = pos_neg_split(P.mj.mw.hi.row(i));
  out = out + dot(as_span(mwsplit.first), as_span(P.wdiff));
  out = out - dot(P.mj.mu.hi.row(i), as_span(P.mj.u0));
  out = out + dot(mups, as_span(P.relax.d_hi)) + dot(muns, as_span(P.relax.d_lo));
  return out + P.f0[i];
}

// Componentwise bounds on the closed-loop field over a state box and a single
// disturbance box.
template <class S>
FieldBounds<S> inclusion(const ClosedLoop<S>& cl, const IntervalVector<S>& xbox,
                         const IntervalVector<S>& wbox) {
  const auto parts = inclusion_parts(cl, xbox, wbox);
  const std::size_t n = cl.sys.n;
  FieldBounds<S> out{std::vector<S>(n, S(0.0)), std::vector<S>(n, S(0.0))};
  for (std::size_t i = 0; i < n; ++i) {
    out.lo[i] = inclusion_row_lower(parts, i);
    out.hi[i] = inclusion_row_upper(parts, i);
  }
  return out;
}

// One component of the embedding field: the worst case over disturbance
// partitions of the inclusion evaluated on face i of the box (the face
// degenerate at the lower endpoint for the lower component, at the upper
// endpoint for the upper component).
template <class S>
S embedding_face_component(const ClosedLoop<S>& cl, const IntervalVector<S>& xbox,
                           std::size_t i, bool upper) {
  const IntervalVector<S> face =
      upper ? IntervalVector<S>(replace_entry(xbox.lo, i, xbox.hi), xbox.hi)
            : IntervalVector<S>(xbox.lo, replace_entry(xbox.hi, i, xbox.lo));
  if (cl.disturbance.partition.empty()) {
    throw std::invalid_argument("embedding: disturbance has no partitions");
  }
  const ControlRelaxation<S> ctrl = control_relaxation(cl.policy, face);
  bool first = true;
  S acc(0.0);
  for (const auto& wsub : cl.disturbance.partition) {
    const auto parts = inclusion_parts(cl, face, box_cast<S>(wsub), ctrl);
    const S v = upper ? inclusion_row_upper(parts, i) : inclusion_row_lower(parts, i);
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
FieldBounds<S> embedding_field(const ClosedLoop<S>& cl, const IntervalVector<S>& xbox) {
  const std::size_t n = cl.sys.n;
  if (xbox.size() != n) throw std::invalid_argument("embedding_field: box dimension mismatch");
  FieldBounds<S> out{std::vector<S>(n, S(0.0)), std::vector<S>(n, S(0.0))};
  auto eval_face = [&](std::size_t f) {
    const std::size_t i = f % n;
    const bool upper = f >= n;
    const S v = embedding_face_component(cl, xbox, i, upper);
    (upper ? out.hi[i] : out.lo[i]) = v;
  };
  if constexpr (std::is_same_v<S, double>) {
    parallel_for(2 * n, eval_face);
  } else {
    for (std::size_t f = 0; f < 2 * n; ++f) eval_face(f);
  }
  return out;
}

struct Certificate {
  bool certified = false;
  std::vector<double> lower_field, upper_field;
  double margin = 0.0;
};

inline Certificate certificate_from_field(const FieldBounds<double>& E) {
  Certificate c;
  c.lower_field = E.lo;
  c.upper_field = E.hi;
  c.margin = se_margin(E.lo, E.hi);
  c.certified = c.margin >= 0.0;
  return c;
}

inline Certificate check_box_invariant(const ClosedLoop<double>& cl,
                                       const IntervalVector<double>& xbox) {
  return certificate_from_field(embedding_field(cl, xbox));
}

}  // namespace polycert
