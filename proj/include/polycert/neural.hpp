#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "polycert/interval.hpp"
#include "polycert/linalg.hpp"
#include "polycert/rng.hpp"
#include "polycert/scalar.hpp"

// Fully connected ReLU networks and sound affine output relaxations computed
// by backward linear bound propagation (CROWN-style): each layer's
// pre-activation range comes from a full backward pass to the input, unstable
// units get the chord upper bound and an adaptive-slope linear lower bound,
// and the final pass yields affine bounds on the network output over a box.

namespace polycert {

template <class S>
struct Mlp {
  std::vector<Mat<S>> W;               // layer weights, row-major (out x in)
  std::vector<std::vector<S>> b;       // layer biases

  std::size_t depth() const { return W.size(); }
  std::size_t in_dim() const { return W.front().c; }
  std::size_t out_dim() const { return W.back().r; }

  std::vector<S> forward(const std::vector<S>& x) const {
    std::vector<S> a = x;
    for (std::size_t l = 0; l < W.size(); ++l) {
      std::vector<S> z = matvec(W[l], a);
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = z[i] + b[l][i];
      if (l + 1 < W.size()) {
        for (auto& zi : z) zi = relu(zi);
      }
      a = std::move(z);
    }
    return a;
  }
};

struct MlpShape {
  std::vector<std::size_t> sizes;  // e.g. {3, 32, 32, 1}

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += (sizes[l] + 1) * sizes[l + 1];
    return n;
  }
};

template <class S>
Mlp<S> mlp_from_params(const MlpShape& shape, std::span<const S> theta) {
  if (theta.size() < shape.param_count()) {
    throw std::invalid_argument("mlp_from_params: parameter vector too short");
  }
  Mlp<S> net;
  std::size_t k = 0;
  for (std::size_t l = 0; l + 1 < shape.sizes.size(); ++l) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    Mat<S> W(out, in);
    for (std::size_t i = 0; i < out * in; ++i) W.a[i] = theta[k++];
    std::vector<S> bias(out);
    for (std::size_t i = 0; i < out; ++i) bias[i] = theta[k++];
    net.W.push_back(std::move(W));
    net.b.push_back(std::move(bias));
  }
  return net;
}

inline std::vector<double> mlp_to_params(const Mlp<double>& net) {
  std::vector<double> theta;
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    theta.insert(theta.end(), net.W[l].a.begin(), net.W[l].a.end());
    theta.insert(theta.end(), net.b[l].begin(), net.b[l].end());
  }
  return theta;
}

inline MlpShape shape_of(const Mlp<double>& net) {
  MlpShape s;
  s.sizes.push_back(net.in_dim());
  for (const auto& W : net.W) s.sizes.push_back(W.r);
  return s;
}

// He-style uniform initialization scaled by fan-in; biases start at zero.
inline Mlp<double> init_mlp(const MlpShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Mlp<double> net;
  for (std::size_t l = 0; l + 1 < shape.sizes.size(); ++l) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    Mat<double> W(out, in);
    for (auto& w : W.a) w = rng.uniform(-bound, bound);
    net.W.push_back(std::move(W));
    net.b.emplace_back(out, 0.0);
  }
  return net;
}

// A control policy: a shared network preceded by per-output linear
// observation maps. An empty map list means the network reads the full state.
template <class S>
struct Policy {
  Mlp<S> net;
  std::vector<Mat<double>> obs;

  std::size_t state_dim() const { return obs.empty() ? net.in_dim() : obs.front().c; }
  std::size_t out_dim() const {
    return obs.empty() ? net.out_dim() : obs.size() * net.out_dim();
  }

  std::vector<S> forward(const std::vector<S>& x) const {
    if (obs.empty()) return net.forward(x);
    std::vector<S> u;
    u.reserve(out_dim());
    for (const auto& Sj : obs) {
      std::vector<S> o = matvec(Sj, x);
      std::vector<S> uj = net.forward(o);
      u.insert(u.end(), uj.begin(), uj.end());
    }
    return u;
  }
};

template <class S>
Policy<S> policy_from_params(const MlpShape& shape, const std::vector<Mat<double>>& obs,
                             std::span<const S> theta) {
  return Policy<S>{mlp_from_params(shape, theta), obs};
}

// Affine relaxation of a network over a box: c_lo x + d_lo <= net(x) <= c_hi x + d_hi
// for every x in `domain`.
template <class S>
struct AffineBounds {
  Mat<S> c_lo, c_hi;
  std::vector<S> d_lo, d_hi;
  IntervalVector<S> domain;
};

namespace detail {

// Interval range of the affine form lam*x + c over a box.
template <class S>
void affine_range(const Mat<S>& lam_lo, const std::vector<S>& c_lo, const Mat<S>& lam_hi,
                  const std::vector<S>& c_hi, const IntervalVector<S>& box,
                  std::vector<S>& out_lo, std::vector<S>& out_hi) {
  auto [lp, ln] = pos_neg_split(lam_lo);
  auto [hp, hn] = pos_neg_split(lam_hi);
  const std::span<const S> xl{box.lo.data(), box.lo.size()};
  const std::span<const S> xh{box.hi.data(), box.hi.size()};
  out_lo.resize(lam_lo.r);
  out_hi.resize(lam_hi.r);
  for (std::size_t i = 0; i < lam_lo.r; ++i) {
    out_lo[i] = dot(lp.row(i), xl) + dot(ln.row(i), xh) + c_lo[i];
    out_hi[i] = dot(hp.row(i), xh) + dot(hn.row(i), xl) + c_hi[i];
  }
}

// One ReLU layer of the backward pass: rewrites coefficients over the layer
// output as coefficients over its pre-activation, picking per-entry
// relaxations by coefficient sign. Branch predicates read values only.
template <class S>
void relax_layer(Mat<S>& lam, std::vector<S>& c, const std::vector<S>& pre_lo,
                 const std::vector<S>& pre_hi, bool lower_form) {
  for (std::size_t j = 0; j < lam.c; ++j) {
    const double l = val(pre_lo[j]);
    const double u = val(pre_hi[j]);
    if (u <= 0.0) {  // stably inactive
      for (std::size_t i = 0; i < lam.r; ++i) lam(i, j) = S(0.0);
      continue;
    }
    if (l >= 0.0) continue;  // stably active: exact pass-through
    // Unstable: chord above, adaptive-slope line below.
    const S slope = pre_hi[j] / (pre_hi[j] - pre_lo[j]);
    const S icpt = -(pre_lo[j] * pre_hi[j]) / (pre_hi[j] - pre_lo[j]);
    const double alpha = (u >= -l) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < lam.r; ++i) {
      S& lam_ij = lam(i, j);
      const bool coeff_nonneg = val(lam_ij) >= 0.0;
      const bool use_chord = lower_form ? !coeff_nonneg : coeff_nonneg;
      if (use_chord) {
        c[i] = c[i] + lam_ij * icpt;
        lam_ij = lam_ij * slope;
      } else {
        lam_ij = alpha == 1.0 ? lam_ij : S(0.0);
      }
    }
  }
}

// Affine forms over the input bounding layer `target`'s pre-activation,
// propagated backward through all earlier ReLU layers.
template <class S>
void backward_forms(const Mlp<S>& net, std::size_t target,
                    const std::vector<std::vector<S>>& pre_lo,
                    const std::vector<std::vector<S>>& pre_hi, Mat<S>& lam_lo,
                    std::vector<S>& c_lo, Mat<S>& lam_hi, std::vector<S>& c_hi) {
  lam_lo = net.W[target];
  c_lo = net.b[target];
  lam_hi = net.W[target];
  c_hi = net.b[target];
  for (std::size_t l = target; l-- > 0;) {
    relax_layer(lam_lo, c_lo, pre_lo[l], pre_hi[l], true);
    relax_layer(lam_hi, c_hi, pre_lo[l], pre_hi[l], false);
    std::vector<S> blo = matvec(lam_lo, net.b[l]);
    std::vector<S> bhi = matvec(lam_hi, net.b[l]);
    for (std::size_t i = 0; i < c_lo.size(); ++i) {
      c_lo[i] = c_lo[i] + blo[i];
      c_hi[i] = c_hi[i] + bhi[i];
    }
    lam_lo = matmul(lam_lo, net.W[l]);
    lam_hi = matmul(lam_hi, net.W[l]);
  }
}

}  // namespace detail

template <class S>
AffineBounds<S> crown_mlp(const Mlp<S>& net, const IntervalVector<S>& box) {
  if (box.size() != net.in_dim()) throw std::invalid_argument("crown: box dimension mismatch");
  const std::size_t L = net.depth();
  std::vector<std::vector<S>> pre_lo(L), pre_hi(L);
  AffineBounds<S> out;
  for (std::size_t t = 0; t < L; ++t) {
    Mat<S> lam_lo, lam_hi;
    std::vector<S> c_lo, c_hi;
    detail::backward_forms(net, t, pre_lo, pre_hi, lam_lo, c_lo, lam_hi, c_hi);
    if (t + 1 < L) {
      detail::affine_range(lam_lo, c_lo, lam_hi, c_hi, box, pre_lo[t], pre_hi[t]);
    } else {
      out.c_lo = std::move(lam_lo);
      out.c_hi = std::move(lam_hi);
      out.d_lo = std::move(c_lo);
      out.d_hi = std::move(c_hi);
    }
  }
  out.domain = box;
  return out;
}

template <class S>
AffineBounds<S> crown(const Policy<S>& pol, const IntervalVector<S>& box) {
  if (pol.obs.empty()) return crown_mlp(pol.net, box);
  const std::size_t n = pol.state_dim();
  const std::size_t r = pol.net.out_dim();
  AffineBounds<S> out;
  out.c_lo = Mat<S>(pol.obs.size() * r, n);
  out.c_hi = Mat<S>(pol.obs.size() * r, n);
  out.d_lo.resize(pol.obs.size() * r);
  out.d_hi.resize(pol.obs.size() * r);
  for (std::size_t j = 0; j < pol.obs.size(); ++j) {
    const Mat<double>& Sj = pol.obs[j];
    IntervalVector<S> obox = interval_matvec(Sj, box);
    AffineBounds<S> rel = crown_mlp(pol.net, obox);
    // Compose the per-output affine bounds with the exact linear observation.
    Mat<S> row_lo = matmul(rel.c_lo, Sj);
    Mat<S> row_hi = matmul(rel.c_hi, Sj);
    for (std::size_t q = 0; q < r; ++q) {
      for (std::size_t k = 0; k < n; ++k) {
        out.c_lo(j * r + q, k) = row_lo(q, k);
        out.c_hi(j * r + q, k) = row_hi(q, k);
      }
      out.d_lo[j * r + q] = rel.d_lo[q];
      out.d_hi[j * r + q] = rel.d_hi[q];
    }
  }
  out.domain = box;
  return out;
}

// Output box implied by an affine relaxation over a box inside its domain.
template <class S>
IntervalVector<S> interval_output(const AffineBounds<S>& rel, const IntervalVector<S>& box) {
  if (box.size() != rel.domain.size()) {
    throw std::invalid_argument("interval_output: dimension mismatch");
  }
  for (std::size_t i = 0; i < box.size(); ++i) {
    if (val(box.lo[i]) < val(rel.domain.lo[i]) - 1e-12 ||
        val(box.hi[i]) > val(rel.domain.hi[i]) + 1e-12) {
      throw std::invalid_argument("interval_output: box outside relaxation domain");
    }
  }
  std::vector<S> u_lo, u_hi;
  detail::affine_range(rel.c_lo, rel.d_lo, rel.c_hi, rel.d_hi, box, u_lo, u_hi);
  return IntervalVector<S>(std::move(u_lo), std::move(u_hi));
}

inline Policy<Var> lift(const Policy<double>& p) {
  Policy<Var> out;
  out.obs = p.obs;
  for (const auto& W : p.net.W) out.net.W.push_back(lift(W));
  for (const auto& b : p.net.b) out.net.b.push_back(lift(b));
  return out;
}

}  // namespace polycert
