#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "polycert/autodiff.hpp"
#include "polycert/dynamics.hpp"
#include "polycert/embedding.hpp"
#include "polycert/interval.hpp"
#include "polycert/lifted.hpp"
#include "polycert/linalg.hpp"
#include "polycert/neural.hpp"
#include "polycert/rng.hpp"
#include "polycert/scalar.hpp"

// Trains the controller network together with the lifting offset eta until
// the lifted embedding field certifies the polytope. The loss pushes every
// field component past a slack epsilon; an optional imitation term anchors
// the controller to a reference gain. Each iteration evaluates the loss on
// tracked scalars, takes one ADAM step, and checks the certificate on plain
// doubles, so a certified result never rests on the differentiation path.

namespace polycert {

// Hinge penalty on the embedding field: zero exactly when every lower
// component clears +epsilon and every upper component clears -epsilon.
template <class S>
S invariance_loss(const FieldBounds<S>& field, double epsilon) {
  S acc(0.0);
  for (const auto& e : field.hi) acc = acc + relu(e + epsilon);
  for (const auto& e : field.lo) acc = acc + relu(epsilon - e);
  return acc;
}

// Mean squared error of the policy against a linear gain over a batch.
template <class S>
S imitation_loss(const Policy<S>& pol, const Mat<double>& K,
                 const std::vector<std::vector<double>>& xs) {
  if (xs.empty()) throw std::invalid_argument("imitation_loss: empty batch");
  S acc(0.0);
  for (const auto& x : xs) {
    const std::vector<S> xv(x.begin(), x.end());
    const std::vector<S> u = pol.forward(xv);
    const std::vector<double> target = matvec(K, x);
    if (u.size() != target.size()) {
      throw std::invalid_argument("imitation_loss: gain/output dimension mismatch");
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
      const S r = u[i] - target[i];
      acc = acc + r * r;
    }
  }
  return acc / static_cast<double>(xs.size());
}

struct ImitationSpec {
  Mat<double> K;
  IntervalVector<double> sample_box;
  std::size_t batch = 1000;
};

struct TrainSettings {
  double lambda = 1.0;
  double epsilon = 0.02;
  std::size_t max_iters = 20000;
  AdamParams adam{};
  std::optional<ImitationSpec> imitation;
  std::uint64_t seed = 0;
};

// Everything that defines one training instance. theta0 holds the flattened
// network parameters followed by the eta entries in row-major order.
struct TrainProblem {
  OpenLoopSystem<double> sys_d;
  OpenLoopSystem<Var> sys_v;
  std::vector<Mat<double>> obs;
  DisturbanceSpec disturbance;
  Mat<double> H;
  IntervalVector<double> ybox;
  MlpShape shape;
  std::vector<double> theta0;
};

inline std::vector<double> pack_params(const Mlp<double>& net, const Mat<double>& eta) {
  std::vector<double> theta = mlp_to_params(net);
  theta.insert(theta.end(), eta.a.begin(), eta.a.end());
  return theta;
}

template <class S>
struct Assembled {
  Policy<S> policy;
  Lifting<S> lifting;
};

template <class S>
Assembled<S> assemble(const TrainProblem& pb, std::span<const S> theta) {
  const std::size_t np = pb.shape.param_count();
  const std::size_t n = pb.H.c, m = pb.H.r;
  if (theta.size() != np + n * (m - n)) {
    throw std::invalid_argument("assemble: parameter vector size mismatch");
  }
  Policy<S> pol{mlp_from_params<S>(pb.shape, theta), pb.obs};
  Mat<S> eta(n, m - n);
  for (std::size_t i = 0; i < eta.a.size(); ++i) eta.a[i] = theta[np + i];
  return Assembled<S>{std::move(pol),
                      Lifting<S>{pb.H, pinv_left(pb.H), nullspace_basis(pb.H), std::move(eta)}};
}

struct LossParts {
  double total = 0.0;
  double invariance = 0.0;
  double data = 0.0;
};

// Total loss and its gradient at theta. Each face of the lifted field gets
// its own tape so peak memory stays at one face; inactive hinge terms have an
// identically zero gradient and skip the backward pass.
inline LossParts loss_and_grad(const TrainProblem& pb, const TrainSettings& ts,
                               const std::vector<double>& theta,
                               const std::vector<std::vector<double>>& batch,
                               std::vector<double>& grad) {
  grad.assign(theta.size(), 0.0);
  LossParts parts;
  const std::size_t m = pb.H.r;
  for (std::size_t f = 0; f < 2 * m; ++f) {
    Tape tape;
    TapeScope scope(tape);
    const std::vector<Var> tv = tape.leaves(theta);
    const Assembled<Var> built = assemble<Var>(pb, tv);
    const ClosedLoop<Var> cl{pb.sys_v, built.policy, pb.disturbance};
    const Var comp = lifted_face_component(cl, built.lifting, pb.ybox, f % m, f >= m);
    const Var term = f >= m ? relu(comp + ts.epsilon) : relu(ts.epsilon - comp);
    parts.invariance += val(term);
    if (ts.lambda != 0.0 && val(term) > 0.0) {
      const std::vector<double> g = tape.gradient(term, tv);
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += ts.lambda * g[j];
    }
  }
  if (ts.imitation) {
    Tape tape;
    TapeScope scope(tape);
    const std::vector<Var> tv = tape.leaves(theta);
    const Assembled<Var> built = assemble<Var>(pb, tv);
    const Var ld = imitation_loss(built.policy, ts.imitation->K, batch);
    parts.data = val(ld);
    const std::vector<double> g = tape.gradient(ld, tv);
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
  }
  parts.total = parts.data + ts.lambda * parts.invariance;
  return parts;
}

// Same loss on plain doubles; the finite-difference reference in tests.
inline double total_loss(const TrainProblem& pb, const TrainSettings& ts,
                         const std::vector<double>& theta,
                         const std::vector<std::vector<double>>& batch) {
  const Assembled<double> built = assemble<double>(pb, theta);
  const ClosedLoop<double> cl{pb.sys_d, built.policy, pb.disturbance};
  const FieldBounds<double> field = lifted_embedding_field(cl, built.lifting, pb.ybox);
  double out = ts.lambda * invariance_loss(field, ts.epsilon);
  if (ts.imitation) out += imitation_loss(built.policy, ts.imitation->K, batch);
  return out;
}

enum class TrainStatus { certified, not_certified };

struct TrainStep {
  std::size_t iter = 0;
  double loss = 0.0;
  double invariance = 0.0;
  double data = 0.0;
  double margin = 0.0;
};

struct TrainReport {
  TrainStatus status = TrainStatus::not_certified;
  std::size_t iterations = 0;
  std::size_t adam_steps = 0;
  Certificate certificate;
  double best_margin = -std::numeric_limits<double>::infinity();
  std::vector<TrainStep> trace;
  std::vector<double> theta;
  double wall_time_s = 0.0;
};

// Iterates loss/step/certify until the untracked certificate passes or the
// iteration budget runs out. The certificate is evaluated at the parameters
// of the current iteration, so the loop never steps past a passing set and
// the returned report always describes the returned theta.
inline TrainReport train(const TrainProblem& pb, const TrainSettings& ts) {
  if (!(ts.epsilon > 0.0)) throw config_error("train: epsilon must be positive");
  if (ts.lambda < 0.0) throw config_error("train: lambda must be nonnegative");
  if (ts.max_iters == 0) throw config_error("train: max_iters must be at least 1");
  const std::size_t want = pb.shape.param_count() + pb.H.c * (pb.H.r - pb.H.c);
  if (pb.theta0.size() != want) {
    throw std::invalid_argument("train: parameter vector size mismatch");
  }
  if (pb.ybox.size() != pb.H.r) {
    throw std::invalid_argument("train: polytope box dimension mismatch");
  }
  validate_polytope(Polytope{pb.H, pb.ybox.lo, pb.ybox.hi});

  Rng rng(ts.seed);
  std::vector<double> theta = pb.theta0;
  AdamState adam(theta.size());
  TrainReport rep;
  std::vector<double> grad;
  bool zero_seen = false;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t iter = 1; iter <= ts.max_iters; ++iter) {
    std::vector<std::vector<double>> batch;
    if (ts.imitation) {
      batch.resize(ts.imitation->batch);
      for (auto& x : batch) {
        x = rng.uniform_vec(ts.imitation->sample_box.lo, ts.imitation->sample_box.hi);
      }
    }
    const LossParts parts = loss_and_grad(pb, ts, theta, batch, grad);

    const Assembled<double> built = assemble<double>(pb, theta);
    const ClosedLoop<double> cl{pb.sys_d, built.policy, pb.disturbance};
    const Certificate cert = certify_polytope(cl, built.lifting, pb.ybox);

    rep.trace.push_back(TrainStep{iter, parts.total, parts.invariance, parts.data, cert.margin});
    rep.best_margin = std::max(rep.best_margin, cert.margin);
    rep.iterations = iter;
    rep.certificate = cert;

    if (parts.invariance == 0.0 && !zero_seen) {
      zero_seen = true;
      if (cert.margin < ts.epsilon - 1e-9) {
        throw std::logic_error("train: zero invariance loss without a slack-deep certificate");
      }
    }
    if (cert.certified) {
      rep.status = TrainStatus::certified;
      break;
    }
    if (iter < ts.max_iters) {
      adam_step(adam, theta, grad, ts.adam);
      rep.adam_steps += 1;
    }
  }

  rep.theta = std::move(theta);
  rep.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace polycert
