#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "polycert/io.hpp"
#include "polycert/presets.hpp"
#include "polycert/trainer.hpp"

namespace polycert::io {

struct SimulationPlan {
  std::vector<std::vector<double>> x0;
  bool from_vertices = false;
  double tfinal = 5.0;
  double dt = 1e-3;
};

// A parsed and resolved run configuration: the model with its disturbance
// partitioning, the (initial) network, the polytope, and the optional
// training and simulation blocks.
struct Session {
  ModelInfo model;
  DisturbanceSpec disturbance;
  std::vector<double> disturbance_radius;
  int disturbance_partitions = 1;
  Mlp<double> net;
  MlpShape shape;
  Mat<double> H;
  IntervalVector<double> ybox;
  Mat<double> eta;
  std::optional<Mat<double>> gain;
  std::optional<TrainSettings> training;
  std::optional<SimulationPlan> simulation;
};

namespace detail {

inline std::string resolve_path(const std::filesystem::path& dir, const std::string& p) {
  const std::filesystem::path fp(p);
  return fp.is_absolute() ? fp.string() : (dir / fp).string();
}

inline std::size_t policy_in_dim(const ModelInfo& m) {
  return m.obs.empty() ? m.n : m.obs.front().r;
}

inline std::size_t policy_out_dim(const ModelInfo& m) {
  return m.obs.empty() ? m.p : m.p / m.obs.size();
}

inline Mlp<double> resolve_network(const json& block, const ModelInfo& model,
                                   const std::filesystem::path& dir) {
  reject_unknown(block, {"path", "layers", "init"}, "network");
  const json* path = optional_member(block, "path");
  const json* layers = optional_member(block, "layers");
  const json* init = optional_member(block, "init");
  const int sources = (path != nullptr) + (layers != nullptr) + (init != nullptr);
  if (sources != 1) {
    throw config_error("network: exactly one of path, layers, init required");
  }
  Mlp<double> net;
  if (path != nullptr) {
    net = network_from_json(load_json(resolve_path(dir, as_string(*path, "network.path"))),
                            "network");
  } else if (layers != nullptr) {
    net = network_from_json(json{{"layers", *layers}}, "network");
  } else {
    reject_unknown(*init, {"sizes", "seed"}, "network.init");
    const json& sizes = member(*init, "sizes", "network.init");
    if (!sizes.is_array()) throw config_error("network.init.sizes: expected an array");
    MlpShape shape;
    for (const auto& s : sizes) shape.sizes.push_back(as_size(s, "network.init.sizes"));
    if (shape.sizes.size() < 2) throw config_error("network.init: need at least two sizes");
    net = init_mlp(shape, as_u64(member(*init, "seed", "network.init"), "network.init.seed"));
  }
  if (net.in_dim() != policy_in_dim(model) || net.out_dim() != policy_out_dim(model)) {
    throw config_error("network: dimensions do not match the model policy");
  }
  return net;
}

inline void resolve_disturbance(const json* block, std::size_t q, Session& s) {
  std::vector<double> radius(q, 0.0);
  int parts = 1;
  if (block != nullptr) {
    reject_unknown(*block, {"radius", "partitions_per_dim"}, "disturbance");
    const json& r = member(*block, "radius", "disturbance");
    if (r.is_array()) {
      const std::vector<double> v = as_vector(r, "disturbance.radius");
      if (v.size() != q) throw config_error("disturbance.radius: wrong length");
      radius = v;
    } else {
      const double v = as_double(r, "disturbance.radius");
      radius.assign(q, v);
    }
    for (const double v : radius) {
      if (v < 0.0) throw config_error("disturbance.radius: negative entry");
    }
    if (const json* p = optional_member(*block, "partitions_per_dim")) {
      parts = static_cast<int>(as_size(*p, "disturbance.partitions_per_dim"));
      if (parts != 1 && parts != 2) {
        throw config_error("disturbance.partitions_per_dim: must be 1 or 2");
      }
    }
  }
  std::vector<double> lo(q), hi(q);
  for (std::size_t k = 0; k < q; ++k) {
    lo[k] = -radius[k];
    hi[k] = radius[k];
  }
  IntervalVector<double> wbox(std::move(lo), std::move(hi));
  s.disturbance =
      parts == 2 ? DisturbanceSpec::sign_split(std::move(wbox)) : DisturbanceSpec::whole(std::move(wbox));
  s.disturbance_radius = std::move(radius);
  s.disturbance_partitions = parts;
}

inline Mat<double> resolve_polytope_matrix(const json& v, const Session& s) {
  if (v.is_string()) {
    const std::string kind = v.get<std::string>();
    if (kind == "from_linearization") {
      if (!s.gain) throw config_error("polytope.H: from_linearization requires a gain block");
      const Mat<double> Acl = mat_add(s.model.A0, matmul(s.model.B0, *s.gain));
      return lifting_from_linearization(Acl);
    }
    if (kind == "platoon") {
      if (s.model.name != "platoon") throw config_error("polytope.H: platoon stack needs the platoon model");
      return platoon_lifting(s.model.p);
    }
    throw config_error("polytope.H: unknown preset \"" + kind + "\"");
  }
  return as_matrix(v, "polytope.H");
}

}  // namespace detail

inline Session build_session(const json& cfg, const std::filesystem::path& config_dir) {
  reject_unknown(cfg,
                 {"model", "N", "disturbance", "network", "polytope", "eta", "gain", "training",
                  "simulation"},
                 "config");
  Session s;

  const std::string model = as_string(member(cfg, "model", "config"), "model");
  std::size_t vehicles = 0;
  if (const json* nv = optional_member(cfg, "N")) vehicles = as_size(*nv, "N");
  if (model == "platoon" && vehicles == 0) throw config_error("platoon model requires N");
  try {
    s.model = make_model(model, vehicles);
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }

  if (const json* g = optional_member(cfg, "gain")) {
    Mat<double> K = as_matrix(*g, "gain");
    if (K.r != s.model.p || K.c != s.model.n) throw config_error("gain: must be p x n");
    s.gain = std::move(K);
  }

  if (const json* nw = optional_member(cfg, "network")) {
    s.net = detail::resolve_network(*nw, s.model, config_dir);
    s.shape = shape_of(s.net);
  }

  const json& poly = member(cfg, "polytope", "config");
  reject_unknown(poly, {"H", "y_lo", "y_hi"}, "polytope");
  s.H = detail::resolve_polytope_matrix(member(poly, "H", "polytope"), s);
  if (s.H.c != s.model.n || s.H.r < s.H.c) throw config_error("polytope.H: must be m x n, m >= n");
  const std::vector<double> ylo = as_vector(member(poly, "y_lo", "polytope"), "polytope.y_lo");
  const std::vector<double> yhi = as_vector(member(poly, "y_hi", "polytope"), "polytope.y_hi");
  if (ylo.size() != s.H.r || yhi.size() != s.H.r) {
    throw config_error("polytope: bound lengths must match H rows");
  }
  try {
    s.ybox = IntervalVector<double>(ylo, yhi);
    validate_polytope(Polytope{s.H, ylo, yhi});
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }

  const std::size_t n = s.H.c, m = s.H.r;
  s.eta = Mat<double>(n, m - n);
  if (const json* e = optional_member(cfg, "eta")) {
    if (e->is_string()) {
      if (e->get<std::string>() != "zero") throw config_error("eta: unknown preset");
    } else if (e->is_object()) {
      reject_unknown(*e, {"path"}, "eta");
      s.eta = eta_from_json(
          load_json(detail::resolve_path(config_dir, as_string(member(*e, "path", "eta"), "eta.path"))),
          "eta");
    } else {
      s.eta = as_matrix(*e, "eta");
    }
    if (s.eta.r != n || s.eta.c != m - n) throw config_error("eta: must be n x (m-n)");
  }

  detail::resolve_disturbance(optional_member(cfg, "disturbance"), s.model.q, s);

  if (const json* t = optional_member(cfg, "training")) {
    reject_unknown(*t, {"lambda", "epsilon", "max_iters", "step", "seed", "imitation"}, "training");
    TrainSettings ts;
    ts.lambda = as_double(member(*t, "lambda", "training"), "training.lambda");
    ts.epsilon = as_double(member(*t, "epsilon", "training"), "training.epsilon");
    ts.max_iters = as_size(member(*t, "max_iters", "training"), "training.max_iters");
    if (const json* st = optional_member(*t, "step")) {
      ts.adam.alpha = as_double(*st, "training.step");
      if (!(ts.adam.alpha > 0.0)) throw config_error("training.step: must be positive");
    }
    if (const json* sd = optional_member(*t, "seed")) ts.seed = as_u64(*sd, "training.seed");
    if (const json* im = optional_member(*t, "imitation")) {
      reject_unknown(*im, {"sample_lo", "sample_hi", "batch"}, "training.imitation");
      if (!s.gain) throw config_error("training.imitation requires a gain block");
      ImitationSpec spec;
      spec.K = *s.gain;
      const std::vector<double> lo =
          as_vector(member(*im, "sample_lo", "training.imitation"), "imitation.sample_lo");
      const std::vector<double> hi =
          as_vector(member(*im, "sample_hi", "training.imitation"), "imitation.sample_hi");
      if (lo.size() != s.model.n || hi.size() != s.model.n) {
        throw config_error("training.imitation: sample box must be n-dimensional");
      }
      try {
        spec.sample_box = IntervalVector<double>(lo, hi);
      } catch (const std::invalid_argument& e) {
        throw config_error(e.what());
      }
      if (const json* b = optional_member(*im, "batch")) {
        spec.batch = as_size(*b, "imitation.batch");
        if (spec.batch == 0) throw config_error("imitation.batch: must be positive");
      }
      ts.imitation = std::move(spec);
    }
    s.training = std::move(ts);
  }

  if (const json* sim = optional_member(cfg, "simulation")) {
    reject_unknown(*sim, {"x0", "T", "dt"}, "simulation");
    SimulationPlan plan;
    const json& x0 = member(*sim, "x0", "simulation");
    if (x0.is_string()) {
      if (x0.get<std::string>() != "vertices") throw config_error("simulation.x0: unknown preset");
      plan.from_vertices = true;
    } else if (x0.is_array()) {
      for (const auto& row : x0) {
        plan.x0.push_back(as_vector(row, "simulation.x0"));
        if (plan.x0.back().size() != s.model.n) {
          throw config_error("simulation.x0: wrong state dimension");
        }
      }
      if (plan.x0.empty()) throw config_error("simulation.x0: empty list");
    } else {
      throw config_error("simulation.x0: expected \"vertices\" or a list of states");
    }
    plan.tfinal = as_double(member(*sim, "T", "simulation"), "simulation.T");
    plan.dt = as_double(member(*sim, "dt", "simulation"), "simulation.dt");
    if (plan.tfinal < 0.0) throw config_error("simulation.T: must be non-negative");
    if (!(plan.dt > 0.0)) throw config_error("simulation.dt: must be positive");
    s.simulation = std::move(plan);
  }

  return s;
}

inline Session load_session(const std::string& config_path) {
  const std::filesystem::path p(config_path);
  return build_session(load_json(config_path), p.has_parent_path() ? p.parent_path() : ".");
}

inline ClosedLoop<double> closed_loop(const Session& s) {
  return ClosedLoop<double>{s.model.sys_d, Policy<double>{s.net, s.model.obs}, s.disturbance};
}

inline TrainProblem train_problem(const Session& s) {
  TrainProblem pb;
  pb.sys_d = s.model.sys_d;
  pb.sys_v = s.model.sys_v;
  pb.obs = s.model.obs;
  pb.disturbance = s.disturbance;
  pb.H = s.H;
  pb.ybox = s.ybox;
  pb.shape = s.shape;
  pb.theta0 = pack_params(s.net, s.eta);
  return pb;
}

}  // namespace polycert::io
