#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "polycert/autodiff.hpp"
#include "polycert/dynamics.hpp"
#include "polycert/linalg.hpp"
#include "polycert/scalar.hpp"

namespace polycert {

// A builtin plant bundled with its tracked twin, the controller observation
// maps (empty means the network reads the full state), and the Jacobians of
// the undisturbed dynamics at the origin.
struct ModelInfo {
  std::string name;
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t q = 0;
  OpenLoopSystem<double> sys_d;
  OpenLoopSystem<Var> sys_v;
  std::vector<Mat<double>> obs;
  Mat<double> A0;
  Mat<double> B0;
};

inline Mat<double> kron_identity(std::size_t copies, const Mat<double>& blk) {
  Mat<double> out(copies * blk.r, copies * blk.c);
  for (std::size_t k = 0; k < copies; ++k) {
    for (std::size_t i = 0; i < blk.r; ++i) {
      for (std::size_t j = 0; j < blk.c; ++j) out(k * blk.r + i, k * blk.c + j) = blk(i, j);
    }
  }
  return out;
}

// Per vehicle: position, velocity, and their sum.
inline Mat<double> platoon_lifting(std::size_t vehicles) {
  return kron_identity(vehicles, Mat<double>::from_rows({{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}}));
}

// Upper face bounds (0.1, 0.1, 0.08) per vehicle, scaled by the 1,3,9 cycle.
inline std::vector<double> platoon_face_bounds(std::size_t vehicles) {
  std::vector<double> out;
  out.reserve(3 * vehicles);
  const double scales[3] = {1.0, 3.0, 9.0};
  for (std::size_t j = 0; j < vehicles; ++j) {
    const double s = scales[j % 3];
    out.push_back(0.1 * s);
    out.push_back(0.1 * s);
    out.push_back(0.08 * s);
  }
  return out;
}

inline ModelInfo make_model(const std::string& name, std::size_t vehicles = 0) {
  ModelInfo m;
  m.name = name;
  if (name == "double_integrator") {
    m.sys_d = make_double_integrator<double>();
    m.sys_v = make_double_integrator<Var>();
    m.A0 = Mat<double>::from_rows({{0.0, 1.0}, {0.0, 0.0}});
    m.B0 = Mat<double>::from_rows({{0.0}, {1.0}});
  } else if (name == "segway") {
    m.sys_d = make_segway<double>();
    m.sys_v = make_segway<Var>();
    const double d = 1.0 - 24.7;
    m.A0 = Mat<double>::from_rows({{0.0, 0.0, 1.0},
                                   {9.8 / d, (11.5 + 68.4) / d, 0.0},
                                   {-208.3 / d, (-58.8 - 234.5) / d, 0.0}});
    m.B0 = Mat<double>::from_rows({{0.0}, {(-1.8 - 10.9) / d}, {(9.3 + 38.6) / d}});
  } else if (name == "platoon") {
    if (vehicles < 1) throw config_error("platoon: need at least one vehicle");
    m.sys_d = make_platoon<double>(vehicles);
    m.sys_v = make_platoon<Var>(vehicles);
    m.obs = platoon_observation_maps(vehicles);
    m.A0 = kron_identity(vehicles, Mat<double>::from_rows({{0.0, 1.0}, {0.0, 0.0}}));
    m.B0 = kron_identity(vehicles, Mat<double>::from_rows({{0.0}, {1.0}}));
  } else {
    throw config_error("unknown model: " + name);
  }
  m.n = m.sys_d.n;
  m.p = m.sys_d.p;
  m.q = m.sys_d.q;
  return m;
}

}  // namespace polycert
