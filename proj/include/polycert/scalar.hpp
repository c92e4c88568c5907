#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

// Scalar contract: every numeric routine in this library is written against a
// small set of primitives (+, -, *, /, min, max, relu, tanh, sin, cos, abs,
// comparisons) so the same code runs on plain doubles and on tape-tracked
// scalars. The double versions live here; the tracked overloads are in
// autodiff.hpp.

namespace polycert {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double min(double a, double b) { return a <= b ? a : b; }
inline double max(double a, double b) { return a >= b ? a : b; }

using std::abs;
using std::cos;
using std::sin;
using std::tanh;

// Value extraction for branch predicates. Branches in relaxation/selection
// code are decided on values; gradients never flow through the predicate.
inline double val(double x) { return x; }

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct empty_intersection_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct unsupported_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace polycert
