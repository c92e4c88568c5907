#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polycert/scalar.hpp"

// Reverse-mode automatic differentiation on an explicit tape. A Var is a
// (value, node id) pair; id 0 marks a constant that never touches the tape.
// Arithmetic on Vars records nodes holding parent ids and local partials;
// inner products record a single fused node whose terms live in a side arena,
// which keeps tapes small when differentiating through matrix products.
//
// Subgradient conventions: relu'(0) = 0, |.|'(0) = 0, min/max send the
// gradient to the first argument on exact ties. Branch predicates (all
// comparisons) read values only; no gradient flows through them.

namespace polycert {

class Tape;

namespace detail {
inline thread_local Tape* g_tape = nullptr;
}

struct Var {
  double v = 0.0;
  std::uint32_t id = 0;

  Var() = default;
  Var(double value) : v(value), id(0) {}  // NOLINT: implicit by design
  Var(double value, std::uint32_t node) : v(value), id(node) {}
};

inline double val(const Var& x) { return x.v; }

class Tape {
 public:
  enum Op : std::uint8_t {
    kLeaf,
    kAdd, kSub, kMul, kDiv,
    kAddC, kSubCV, kMulC, kDivVC, kDivCV,
    kNeg, kRelu, kAbs, kTanh, kSin, kCos,
    kMin, kMax, kMinVC, kMinCV, kMaxVC, kMaxCV,
    kDot,
  };

  struct Node {
    std::uint32_t a = 0, b = 0;  // parent ids; for kDot: term offset, count
    double da = 0.0, db = 0.0;   // local partials; for *C ops db holds the constant
  };

  struct Term {
    std::uint32_t a = 0, b = 0;  // operand ids (0 = constant operand)
    double va = 0.0, vb = 0.0;   // operand values at record time
  };

  Tape() { reset(); }

  void reset() {
    ops_.clear();
    nodes_.clear();
    vals_.clear();
    terms_.clear();
    ops_.push_back(kLeaf);  // id 0: constant sentinel
    nodes_.push_back(Node{});
    vals_.push_back(0.0);
  }

  Var leaf(double v) {
    const std::uint32_t id = push(kLeaf, Node{}, v);
    return Var{v, id};
  }

  std::vector<Var> leaves(const std::vector<double>& xs) {
    std::vector<Var> out;
    out.reserve(xs.size());
    for (double x : xs) out.push_back(leaf(x));
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  void check_finite() const {
    for (double v : vals_) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("autodiff: non-finite value on tape");
      }
    }
  }

  void backward(const Var& root) {
    if (root.id == 0) {  // constant: all gradients vanish
      adj_.assign(vals_.size(), 0.0);
      return;
    }
    adj_.assign(vals_.size(), 0.0);
    adj_[root.id] = 1.0;
    for (std::uint32_t i = static_cast<std::uint32_t>(nodes_.size()) - 1; i >= 1; --i) {
      const double w = adj_[i];
      if (w == 0.0) continue;
      const Node& n = nodes_[i];
      if (ops_[i] == kDot) {
        const Term* t = terms_.data() + n.a;
        for (std::uint32_t k = 0; k < n.b; ++k) {
          if (t[k].a != 0) adj_[t[k].a] += t[k].vb * w;
          if (t[k].b != 0) adj_[t[k].b] += t[k].va * w;
        }
      } else {
        if (n.a != 0) adj_[n.a] += n.da * w;
        if (n.b != 0) adj_[n.b] += n.db * w;
      }
    }
  }

  double adjoint(const Var& x) const {
    return x.id == 0 ? 0.0 : adj_[x.id];
  }

  std::vector<double> gradient(const Var& root, const std::vector<Var>& wrt) {
    check_finite();
    backward(root);
    std::vector<double> g(wrt.size());
    for (std::size_t i = 0; i < wrt.size(); ++i) g[i] = adjoint(wrt[i]);
    return g;
  }

  // Recomputes every node value from the leaves in recording order and
  // returns the recomputed value at `root`. With unchanged leaves the result
  // is bit-identical to the recorded value.
  double replay(const Var& root) {
    std::vector<double> v(vals_.size());
    v[0] = 0.0;
    for (std::uint32_t i = 1; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      switch (ops_[i]) {
        case kLeaf: v[i] = vals_[i]; break;
        case kAdd: v[i] = v[n.a] + v[n.b]; break;
        case kSub: v[i] = v[n.a] - v[n.b]; break;
        case kMul: v[i] = v[n.a] * v[n.b]; break;
        case kDiv: v[i] = v[n.a] / v[n.b]; break;
        case kAddC: v[i] = v[n.a] + n.db; break;
        case kSubCV: v[i] = n.db - v[n.a]; break;
        case kMulC: v[i] = v[n.a] * n.db; break;
        case kDivVC: v[i] = v[n.a] / n.db; break;
        case kDivCV: v[i] = n.db / v[n.a]; break;
        case kNeg: v[i] = -v[n.a]; break;
        case kRelu: v[i] = v[n.a] > 0.0 ? v[n.a] : 0.0; break;
        case kAbs: v[i] = std::fabs(v[n.a]); break;
        case kTanh: v[i] = std::tanh(v[n.a]); break;
        case kSin: v[i] = std::sin(v[n.a]); break;
        case kCos: v[i] = std::cos(v[n.a]); break;
        case kMin: v[i] = v[n.a] <= v[n.b] ? v[n.a] : v[n.b]; break;
        case kMax: v[i] = v[n.a] >= v[n.b] ? v[n.a] : v[n.b]; break;
        case kMinVC: v[i] = v[n.a] <= n.db ? v[n.a] : n.db; break;
        case kMinCV: v[i] = n.db <= v[n.a] ? n.db : v[n.a]; break;
        case kMaxVC: v[i] = v[n.a] >= n.db ? v[n.a] : n.db; break;
        case kMaxCV: v[i] = n.db >= v[n.a] ? n.db : v[n.a]; break;
        case kDot: {
          const Term* t = terms_.data() + n.a;
          double s = 0.0;
          for (std::uint32_t k = 0; k < n.b; ++k) {
            const double x = t[k].a ? v[t[k].a] : t[k].va;
            const double y = t[k].b ? v[t[k].b] : t[k].vb;
            s += x * y;
          }
          v[i] = s;
          break;
        }
      }
    }
    return root.id == 0 ? root.v : v[root.id];
  }

  static Tape* current() { return detail::g_tape; }

  static Tape& active() {
    Tape* t = detail::g_tape;
    if (t == nullptr) {
      throw std::logic_error("autodiff: tracked operation outside any tape scope");
    }
    return *t;
  }

  std::uint32_t push(Op op, Node n, double v) {
    const std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
    ops_.push_back(op);
    nodes_.push_back(n);
    vals_.push_back(v);
    return id;
  }

  std::uint32_t push_terms_begin() const {
    return static_cast<std::uint32_t>(terms_.size());
  }
  void push_term(Term t) { terms_.push_back(t); }

 private:
  std::vector<std::uint8_t> ops_;
  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<Term> terms_;
  std::vector<double> adj_;
};

struct TapeScope {
  explicit TapeScope(Tape& t) : prev(detail::g_tape) { detail::g_tape = &t; }
  ~TapeScope() { detail::g_tape = prev; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape* prev;
};

namespace detail {
inline Var track2(Tape::Op op, const Var& a, const Var& b, double v, double da, double db) {
  Tape& t = Tape::active();
  return Var{v, t.push(op, Tape::Node{a.id, b.id, da, db}, v)};
}
inline Var track1(Tape::Op op, const Var& a, double v, double da, double aux = 0.0) {
  Tape& t = Tape::active();
  return Var{v, t.push(op, Tape::Node{a.id, 0, da, aux}, v)};
}
}  // namespace detail

// ---- arithmetic ----

inline Var operator+(const Var& a, const Var& b) {
  if (a.id == 0 && b.id == 0) return Var{a.v + b.v};
  if (b.id == 0) return detail::track1(Tape::kAddC, a, a.v + b.v, 1.0, b.v);
  if (a.id == 0) return detail::track1(Tape::kAddC, b, a.v + b.v, 1.0, a.v);
  return detail::track2(Tape::kAdd, a, b, a.v + b.v, 1.0, 1.0);
}

inline Var operator-(const Var& a, const Var& b) {
  if (a.id == 0 && b.id == 0) return Var{a.v - b.v};
  if (b.id == 0) return detail::track1(Tape::kAddC, a, a.v - b.v, 1.0, -b.v);
  if (a.id == 0) return detail::track1(Tape::kSubCV, b, a.v - b.v, -1.0, a.v);
  return detail::track2(Tape::kSub, a, b, a.v - b.v, 1.0, -1.0);
}

inline Var operator*(const Var& a, const Var& b) {
  if (a.id == 0 && b.id == 0) return Var{a.v * b.v};
  if (b.id == 0) return detail::track1(Tape::kMulC, a, a.v * b.v, b.v, b.v);
  if (a.id == 0) return detail::track1(Tape::kMulC, b, a.v * b.v, a.v, a.v);
  return detail::track2(Tape::kMul, a, b, a.v * b.v, b.v, a.v);
}

inline Var operator/(const Var& a, const Var& b) {
  if (a.id == 0 && b.id == 0) return Var{a.v / b.v};
  if (b.id == 0) return detail::track1(Tape::kDivVC, a, a.v / b.v, 1.0 / b.v, b.v);
  const double v = a.v / b.v;
  if (a.id == 0) return detail::track1(Tape::kDivCV, b, v, -v / b.v, a.v);
  return detail::track2(Tape::kDiv, a, b, v, 1.0 / b.v, -v / b.v);
}

inline Var operator-(const Var& a) {
  if (a.id == 0) return Var{-a.v};
  return detail::track1(Tape::kNeg, a, -a.v, -1.0);
}

inline Var& operator+=(Var& a, const Var& b) { a = a + b; return a; }
inline Var& operator-=(Var& a, const Var& b) { a = a - b; return a; }
inline Var& operator*=(Var& a, const Var& b) { a = a * b; return a; }
inline Var& operator/=(Var& a, const Var& b) { a = a / b; return a; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }

// ---- nonlinear primitives ----

inline Var relu(const Var& a) {
  const double v = a.v > 0.0 ? a.v : 0.0;
  if (a.id == 0) return Var{v};
  return detail::track1(Tape::kRelu, a, v, a.v > 0.0 ? 1.0 : 0.0);
}

inline Var abs(const Var& a) {
  if (a.id == 0) return Var{std::fabs(a.v)};
  const double d = a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0);
  return detail::track1(Tape::kAbs, a, std::fabs(a.v), d);
}

inline Var tanh(const Var& a) {
  const double t = std::tanh(a.v);
  if (a.id == 0) return Var{t};
  return detail::track1(Tape::kTanh, a, t, 1.0 - t * t);
}

inline Var sin(const Var& a) {
  if (a.id == 0) return Var{std::sin(a.v)};
  return detail::track1(Tape::kSin, a, std::sin(a.v), std::cos(a.v));
}

inline Var cos(const Var& a) {
  if (a.id == 0) return Var{std::cos(a.v)};
  return detail::track1(Tape::kCos, a, std::cos(a.v), -std::sin(a.v));
}

inline Var min(const Var& a, const Var& b) {
  const bool first = a.v <= b.v;
  const double v = first ? a.v : b.v;
  if (a.id == 0 && b.id == 0) return Var{v};
  if (b.id == 0) return detail::track1(Tape::kMinVC, a, v, first ? 1.0 : 0.0, b.v);
  if (a.id == 0) return detail::track1(Tape::kMinCV, b, v, first ? 0.0 : 1.0, a.v);
  return detail::track2(Tape::kMin, a, b, v, first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}

inline Var max(const Var& a, const Var& b) {
  const bool first = a.v >= b.v;
  const double v = first ? a.v : b.v;
  if (a.id == 0 && b.id == 0) return Var{v};
  if (b.id == 0) return detail::track1(Tape::kMaxVC, a, v, first ? 1.0 : 0.0, b.v);
  if (a.id == 0) return detail::track1(Tape::kMaxCV, b, v, first ? 0.0 : 1.0, a.v);
  return detail::track2(Tape::kMax, a, b, v, first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}

// ---- fused inner products ----

namespace detail {

inline std::uint32_t operand_id(const Var& x) { return x.id; }
inline std::uint32_t operand_id(double) { return 0; }
inline double operand_val(const Var& x) { return x.v; }
inline double operand_val(double x) { return x; }

template <class A, class B>
Var dot_record(std::span<const A> a, std::span<const B> b) {
  bool tracked = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (operand_id(a[i]) != 0 || operand_id(b[i]) != 0) { tracked = true; break; }
  }
  if (!tracked) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += operand_val(a[i]) * operand_val(b[i]);
    return Var{s};
  }
  Tape& t = Tape::active();
  const std::uint32_t begin = t.push_terms_begin();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double va = operand_val(a[i]);
    const double vb = operand_val(b[i]);
    t.push_term(Tape::Term{operand_id(a[i]), operand_id(b[i]), va, vb});
    s += va * vb;
  }
  const std::uint32_t id =
      t.push(Tape::kDot, Tape::Node{begin, static_cast<std::uint32_t>(a.size()), 0.0, 0.0}, s);
  return Var{s, id};
}

}  // namespace detail

inline Var dot(std::span<const Var> a, std::span<const Var> b) {
  return detail::dot_record(a, b);
}
inline Var dot(std::span<const Var> a, std::span<const double> b) {
  return detail::dot_record(a, b);
}
inline Var dot(std::span<const double> a, std::span<const Var> b) {
  return detail::dot_record(a, b);
}
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Gradient of a scalar-valued function of a parameter vector, computed by
// recording a fresh tape, sweeping it backward, and reading the leaf adjoints.
template <class F>
std::vector<double> grad(F&& f, const std::vector<double>& theta) {
  Tape tape;
  TapeScope scope(tape);
  std::vector<Var> xs = tape.leaves(theta);
  Var out = f(xs);
  return tape.gradient(out, xs);
}

// ---- ADAM ----

struct AdamParams {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(AdamState& st, std::vector<double>& theta,
                      const std::vector<double>& g, const AdamParams& p = {}) {
  if (theta.size() != g.size() || theta.size() != st.m.size()) {
    throw std::invalid_argument("adam_step: size mismatch");
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    st.m[i] = p.beta1 * st.m[i] + (1.0 - p.beta1) * g[i];
    st.v[i] = p.beta2 * st.v[i] + (1.0 - p.beta2) * g[i] * g[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    theta[i] -= p.alpha * mhat / (std::sqrt(vhat) + p.eps);
  }
}

}  // namespace polycert
