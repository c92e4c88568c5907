#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "polycert/autodiff.hpp"
#include "polycert/dynamics.hpp"
#include "polycert/embedding.hpp"
#include "polycert/lifted.hpp"
#include "polycert/neural.hpp"
#include "polycert/rng.hpp"

using namespace polycert;

namespace {

Mat<double> fig_h() {
  return Mat<double>::from_rows({{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}});
}

Policy<double> linear_policy(const Mat<double>& K) {
  Mlp<double> net;
  net.W.push_back(K);
  net.b.emplace_back(K.r, 0.0);
  return Policy<double>{net, {}};
}

Policy<double> zero_policy(std::size_t n, std::size_t p) {
  Mlp<double> net;
  net.W.push_back(Mat<double>(p, n));
  net.b.emplace_back(p, 0.0);
  return Policy<double>{net, {}};
}

ClosedLoop<double> di_loop(const Policy<double>& pol) {
  return ClosedLoop<double>{make_double_integrator<double>(), pol, DisturbanceSpec::none()};
}

}  // namespace

TEST_CASE("nullspace basis spans the left null space") {
  SECTION("triangle lifting matrix") {
    const Mat<double> N = nullspace_basis(fig_h());
    REQUIRE(N.r == 3);
    REQUIRE(N.c == 1);
    const double s = 1.0 / std::sqrt(3.0);
    const double d = N(0, 0) * s + N(1, 0) * s - N(2, 0) * s;
    REQUIRE(std::abs(std::abs(d) - 1.0) < 1e-12);
  }

  SECTION("square invertible H has an empty basis") {
    Mat<double> H = Mat<double>::from_rows({{2.0, 1.0}, {-1.0, 1.0}});
    const Mat<double> N = nullspace_basis(H);
    REQUIRE(N.r == 2);
    REQUIRE(N.c == 0);
  }

  SECTION("random tall H: orthonormal and orthogonal to the range") {
    Rng rng(101);
    Mat<double> H(5, 2);
    for (auto& v : H.a) v = rng.uniform(-2.0, 2.0);
    const Mat<double> N = nullspace_basis(H);
    REQUIRE(N.c == 3);
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 5; ++i) acc += N(i, a) * N(i, b);
        REQUIRE(acc == Catch::Approx(a == b ? 1.0 : 0.0).margin(1e-10));
      }
      for (std::size_t k = 0; k < 2; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 5; ++i) acc += N(i, a) * H(i, k);
        REQUIRE(std::abs(acc) <= 1e-10);
      }
    }
  }

  SECTION("rank-deficient H is rejected") {
    Mat<double> H = Mat<double>::from_rows({{1.0, 2.0}, {2.0, 4.0}, {3.0, 6.0}});
    REQUIRE_THROWS_AS(nullspace_basis(H), std::invalid_argument);
  }
}

TEST_CASE("left inverse family") {
  const Mat<double> H = fig_h();

  SECTION("eta = 0 gives the pseudoinverse") {
    const auto L = make_lifting<double>(H);
    const Mat<double> hp = left_inverse(L);
    const double t = 1.0 / 3.0;
    REQUIRE(hp(0, 0) == 2.0 * t);
    REQUIRE(hp(0, 1) == -t);
    REQUIRE(hp(0, 2) == t);
    REQUIRE(hp(1, 0) == -t);
    REQUIRE(hp(1, 1) == 2.0 * t);
    REQUIRE(hp(1, 2) == t);
  }

  SECTION("eta shifts along the null space and preserves H+H = I") {
    const Mat<double> N = nullspace_basis(H);
    Mat<double> eta(2, 1);
    eta(0, 0) = 1.0 / N(0, 0);  // makes eta N' = [[1,1,-1],[0,0,0]]
    const auto L = make_lifting<double>(H, eta);
    const Mat<double> hp = left_inverse(L);
    REQUIRE(hp(0, 0) == Catch::Approx(5.0 / 3.0).margin(1e-12));
    REQUIRE(hp(0, 1) == Catch::Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(hp(0, 2) == Catch::Approx(-2.0 / 3.0).margin(1e-12));
    REQUIRE(hp(1, 0) == Catch::Approx(-1.0 / 3.0).margin(1e-12));
    REQUIRE(hp(1, 1) == Catch::Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(hp(1, 2) == Catch::Approx(1.0 / 3.0).margin(1e-12));

    Rng rng(102);
    for (int trial = 0; trial < 5; ++trial) {
      Mat<double> e2(2, 1);
      e2(0, 0) = rng.uniform(-3.0, 3.0);
      e2(1, 0) = rng.uniform(-3.0, 3.0);
      REQUIRE_NOTHROW(make_lifting<double>(H, e2));  // asserts H+H = I internally
    }
  }

  SECTION("bad eta shape is rejected") {
    REQUIRE_THROWS_AS(make_lifting<double>(H, Mat<double>(1, 1)), std::invalid_argument);
  }
}

TEST_CASE("refinement propagates the range constraint") {
  const Mat<double> H = fig_h();
  const Mat<double> N = nullspace_basis(H);

  SECTION("square H leaves the box unchanged") {
    const Mat<double> Hs = Mat<double>::from_rows({{2.0, 1.0}, {-1.0, 1.0}});
    const Mat<double> Ns = nullspace_basis(Hs);
    const IntervalVector<double> box({-1.0, 2.0}, {3.0, 4.0});
    const IntervalVector<double> out = refine(Ns, box);
    REQUIRE(out.lo == box.lo);
    REQUIRE(out.hi == box.hi);
  }

  SECTION("pinned third coordinate tightens the first two") {
    const IntervalVector<double> box({-1.0, -1.0, -1.0}, {1.0, 1.0, -1.0});
    const IntervalVector<double> out = refine(N, box);
    REQUIRE(out.lo == std::vector<double>{-1.0, -1.0, -1.0});
    REQUIRE(out.hi == std::vector<double>{0.0, 0.0, -1.0});

    const IntervalVector<double> again = refine(N, out);
    REQUIRE(again.lo == out.lo);
    REQUIRE(again.hi == out.hi);
  }

  SECTION("inconsistent box raises an empty intersection") {
    const IntervalVector<double> box({2.0, 2.0, -1.0}, {3.0, 3.0, 0.0});
    REQUIRE_THROWS_AS(refine(N, box), empty_intersection_error);
  }

  SECTION("sandwich: H-consistent points survive, output stays inside") {
    Rng rng(103);
    Mat<double> Hr(4, 2);
    for (auto& v : Hr.a) v = rng.uniform(-1.5, 1.5);
    const Mat<double> Nr = nullspace_basis(Hr);
    const IntervalVector<double> box(std::vector<double>(4, -1.0), std::vector<double>(4, 1.0));
    const IntervalVector<double> out = refine(Nr, box);
    for (std::size_t i = 0; i < 4; ++i) {
      REQUIRE(out.lo[i] >= box.lo[i] - 1e-12);
      REQUIRE(out.hi[i] <= box.hi[i] + 1e-12);
    }
    int kept = 0;
    for (int s = 0; s < 20000; ++s) {
      const std::vector<double> x = rng.uniform_vec(2, -1.5, 1.5);
      const std::vector<double> y = matvec(Hr, x);
      if (!box_contains(box, y)) continue;
      ++kept;
      REQUIRE(box_contains(out, y, 1e-12));
    }
    REQUIRE(kept > 100);
  }
}

TEST_CASE("polytope validation") {
  Polytope P{fig_h(), {-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0}};
  REQUIRE_NOTHROW(validate_polytope(P));

  Polytope wide{Mat<double>::from_rows({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}), {-1.0, -1.0},
                {1.0, 1.0}};
  REQUIRE_THROWS_AS(validate_polytope(wide), std::invalid_argument);

  Polytope badlen{fig_h(), {-1.0, -1.0}, {1.0, 1.0, 1.0}};
  REQUIRE_THROWS_AS(validate_polytope(badlen), std::invalid_argument);

  Polytope inconsistent{fig_h(), {2.0, 2.0, -1.0}, {3.0, 3.0, 0.0}};
  REQUIRE_THROWS_AS(validate_polytope(inconsistent), empty_intersection_error);
}

TEST_CASE("lifted field reproduces the double integrator triangle exactly") {
  const ClosedLoop<double> cl = di_loop(linear_policy(Mat<double>::from_rows({{-2.0, -3.0}})));
  const auto L = make_lifting<double>(fig_h());
  const IntervalVector<double> ybox({-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});

  const FieldBounds<double> E = lifted_embedding_field(cl, L, ybox);
  REQUIRE(E.lo[0] == 0.0);
  REQUIRE(E.lo[1] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(E.lo[2] == Catch::Approx(4.0 / 3.0).margin(1e-12));
  REQUIRE(E.hi[0] == 0.0);
  REQUIRE(E.hi[1] == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(E.hi[2] == Catch::Approx(-4.0 / 3.0).margin(1e-12));

  const Certificate cert = certify_polytope(cl, L, ybox);
  REQUIRE(cert.certified);
  REQUIRE(cert.margin == 0.0);
}

TEST_CASE("small eta keeps the triangle certificate") {
  const ClosedLoop<double> cl = di_loop(linear_policy(Mat<double>::from_rows({{-2.0, -3.0}})));
  const IntervalVector<double> ybox({-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});
  Mat<double> eta(2, 1);
  eta(0, 0) = 0.05;
  eta(1, 0) = -0.03;
  const auto L = make_lifting<double>(fig_h(), eta);
  REQUIRE(certify_polytope(cl, L, ybox).certified);
}

TEST_CASE("stable diagonal system certifies the lifted triangle") {
  Mat<double> A(2, 2), B(2, 1);
  A(0, 0) = -1.0;
  A(1, 1) = -2.0;
  const ClosedLoop<double> cl{make_linear<double>(A, B, Mat<double>(2, 0)), zero_policy(2, 1),
                              DisturbanceSpec::none()};
  const auto L = make_lifting<double>(fig_h());
  const IntervalVector<double> ybox({-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});

  const FieldBounds<double> E = lifted_embedding_field(cl, L, ybox);
  REQUIRE(E.lo[0] == Catch::Approx(2.0 / 3.0).margin(1e-12));
  REQUIRE(E.lo[1] == Catch::Approx(4.0 / 3.0).margin(1e-12));
  REQUIRE(E.lo[2] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(E.hi[0] == Catch::Approx(-2.0 / 3.0).margin(1e-12));
  REQUIRE(E.hi[1] == Catch::Approx(-4.0 / 3.0).margin(1e-12));
  REQUIRE(E.hi[2] == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(certify_polytope(cl, L, ybox).certified);
}

TEST_CASE("square identity lifting reduces to the box embedding field") {
  const Mlp<double> net = init_mlp(MlpShape{{2, 8, 1}}, 23);
  const ClosedLoop<double> cl = di_loop(Policy<double>{net, {}});
  const auto L = make_lifting<double>(Mat<double>::identity(2));
  const IntervalVector<double> box({-1.0, -2.0}, {1.0, 2.0});

  const FieldBounds<double> lifted = lifted_embedding_field(cl, L, box);
  const FieldBounds<double> plain = embedding_field(cl, box);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(lifted.lo[i] == Catch::Approx(plain.lo[i]).margin(1e-12));
    REQUIRE(lifted.hi[i] == Catch::Approx(plain.hi[i]).margin(1e-12));
  }
}

TEST_CASE("axis-aligned boxes never certify the double integrator") {
  Rng rng(104);
  const auto L = make_lifting<double>(Mat<double>::identity(2));
  for (int trial = 0; trial < 5; ++trial) {
    const Mlp<double> net = init_mlp(MlpShape{{2, 8, 1}}, 300 + trial);
    const ClosedLoop<double> cl = di_loop(Policy<double>{net, {}});
    const double a = rng.uniform(0.1, 2.0), b = rng.uniform(0.1, 2.0);
    const IntervalVector<double> box({-a, -b}, {a, b});
    REQUIRE_FALSE(certify_polytope(cl, L, box).certified);
  }
}

TEST_CASE("lifted field soundness against sampled lifted flow") {
  // Sample y on a face consistent with the range of H, compare the lifted
  // field value g(y,w) = H f(H+ y, w) against the face bounds.
  Rng rng(105);
  const Mlp<double> net = init_mlp(MlpShape{{2, 8, 1}}, 31);
  const ClosedLoop<double> cl = di_loop(Policy<double>{net, {}});
  const auto L = make_lifting<double>(fig_h());
  const IntervalVector<double> ybox({-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});
  const FieldBounds<double> E = lifted_embedding_field(cl, L, ybox);
  const Mat<double> hp = left_inverse(L);

  for (std::size_t i = 0; i < 3; ++i) {
    for (int s = 0; s < 4000; ++s) {
      // Project a random state onto each face set: y = Hx with y_i clamped by
      // rejection onto the face within a small band.
      const std::vector<double> x = rng.uniform_vec(2, -1.1, 1.1);
      const std::vector<double> y = matvec(L.H, x);
      if (!box_contains(ybox, y)) continue;
      const std::vector<double> g = matvec(L.H, closed_loop_rhs(cl, x, {}));
      if (std::abs(y[i] - ybox.lo[i]) <= 1e-3) {
        REQUIRE(g[i] >= E.lo[i] - 1e-2);
      }
      if (std::abs(y[i] - ybox.hi[i]) <= 1e-3) {
        REQUIRE(g[i] <= E.hi[i] + 1e-2);
      }
    }
  }
}

TEST_CASE("lifting design from a closed-loop linearization") {
  SECTION("double integrator with u = -2x1 - 3x2") {
    const Mat<double> Acl = Mat<double>::from_rows({{0.0, 1.0}, {-2.0, -3.0}});
    const Mat<double> H = lifting_from_linearization(Acl);
    REQUIRE(H(0, 0) == Catch::Approx(2.0).margin(1e-9));
    REQUIRE(H(0, 1) == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(H(1, 0) == Catch::Approx(-1.0).margin(1e-9));
    REQUIRE(H(1, 1) == Catch::Approx(-1.0).margin(1e-9));
    // Rows are left eigenvectors ordered by descending eigenvalue.
    const Mat<double> HA = matmul(H, Acl);
    REQUIRE(HA(0, 0) == Catch::Approx(-H(0, 0)).margin(1e-9));
    REQUIRE(HA(0, 1) == Catch::Approx(-H(0, 1)).margin(1e-9));
    REQUIRE(HA(1, 0) == Catch::Approx(-2.0 * H(1, 0)).margin(1e-9));
    REQUIRE(HA(1, 1) == Catch::Approx(-2.0 * H(1, 1)).margin(1e-9));
  }

  SECTION("diagonal input returns the identity") {
    Mat<double> A(2, 2);
    A(0, 0) = -1.0;
    A(1, 1) = -2.0;
    const Mat<double> H = lifting_from_linearization(A);
    REQUIRE(H(0, 0) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(H(0, 1) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(H(1, 0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(H(1, 1) == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("random symmetric stable matrices diagonalize") {
    Rng rng(106);
    for (int trial = 0; trial < 10; ++trial) {
      Mat<double> M(3, 3);
      for (auto& v : M.a) v = rng.uniform(-1.0, 1.0);
      Mat<double> A(3, 3);
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
          double acc = i == j ? 1.0 : 0.0;
          for (std::size_t k = 0; k < 3; ++k) acc += M(k, i) * M(k, j);
          A(i, j) = -acc;
        }
      }
      const Mat<double> H = lifting_from_linearization(A);
      const Mat<double> HA = matmul(H, A);
      std::vector<double> lam(3);
      for (std::size_t i = 0; i < 3; ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          num += HA(i, j) * H(i, j);
          den += H(i, j) * H(i, j);
        }
        lam[i] = num / den;
        for (std::size_t j = 0; j < 3; ++j) {
          REQUIRE(HA(i, j) == Catch::Approx(lam[i] * H(i, j)).margin(1e-8));
        }
      }
      REQUIRE(lam[0] >= lam[1]);
      REQUIRE(lam[1] >= lam[2]);
    }
  }

  SECTION("complex and defective spectra are unsupported") {
    const Mat<double> rot = Mat<double>::from_rows({{0.0, 1.0}, {-1.0, 0.0}});
    REQUIRE_THROWS_AS(lifting_from_linearization(rot), unsupported_error);
    const Mat<double> jordan = Mat<double>::from_rows({{1.0, 1.0}, {0.0, 1.0}});
    REQUIRE_THROWS_AS(lifting_from_linearization(jordan), unsupported_error);
  }
}

TEST_CASE("lifted flow tracks the original flow") {
  SECTION("equilibrium start has zero residual") {
    const ClosedLoop<double> cl = di_loop(linear_policy(Mat<double>::from_rows({{-2.0, -3.0}})));
    const auto L = make_lifting<double>(fig_h());
    auto wfn = [](double) { return std::vector<double>{}; };
    REQUIRE(lifted_simulate_check(cl, L, {0.0, 0.0}, wfn, 0.01, 2.0) == 0.0);
  }

  SECTION("linear closed loop") {
    const ClosedLoop<double> cl = di_loop(linear_policy(Mat<double>::from_rows({{-2.0, -3.0}})));
    Mat<double> eta(2, 1);
    eta(0, 0) = 0.4;
    eta(1, 0) = -0.2;
    const auto L = make_lifting<double>(fig_h(), eta);
    auto wfn = [](double) { return std::vector<double>{}; };
    REQUIRE(lifted_simulate_check(cl, L, {0.7, -0.4}, wfn, 0.001, 5.0) <= 1e-6);
  }

  SECTION("segway with a network controller and random disturbance") {
    const Mlp<double> net = init_mlp(MlpShape{{3, 8, 1}}, 57);
    const IntervalVector<double> wbox(std::vector<double>(11, -0.02),
                                      std::vector<double>(11, 0.02));
    const ClosedLoop<double> cl{make_segway<double>(), Policy<double>{net, {}},
                                DisturbanceSpec::whole(wbox)};
    const Mat<double> H = Mat<double>::from_rows(
        {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 1.0, 1.0}});
    Mat<double> eta(3, 1);
    eta(0, 0) = 0.1;
    eta(1, 0) = -0.2;
    eta(2, 0) = 0.05;
    const auto L = make_lifting<double>(H, eta);

    Rng rng(107);
    const double dt = 0.001, T = 5.0;
    std::vector<std::vector<double>> wtab(static_cast<std::size_t>(T / dt) + 2);
    for (auto& w : wtab) w = rng.uniform_vec(wbox.lo, wbox.hi);
    auto wfn = [&](double t) { return wtab[static_cast<std::size_t>(std::lround(t / dt))]; };
    REQUIRE(lifted_simulate_check(cl, L, {0.05, -0.1, 0.2}, wfn, dt, T) <= 1e-5);
  }
}

TEST_CASE("on the range of H the lifted field is independent of eta") {
  const Mlp<double> net = init_mlp(MlpShape{{2, 8, 1}}, 61);
  const ClosedLoop<double> cl = di_loop(Policy<double>{net, {}});
  Rng rng(108);
  for (int trial = 0; trial < 20; ++trial) {
    Mat<double> e1(2, 1), e2(2, 1);
    for (auto& v : e1.a) v = rng.uniform(-2.0, 2.0);
    for (auto& v : e2.a) v = rng.uniform(-2.0, 2.0);
    const auto L1 = make_lifting<double>(fig_h(), e1);
    const auto L2 = make_lifting<double>(fig_h(), e2);
    const Mat<double> hp1 = left_inverse(L1), hp2 = left_inverse(L2);

    const std::vector<double> x = rng.uniform_vec(2, -1.0, 1.0);
    const std::vector<double> y = matvec(fig_h(), x);
    const std::vector<double> g1 = matvec(fig_h(), closed_loop_rhs(cl, matvec(hp1, y), {}));
    const std::vector<double> g2 = matvec(fig_h(), closed_loop_rhs(cl, matvec(hp2, y), {}));
    for (std::size_t i = 0; i < 3; ++i) {
      REQUIRE(g1[i] == Catch::Approx(g2[i]).margin(1e-10));
    }
  }
}

TEST_CASE("certified polytopes trap simulated trajectories") {
  const ClosedLoop<double> cl = di_loop(linear_policy(Mat<double>::from_rows({{-2.0, -3.0}})));
  const auto L = make_lifting<double>(fig_h());
  const IntervalVector<double> ybox({-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});
  REQUIRE(certify_polytope(cl, L, ybox).certified);

  Rng rng(109);
  auto wfn = [](double) { return std::vector<double>{}; };
  for (int k = 0; k < 100; ++k) {
    const std::size_t face = rng.uniform_int(0, 2);
    const bool upper = rng.uniform_int(0, 1) == 1;
    const std::vector<double> x0 = polytope_boundary_point(L, ybox, face, upper, rng);
    auto field = [&](const std::vector<double>& x, const std::vector<double>& w) {
      return closed_loop_rhs(cl, x, w);
    };
    const Trajectory traj = rk4_simulate(field, x0, wfn, 0.01, 10.0);
    for (const auto& x : traj.x) {
      const std::vector<double> y = matvec(L.H, x);
      REQUIRE(box_contains(ybox, y, 1e-6));
    }
  }
}

TEST_CASE("tracked lifted evaluation matches the plain one and differentiates") {
  const Mlp<double> net = init_mlp(MlpShape{{2, 6, 1}}, 73);
  const Policy<double> pol{net, {}};
  const ClosedLoop<double> cl = di_loop(pol);
  Mat<double> eta(2, 1);
  eta(0, 0) = 0.2;
  eta(1, 0) = -0.1;
  const auto L = make_lifting<double>(fig_h(), eta);
  const IntervalVector<double> ybox({-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});
  const FieldBounds<double> Ed = lifted_embedding_field(cl, L, ybox);

  Tape tape;
  TapeScope scope(tape);
  const ClosedLoop<Var> clv{make_double_integrator<Var>(), lift(pol), DisturbanceSpec::none()};
  Lifting<Var> Lv{L.H, L.H_dagger, L.N, lift(eta)};
  const FieldBounds<Var> Ev = lifted_embedding_field(clv, Lv, ybox);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(val(Ev.lo[i]) == Ed.lo[i]);
    REQUIRE(val(Ev.hi[i]) == Ed.hi[i]);
  }

  std::vector<Var> params(Lv.eta.a.begin(), Lv.eta.a.end());
  const auto g = tape.gradient(Ev.lo[0], params);
  REQUIRE(g.size() == 2);
  for (double gi : g) REQUIRE(std::isfinite(gi));
}
