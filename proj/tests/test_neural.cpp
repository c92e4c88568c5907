#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "polycert/dynamics.hpp"
#include "polycert/neural.hpp"
#include "polycert/rng.hpp"

using namespace polycert;

namespace {

Mlp<double> random_net(Rng& rng, const std::vector<std::size_t>& sizes) {
  Mlp<double> net;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Mat<double> W(sizes[l + 1], sizes[l]);
    for (auto& w : W.a) w = rng.uniform(-1.0, 1.0);
    std::vector<double> b(sizes[l + 1]);
    for (auto& v : b) v = rng.uniform(-0.5, 0.5);
    net.W.push_back(std::move(W));
    net.b.push_back(std::move(b));
  }
  return net;
}

IntervalVector<double> random_box(Rng& rng, std::size_t n, double scale) {
  std::vector<double> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(-scale, scale), b = rng.uniform(-scale, scale);
    lo[i] = std::min(a, b);
    hi[i] = std::max(a, b);
  }
  return {lo, hi};
}

std::vector<double> sample_in(Rng& rng, const IntervalVector<double>& box) {
  std::vector<double> x(box.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(box.lo[i], box.hi[i]);
  return x;
}

bool bounds_hold(const AffineBounds<double>& rel, const std::vector<double>& x,
                 const std::vector<double>& y, double tol) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    double lo = rel.d_lo[i], hi = rel.d_hi[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      lo += rel.c_lo(i, j) * x[j];
      hi += rel.c_hi(i, j) * x[j];
    }
    if (y[i] < lo - tol || y[i] > hi + tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mlp forward") {
  Mlp<double> zero;
  zero.W.push_back(Mat<double>(2, 3));
  zero.b.push_back(std::vector<double>(2, 0.0));
  CHECK(zero.forward({1.0, -2.0, 0.5}) == std::vector<double>{0.0, 0.0});

  Mlp<double> lin;
  lin.W.push_back(Mat<double>::from_rows({{2.0, -1.0}, {0.5, 0.0}}));
  lin.b.push_back({1.0, -1.0});
  const auto y = lin.forward({3.0, 4.0});
  CHECK(y[0] == 2.0 * 3.0 - 4.0 + 1.0);
  CHECK(y[1] == 0.5 * 3.0 - 1.0);

  // two-layer network against hand evaluation with explicit relu
  Rng rng(42);
  const auto net = random_net(rng, {2, 4, 2});
  const std::vector<double> x{0.3, -0.8};
  std::vector<double> h(4);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = net.b[0][i];
    for (std::size_t j = 0; j < 2; ++j) s += net.W[0](i, j) * x[j];
    h[i] = s > 0 ? s : 0.0;
  }
  std::vector<double> ref(2);
  for (std::size_t i = 0; i < 2; ++i) {
    double s = net.b[1][i];
    for (std::size_t j = 0; j < 4; ++j) s += net.W[1](i, j) * h[j];
    ref[i] = s;
  }
  const auto out = net.forward(x);
  CHECK(out[0] == Catch::Approx(ref[0]).margin(1e-14));
  CHECK(out[1] == Catch::Approx(ref[1]).margin(1e-14));
}

TEST_CASE("parameter packing round trip") {
  Rng rng(4242);
  const auto net = random_net(rng, {3, 5, 2});
  const auto theta = mlp_to_params(net);
  const MlpShape shape = shape_of(net);
  CHECK(theta.size() == shape.param_count());
  const auto back = mlp_from_params<double>(shape, std::span<const double>(theta));
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    CHECK(back.W[l].a == net.W[l].a);
    CHECK(back.b[l] == net.b[l]);
  }
}

TEST_CASE("crown on a purely linear net is exact") {
  Mlp<double> lin;
  lin.W.push_back(Mat<double>::from_rows({{1.5, -2.0}, {0.0, 3.0}}));
  lin.b.push_back({0.25, -1.0});
  const IntervalVector<double> box({-1.0, 0.0}, {1.0, 2.0});
  const auto rel = crown_mlp(lin, box);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rel.d_lo[i] == lin.b[0][i]);
    CHECK(rel.d_hi[i] == lin.b[0][i]);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(rel.c_lo(i, j) == lin.W[0](i, j));
      CHECK(rel.c_hi(i, j) == lin.W[0](i, j));
    }
  }
}

TEST_CASE("crown single neuron stable and unstable boxes") {
  // net(x) = relu(x) through an output layer reading the hidden unit
  Mlp<double> net;
  net.W.push_back(Mat<double>::from_rows({{1.0}}));
  net.b.push_back({0.0});
  net.W.push_back(Mat<double>::from_rows({{1.0}}));
  net.b.push_back({0.0});

  // stably active: exact identity
  auto rel = crown_mlp(net, IntervalVector<double>({1.0}, {2.0}));
  CHECK(rel.c_lo(0, 0) == 1.0);
  CHECK(rel.c_hi(0, 0) == 1.0);
  CHECK(rel.d_lo[0] == 0.0);
  CHECK(rel.d_hi[0] == 0.0);

  // unstable on [-1, 1]: upper chord 0.5 x + 0.5, lower alpha x with
  // alpha = 1 because u >= |l|
  rel = crown_mlp(net, IntervalVector<double>({-1.0}, {1.0}));
  CHECK(rel.c_hi(0, 0) == 0.5);
  CHECK(rel.d_hi[0] == 0.5);
  CHECK(rel.c_lo(0, 0) == 1.0);
  CHECK(rel.d_lo[0] == 0.0);

  // u < |l| flips the lower slope to zero
  rel = crown_mlp(net, IntervalVector<double>({-2.0}, {1.0}));
  CHECK(rel.c_lo(0, 0) == 0.0);
  CHECK(rel.d_lo[0] == 0.0);
  CHECK(rel.c_hi(0, 0) == Catch::Approx(1.0 / 3.0));
  CHECK(rel.d_hi[0] == Catch::Approx(2.0 / 3.0));

  // stably inactive: exact zero
  rel = crown_mlp(net, IntervalVector<double>({-2.0}, {-1.0}));
  CHECK(rel.c_lo(0, 0) == 0.0);
  CHECK(rel.c_hi(0, 0) == 0.0);
  CHECK(rel.d_lo[0] == 0.0);
  CHECK(rel.d_hi[0] == 0.0);
}

TEST_CASE("crown is tight on degenerate boxes") {
  Rng rng(17);
  for (int iter = 0; iter < 30; ++iter) {
    const auto net = random_net(rng, {3, 8, 8, 2});
    const auto x = rng.uniform_vec(3, -1.0, 1.0);
    const auto rel = crown_mlp(net, IntervalVector<double>::point(x));
    const auto y = net.forward(x);
    for (std::size_t i = 0; i < 2; ++i) {
      double lo = rel.d_lo[i], hi = rel.d_hi[i];
      for (std::size_t j = 0; j < 3; ++j) {
        lo += rel.c_lo(i, j) * x[j];
        hi += rel.c_hi(i, j) * x[j];
      }
      CHECK(lo == Catch::Approx(y[i]).margin(1e-10));
      CHECK(hi == Catch::Approx(y[i]).margin(1e-10));
    }
  }
}

TEST_CASE("crown soundness fuzz") {
  Rng rng(2024);
  for (int iter = 0; iter < 100; ++iter) {
    const int hidden = rng.uniform_int(1, 3);
    std::vector<std::size_t> sizes{static_cast<std::size_t>(rng.uniform_int(1, 3))};
    for (int l = 0; l < hidden; ++l) sizes.push_back(rng.uniform_int(1, 16));
    sizes.push_back(rng.uniform_int(1, 2));

    const auto net = random_net(rng, sizes);
    const auto box = random_box(rng, sizes.front(), 1.5);
    const auto rel = crown_mlp(net, box);
    for (int s = 0; s < 25; ++s) {
      const auto x = sample_in(rng, box);
      CHECK(bounds_hold(rel, x, net.forward(x), 1e-9));
    }
  }
}

TEST_CASE("interval_output matches the split formula") {
  // point box with exact relaxation collapses to the network value
  Mlp<double> lin;
  lin.W.push_back(Mat<double>::from_rows({{2.0, -3.0}}));
  lin.b.push_back({0.5});
  const IntervalVector<double> pt = IntervalVector<double>::point({1.0, 1.0});
  const auto relp = crown_mlp(lin, pt);
  const auto outp = interval_output(relp, pt);
  CHECK(outp.lo[0] == Catch::Approx(-0.5).margin(1e-14));
  CHECK(outp.hi[0] == Catch::Approx(-0.5).margin(1e-14));

  // linear net over a box gives the exact interval hull
  const IntervalVector<double> box({-1.0, 2.0}, {1.0, 3.0});
  const auto rel = crown_mlp(lin, box);
  const auto out = interval_output(rel, box);
  CHECK(out.lo[0] == Catch::Approx(2.0 * -1.0 - 3.0 * 3.0 + 0.5).margin(1e-14));
  CHECK(out.hi[0] == Catch::Approx(2.0 * 1.0 - 3.0 * 2.0 + 0.5).margin(1e-14));

  // Monte Carlo containment on a relu net
  Rng rng(31);
  const auto net = random_net(rng, {2, 6, 1});
  const auto b2 = random_box(rng, 2, 1.0);
  const auto r2 = crown_mlp(net, b2);
  const auto o2 = interval_output(r2, b2);
  for (int s = 0; s < 1000; ++s) {
    const auto x = sample_in(rng, b2);
    const double y = net.forward(x)[0];
    CHECK(y >= o2.lo[0] - 1e-9);
    CHECK(y <= o2.hi[0] + 1e-9);
  }

  // shrinking the box can only shrink the output interval
  IntervalVector<double> small = b2;
  for (std::size_t i = 0; i < 2; ++i) {
    const double mid = 0.5 * (small.lo[i] + small.hi[i]);
    small.lo[i] = 0.5 * (small.lo[i] + mid);
    small.hi[i] = 0.5 * (small.hi[i] + mid);
  }
  const auto rs = crown_mlp(net, small);
  const auto os = interval_output(rs, small);
  CHECK(os.lo[0] >= o2.lo[0] - 1e-12);
  CHECK(os.hi[0] <= o2.hi[0] + 1e-12);
}

TEST_CASE("policy with observation maps") {
  Rng rng(55);
  const std::size_t vehicles = 4;
  const auto maps = platoon_observation_maps(vehicles);
  Policy<double> pol{random_net(rng, {6, 8, 1}), maps};
  CHECK(pol.state_dim() == 2 * vehicles);
  CHECK(pol.out_dim() == vehicles);

  const auto x = rng.uniform_vec(2 * vehicles, -0.1, 0.1);
  const auto u = pol.forward(x);
  REQUIRE(u.size() == vehicles);
  for (std::size_t j = 0; j < vehicles; ++j) {
    const auto o = matvec(maps[j], x);
    CHECK(u[j] == Catch::Approx(pol.net.forward(o)[0]).margin(1e-12));
  }

  // translating every position leaves interior follower inputs unchanged
  // (boundary vehicles read a zero state for the missing neighbour, so only
  // followers with both neighbours present are translation invariant)
  const std::size_t wide = 7;
  Policy<double> pol7{pol.net, platoon_observation_maps(wide)};
  const auto x7 = rng.uniform_vec(2 * wide, -0.1, 0.1);
  std::vector<double> shifted = x7;
  for (std::size_t j = 0; j < wide; ++j) shifted[2 * j] += 0.37;
  const auto u7 = pol7.forward(x7);
  const auto us = pol7.forward(shifted);
  for (std::size_t j = 0; j < wide; ++j) {
    const std::size_t vehicle = j + 1;
    if (vehicle % 3 == 0 || vehicle == 1 || vehicle == wide) continue;
    CHECK(us[j] == Catch::Approx(u7[j]).margin(1e-12));
  }

  // crown through the observation maps stays sound
  const auto box = random_box(rng, 2 * vehicles, 0.2);
  const auto rel = crown(pol, box);
  for (int s = 0; s < 200; ++s) {
    const auto xs = sample_in(rng, box);
    CHECK(bounds_hold(rel, xs, pol.forward(xs), 1e-9));
  }
}

TEST_CASE("crown coefficients carry gradients") {
  // d/dw of the upper chord at the output should match finite differences
  const MlpShape shape{{1, 1, 1}};
  std::vector<double> theta{1.0, 0.0, 1.0, 0.0};  // W0=1, b0=0, W1=1, b1=0

  auto upper_at = [&](const std::vector<double>& th) {
    const auto net = mlp_from_params<double>(shape, std::span<const double>(th));
    const auto rel = crown_mlp(net, IntervalVector<double>({-1.0}, {1.0}));
    return rel.c_hi(0, 0) * 0.3 + rel.d_hi[0];
  };

  const auto g = grad(
      [&](const std::vector<Var>& th) {
        const auto net = mlp_from_params<Var>(shape, std::span<const Var>(th.data(), th.size()));
        const auto rel = crown_mlp(net, lift(IntervalVector<double>({-1.0}, {1.0})));
        return rel.c_hi(0, 0) * Var(0.3) + rel.d_hi[0];
      },
      theta);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    std::vector<double> tp = theta, tm = theta;
    tp[i] += 1e-6;
    tm[i] -= 1e-6;
    const double fd = (upper_at(tp) - upper_at(tm)) / 2e-6;
    CHECK(g[i] == Catch::Approx(fd).margin(1e-5));
  }
}
