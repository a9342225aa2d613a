#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "moco/fidelity.hpp"
#include "test_helpers.hpp"

using namespace moco;
using namespace moco::test;

TEST_CASE("kl vanishes on equal arguments") {
  std::mt19937_64 rng(1);
  std::vector<double> f(32);
  for (double& v : f) v = urand(rng, 0.0, 5.0);
  CHECK(kl(f, f).value == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("kl direct evaluation") {
  const std::vector<double> g = {2.0, 1.0};
  const std::vector<double> f = {1.0, 1.0};
  CHECK(kl(g, f).value ==
        doctest::Approx(1.0 - std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("kl is nonnegative and detects differences") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 25; ++t) {
    std::vector<double> g(16), f(16);
    for (double& v : g) v = urand(rng, 0.0, 4.0);
    for (double& v : f) v = urand(rng, 0.0, 4.0);
    const double v = kl(g, f).value;
    CHECK(v >= -1e-12);
  }
}

TEST_CASE("kl rejects negative entries") {
  CHECK_THROWS_AS(kl(std::vector<double>{-0.1}, std::vector<double>{1.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(kl(std::vector<double>{0.1}, std::vector<double>{-1.0}),
                  std::invalid_argument);
}

TEST_CASE("kl gradient matches central finite differences") {
  std::mt19937_64 rng(3);
  std::vector<double> g(16), f(16);
  for (double& v : g) v = urand(rng, 0.5, 4.0);
  for (double& v : f) v = urand(rng, 0.5, 4.0);
  const auto val = kl(g, f, true);
  REQUIRE(val.gradient.has_value());
  auto fd = fd_gradient(
      [&](const std::vector<double>& x) { return kl(x, f).value; }, g, 1e-6);
  CHECK(max_rel_err(*val.gradient, fd) <= 1e-6);
}

TEST_CASE("tv of a constant image is zero") {
  const Grid g = Grid::unit(2, 16);
  CHECK(tv(DensityImage(g, 4.0)) == 0.0);
}

TEST_CASE("tv direct evaluation on a 2x2 step") {
  const Grid g = Grid::make2d(2, 2, 1.0, 1.0);
  DensityImage u(g);
  u.values = {0.0, 1.0, 0.0, 1.0};  // jump along axis 0
  CHECK(tv(u) == doctest::Approx(2.0));
}

TEST_CASE("tv is positively homogeneous and convex") {
  const Grid g = Grid::unit(2, 12);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    DensityImage u(g), v(g);
    for (double& x : u.values) x = urand(rng, -1.0, 1.0);
    for (double& x : v.values) x = urand(rng, -1.0, 1.0);
    const double c = urand(rng, -3.0, 3.0);
    DensityImage cu = u;
    for (double& x : cu.values) x *= c;
    CHECK(tv(cu) == doctest::Approx(std::abs(c) * tv(u)).epsilon(1e-12));
    DensityImage mid(g);
    for (std::size_t i = 0; i < mid.size(); ++i)
      mid.values[i] = 0.5 * (u.values[i] + v.values[i]);
    CHECK(tv(mid) <= 0.5 * tv(u) + 0.5 * tv(v) + 1e-12);
  }
}

TEST_CASE("weighted rof with zero weight on smoothing returns the target") {
  const Grid g = Grid::unit(2, 8);
  std::mt19937_64 rng(5);
  DensityImage target(g);
  for (double& v : target.values) v = urand(rng);
  std::vector<double> w(target.size(), 2.0);
  const DensityImage out = weighted_rof(target, w, 0.0);
  for (std::size_t c = 0; c < target.size(); ++c)
    CHECK(out.values[c] == target.values[c]);
}

TEST_CASE("weighted rof rejects nonpositive weights") {
  const Grid g = Grid::unit(2, 8);
  DensityImage target(g, 1.0);
  std::vector<double> w(target.size(), 1.0);
  w[3] = 0.0;
  CHECK_THROWS_AS(weighted_rof(target, w, 0.1), std::invalid_argument);
}

TEST_CASE("strong smoothing flattens to the weighted mean") {
  const Grid g = Grid::unit(2, 16);
  std::mt19937_64 rng(6);
  DensityImage target(g);
  for (double& v : target.values) v = urand(rng, 0.5, 1.5);
  std::vector<double> w(target.size(), 3.0);
  double mean = 0.0;
  for (double v : target.values) mean += v;
  mean /= target.size();

  RofOptions opts;
  opts.tol = 1e-12;
  opts.max_iter = 20000;
  const DensityImage out = weighted_rof(target, w, 50.0, opts);
  for (double v : out.values) CHECK(v == doctest::Approx(mean).epsilon(1e-3));
}

TEST_CASE("weighted rof output is locally optimal") {
  const Grid g = Grid::unit(2, 16);
  std::mt19937_64 rng(7);
  DensityImage target(g);
  for (double& v : target.values) v = urand(rng);
  std::vector<double> w(target.size());
  for (double& v : w) v = urand(rng, 0.5, 4.0);
  const double alpha = 0.02;
  RofOptions opts;
  opts.tol = 1e-9;
  opts.max_iter = 5000;
  const DensityImage out = weighted_rof(target, w, alpha, opts);
  const double e_out = weighted_rof_energy(out, target, w, alpha);
  CHECK(e_out <= weighted_rof_energy(target, target, w, alpha) + 1e-12);
  for (int t = 0; t < 100; ++t) {
    DensityImage pert = out;
    for (double& v : pert.values)
      v = std::max(v + urand(rng, -1e-3, 1e-3), 0.0);
    CHECK(e_out <= weighted_rof_energy(pert, target, w, alpha) + 1e-9);
  }
}

TEST_CASE("hyperelastic energy of the identity vanishes") {
  const HyperelasticParams p{1.0, 1.0, 1.0};
  SUBCASE("2d") {
    const Grid g = Grid::unit(2, 8);
    const auto v = hyperelastic(Deformation::identity(g), p);
    CHECK(v.value == doctest::Approx(0.0));
  }
  SUBCASE("3d") {
    const Grid g = Grid::unit(3, 4);
    const auto v = hyperelastic(Deformation::identity(g), p);
    CHECK(v.value == doctest::Approx(0.0));
  }
}

TEST_CASE("hyperelastic closed form for a uniform 3d dilation") {
  // unit-volume domain, y = 2x: len 3, surf (48-3)^2, vol (8-1)^4/64
  const Grid g = Grid::make3d(4, 4, 4, 0.25, 0.25, 0.25);
  Deformation y = Deformation::identity(g);
  for (double& v : y.nodal) v *= 2.0;
  const double a1 = 0.7, a2 = 0.03, a3 = 1.7;
  const auto v = hyperelastic(y, {a1, a2, a3});
  const double expected = 3.0 * a1 + 2025.0 * a2 + (2401.0 / 64.0) * a3;
  CHECK(v.value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("hyperelastic is infinite exactly when orientation reverses") {
  const Grid g = Grid::unit(2, 8);
  Deformation y = Deformation::identity(g);
  // flip one interior node far enough to invert neighboring cells
  const std::size_t node = g.node_index({4, 4, 0});
  y.node(node)[0] -= 0.3;
  const auto v = hyperelastic(y, {1.0, 1.0, 1.0});
  const auto det = det_field(nodal_jacobian(y));
  double min_det = det[0];
  for (double d : det) min_det = std::min(min_det, d);
  REQUIRE(min_det <= 0.0);
  CHECK(std::isinf(v.value));
  CHECK(!v.gradient.has_value());
}

TEST_CASE("hyperelastic gradient matches central finite differences") {
  const Grid g = Grid::unit(2, 8);  // 9x9 nodes
  const HyperelasticParams p{1.3, 0.8, 2.1};
  const Deformation y = random_smooth_deformation(g, 0.06, 21);
  const auto v = hyperelastic(y, p, true);
  REQUIRE(v.gradient.has_value());
  auto fn = [&](const std::vector<double>& x) {
    Deformation yy;
    yy.grid = g;
    yy.nodal = x;
    return hyperelastic(yy, p).value;
  };
  const auto fd = fd_gradient(fn, y.nodal, 1e-6);
  CHECK(max_rel_err(*v.gradient, fd) <= 1e-5);
}

TEST_CASE("hyperelastic 3d gradient matches finite differences") {
  const Grid g = Grid::unit(3, 4);
  const HyperelasticParams p{1.0, 0.5, 1.5};
  const Deformation y = random_smooth_deformation(g, 0.05, 31);
  const auto v = hyperelastic(y, p, true);
  REQUIRE(v.gradient.has_value());
  auto fn = [&](const std::vector<double>& x) {
    Deformation yy;
    yy.grid = g;
    yy.nodal = x;
    return hyperelastic(yy, p).value;
  };
  const auto fd = fd_gradient(fn, y.nodal, 1e-6);
  CHECK(max_rel_err(*v.gradient, fd) <= 1e-5);
}
