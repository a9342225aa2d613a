#include <doctest.h>

#include <memory>
#include <random>

#include "moco/forward.hpp"
#include "test_helpers.hpp"

using namespace moco;
using namespace moco::test;

namespace {

double adjoint_gap(const ForwardOperator& K, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> u(K.image_size()), v(K.detector_size());
  for (double& x : u) x = urand(rng, -1.0, 1.0);
  for (double& x : v) x = urand(rng, -1.0, 1.0);
  std::vector<double> Ku(K.detector_size()), Ktv(K.image_size());
  K.apply(u, Ku);
  K.apply_adjoint(v, Ktv);
  double lhs = 0.0, rhs = 0.0, nKu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < Ku.size(); ++i) {
    lhs += Ku[i] * v[i];
    nKu += Ku[i] * Ku[i];
    nv += v[i] * v[i];
  }
  for (std::size_t i = 0; i < u.size(); ++i) rhs += u[i] * Ktv[i];
  return std::abs(lhs - rhs) /
         std::max(std::sqrt(nKu) * std::sqrt(nv), 1e-30);
}

}  // namespace

TEST_CASE("blur of a constant stays constant away from the boundary") {
  const Grid g = Grid::unit(2, 32);
  const GaussianBlurOperator K(g, 0.05);
  DensityImage u(g, 2.5);
  const DetectorData out = K.apply(u);
  // 4 sigma = 0.2 -> 7 cells of margin
  for (int j = 8; j < 24; ++j)
    for (int i = 8; i < 24; ++i)
      CHECK(out.values[static_cast<std::size_t>(j) * 32 + i] ==
            doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("blur with zero width is the identity") {
  const Grid g = Grid::unit(2, 8);
  const GaussianBlurOperator K(g, 0.0);
  std::mt19937_64 rng(2);
  DensityImage u(g);
  for (double& v : u.values) v = urand(rng);
  const DetectorData out = K.apply(u);
  for (std::size_t c = 0; c < u.size(); ++c)
    CHECK(out.values[c] == u.values[c]);
}

TEST_CASE("projector profiles carry the same mass at every angle") {
  const Grid g = Grid::unit(2, 32);
  const ParallelProjectorOperator K(g, 12, 48);
  // point-like unit mass at the center
  DensityImage u(g, 0.0);
  u.values[16 * 32 + 16] = 1.0;
  const DetectorData out = K.apply(u);
  std::vector<double> totals(12, 0.0);
  for (int a = 0; a < 12; ++a)
    for (int b = 0; b < 48; ++b) totals[a] += out.values[a * 48 + b];
  const double mean = totals[0];
  for (double t : totals) CHECK(t == doctest::Approx(mean).epsilon(0.02));
}

TEST_CASE("operators preserve nonnegativity") {
  const Grid g = Grid::unit(2, 16);
  std::mt19937_64 rng(3);
  DensityImage u(g);
  for (double& v : u.values) v = urand(rng);
  for (const ForwardOperator* K :
       {static_cast<const ForwardOperator*>(
            new GaussianBlurOperator(g, 0.06)),
        static_cast<const ForwardOperator*>(
            new ParallelProjectorOperator(g, 8, 24))}) {
    const DetectorData out = K->apply(u);
    for (double v : out.values) CHECK(v >= 0.0);
    delete K;
  }
}

TEST_CASE("sensitivity image is positive everywhere") {
  const Grid g = Grid::unit(2, 24);
  const GaussianBlurOperator blur(g, 0.04);
  for (double s : blur.adjoint_of_ones()) CHECK(s > 0.0);
  const ParallelProjectorOperator proj(g, 16, 36);
  for (double s : proj.adjoint_of_ones()) CHECK(s > 0.0);
}

TEST_CASE("adjoint identities hold to near machine precision") {
  const Grid g = Grid::unit(2, 24);
  SUBCASE("gaussian blur") {
    const GaussianBlurOperator K(g, 0.07);
    CHECK(adjoint_gap(K, 101) <= 1e-10);
  }
  SUBCASE("parallel projector") {
    const ParallelProjectorOperator K(g, 12, 32);
    CHECK(adjoint_gap(K, 102) <= 1e-10);
  }
  SUBCASE("identity") {
    const IdentityOperator K(g);
    CHECK(adjoint_gap(K, 103) <= 1e-14);
  }
  SUBCASE("stacked with smooth feasible gates") {
    auto base = std::make_shared<GaussianBlurOperator>(g, 0.05);
    std::vector<Deformation> gates;
    gates.push_back(Deformation::identity(g));
    gates.push_back(random_smooth_deformation(g, 0.1, 7));
    gates.push_back(random_smooth_deformation(g, 0.1, 8));
    const StackedMotionOperator K(base, gates);
    CHECK(adjoint_gap(K, 104) <= 1e-10);
  }
}

TEST_CASE("stack of one identity gate reproduces the base operator") {
  const Grid g = Grid::unit(2, 16);
  auto base = std::make_shared<GaussianBlurOperator>(g, 0.05);
  const StackedMotionOperator K(base,
                                {Deformation::identity(g)});
  std::mt19937_64 rng(4);
  DensityImage u(g);
  for (double& v : u.values) v = urand(rng);
  const DetectorData stacked = K.apply(u);
  const DetectorData plain = base->apply(u);
  REQUIRE(stacked.size() == plain.size());
  for (std::size_t i = 0; i < plain.size(); ++i)
    CHECK(stacked.values[i] == doctest::Approx(plain.values[i]).epsilon(1e-12));
}

TEST_CASE("stack of identity gates emits copies of the base projection") {
  const Grid g = Grid::unit(2, 16);
  auto base = std::make_shared<GaussianBlurOperator>(g, 0.05);
  const std::vector<Deformation> gates(3, Deformation::identity(g));
  const StackedMotionOperator K(base, gates);
  std::mt19937_64 rng(9);
  DensityImage u(g);
  for (double& v : u.values) v = urand(rng);
  const DetectorData out = K.apply(u);
  const DetectorData one = base->apply(u);
  for (int i = 0; i < 3; ++i)
    for (std::size_t s = 0; s < one.size(); ++s)
      CHECK(out.values[i * one.size() + s] ==
            doctest::Approx(one.values[s]).epsilon(1e-12));
}

TEST_CASE("stacked operator rejects an empty gate list") {
  const Grid g = Grid::unit(2, 8);
  auto base = std::make_shared<IdentityOperator>(g);
  CHECK_THROWS_AS(StackedMotionOperator(base, {}), std::invalid_argument);
}

TEST_CASE("prolonged operator has an exact adjoint") {
  const Grid fine = Grid::unit(2, 32);
  const Grid coarse = Grid::unit(2, 8);
  auto inner = std::make_shared<GaussianBlurOperator>(fine, 0.05);
  const ProlongedOperator K(coarse, inner);
  CHECK(adjoint_gap(K, 105) <= 1e-10);
  // prolongation of a constant is the constant
  std::vector<double> u(K.image_size(), 1.5), g(K.detector_size());
  K.apply(u, g);
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(1.5).epsilon(1e-12));
}
