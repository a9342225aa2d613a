#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "moco/deform.hpp"
#include "moco/pipeline.hpp"
#include "test_helpers.hpp"

using namespace moco;
using namespace moco::test;

namespace {

// orientation-reversing fold across the vertical midline
Deformation fold_map(const Grid& g) {
  Deformation y(g);
  const double mid = g.origin[0] + 0.5 * g.extent(0);
  double x[kMaxDim];
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    g.node_position(n, x);
    y.node(n)[0] = mid + std::abs(x[0] - mid);
    y.node(n)[1] = x[1];
    if (g.ndim == 3) y.node(n)[2] = x[2];
  }
  return y;
}

RadialContraction centered_shrink(const Grid& g, double rate) {
  RadialContraction c;
  for (int a = 0; a < g.ndim; ++a)
    c.center[a] = g.origin[a] + 0.5 * g.extent(a);
  c.radius = 0.45 * std::min(g.extent(0), g.extent(1));
  c.rate = rate;
  return c;
}

}  // namespace

TEST_CASE("push by the identity reproduces the image exactly") {
  const Grid g = Grid::unit(2, 16);
  std::mt19937_64 rng(5);
  DensityImage img(g);
  for (double& v : img.values) v = urand(rng);
  const PushResult res = push_mass_preserving(img, Deformation::identity(g));
  CHECK(res.clamped == 0);
  for (std::size_t c = 0; c < img.size(); ++c)
    CHECK(res.image.values[c] == doctest::Approx(img.values[c]).epsilon(1e-14));
}

TEST_CASE("push of a constant by a uniform shrink scales by the determinant") {
  const Grid g = Grid::make2d(32, 32, 1.0 / 32, 1.0 / 32);
  DensityImage ones(g, 1.0);
  // y(x) = x/2 + 1/4 keeps the image inside the domain
  Deformation y(g);
  double x[kMaxDim];
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    g.node_position(n, x);
    y.node(n)[0] = 0.5 * x[0] + 0.25;
    y.node(n)[1] = 0.5 * x[1] + 0.25;
  }
  const PushResult res = push_mass_preserving(ones, y);
  CHECK(res.clamped == 0);
  for (std::size_t c = 0; c < ones.size(); ++c)
    CHECK(res.image.values[c] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("push mismatched grids throws") {
  const Grid g = Grid::unit(2, 8);
  const Grid h = Grid::unit(2, 16);
  DensityImage img(g, 1.0);
  CHECK_THROWS_AS(push_mass_preserving(img, Deformation::identity(h)),
                  std::invalid_argument);
}

TEST_CASE("push is linear on nonnegative images") {
  const Grid g = Grid::unit(2, 12);
  std::mt19937_64 rng(17);
  DensityImage u1(g), u2(g);
  for (double& v : u1.values) v = urand(rng);
  for (double& v : u2.values) v = urand(rng);
  const Deformation y = random_smooth_deformation(g, 0.08, 99);
  const double a = 0.7, b = 2.3;
  DensityImage combo(g);
  for (std::size_t c = 0; c < combo.size(); ++c)
    combo.values[c] = a * u1.values[c] + b * u2.values[c];
  const auto p1 = push_mass_preserving(u1, y);
  const auto p2 = push_mass_preserving(u2, y);
  const auto pc = push_mass_preserving(combo, y);
  for (std::size_t c = 0; c < combo.size(); ++c)
    CHECK(pc.image.values[c] ==
          doctest::Approx(a * p1.image.values[c] + b * p2.image.values[c])
              .epsilon(1e-12));
}

TEST_CASE("mass is conserved under an analytic shrink and converges") {
  double center[2] = {0.5, 0.5};
  double err64, err128;
  {
    const Grid g = Grid::unit(2, 64);
    const DensityImage disc = disc_phantom(g, center, 0.2, 1.0);
    const Deformation y = centered_shrink(g, 0.15).sample(g);
    err64 = mass_error(disc, y);
    CHECK(err64 <= 0.02);
  }
  {
    const Grid g = Grid::unit(2, 128);
    const DensityImage disc = disc_phantom(g, center, 0.2, 1.0);
    const Deformation y = centered_shrink(g, 0.15).sample(g);
    err128 = mass_error(disc, y);
  }
  CHECK(err128 <= 0.6 * err64);
}

TEST_CASE("identity mass error is zero to machine precision") {
  const Grid g = Grid::unit(2, 32);
  double center[2] = {0.5, 0.5};
  const DensityImage disc = disc_phantom(g, center, 0.25, 2.0);
  CHECK(mass_error(disc, Deformation::identity(g)) <= 1e-13);
}

TEST_CASE("mass error rejects a massless template") {
  const Grid g = Grid::unit(2, 8);
  DensityImage zero(g, 0.0);
  CHECK_THROWS_AS(mass_error(zero, Deformation::identity(g)),
                  std::invalid_argument);
}

TEST_CASE("fold maps lose mass at every resolution") {
  // disc straddling the fold line: one branch reverses orientation and is
  // clamped away, so about half the mass disappears
  for (int n : {32, 64, 128}) {
    const Grid g = Grid::unit(2, n);
    double center[2] = {0.5, 0.5};
    const DensityImage disc = disc_phantom(g, center, 0.2, 1.0);
    CHECK(mass_error(disc, fold_map(g)) >= 0.05);
  }
}

TEST_CASE("banach indicatrix of the identity is one on the domain") {
  const Grid g = Grid::unit(2, 16);
  const IndicatrixField f = banach_indicatrix(Deformation::identity(g), g);
  for (int c : f.counts) CHECK(c == 1);
}

TEST_CASE("banach indicatrix counts both branches of a fold") {
  // fold in axis 0, constant in axis 1: the right half receives two source
  // points per target cell, the left half none
  const Grid g = Grid::make2d(128, 4, 2.0 / 128, 0.25, -1.0, 0.0);
  const IndicatrixField f = banach_indicatrix(fold_map(g), g);
  int twos = 0, zeros = 0;
  for (std::size_t c = 0; c < f.counts.size(); ++c) {
    const auto idx = f.grid.cell_coords(c);
    const bool right = idx[0] >= 64;
    if (right && f.counts[c] == 2) ++twos;
    if (!right && f.counts[c] == 0) ++zeros;
  }
  // up to one cell layer at the fold line
  CHECK(twos >= 63 * 4 - 8);
  CHECK(zeros >= 63 * 4 - 8);
}

TEST_CASE("banach indicatrix of a uniform shrink piles up bounded counts") {
  const Grid g = Grid::unit(2, 64);
  Deformation y(g);
  double x[kMaxDim];
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    g.node_position(n, x);
    y.node(n)[0] = 0.5 * x[0] + 0.25;
    y.node(n)[1] = 0.5 * x[1] + 0.25;
  }
  const IndicatrixField f = banach_indicatrix(y, g);
  std::size_t support = 0;
  for (int c : f.counts) {
    CHECK(c <= 4);
    if (c > 0) ++support;
  }
  const double measured = static_cast<double>(support) / f.counts.size();
  CHECK(measured == doctest::Approx(0.25).epsilon(0.15));
}

TEST_CASE("invertibility report distinguishes maps") {
  const Grid g = Grid::unit(2, 64);
  SUBCASE("identity") {
    const auto rep = invertibility_report(Deformation::identity(g));
    CHECK(rep.max_count == 1);
    CHECK(rep.fraction_multi == 0.0);
    CHECK(rep.min_det == doctest::Approx(1.0));
    CHECK(rep.fraction_nonpos_det == 0.0);
  }
  SUBCASE("fold") {
    const auto rep = invertibility_report(fold_map(g));
    CHECK(rep.fraction_multi == doctest::Approx(0.5).epsilon(0.1));
    CHECK(rep.fraction_nonpos_det == doctest::Approx(0.5).epsilon(0.1));
    CHECK(rep.max_count >= 2);
  }
  SUBCASE("smooth shrink with identity boundary") {
    const Deformation y = centered_shrink(g, 0.15).sample(g);
    const auto rep = invertibility_report(y);
    CHECK(rep.min_det > 0.0);
    CHECK(rep.fraction_multi <= 0.05);
  }
}
