#include <doctest.h>

#include <memory>
#include <random>
#include <stdexcept>

#include "moco/motionreg.hpp"
#include "moco/pipeline.hpp"
#include "test_helpers.hpp"

using namespace moco;
using namespace moco::test;

namespace {

RegistrationProblem make_problem(const Grid& g, double beta,
                                 const Deformation& true_motion,
                                 double sigma = 0.05) {
  double center[2] = {0.5, 0.5};
  RegistrationProblem prob;
  prob.rho0 = disc_phantom(g, center, 0.28, 2.0);
  prob.op = std::make_shared<GaussianBlurOperator>(g, sigma);
  const PushResult moved = push_mass_preserving(prob.rho0, true_motion);
  prob.f = prob.op->apply(moved.image);
  prob.hyper = {1.0, 1.0, 1.0};
  prob.beta = beta;
  return prob;
}

}  // namespace

TEST_CASE("objective is zero with vanishing gradient at the truth") {
  const Grid g = Grid::unit(2, 16);
  const RegistrationProblem prob =
      make_problem(g, 0.5, Deformation::identity(g));
  std::vector<double> grad;
  const auto e =
      registration_objective(prob, Deformation::identity(g), &grad);
  CHECK(e.value == doctest::Approx(0.0).epsilon(1e-8));
  double gmax = 0.0, scale = 0.0;
  for (double v : grad) gmax = std::max(gmax, std::abs(v));
  for (double v : prob.f.values) scale = std::max(scale, v);
  CHECK(gmax <= 1e-8 * std::max(scale, 1.0));
}

TEST_CASE("objective gradient matches central finite differences") {
  const Grid g = Grid::unit(2, 8);  // 9x9 nodes
  const RegistrationProblem prob =
      make_problem(g, 0.3, random_smooth_deformation(g, 0.05, 41));
  const Deformation y = random_smooth_deformation(g, 0.06, 42);
  std::vector<double> grad;
  const auto e = registration_objective(prob, y, &grad);
  REQUIRE(std::isfinite(e.value));
  auto fn = [&](const std::vector<double>& x) {
    Deformation yy;
    yy.grid = g;
    yy.nodal = x;
    return registration_objective(prob, yy, nullptr).value;
  };
  const auto fd = fd_gradient(fn, y.nodal, 1e-6);
  CHECK(max_rel_err(grad, fd) <= 1e-4);
}

TEST_CASE("objective is infeasible when the deformation folds") {
  const Grid g = Grid::unit(2, 8);
  const RegistrationProblem prob =
      make_problem(g, 1.0, Deformation::identity(g));
  Deformation y = Deformation::identity(g);
  y.node(g.node_index({4, 4, 0}))[0] -= 0.4;
  const auto e = registration_objective(prob, y, nullptr);
  CHECK(std::isinf(e.value));
  CHECK(e.min_det <= 0.0);
}

TEST_CASE("with constant template and identity operator the objective only "
          "sees the determinant") {
  const Grid g = Grid::unit(2, 8);
  RegistrationProblem prob;
  prob.rho0 = DensityImage(g, 2.0);
  prob.op = std::make_shared<IdentityOperator>(g);
  prob.f = prob.op->apply(prob.rho0);
  prob.hyper = {1.0, 1.0, 1.0};
  prob.beta = 0.0;

  const Deformation y = random_smooth_deformation(g, 0.05, 55);
  const auto e = registration_objective(prob, y, nullptr);

  // direct evaluation of sum_c 2 det - 2 log(2 det) + 2 log 2 - 2 over
  // cells whose deformed center stays inside the domain
  const auto det = det_field(nodal_jacobian(y));
  double expect = 0.0;
  double x[kMaxDim], z[kMaxDim];
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    g.cell_center(c, x);
    y.evaluate(x, z);
    const double rho = g.contains(z) ? 2.0 : 0.0;
    const double pushed = std::max(rho * det[c], 0.0);
    expect += pushed - 2.0 * std::log(pushed + kLogGuard) +
              2.0 * std::log(2.0 + kLogGuard) - 2.0;
  }
  CHECK(e.value == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("bfgs minimizes a quadratic in a handful of iterations") {
  const int n = 12;
  std::vector<double> target(n);
  std::mt19937_64 rng(8);
  for (double& v : target) v = urand(rng, -2.0, 2.0);
  int evals = 0;
  auto fn = [&](std::span<const double> x, std::span<double> g) {
    ++evals;
    double v = 0.0;
    for (int i = 0; i < n; ++i) {
      g[i] = x[i] - target[i];
      v += 0.5 * g[i] * g[i];
    }
    return v;
  };
  BfgsOptions opts;
  opts.grad_tol = 1e-9;
  const BfgsResult res = bfgs_minimize(fn, std::vector<double>(n, 0.0), opts);
  CHECK(res.iterations <= n + 5);
  CHECK(res.grad_norm <= 1e-8);
  for (int i = 0; i < n; ++i)
    CHECK(res.x[i] == doctest::Approx(target[i]).epsilon(1e-7));
}

TEST_CASE("bfgs requires a finite start") {
  auto fn = [](std::span<const double>, std::span<double>) {
    return std::numeric_limits<double>::infinity();
  };
  CHECK_THROWS_AS(bfgs_minimize(fn, {1.0}, BfgsOptions{}),
                  std::invalid_argument);
}

TEST_CASE("dirichlet mask pins boundary nodes exactly") {
  const Grid g = Grid::unit(2, 8);
  const RegistrationProblem prob =
      make_problem(g, 0.2, random_smooth_deformation(g, 0.06, 77));
  const auto mask = interior_node_mask(g);
  const Deformation y0 = Deformation::identity(g);
  auto fn = [&](std::span<const double> x, std::span<double> gr) {
    Deformation y;
    y.grid = g;
    y.nodal.assign(x.begin(), x.end());
    std::vector<double> grad;
    const auto e = registration_objective(prob, y, &grad);
    std::copy(grad.begin(), grad.end(), gr.begin());
    return e.value;
  };
  BfgsOptions opts;
  opts.max_iters = 25;
  const BfgsResult res = bfgs_minimize(fn, y0.nodal, opts, mask);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) CHECK(res.x[i] == y0.nodal[i]);
}

TEST_CASE("accepted steps strictly decrease the registration objective") {
  const Grid g = Grid::unit(2, 16);
  const RegistrationProblem prob =
      make_problem(g, 0.2, random_smooth_deformation(g, 0.08, 13));
  std::vector<double> values;
  auto fn = [&](std::span<const double> x, std::span<double> gr) {
    Deformation y;
    y.grid = g;
    y.nodal.assign(x.begin(), x.end());
    std::vector<double> grad;
    const auto e = registration_objective(prob, y, &grad);
    std::copy(grad.begin(), grad.end(), gr.begin());
    return e.value;
  };
  BfgsOptions opts;
  opts.max_iters = 30;
  auto cb = [&](const BfgsIterate& it) { values.push_back(it.value); };
  bfgs_minimize(fn, Deformation::identity(g).nodal, opts,
                interior_node_mask(g), cb);
  REQUIRE(values.size() >= 2);
  for (std::size_t i = 1; i < values.size(); ++i)
    CHECK(values[i] < values[i - 1]);
}

TEST_CASE("every accepted iterate stays orientation preserving") {
  const Grid g = Grid::unit(2, 16);
  const RegistrationProblem prob =
      make_problem(g, 0.1, random_smooth_deformation(g, 0.1, 29));
  std::vector<double> dets;
  auto fn = [&](std::span<const double> x, std::span<double> gr) {
    Deformation y;
    y.grid = g;
    y.nodal.assign(x.begin(), x.end());
    std::vector<double> grad;
    const auto e = registration_objective(prob, y, &grad);
    std::copy(grad.begin(), grad.end(), gr.begin());
    return e.value;
  };
  RegistrationEnergy probe{};
  BfgsOptions opts;
  opts.max_iters = 40;
  auto cb = [&](const BfgsIterate&) {
    // re-evaluate min det at the accepted iterate lazily via the problem
  };
  const BfgsResult res = bfgs_minimize(fn, Deformation::identity(g).nodal,
                                       opts, interior_node_mask(g), cb);
  Deformation y;
  y.grid = g;
  y.nodal = res.x;
  probe = registration_objective(prob, y, nullptr);
  CHECK(probe.min_det > 0.0);
  (void)dets;
}

TEST_CASE("self registration returns the identity") {
  const Grid g = Grid::unit(2, 32);
  const RegistrationProblem prob =
      make_problem(g, 0.5, Deformation::identity(g));
  MultilevelOptions ml;
  ml.levels = 3;
  const Deformation y = multilevel_register(prob, ml, BfgsOptions{});
  const Deformation id = Deformation::identity(g);
  double err = 0.0;
  for (std::size_t i = 0; i < y.nodal.size(); ++i)
    err = std::max(err, std::abs(y.nodal[i] - id.nodal[i]));
  CHECK(err <= 0.5 / 32);
}

TEST_CASE("multilevel recovers an analytic shrink within half a cell") {
  const Grid g = Grid::unit(2, 64);
  RadialContraction motion;
  motion.center = {0.5, 0.5, 0.0};
  motion.radius = 0.45;
  motion.rate = 0.2;  // displacement up to ~8 cells
  const Deformation truth = motion.sample(g);
  const RegistrationProblem prob = make_problem(g, 0.05, truth);

  MultilevelOptions ml;
  ml.levels = 3;
  BfgsOptions opts;
  opts.max_iters = 200;
  const Deformation y = multilevel_register(prob, ml, opts);

  // RMS over interior nodes, in cells
  double acc = 0.0;
  std::size_t count = 0;
  const auto mask = interior_node_mask(g);
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    if (!mask[n * 2]) continue;
    const double dx = (y.node(n)[0] - truth.node(n)[0]) * 64.0;
    const double dy = (y.node(n)[1] - truth.node(n)[1]) * 64.0;
    acc += dx * dx + dy * dy;
    ++count;
  }
  const double rms = std::sqrt(acc / count);
  CHECK(rms <= 0.5);

  const auto rep = invertibility_report(y);
  CHECK(rep.min_det > 0.0);
  CHECK(rep.fraction_multi <= 0.05);
}

TEST_CASE("one level equals a direct fine-grid solve") {
  const Grid g = Grid::unit(2, 16);
  const RegistrationProblem prob =
      make_problem(g, 0.2, random_smooth_deformation(g, 0.05, 61));
  MultilevelOptions ml;
  ml.levels = 1;
  BfgsOptions opts;
  opts.max_iters = 40;
  const Deformation via_ml = multilevel_register(prob, ml, opts);

  auto fn = [&](std::span<const double> x, std::span<double> gr) {
    Deformation y;
    y.grid = g;
    y.nodal.assign(x.begin(), x.end());
    std::vector<double> grad;
    const auto e = registration_objective(prob, y, &grad);
    std::copy(grad.begin(), grad.end(), gr.begin());
    return e.value;
  };
  const BfgsResult direct = bfgs_minimize(fn, Deformation::identity(g).nodal,
                                          opts, interior_node_mask(g));
  for (std::size_t i = 0; i < direct.x.size(); ++i)
    CHECK(via_ml.nodal[i] == doctest::Approx(direct.x[i]).epsilon(1e-12));
}
