/*
 * mocorec: motion-corrected reconstruction of gated density images
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "moco/motionreg.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace moco {

RegistrationEnergy registration_objective(const RegistrationProblem& prob,
                                          const Deformation& y,
                                          std::vector<double>* gradient) {
  const Grid& g = prob.rho0.grid;
  if (!(g == y.grid))
    throw std::invalid_argument("registration_objective: grid mismatch");
  if (!(g == prob.op->image_grid()))
    throw std::invalid_argument("registration_objective: operator grid mismatch");
  const int d = g.ndim;
  const std::size_t nc = g.cell_count();

  RegistrationEnergy out;
  const HyperelasticValue hyper =
      hyperelastic(y, prob.hyper, gradient != nullptr);
  const CellTensorField jac = nodal_jacobian(y);
  const std::vector<double> det = det_field(jac);
  out.min_det = *std::min_element(det.begin(), det.end());
  out.hyper_part = hyper.value;
  if (!std::isfinite(hyper.value)) {
    out.value = std::numeric_limits<double>::infinity();
    if (gradient) gradient->assign(y.dof_count(), 0.0);
    return out;
  }

  // transported template and, if needed, the sample values/gradients
  std::vector<double> pushed(nc);
  std::vector<double> rho_at(nc);
  std::vector<double> rho_grad(gradient ? nc * d : 0);
  std::vector<double> points(nc * d);
  double x[kMaxDim];
  for (std::size_t c = 0; c < nc; ++c) {
    g.cell_center(c, x);
    y.evaluate(x, points.data() + c * d);
  }
  if (gradient) {
    for (std::size_t c = 0; c < nc; ++c)
      rho_at[c] = sample_with_gradient(prob.rho0, points.data() + c * d,
                                       rho_grad.data() + c * d);
  } else {
    for (std::size_t c = 0; c < nc; ++c)
      rho_at[c] = sample(prob.rho0, points.data() + c * d);
  }
  for (std::size_t c = 0; c < nc; ++c)
    pushed[c] = std::max(rho_at[c] * det[c], 0.0);

  std::vector<double> proj(prob.op->detector_size());
  prob.op->apply(pushed, proj);
  const KLValue klv = kl(proj, prob.f.values, gradient != nullptr);
  out.kl_part = klv.value;
  out.value = klv.value + prob.beta * hyper.value;

  if (!gradient) return out;

  std::vector<double> q(nc);
  prob.op->apply_adjoint(*klv.gradient, q);

  gradient->assign(y.dof_count(), 0.0);
  std::vector<double>& grad = *gradient;
  const int corners = 1 << d;
  const double wcorner = 1.0 / corners;  // nodal weights at cell centers
  double cof[9];
  for (std::size_t c = 0; c < nc; ++c) {
    const double qc = q[c];
    if (qc == 0.0) continue;
    const auto cc = g.cell_coords(c);
    cof_matrix(d, jac.cell(c), cof);
    const double* gr = rho_grad.data() + c * d;
    for (int m = 0; m < corners; ++m) {
      std::array<int, kMaxDim> idx{0, 0, 0};
      for (int a = 0; a < d; ++a) idx[a] = cc[a] + ((m >> a) & 1);
      const std::size_t node = g.node_index(idx);
      // sample-location path: d pushed / d y(x_c) = det * grad rho
      for (int r = 0; r < d; ++r)
        grad[node * d + r] += qc * det[c] * gr[r] * wcorner;
      // determinant path: d det / d J = cof(J) through the stencil
      for (int a = 0; a < d; ++a) {
        const double coef = jacobian_stencil_coef(d, m, a, g.spacing[a]);
        for (int r = 0; r < d; ++r)
          grad[node * d + r] += qc * rho_at[c] * cof[r * d + a] * coef;
      }
    }
  }
  for (std::size_t i = 0; i < grad.size(); ++i)
    grad[i] += prob.beta * (*hyper.gradient)[i];
  return out;
}

std::vector<std::uint8_t> interior_node_mask(const Grid& g) {
  const std::size_t nn = g.node_count();
  std::vector<std::uint8_t> mask(nn * g.ndim, 1);
  for (std::size_t n = 0; n < nn; ++n) {
    const auto idx = g.node_coords(n);
    bool boundary = false;
    for (int a = 0; a < g.ndim; ++a)
      if (idx[a] == 0 || idx[a] == g.dims[a]) boundary = true;
    if (boundary)
      for (int r = 0; r < g.ndim; ++r) mask[n * g.ndim + r] = 0;
  }
  return mask;
}

namespace {

void apply_mask(std::span<const std::uint8_t> mask, std::span<double> v) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!mask[i]) v[i] = 0.0;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double norm_inf(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

struct LbfgsPair {
  std::vector<double> s, y;
  double rho;
};

}  // namespace

BfgsResult bfgs_minimize(const ObjectiveFn& fn, std::vector<double> x0,
                         const BfgsOptions& opts,
                         std::span<const std::uint8_t> free_mask,
                         const BfgsCallback& callback) {
  const std::size_t n = x0.size();
  if (!free_mask.empty() && free_mask.size() != n)
    throw std::invalid_argument("bfgs_minimize: mask size mismatch");

  std::vector<double> x = std::move(x0);
  std::vector<double> g(n);
  double fx = fn(x, g);
  if (!std::isfinite(fx))
    throw std::invalid_argument("bfgs_minimize: objective not finite at x0");
  apply_mask(free_mask, g);

  std::deque<LbfgsPair> pairs;
  std::vector<double> dir(n), xt(n), gt(n), alpha_buf;
  BfgsResult res;
  int iter = 0;
  double last_step = 0.0;
  for (; iter < opts.max_iters; ++iter) {
    const double gnorm = norm2(g);
    if (callback) callback({iter, fx, gnorm, last_step});
    if (gnorm <= opts.grad_tol) break;

    // two-loop recursion
    std::copy(g.begin(), g.end(), dir.begin());
    alpha_buf.assign(pairs.size(), 0.0);
    for (std::size_t k = pairs.size(); k-- > 0;) {
      const LbfgsPair& p = pairs[k];
      alpha_buf[k] = p.rho * dot(p.s, dir);
      for (std::size_t i = 0; i < n; ++i) dir[i] -= alpha_buf[k] * p.y[i];
    }
    if (!pairs.empty()) {
      const LbfgsPair& p = pairs.back();
      const double gamma = dot(p.s, p.y) / std::max(dot(p.y, p.y), 1e-300);
      for (double& v : dir) v *= gamma;
    }
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const LbfgsPair& p = pairs[k];
      const double beta = p.rho * dot(p.y, dir);
      for (std::size_t i = 0; i < n; ++i)
        dir[i] += (alpha_buf[k] - beta) * p.s[i];
    }
    for (double& v : dir) v = -v;
    apply_mask(free_mask, dir);

    double gd = dot(g, dir);
    if (!(gd < 0.0)) {  // rare breakdown: restart from steepest descent
      pairs.clear();
      for (std::size_t i = 0; i < n; ++i) dir[i] = -g[i];
      gd = -gnorm * gnorm;
    }

    // bracketing weak-Wolfe line search; +inf counts as an Armijo failure
    double t = pairs.empty() ? std::min(1.0, 1.0 / std::max(gnorm, 1e-12)) : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double best_t = 0.0, best_f = fx;
    double ft = fx;
    bool accepted = false;
    for (int ls = 0; ls < opts.ls_max; ++ls) {
      for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + t * dir[i];
      ft = fn(xt, gt);
      if (!std::isfinite(ft) || ft > fx + opts.c1 * t * gd) {
        hi = t;
        t = 0.5 * (lo + hi);
        continue;
      }
      if (ft < best_f) {
        best_f = ft;
        best_t = t;
      }
      apply_mask(free_mask, gt);
      if (dot(gt, dir) < opts.c2 * gd) {
        lo = t;
        t = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * t;
        continue;
      }
      accepted = true;
      break;
    }
    if (!accepted) {
      if (best_t == 0.0) break;  // no progress possible along this direction
      t = best_t;
      for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + t * dir[i];
      ft = fn(xt, gt);
      apply_mask(free_mask, gt);
    }

    LbfgsPair pair;
    pair.s.resize(n);
    pair.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      pair.s[i] = xt[i] - x[i];
      pair.y[i] = gt[i] - g[i];
    }
    x.swap(xt);
    g.swap(gt);
    fx = ft;
    last_step = norm2(pair.s);

    const double sy = dot(pair.s, pair.y);
    if (sy > 1e-10 * dot(pair.s, pair.s)) {  // cautious update
      pair.rho = 1.0 / sy;
      pairs.push_back(std::move(pair));
      if (static_cast<int>(pairs.size()) > opts.memory) pairs.pop_front();
    }
    if (norm_inf(pair.s) <= opts.step_tol) {
      ++iter;
      break;
    }
  }

  res.x = std::move(x);
  res.value = fx;
  res.grad_norm = norm2(g);
  res.iterations = iter;
  return res;
}

namespace {

Grid restrict_grid(const Grid& g, int times) {
  Grid c = g;
  for (int a = 0; a < g.ndim; ++a) {
    int n = g.dims[a];
    for (int l = 0; l < times; ++l) {
      if (n % 2 != 0)
        throw std::invalid_argument(
            "multilevel_register: dims must halve down to the coarsest level");
      n /= 2;
    }
    c.dims[a] = n;
    c.spacing[a] = g.spacing[a] * (1 << times);
  }
  c.validate();
  return c;
}

DensityImage restrict_image(const DensityImage& fine, const Grid& coarse) {
  const Grid& fg = fine.grid;
  const int d = fg.ndim;
  DensityImage out(coarse, 0.0);
  const int factor = fg.dims[0] / coarse.dims[0];
  const double w = 1.0 / std::pow(factor, d);
  const std::size_t nf = fg.cell_count();
  for (std::size_t f = 0; f < nf; ++f) {
    auto idx = fg.cell_coords(f);
    for (int a = 0; a < d; ++a) idx[a] /= factor;
    out.values[coarse.cell_index(idx)] += w * fine.values[f];
  }
  return out;
}

Deformation prolong_deformation(const Deformation& coarse, const Grid& fine) {
  Deformation out(fine);
  const std::size_t nn = fine.node_count();
  double x[kMaxDim];
  for (std::size_t n = 0; n < nn; ++n) {
    fine.node_position(n, x);
    coarse.evaluate(x, out.node(n));
  }
  return out;
}

Deformation restrict_deformation(const Deformation& fine, const Grid& coarse) {
  // coarse nodes are a subset of fine nodes when dims halve exactly
  Deformation out(coarse);
  const int factor = fine.grid.dims[0] / coarse.dims[0];
  const std::size_t nn = coarse.node_count();
  for (std::size_t n = 0; n < nn; ++n) {
    auto idx = coarse.node_coords(n);
    for (int a = 0; a < coarse.ndim; ++a) idx[a] *= factor;
    const double* src = fine.node(fine.grid.node_index(idx));
    double* dst = out.node(n);
    for (int r = 0; r < coarse.ndim; ++r) dst[r] = src[r];
  }
  return out;
}

DetectorData restrict_projector_data(const DetectorData& f, int times) {
  DetectorData out = f;
  for (int l = 0; l < times; ++l) {
    const int na = out.shape[0];
    const int nb = out.shape[1];
    if (nb % 2 != 0)
      throw std::invalid_argument(
          "multilevel_register: projector bins must halve per level");
    DetectorData next({na, nb / 2});
    for (int a = 0; a < na; ++a)
      for (int b = 0; b < nb / 2; ++b)
        next.values[static_cast<std::size_t>(a) * (nb / 2) + b] =
            0.5 * (out.values[static_cast<std::size_t>(a) * nb + 2 * b] +
                   out.values[static_cast<std::size_t>(a) * nb + 2 * b + 1]);
    out = std::move(next);
  }
  return out;
}

RegistrationProblem make_level_problem(const RegistrationProblem& prob,
                                       int coarsen) {
  if (coarsen == 0) return prob;
  RegistrationProblem lp;
  lp.hyper = prob.hyper;
  lp.beta = prob.beta;
  const Grid coarse = restrict_grid(prob.rho0.grid, coarsen);
  lp.rho0 = restrict_image(prob.rho0, coarse);
  if (const auto* proj =
          dynamic_cast<const ParallelProjectorOperator*>(prob.op.get())) {
    lp.op = std::make_shared<ParallelProjectorOperator>(
        coarse, proj->n_angles(), proj->n_bins() >> coarsen);
    lp.f = restrict_projector_data(prob.f, coarsen);
  } else {
    // keep the data at native resolution; evaluate through a prolongation
    lp.op = std::make_shared<ProlongedOperator>(coarse, prob.op);
    lp.f = prob.f;
  }
  return lp;
}

}  // namespace

Deformation multilevel_register(const RegistrationProblem& prob,
                                const MultilevelOptions& ml,
                                const BfgsOptions& opts, std::ostream* log,
                                const Deformation* init) {
  if (ml.levels < 1)
    throw std::invalid_argument("multilevel_register: levels must be >= 1");
  const Grid& fine = prob.rho0.grid;
  if (init && !(init->grid == fine))
    throw std::invalid_argument("multilevel_register: init grid mismatch");

  Deformation current;  // solution on the previously solved (coarser) level
  bool have_current = false;
  for (int level = ml.levels - 1; level >= 0; --level) {
    const RegistrationProblem lp = make_level_problem(prob, level);
    const Grid& lg = lp.rho0.grid;
    Deformation y0 = Deformation::identity(lg);
    if (have_current) {
      y0 = prolong_deformation(current, lg);
    } else if (init) {
      y0 = level == 0 ? *init : restrict_deformation(*init, lg);
    }
    std::vector<std::uint8_t> mask;
    if (ml.dirichlet) mask = interior_node_mask(lg);

    RegistrationEnergy last{};
    auto fn = [&](std::span<const double> xs,
                  std::span<double> gs) -> double {
      Deformation y;
      y.grid = lg;
      y.nodal.assign(xs.begin(), xs.end());
      std::vector<double> grad;
      last = registration_objective(lp, y, &grad);
      std::copy(grad.begin(), grad.end(), gs.begin());
      return last.value;
    };
    BfgsCallback cb;
    if (log) {
      cb = [&, level](const BfgsIterate& it) {
        (*log) << level << ',' << it.iter << ',' << it.value << ','
               << last.kl_part << ',' << last.hyper_part << ',' << it.grad_norm
               << ',' << last.min_det << '\n';
      };
    }
    BfgsResult res = bfgs_minimize(fn, y0.nodal, opts, mask, cb);
    current.grid = lg;
    current.nodal = std::move(res.x);
    have_current = true;
  }
  return current;
}

}  // namespace moco
