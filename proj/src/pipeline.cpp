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

#include "moco/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace moco {

namespace {

inline double bump(double t) {
  // C^1 compactly supported profile on |t| < 1
  const double u = 1.0 - t * t;
  return u > 0.0 ? u * u : 0.0;
}

}  // namespace

void RadialContraction::map(int ndim, const double* x, double* y) const {
  double r2 = 0.0;
  for (int a = 0; a < ndim; ++a) {
    const double d = x[a] - center[a];
    r2 += d * d;
  }
  const double t2 = r2 / (radius * radius);
  const double s = t2 < 1.0 ? 1.0 - rate * bump(std::sqrt(t2)) : 1.0;
  for (int a = 0; a < ndim; ++a)
    y[a] = center[a] + s * (x[a] - center[a]);
}

double RadialContraction::jacobian_det(int ndim, const double* x) const {
  double r2 = 0.0;
  for (int a = 0; a < ndim; ++a) {
    const double d = x[a] - center[a];
    r2 += d * d;
  }
  const double u = r2 / (radius * radius);  // (r/R)^2
  if (u >= 1.0) return 1.0;
  const double s = 1.0 - rate * (1.0 - u) * (1.0 - u);
  // radial eigenvalue s + r s'(r) = 1 - rate (1-u)(1-5u)
  const double radial = 1.0 - rate * (1.0 - u) * (1.0 - 5.0 * u);
  double det = radial;
  for (int a = 1; a < ndim; ++a) det *= s;
  return det;
}

Deformation RadialContraction::sample(const Grid& g) const {
  Deformation y(g);
  const std::size_t nn = g.node_count();
  double x[kMaxDim];
  for (std::size_t n = 0; n < nn; ++n) {
    g.node_position(n, x);
    map(g.ndim, x, y.node(n));
  }
  return y;
}

namespace {

void check_support(const Grid& g, const RadialContraction& c) {
  for (int a = 0; a < g.ndim; ++a) {
    if (c.center[a] - c.radius < g.origin[a] ||
        c.center[a] + c.radius > g.origin[a] + g.extent(a))
      throw std::invalid_argument(
          "phantom: contraction support leaves the domain");
  }
}

DensityImage analytic_gate_image(
    const Grid& g, const RadialContraction& motion,
    const std::function<double(const double*)>& density) {
  DensityImage img(g);
  const std::size_t nc = g.cell_count();
  double x[kMaxDim], z[kMaxDim];
  for (std::size_t c = 0; c < nc; ++c) {
    g.cell_center(c, x);
    motion.map(g.ndim, x, z);
    img.values[c] = density(z) * motion.jacobian_det(g.ndim, x);
  }
  return img;
}

}  // namespace

PhantomTruth make_ring_phantom(const Grid& grid, int stages,
                               std::vector<double> shrink_rates,
                               double amplitude) {
  grid.validate();
  if (stages < 2)
    throw std::invalid_argument("make_ring_phantom: stages must be >= 2");
  if (static_cast<int>(shrink_rates.size()) == stages - 1)
    shrink_rates.insert(shrink_rates.begin(), 0.0);
  if (static_cast<int>(shrink_rates.size()) != stages)
    throw std::invalid_argument("make_ring_phantom: one shrink rate per stage");
  if (shrink_rates[0] != 0.0)
    throw std::invalid_argument("make_ring_phantom: stage 0 must be at rest");

  std::array<double, kMaxDim> center{};
  double min_extent = std::numeric_limits<double>::infinity();
  for (int a = 0; a < grid.ndim; ++a) {
    center[a] = grid.origin[a] + 0.5 * grid.extent(a);
    min_extent = std::min(min_extent, grid.extent(a));
  }
  const double r_mid = 0.25 * min_extent;
  const double r_width = 0.09 * min_extent;
  auto density = [&](const double* x) {
    double r2 = 0.0;
    for (int a = 0; a < grid.ndim; ++a) {
      const double d = x[a] - center[a];
      r2 += d * d;
    }
    return amplitude * bump((std::sqrt(r2) - r_mid) / r_width);
  };

  PhantomTruth truth;
  for (int i = 0; i < stages; ++i) {
    RadialContraction motion{center, 0.45 * min_extent, shrink_rates[i]};
    if (!(shrink_rates[i] >= 0.0 && shrink_rates[i] < 1.0))
      throw std::invalid_argument("make_ring_phantom: rates must be in [0,1)");
    check_support(grid, motion);
    truth.images.push_back(analytic_gate_image(grid, motion, density));
    truth.deformations.push_back(motion.sample(grid));
  }
  return truth;
}

PhantomTruth make_cardiac_phantom(const Grid& grid, int gates,
                                  double amplitude, double max_rate) {
  grid.validate();
  if (grid.ndim != 2)
    throw std::invalid_argument("make_cardiac_phantom: 2D grids only");
  if (gates < 2)
    throw std::invalid_argument("make_cardiac_phantom: gates must be >= 2");

  const double ex = grid.extent(0), ey = grid.extent(1);
  const double ox = grid.origin[0], oy = grid.origin[1];
  // thick high-activity ring ("left ventricle") and a thin low-activity ring
  // ("right ventricle") sharing a wall
  const double c1x = ox + 0.44 * ex, c1y = oy + 0.5 * ey;
  const double c2x = ox + 0.63 * ex, c2y = oy + 0.5 * ey;
  auto elliptic = [](double dx, double dy, double ax, double ay) {
    return std::sqrt((dx / ax) * (dx / ax) + (dy / ay) * (dy / ay));
  };
  auto density = [&](const double* x) {
    const double e1 = elliptic(x[0] - c1x, x[1] - c1y, 0.17 * ex, 0.22 * ey);
    const double e2 = elliptic(x[0] - c2x, x[1] - c2y, 0.13 * ex, 0.15 * ey);
    const double lv = bump((e1 - 0.72) / 0.33);
    double rv = bump((e2 - 0.80) / 0.22);
    if (e1 < 1.0) rv = 0.0;  // shared wall belongs to the high-activity ring
    return amplitude * (lv + 0.35 * rv);
  };

  std::array<double, kMaxDim> heart{ox + 0.52 * ex, oy + 0.5 * ey, 0.0};
  const double support = 0.42 * std::min(ex, ey);

  PhantomTruth truth;
  for (int i = 0; i < gates; ++i) {
    const double phase = std::sin(std::numbers::pi * i / gates);
    RadialContraction motion{heart, support, max_rate * phase * phase};
    check_support(grid, motion);
    truth.images.push_back(analytic_gate_image(grid, motion, density));
    truth.deformations.push_back(motion.sample(grid));
  }

  // region of interest: cells where only the low-activity ring contributes
  const DensityImage& tmpl = truth.images[0];
  truth.roi.assign(tmpl.size(), 0);
  double x[kMaxDim];
  for (std::size_t c = 0; c < tmpl.size(); ++c) {
    grid.cell_center(c, x);
    const double e1 = elliptic(x[0] - c1x, x[1] - c1y, 0.17 * ex, 0.22 * ey);
    const double e2 = elliptic(x[0] - c2x, x[1] - c2y, 0.13 * ex, 0.15 * ey);
    if (e1 >= 1.0 && bump((e2 - 0.80) / 0.22) > 0.1) truth.roi[c] = 1;
  }
  return truth;
}

std::uint64_t poisson_draw(std::mt19937_64& rng, double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean))
    throw std::invalid_argument("poisson_draw: bad mean");
  auto uniform = [&rng]() {
    return (rng() >> 11) * 0x1.0p-53 + 0x1.0p-54;  // open (0,1)
  };
  if (mean == 0.0) return 0;
  if (mean < 30.0) {  // product method
    const double limit = std::exp(-mean);
    std::uint64_t k = 0;
    double p = uniform();
    while (p > limit) {
      ++k;
      p *= uniform();
    }
    return k;
  }
  // transformed rejection with squeeze (Hoermann's PTRS)
  const double b = 0.931 + 2.53 * std::sqrt(mean);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  const double log_mean = std::log(mean);
  for (;;) {
    const double u = uniform() - 0.5;
    const double v = uniform();
    const double us = 0.5 - std::abs(u);
    const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
    if (us >= 0.07 && v <= v_r) return static_cast<std::uint64_t>(kf);
    if (kf < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
        kf * log_mean - mean - std::lgamma(kf + 1.0))
      return static_cast<std::uint64_t>(kf);
  }
}

GatedData simulate_gated_data(const PhantomTruth& truth,
                              const ForwardOperator& K, double scale,
                              std::uint64_t seed) {
  if (!(scale > 0.0))
    throw std::invalid_argument("simulate_gated_data: scale must be positive");
  std::mt19937_64 rng(seed);
  GatedData data;
  for (const DensityImage& img : truth.images) {
    DetectorData g = K.apply(img);
    for (double& v : g.values) {
      const double lambda = std::max(v, 0.0) / scale;
      v = scale * static_cast<double>(poisson_draw(rng, lambda));
    }
    data.gates.push_back(std::move(g));
  }
  return data;
}

ObjectiveBreakdown full_objective(const DensityImage& rho0,
                                  const std::vector<Deformation>& defs,
                                  const GatedData& data,
                                  std::shared_ptr<const ForwardOperator> K,
                                  const ReconConfig& cfg) {
  if (defs.size() != data.gates.size())
    throw std::invalid_argument("full_objective: gate count mismatch");
  ObjectiveBreakdown out;
  for (std::size_t i = 0; i < defs.size(); ++i) {
    const PushResult pushed = push_mass_preserving(rho0, defs[i]);
    const DetectorData proj = K->apply(pushed.image);
    out.kl_sum += kl(proj.values, data.gates[i].values).value;
    if (i > 0) out.hyper_sum += hyperelastic(defs[i], cfg.hyper).value;
  }
  out.tv_term = tv(rho0);
  out.total = out.kl_sum + cfg.alpha * out.tv_term + cfg.beta * out.hyper_sum;
  return out;
}

namespace {

std::vector<double> concat_gates(const GatedData& data) {
  std::vector<double> all;
  std::size_t total = 0;
  for (const auto& g : data.gates) total += g.size();
  all.reserve(total);
  for (const auto& g : data.gates)
    all.insert(all.end(), g.values.begin(), g.values.end());
  return all;
}

}  // namespace

AlternatingResult alternating_minimize(const GatedData& data,
                                       std::shared_ptr<const ForwardOperator> K,
                                       const ReconConfig& cfg,
                                       std::ostream* log) {
  const int gates = static_cast<int>(data.gates.size());
  if (gates != cfg.gates)
    throw std::invalid_argument("alternating_minimize: gate count mismatch");
  for (const auto& g : data.gates) {
    if (g.size() != K->detector_size())
      throw std::invalid_argument("alternating_minimize: data shape mismatch");
  }

  EmtvOptions emtv_opts = cfg.emtv;
  emtv_opts.alpha = cfg.alpha;

  AlternatingResult res;
  res.rho0 = emtv_reconstruct(*K, data.gates[0].values, emtv_opts);
  res.deformations.assign(gates, Deformation::identity(K->image_grid()));
  res.trace.push_back({"init", full_objective(res.rho0, res.deformations,
                                              data, K, cfg)});
  if (log)
    (*log) << "init," << res.trace.back().objective.total << '\n';

  for (int alt = 0; alt < cfg.outer_alternations; ++alt) {
    // motion step: the problem decouples, one registration per moving gate
    auto register_gate = [&](int i) -> Deformation {
      RegistrationProblem prob;
      prob.rho0 = res.rho0;
      prob.f = data.gates[i];
      prob.op = K;
      prob.hyper = cfg.hyper;
      prob.beta = cfg.beta;
      Deformation candidate = multilevel_register(prob, cfg.ml, cfg.reg);
      const double cand = registration_objective(prob, candidate, nullptr).value;
      const double prev =
          registration_objective(prob, res.deformations[i], nullptr).value;
      return cand <= prev ? candidate : res.deformations[i];
    };
    std::vector<std::future<Deformation>> jobs;
    for (int i = 1; i < gates; ++i)
      jobs.push_back(std::async(std::launch::async, register_gate, i));
    for (int i = 1; i < gates; ++i)
      res.deformations[i] = jobs[static_cast<std::size_t>(i - 1)].get();
    res.trace.push_back({"motion_" + std::to_string(alt + 1),
                         full_objective(res.rho0, res.deformations, data, K,
                                        cfg)});
    if (log)
      (*log) << res.trace.back().phase << ','
             << res.trace.back().objective.total << '\n';

    // reconstruction step through the stacked motion-corrected operator
    auto stacked = std::make_shared<StackedMotionOperator>(K, res.deformations);
    const std::vector<double> f_all = concat_gates(data);
    DensityImage candidate = bregman_emtv(*stacked, f_all, emtv_opts);
    const ObjectiveBreakdown cand_obj =
        full_objective(candidate, res.deformations, data, K, cfg);
    if (cand_obj.total <= res.trace.back().objective.total)
      res.rho0 = std::move(candidate);
    res.trace.push_back({"recon_" + std::to_string(alt + 1),
                         full_objective(res.rho0, res.deformations, data, K,
                                        cfg)});
    if (log)
      (*log) << res.trace.back().phase << ','
             << res.trace.back().objective.total << '\n';
  }
  return res;
}

namespace {

// mass-preserving affine transport rho(A x + b) det(A) and its SSD distance
// to a target, with the analytic gradient in the d^2 + d parameters
double affine_ssd(const DensityImage& tmpl, const DensityImage& target,
                  std::span<const double> params, std::span<double> grad) {
  const Grid& g = tmpl.grid;
  const int d = g.ndim;
  const double* A = params.data();
  const double* b = params.data() + d * d;
  const double det = det_matrix(d, A);
  std::fill(grad.begin(), grad.end(), 0.0);
  if (det <= 0.0) return std::numeric_limits<double>::infinity();
  double cof[9];
  cof_matrix(d, A, cof);

  const std::size_t nc = g.cell_count();
  const double vol = g.cell_volume();
  double x[kMaxDim], z[kMaxDim], dr[kMaxDim];
  double energy = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    g.cell_center(c, x);
    for (int r = 0; r < d; ++r) {
      z[r] = b[r];
      for (int s = 0; s < d; ++s) z[r] += A[r * d + s] * x[s];
    }
    const double rho = sample_with_gradient(tmpl, z, dr);
    const double res = rho * det - target.values[c];
    energy += 0.5 * vol * res * res;
    const double w = vol * res;
    for (int r = 0; r < d; ++r) {
      for (int s = 0; s < d; ++s)
        grad[r * d + s] += w * (det * dr[r] * x[s] + rho * cof[r * d + s]);
      grad[d * d + r] += w * det * dr[r];
    }
  }
  return energy;
}

DensityImage halve_image(const DensityImage& fine) {
  const Grid& fg = fine.grid;
  Grid cg = fg;
  for (int a = 0; a < fg.ndim; ++a) {
    cg.dims[a] = fg.dims[a] / 2;
    cg.spacing[a] = fg.spacing[a] * 2.0;
  }
  cg.validate();
  DensityImage out(cg, 0.0);
  const double w = 1.0 / (1 << fg.ndim);
  for (std::size_t f = 0; f < fg.cell_count(); ++f) {
    auto idx = fg.cell_coords(f);
    for (int a = 0; a < fg.ndim; ++a) idx[a] /= 2;
    out.values[cg.cell_index(idx)] += w * fine.values[f];
  }
  return out;
}

}  // namespace

std::vector<Deformation> baseline_affine_register_gates(
    const std::vector<DensityImage>& recons) {
  if (recons.empty())
    throw std::invalid_argument("baseline_affine_register_gates: no gates");
  const Grid& g = recons[0].grid;
  const int d = g.ndim;

  std::vector<Deformation> defs;
  defs.push_back(Deformation::identity(g));
  for (std::size_t i = 1; i < recons.size(); ++i) {
    if (!(recons[i].grid == g))
      throw std::invalid_argument(
          "baseline_affine_register_gates: grid mismatch");
    // identity start, coarse-to-fine on the same parameter vector
    std::vector<double> params(d * d + d, 0.0);
    for (int r = 0; r < d; ++r) params[r * d + r] = 1.0;

    std::vector<std::pair<DensityImage, DensityImage>> levels;
    levels.emplace_back(recons[0], recons[i]);
    for (int l = 0; l < 2 && levels.back().first.grid.dims[0] % 2 == 0 &&
                    levels.back().first.grid.dims[0] >= 32;
         ++l)
      levels.emplace_back(halve_image(levels.back().first),
                          halve_image(levels.back().second));

    BfgsOptions opts;
    opts.max_iters = 200;
    opts.grad_tol = 1e-10;
    for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
      const DensityImage& tmpl = it->first;
      const DensityImage& target = it->second;
      auto fn = [&](std::span<const double> p, std::span<double> gr) {
        return affine_ssd(tmpl, target, p, gr);
      };
      params = bfgs_minimize(fn, params, opts).x;
    }

    Deformation y(g);
    const std::size_t nn = g.node_count();
    double x[kMaxDim];
    for (std::size_t n = 0; n < nn; ++n) {
      g.node_position(n, x);
      double* out = y.node(n);
      for (int r = 0; r < d; ++r) {
        out[r] = params[d * d + r];
        for (int s = 0; s < d; ++s) out[r] += params[r * d + s] * x[s];
      }
    }
    defs.push_back(std::move(y));
  }
  return defs;
}

double relative_error(const DensityImage& a, const DensityImage& b,
                      const std::vector<std::uint8_t>* mask) {
  if (!(a.grid == b.grid))
    throw std::invalid_argument("relative_error: grid mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    if (mask && !(*mask)[c]) continue;
    const double dv = a.values[c] - b.values[c];
    num += dv * dv;
    den += b.values[c] * b.values[c];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

MetricsRecord metrics(const DensityImage& rho0,
                      const std::vector<Deformation>& defs,
                      const PhantomTruth& truth) {
  if (defs.size() != truth.images.size())
    throw std::invalid_argument("metrics: gate count mismatch");
  MetricsRecord rec;
  rec.recon_error = relative_error(rho0, truth.images[0]);
  double pme = 0.0;
  int moving = 0;
  for (std::size_t i = 0; i < defs.size(); ++i) {
    const PushResult pushed = push_mass_preserving(truth.images[0], defs[i]);
    if (i > 0) {
      pme += relative_error(pushed.image, truth.images[i]);
      ++moving;
    }
    rec.mass_errors.push_back(mass_error(truth.images[0], defs[i]));
  }
  rec.phantom_matching_error = moving > 0 ? pme / moving : 0.0;
  return rec;
}

}  // namespace moco
