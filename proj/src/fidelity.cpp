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

#include "moco/fidelity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace moco {

KLValue kl(std::span<const double> g, std::span<const double> f,
           bool with_gradient) {
  if (g.size() != f.size())
    throw std::invalid_argument("kl: size mismatch");
  KLValue out;
  if (with_gradient) out.gradient.emplace(g.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] < 0.0 || f[i] < 0.0)
      throw std::invalid_argument("kl: negative entry");
    acc += g[i] - f[i] * std::log(g[i] + kLogGuard) +
           f[i] * std::log(f[i] + kLogGuard) - f[i];
    if (with_gradient) (*out.gradient)[i] = 1.0 - f[i] / (g[i] + kLogGuard);
  }
  out.value = acc;
  return out;
}

namespace {

// forward difference along axis a with replicate boundary, divided by spacing
inline double fwd_diff(const DensityImage& u, const std::array<int, kMaxDim>& c,
                       int axis) {
  if (c[axis] + 1 >= u.grid.dims[axis]) return 0.0;
  auto up = c;
  ++up[axis];
  return (u.values[u.grid.cell_index(up)] - u.values[u.grid.cell_index(c)]) /
         u.grid.spacing[axis];
}

}  // namespace

double tv(const DensityImage& u) {
  const Grid& g = u.grid;
  const std::size_t nc = g.cell_count();
  double acc = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    const auto idx = g.cell_coords(c);
    double s = 0.0;
    for (int a = 0; a < g.ndim; ++a) {
      const double d = fwd_diff(u, idx, a);
      s += d * d;
    }
    acc += std::sqrt(s);
  }
  return acc * g.cell_volume();
}

double weighted_rof_energy(const DensityImage& u, const DensityImage& target,
                           std::span<const double> weights, double alpha) {
  const std::size_t nc = u.grid.cell_count();
  double fit = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    const double r = u.values[c] - target.values[c];
    fit += 0.5 * weights[c] * r * r;
  }
  return fit * u.grid.cell_volume() + alpha * tv(u);
}

DensityImage weighted_rof(const DensityImage& target,
                          std::span<const double> weights, double alpha,
                          const RofOptions& opts) {
  const Grid& g = target.grid;
  const std::size_t nc = g.cell_count();
  if (weights.size() != nc)
    throw std::invalid_argument("weighted_rof: weight size mismatch");
  for (double w : weights) {
    if (!(w > 0.0))
      throw std::invalid_argument("weighted_rof: nonpositive weight");
  }
  if (alpha < 0.0) throw std::invalid_argument("weighted_rof: negative alpha");

  DensityImage result = target;
  if (alpha > 0.0) {
    const int d = g.ndim;
    // operator norm bound of the forward-difference gradient
    double lsq = 0.0;
    for (int a = 0; a < d; ++a) lsq += 4.0 / (g.spacing[a] * g.spacing[a]);
    const double tau = 1.0 / std::sqrt(lsq);
    const double sigma = tau;

    std::vector<double> u(target.values);
    std::vector<double> ubar(u);
    std::vector<double> uprev(nc);
    std::vector<double> p(nc * d, 0.0);
    std::vector<std::size_t> stride(d);
    for (int a = 0; a < d; ++a) {
      std::size_t s = 1;
      for (int b = 0; b < a; ++b) s *= static_cast<std::size_t>(g.dims[b]);
      stride[a] = s;
    }

    for (int it = 0; it < opts.max_iter; ++it) {
      // dual ascent and projection onto |p| <= alpha
      for (std::size_t c = 0; c < nc; ++c) {
        const auto idx = g.cell_coords(c);
        double norm2 = 0.0;
        for (int a = 0; a < d; ++a) {
          double grad = 0.0;
          if (idx[a] + 1 < g.dims[a])
            grad = (ubar[c + stride[a]] - ubar[c]) / g.spacing[a];
          p[c * d + a] += sigma * grad;
          norm2 += p[c * d + a] * p[c * d + a];
        }
        const double norm = std::sqrt(norm2);
        if (norm > alpha) {
          const double s = alpha / norm;
          for (int a = 0; a < d; ++a) p[c * d + a] *= s;
        }
      }
      // primal descent with exact prox of the weighted quadratic
      std::swap(uprev, u);
      double diff2 = 0.0, norm2 = 0.0;
      for (std::size_t c = 0; c < nc; ++c) {
        const auto idx = g.cell_coords(c);
        // negative divergence (exact transpose of the gradient above)
        double div = 0.0;
        for (int a = 0; a < d; ++a) {
          if (idx[a] + 1 < g.dims[a]) div -= p[c * d + a] / g.spacing[a];
          if (idx[a] > 0) div += p[(c - stride[a]) * d + a] / g.spacing[a];
        }
        const double z = uprev[c] - tau * div;
        const double un =
            (z + tau * weights[c] * target.values[c]) / (1.0 + tau * weights[c]);
        u[c] = un;
        ubar[c] = 2.0 * un - uprev[c];
        const double dc = un - uprev[c];
        diff2 += dc * dc;
        norm2 += un * un;
      }
      if (std::sqrt(diff2) <= opts.tol * std::max(std::sqrt(norm2), 1e-30))
        break;
    }
    result.values = std::move(u);
  }

  for (double& v : result.values) v = std::max(v, 0.0);
  // never hand back something worse than the feasible part of the target
  DensityImage clamped_target = target;
  for (double& v : clamped_target.values) v = std::max(v, 0.0);
  if (weighted_rof_energy(clamped_target, target, weights, alpha) <
      weighted_rof_energy(result, target, weights, alpha))
    return clamped_target;
  return result;
}

namespace {

inline double frob2(int d, const double* m) {
  double s = 0.0;
  for (int i = 0; i < d * d; ++i) s += m[i] * m[i];
  return s;
}

inline double vol_penalty(double s) {
  const double t = s - 1.0;
  return t * t * t * t / (s * s);
}

inline double vol_penalty_deriv(double s) {
  const double t = s - 1.0;
  return 2.0 * t * t * t * (s + 1.0) / (s * s * s);
}

}  // namespace

HyperelasticValue hyperelastic(const Deformation& y,
                               const HyperelasticParams& p,
                               bool with_gradient) {
  const Grid& g = y.grid;
  const int d = g.ndim;
  const double vol = g.cell_volume();
  const std::size_t nc = g.cell_count();
  const CellTensorField jac = nodal_jacobian(y);

  HyperelasticValue out;
  if (with_gradient) out.gradient.emplace(y.dof_count(), 0.0);

  double energy = 0.0;
  double cof[9], dcell[9], dAdj[9];
  const int corners = 1 << d;
  for (std::size_t c = 0; c < nc; ++c) {
    const double* J = jac.cell(c);
    const double det = det_matrix(d, J);
    if (det <= 0.0) {
      out.value = std::numeric_limits<double>::infinity();
      out.gradient.reset();
      return out;
    }
    cof_matrix(d, J, cof);
    double len = 0.0;
    for (int r = 0; r < d; ++r)
      for (int a = 0; a < d; ++a) {
        const double e = J[r * d + a] - (r == a ? 1.0 : 0.0);
        len += e * e;
      }
    const double surf_arg = std::max(frob2(d, cof) - d, 0.0);
    energy += vol * (p.alpha1 * len + p.alpha2 * surf_arg * surf_arg +
                     p.alpha3 * vol_penalty(det));

    if (!with_gradient) continue;
    // dE/dJ for this cell
    for (int i = 0; i < d * d; ++i) dcell[i] = 0.0;
    for (int r = 0; r < d; ++r)
      for (int a = 0; a < d; ++a)
        dcell[r * d + a] +=
            p.alpha1 * 2.0 * (J[r * d + a] - (r == a ? 1.0 : 0.0));
    if (surf_arg > 0.0 && p.alpha2 != 0.0) {
      // d/dC of (|C|_F^2 - d)^2 is 4 surf_arg C; pull back through dcof/dJ
      double m[9];
      for (int i = 0; i < d * d; ++i) m[i] = 4.0 * surf_arg * cof[i];
      cof_derivative_adjoint(d, J, m, dAdj);
      for (int i = 0; i < d * d; ++i) dcell[i] += p.alpha2 * dAdj[i];
    }
    if (p.alpha3 != 0.0) {
      const double dv = vol_penalty_deriv(det);
      for (int i = 0; i < d * d; ++i) dcell[i] += p.alpha3 * dv * cof[i];
    }
    // scatter through the Jacobian stencil: nodes at the cell corners
    const auto cc = g.cell_coords(c);
    for (int m = 0; m < corners; ++m) {
      std::array<int, kMaxDim> idx{0, 0, 0};
      for (int a = 0; a < d; ++a) idx[a] = cc[a] + ((m >> a) & 1);
      const std::size_t node = g.node_index(idx);
      for (int a = 0; a < d; ++a) {
        const double coef = jacobian_stencil_coef(d, m, a, g.spacing[a]) * vol;
        for (int r = 0; r < d; ++r)
          (*out.gradient)[node * d + r] += coef * dcell[r * d + a];
      }
    }
  }
  out.value = energy;
  return out;
}

}  // namespace moco
