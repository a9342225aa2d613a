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

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "moco/grid.hpp"

namespace moco {

/// Guard added inside every logarithm and division of the Poisson fidelity
/// and the EM updates; measured data contains exact zeros.
inline constexpr double kLogGuard = 1e-12;

struct KLValue {
  double value = 0.0;
  /// d/dg of the divergence, present when requested.
  std::optional<std::vector<double>> gradient;
};

/// Shifted Kullback-Leibler divergence
///   sum_s g - f log(g+eps) + f log(f+eps) - f,
/// nonnegative and zero iff g == f (up to the guard). Throws on negative
/// entries or size mismatch.
KLValue kl(std::span<const double> g, std::span<const double> f,
           bool with_gradient = false);

/// Isotropic discrete total variation: forward differences over spacing with
/// replicate boundary, Euclidean norm per cell, times cell volume.
double tv(const DensityImage& u);

struct RofOptions {
  double tol = 1e-5;
  int max_iter = 500;
};

/// Approximate minimizer of
///   1/2 sum_c w_c (u_c - target_c)^2 vol + alpha TV(u)
/// by a first-order primal-dual scheme on the dual TV variable. Stops on
/// relative primal change <= tol or max_iter; the result is clamped
/// nonnegative and never has larger energy than the (clamped) target.
/// Throws if any weight is nonpositive.
DensityImage weighted_rof(const DensityImage& target,
                          std::span<const double> weights, double alpha,
                          const RofOptions& opts = {});

/// Energy of the weighted ROF objective above (clamping not applied).
double weighted_rof_energy(const DensityImage& u, const DensityImage& target,
                           std::span<const double> weights, double alpha);

struct HyperelasticParams {
  double alpha1 = 1.0;  // deviation of the gradient from the identity
  double alpha2 = 1.0;  // cofactor (area) penalty
  double alpha3 = 1.0;  // determinant (volume) barrier
};

struct HyperelasticValue {
  /// +infinity signals an infeasible (det <= 0 somewhere) deformation.
  double value = 0.0;
  std::optional<std::vector<double>> gradient;  // w.r.t. nodal values
};

/// Hyperelastic regularization energy of a nodal deformation: per cell
///   alpha1 |J - I|_F^2 + alpha2 (max(|cof J|_F^2 - d, 0))^2 + alpha3 vol(det J)
/// with vol(s) = (s-1)^4 / s^2 for s > 0, summed times cell volume. The
/// Frobenius threshold is the space dimension, so the identity has zero
/// energy in 2D and 3D alike. Gradient is the exact chain rule through the
/// cell-average Jacobian stencil, defined on the det > 0 set only.
HyperelasticValue hyperelastic(const Deformation& y,
                               const HyperelasticParams& p,
                               bool with_gradient = false);

}  // namespace moco
