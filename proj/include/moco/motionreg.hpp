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

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>

#include "moco/emtv.hpp"
#include "moco/fidelity.hpp"
#include "moco/forward.hpp"

namespace moco {

/// One gate of the motion step: fit the projected mass-preserving transport
/// of the template to this gate's measurement, regularized hyperelastically.
struct RegistrationProblem {
  DensityImage rho0;
  DetectorData f;
  std::shared_ptr<const ForwardOperator> op;
  HyperelasticParams hyper;
  double beta = 1.0;
};

struct RegistrationEnergy {
  double value = 0.0;  // kl + beta * hyper; +inf when infeasible
  double kl_part = 0.0;
  double hyper_part = 0.0;
  double min_det = 0.0;
};

/// Detector-domain Kullback-Leibler distance of K(rho0(y) det grad y) to the
/// gate data plus the hyperelastic energy. The gradient with respect to the
/// nodal values chains the detector KL gradient through K^T, the transport's
/// dependence on the sample locations, and the determinant stencil.
RegistrationEnergy registration_objective(const RegistrationProblem& prob,
                                          const Deformation& y,
                                          std::vector<double>* gradient);

struct BfgsOptions {
  int max_iters = 150;
  int ls_max = 30;
  double grad_tol = 1e-7;
  double step_tol = 1e-11;
  double c1 = 1e-4;
  double c2 = 0.9;
  int memory = 10;
};

/// value = fn(x, gradient_out); may return +inf for infeasible points, in
/// which case the gradient is ignored.
using ObjectiveFn =
    std::function<double(std::span<const double>, std::span<double>)>;

struct BfgsIterate {
  int iter = 0;
  double value = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};
using BfgsCallback = std::function<void(const BfgsIterate&)>;

struct BfgsResult {
  std::vector<double> x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Limited-memory BFGS with a cautious update (pairs with curvature
/// s.y <= 1e-10 |s|^2 are discarded) and a bracketing Armijo-Wolfe line
/// search that treats non-finite objective values as rejected steps. Entries
/// of the gradient and search direction where free_mask is 0 are zeroed every
/// iteration, so those coordinates never move. Throws if the objective is not
/// finite at x0.
BfgsResult bfgs_minimize(const ObjectiveFn& fn, std::vector<double> x0,
                         const BfgsOptions& opts,
                         std::span<const std::uint8_t> free_mask = {},
                         const BfgsCallback& callback = {});

/// Per-DOF mask that frees interior nodes only; boundary nodes stay pinned
/// (Dirichlet handling of the registration).
std::vector<std::uint8_t> interior_node_mask(const Grid& g);

struct MultilevelOptions {
  int levels = 3;
  bool dirichlet = true;
};

/// Coarse-to-fine registration: the template is restricted by cell averaging,
/// the operator is rebuilt per level (the projector's bin count scales with
/// the level; other operators are composed with a prolongation so the data
/// keeps its native resolution), and the solution is prolonged by multilinear
/// nodal interpolation. Starts from the identity (or `init` when given).
/// Writes CSV lines "level,iter,objective,kl,hyper,grad_norm,min_det" when a
/// log stream is supplied.
Deformation multilevel_register(const RegistrationProblem& prob,
                                const MultilevelOptions& ml,
                                const BfgsOptions& opts,
                                std::ostream* log = nullptr,
                                const Deformation* init = nullptr);

}  // namespace moco
