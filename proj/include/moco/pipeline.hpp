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
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "moco/emtv.hpp"
#include "moco/forward.hpp"
#include "moco/motionreg.hpp"

namespace moco {

/// Analytic radial contraction about a center: y(x) = c + s(r)(x - c) with
/// s(r) = 1 - rate (1 - (r/radius)^2)^2 inside the support ball and identity
/// outside. Smooth, orientation preserving for rate < 1, identity on the
/// boundary when the ball is contained in the domain.
struct RadialContraction {
  std::array<double, kMaxDim> center{};
  double radius = 1.0;
  double rate = 0.0;

  void map(int ndim, const double* x, double* y) const;
  double jacobian_det(int ndim, const double* x) const;
  Deformation sample(const Grid& g) const;
};

struct PhantomTruth {
  std::vector<DensityImage> images;       // one per gate; gate 0 = template
  std::vector<Deformation> deformations;  // sampled analytic maps, [0] = id
  /// Low-activity region of interest (cardiac phantom only), one flag per
  /// cell of the template grid.
  std::vector<std::uint8_t> roi;
};

/// Smooth annulus template in three (or more) stages of contraction. Gate
/// images are exact analytic evaluations of template(y) det(grad y), so every
/// stage carries the template's mass up to quadrature error. shrink_rates
/// holds one rate per stage (stage 0 must be 0) or one per moving stage.
PhantomTruth make_ring_phantom(const Grid& grid, int stages,
                               std::vector<double> shrink_rates,
                               double amplitude = 1.0);

/// Layered-ellipse ventricle phantom with a periodic contraction over the
/// gates; the thin low-activity ring defines the region of interest.
PhantomTruth make_cardiac_phantom(const Grid& grid, int gates,
                                  double amplitude = 1.0,
                                  double max_rate = 0.12);

struct GatedData {
  std::vector<DetectorData> gates;
};

/// Per gate: project the true image, draw Poisson counts of the projection
/// downscaled by `scale`, and scale back up. Deterministic in the seed.
GatedData simulate_gated_data(const PhantomTruth& truth,
                              const ForwardOperator& K, double scale,
                              std::uint64_t seed);

/// One Poisson draw; deterministic transformed-rejection sampler.
std::uint64_t poisson_draw(std::mt19937_64& rng, double mean);

struct ReconConfig {
  int gates = 3;
  double alpha = 50.0;  // TV weight, reference image only
  double beta = 1.0;    // hyperelastic weight per moving gate
  HyperelasticParams hyper{1.0, 1.0, 10.0};
  int outer_alternations = 3;
  EmtvOptions emtv;
  BfgsOptions reg;
  MultilevelOptions ml;
  std::uint64_t seed = 1;
};

struct ObjectiveBreakdown {
  double kl_sum = 0.0;
  double tv_term = 0.0;
  double hyper_sum = 0.0;
  double total = 0.0;
};

/// The full coupled objective: summed detector KL of the transported
/// reference over all gates, TV of the reference, and the hyperelastic
/// energies of the moving gates, weighted per the configuration.
ObjectiveBreakdown full_objective(const DensityImage& rho0,
                                  const std::vector<Deformation>& defs,
                                  const GatedData& data,
                                  std::shared_ptr<const ForwardOperator> K,
                                  const ReconConfig& cfg);

struct TraceEntry {
  std::string phase;
  ObjectiveBreakdown objective;
};

struct AlternatingResult {
  DensityImage rho0;
  std::vector<Deformation> deformations;
  std::vector<TraceEntry> trace;
};

/// Alternating minimization of the coupled objective: initialize by
/// single-gate EM-TV on gate 0 and identity motion, then repeat a motion step
/// (per-gate multilevel registration of the current reference; gate 0 stays
/// the identity) and a reconstruction step (Bregman EM-TV through the stacked
/// motion-corrected operator). A half-step result is kept only if it does not
/// increase the objective. The trace records the objective after every
/// half-step.
AlternatingResult alternating_minimize(const GatedData& data,
                                       std::shared_ptr<const ForwardOperator> K,
                                       const ReconConfig& cfg,
                                       std::ostream* log = nullptr);

/// Mass-preserving affine registration (SSD distance) of each gate's
/// reconstruction against gate 0's, coarse-to-fine; returns nodal samplings
/// of the affine maps with the identity at gate 0.
std::vector<Deformation> baseline_affine_register_gates(
    const std::vector<DensityImage>& recons);

struct MetricsRecord {
  double recon_error = 0.0;
  double phantom_matching_error = 0.0;
  std::vector<double> mass_errors;  // one per gate
};

/// recon_error compares the reconstructed reference against the truth
/// template; the phantom matching error averages, over the moving gates, the
/// relative difference between the transported truth template and the true
/// gate image; mass_errors measure the transport's mass defect per gate.
MetricsRecord metrics(const DensityImage& rho0,
                      const std::vector<Deformation>& defs,
                      const PhantomTruth& truth);

/// Relative L2 distance of two images, optionally restricted to a cell mask.
double relative_error(const DensityImage& a, const DensityImage& b,
                      const std::vector<std::uint8_t>* mask = nullptr);

}  // namespace moco
