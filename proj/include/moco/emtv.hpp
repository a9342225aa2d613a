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

#include <functional>
#include <iosfwd>

#include "moco/fidelity.hpp"
#include "moco/forward.hpp"

namespace moco {

struct EmtvOptions {
  double alpha = 0.0;    // TV weight; 0 gives plain EM
  int outer_iters = 50;  // EM / denoising alternations
  int bregman_iters = 1;
  RofOptions rof;
  /// Relative floor (times mean of the start image) applied inside the ROF
  /// weights K^T 1 / u, which blow up where u -> 0.
  double positivity_floor = 1e-8;
  /// Optional CSV sink, one line per outer iteration: iter,kl,tv,objective.
  std::ostream* iter_log = nullptr;
};

/// One multiplicative EM update u * K^T(f / K u) / K^T 1 with guarded
/// divisions; cells with zero sensitivity are set to zero. Throws if u is
/// identically zero.
DensityImage em_step(const DensityImage& u, const ForwardOperator& K,
                     std::span<const double> f);

/// FB-EM-TV: alternate an EM step with weighted ROF denoising (weights
/// K^T 1 / max(u, floor)) for outer_iters iterations, starting from the
/// strictly positive constant image whose projection matches the total data
/// mass (or from `init` when given).
DensityImage emtv_reconstruct(const ForwardOperator& K,
                              std::span<const double> f,
                              const EmtvOptions& opts,
                              const DensityImage* init = nullptr);

/// Bregman-enhanced EM-TV: an outer loop keeps a TV subgradient accumulator v
/// and re-solves the EM-TV problem with the denoising target shifted by
/// (u / K^T 1) v, restoring contrast lost to the regularizer. One outer pass
/// is exactly emtv_reconstruct.
DensityImage bregman_emtv(const ForwardOperator& K, std::span<const double> f,
                          const EmtvOptions& opts,
                          const DensityImage* init = nullptr);

}  // namespace moco
