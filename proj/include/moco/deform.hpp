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
#include <span>
#include <vector>

#include "moco/grid.hpp"

namespace moco {

/// Discrete mass-preserving transport of a density by a deformation:
/// out(x_c) = rho0(y(x_c)) * det(grad y)(x_c) on each cell center x_c, with
/// y evaluated by nodal interpolation and det from the cell-average Jacobian.
/// The operator is assembled as a sparse stencil so that apply_transpose is
/// the exact matrix transpose of apply.
class MassPreservingPush {
 public:
  MassPreservingPush(const Grid& image_grid, const Deformation& y);

  const Grid& grid() const { return grid_; }
  double min_det() const { return min_det_; }

  void apply(std::span<const double> rho0, std::span<double> out) const;
  void apply_transpose(std::span<const double> v, std::span<double> out) const;

 private:
  Grid grid_;
  std::vector<std::uint32_t> row_ptr_;
  std::vector<std::uint32_t> col_;
  std::vector<double> val_;
  double min_det_ = 0.0;
};

struct PushResult {
  DensityImage image;
  /// Cells whose product rho0(y) * det was negative and got clamped to zero.
  int clamped = 0;
};

/// Transport rho0 by y; negative products (only possible where det < 0) are
/// clamped to zero and counted. Throws on grid mismatch.
PushResult push_mass_preserving(const DensityImage& rho0, const Deformation& y);

/// Per-cell preimage counts of y over a target grid: each source cell center
/// increments the target cell its image lands in.
struct IndicatrixField {
  Grid grid;
  std::vector<int> counts;
};

IndicatrixField banach_indicatrix(const Deformation& y, const Grid& target);

struct InvertibilityReport {
  int max_count = 0;
  double fraction_multi = 0.0;
  double min_det = 0.0;
  double fraction_nonpos_det = 0.0;
};

/// Discrete injectivity diagnostics. Multiplicity is measured by the
/// change-of-variables identity: each source cell center deposits
/// |det| * vol_src / vol_tgt into the target cell it lands in, so that a
/// locally compressing diffeomorphism still accumulates ~1 per covered cell
/// while a genuine fold accumulates ~2. Determinant statistics come from the
/// cell-average Jacobian.
InvertibilityReport invertibility_report(const Deformation& y);

/// |mass(push(rho0, y)) - mass(rho0)| / mass(rho0). Throws if rho0 has zero
/// mass.
double mass_error(const DensityImage& rho0, const Deformation& y);

}  // namespace moco
