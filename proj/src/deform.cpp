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

#include "moco/deform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace moco {

MassPreservingPush::MassPreservingPush(const Grid& image_grid,
                                       const Deformation& y)
    : grid_(image_grid) {
  if (!(image_grid == y.grid))
    throw std::invalid_argument("MassPreservingPush: grid mismatch");
  const std::size_t nc = grid_.cell_count();
  const CellTensorField jac = nodal_jacobian(y);
  const std::vector<double> det = det_field(jac);
  min_det_ = *std::min_element(det.begin(), det.end());

  row_ptr_.reserve(nc + 1);
  col_.reserve(nc * (1u << grid_.ndim));
  val_.reserve(nc * (1u << grid_.ndim));
  row_ptr_.push_back(0);
  double x[kMaxDim], z[kMaxDim];
  for (std::size_t c = 0; c < nc; ++c) {
    grid_.cell_center(c, x);
    y.evaluate(x, z);
    const SampleStencil st = sample_stencil(grid_, z);
    for (int k = 0; k < st.n; ++k) {
      col_.push_back(static_cast<std::uint32_t>(st.index[k]));
      val_.push_back(st.weight[k] * det[c]);
    }
    row_ptr_.push_back(static_cast<std::uint32_t>(col_.size()));
  }
}

void MassPreservingPush::apply(std::span<const double> rho0,
                               std::span<double> out) const {
  const std::size_t nc = grid_.cell_count();
  if (rho0.size() != nc || out.size() != nc)
    throw std::invalid_argument("MassPreservingPush::apply: size mismatch");
  for (std::size_t c = 0; c < nc; ++c) {
    double acc = 0.0;
    for (std::uint32_t k = row_ptr_[c]; k < row_ptr_[c + 1]; ++k)
      acc += val_[k] * rho0[col_[k]];
    out[c] = acc;
  }
}

void MassPreservingPush::apply_transpose(std::span<const double> v,
                                         std::span<double> out) const {
  const std::size_t nc = grid_.cell_count();
  if (v.size() != nc || out.size() != nc)
    throw std::invalid_argument(
        "MassPreservingPush::apply_transpose: size mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    const double vc = v[c];
    if (vc == 0.0) continue;
    for (std::uint32_t k = row_ptr_[c]; k < row_ptr_[c + 1]; ++k)
      out[col_[k]] += val_[k] * vc;
  }
}

PushResult push_mass_preserving(const DensityImage& rho0,
                                const Deformation& y) {
  if (!(rho0.grid == y.grid))
    throw std::invalid_argument("push_mass_preserving: grid mismatch");
  const MassPreservingPush push(rho0.grid, y);
  PushResult res;
  res.image = DensityImage(rho0.grid);
  push.apply(rho0.values, res.image.values);
  for (double& v : res.image.values) {
    if (v < 0.0) {
      v = 0.0;
      ++res.clamped;
    }
  }
  return res;
}

IndicatrixField banach_indicatrix(const Deformation& y, const Grid& target) {
  target.validate();
  IndicatrixField field;
  field.grid = target;
  field.counts.assign(target.cell_count(), 0);
  const Grid& src = y.grid;
  const std::size_t nc = src.cell_count();
  double x[kMaxDim], z[kMaxDim];
  for (std::size_t c = 0; c < nc; ++c) {
    src.cell_center(c, x);
    y.evaluate(x, z);
    std::array<int, kMaxDim> idx{0, 0, 0};
    bool inside = true;
    for (int a = 0; a < target.ndim; ++a) {
      const double t = (z[a] - target.origin[a]) / target.spacing[a];
      idx[a] = static_cast<int>(std::floor(t));
      if (idx[a] < 0 || idx[a] >= target.dims[a]) inside = false;
    }
    if (inside) ++field.counts[target.cell_index(idx)];
  }
  return field;
}

InvertibilityReport invertibility_report(const Deformation& y) {
  const Grid& g = y.grid;
  const std::size_t nc = g.cell_count();
  const CellTensorField jac = nodal_jacobian(y);
  const std::vector<double> det = det_field(jac);

  InvertibilityReport rep;
  rep.min_det = std::numeric_limits<double>::infinity();
  std::size_t nonpos = 0;
  for (double d : det) {
    rep.min_det = std::min(rep.min_det, d);
    if (d <= 0.0) ++nonpos;
  }
  rep.fraction_nonpos_det = static_cast<double>(nonpos) / nc;

  // det-weighted multiplicity on the source grid itself (area formula with
  // the target-cell indicator as test function)
  std::vector<double> mass(nc, 0.0);
  double x[kMaxDim], z[kMaxDim];
  for (std::size_t c = 0; c < nc; ++c) {
    g.cell_center(c, x);
    y.evaluate(x, z);
    std::array<int, kMaxDim> idx{0, 0, 0};
    bool inside = true;
    for (int a = 0; a < g.ndim; ++a) {
      const double t = (z[a] - g.origin[a]) / g.spacing[a];
      idx[a] = static_cast<int>(std::floor(t));
      if (idx[a] < 0 || idx[a] >= g.dims[a]) inside = false;
    }
    if (inside) mass[g.cell_index(idx)] += std::abs(det[c]);
  }
  std::size_t multi = 0;
  for (double m : mass) {
    const int count = static_cast<int>(std::lround(m));
    rep.max_count = std::max(rep.max_count, count);
    if (m > 1.5) ++multi;
  }
  rep.fraction_multi = static_cast<double>(multi) / nc;
  return rep;
}

double mass_error(const DensityImage& rho0, const Deformation& y) {
  const double m0 = rho0.total_mass();
  if (!(m0 > 0.0))
    throw std::invalid_argument("mass_error: template has zero mass");
  const PushResult pushed = push_mass_preserving(rho0, y);
  return std::abs(pushed.image.total_mass() - m0) / m0;
}

}  // namespace moco
