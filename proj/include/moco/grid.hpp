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

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace moco {

inline constexpr int kMaxDim = 3;

/// Regular grid over a box domain, d in {2,3}. Images are cell-centered
/// (cell i has its center at origin + (i+1/2)*spacing per axis); deformations
/// live on the nodal lattice origin + i*spacing with dims+1 nodes per axis.
/// Linear indices run with axis 0 fastest.
struct Grid {
  int ndim = 2;
  std::array<int, kMaxDim> dims{1, 1, 1};
  std::array<double, kMaxDim> spacing{1.0, 1.0, 1.0};
  std::array<double, kMaxDim> origin{0.0, 0.0, 0.0};

  static Grid make2d(int n0, int n1, double h0, double h1,
                     double o0 = 0.0, double o1 = 0.0);
  static Grid make3d(int n0, int n1, int n2, double h0, double h1, double h2,
                     double o0 = 0.0, double o1 = 0.0, double o2 = 0.0);
  /// n cells per axis over the unit box [0,1]^d.
  static Grid unit(int ndim, int n);

  /// Throws std::invalid_argument unless ndim in {2,3}, dims >= 2, spacing > 0.
  void validate() const;

  std::size_t cell_count() const;
  std::size_t node_count() const;
  int nodes(int axis) const { return dims[axis] + 1; }
  double cell_volume() const;
  double extent(int axis) const { return dims[axis] * spacing[axis]; }

  std::size_t cell_index(const std::array<int, kMaxDim>& idx) const;
  std::array<int, kMaxDim> cell_coords(std::size_t linear) const;
  void cell_center(std::size_t linear, double* x) const;

  std::size_t node_index(const std::array<int, kMaxDim>& idx) const;
  std::array<int, kMaxDim> node_coords(std::size_t linear) const;
  void node_position(std::size_t linear, double* x) const;

  bool contains(const double* x) const;

  bool operator==(const Grid& other) const;
};

/// Nonnegative scalar density on the cells of a grid.
struct DensityImage {
  Grid grid;
  std::vector<double> values;

  DensityImage() = default;
  explicit DensityImage(const Grid& g, double fill = 0.0);

  std::size_t size() const { return values.size(); }
  /// Sum of values times cell volume.
  double total_mass() const;
};

/// Vector field on the nodal lattice mapping the domain into R^d.
/// Storage is node-major with the d components of one node adjacent.
struct Deformation {
  Grid grid;
  std::vector<double> nodal;

  Deformation() = default;
  explicit Deformation(const Grid& g);
  static Deformation identity(const Grid& g);

  std::size_t node_count() const { return grid.node_count(); }
  std::size_t dof_count() const { return nodal.size(); }
  double* node(std::size_t linear) { return nodal.data() + linear * grid.ndim; }
  const double* node(std::size_t linear) const {
    return nodal.data() + linear * grid.ndim;
  }

  /// Evaluate by multilinear interpolation of the nodal values; x must lie in
  /// the domain box (cell centers always do).
  void evaluate(const double* x, double* y) const;
};

/// One d-by-d matrix per cell, row-major within the cell.
struct CellTensorField {
  Grid grid;
  std::vector<double> values;

  CellTensorField() = default;
  explicit CellTensorField(const Grid& g);

  double* cell(std::size_t linear) {
    return values.data() + linear * grid.ndim * grid.ndim;
  }
  const double* cell(std::size_t linear) const {
    return values.data() + linear * grid.ndim * grid.ndim;
  }
};

/// Multilinear sampling stencil on the cell-center lattice: value(x) =
/// sum_k weight[k] * u[index[k]]. Zero-padded past the outermost centers and
/// identically zero outside the domain box.
struct SampleStencil {
  int n = 0;
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
  bool inside = false;
};

SampleStencil sample_stencil(const Grid& g, const double* x);

/// Point sample of a cell-centered image. Returns 0 outside the domain box.
double sample(const DensityImage& u, const double* x);
/// Same, plus the exact gradient of the interpolant (0 outside the box).
double sample_with_gradient(const DensityImage& u, const double* x,
                            double* grad);

/// Batch interpolation; points are d-vectors packed contiguously. Throws on
/// non-finite coordinates, reporting the point index.
std::vector<double> interp(const DensityImage& img,
                           std::span<const double> points);
void interp(const DensityImage& img, std::span<const double> points,
            std::span<double> values, std::span<double> derivatives);

/// Per-cell gradient of a deformation: each cell's matrix is the average of
/// forward differences of its 2^d corner nodes, exact for affine fields.
CellTensorField nodal_jacobian(const Deformation& y);

/// Coefficient of corner node `corner_mask` (bit a = upper node along axis a)
/// in the cell-average forward-difference entry dJ[.][axis].
double jacobian_stencil_coef(int ndim, int corner_mask, int axis,
                             double h_axis);

std::vector<double> det_field(const CellTensorField& jac);
CellTensorField cof_field(const CellTensorField& jac);

/// d-by-d helpers, row-major.
double det_matrix(int ndim, const double* m);
void cof_matrix(int ndim, const double* m, double* out);

/// Adjoint of the cofactor's directional derivative: given M, returns the
/// matrix G with G : H = M : (dcof(J)[H]) for all H.
void cof_derivative_adjoint(int ndim, const double* jac, const double* m,
                            double* out);

}  // namespace moco
