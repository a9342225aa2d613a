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

#include <memory>
#include <span>
#include <vector>

#include "moco/deform.hpp"
#include "moco/grid.hpp"

namespace moco {

/// Measurement vector on the detector domain.
struct DetectorData {
  std::vector<int> shape;
  std::vector<double> values;

  DetectorData() = default;
  DetectorData(std::vector<int> s, double fill = 0.0);
  std::size_t size() const { return values.size(); }
};

/// Linear map from image space to a detector domain whose apply_adjoint is
/// the exact matrix transpose of apply.
class ForwardOperator {
 public:
  virtual ~ForwardOperator() = default;

  virtual const Grid& image_grid() const = 0;
  virtual const std::vector<int>& detector_shape() const = 0;
  std::size_t detector_size() const;
  std::size_t image_size() const { return image_grid().cell_count(); }

  virtual void apply(std::span<const double> u, std::span<double> g) const = 0;
  virtual void apply_adjoint(std::span<const double> g,
                             std::span<double> u) const = 0;

  DetectorData apply(const DensityImage& u) const;
  DensityImage apply_adjoint(const DetectorData& g) const;
  /// K^T applied to the all-ones detector vector (the EM sensitivity image).
  std::vector<double> adjoint_of_ones() const;
};

/// Convolution with a truncated (4 sigma), globally normalized Gaussian and
/// zero padding; the matrix is symmetric, so the operator is self-adjoint.
/// sigma = 0 degenerates to the identity. Detector domain = image grid.
class GaussianBlurOperator final : public ForwardOperator {
 public:
  using ForwardOperator::apply;
  using ForwardOperator::apply_adjoint;
  GaussianBlurOperator(const Grid& grid, double sigma);

  double sigma() const { return sigma_; }
  const Grid& image_grid() const override { return grid_; }
  const std::vector<int>& detector_shape() const override { return shape_; }
  void apply(std::span<const double> u, std::span<double> g) const override;
  void apply_adjoint(std::span<const double> g,
                     std::span<double> u) const override;

 private:
  void convolve(std::span<const double> in, std::span<double> out) const;

  Grid grid_;
  std::vector<int> shape_;
  double sigma_;
  std::vector<std::vector<double>> kernels_;  // per axis
};

/// 2D parallel-beam line integrals: n_angles equally spaced in [0, pi),
/// n_bins across the domain diagonal, midpoint ray marching with bilinear
/// weights; the adjoint scatters through the identical weights.
class ParallelProjectorOperator final : public ForwardOperator {
 public:
  using ForwardOperator::apply;
  using ForwardOperator::apply_adjoint;
  ParallelProjectorOperator(const Grid& grid, int n_angles, int n_bins);

  int n_angles() const { return shape_[0]; }
  int n_bins() const { return shape_[1]; }
  const Grid& image_grid() const override { return grid_; }
  const std::vector<int>& detector_shape() const override { return shape_; }
  void apply(std::span<const double> u, std::span<double> g) const override;
  void apply_adjoint(std::span<const double> g,
                     std::span<double> u) const override;

 private:
  struct Ray {
    double start[2];
    double dir[2];
    int steps;
  };
  Ray ray(int angle, int bin) const;

  Grid grid_;
  std::vector<int> shape_;
  std::vector<double> sincos_;  // packed (sin, cos) per angle
  double step_;
  double bin_first_;
  double bin_spacing_;
  double center_[2];
  double half_diag_;
};

/// Identity map viewed through the operator interface; detector = image grid.
class IdentityOperator final : public ForwardOperator {
 public:
  using ForwardOperator::apply;
  using ForwardOperator::apply_adjoint;
  explicit IdentityOperator(const Grid& grid);

  const Grid& image_grid() const override { return grid_; }
  const std::vector<int>& detector_shape() const override { return shape_; }
  void apply(std::span<const double> u, std::span<double> g) const override;
  void apply_adjoint(std::span<const double> g,
                     std::span<double> u) const override;

 private:
  Grid grid_;
  std::vector<int> shape_;
};

/// Motion-corrected stack: gate i applies the base operator to the
/// mass-preserving transport of the reference image. Detector domain is the
/// base domain with a leading gate axis; gate blocks are evaluated in
/// parallel and concatenated deterministically.
class StackedMotionOperator final : public ForwardOperator {
 public:
  using ForwardOperator::apply;
  using ForwardOperator::apply_adjoint;
  StackedMotionOperator(std::shared_ptr<const ForwardOperator> base,
                        const std::vector<Deformation>& gates);

  int gate_count() const { return static_cast<int>(pushes_.size()); }
  const ForwardOperator& base() const { return *base_; }
  const Grid& image_grid() const override { return base_->image_grid(); }
  const std::vector<int>& detector_shape() const override { return shape_; }
  void apply(std::span<const double> u, std::span<double> g) const override;
  void apply_adjoint(std::span<const double> g,
                     std::span<double> u) const override;

 private:
  std::shared_ptr<const ForwardOperator> base_;
  std::vector<MassPreservingPush> pushes_;
  std::vector<int> shape_;
};

StackedMotionOperator stacked_motion_operator(
    std::shared_ptr<const ForwardOperator> base,
    const std::vector<Deformation>& gates);

/// Multilinear prolongation from a coarse cell grid composed with a fine-grid
/// operator; used by the multilevel registration so the detector data stays
/// at its native resolution.
class ProlongedOperator final : public ForwardOperator {
 public:
  using ForwardOperator::apply;
  using ForwardOperator::apply_adjoint;
  ProlongedOperator(const Grid& coarse,
                    std::shared_ptr<const ForwardOperator> fine_op);

  const Grid& image_grid() const override { return coarse_; }
  const std::vector<int>& detector_shape() const override {
    return fine_->detector_shape();
  }
  void apply(std::span<const double> u, std::span<double> g) const override;
  void apply_adjoint(std::span<const double> g,
                     std::span<double> u) const override;

 private:
  Grid coarse_;
  std::shared_ptr<const ForwardOperator> fine_;
  // one interpolation row per fine cell into coarse cells
  std::vector<std::uint32_t> row_ptr_;
  std::vector<std::uint32_t> col_;
  std::vector<double> val_;
};

}  // namespace moco
