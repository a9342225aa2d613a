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

#include "moco/forward.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <stdexcept>

namespace moco {

DetectorData::DetectorData(std::vector<int> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("DetectorData: nonpositive shape");
    n *= static_cast<std::size_t>(d);
  }
  values.assign(n, fill);
}

std::size_t ForwardOperator::detector_size() const {
  std::size_t n = 1;
  for (int d : detector_shape()) n *= static_cast<std::size_t>(d);
  return n;
}

DetectorData ForwardOperator::apply(const DensityImage& u) const {
  if (!(u.grid == image_grid()))
    throw std::invalid_argument("ForwardOperator::apply: grid mismatch");
  DetectorData g(detector_shape());
  apply(u.values, g.values);
  return g;
}

DensityImage ForwardOperator::apply_adjoint(const DetectorData& g) const {
  if (g.size() != detector_size())
    throw std::invalid_argument("ForwardOperator::apply_adjoint: shape mismatch");
  DensityImage u(image_grid());
  apply_adjoint(g.values, u.values);
  return u;
}

std::vector<double> ForwardOperator::adjoint_of_ones() const {
  std::vector<double> ones(detector_size(), 1.0);
  std::vector<double> sens(image_size(), 0.0);
  apply_adjoint(ones, sens);
  return sens;
}

// ---------------------------------------------------------------------------
// Gaussian blur

GaussianBlurOperator::GaussianBlurOperator(const Grid& grid, double sigma)
    : grid_(grid), sigma_(sigma) {
  grid_.validate();
  if (sigma < 0.0 || !std::isfinite(sigma))
    throw std::invalid_argument("GaussianBlurOperator: bad sigma");
  shape_.assign(grid_.dims.begin(), grid_.dims.begin() + grid_.ndim);
  kernels_.resize(grid_.ndim);
  for (int a = 0; a < grid_.ndim; ++a) {
    const double h = grid_.spacing[a];
    const int radius = sigma > 0.0 ? static_cast<int>(std::ceil(4.0 * sigma / h)) : 0;
    std::vector<double> k(2 * radius + 1, 1.0);
    if (radius > 0) {
      double sum = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        const double t = j * h / sigma;
        k[j + radius] = std::exp(-0.5 * t * t);
        sum += k[j + radius];
      }
      for (double& v : k) v /= sum;
    }
    kernels_[a] = std::move(k);
  }
}

void GaussianBlurOperator::convolve(std::span<const double> in,
                                    std::span<double> out) const {
  const std::size_t nc = grid_.cell_count();
  std::vector<double> cur(in.begin(), in.end());
  std::vector<double> next(nc);
  for (int a = 0; a < grid_.ndim; ++a) {
    const auto& k = kernels_[a];
    const int radius = (static_cast<int>(k.size()) - 1) / 2;
    if (radius == 0) continue;
    // stride of axis a and the extent of the remaining axes
    std::size_t stride = 1;
    for (int b = 0; b < a; ++b) stride *= static_cast<std::size_t>(grid_.dims[b]);
    const int n = grid_.dims[a];
    const std::size_t outer = nc / static_cast<std::size_t>(n);
    for (std::size_t o = 0; o < outer; ++o) {
      // decompose the outer index into (inner, upper) parts around axis a
      const std::size_t inner = o % stride;
      const std::size_t upper = o / stride;
      const std::size_t base = inner + upper * stride * static_cast<std::size_t>(n);
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        const int j0 = std::max(0, i - radius);
        const int j1 = std::min(n - 1, i + radius);
        for (int j = j0; j <= j1; ++j)
          acc += k[i - j + radius] * cur[base + static_cast<std::size_t>(j) * stride];
        next[base + static_cast<std::size_t>(i) * stride] = acc;
      }
    }
    std::swap(cur, next);
  }
  std::copy(cur.begin(), cur.end(), out.begin());
}

void GaussianBlurOperator::apply(std::span<const double> u,
                                 std::span<double> g) const {
  if (u.size() != image_size() || g.size() != detector_size())
    throw std::invalid_argument("GaussianBlurOperator::apply: size mismatch");
  convolve(u, g);
}

void GaussianBlurOperator::apply_adjoint(std::span<const double> g,
                                         std::span<double> u) const {
  if (g.size() != detector_size() || u.size() != image_size())
    throw std::invalid_argument("GaussianBlurOperator::apply_adjoint: size mismatch");
  convolve(g, u);  // symmetric kernel with zero padding: self-adjoint
}

// ---------------------------------------------------------------------------
// Parallel-beam projector

ParallelProjectorOperator::ParallelProjectorOperator(const Grid& grid,
                                                     int n_angles, int n_bins)
    : grid_(grid) {
  grid_.validate();
  if (grid_.ndim != 2)
    throw std::invalid_argument("ParallelProjectorOperator: 2D grids only");
  if (n_angles < 1 || n_bins < 1)
    throw std::invalid_argument("ParallelProjectorOperator: bad detector layout");
  shape_ = {n_angles, n_bins};
  sincos_.resize(2 * static_cast<std::size_t>(n_angles));
  for (int a = 0; a < n_angles; ++a) {
    const double theta = std::numbers::pi * a / n_angles;
    sincos_[2 * a] = std::sin(theta);
    sincos_[2 * a + 1] = std::cos(theta);
  }
  for (int a = 0; a < 2; ++a)
    center_[a] = grid_.origin[a] + 0.5 * grid_.extent(a);
  half_diag_ = 0.5 * std::hypot(grid_.extent(0), grid_.extent(1));
  step_ = std::min(grid_.spacing[0], grid_.spacing[1]);
  bin_spacing_ = 2.0 * half_diag_ / n_bins;
  bin_first_ = -half_diag_ + 0.5 * bin_spacing_;
}

ParallelProjectorOperator::Ray ParallelProjectorOperator::ray(int angle,
                                                              int bin) const {
  const double s = sincos_[2 * angle];
  const double c = sincos_[2 * angle + 1];
  const double offset = bin_first_ + bin * bin_spacing_;
  Ray r;
  r.steps = static_cast<int>(std::ceil(2.0 * half_diag_ / step_));
  // bin axis (c, s); marching axis (-s, c), midpoint samples
  r.start[0] = center_[0] + offset * c + half_diag_ * s;
  r.start[1] = center_[1] + offset * s - half_diag_ * c;
  r.dir[0] = -s * step_;
  r.dir[1] = c * step_;
  r.start[0] += 0.5 * r.dir[0];
  r.start[1] += 0.5 * r.dir[1];
  return r;
}

void ParallelProjectorOperator::apply(std::span<const double> u,
                                      std::span<double> g) const {
  if (u.size() != image_size() || g.size() != detector_size())
    throw std::invalid_argument("ParallelProjectorOperator::apply: size mismatch");
  const int na = shape_[0], nb = shape_[1];
  for (int a = 0; a < na; ++a) {
    for (int b = 0; b < nb; ++b) {
      const Ray r = ray(a, b);
      double acc = 0.0;
      double p[2] = {r.start[0], r.start[1]};
      for (int k = 0; k < r.steps; ++k) {
        const SampleStencil st = sample_stencil(grid_, p);
        for (int t = 0; t < st.n; ++t) acc += st.weight[t] * u[st.index[t]];
        p[0] += r.dir[0];
        p[1] += r.dir[1];
      }
      g[static_cast<std::size_t>(a) * nb + b] = acc * step_;
    }
  }
}

void ParallelProjectorOperator::apply_adjoint(std::span<const double> g,
                                              std::span<double> u) const {
  if (g.size() != detector_size() || u.size() != image_size())
    throw std::invalid_argument(
        "ParallelProjectorOperator::apply_adjoint: size mismatch");
  std::fill(u.begin(), u.end(), 0.0);
  const int na = shape_[0], nb = shape_[1];
  for (int a = 0; a < na; ++a) {
    for (int b = 0; b < nb; ++b) {
      const double w = g[static_cast<std::size_t>(a) * nb + b] * step_;
      if (w == 0.0) continue;
      const Ray r = ray(a, b);
      double p[2] = {r.start[0], r.start[1]};
      for (int k = 0; k < r.steps; ++k) {
        const SampleStencil st = sample_stencil(grid_, p);
        for (int t = 0; t < st.n; ++t) u[st.index[t]] += st.weight[t] * w;
        p[0] += r.dir[0];
        p[1] += r.dir[1];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Identity

IdentityOperator::IdentityOperator(const Grid& grid) : grid_(grid) {
  grid_.validate();
  shape_.assign(grid_.dims.begin(), grid_.dims.begin() + grid_.ndim);
}

void IdentityOperator::apply(std::span<const double> u,
                             std::span<double> g) const {
  if (u.size() != g.size() || u.size() != image_size())
    throw std::invalid_argument("IdentityOperator::apply: size mismatch");
  std::copy(u.begin(), u.end(), g.begin());
}

void IdentityOperator::apply_adjoint(std::span<const double> g,
                                     std::span<double> u) const {
  apply(g, u);
}

// ---------------------------------------------------------------------------
// Motion-corrected stack

StackedMotionOperator::StackedMotionOperator(
    std::shared_ptr<const ForwardOperator> base,
    const std::vector<Deformation>& gates)
    : base_(std::move(base)) {
  if (!base_) throw std::invalid_argument("StackedMotionOperator: null base");
  if (gates.empty())
    throw std::invalid_argument("StackedMotionOperator: gate count 0");
  pushes_.reserve(gates.size());
  for (const Deformation& y : gates)
    pushes_.emplace_back(base_->image_grid(), y);
  shape_.push_back(static_cast<int>(gates.size()));
  for (int d : base_->detector_shape()) shape_.push_back(d);
}

void StackedMotionOperator::apply(std::span<const double> u,
                                  std::span<double> g) const {
  if (u.size() != image_size() || g.size() != detector_size())
    throw std::invalid_argument("StackedMotionOperator::apply: size mismatch");
  const std::size_t block = base_->detector_size();
  const std::size_t nc = image_size();
  auto run_gate = [&](std::size_t i) {
    std::vector<double> moved(nc);
    pushes_[i].apply(u, moved);
    base_->apply(moved, g.subspan(i * block, block));
  };
  std::vector<std::future<void>> jobs;
  jobs.reserve(pushes_.size());
  for (std::size_t i = 0; i < pushes_.size(); ++i)
    jobs.push_back(std::async(std::launch::async, run_gate, i));
  for (auto& j : jobs) j.get();
}

void StackedMotionOperator::apply_adjoint(std::span<const double> g,
                                          std::span<double> u) const {
  if (g.size() != detector_size() || u.size() != image_size())
    throw std::invalid_argument(
        "StackedMotionOperator::apply_adjoint: size mismatch");
  const std::size_t block = base_->detector_size();
  const std::size_t nc = image_size();
  std::vector<std::vector<double>> parts(pushes_.size());
  auto run_gate = [&](std::size_t i) {
    std::vector<double> back(nc);
    base_->apply_adjoint(g.subspan(i * block, block), back);
    parts[i].assign(nc, 0.0);
    pushes_[i].apply_transpose(back, parts[i]);
  };
  std::vector<std::future<void>> jobs;
  jobs.reserve(pushes_.size());
  for (std::size_t i = 0; i < pushes_.size(); ++i)
    jobs.push_back(std::async(std::launch::async, run_gate, i));
  for (auto& j : jobs) j.get();
  std::fill(u.begin(), u.end(), 0.0);
  for (const auto& part : parts)
    for (std::size_t c = 0; c < nc; ++c) u[c] += part[c];
}

StackedMotionOperator stacked_motion_operator(
    std::shared_ptr<const ForwardOperator> base,
    const std::vector<Deformation>& gates) {
  return StackedMotionOperator(std::move(base), gates);
}

// ---------------------------------------------------------------------------
// Prolongation wrapper

ProlongedOperator::ProlongedOperator(
    const Grid& coarse, std::shared_ptr<const ForwardOperator> fine_op)
    : coarse_(coarse), fine_(std::move(fine_op)) {
  coarse_.validate();
  if (!fine_) throw std::invalid_argument("ProlongedOperator: null operator");
  const Grid& fine = fine_->image_grid();
  if (fine.ndim != coarse_.ndim)
    throw std::invalid_argument("ProlongedOperator: dimension mismatch");
  const int d = coarse_.ndim;
  const std::size_t nf = fine.cell_count();
  row_ptr_.reserve(nf + 1);
  row_ptr_.push_back(0);
  double x[kMaxDim];
  for (std::size_t f = 0; f < nf; ++f) {
    fine.cell_center(f, x);
    // clamped multilinear stencil on the coarse cell-center lattice
    int base[kMaxDim] = {0, 0, 0};
    double frac[kMaxDim] = {0.0, 0.0, 0.0};
    for (int a = 0; a < d; ++a) {
      const double t = (x[a] - coarse_.origin[a]) / coarse_.spacing[a] - 0.5;
      int i = static_cast<int>(std::floor(t));
      double fr = t - i;
      if (i < 0) {
        i = 0;
        fr = 0.0;
      } else if (i >= coarse_.dims[a] - 1) {
        i = coarse_.dims[a] - 2;
        fr = 1.0;
      }
      base[a] = i;
      frac[a] = fr;
    }
    const int corners = 1 << d;
    for (int m = 0; m < corners; ++m) {
      double w = 1.0;
      std::array<int, kMaxDim> idx{0, 0, 0};
      for (int a = 0; a < d; ++a) {
        const int up = (m >> a) & 1;
        w *= up ? frac[a] : 1.0 - frac[a];
        idx[a] = base[a] + up;
      }
      if (w == 0.0) continue;
      col_.push_back(static_cast<std::uint32_t>(coarse_.cell_index(idx)));
      val_.push_back(w);
    }
    row_ptr_.push_back(static_cast<std::uint32_t>(col_.size()));
  }
}

void ProlongedOperator::apply(std::span<const double> u,
                              std::span<double> g) const {
  if (u.size() != image_size() || g.size() != detector_size())
    throw std::invalid_argument("ProlongedOperator::apply: size mismatch");
  const std::size_t nf = fine_->image_size();
  std::vector<double> fine_u(nf, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    double acc = 0.0;
    for (std::uint32_t k = row_ptr_[f]; k < row_ptr_[f + 1]; ++k)
      acc += val_[k] * u[col_[k]];
    fine_u[f] = acc;
  }
  fine_->apply(fine_u, g);
}

void ProlongedOperator::apply_adjoint(std::span<const double> g,
                                      std::span<double> u) const {
  if (g.size() != detector_size() || u.size() != image_size())
    throw std::invalid_argument("ProlongedOperator::apply_adjoint: size mismatch");
  const std::size_t nf = fine_->image_size();
  std::vector<double> fine_u(nf, 0.0);
  fine_->apply_adjoint(g, fine_u);
  std::fill(u.begin(), u.end(), 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    const double vf = fine_u[f];
    if (vf == 0.0) continue;
    for (std::uint32_t k = row_ptr_[f]; k < row_ptr_[f + 1]; ++k)
      u[col_[k]] += val_[k] * vf;
  }
}

}  // namespace moco
