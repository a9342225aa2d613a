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

#include "moco/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace moco {

namespace {

// Fractions this close to a lattice plane collapse onto it, so that exact
// cell centers and nodes reproduce single-tap stencils.
constexpr double kSnap = 1e-12;

}  // namespace

Grid Grid::make2d(int n0, int n1, double h0, double h1, double o0, double o1) {
  Grid g;
  g.ndim = 2;
  g.dims = {n0, n1, 1};
  g.spacing = {h0, h1, 1.0};
  g.origin = {o0, o1, 0.0};
  g.validate();
  return g;
}

Grid Grid::make3d(int n0, int n1, int n2, double h0, double h1, double h2,
                  double o0, double o1, double o2) {
  Grid g;
  g.ndim = 3;
  g.dims = {n0, n1, n2};
  g.spacing = {h0, h1, h2};
  g.origin = {o0, o1, o2};
  g.validate();
  return g;
}

Grid Grid::unit(int ndim, int n) {
  if (ndim == 2) return make2d(n, n, 1.0 / n, 1.0 / n);
  return make3d(n, n, n, 1.0 / n, 1.0 / n, 1.0 / n);
}

void Grid::validate() const {
  if (ndim != 2 && ndim != 3)
    throw std::invalid_argument("Grid: ndim must be 2 or 3");
  for (int a = 0; a < ndim; ++a) {
    if (dims[a] < 2)
      throw std::invalid_argument("Grid: dims must be >= 2 per axis");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw std::invalid_argument("Grid: spacing must be positive");
    if (!std::isfinite(origin[a]))
      throw std::invalid_argument("Grid: origin must be finite");
  }
}

std::size_t Grid::cell_count() const {
  std::size_t n = 1;
  for (int a = 0; a < ndim; ++a) n *= static_cast<std::size_t>(dims[a]);
  return n;
}

std::size_t Grid::node_count() const {
  std::size_t n = 1;
  for (int a = 0; a < ndim; ++a) n *= static_cast<std::size_t>(dims[a] + 1);
  return n;
}

double Grid::cell_volume() const {
  double v = 1.0;
  for (int a = 0; a < ndim; ++a) v *= spacing[a];
  return v;
}

std::size_t Grid::cell_index(const std::array<int, kMaxDim>& idx) const {
  std::size_t lin = 0;
  for (int a = ndim - 1; a >= 0; --a)
    lin = lin * static_cast<std::size_t>(dims[a]) +
          static_cast<std::size_t>(idx[a]);
  return lin;
}

std::array<int, kMaxDim> Grid::cell_coords(std::size_t linear) const {
  std::array<int, kMaxDim> idx{0, 0, 0};
  for (int a = 0; a < ndim; ++a) {
    idx[a] = static_cast<int>(linear % static_cast<std::size_t>(dims[a]));
    linear /= static_cast<std::size_t>(dims[a]);
  }
  return idx;
}

void Grid::cell_center(std::size_t linear, double* x) const {
  const auto idx = cell_coords(linear);
  for (int a = 0; a < ndim; ++a)
    x[a] = origin[a] + (idx[a] + 0.5) * spacing[a];
}

std::size_t Grid::node_index(const std::array<int, kMaxDim>& idx) const {
  std::size_t lin = 0;
  for (int a = ndim - 1; a >= 0; --a)
    lin = lin * static_cast<std::size_t>(dims[a] + 1) +
          static_cast<std::size_t>(idx[a]);
  return lin;
}

std::array<int, kMaxDim> Grid::node_coords(std::size_t linear) const {
  std::array<int, kMaxDim> idx{0, 0, 0};
  for (int a = 0; a < ndim; ++a) {
    idx[a] = static_cast<int>(linear % static_cast<std::size_t>(dims[a] + 1));
    linear /= static_cast<std::size_t>(dims[a] + 1);
  }
  return idx;
}

void Grid::node_position(std::size_t linear, double* x) const {
  const auto idx = node_coords(linear);
  for (int a = 0; a < ndim; ++a) x[a] = origin[a] + idx[a] * spacing[a];
}

bool Grid::contains(const double* x) const {
  for (int a = 0; a < ndim; ++a) {
    if (x[a] < origin[a] || x[a] > origin[a] + extent(a)) return false;
  }
  return true;
}

bool Grid::operator==(const Grid& other) const {
  if (ndim != other.ndim) return false;
  for (int a = 0; a < ndim; ++a) {
    if (dims[a] != other.dims[a] || spacing[a] != other.spacing[a] ||
        origin[a] != other.origin[a])
      return false;
  }
  return true;
}

DensityImage::DensityImage(const Grid& g, double fill)
    : grid(g), values(g.cell_count(), fill) {
  grid.validate();
}

double DensityImage::total_mass() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s * grid.cell_volume();
}

Deformation::Deformation(const Grid& g)
    : grid(g), nodal(g.node_count() * g.ndim, 0.0) {
  grid.validate();
}

Deformation Deformation::identity(const Grid& g) {
  Deformation y(g);
  const std::size_t nn = g.node_count();
  for (std::size_t n = 0; n < nn; ++n) g.node_position(n, y.node(n));
  return y;
}

void Deformation::evaluate(const double* x, double* y) const {
  const int d = grid.ndim;
  int base[kMaxDim] = {0, 0, 0};
  double frac[kMaxDim] = {0.0, 0.0, 0.0};
  for (int a = 0; a < d; ++a) {
    double t = (x[a] - grid.origin[a]) / grid.spacing[a];
    int i = static_cast<int>(std::floor(t));
    double f = t - i;
    if (f < kSnap) f = 0.0;
    if (f > 1.0 - kSnap) {
      f = 0.0;
      ++i;
    }
    // clamp onto the node lattice; points on the right box face land on i=dims
    if (i < 0) {
      i = 0;
      f = 0.0;
    } else if (i >= grid.dims[a]) {
      i = grid.dims[a] - 1;
      f = 1.0;
    }
    base[a] = i;
    frac[a] = f;
  }
  for (int r = 0; r < d; ++r) y[r] = 0.0;
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
    const double* yn = node(grid.node_index(idx));
    for (int r = 0; r < d; ++r) y[r] += w * yn[r];
  }
}

CellTensorField::CellTensorField(const Grid& g)
    : grid(g), values(g.cell_count() * g.ndim * g.ndim, 0.0) {}

SampleStencil sample_stencil(const Grid& g, const double* x) {
  SampleStencil st;
  if (!g.contains(x)) return st;
  st.inside = true;
  const int d = g.ndim;
  int base[kMaxDim] = {0, 0, 0};
  double frac[kMaxDim] = {0.0, 0.0, 0.0};
  for (int a = 0; a < d; ++a) {
    double t = (x[a] - g.origin[a]) / g.spacing[a] - 0.5;
    int i = static_cast<int>(std::floor(t));
    double f = t - i;
    if (f < kSnap) f = 0.0;
    if (f > 1.0 - kSnap) {
      f = 0.0;
      ++i;
    }
    base[a] = i;
    frac[a] = f;
  }
  const int corners = 1 << d;
  for (int m = 0; m < corners; ++m) {
    double w = 1.0;
    std::array<int, kMaxDim> idx{0, 0, 0};
    bool ok = true;
    for (int a = 0; a < d; ++a) {
      const int up = (m >> a) & 1;
      w *= up ? frac[a] : 1.0 - frac[a];
      idx[a] = base[a] + up;
      if (idx[a] < 0 || idx[a] >= g.dims[a]) ok = false;  // zero padding
    }
    if (!ok || w == 0.0) continue;
    st.index[st.n] = g.cell_index(idx);
    st.weight[st.n] = w;
    ++st.n;
  }
  return st;
}

double sample(const DensityImage& u, const double* x) {
  const SampleStencil st = sample_stencil(u.grid, x);
  double v = 0.0;
  for (int k = 0; k < st.n; ++k) v += st.weight[k] * u.values[st.index[k]];
  return v;
}

double sample_with_gradient(const DensityImage& u, const double* x,
                            double* grad) {
  const Grid& g = u.grid;
  const int d = g.ndim;
  for (int r = 0; r < d; ++r) grad[r] = 0.0;
  if (!g.contains(x)) return 0.0;
  int base[kMaxDim] = {0, 0, 0};
  double frac[kMaxDim] = {0.0, 0.0, 0.0};
  for (int a = 0; a < d; ++a) {
    double t = (x[a] - g.origin[a]) / g.spacing[a] - 0.5;
    int i = static_cast<int>(std::floor(t));
    double f = t - i;
    base[a] = i;
    frac[a] = f;
  }
  double value = 0.0;
  const int corners = 1 << d;
  for (int m = 0; m < corners; ++m) {
    std::array<int, kMaxDim> idx{0, 0, 0};
    bool ok = true;
    for (int a = 0; a < d; ++a) {
      idx[a] = base[a] + ((m >> a) & 1);
      if (idx[a] < 0 || idx[a] >= g.dims[a]) ok = false;
    }
    if (!ok) continue;
    const double uv = u.values[g.cell_index(idx)];
    double w = 1.0;
    for (int a = 0; a < d; ++a) {
      const int up = (m >> a) & 1;
      w *= up ? frac[a] : 1.0 - frac[a];
    }
    value += w * uv;
    for (int r = 0; r < d; ++r) {
      double wr = ((m >> r) & 1) ? 1.0 : -1.0;
      wr /= g.spacing[r];
      for (int a = 0; a < d; ++a) {
        if (a == r) continue;
        const int up = (m >> a) & 1;
        wr *= up ? frac[a] : 1.0 - frac[a];
      }
      grad[r] += wr * uv;
    }
  }
  return value;
}

std::vector<double> interp(const DensityImage& img,
                           std::span<const double> points) {
  const int d = img.grid.ndim;
  if (points.size() % d != 0)
    throw std::invalid_argument("interp: point buffer size not divisible by d");
  const std::size_t np = points.size() / d;
  std::vector<double> out(np);
  for (std::size_t p = 0; p < np; ++p) {
    const double* x = points.data() + p * d;
    for (int a = 0; a < d; ++a) {
      if (!std::isfinite(x[a]))
        throw std::invalid_argument("interp: non-finite point at index " +
                                    std::to_string(p));
    }
    out[p] = sample(img, x);
  }
  return out;
}

void interp(const DensityImage& img, std::span<const double> points,
            std::span<double> values, std::span<double> derivatives) {
  const int d = img.grid.ndim;
  if (points.size() % d != 0)
    throw std::invalid_argument("interp: point buffer size not divisible by d");
  const std::size_t np = points.size() / d;
  if (values.size() != np || derivatives.size() != np * d)
    throw std::invalid_argument("interp: output buffer size mismatch");
  for (std::size_t p = 0; p < np; ++p) {
    const double* x = points.data() + p * d;
    for (int a = 0; a < d; ++a) {
      if (!std::isfinite(x[a]))
        throw std::invalid_argument("interp: non-finite point at index " +
                                    std::to_string(p));
    }
    values[p] = sample_with_gradient(img, x, derivatives.data() + p * d);
  }
}

double jacobian_stencil_coef(int ndim, int corner_mask, int axis,
                             double h_axis) {
  const double sign = ((corner_mask >> axis) & 1) ? 1.0 : -1.0;
  return sign / (static_cast<double>(1 << (ndim - 1)) * h_axis);
}

CellTensorField nodal_jacobian(const Deformation& y) {
  const Grid& g = y.grid;
  const int d = g.ndim;
  CellTensorField jac(g);
  const std::size_t nc = g.cell_count();
  const int corners = 1 << d;
  for (std::size_t c = 0; c < nc; ++c) {
    const auto cc = g.cell_coords(c);
    double* J = jac.cell(c);
    for (int m = 0; m < corners; ++m) {
      std::array<int, kMaxDim> idx{0, 0, 0};
      for (int a = 0; a < d; ++a) idx[a] = cc[a] + ((m >> a) & 1);
      const double* yn = y.node(g.node_index(idx));
      for (int a = 0; a < d; ++a) {
        const double coef = jacobian_stencil_coef(d, m, a, g.spacing[a]);
        for (int r = 0; r < d; ++r) J[r * d + a] += coef * yn[r];
      }
    }
  }
  return jac;
}

double det_matrix(int ndim, const double* m) {
  if (ndim == 2) return m[0] * m[3] - m[1] * m[2];
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void cof_matrix(int ndim, const double* m, double* out) {
  if (ndim == 2) {
    out[0] = m[3];
    out[1] = -m[2];
    out[2] = -m[1];
    out[3] = m[0];
    return;
  }
  out[0] = m[4] * m[8] - m[5] * m[7];
  out[1] = m[5] * m[6] - m[3] * m[8];
  out[2] = m[3] * m[7] - m[4] * m[6];
  out[3] = m[2] * m[7] - m[1] * m[8];
  out[4] = m[0] * m[8] - m[2] * m[6];
  out[5] = m[1] * m[6] - m[0] * m[7];
  out[6] = m[1] * m[5] - m[2] * m[4];
  out[7] = m[2] * m[3] - m[0] * m[5];
  out[8] = m[0] * m[4] - m[1] * m[3];
}

namespace {

inline double eps2(int i, int j) {
  if (i == j) return 0.0;
  return (i == 0 && j == 1) ? 1.0 : -1.0;
}

inline double eps3(int i, int j, int k) {
  if (i == j || j == k || i == k) return 0.0;
  // parity of the permutation (i,j,k) of (0,1,2)
  const bool even = (j == (i + 1) % 3);
  return even ? 1.0 : -1.0;
}

}  // namespace

void cof_derivative_adjoint(int ndim, const double* jac, const double* m,
                            double* out) {
  if (ndim == 2) {
    // cof is linear in 2D; the contraction of M with dcof/dJ is cof(M)
    (void)jac;
    cof_matrix(2, m, out);
    return;
  }
  // cof(J)_{ij} = 1/2 eps_{ipq} eps_{jrs} J_{pr} J_{qs}
  // => dcof_{ij}/dJ_{kl} = eps_{ikq} eps_{jls} J_{qs}
  for (int k = 0; k < 3; ++k) {
    for (int l = 0; l < 3; ++l) {
      double acc = 0.0;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const double mij = m[i * 3 + j];
          if (mij == 0.0) continue;
          for (int q = 0; q < 3; ++q) {
            const double e1 = eps3(i, k, q);
            if (e1 == 0.0) continue;
            for (int s = 0; s < 3; ++s) {
              const double e2 = eps3(j, l, s);
              if (e2 == 0.0) continue;
              acc += mij * e1 * e2 * jac[q * 3 + s];
            }
          }
        }
      }
      out[k * 3 + l] = acc;
    }
  }
  (void)eps2;
}

std::vector<double> det_field(const CellTensorField& jac) {
  const std::size_t nc = jac.grid.cell_count();
  std::vector<double> out(nc);
  for (std::size_t c = 0; c < nc; ++c)
    out[c] = det_matrix(jac.grid.ndim, jac.cell(c));
  return out;
}

CellTensorField cof_field(const CellTensorField& jac) {
  CellTensorField out(jac.grid);
  const std::size_t nc = jac.grid.cell_count();
  for (std::size_t c = 0; c < nc; ++c)
    cof_matrix(jac.grid.ndim, jac.cell(c), out.cell(c));
  return out;
}

}  // namespace moco
