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

#include "moco/emtv.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace moco {

namespace {

DensityImage constant_start(const ForwardOperator& K,
                            std::span<const double> f) {
  double data_mass = 0.0;
  for (double v : f) data_mass += v;
  DensityImage ones(K.image_grid(), 1.0);
  const DetectorData proj = K.apply(ones);
  double proj_mass = 0.0;
  for (double v : proj.values) proj_mass += v;
  if (!(proj_mass > 0.0))
    throw std::runtime_error("emtv: operator annihilates constants");
  return DensityImage(K.image_grid(), std::max(data_mass / proj_mass, kLogGuard));
}

void check_data(const ForwardOperator& K, std::span<const double> f) {
  if (f.size() != K.detector_size())
    throw std::invalid_argument("emtv: data size mismatch");
  for (double v : f) {
    if (v < 0.0 || !std::isfinite(v))
      throw std::invalid_argument("emtv: data must be finite and nonnegative");
  }
}

}  // namespace

DensityImage em_step(const DensityImage& u, const ForwardOperator& K,
                     std::span<const double> f) {
  check_data(K, f);
  if (!(u.grid == K.image_grid()))
    throw std::invalid_argument("em_step: grid mismatch");
  bool any = false;
  for (double v : u.values)
    if (v != 0.0) any = true;
  if (!any) throw std::invalid_argument("em_step: image is identically zero");

  const std::size_t nd = K.detector_size();
  const std::size_t nc = u.size();
  std::vector<double> proj(nd);
  K.apply(u.values, proj);
  std::vector<double> ratio(nd);
  for (std::size_t i = 0; i < nd; ++i) ratio[i] = f[i] / (proj[i] + kLogGuard);
  std::vector<double> back(nc);
  K.apply_adjoint(ratio, back);
  const std::vector<double> sens = K.adjoint_of_ones();

  DensityImage out(u.grid);
  for (std::size_t c = 0; c < nc; ++c) {
    out.values[c] =
        sens[c] > 0.0 ? u.values[c] * back[c] / (sens[c] + kLogGuard) : 0.0;
    if (out.values[c] < 0.0) out.values[c] = 0.0;
  }
  return out;
}

namespace {

DensityImage emtv_loop(const ForwardOperator& K, std::span<const double> f,
                       const EmtvOptions& opts, const DensityImage& start,
                       const std::vector<double>* bregman_v,
                       std::vector<double>* last_weights,
                       DensityImage* last_half) {
  const std::size_t nc = K.image_size();
  const std::vector<double> sens = K.adjoint_of_ones();
  double mean0 = 0.0;
  for (double v : start.values) mean0 += v;
  mean0 /= static_cast<double>(nc);
  const double floor = opts.positivity_floor * std::max(mean0, kLogGuard);

  DensityImage u = start;
  std::vector<double> weights(nc);
  for (int it = 0; it < opts.outer_iters; ++it) {
    DensityImage half = em_step(u, K, f);
    if (opts.alpha > 0.0) {
      for (std::size_t c = 0; c < nc; ++c)
        weights[c] = std::max(sens[c], kLogGuard) / std::max(u.values[c], floor);
      DensityImage target = half;
      if (bregman_v) {
        for (std::size_t c = 0; c < nc; ++c)
          target.values[c] += (*bregman_v)[c] / weights[c];
      }
      u = weighted_rof(target, weights, opts.alpha, opts.rof);
    } else {
      u = half;
    }
    if (opts.iter_log) {
      std::vector<double> proj(K.detector_size());
      K.apply(u.values, proj);
      const double klv = kl(proj, f).value;
      const double tvv = tv(u);
      (*opts.iter_log) << it << ',' << klv << ',' << tvv << ','
                       << klv + opts.alpha * tvv << '\n';
    }
    if (it == opts.outer_iters - 1) {
      if (last_weights) *last_weights = weights;
      if (last_half) *last_half = half;
    }
  }
  return u;
}

}  // namespace

DensityImage emtv_reconstruct(const ForwardOperator& K,
                              std::span<const double> f,
                              const EmtvOptions& opts,
                              const DensityImage* init) {
  check_data(K, f);
  if (opts.outer_iters < 1)
    throw std::invalid_argument("emtv_reconstruct: outer_iters must be >= 1");
  const DensityImage start = init ? *init : constant_start(K, f);
  return emtv_loop(K, f, opts, start, nullptr, nullptr, nullptr);
}

DensityImage bregman_emtv(const ForwardOperator& K, std::span<const double> f,
                          const EmtvOptions& opts, const DensityImage* init) {
  check_data(K, f);
  if (opts.bregman_iters < 1)
    throw std::invalid_argument("bregman_emtv: bregman_iters must be >= 1");
  const DensityImage start = init ? *init : constant_start(K, f);
  const std::size_t nc = K.image_size();

  std::vector<double> v(nc, 0.0);
  DensityImage u = start;
  for (int pass = 0; pass < opts.bregman_iters; ++pass) {
    std::vector<double> weights;
    DensityImage half;
    u = emtv_loop(K, f, opts, start, pass == 0 ? nullptr : &v, &weights, &half);
    if (pass + 1 == opts.bregman_iters) break;
    if (opts.alpha <= 0.0) break;  // no TV part to accumulate
    // subgradient update from the optimality of the last denoising step
    for (std::size_t c = 0; c < nc; ++c)
      v[c] += weights[c] * (half.values[c] - u.values[c]);
  }
  return u;
}

}  // namespace moco
