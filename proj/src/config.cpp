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

#include "moco/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace moco {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

FlatConfig FlatConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open config");
  FlatConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ':' + std::to_string(lineno) +
                               ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void FlatConfig::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw std::invalid_argument("config: empty key");
  map_[key] = value;
}

void FlatConfig::set_pair(const std::string& pair) {
  const auto eq = pair.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config override must be key=value: " + pair);
  set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
}

bool FlatConfig::has(const std::string& key) const {
  return map_.count(key) != 0;
}

std::string FlatConfig::get_string(const std::string& key,
                                   const std::string& def) const {
  const auto it = map_.find(key);
  return it == map_.end() ? def : it->second;
}

double FlatConfig::get_double(const std::string& key, double def) const {
  const auto it = map_.find(key);
  if (it == map_.end()) return def;
  std::size_t pos = 0;
  const double v = std::stod(it->second, &pos);
  if (pos != it->second.size())
    throw std::invalid_argument("config: bad number for " + key);
  return v;
}

int FlatConfig::get_int(const std::string& key, int def) const {
  const auto it = map_.find(key);
  if (it == map_.end()) return def;
  std::size_t pos = 0;
  const int v = std::stoi(it->second, &pos);
  if (pos != it->second.size())
    throw std::invalid_argument("config: bad integer for " + key);
  return v;
}

bool FlatConfig::get_bool(const std::string& key, bool def) const {
  const auto it = map_.find(key);
  if (it == map_.end()) return def;
  if (it->second == "true" || it->second == "1" || it->second == "on")
    return true;
  if (it->second == "false" || it->second == "0" || it->second == "off")
    return false;
  throw std::invalid_argument("config: bad boolean for " + key);
}

std::vector<double> FlatConfig::get_list(const std::string& key,
                                         std::vector<double> def) const {
  const auto it = map_.find(key);
  if (it == map_.end()) return def;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

Grid ExperimentConfig::make_grid() const {
  const double h = grid_extent / grid_n;
  return Grid::make2d(grid_n, grid_n, h, h);
}

std::shared_ptr<ForwardOperator> ExperimentConfig::make_operator(
    const Grid& g) const {
  if (op_kind == "blur") return std::make_shared<GaussianBlurOperator>(g, sigma);
  if (op_kind == "projector")
    return std::make_shared<ParallelProjectorOperator>(g, n_angles, n_bins);
  if (op_kind == "identity") return std::make_shared<IdentityOperator>(g);
  throw std::invalid_argument("config: unknown operator kind " + op_kind);
}

PhantomTruth ExperimentConfig::make_phantom(const Grid& g) const {
  if (phantom_kind == "ring") {
    std::vector<double> rates = shrink_rates;
    if (rates.empty()) {
      rates.resize(gates, 0.0);
      for (int i = 1; i < gates; ++i) rates[i] = max_rate * i / (gates - 1);
    }
    return make_ring_phantom(g, gates, rates, amplitude);
  }
  if (phantom_kind == "cardiac")
    return make_cardiac_phantom(g, gates, amplitude, max_rate);
  throw std::invalid_argument("config: unknown phantom kind " + phantom_kind);
}

ExperimentConfig parse_experiment(const FlatConfig& cfg) {
  ExperimentConfig e;
  e.grid_n = cfg.get_int("grid.n", e.grid_n);
  e.grid_extent = cfg.get_double("grid.extent", e.grid_extent);
  e.phantom_kind = cfg.get_string("phantom.kind", e.phantom_kind);
  e.gates = cfg.get_int("phantom.gates", e.gates);
  e.shrink_rates = cfg.get_list("phantom.rates", e.shrink_rates);
  e.max_rate = cfg.get_double("phantom.max_rate", e.max_rate);
  e.amplitude = cfg.get_double("phantom.amplitude", e.amplitude);
  e.op_kind = cfg.get_string("op.kind", e.op_kind);
  e.sigma = cfg.get_double("op.sigma", e.sigma);
  e.n_angles = cfg.get_int("op.angles", e.n_angles);
  e.n_bins = cfg.get_int("op.bins", e.n_bins);
  e.scale = cfg.get_double("sim.scale", e.scale);
  e.seed = static_cast<std::uint64_t>(cfg.get_int("sim.seed", 1));

  ReconConfig& r = e.recon;
  r.gates = e.gates;
  r.alpha = cfg.get_double("recon.alpha", r.alpha);
  r.beta = cfg.get_double("recon.beta", r.beta);
  r.outer_alternations = cfg.get_int("recon.alternations", r.outer_alternations);
  r.hyper.alpha1 = cfg.get_double("hyper.alpha1", r.hyper.alpha1);
  r.hyper.alpha2 = cfg.get_double("hyper.alpha2", r.hyper.alpha2);
  r.hyper.alpha3 = cfg.get_double("hyper.alpha3", r.hyper.alpha3);
  r.emtv.outer_iters = cfg.get_int("emtv.outer_iters", r.emtv.outer_iters);
  r.emtv.bregman_iters = cfg.get_int("emtv.bregman_iters", r.emtv.bregman_iters);
  r.emtv.positivity_floor =
      cfg.get_double("emtv.positivity_floor", r.emtv.positivity_floor);
  r.emtv.rof.tol = cfg.get_double("rof.tol", r.emtv.rof.tol);
  r.emtv.rof.max_iter = cfg.get_int("rof.max_iter", r.emtv.rof.max_iter);
  r.reg.max_iters = cfg.get_int("reg.max_iters", r.reg.max_iters);
  r.reg.ls_max = cfg.get_int("reg.ls_max", r.reg.ls_max);
  r.reg.grad_tol = cfg.get_double("reg.grad_tol", r.reg.grad_tol);
  r.reg.step_tol = cfg.get_double("reg.step_tol", r.reg.step_tol);
  r.reg.c1 = cfg.get_double("reg.c1", r.reg.c1);
  r.reg.c2 = cfg.get_double("reg.c2", r.reg.c2);
  r.reg.memory = cfg.get_int("reg.memory", r.reg.memory);
  r.ml.levels = cfg.get_int("ml.levels", r.ml.levels);
  r.ml.dirichlet = cfg.get_bool("ml.dirichlet", r.ml.dirichlet);
  r.seed = e.seed;
  return e;
}

}  // namespace moco
