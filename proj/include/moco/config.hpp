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

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "moco/pipeline.hpp"

namespace moco {

/// Flat "key = value" text configuration, one entry per line, sections by
/// key prefix ("emtv.alpha = 200"), '#' comments. Later assignments win.
class FlatConfig {
 public:
  FlatConfig() = default;
  static FlatConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  /// Parses a "key=value" fragment (command-line override form).
  void set_pair(const std::string& pair);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key, double def) const;
  int get_int(const std::string& key, int def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<double> get_list(const std::string& key,
                               std::vector<double> def) const;

  const std::map<std::string, std::string>& entries() const { return map_; }

 private:
  std::map<std::string, std::string> map_;
};

/// Everything one experiment needs: domain, phantom, operator, simulation,
/// and solver settings. Field defaults are the documented key defaults.
struct ExperimentConfig {
  // grid.*
  int grid_n = 64;
  double grid_extent = 1.0;
  // phantom.*
  std::string phantom_kind = "ring";  // ring | cardiac
  int gates = 3;
  std::vector<double> shrink_rates;  // empty: evenly spread up to max_rate
  double max_rate = 0.18;
  double amplitude = 10000.0;
  // op.*
  std::string op_kind = "blur";  // blur | projector | identity
  double sigma = 0.05;
  int n_angles = 60;
  int n_bins = 96;
  // sim.*
  double scale = 1000.0;
  std::uint64_t seed = 1;
  // recon.* / hyper.* / emtv.* / rof.* / reg.* / ml.*
  ReconConfig recon;

  Grid make_grid() const;
  std::shared_ptr<ForwardOperator> make_operator(const Grid& g) const;
  PhantomTruth make_phantom(const Grid& g) const;
};

ExperimentConfig parse_experiment(const FlatConfig& cfg);

}  // namespace moco
