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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moco/config.hpp"
#include "moco/io.hpp"

namespace fs = std::filesystem;
using namespace moco;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  // dedicated flags land in the override map so precedence is uniform
  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key=value config file");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--set", overrides, "config override key=value");
    auto flag = [this, cmd](const char* name, const char* key,
                            const char* help) {
      cmd->add_option_function<std::string>(
          name,
          [this, key](const std::string& v) {
            overrides.push_back(std::string(key) + "=" + v);
          },
          help);
    };
    flag("--seed", "sim.seed", "simulation seed");
    flag("--gates", "phantom.gates", "number of gates");
    flag("--alpha", "recon.alpha", "TV weight");
    flag("--beta", "recon.beta", "hyperelastic weight");
    flag("--scale", "sim.scale", "Poisson count downscaling factor");
    flag("--levels", "ml.levels", "multilevel registration levels");
    flag("--bregman", "emtv.bregman_iters", "Bregman iterations");
  }

  ExperimentConfig experiment() const {
    FlatConfig cfg;
    if (!config_path.empty()) cfg = FlatConfig::load(config_path);
    for (const std::string& o : overrides) cfg.set_pair(o);
    return parse_experiment(cfg);
  }
};

std::string gate_name(const char* stem, int i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.moco", stem, i);
  return buf;
}

void write_truth(const fs::path& dir, const PhantomTruth& truth) {
  for (std::size_t i = 0; i < truth.images.size(); ++i) {
    const int gi = static_cast<int>(i);
    write_image((dir / gate_name("phantom_gate", gi)).string(),
                truth.images[i]);
    write_pgm_preview(
        (dir / fs::path(gate_name("phantom_gate", gi)).replace_extension(
                   ".pgm"))
            .string(),
        truth.images[i]);
    write_deformation((dir / gate_name("phantom_def", gi)).string(),
                      truth.deformations[i]);
  }
}

GatedData read_gates(const fs::path& dir) {
  GatedData data;
  for (int i = 0;; ++i) {
    const fs::path p = dir / gate_name("gate", i);
    if (!fs::exists(p)) break;
    data.gates.push_back(read_detector(p.string()));
  }
  if (data.gates.empty())
    throw std::runtime_error("no gate_*.moco files in " + dir.string());
  return data;
}

void write_metrics_csv(const fs::path& path,
                       const std::vector<std::pair<std::string, MetricsRecord>>&
                           rows) {
  std::ofstream os(path);
  os << "method,recon_error,pme,mass_err_mean\n";
  os.precision(10);
  for (const auto& [name, rec] : rows) {
    double mass_mean = 0.0;
    for (double m : rec.mass_errors) mass_mean += m;
    if (!rec.mass_errors.empty()) mass_mean /= rec.mass_errors.size();
    os << name << ',' << rec.recon_error << ',' << rec.phantom_matching_error
       << ',' << mass_mean << '\n';
  }
}

int cmd_phantom(const CommonArgs& args) {
  const ExperimentConfig e = args.experiment();
  const Grid g = e.make_grid();
  const PhantomTruth truth = e.make_phantom(g);
  fs::create_directories(args.out_dir);
  write_truth(args.out_dir, truth);
  std::cout << "wrote " << truth.images.size() << " gates to " << args.out_dir
            << '\n';
  return 0;
}

int cmd_simulate(const CommonArgs& args) {
  const ExperimentConfig e = args.experiment();
  const Grid g = e.make_grid();
  const PhantomTruth truth = e.make_phantom(g);
  const auto K = e.make_operator(g);
  const GatedData data = simulate_gated_data(truth, *K, e.scale, e.seed);
  fs::create_directories(args.out_dir);
  write_truth(args.out_dir, truth);
  for (std::size_t i = 0; i < data.gates.size(); ++i)
    write_detector(
        (fs::path(args.out_dir) / gate_name("gate", static_cast<int>(i)))
            .string(),
        data.gates[i]);
  std::cout << "wrote " << data.gates.size() << " gated measurements to "
            << args.out_dir << '\n';
  return 0;
}

int cmd_reconstruct(const CommonArgs& args, const std::string& data_dir,
                    const std::string& method, int gate) {
  const ExperimentConfig e = args.experiment();
  const Grid g = e.make_grid();
  const auto K = e.make_operator(g);
  const GatedData data = read_gates(data_dir.empty() ? args.out_dir : data_dir);
  if (gate < 0 || gate >= static_cast<int>(data.gates.size()))
    throw std::runtime_error("reconstruct: no such gate");

  EmtvOptions opts = e.recon.emtv;
  opts.alpha = e.recon.alpha;
  fs::create_directories(args.out_dir);
  std::ofstream log(fs::path(args.out_dir) / "recon_iters.csv");
  log << "iter,kl,tv,objective\n";
  opts.iter_log = &log;

  DensityImage recon(g);
  if (method == "em") {
    opts.alpha = 0.0;
    recon = emtv_reconstruct(*K, data.gates[gate].values, opts);
  } else if (method == "emtv") {
    opts.bregman_iters = 1;
    recon = emtv_reconstruct(*K, data.gates[gate].values, opts);
  } else if (method == "bregman") {
    recon = bregman_emtv(*K, data.gates[gate].values, opts);
  } else {
    throw std::invalid_argument("reconstruct: unknown method " + method);
  }
  const fs::path out = fs::path(args.out_dir) / ("recon_" + method + ".moco");
  write_image(out.string(), recon);
  write_pgm_preview(
      (fs::path(args.out_dir) / ("recon_" + method + ".pgm")).string(), recon);
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_register(const CommonArgs& args, const std::string& data_dir,
                 const std::string& template_path, int gate) {
  const ExperimentConfig e = args.experiment();
  const Grid g = e.make_grid();
  const auto K = e.make_operator(g);
  const GatedData data = read_gates(data_dir.empty() ? args.out_dir : data_dir);
  if (gate < 1 || gate >= static_cast<int>(data.gates.size()))
    throw std::runtime_error("register: gate must be a moving gate index");

  RegistrationProblem prob;
  prob.rho0 = template_path.empty()
                  ? read_image((fs::path(data_dir.empty() ? args.out_dir
                                                          : data_dir) /
                                gate_name("phantom_gate", 0))
                                   .string())
                  : read_image(template_path);
  prob.f = data.gates[gate];
  prob.op = K;
  prob.hyper = e.recon.hyper;
  prob.beta = e.recon.beta;

  fs::create_directories(args.out_dir);
  std::ofstream log(fs::path(args.out_dir) / "register_iters.csv");
  log << "level,iter,objective,kl,hyper,grad_norm,min_det\n";
  const Deformation y =
      multilevel_register(prob, e.recon.ml, e.recon.reg, &log);
  write_deformation(
      (fs::path(args.out_dir) / gate_name("estimated_def", gate)).string(), y);
  const auto rep = invertibility_report(y);
  std::cout << "registered gate " << gate << ": min_det " << rep.min_det
            << ", fraction_multi " << rep.fraction_multi << '\n';
  return 0;
}

int cmd_mcr(const CommonArgs& args) {
  const ExperimentConfig e = args.experiment();
  const Grid g = e.make_grid();
  const PhantomTruth truth = e.make_phantom(g);
  const auto K = e.make_operator(g);
  const GatedData data = simulate_gated_data(truth, *K, e.scale, e.seed);
  const int gates = static_cast<int>(data.gates.size());

  fs::create_directories(args.out_dir);
  write_truth(args.out_dir, truth);
  for (int i = 0; i < gates; ++i)
    write_detector((fs::path(args.out_dir) / gate_name("gate", i)).string(),
                   data.gates[i]);

  EmtvOptions single = e.recon.emtv;
  single.alpha = 0.0;
  const DensityImage recon_em =
      emtv_reconstruct(*K, data.gates[0].values, single);
  single.alpha = e.recon.alpha;
  std::vector<DensityImage> recon_emtv;
  for (int i = 0; i < gates; ++i)
    recon_emtv.push_back(bregman_emtv(*K, data.gates[i].values, single));

  std::ofstream trace_log(fs::path(args.out_dir) / "trace.csv");
  trace_log << "phase,objective\n";
  const AlternatingResult res =
      alternating_minimize(data, K, e.recon, &trace_log);

  const std::vector<Deformation> affine =
      baseline_affine_register_gates(recon_emtv);

  std::vector<Deformation> identity(gates, Deformation::identity(g));
  std::vector<std::pair<std::string, MetricsRecord>> rows;
  rows.emplace_back("em", metrics(recon_em, identity, truth));
  rows.emplace_back("emtv", metrics(recon_emtv[0], identity, truth));
  rows.emplace_back("affine", metrics(recon_emtv[0], affine, truth));
  rows.emplace_back("proposed", metrics(res.rho0, res.deformations, truth));
  write_metrics_csv(fs::path(args.out_dir) / "metrics.csv", rows);

  write_image((fs::path(args.out_dir) / "recon_em.moco").string(), recon_em);
  write_image((fs::path(args.out_dir) / "recon_emtv.moco").string(),
              recon_emtv[0]);
  write_image((fs::path(args.out_dir) / "recon_proposed.moco").string(),
              res.rho0);
  write_pgm_preview((fs::path(args.out_dir) / "recon_em.pgm").string(),
                    recon_em);
  write_pgm_preview((fs::path(args.out_dir) / "recon_emtv.pgm").string(),
                    recon_emtv[0]);
  write_pgm_preview((fs::path(args.out_dir) / "recon_proposed.pgm").string(),
                    res.rho0);
  for (int i = 0; i < gates; ++i) {
    write_deformation(
        (fs::path(args.out_dir) / gate_name("estimated_def", i)).string(),
        res.deformations[i]);
    write_deformation(
        (fs::path(args.out_dir) / gate_name("affine_def", i)).string(),
        affine[i]);
  }

  for (const auto& [name, rec] : rows)
    std::cout << name << ": recon_error " << rec.recon_error << ", pme "
              << rec.phantom_matching_error << '\n';
  return 0;
}

int cmd_metrics(const CommonArgs& args, const std::string& truth_dir,
                const std::string& est_dir) {
  const fs::path tdir = truth_dir.empty() ? args.out_dir : truth_dir;
  const fs::path edir = est_dir.empty() ? args.out_dir : est_dir;
  PhantomTruth truth;
  for (int i = 0;; ++i) {
    const fs::path img = tdir / gate_name("phantom_gate", i);
    if (!fs::exists(img)) break;
    truth.images.push_back(read_image(img.string()));
    truth.deformations.push_back(
        read_deformation((tdir / gate_name("phantom_def", i)).string()));
  }
  if (truth.images.empty())
    throw std::runtime_error("metrics: no phantom files in " + tdir.string());
  const DensityImage rho0 =
      read_image((edir / "recon_proposed.moco").string());
  std::vector<Deformation> defs;
  for (std::size_t i = 0; i < truth.images.size(); ++i)
    defs.push_back(read_deformation(
        (edir / gate_name("estimated_def", static_cast<int>(i))).string()));
  const MetricsRecord rec = metrics(rho0, defs, truth);
  write_metrics_csv(fs::path(args.out_dir) / "metrics.csv",
                    {{"proposed", rec}});
  std::cout << "recon_error " << rec.recon_error << ", pme "
            << rec.phantom_matching_error << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gated motion-corrected reconstruction toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_dir, method = "emtv", template_path, truth_dir, est_dir;
  int gate = 0;

  auto* phantom = app.add_subcommand("phantom", "write phantom gates");
  auto* simulate = app.add_subcommand("simulate", "simulate gated counts");
  auto* reconstruct =
      app.add_subcommand("reconstruct", "single-gate reconstruction");
  auto* register_cmd =
      app.add_subcommand("register", "register the template to one gate");
  auto* mcr = app.add_subcommand("mcr", "full alternating pipeline");
  auto* metrics_cmd =
      app.add_subcommand("metrics", "recompute metrics from files");
  for (CLI::App* cmd :
       {phantom, simulate, reconstruct, register_cmd, mcr, metrics_cmd})
    common.add_to(cmd);
  reconstruct->add_option("--data", data_dir, "directory with gate_*.moco");
  reconstruct->add_option("--method", method, "em | emtv | bregman");
  reconstruct->add_option("--gate", gate, "gate index");
  register_cmd->add_option("--data", data_dir, "directory with gate_*.moco");
  register_cmd->add_option("--template", template_path, "template image");
  register_cmd->add_option("--gate", gate, "moving gate index");
  metrics_cmd->add_option("--truth", truth_dir, "directory with phantom files");
  metrics_cmd->add_option("--estimate", est_dir, "directory with estimates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  }

  try {
    if (phantom->parsed()) return cmd_phantom(common);
    if (simulate->parsed()) return cmd_simulate(common);
    if (reconstruct->parsed())
      return cmd_reconstruct(common, data_dir, method, gate);
    if (register_cmd->parsed())
      return cmd_register(common, data_dir, template_path, gate);
    if (mcr->parsed()) return cmd_mcr(common);
    if (metrics_cmd->parsed()) return cmd_metrics(common, truth_dir, est_dir);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}
