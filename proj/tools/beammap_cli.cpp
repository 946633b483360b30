// SPDX-License-Identifier: Apache-2.0
//
// beammap simulate|transform|solve|solve-los|backmap|evaluate|experiment

#include "beammap/bench.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace beammap;

namespace
{
struct Common
{
  std::string config;
  std::string scenario;
  std::string out = ".";
};

ExperimentConfig load(const Common &c)
{
  std::optional<Scenario> sc;
  if (!c.scenario.empty())
    sc = parse_scenario(c.scenario);
  if (!c.config.empty())
    return load_config(c.config, sc);
  return default_config(sc.value_or(Scenario::los));
}

fs::path out_dir(const Common &c)
{
  fs::create_directories(c.out);
  return fs::path(c.out);
}

void add_common(CLI::App *app, Common &c)
{
  app->add_option("--config", c.config, "Key-value configuration file");
  app->add_option("--scenario", c.scenario, "los | los_reflect | los_obstruct | los_reflect_obstruct");
  app->add_option("--out", c.out, "Output directory");
}

// Augmented tensors carry one block per source; the file format does not.
void restore_blocks(MaskedTensor3 &t, const ExperimentConfig &cfg)
{
  if (cfg.scene.has_wall && t.values.dim_k == 2 * cfg.n_distance_bins)
    t.blocks = {cfg.n_distance_bins, cfg.n_distance_bins};
}

FactorModel load_any_factors(const std::string &path)
{
  std::ifstream in(path);
  std::string tag;
  in >> tag;
  if (tag == "FACTORS-TOEPLITZ")
  {
    const auto [gain, rho] = read_toeplitz_factors(path);
    FactorModel m;
    m.gains.push_back(gain.matrix());
    m.attenuation = rho;
    return m;
  }
  return read_factors(path);
}
} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Beam map reconstruction from sparse RSS measurements"};
  app.require_subcommand(1);

  Common common;
  double sampling_ratio = 0.1;
  std::uint64_t seed = 1;
  std::size_t rank = 0;
  std::string method, solve_method = "general";
  std::string input, truth_path, estimate_path;
  std::string study = "sweep";
  std::vector<double> noise_grid{0.0, 1.0, 2.0, 3.0, 4.0};

  auto *sim = app.add_subcommand("simulate", "Sample noisy measurements and the noiseless map");
  add_common(sim, common);
  sim->add_option("--sampling-ratio", sampling_ratio, "Sampled fraction of the 1 m cells");
  sim->add_option("--seed", seed, "Random seed");

  auto *tr = app.add_subcommand("transform", "Bin measurements into polar tensors");
  add_common(tr, common);
  tr->add_option("--input", input, "Measurement CSV")->required();

  auto *sol = app.add_subcommand("solve", "General decomposition of a polar tensor");
  add_common(sol, common);
  sol->add_option("--input", input, "Tensor file")->required();
  sol->add_option("--rank", rank, "Number of components (default: scenario rank)");
  sol->add_option("--method", solve_method, "general | btd_plain | regularized")->capture_default_str();

  auto *los = app.add_subcommand("solve-los", "Hard Toeplitz-constrained LOS solver");
  add_common(los, common);
  los->add_option("--input", input, "Tensor file")->required();

  auto *bm = app.add_subcommand("backmap", "Map factors back to the Cartesian grid");
  add_common(bm, common);
  bm->add_option("--input", input, "Factor file")->required();

  auto *ev = app.add_subcommand("evaluate", "NMSE of an estimated beam map");
  add_common(ev, common);
  ev->add_option("--truth", truth_path, "Reference beam map")->required();
  ev->add_option("--estimate", estimate_path, "Estimated beam map")->required();

  auto *ex = app.add_subcommand("experiment", "Run a benchmark study");
  add_common(ex, common);
  ex->add_option("--study", study, "sweep | constraint | reflect")->default_val("sweep");
  ex->add_option("--sampling-ratio", sampling_ratio, "Restrict to one sampling ratio");
  ex->add_option("--seed", seed, "Restrict to one seed");
  ex->add_option("--method", method, "Comma-separated methods");
  ex->add_option("--noise-grid", noise_grid, "Direct-path noise levels in dB (constraint study)");

  CLI11_PARSE(app, argc, argv);

  try
  {
    ExperimentConfig cfg = load(common);
    const fs::path out = out_dir(common);

    if (sim->parsed())
    {
      const MirrorScene mirror = make_mirror(cfg.scene);
      const MeasurementSet ms = sample_measurements(cfg.scene, mirror, sampling_ratio, seed);
      write_measurements_csv(ms, (out / "measurements.csv").string());
      write_beam_map((out / "truth.beammap").string(), ground_truth_map(cfg.scene, mirror, MapComponent::total));
      std::cout << ms.n_locations << " locations, " << ms.records.size() << " records\n";
    }
    else if (tr->parsed())
    {
      const ScenarioContext ctx = make_context(cfg, false);
      const PolarData d = transform(read_measurements_csv(input), ctx);
      write_tensor((out / "direct.tensor").string(), d.direct);
      if (d.reflected)
      {
        write_tensor((out / "reflected.tensor").string(), *d.reflected);
        write_tensor((out / "augmented.tensor").string(), d.augmented);
      }
      std::cout << d.direct.observed() << " observed direct cells, " << d.dropped << " records outside coverage\n";
    }
    else if (sol->parsed())
    {
      const ScenarioContext ctx = make_context(cfg, false);
      MaskedTensor3 x = read_tensor(input);
      restore_blocks(x, cfg);
      SolverOptions opts = context_solver_options(ctx);
      if (opts.completion_bins.size() != x.values.dim_k)
        opts.completion_bins.clear();
      const std::size_t r = rank ? rank : cfg.rank;
      SolveResult res;
      if (solve_method == "regularized")
        res = solve_los_regularized(x, std::nullopt, std::nullopt, opts);
      else if (solve_method == "btd_plain")
      {
        opts.lambda_toeplitz.assign(r, 0.0);
        opts.lambda_frob = 1e-6;
        res = solve_general(x, r, opts);
      }
      else if (solve_method == "general")
        res = solve_general(x, r, opts);
      else
        throw std::invalid_argument("solve: unknown method '" + solve_method + "'");
      write_factors((out / "factors.txt").string(), res.model);
      write_convergence_csv((out / "convergence.csv").string(), res.report.objective);
      write_tensor((out / "reconstruction.tensor").string(), reconstruct(res.model));
      std::cout << "objective " << std::setprecision(10) << res.report.objective.back() << " after "
                << res.report.iterations << " iterations" << (res.report.converged ? "" : " (cap reached)") << '\n';
    }
    else if (los->parsed())
    {
      const ScenarioContext ctx = make_context(cfg, false);
      MaskedTensor3 x = read_tensor(input);
      restore_blocks(x, cfg);
      SolverOptions opts = context_solver_options(ctx);
      if (opts.completion_bins.size() != x.values.dim_k)
        opts.completion_bins.clear();
      const LosSolution s = solve_los_hard(x, opts);
      write_toeplitz_factors((out / "factors.txt").string(), s.gain, s.attenuation);
      write_convergence_csv((out / "convergence.csv").string(), s.report.objective);
      write_tensor((out / "reconstruction.tensor").string(), reconstruct(s.as_model()));
      for (const auto &n : s.report.notes)
        std::cout << n << '\n';
      std::cout << "objective " << std::setprecision(10) << s.report.objective.back() << " after "
                << s.report.iterations << " iterations\n";
    }
    else if (bm->parsed())
    {
      const ScenarioContext ctx = make_context(cfg);
      const FactorModel m = load_any_factors(input);
      std::vector<std::size_t> blocks;
      for (const auto &g : ctx.grids)
        blocks.push_back(g.n_distance_bins);
      std::vector<Tensor3> parts;
      if (m.dim_k() == ctx.grids.front().n_distance_bins && ctx.grids.size() > 1)
        parts = {reconstruct(m), Tensor3(m.dim_i(), m.dim_j(), ctx.grids[1].n_distance_bins)};
      else
        parts = split_blocks(reconstruct(m), blocks);
      write_beam_map((out / "estimate.beammap").string(), ctx.mapper->map(parts));
      for (const auto &f : ctx.mapper->fallbacks())
        std::cout << f << '\n';
    }
    else if (ev->parsed())
    {
      const double v = nmse(read_beam_map(truth_path), read_beam_map(estimate_path), cfg.scene);
      std::cout << std::setprecision(10) << v << '\n';
    }
    else if (ex->parsed())
    {
      if (ex->count("--sampling-ratio"))
        cfg.sampling_ratios = {sampling_ratio};
      if (ex->count("--seed"))
        cfg.seeds = {seed};
      if (!method.empty())
      {
        cfg.methods.clear();
        for (const auto &m : split_list(method))
          cfg.methods.push_back(parse_method(m));
      }
      std::vector<ResultRow> rows;
      if (study == "sweep")
        rows = run_scenario(cfg);
      else if (study == "constraint")
        rows = compare_constraint_vs_regularization(cfg, noise_grid);
      else if (study == "reflect")
        rows = compare_reflect_joint(cfg);
      else
        throw std::invalid_argument("unknown study '" + study + "'");
      write_results_csv((out / "results.csv").string(), rows);
      write_timings_csv((out / "timings.csv").string(), rows);
      const auto summary = summarize(rows);
      write_summary_csv((out / "summary.csv").string(), summary);
      std::cout << std::left << std::setw(14) << "method" << std::setw(8) << "r_s" << std::setw(8) << "noise"
                << std::setw(14) << "mean NMSE" << "stddev\n";
      for (const auto &s : summary)
        std::cout << std::setw(14) << s.method << std::setw(8) << s.sampling_ratio << std::setw(8) << s.noise_db
                  << std::setw(14) << s.mean << s.stddev << '\n';
    }
  }
  catch (const std::exception &e)
  {
    std::cerr << "beammap: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
