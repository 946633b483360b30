// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: the four propagation scenarios, end-to-end
// pipelines (simulate -> polar tensor -> solve -> back-map -> NMSE), the
// interpolation baselines and the result tables.

#pragma once

#include "beammap/config.hpp"
#include "beammap/decomp.hpp"
#include "beammap/interp.hpp"
#include "beammap/los.hpp"
#include "beammap/polar.hpp"
#include "beammap/scene.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace beammap
{

enum class Scenario
{
  los,
  los_reflect,
  los_obstruct,
  los_reflect_obstruct,
};

enum class Method
{
  hard,
  regularized,
  general,
  btd_plain,
  knn,
  tps,
  zero, // all-zero calibration estimator
};

Scenario parse_scenario(const std::string &name);
std::string to_string(Scenario s);
Method parse_method(const std::string &name);
std::string to_string(Method m);

// los -> 1, los_reflect -> 1 (augmented), los_obstruct -> 2,
// los_reflect_obstruct -> 3 (augmented).
std::size_t scenario_rank(Scenario s);
bool scenario_has_wall(Scenario s);
bool scenario_has_building(Scenario s);

// Default scene of a scenario: wall only where a reflection is modelled,
// the building only where an obstruction is.
Scene scenario_scene(Scenario s);

struct ExperimentConfig
{
  Scenario scenario = Scenario::los;
  std::vector<double> sampling_ratios;
  std::vector<std::uint64_t> seeds;
  std::size_t rank = 1;
  std::vector<Method> methods;
  Scene scene;
  std::size_t n_distance_bins = 40;
  SolverOptions solver;
  BackMapOptions backmap;
  TpsOptions baseline_tps;
  // Range compensation of the Cartesian baselines (value * d^p about the BS);
  // 0 interpolates the raw measurements.
  double baseline_range_exponent = 0.0;
  std::size_t knn_k = 3;

  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

// Scenario defaults: r_s {0.04, 0.06, 0.08, 0.10} ({0.10, 0.15, 0.20} for the
// rank-3 scenario), seeds 1..10, the scenario rank and all methods that apply.
ExperimentConfig default_config(Scenario s);

// Applies `scene.*`, `grid.*`, `solver.*` and `experiment.*` keys.
// `experiment.scenario` resets the configuration to that scenario's defaults
// before the other keys are applied. Unknown keys are rejected.
ExperimentConfig config_from_key_values(const std::vector<KeyValue> &entries,
                                        std::optional<Scenario> scenario_override = std::nullopt);
ExperimentConfig load_config(const std::string &path, std::optional<Scenario> scenario_override = std::nullopt);

struct ResultRow
{
  std::string scenario;
  std::string method;
  double sampling_ratio = 0.0;
  double noise_db = 0.0;
  std::uint64_t seed = 0;
  double nmse = 0.0;
  double wall_time = 0.0; // seconds
  int iterations = 0;
  // Largest relative increase of the solver objective between iterations
  // (0 for the baselines); not part of the CSV.
  double objective_rise = 0.0;
};

// max_t (f[t+1] - f[t]) / |f[t]|, or 0 when the sequence never increases.
double max_relative_rise(const std::vector<double> &objective);

// Deterministic table: scenario,method,sampling_ratio,noise_db,seed,nmse,iterations.
void write_results_csv(const std::string &path, const std::vector<ResultRow> &rows);
// Run times, kept apart so result files are byte-identical across runs.
void write_timings_csv(const std::string &path, const std::vector<ResultRow> &rows);

struct SummaryRow
{
  std::string scenario;
  std::string method;
  double sampling_ratio = 0.0;
  double noise_db = 0.0;
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double median = 0.0;
};

// Groups by (scenario, method, sampling_ratio, noise_db) in sorted key order.
std::vector<SummaryRow> summarize(const std::vector<ResultRow> &rows);
void write_summary_csv(const std::string &path, const std::vector<SummaryRow> &rows);
const SummaryRow &find_summary(const std::vector<SummaryRow> &rows, const std::string &method, double sampling_ratio,
                               double noise_db = -1.0);

// ||truth - estimate||^2 / ||truth||^2 over the cells at least min_distance
// from the BS. Throws std::invalid_argument on shape mismatch or zero truth.
double nmse(const BeamMap &truth, const BeamMap &estimate, const Scene &scene, double min_distance = 1.0);

// Same ratio over the observed cells of a polar truth tensor.
double polar_nmse(const MaskedTensor3 &truth, const Tensor3 &estimate);

// Everything of a scenario that does not depend on the sampling draw.
struct ScenarioContext
{
  ExperimentConfig config;
  MirrorScene mirror;
  std::vector<PolarGrid> grids; // direct, then mirror when the wall exists
  std::vector<std::uint8_t> completion_bins;
  Eigen::MatrixXd gain_prior;
  BeamMap truth_total;
  BeamMap truth_reflect;
  std::shared_ptr<BackMapper> mapper;
};

// The spline back-mapper is the costly part; polar-only studies skip it.
ScenarioContext make_context(const ExperimentConfig &config, bool with_mapper = true);

// Solver options of the context: physics prior and completion bins filled in.
SolverOptions context_solver_options(const ScenarioContext &ctx);

// Polar tensors of one measurement draw; `augmented` concatenates the
// reflected block after the direct one when the wall exists.
struct PolarData
{
  MaskedTensor3 direct;
  std::optional<MaskedTensor3> reflected;
  MaskedTensor3 augmented;
  std::size_t dropped = 0;
};

PolarData transform(const MeasurementSet &ms, const ScenarioContext &ctx);

struct MethodOutput
{
  BeamMap map;
  std::optional<Tensor3> polar; // full reconstructed tensor (augmented layout)
  int iterations = 0;
  std::vector<double> objective; // solver objective per iteration
  std::vector<std::string> notes;
};

// Splits an augmented reconstruction back into one tensor per source.
std::vector<Tensor3> split_blocks(const Tensor3 &x_hat, const std::vector<std::size_t> &blocks);

// Runs one method on one measurement draw.
MethodOutput run_method(Method method, const ScenarioContext &ctx, const MeasurementSet &ms, const PolarData &data);

// Per-beam baselines on raw Cartesian measurements; a location's value is the
// sum of its path records for that beam.
BeamMap knn_baseline(const MeasurementSet &ms, const ScenarioContext &ctx);
BeamMap tps_baseline(const MeasurementSet &ms, const ScenarioContext &ctx);

// Caps concurrent experiment cells; BEAMMAP_THREADS overrides the hardware
// concurrency.
std::size_t worker_count();

// Runs body(0..n-1) on up to worker_count() threads; results must be written
// to per-index slots so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body);

// simulate -> transform -> solve -> back-map -> nmse for every (r_s, seed,
// method), plus one all-zero calibration row per (r_s, seed).
std::vector<ResultRow> run_scenario(const ExperimentConfig &config);

// Hard versus regularized LOS solver on the polar tensor over a sampling
// ratio by direct-noise grid; nmse is the polar-domain error against the
// noiseless bin-centre tensor.
std::vector<ResultRow> compare_constraint_vs_regularization(const ExperimentConfig &config,
                                                            const std::vector<double> &noise_db_grid);

// Reflected-beam map from the reflected measurements alone versus from the
// augmented direct + reflected tensor (hard solver), against the noiseless
// reflected map. Methods are reported as `reflect_only` and `reflect_joint`.
std::vector<ResultRow> compare_reflect_joint(const ExperimentConfig &config);

} // namespace beammap
