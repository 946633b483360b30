// SPDX-License-Identifier: Apache-2.0

#include "beammap/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

namespace beammap
{

Scenario parse_scenario(const std::string &name)
{
  if (name == "los")
    return Scenario::los;
  if (name == "los_reflect")
    return Scenario::los_reflect;
  if (name == "los_obstruct")
    return Scenario::los_obstruct;
  if (name == "los_reflect_obstruct")
    return Scenario::los_reflect_obstruct;
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

std::string to_string(Scenario s)
{
  switch (s)
  {
  case Scenario::los:
    return "los";
  case Scenario::los_reflect:
    return "los_reflect";
  case Scenario::los_obstruct:
    return "los_obstruct";
  case Scenario::los_reflect_obstruct:
    return "los_reflect_obstruct";
  }
  return "?";
}

Method parse_method(const std::string &name)
{
  static const std::map<std::string, Method> names{
      {"hard", Method::hard},           {"regularized", Method::regularized}, {"general", Method::general},
      {"btd_plain", Method::btd_plain}, {"knn", Method::knn},                 {"tps", Method::tps},
      {"zero", Method::zero}};
  const auto it = names.find(name);
  if (it == names.end())
    throw std::invalid_argument("unknown method '" + name + "'");
  return it->second;
}

std::string to_string(Method m)
{
  switch (m)
  {
  case Method::hard:
    return "hard";
  case Method::regularized:
    return "regularized";
  case Method::general:
    return "general";
  case Method::btd_plain:
    return "btd_plain";
  case Method::knn:
    return "knn";
  case Method::tps:
    return "tps";
  case Method::zero:
    return "zero";
  }
  return "?";
}

std::size_t scenario_rank(Scenario s)
{
  switch (s)
  {
  case Scenario::los:
  case Scenario::los_reflect:
    return 1;
  case Scenario::los_obstruct:
    return 2;
  case Scenario::los_reflect_obstruct:
    return 3;
  }
  return 1;
}

bool scenario_has_wall(Scenario s) { return s == Scenario::los_reflect || s == Scenario::los_reflect_obstruct; }
bool scenario_has_building(Scenario s) { return s == Scenario::los_obstruct || s == Scenario::los_reflect_obstruct; }

Scene scenario_scene(Scenario s)
{
  Scene sc = default_scene();
  sc.has_wall = scenario_has_wall(s);
  if (scenario_has_building(s))
    sc.obstructions = {default_building()};
  return sc;
}

void ExperimentConfig::validate() const
{
  scene.validate();
  if (scene.has_wall != scenario_has_wall(scenario))
    throw std::invalid_argument("scenario " + to_string(scenario) + " " +
                                (scenario_has_wall(scenario) ? "needs" : "excludes") + " the reflecting wall");
  if (rank != scenario_rank(scenario))
    throw std::invalid_argument("scenario " + to_string(scenario) + " is modelled with rank " +
                                std::to_string(scenario_rank(scenario)) + ", not " + std::to_string(rank));
  if (sampling_ratios.empty() || seeds.empty() || methods.empty())
    throw std::invalid_argument("experiment needs sampling ratios, seeds and methods");
  for (const double r : sampling_ratios)
    if (!(r > 0.0 && r <= 1.0))
      throw std::invalid_argument("sampling ratios must lie in (0, 1]");
  if (n_distance_bins < 2)
    throw std::invalid_argument("grid.n_distance_bins must be at least 2");
  if (knn_k < 1)
    throw std::invalid_argument("solver.knn_k must be positive");
  if (!(solver.qp_tolerance > 0.0 && solver.outer_rel_tolerance > 0.0 && solver.inner_rel_tolerance > 0.0 &&
        solver.epsilon_positive > 0.0))
    throw std::invalid_argument("solver tolerances must be positive");
  if (solver.max_outer_iters < 1 || solver.max_inner_iters < 1)
    throw std::invalid_argument("solver iteration caps must be positive");
}

ExperimentConfig default_config(Scenario s)
{
  ExperimentConfig c;
  c.scenario = s;
  c.scene = scenario_scene(s);
  c.rank = scenario_rank(s);
  c.sampling_ratios = s == Scenario::los_reflect_obstruct ? std::vector<double>{0.10, 0.15, 0.20}
                                                          : std::vector<double>{0.04, 0.06, 0.08, 0.10};
  for (std::uint64_t seed = 1; seed <= 10; ++seed)
    c.seeds.push_back(seed);
  if (c.rank == 1)
    c.methods = {Method::hard, Method::regularized, Method::general, Method::btd_plain, Method::knn, Method::tps};
  else
    c.methods = {Method::general, Method::btd_plain, Method::knn, Method::tps};
  return c;
}

namespace
{
Polygon parse_polygon(const std::string &text, const std::string &what)
{
  std::vector<Point2> v;
  for (const auto &pair : split_list(text, ';'))
  {
    const auto xy = parse_double_list(pair, what);
    if (xy.size() != 2)
      throw std::invalid_argument(what + ": vertices are `x,y` pairs separated by `;`");
    v.push_back({xy[0], xy[1]});
  }
  return Polygon(v);
}

void apply_key(ExperimentConfig &c, const KeyValue &kv, bool &obstructions_touched, std::optional<std::size_t> &n_beams,
               std::optional<double> &theta_min, std::optional<double> &theta_max)
{
  const std::string &k = kv.key;
  const std::string &v = kv.value;
  const std::string what = "config line " + std::to_string(kv.line) + " (" + k + ")";
  Scene &s = c.scene;
  SolverOptions &o = c.solver;
  auto positive_int = [&](const std::string &text) {
    const long long n = parse_integer(text, what);
    if (n < 1)
      throw std::invalid_argument(what + ": must be positive");
    return n;
  };

  if (k == "scene.region_size")
    s.region_size = parse_double(v, what);
  else if (k == "scene.wall_x")
    s.wall_x = parse_double(v, what);
  else if (k == "scene.has_wall")
    s.has_wall = parse_bool(v, what);
  else if (k == "scene.bs_position")
  {
    const auto xy = parse_double_list(v, what);
    if (xy.size() != 2)
      throw std::invalid_argument(what + ": expected `x, y`");
    s.bs_position = {xy[0], xy[1]};
  }
  else if (k == "scene.n_antennas")
    s.n_antennas = static_cast<int>(positive_int(v));
  else if (k == "scene.n_beams")
    n_beams = static_cast<std::size_t>(positive_int(v));
  else if (k == "scene.theta_min")
    theta_min = parse_double(v, what);
  else if (k == "scene.theta_max")
    theta_max = parse_double(v, what);
  else if (k == "scene.obstruction")
  {
    if (!obstructions_touched)
      s.obstructions.clear();
    obstructions_touched = true;
    if (trim(v) != "none")
      s.obstructions.push_back(parse_polygon(v, what));
  }
  else if (k == "scene.path_loss_exp_clear")
    s.path_loss_exp_clear = parse_double(v, what);
  else if (k == "scene.path_loss_exp_blocked")
    s.path_loss_exp_blocked = parse_double(v, what);
  else if (k == "scene.noise_std_direct_db")
    s.noise_std_direct_db = parse_double(v, what);
  else if (k == "scene.noise_std_reflect_db")
    s.noise_std_reflect_db = parse_double(v, what);
  else if (k == "scene.reflect_gain_factor")
    s.reflect_gain_factor = parse_double(v, what);
  else if (k == "grid.n_distance_bins")
    c.n_distance_bins = static_cast<std::size_t>(positive_int(v));
  else if (k == "solver.lambda_toeplitz")
    o.lambda_toeplitz = parse_double_list(v, what);
  else if (k == "solver.lambda_frob")
    o.lambda_frob = parse_double(v, what);
  else if (k == "solver.lambda_symmetry")
    o.lambda_symmetry = parse_double(v, what);
  else if (k == "solver.max_outer_iters")
    o.max_outer_iters = static_cast<int>(positive_int(v));
  else if (k == "solver.max_inner_iters")
    o.max_inner_iters = static_cast<int>(positive_int(v));
  else if (k == "solver.inner_rel_tolerance")
    o.inner_rel_tolerance = parse_double(v, what);
  else if (k == "solver.qp_tolerance")
    o.qp_tolerance = parse_double(v, what);
  else if (k == "solver.outer_rel_tolerance")
    o.outer_rel_tolerance = parse_double(v, what);
  else if (k == "solver.epsilon_positive")
    o.epsilon_positive = parse_double(v, what);
  else if (k == "solver.rng_seed")
    o.rng_seed = static_cast<std::uint64_t>(parse_integer(v, what));
  else if (k == "solver.toeplitz_scale")
    o.toeplitz_scale = parse_double(v, what);
  else if (k == "solver.frob_ratio")
    o.frob_ratio = parse_double(v, what);
  else if (k == "solver.complete_leading_bins")
    o.complete_leading_bins = parse_bool(v, what);
  else if (k == "solver.backmap_smoothing")
    c.backmap.tps.smoothing = parse_double(v, what);
  else if (k == "solver.backmap_relative_smoothing")
    c.backmap.tps.relative_smoothing = parse_double(v, what);
  else if (k == "solver.backmap_range_exponent")
    c.backmap.range_exponent = parse_double(v, what);
  else if (k == "solver.backmap_clamp_inner")
    c.backmap.clamp_inner = parse_bool(v, what);
  else if (k == "solver.baseline_range_exponent")
    c.baseline_range_exponent = parse_double(v, what);
  else if (k == "solver.baseline_smoothing")
    c.baseline_tps.smoothing = parse_double(v, what);
  else if (k == "solver.baseline_relative_smoothing")
    c.baseline_tps.relative_smoothing = parse_double(v, what);
  else if (k == "solver.knn_k")
    c.knn_k = static_cast<std::size_t>(positive_int(v));
  else if (k == "experiment.sampling_ratios")
    c.sampling_ratios = parse_double_list(v, what);
  else if (k == "experiment.seeds")
    c.seeds = parse_seed_list(v, what);
  else if (k == "experiment.rank")
    c.rank = static_cast<std::size_t>(positive_int(v));
  else if (k == "experiment.methods")
  {
    c.methods.clear();
    for (const auto &m : split_list(v))
      c.methods.push_back(parse_method(m));
  }
  else
    throw std::invalid_argument(what + ": unknown key");
}
} // namespace

ExperimentConfig config_from_key_values(const std::vector<KeyValue> &entries, std::optional<Scenario> scenario_override)
{
  Scenario sc = Scenario::los;
  for (const auto &kv : entries)
    if (kv.key == "experiment.scenario")
      sc = parse_scenario(kv.value);
  if (scenario_override)
    sc = *scenario_override;
  ExperimentConfig c = default_config(sc);
  bool obstructions_touched = false;
  std::optional<std::size_t> n_beams;
  std::optional<double> theta_min, theta_max;
  for (const auto &kv : entries)
    if (kv.key != "experiment.scenario")
      apply_key(c, kv, obstructions_touched, n_beams, theta_min, theta_max);
  if (n_beams || theta_min || theta_max)
    c.scene.beam_angles = make_sin_uniform_grid(n_beams.value_or(c.scene.n_beams()),
                                                theta_min.value_or(c.scene.beam_angles.front()),
                                                theta_max.value_or(c.scene.beam_angles.back()));
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string &path, std::optional<Scenario> scenario_override)
{
  return config_from_key_values(read_key_value_file(path), scenario_override);
}

void write_results_csv(const std::string &path, const std::vector<ResultRow> &rows)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "scenario,method,sampling_ratio,noise_db,seed,nmse,iterations\n";
  for (const auto &r : rows)
    out << r.scenario << ',' << r.method << ',' << r.sampling_ratio << ',' << r.noise_db << ',' << r.seed << ','
        << r.nmse << ',' << r.iterations << '\n';
}

void write_timings_csv(const std::string &path, const std::vector<ResultRow> &rows)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << "scenario,method,sampling_ratio,noise_db,seed,wall_time\n";
  for (const auto &r : rows)
    out << r.scenario << ',' << r.method << ',' << r.sampling_ratio << ',' << r.noise_db << ',' << r.seed << ','
        << r.wall_time << '\n';
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow> &rows)
{
  std::map<std::tuple<std::string, std::string, double, double>, std::vector<double>> groups;
  for (const auto &r : rows)
    groups[{r.scenario, r.method, r.sampling_ratio, r.noise_db}].push_back(r.nmse);
  std::vector<SummaryRow> out;
  for (auto &[key, v] : groups)
  {
    SummaryRow s;
    std::tie(s.scenario, s.method, s.sampling_ratio, s.noise_db) = key;
    s.count = v.size();
    double sum = 0.0;
    for (const double x : v)
      sum += x;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (const double x : v)
      ss += (x - s.mean) * (x - s.mean);
    s.stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    out.push_back(s);
  }
  return out;
}

void write_summary_csv(const std::string &path, const std::vector<SummaryRow> &rows)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "scenario,method,sampling_ratio,noise_db,count,mean,stddev,median\n";
  for (const auto &r : rows)
    out << r.scenario << ',' << r.method << ',' << r.sampling_ratio << ',' << r.noise_db << ',' << r.count << ','
        << r.mean << ',' << r.stddev << ',' << r.median << '\n';
}

const SummaryRow &find_summary(const std::vector<SummaryRow> &rows, const std::string &method, double sampling_ratio,
                               double noise_db)
{
  for (const auto &r : rows)
    if (r.method == method && std::abs(r.sampling_ratio - sampling_ratio) < 1e-12 &&
        (noise_db < 0.0 || std::abs(r.noise_db - noise_db) < 1e-12))
      return r;
  throw std::out_of_range("no summary for method " + method);
}

double nmse(const BeamMap &truth, const BeamMap &estimate, const Scene &scene, double min_distance)
{
  if (truth.cells != estimate.cells || truth.n_beams != estimate.n_beams ||
      truth.values.size() != estimate.values.size())
    throw std::invalid_argument("nmse: beam maps differ in shape");
  const auto mask = evaluation_mask(scene, truth, min_distance);
  double num = 0.0, den = 0.0;
  for (std::size_t n = 0; n < truth.values.size(); ++n)
    if (mask[n])
    {
      const double d = truth.values[n] - estimate.values[n];
      num += d * d;
      den += truth.values[n] * truth.values[n];
    }
  if (!(den > 0.0))
    throw std::invalid_argument("nmse: truth has zero norm on the evaluation mask");
  return num / den;
}

double polar_nmse(const MaskedTensor3 &truth, const Tensor3 &estimate)
{
  if (truth.values.dim_i != estimate.dim_i || truth.values.dim_j != estimate.dim_j ||
      truth.values.dim_k != estimate.dim_k)
    throw std::invalid_argument("polar_nmse: tensors differ in shape");
  double num = 0.0, den = 0.0;
  for (std::size_t n = 0; n < estimate.size(); ++n)
    if (truth.mask[n])
    {
      const double d = truth.values.data[n] - estimate.data[n];
      num += d * d;
      den += truth.values.data[n] * truth.values.data[n];
    }
  if (!(den > 0.0))
    throw std::invalid_argument("polar_nmse: truth has zero norm");
  return num / den;
}

namespace
{
double distance_to_region(Point2 p, double L)
{
  const Point2 c{std::clamp(p.x, 0.0, L), std::clamp(p.y, 0.0, L)};
  return distance(p, c);
}
} // namespace

ScenarioContext make_context(const ExperimentConfig &config, bool with_mapper)
{
  config.validate();
  ScenarioContext ctx;
  ctx.config = config;
  const Scene &scene = config.scene;
  ctx.mirror = make_mirror(scene);
  ctx.grids.push_back(make_polar_grid(scene, ctx.mirror, PathId::direct, config.n_distance_bins));
  if (scene.has_wall)
    ctx.grids.push_back(make_polar_grid(scene, ctx.mirror, PathId::reflected, config.n_distance_bins));
  for (const auto &g : ctx.grids)
  {
    const double reach = distance_to_region(g.source, scene.region_size) - 0.5 * g.distance_step;
    for (std::size_t k = 0; k < g.n_distance_bins; ++k)
      ctx.completion_bins.push_back(g.bin_distance(k) >= reach ? 1 : 0);
  }
  ctx.gain_prior = gain_matrix(scene.beam_angles, ctx.grids.front().angles, scene.n_antennas);
  ctx.truth_total = ground_truth_map(scene, ctx.mirror, MapComponent::total);
  if (scene.has_wall)
    ctx.truth_reflect = ground_truth_map(scene, ctx.mirror, MapComponent::reflect);
  if (with_mapper)
    ctx.mapper = std::make_shared<BackMapper>(scene, ctx.grids, config.backmap);
  return ctx;
}

SolverOptions context_solver_options(const ScenarioContext &ctx)
{
  SolverOptions o = ctx.config.solver;
  if (!o.gain_prior)
    o.gain_prior = ctx.gain_prior;
  if (o.completion_bins.empty())
    o.completion_bins = ctx.completion_bins;
  // leading bins sit next to the source, where propagation is unobstructed
  o.completion_min_slope = 2.0 * ctx.config.scene.path_loss_exp_clear;
  return o;
}

PolarData transform(const MeasurementSet &ms, const ScenarioContext &ctx)
{
  PolarData d;
  const std::size_t I = ctx.config.scene.n_beams();
  AggregateResult a0 = aggregate(ms, ctx.grids[0], PathId::direct, I);
  d.direct = std::move(a0.tensor);
  d.dropped = a0.dropped;
  if (ctx.grids.size() > 1)
  {
    AggregateResult a1 = aggregate(ms, ctx.grids[1], PathId::reflected, I);
    d.dropped += a1.dropped;
    d.reflected = std::move(a1.tensor);
    d.augmented = augment_reflection(d.direct, *d.reflected);
  }
  else
    d.augmented = d.direct;
  return d;
}

std::vector<Tensor3> split_blocks(const Tensor3 &x_hat, const std::vector<std::size_t> &blocks)
{
  std::vector<Tensor3> out;
  std::size_t k0 = 0;
  for (const auto b : blocks)
  {
    if (k0 + b > x_hat.dim_k)
      throw std::invalid_argument("split_blocks: blocks exceed the distance dimension");
    Tensor3 t(x_hat.dim_i, x_hat.dim_j, b);
    const std::size_t slice = x_hat.dim_i * x_hat.dim_j;
    std::copy(x_hat.data.begin() + static_cast<std::ptrdiff_t>(k0 * slice),
              x_hat.data.begin() + static_cast<std::ptrdiff_t>((k0 + b) * slice), t.data.begin());
    out.push_back(std::move(t));
    k0 += b;
  }
  if (k0 != x_hat.dim_k)
    throw std::invalid_argument("split_blocks: blocks do not cover the distance dimension");
  return out;
}

namespace
{
struct LocationValues
{
  std::vector<Point2> points;
  Eigen::MatrixXd values; // locations x beams
};

LocationValues location_values(const MeasurementSet &ms, std::size_t n_beams)
{
  LocationValues lv;
  std::map<std::pair<double, double>, std::size_t> index;
  std::vector<std::vector<double>> rows;
  for (const auto &r : ms.records)
  {
    if (r.beam >= n_beams)
      throw std::invalid_argument("measurement beam index out of range");
    const auto key = std::make_pair(r.location.x, r.location.y);
    auto it = index.find(key);
    if (it == index.end())
    {
      it = index.emplace(key, lv.points.size()).first;
      lv.points.push_back(r.location);
      rows.emplace_back(n_beams, 0.0);
    }
    rows[it->second][r.beam] += r.rss;
  }
  lv.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_beams));
  for (std::size_t m = 0; m < rows.size(); ++m)
    for (std::size_t i = 0; i < n_beams; ++i)
      lv.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)) = rows[m][i];
  return lv;
}

// d^p per point, d the distance to `origin`; points at the origin get 0.
Eigen::VectorXd range_weights(const std::vector<Point2> &points, Point2 origin, double p)
{
  Eigen::VectorXd w(static_cast<Eigen::Index>(points.size()));
  for (std::size_t m = 0; m < points.size(); ++m)
  {
    const double d = distance(points[m], origin);
    w(static_cast<Eigen::Index>(m)) = p == 0.0 ? 1.0 : (d > 0.0 ? std::pow(d, p) : 0.0);
  }
  return w;
}

BeamMap empty_map(const ScenarioContext &ctx)
{
  return BeamMap(ctx.truth_total.cells, ctx.truth_total.n_beams, ctx.truth_total.resolution);
}
} // namespace

BeamMap knn_baseline(const MeasurementSet &ms, const ScenarioContext &ctx)
{
  const LocationValues lv = location_values(ms, ctx.config.scene.n_beams());
  if (lv.points.empty())
    return empty_map(ctx);
  const auto queries = map_cell_centers(ctx.truth_total);
  const std::size_t k = std::min(ctx.config.knn_k, lv.points.size());
  const double p = ctx.config.baseline_range_exponent;
  const Eigen::MatrixXd values = range_weights(lv.points, ctx.config.scene.bs_position, p).asDiagonal() * lv.values;
  const Eigen::MatrixXd pred = range_weights(queries, ctx.config.scene.bs_position, -p).asDiagonal() *
                               knn_predict(lv.points, values, queries, k);
  return to_beam_map(pred, ctx.truth_total.cells, ctx.truth_total.resolution);
}

BeamMap tps_baseline(const MeasurementSet &ms, const ScenarioContext &ctx)
{
  const LocationValues lv = location_values(ms, ctx.config.scene.n_beams());
  if (lv.points.empty())
    return empty_map(ctx);
  const auto queries = map_cell_centers(ctx.truth_total);
  const double p = ctx.config.baseline_range_exponent;
  try
  {
    const TpsSystem sys(lv.points, ctx.config.baseline_tps);
    const Eigen::MatrixXd values =
        range_weights(lv.points, ctx.config.scene.bs_position, p).asDiagonal() * lv.values;
    const Eigen::MatrixXd pred = range_weights(queries, ctx.config.scene.bs_position, -p).asDiagonal() *
                                 (tps_design(sys.centers(), queries) * sys.solve(values)).cwiseMax(0.0);
    return to_beam_map(pred, ctx.truth_total.cells, ctx.truth_total.resolution);
  }
  catch (const std::invalid_argument &)
  {
    return knn_baseline(ms, ctx);
  }
}

double max_relative_rise(const std::vector<double> &objective)
{
  double rise = 0.0;
  for (std::size_t t = 1; t < objective.size(); ++t)
    rise = std::max(rise, (objective[t] - objective[t - 1]) /
                              std::max(std::abs(objective[t - 1]), std::numeric_limits<double>::min()));
  return rise;
}

MethodOutput run_method(Method method, const ScenarioContext &ctx, const MeasurementSet &ms, const PolarData &data)
{
  MethodOutput out;
  if (method == Method::knn)
  {
    out.map = knn_baseline(ms, ctx);
    return out;
  }
  if (method == Method::tps)
  {
    out.map = tps_baseline(ms, ctx);
    return out;
  }
  if (method == Method::zero)
  {
    out.map = empty_map(ctx);
    return out;
  }
  if (!ctx.mapper)
    throw std::logic_error("run_method: context was built without a back-mapper");

  SolverOptions opts = context_solver_options(ctx);
  FactorModel model;
  switch (method)
  {
  case Method::hard:
  {
    const LosSolution s = solve_los_hard(data.augmented, opts);
    model = s.as_model();
    out.iterations = s.report.iterations;
    out.objective = s.report.objective;
    out.notes = s.report.notes;
    break;
  }
  case Method::regularized:
  {
    SolveResult s = solve_los_regularized(data.augmented, std::nullopt, std::nullopt, opts);
    model = std::move(s.model);
    out.iterations = s.report.iterations;
    out.objective = s.report.objective;
    out.notes = s.report.notes;
    break;
  }
  case Method::general:
  case Method::btd_plain:
  {
    if (method == Method::btd_plain)
    {
      opts.lambda_toeplitz.assign(ctx.config.rank, 0.0);
      opts.lambda_frob = 1e-6;
      opts.lambda_symmetry = 0.0;
    }
    SolveResult s = solve_general(data.augmented, ctx.config.rank, opts);
    model = std::move(s.model);
    out.iterations = s.report.iterations;
    out.objective = s.report.objective;
    out.notes = s.report.notes;
    break;
  }
  default:
    break;
  }
  out.polar = reconstruct(model);
  out.map = ctx.mapper->map(split_blocks(*out.polar, data.augmented.blocks));
  return out;
}

std::size_t worker_count()
{
  if (const char *env = std::getenv("BEAMMAP_THREADS"))
  {
    const long long n = parse_integer(env, "BEAMMAP_THREADS");
    if (n < 1)
      throw std::invalid_argument("BEAMMAP_THREADS must be positive");
    return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body)
{
  const std::size_t workers = std::min(worker_count(), n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1)
  {
    for (std::size_t t = 0; t < n; ++t)
      body(t);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t t = next++; t < n; t = next++)
    {
      try
      {
        body(t);
      }
      catch (...)
      {
        errors[t] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back(run);
  for (auto &th : pool)
    th.join();
  for (const auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

namespace
{
double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string cell_context(const ExperimentConfig &c, double r_s, std::uint64_t seed)
{
  std::ostringstream s;
  s << "scenario " << to_string(c.scenario) << ", r_s " << r_s << ", seed " << seed;
  return s.str();
}
} // namespace

std::vector<ResultRow> run_scenario(const ExperimentConfig &config)
{
  const ScenarioContext ctx = make_context(config);
  const std::size_t n_seeds = config.seeds.size();
  const std::size_t n_cells = config.sampling_ratios.size() * n_seeds;
  std::vector<std::vector<ResultRow>> cells(n_cells);
  parallel_for(n_cells, [&](std::size_t c) {
    const double r_s = config.sampling_ratios[c / n_seeds];
    const std::uint64_t seed = config.seeds[c % n_seeds];
    const std::string where = cell_context(config, r_s, seed);
    try
    {
      const MeasurementSet ms = sample_measurements(config.scene, ctx.mirror, r_s, seed);
      const PolarData data = transform(ms, ctx);
      std::vector<Method> methods = config.methods;
      if (std::find(methods.begin(), methods.end(), Method::zero) == methods.end())
        methods.push_back(Method::zero);
      for (const Method m : methods)
      {
        const auto t0 = std::chrono::steady_clock::now();
        MethodOutput mo;
        try
        {
          mo = run_method(m, ctx, ms, data);
        }
        catch (const std::exception &e)
        {
          throw std::runtime_error(where + ", method " + to_string(m) + ": " + e.what());
        }
        ResultRow row;
        row.scenario = to_string(config.scenario);
        row.method = to_string(m);
        row.sampling_ratio = r_s;
        row.noise_db = config.scene.noise_std_direct_db;
        row.seed = seed;
        row.nmse = nmse(ctx.truth_total, mo.map, config.scene);
        row.iterations = mo.iterations;
        row.objective_rise = max_relative_rise(mo.objective);
        row.wall_time = seconds_since(t0);
        cells[c].push_back(std::move(row));
      }
    }
    catch (const std::runtime_error &)
    {
      throw;
    }
    catch (const std::exception &e)
    {
      throw std::runtime_error(where + ": " + e.what());
    }
  });
  std::vector<ResultRow> rows;
  for (auto &c : cells)
    for (auto &r : c)
      rows.push_back(std::move(r));
  return rows;
}

std::vector<ResultRow> compare_constraint_vs_regularization(const ExperimentConfig &config,
                                                            const std::vector<double> &noise_db_grid)
{
  if (config.scenario != Scenario::los)
    throw std::invalid_argument("constraint versus regularization needs the los scenario");
  if (noise_db_grid.empty())
    throw std::invalid_argument("empty noise grid");
  const std::size_t n_seeds = config.seeds.size();
  const std::size_t n_rs = config.sampling_ratios.size();
  const std::size_t n_cells = noise_db_grid.size() * n_rs * n_seeds;
  std::vector<std::vector<ResultRow>> cells(n_cells);

  std::vector<ScenarioContext> contexts;
  std::vector<MaskedTensor3> truths;
  for (const double sigma : noise_db_grid)
  {
    ExperimentConfig c = config;
    c.scene.noise_std_direct_db = sigma;
    contexts.push_back(make_context(c, false));
    truths.push_back(bin_center_tensor(c.scene, contexts.back().mirror, contexts.back().grids[0], PathId::direct));
  }

  parallel_for(n_cells, [&](std::size_t c) {
    const std::size_t n_idx = c / (n_rs * n_seeds);
    const double r_s = config.sampling_ratios[(c / n_seeds) % n_rs];
    const std::uint64_t seed = config.seeds[c % n_seeds];
    const ScenarioContext &ctx = contexts[n_idx];
    const MeasurementSet ms = sample_measurements(ctx.config.scene, ctx.mirror, r_s, seed);
    const PolarData data = transform(ms, ctx);
    const SolverOptions opts = context_solver_options(ctx);
    for (const Method m : {Method::hard, Method::regularized})
    {
      const auto t0 = std::chrono::steady_clock::now();
      Tensor3 x_hat;
      int iters = 0;
      double rise = 0.0;
      if (m == Method::hard)
      {
        const LosSolution s = solve_los_hard(data.direct, opts);
        x_hat = reconstruct(s.as_model());
        iters = s.report.iterations;
        rise = max_relative_rise(s.report.objective);
      }
      else
      {
        const SolveResult s = solve_los_regularized(data.direct, std::nullopt, std::nullopt, opts);
        x_hat = reconstruct(s.model);
        iters = s.report.iterations;
        rise = max_relative_rise(s.report.objective);
      }
      ResultRow row;
      row.scenario = to_string(config.scenario);
      row.method = to_string(m);
      row.sampling_ratio = r_s;
      row.noise_db = noise_db_grid[n_idx];
      row.seed = seed;
      row.nmse = polar_nmse(truths[n_idx], x_hat);
      row.iterations = iters;
      row.objective_rise = rise;
      row.wall_time = seconds_since(t0);
      cells[c].push_back(std::move(row));
    }
  });
  std::vector<ResultRow> rows;
  for (auto &c : cells)
    for (auto &r : c)
      rows.push_back(std::move(r));
  return rows;
}

std::vector<ResultRow> compare_reflect_joint(const ExperimentConfig &config)
{
  if (!config.scene.has_wall)
    throw std::invalid_argument("reflect-only versus joint comparison needs the reflecting wall");
  const ScenarioContext ctx = make_context(config);
  const std::size_t n_seeds = config.seeds.size();
  const std::size_t n_cells = config.sampling_ratios.size() * n_seeds;
  std::vector<std::vector<ResultRow>> cells(n_cells);
  const std::size_t k0 = ctx.grids[0].n_distance_bins;

  parallel_for(n_cells, [&](std::size_t c) {
    const double r_s = config.sampling_ratios[c / n_seeds];
    const std::uint64_t seed = config.seeds[c % n_seeds];
    const MeasurementSet ms = sample_measurements(config.scene, ctx.mirror, r_s, seed);
    const PolarData data = transform(ms, ctx);
    SolverOptions opts = context_solver_options(ctx);

    auto emit = [&](const std::string &name, const Tensor3 &reflect_hat, const ConvergenceReport &rep, double secs) {
      ResultRow row;
      row.scenario = to_string(config.scenario);
      row.method = name;
      row.sampling_ratio = r_s;
      row.noise_db = config.scene.noise_std_direct_db;
      row.seed = seed;
      row.nmse = nmse(ctx.truth_reflect, ctx.mapper->map_source(1, reflect_hat), config.scene);
      row.iterations = rep.iterations;
      row.objective_rise = max_relative_rise(rep.objective);
      row.wall_time = secs;
      cells[c].push_back(std::move(row));
    };

    auto t0 = std::chrono::steady_clock::now();
    SolverOptions only = opts;
    only.completion_bins.assign(ctx.completion_bins.begin() + static_cast<std::ptrdiff_t>(k0),
                                ctx.completion_bins.end());
    const LosSolution s1 = solve_los_hard(*data.reflected, only);
    emit("reflect_only", reconstruct(s1.as_model()), s1.report, seconds_since(t0));

    t0 = std::chrono::steady_clock::now();
    const LosSolution s2 = solve_los_hard(data.augmented, opts);
    const auto parts = split_blocks(reconstruct(s2.as_model()), data.augmented.blocks);
    emit("reflect_joint", parts[1], s2.report, seconds_since(t0));
  });
  std::vector<ResultRow> rows;
  for (auto &c : cells)
    for (auto &r : c)
      rows.push_back(std::move(r));
  return rows;
}

} // namespace beammap
