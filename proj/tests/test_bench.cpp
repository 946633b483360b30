// SPDX-License-Identifier: Apache-2.0

#include "beammap/bench.hpp"

#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace beammap;

namespace
{
std::string slurp(const std::string &path)
{
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
} // namespace

TEST_CASE("key-value parsing")
{
  const auto kv = parse_key_values("# c\n a = 1 \n\nb=x, y # tail\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0].key == "a");
  CHECK(kv[0].value == "1");
  CHECK(kv[1].value == "x, y");
  CHECK(kv[1].line == 4);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), std::invalid_argument);
  CHECK(parse_seed_list("1-3, 7", "s") == std::vector<std::uint64_t>{1, 2, 3, 7});
  CHECK_THROWS_AS(parse_seed_list("3-1", "s"), std::invalid_argument);
  CHECK_THROWS_AS(parse_double("1.5x", "d"), std::invalid_argument);
  CHECK(parse_bool("on", "b"));
}

TEST_CASE("experiment configuration")
{
  const ExperimentConfig c = config_from_key_values(parse_key_values("experiment.scenario = los_obstruct\n"
                                                                     "experiment.sampling_ratios = 0.05, 0.2\n"
                                                                     "experiment.seeds = 3-4\n"
                                                                     "experiment.methods = general, knn\n"
                                                                     "scene.noise_std_direct_db = 2\n"
                                                                     "solver.backmap_range_exponent = 2\n"));
  CHECK(c.scenario == Scenario::los_obstruct);
  CHECK(c.rank == 2);
  CHECK(c.scene.obstructions.size() == 1);
  CHECK_FALSE(c.scene.has_wall);
  CHECK(c.sampling_ratios == std::vector<double>{0.05, 0.2});
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(c.methods == std::vector<Method>{Method::general, Method::knn});
  CHECK(c.scene.noise_std_direct_db == 2.0);
  CHECK(c.backmap.range_exponent == 2.0);

  const ExperimentConfig d = config_from_key_values({}, Scenario::los_reflect_obstruct);
  CHECK(d.rank == 3);
  CHECK(d.sampling_ratios == std::vector<double>{0.1, 0.15, 0.2});
  CHECK(d.seeds.size() == 10);

  CHECK_THROWS_AS(config_from_key_values(parse_key_values("scene.unknown = 1\n")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_key_values(parse_key_values("experiment.sampling_ratios = 1.5\n")),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_scenario("nope"), std::invalid_argument);
  for (const auto s : {Scenario::los, Scenario::los_reflect, Scenario::los_obstruct, Scenario::los_reflect_obstruct})
    CHECK(parse_scenario(to_string(s)) == s);
  for (const auto m : {Method::hard, Method::regularized, Method::general, Method::btd_plain, Method::knn, Method::tps})
    CHECK(parse_method(to_string(m)) == m);
}

TEST_CASE("nmse examples")
{
  const Scene s = default_scene();
  BeamMap truth(48, 2), est(48, 2);
  for (std::size_t n = 0; n < truth.values.size(); ++n)
    truth.values[n] = 1.0 + static_cast<double>(n % 7);
  CHECK(nmse(truth, est, s) == 1.0);
  CHECK(nmse(truth, truth, s) == 0.0);
  est = truth;
  for (auto &v : est.values)
    v *= 2.0;
  CHECK(nmse(truth, est, s) == Catch::Approx(1.0));
  // The BS cell is outside the evaluation mask.
  BeamMap spike = truth;
  spike.at(0, 0, 0) += 1e6;
  CHECK(nmse(truth, spike, s) == 0.0);
  CHECK_THROWS_AS(nmse(truth, BeamMap(47, 2), s), std::invalid_argument);
  CHECK_THROWS_AS(nmse(BeamMap(48, 2), truth, s), std::invalid_argument);
}

TEST_CASE("split_blocks and polar_nmse")
{
  Tensor3 t(2, 2, 5);
  for (std::size_t n = 0; n < t.size(); ++n)
    t.data[n] = static_cast<double>(n);
  const auto parts = split_blocks(t, {3, 2});
  REQUIRE(parts.size() == 2);
  CHECK(parts[1].dim_k == 2);
  CHECK(parts[1](1, 1, 0) == t(1, 1, 3));
  CHECK_THROWS_AS(split_blocks(t, {3, 3}), std::invalid_argument);

  MaskedTensor3 truth(1, 1, 2);
  truth.values.data = {2.0, 100.0};
  truth.mask = {1, 0};
  Tensor3 est(1, 1, 2);
  est.data = {1.0, 0.0};
  CHECK(polar_nmse(truth, est) == Catch::Approx(0.25));
}

TEST_CASE("max_relative_rise")
{
  CHECK(max_relative_rise({}) == 0.0);
  CHECK(max_relative_rise({3.0, 2.0, 2.0, 1.0}) == 0.0);
  CHECK(max_relative_rise({2.0, 1.0, 1.5}) == Catch::Approx(0.5));
}

TEST_CASE("scenario runs are deterministic and include the zero calibration row")
{
  ExperimentConfig c = default_config(Scenario::los);
  c.sampling_ratios = {0.04};
  c.seeds = {2};
  c.methods = {Method::hard, Method::knn};
  const auto a = run_scenario(c);
  const auto b = run_scenario(c);
  REQUIRE(a.size() == 3);
  const auto dir = std::filesystem::temp_directory_path();
  const auto pa = (dir / "beammap_results_a.csv").string();
  const auto pb = (dir / "beammap_results_b.csv").string();
  write_results_csv(pa, a);
  write_results_csv(pb, b);
  CHECK(slurp(pa) == slurp(pb));
  std::remove(pa.c_str());
  std::remove(pb.c_str());
  for (const auto &r : a)
  {
    CHECK(r.nmse >= 0.0);
    if (r.method == "zero")
      CHECK(r.nmse == 1.0);
    if (r.method == "hard")
      CHECK(r.objective_rise <= 1e-12);
  }
  const auto summary = summarize(a);
  CHECK(find_summary(summary, "hard", 0.04).count == 1);
}

TEST_CASE("zero estimator is exactly 1 on every scenario")
{
  for (const auto s : {Scenario::los, Scenario::los_reflect, Scenario::los_obstruct, Scenario::los_reflect_obstruct})
  {
    const ExperimentConfig c = default_config(s);
    const MirrorScene m = make_mirror(c.scene);
    const BeamMap truth = ground_truth_map(c.scene, m, MapComponent::total);
    CHECK(nmse(truth, BeamMap(truth.cells, truth.n_beams), c.scene) == 1.0);
  }
}

TEST_CASE("summaries: mean, deviation and median")
{
  std::vector<ResultRow> rows;
  for (const double v : {1.0, 2.0, 6.0})
    rows.push_back({"los", "hard", 0.1, 3.0, 1, v, 0.0, 1, 0.0});
  const auto s = summarize(rows);
  REQUIRE(s.size() == 1);
  CHECK(s[0].mean == Catch::Approx(3.0));
  CHECK(s[0].median == Catch::Approx(2.0));
  CHECK(s[0].count == 3);
}

TEST_CASE("noiseless full sampling: hard solver recovers the polar map")
{
  // Every cell sampled, no noise: the constraint method should reproduce the
  // noiseless bin-centre tensor up to binning.
  ExperimentConfig c = default_config(Scenario::los);
  c.sampling_ratios = {1.0};
  c.seeds = {1};
  const auto rows = compare_constraint_vs_regularization(c, {0.0});
  for (const auto &r : rows)
    if (r.method == "hard")
      CHECK(r.nmse < 1e-3);
}
