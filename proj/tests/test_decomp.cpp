// SPDX-License-Identifier: Apache-2.0

#include "beammap/decomp.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <random>

using namespace beammap;

namespace
{
Eigen::MatrixXd random_positive(std::mt19937_64 &rng, Eigen::Index r, Eigen::Index c)
{
  std::uniform_real_distribution<double> u(0.2, 1.5);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i)
      m(i, j) = u(rng);
  return m;
}

// Rank-R tensor sum_r G_r o rho_r with a Bernoulli mask, unfolded.
Unfolded random_unfolded(std::mt19937_64 &rng, const FactorModel &truth, double keep, double noise = 0.0)
{
  std::bernoulli_distribution b(keep);
  std::normal_distribution<double> z(0.0, noise > 0.0 ? noise : 1.0);
  Unfolded x;
  x.data = truth.stacked_gains() * truth.attenuation.transpose();
  x.mask = Eigen::MatrixXd::Zero(x.data.rows(), x.data.cols());
  for (Eigen::Index k = 0; k < x.data.cols(); ++k)
    for (Eigen::Index p = 0; p < x.data.rows(); ++p)
    {
      x.mask(p, k) = b(rng) ? 1.0 : 0.0;
      if (noise > 0.0)
        x.data(p, k) += noise * z(rng);
    }
  return x;
}

Eigen::MatrixXd decaying_attenuation(std::size_t k, std::size_t r)
{
  Eigen::MatrixXd rho(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r));
  for (std::size_t c = 0; c < r; ++c)
    for (std::size_t n = 0; n < k; ++n)
      rho(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)) =
          std::pow(0.7 + 0.1 * static_cast<double>(c), static_cast<double>(n));
  return rho / rho.sum();
}

// Dense (I*J) x (I*J) matrix D with ||D vec(G)||^2 = toeplitz_penalty(G).
Eigen::MatrixXd toeplitz_difference(Eigen::Index I, Eigen::Index J)
{
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero((I - 1) * (J - 1), I * J);
  Eigen::Index row = 0;
  for (Eigen::Index j = 0; j + 1 < J; ++j)
    for (Eigen::Index i = 0; i + 1 < I; ++i, ++row)
    {
      d(row, i + I * j) = 1.0;
      d(row, (i + 1) + I * (j + 1)) = -1.0;
    }
  return d;
}
} // namespace

TEST_CASE("toeplitz_penalty examples and loop oracle")
{
  CHECK(toeplitz_penalty(Eigen::Matrix2d{{1.0, 0.0}, {0.0, 3.0}}) == 4.0);
  CHECK(toeplitz_penalty(Eigen::Matrix3d::Identity()) == 0.0);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t)
  {
    const Eigen::MatrixXd g = random_positive(rng, 3 + t % 4, 2 + t % 5);
    const Eigen::Map<const Eigen::VectorXd> v(g.data(), g.size());
    CHECK(toeplitz_penalty(g) == Catch::Approx((toeplitz_difference(g.rows(), g.cols()) * v).squaredNorm()));
  }
}

TEST_CASE("symmetry_penalty")
{
  CHECK(symmetry_penalty(Eigen::Matrix2d{{1.0, 2.0}, {4.0, 1.0}}) == 8.0);
  CHECK_THROWS_AS(symmetry_penalty(Eigen::MatrixXd::Ones(2, 3)), std::invalid_argument);
}

TEST_CASE("objective equals the masked data term plus penalties")
{
  std::mt19937_64 rng(2);
  FactorModel m{{random_positive(rng, 4, 4), random_positive(rng, 4, 4)}, decaying_attenuation(5, 2)};
  const Unfolded x = random_unfolded(rng, m, 0.6, 0.1);
  m.gains[0](1, 2) += 0.3;
  const Penalties pen{{0.5, 0.25}, 0.1, 0.2};
  double data = 0.0;
  for (Eigen::Index k = 0; k < 5; ++k)
    for (Eigen::Index j = 0; j < 4; ++j)
      for (Eigen::Index i = 0; i < 4; ++i)
      {
        const double model = m.gains[0](i, j) * m.attenuation(k, 0) + m.gains[1](i, j) * m.attenuation(k, 1);
        const double r = x.data(i + 4 * j, k) - model;
        data += x.mask(i + 4 * j, k) * r * r;
      }
  double pens = 0.0;
  for (int r = 0; r < 2; ++r)
    pens += pen.toeplitz[static_cast<std::size_t>(r)] * toeplitz_penalty(m.gains[static_cast<std::size_t>(r)]) +
            pen.frob * m.gains[static_cast<std::size_t>(r)].squaredNorm() +
            pen.symmetry * symmetry_penalty(m.gains[static_cast<std::size_t>(r)]);
  CHECK(data_misfit(x, m) == Catch::Approx(data));
  CHECK(objective(x, m, pen) == Catch::Approx(data + pens));
}

TEST_CASE("gains_gradient matches central finite differences")
{
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 1000000);
  const Penalties pen{{0.7, 0.3}, 0.05, 0.2};
  for (int t = 0; t < 20; ++t)
  {
    FactorModel m{{random_positive(rng, 5, 5), random_positive(rng, 5, 5)}, decaying_attenuation(4, 2)};
    const Unfolded x = random_unfolded(rng, m, 0.5, 0.2);
    m.set_stacked_gains(random_positive(rng, 25, 2));
    const Eigen::MatrixXd grad = gains_gradient(x, m, pen);
    const Eigen::Index p = pick(rng) % 25;
    const Eigen::Index r = pick(rng) % 2;
    const double h = 1e-5;
    FactorModel plus = m, minus = m;
    Eigen::MatrixXd s = m.stacked_gains();
    s(p, r) += h;
    plus.set_stacked_gains(s);
    s(p, r) -= 2.0 * h;
    minus.set_stacked_gains(s);
    const double fd = (objective(x, plus, pen) - objective(x, minus, pen)) / (2.0 * h);
    CHECK(std::abs(fd - grad(p, r)) <= 1e-5 * std::max(1.0, std::abs(grad(p, r))));
  }
}

TEST_CASE("resolve_penalties: curvature-matched defaults and overrides")
{
  Unfolded x;
  x.data = Eigen::MatrixXd::Zero(4, 2);
  x.mask = Eigen::MatrixXd::Ones(4, 2);
  Eigen::MatrixXd rho(2, 1);
  rho << 0.6, 0.4;
  SolverOptions o;
  const Penalties p = resolve_penalties(x, rho, o);
  CHECK(p.toeplitz[0] == Catch::Approx(0.36 + 0.16));
  CHECK(p.frob == Catch::Approx(1e-3 * 0.52));
  o.lambda_toeplitz = {2.0};
  o.lambda_frob = 0.5;
  const Penalties q = resolve_penalties(x, rho, o);
  CHECK(q.toeplitz[0] == 2.0);
  CHECK(q.frob == 0.5);
  o.lambda_toeplitz = {-1.0};
  CHECK_THROWS_AS(resolve_penalties(x, rho, o), std::invalid_argument);
}

TEST_CASE("update_gains reaches the penalized least-squares solution")
{
  std::mt19937_64 rng(4);
  const Eigen::Index I = 4, J = 4, K = 5;
  FactorModel truth{{random_positive(rng, I, J)}, decaying_attenuation(K, 1)};
  const Unfolded x = random_unfolded(rng, truth, 0.7, 0.01);
  const Penalties pen{{0.3}, 0.01, 0.0};

  // Dense normal equations of the quadratic in vec(G).
  const Eigen::VectorXd rho = truth.attenuation.col(0);
  const Eigen::VectorXd w = x.mask * rho.cwiseProduct(rho);
  const Eigen::MatrixXd D = toeplitz_difference(I, J);
  const Eigen::MatrixXd H = Eigen::MatrixXd(w.asDiagonal()) + pen.toeplitz[0] * D.transpose() * D +
                            pen.frob * Eigen::MatrixXd::Identity(I * J, I * J);
  const Eigen::VectorXd b = x.mask.cwiseProduct(x.data) * rho;
  const Eigen::VectorXd g_ref = H.ldlt().solve(b);
  REQUIRE(g_ref.minCoeff() > 0.0);

  SolverOptions o;
  const GainUpdate up = update_gains(x, truth.attenuation, {Eigen::MatrixXd::Ones(I, J)}, pen, o);
  const Eigen::Map<const Eigen::VectorXd> g(up.gains[0].data(), I * J);
  CHECK((g - g_ref).cwiseAbs().maxCoeff() < 1e-8);
  for (std::size_t t = 1; t < up.objective.size(); ++t)
    CHECK(up.objective[t] <= up.objective[t - 1]);

  // Fixed point: starting at the minimizer changes nothing.
  Eigen::MatrixXd g0 = Eigen::Map<const Eigen::MatrixXd>(g_ref.data(), I, J);
  const GainUpdate again = update_gains(x, truth.attenuation, {g0}, pen, o);
  CHECK((again.gains[0] - g0).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("update_gains keeps the positivity bound")
{
  std::mt19937_64 rng(5);
  FactorModel truth{{random_positive(rng, 3, 3)}, decaying_attenuation(4, 1)};
  Unfolded x = random_unfolded(rng, truth, 1.0);
  x.data.row(4) *= -1.0; // pushes one entry below zero
  SolverOptions o;
  const GainUpdate up = update_gains(x, truth.attenuation, {Eigen::MatrixXd::Ones(3, 3)}, Penalties{{0.0}, 0.0, 0.0}, o);
  CHECK(up.gains[0].minCoeff() >= o.epsilon_positive);
  CHECK(up.gains[0](1, 1) == Catch::Approx(o.epsilon_positive));
}

TEST_CASE("Toeplitz deviation shrinks as the weight grows")
{
  std::mt19937_64 rng(6);
  FactorModel truth{{random_positive(rng, 5, 5)}, decaying_attenuation(4, 1)};
  const Unfolded x = random_unfolded(rng, truth, 0.8, 0.05);
  SolverOptions o;
  double prev = std::numeric_limits<double>::infinity();
  for (const double lambda : {0.0, 0.01, 0.1, 1.0, 10.0, 100.0})
  {
    const GainUpdate up =
        update_gains(x, truth.attenuation, {Eigen::MatrixXd::Ones(5, 5)}, Penalties{{lambda}, 1e-6, 0.0}, o);
    const double dev = toeplitz_penalty(up.gains[0]);
    CHECK(dev <= prev * (1.0 + 1e-9));
    prev = dev;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("update_attenuation matches a grid oracle")
{
  std::mt19937_64 rng(7);
  for (int t = 0; t < 6; ++t)
  {
    const std::vector<std::size_t> blocks = t % 2 ? std::vector<std::size_t>{2} : std::vector<std::size_t>{1, 1};
    FactorModel truth{{random_positive(rng, 3, 3), random_positive(rng, 3, 3)}, decaying_attenuation(2, 2)};
    const Unfolded x = random_unfolded(rng, truth, 0.7, 0.05);
    SolverOptions o;
    o.qp_tolerance = 1e-10;
    const Eigen::MatrixXd rho = update_attenuation(x, truth.gains, blocks, o);
    auto f = [&](const Eigen::MatrixXd &r) { return data_misfit(x, FactorModel{truth.gains, r}); };
    const auto grid = oracle::simplex_grid_min(
        4, 200,
        [&](const Eigen::VectorXd &v) {
          return attenuation_violation(Eigen::Map<const Eigen::MatrixXd>(v.data(), 2, 2), blocks) <= 1e-12;
        },
        [&](const Eigen::VectorXd &v) { return f(Eigen::Map<const Eigen::MatrixXd>(v.data(), 2, 2)); });
    CHECK(f(rho) <= grid.value + 1e-9);
    CHECK(attenuation_violation(rho, blocks) < 1e-8);
  }
}

TEST_CASE("attenuation_violation and initial_attenuation")
{
  Eigen::MatrixXd ok(3, 1);
  ok << 0.5, 0.3, 0.2;
  CHECK(attenuation_violation(ok, {}) < 1e-15);
  Eigen::MatrixXd bad(3, 1);
  bad << 0.2, 0.5, 0.3;
  CHECK(attenuation_violation(bad, {}) == Catch::Approx(0.3));
  CHECK(attenuation_violation(bad, {1, 2}) < 1e-15);
  CHECK(attenuation_violation(bad, {2, 1}) == Catch::Approx(0.3));
  const Eigen::MatrixXd init = initial_attenuation(6, 2, {4, 2});
  CHECK(attenuation_violation(init, {4, 2}) < 1e-15);
  CHECK(init(4, 0) == Catch::Approx(init(0, 0)));
  CHECK_THROWS_AS(initial_attenuation(6, 1, {4, 3}), std::invalid_argument);
}

TEST_CASE("reconstruct examples")
{
  FactorModel m;
  m.gains = {Eigen::Matrix2d{{1.0, 2.0}, {3.0, 4.0}}, Eigen::Matrix2d::Ones()};
  m.attenuation = Eigen::Matrix<double, 2, 2>{{1.0, 0.0}, {0.5, 2.0}};
  const Tensor3 t = reconstruct(m);
  CHECK(t(1, 0, 0) == 3.0);
  CHECK(t(0, 1, 1) == Catch::Approx(0.5 * 2.0 + 2.0));
  CHECK(t(1, 1, 1) == Catch::Approx(0.5 * 4.0 + 2.0));
}

TEST_CASE("solve_general: monotone objective and rank-2 fit")
{
  std::mt19937_64 rng(8);
  FactorModel truth{{random_positive(rng, 6, 6), random_positive(rng, 6, 6)}, decaying_attenuation(8, 2)};
  const Unfolded u = random_unfolded(rng, truth, 1.0);
  const MaskedTensor3 x = mode3_fold(u, 6, 6);
  SolverOptions o;
  o.lambda_toeplitz = {0.0, 0.0};
  o.lambda_frob = 1e-9;
  o.max_outer_iters = 300;
  o.complete_leading_bins = false;
  const SolveResult s = solve_general(x, 2, o);
  for (std::size_t t = 1; t < s.report.objective.size(); ++t)
    CHECK(s.report.objective[t] <= s.report.objective[t - 1] * (1.0 + 1e-12));
  CHECK(attenuation_violation(s.model.attenuation, {}) < 1e-8);
  const Tensor3 fit = reconstruct(s.model);
  const Tensor3 ref = reconstruct(truth);
  double num = 0.0, den = 0.0;
  for (std::size_t n = 0; n < fit.size(); ++n)
  {
    num += (fit.data[n] - ref.data[n]) * (fit.data[n] - ref.data[n]);
    den += ref.data[n] * ref.data[n];
  }
  CHECK(std::sqrt(num / den) < 1e-2);
}

TEST_CASE("complete_leading_bins fills only unobserved leading bins")
{
  std::mt19937_64 rng(9);
  FactorModel truth{{random_positive(rng, 4, 4)}, decaying_attenuation(6, 1)};
  Unfolded u = random_unfolded(rng, truth, 1.0);
  u.mask.col(0).setZero();
  u.mask.col(1).setZero();
  FactorModel m = truth;
  m.attenuation(0, 0) = m.attenuation(1, 0) = m.attenuation(2, 0);
  m.attenuation /= m.attenuation.sum();
  m.gains[0] *= truth.attenuation(2, 0) / m.attenuation(2, 0);
  const Tensor3 before = reconstruct(m);
  const std::size_t filled = complete_leading_bins(m, u, {});
  CHECK(filled == 2);
  const Tensor3 after = reconstruct(m);
  for (std::size_t k = 2; k < 6; ++k)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t i = 0; i < 4; ++i)
        CHECK(after(i, j, k) == Catch::Approx(before(i, j, k)).epsilon(1e-12));
  CHECK(attenuation_violation(m.attenuation, {}) < 1e-12);
  CHECK(m.attenuation(0, 0) > m.attenuation(2, 0));
}

TEST_CASE("factor file round trip")
{
  std::mt19937_64 rng(10);
  FactorModel m{{random_positive(rng, 3, 3), random_positive(rng, 3, 3)}, decaying_attenuation(4, 2)};
  const auto path = (std::filesystem::temp_directory_path() / "beammap_factors_test.txt").string();
  write_factors(path, m);
  const FactorModel r = read_factors(path);
  std::remove(path.c_str());
  REQUIRE(r.rank() == 2);
  CHECK((r.gains[1] - m.gains[1]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.attenuation - m.attenuation).cwiseAbs().maxCoeff() == 0.0);
}
