// SPDX-License-Identifier: Apache-2.0

#include "beammap/decomp.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace beammap
{

Eigen::MatrixXd FactorModel::stacked_gains() const
{
  const auto rows = static_cast<Eigen::Index>(dim_i() * dim_j());
  Eigen::MatrixXd out(rows, static_cast<Eigen::Index>(rank()));
  for (std::size_t r = 0; r < rank(); ++r)
    out.col(static_cast<Eigen::Index>(r)) = Eigen::Map<const Eigen::VectorXd>(gains[r].data(), rows);
  return out;
}

void FactorModel::set_stacked_gains(const Eigen::MatrixXd &stacked)
{
  for (std::size_t r = 0; r < rank(); ++r)
    Eigen::Map<Eigen::VectorXd>(gains[r].data(), gains[r].size()) = stacked.col(static_cast<Eigen::Index>(r));
}

double toeplitz_penalty(const Eigen::MatrixXd &g)
{
  double acc = 0.0;
  for (Eigen::Index j = 0; j + 1 < g.cols(); ++j)
    for (Eigen::Index i = 0; i + 1 < g.rows(); ++i)
    {
      const double d = g(i, j) - g(i + 1, j + 1);
      acc += d * d;
    }
  return acc;
}

double symmetry_penalty(const Eigen::MatrixXd &g)
{
  if (g.rows() != g.cols())
    throw std::invalid_argument("symmetry_penalty: matrix must be square");
  return (g - g.transpose()).squaredNorm();
}

namespace
{
void check_shapes(const Unfolded &x, const FactorModel &model)
{
  if (model.rank() == 0)
    throw std::invalid_argument("factor model has rank 0");
  if (x.data.rows() != static_cast<Eigen::Index>(model.dim_i() * model.dim_j()) ||
      x.data.cols() != static_cast<Eigen::Index>(model.dim_k()) || x.mask.rows() != x.data.rows() ||
      x.mask.cols() != x.data.cols() || model.attenuation.cols() != static_cast<Eigen::Index>(model.rank()))
    throw std::invalid_argument("factor model shape does not match the unfolded tensor");
  for (const auto &g : model.gains)
    if (g.rows() != model.gains.front().rows() || g.cols() != model.gains.front().cols())
      throw std::invalid_argument("gain matrices differ in shape");
}

Eigen::MatrixXd masked_residual(const Unfolded &x, const Eigen::MatrixXd &stacked, const Eigen::MatrixXd &rho)
{
  return x.mask.cwiseProduct(x.data - stacked * rho.transpose());
}

double penalty_terms(const std::vector<Eigen::MatrixXd> &gains, const Penalties &pen)
{
  double acc = 0.0;
  for (std::size_t r = 0; r < gains.size(); ++r)
  {
    const double lt = r < pen.toeplitz.size() ? pen.toeplitz[r] : 0.0;
    if (lt != 0.0)
      acc += lt * toeplitz_penalty(gains[r]);
    if (pen.symmetry != 0.0)
      acc += pen.symmetry * symmetry_penalty(gains[r]);
    if (pen.frob != 0.0)
      acc += pen.frob * gains[r].squaredNorm();
  }
  return acc;
}

std::vector<std::size_t> checked_blocks(const std::vector<std::size_t> &blocks, std::size_t dim_k)
{
  if (blocks.empty())
    return {dim_k};
  if (std::accumulate(blocks.begin(), blocks.end(), std::size_t{0}) != dim_k)
    throw std::invalid_argument("distance blocks do not add up to the distance dimension");
  return blocks;
}
} // namespace

double data_misfit(const Unfolded &x, const FactorModel &model)
{
  check_shapes(x, model);
  return masked_residual(x, model.stacked_gains(), model.attenuation).squaredNorm();
}

double objective(const Unfolded &x, const FactorModel &model, const Penalties &penalties)
{
  return data_misfit(x, model) + penalty_terms(model.gains, penalties);
}

Eigen::MatrixXd gains_gradient(const Unfolded &x, const FactorModel &model, const Penalties &pen)
{
  check_shapes(x, model);
  const Eigen::MatrixXd resid = masked_residual(x, model.stacked_gains(), model.attenuation);
  Eigen::MatrixXd grad = -2.0 * resid * model.attenuation;
  const auto I = static_cast<Eigen::Index>(model.dim_i());
  const auto J = static_cast<Eigen::Index>(model.dim_j());
  for (std::size_t r = 0; r < model.rank(); ++r)
  {
    const Eigen::MatrixXd &g = model.gains[r];
    Eigen::MatrixXd gr = Eigen::MatrixXd::Zero(I, J);
    const double lt = r < pen.toeplitz.size() ? pen.toeplitz[r] : 0.0;
    if (lt != 0.0)
      for (Eigen::Index j = 0; j + 1 < J; ++j)
        for (Eigen::Index i = 0; i + 1 < I; ++i)
        {
          const double d = 2.0 * lt * (g(i, j) - g(i + 1, j + 1));
          gr(i, j) += d;
          gr(i + 1, j + 1) -= d;
        }
    if (pen.symmetry != 0.0)
    {
      if (I != J)
        throw std::invalid_argument("symmetry penalty needs square gain matrices");
      gr += 4.0 * pen.symmetry * (g - g.transpose());
    }
    if (pen.frob != 0.0)
      gr += 2.0 * pen.frob * g;
    grad.col(static_cast<Eigen::Index>(r)) += Eigen::Map<const Eigen::VectorXd>(gr.data(), I * J);
  }
  return grad;
}

Penalties resolve_penalties(const Unfolded &x, const Eigen::MatrixXd &attenuation, const SolverOptions &options)
{
  Penalties pen;
  const auto R = static_cast<std::size_t>(attenuation.cols());
  const double n_entries = static_cast<double>(x.data.rows());
  double max_l = 0.0;
  pen.toeplitz.resize(R);
  for (std::size_t r = 0; r < R; ++r)
  {
    if (!options.lambda_toeplitz.empty())
    {
      pen.toeplitz[r] = options.lambda_toeplitz[std::min(r, options.lambda_toeplitz.size() - 1)];
    }
    else
    {
      const Eigen::VectorXd rho2 = attenuation.col(static_cast<Eigen::Index>(r)).array().square();
      pen.toeplitz[r] = options.toeplitz_scale * (x.mask * rho2).sum() / n_entries;
    }
    if (pen.toeplitz[r] < 0.0)
      throw std::invalid_argument("Toeplitz weights must be nonnegative");
    max_l = std::max(max_l, pen.toeplitz[r]);
  }
  pen.frob = options.lambda_frob ? *options.lambda_frob : options.frob_ratio * max_l;
  pen.symmetry = options.lambda_symmetry;
  if (pen.frob < 0.0 || pen.symmetry < 0.0)
    throw std::invalid_argument("penalty weights must be nonnegative");
  return pen;
}

namespace
{
Eigen::SparseMatrix<double> gains_hessian(const Unfolded &x, const Eigen::MatrixXd &rho, std::size_t I, std::size_t J,
                                          const Penalties &pen)
{
  const auto R = static_cast<std::size_t>(rho.cols());
  const std::size_t P = I * J;
  const auto n = static_cast<Eigen::Index>(P * R);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * (R + 5));
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t s = 0; s < R; ++s)
    {
      const Eigen::VectorXd rr =
          rho.col(static_cast<Eigen::Index>(r)).cwiseProduct(rho.col(static_cast<Eigen::Index>(s)));
      const Eigen::VectorXd h = 2.0 * (x.mask * rr);
      for (std::size_t p = 0; p < P; ++p)
        trip.emplace_back(static_cast<int>(p + P * r), static_cast<int>(p + P * s), h(static_cast<Eigen::Index>(p)));
    }
  auto couple = [&](std::size_t a, std::size_t b, double w) {
    trip.emplace_back(static_cast<int>(a), static_cast<int>(a), w);
    trip.emplace_back(static_cast<int>(b), static_cast<int>(b), w);
    trip.emplace_back(static_cast<int>(a), static_cast<int>(b), -w);
    trip.emplace_back(static_cast<int>(b), static_cast<int>(a), -w);
  };
  for (std::size_t r = 0; r < R; ++r)
  {
    const std::size_t off = P * r;
    const double lt = r < pen.toeplitz.size() ? pen.toeplitz[r] : 0.0;
    if (lt != 0.0)
      for (std::size_t j = 0; j + 1 < J; ++j)
        for (std::size_t i = 0; i + 1 < I; ++i)
          couple(off + i + I * j, off + (i + 1) + I * (j + 1), 2.0 * lt);
    if (pen.symmetry != 0.0)
      for (std::size_t j = 0; j < J; ++j)
        for (std::size_t i = 0; i < j; ++i)
          couple(off + i + I * j, off + j + I * i, 4.0 * pen.symmetry);
    if (pen.frob != 0.0)
      for (std::size_t p = 0; p < P; ++p)
        trip.emplace_back(static_cast<int>(off + p), static_cast<int>(off + p), 2.0 * pen.frob);
  }
  Eigen::SparseMatrix<double> H(n, n);
  H.setFromTriplets(trip.begin(), trip.end());
  H.makeCompressed();
  return H;
}
} // namespace

GainUpdate update_gains(const Unfolded &x, const Eigen::MatrixXd &attenuation,
                        const std::vector<Eigen::MatrixXd> &gains_init, const Penalties &penalties,
                        const SolverOptions &options)
{
  FactorModel model{gains_init, attenuation};
  check_shapes(x, model);
  if (!x.data.allFinite() || !attenuation.allFinite())
    throw std::invalid_argument("update_gains: non-finite input");
  for (const auto &g : gains_init)
    if (!g.allFinite())
      throw std::invalid_argument("update_gains: non-finite initial gains");
  if (penalties.symmetry != 0.0 && model.dim_i() != model.dim_j())
    throw std::invalid_argument("update_gains: symmetry penalty needs square gain matrices");

  const double eps = options.epsilon_positive;
  const std::size_t I = model.dim_i();
  const std::size_t J = model.dim_j();
  const Eigen::SparseMatrix<double> H = gains_hessian(x, attenuation, I, J, penalties);
  const Eigen::Index n = H.rows();
  Eigen::VectorXd hdiag = H.diagonal();

  Eigen::MatrixXd stacked = model.stacked_gains().cwiseMax(eps);
  model.set_stacked_gains(stacked);
  double f = objective(x, model, penalties);

  GainUpdate out;
  out.objective.push_back(f);

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  ldlt.analyzePattern(H);
  Eigen::SparseMatrix<double> Hmod = H;
  const double ridge = 1e-12 * (1.0 + hdiag.cwiseAbs().maxCoeff());

  for (int it = 0; it < options.max_inner_iters; ++it)
  {
    const Eigen::MatrixXd grad_m = gains_gradient(x, model, penalties);
    const Eigen::Map<const Eigen::VectorXd> grad(grad_m.data(), n);
    const Eigen::Map<const Eigen::VectorXd> v(stacked.data(), n);

    const Eigen::VectorXd pg = v - (v - grad).cwiseMax(eps);
    const double pg_norm = pg.cwiseAbs().maxCoeff();
    if (pg_norm <= 1e-14 * (1.0 + grad.cwiseAbs().maxCoeff()))
      break;
    const double act_tol = std::min(1e-6, pg_norm);
    std::vector<char> active(static_cast<std::size_t>(n), 0);
    for (Eigen::Index p = 0; p < n; ++p)
      active[static_cast<std::size_t>(p)] = (v(p) - eps <= act_tol && grad(p) > 0.0) ? 1 : 0;

    // Reduced Hessian on the free set, identity on the active set.
    Hmod = H;
    for (Eigen::Index c = 0; c < Hmod.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator itr(Hmod, c); itr; ++itr)
      {
        const auto row = itr.row();
        const auto col = itr.col();
        if (active[static_cast<std::size_t>(row)] || active[static_cast<std::size_t>(col)])
          itr.valueRef() = row == col ? 1.0 : 0.0;
        else if (row == col)
          itr.valueRef() += ridge;
      }
    ldlt.factorize(Hmod);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("update_gains: factorization of the reduced Hessian failed");

    Eigen::VectorXd rhs = -grad;
    for (Eigen::Index p = 0; p < n; ++p)
      if (active[static_cast<std::size_t>(p)])
        rhs(p) = 0.0;
    Eigen::VectorXd dir = ldlt.solve(rhs);
    for (Eigen::Index p = 0; p < n; ++p)
      if (active[static_cast<std::size_t>(p)])
        dir(p) = -grad(p) / (hdiag(p) > 0.0 ? hdiag(p) : 1.0);

    double alpha = 1.0;
    bool accepted = false;
    Eigen::MatrixXd trial(stacked.rows(), stacked.cols());
    FactorModel trial_model = model;
    double f_new = f;
    for (int ls = 0; ls < 40; ++ls)
    {
      Eigen::Map<Eigen::VectorXd>(trial.data(), n) = (v + alpha * dir).cwiseMax(eps);
      trial_model.set_stacked_gains(trial);
      f_new = objective(x, trial_model, penalties);
      const double decrease = grad.dot(Eigen::Map<const Eigen::VectorXd>(trial.data(), n) - v);
      if (f_new <= f + 1e-4 * decrease && f_new <= f)
      {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted)
      break;
    const double rel = (f - f_new) / std::max(std::abs(f), std::numeric_limits<double>::min());
    stacked = trial;
    model = trial_model;
    f = f_new;
    out.objective.push_back(f);
    out.iterations = it + 1;
    if (rel < options.inner_rel_tolerance)
      break;
  }
  out.gains = model.gains;
  return out;
}

QuadraticProgram attenuation_qp(const Unfolded &x, const std::vector<Eigen::MatrixXd> &gains,
                                const std::vector<std::size_t> &blocks_in)
{
  if (gains.empty())
    throw std::invalid_argument("attenuation_qp: no gain matrices");
  const auto K = static_cast<std::size_t>(x.data.cols());
  const std::size_t R = gains.size();
  const auto blocks = checked_blocks(blocks_in, K);
  FactorModel shape{gains, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(R))};
  check_shapes(x, shape);
  const Eigen::MatrixXd G = shape.stacked_gains();
  const auto n = static_cast<Eigen::Index>(K * R);
  const auto Ki = static_cast<Eigen::Index>(K);

  QuadraticProgram qp;
  qp.hessian = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t s = 0; s < R; ++s)
    {
      const Eigen::VectorXd gg =
          G.col(static_cast<Eigen::Index>(r)).cwiseProduct(G.col(static_cast<Eigen::Index>(s)));
      const Eigen::VectorXd h = 2.0 * (x.mask.transpose() * gg);
      for (Eigen::Index k = 0; k < Ki; ++k)
        qp.hessian(k + Ki * static_cast<Eigen::Index>(r), k + Ki * static_cast<Eigen::Index>(s)) = h(k);
    }
  const Eigen::MatrixXd c = x.mask.cwiseProduct(x.data).transpose() * G; // K x R
  qp.linear = -2.0 * Eigen::Map<const Eigen::VectorXd>(c.data(), n);

  qp.eq_matrix = Eigen::MatrixXd::Ones(1, n);
  qp.eq_rhs = Eigen::VectorXd::Ones(1);

  std::size_t n_chain = 0;
  for (const auto b : blocks)
    n_chain += b > 0 ? b - 1 : 0;
  const std::size_t chains_per_link = R > 1 ? 2 : 1;
  const auto m = static_cast<Eigen::Index>(K * R + n_chain * chains_per_link);
  qp.ineq_matrix = Eigen::MatrixXd::Zero(m, n);
  qp.ineq_rhs = Eigen::VectorXd::Zero(m);
  qp.ineq_matrix.topLeftCorner(n, n).setIdentity();
  Eigen::Index row = n;
  std::size_t k0 = 0;
  for (const auto b : blocks)
  {
    for (std::size_t k = k0; k + 1 < k0 + b; ++k)
    {
      const auto ki = static_cast<Eigen::Index>(k);
      for (std::size_t r = 0; r < R; ++r)
      {
        qp.ineq_matrix(row, ki + Ki * static_cast<Eigen::Index>(r)) = 1.0;
        qp.ineq_matrix(row, ki + 1 + Ki * static_cast<Eigen::Index>(r)) = -1.0;
      }
      ++row;
      if (R > 1)
      {
        qp.ineq_matrix(row, ki) = 1.0;
        qp.ineq_matrix(row, ki + 1) = -1.0;
        ++row;
      }
    }
    k0 += b;
  }
  return qp;
}

Eigen::MatrixXd update_attenuation(const Unfolded &x, const std::vector<Eigen::MatrixXd> &gains,
                                   const std::vector<std::size_t> &blocks, const SolverOptions &options)
{
  for (const auto &g : gains)
    if (!g.allFinite())
      throw std::invalid_argument("update_attenuation: non-finite gains");
  const QuadraticProgram qp = attenuation_qp(x, gains, blocks);
  QpOptions qo;
  qo.tolerance = options.qp_tolerance;
  const QpResult res = solve_qp(qp, qo);
  const auto K = x.data.cols();
  Eigen::MatrixXd rho = Eigen::Map<const Eigen::MatrixXd>(res.x.data(), K, static_cast<Eigen::Index>(gains.size()));
  // Interior iterates can sit a rounding error below zero.
  return rho.cwiseMax(0.0);
}

double attenuation_violation(const Eigen::MatrixXd &rho, const std::vector<std::size_t> &blocks_in)
{
  const auto K = static_cast<std::size_t>(rho.rows());
  const auto blocks = checked_blocks(blocks_in, K);
  double v = std::max(0.0, -rho.minCoeff());
  v = std::max(v, std::abs(rho.sum() - 1.0));
  const Eigen::VectorXd rows = rho.rowwise().sum();
  std::size_t k0 = 0;
  for (const auto b : blocks)
  {
    for (std::size_t k = k0; k + 1 < k0 + b; ++k)
    {
      const auto ki = static_cast<Eigen::Index>(k);
      v = std::max(v, rows(ki + 1) - rows(ki));
      v = std::max(v, rho(ki + 1, 0) - rho(ki, 0));
    }
    k0 += b;
  }
  return v;
}

Eigen::MatrixXd initial_attenuation(std::size_t dim_k, std::size_t rank, const std::vector<std::size_t> &blocks_in)
{
  const auto blocks = checked_blocks(blocks_in, dim_k);
  Eigen::MatrixXd rho(static_cast<Eigen::Index>(dim_k), static_cast<Eigen::Index>(rank));
  std::size_t k0 = 0;
  for (const auto b : blocks)
  {
    double w = 0.9;
    for (std::size_t k = k0; k < k0 + b; ++k, w *= 0.9)
      rho.row(static_cast<Eigen::Index>(k)).setConstant(w);
    k0 += b;
  }
  return rho / rho.sum();
}

FactorModel initial_model(std::size_t dim_i, std::size_t dim_j, std::size_t dim_k, std::size_t rank,
                          const std::vector<std::size_t> &blocks, const SolverOptions &options)
{
  Eigen::MatrixXd prior = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(dim_i), static_cast<Eigen::Index>(dim_j));
  if (options.gain_prior)
  {
    if (options.gain_prior->rows() != prior.rows() || options.gain_prior->cols() != prior.cols())
      throw std::invalid_argument("gain prior shape does not match the tensor");
    prior = *options.gain_prior;
  }
  std::mt19937_64 rng(options.rng_seed);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  FactorModel model;
  for (std::size_t r = 0; r < rank; ++r)
  {
    Eigen::MatrixXd g = prior / static_cast<double>(rank);
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        g(i, j) = std::max(g(i, j) * jitter(rng), options.epsilon_positive);
    model.gains.push_back(std::move(g));
  }
  model.attenuation = initial_attenuation(dim_k, rank, blocks);
  return model;
}

SolveResult solve_general(const MaskedTensor3 &x, std::size_t rank, const SolverOptions &options)
{
  if (rank < 1)
    throw std::invalid_argument("solve_general: rank must be at least 1");
  if (x.observed() == 0)
    throw std::invalid_argument("solve_general: the tensor has no observed entries");
  const Unfolded u = mode3_unfold(x);
  if (!u.data.allFinite())
    throw std::invalid_argument("solve_general: non-finite tensor values");
  const auto blocks = checked_blocks(x.blocks, x.values.dim_k);

  SolveResult out;
  out.model = initial_model(x.values.dim_i, x.values.dim_j, x.values.dim_k, rank, blocks, options);
  out.penalties = resolve_penalties(u, out.model.attenuation, options);
  double f = objective(u, out.model, out.penalties);
  out.report.objective.push_back(f);

  for (int t = 0; t < options.max_outer_iters; ++t)
  {
    const double f_prev = f;

    GainUpdate gu = update_gains(u, out.model.attenuation, out.model.gains, out.penalties, options);
    FactorModel cand{std::move(gu.gains), out.model.attenuation};
    double fc = objective(u, cand, out.penalties);
    if (fc <= f)
    {
      out.model = std::move(cand);
      f = fc;
    }

    cand = out.model;
    cand.attenuation = update_attenuation(u, out.model.gains, blocks, options);
    fc = objective(u, cand, out.penalties);
    if (fc <= f)
    {
      out.model = std::move(cand);
      f = fc;
    }
    else
      out.report.notes.push_back("iteration " + std::to_string(t + 1) + ": attenuation step kept previous iterate");

    out.report.objective.push_back(f);
    out.report.iterations = t + 1;
    if (f_prev - f <= options.outer_rel_tolerance * std::max(std::abs(f_prev), std::numeric_limits<double>::min()))
    {
      out.report.converged = true;
      break;
    }
  }
  if (options.complete_leading_bins)
  {
    const std::size_t n = complete_leading_bins(out.model, u, blocks, options.completion_bins, options.completion_min_slope);
    if (n > 0)
      out.report.notes.push_back("filled " + std::to_string(n) + " unobserved leading distance bins");
  }
  return out;
}

std::size_t complete_leading_bins(FactorModel &model, const Unfolded &x, const std::vector<std::size_t> &blocks_in,
                                  const std::vector<std::uint8_t> &eligible, double min_slope)
{
  const std::size_t K = model.dim_k();
  const auto blocks = checked_blocks(blocks_in, K);
  if (static_cast<std::size_t>(x.mask.cols()) != K)
    throw std::invalid_argument("complete_leading_bins: mask does not match the model");
  if (!eligible.empty() && eligible.size() != K)
    throw std::invalid_argument("complete_leading_bins: eligibility vector has the wrong length");
  const Eigen::VectorXd seen = x.mask.colwise().sum().transpose();
  Eigen::MatrixXd &rho = model.attenuation;
  std::size_t filled = 0;
  std::size_t k0 = 0;
  for (const auto b : blocks)
  {
    std::size_t t0 = 0;
    while (t0 < b && seen(static_cast<Eigen::Index>(k0 + t0)) == 0.0)
      ++t0;
    if (t0 == 0 || t0 == b)
    {
      k0 += b;
      continue;
    }
    // log-log fit of the total attenuation over the first observed bins
    const auto row_sum = [&](std::size_t t) { return rho.row(static_cast<Eigen::Index>(k0 + t)).sum(); };
    std::vector<double> lx, ly;
    for (std::size_t t = t0; t < b && lx.size() < 4; ++t)
      if (seen(static_cast<Eigen::Index>(k0 + t)) > 0.0 && row_sum(t) > 0.0)
      {
        lx.push_back(std::log(static_cast<double>(t)));
        ly.push_back(std::log(row_sum(t)));
      }
    const double floor_v = row_sum(t0);
    double slope = 0.0;
    if (lx.size() >= 2)
    {
      const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
      const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t n = 0; n < lx.size(); ++n)
      {
        sxx += (lx[n] - mx) * (lx[n] - mx);
        sxy += (lx[n] - mx) * (ly[n] - my);
      }
      if (sxx > 0.0)
        slope = std::clamp(sxy / sxx, std::min(min_slope, 0.0), 0.0);
    }
    double icpt = 0.0;
    for (std::size_t n = 0; n < lx.size(); ++n)
      icpt += ly[n] - slope * lx[n];
    icpt = lx.empty() ? 0.0 : icpt / static_cast<double>(lx.size());
    // components keep the split of the first observed bin
    const Eigen::RowVectorXd share =
        floor_v > 0.0 ? Eigen::RowVectorXd(rho.row(static_cast<Eigen::Index>(k0 + t0)) / floor_v)
                      : Eigen::RowVectorXd::Constant(rho.cols(), 1.0 / static_cast<double>(rho.cols()));
    for (std::size_t t = 0; t < t0; ++t)
    {
      const std::size_t k = k0 + t;
      if (!eligible.empty() && !eligible[k])
        continue;
      const double te = std::max(static_cast<double>(t), 0.5);
      const double v = lx.empty() ? floor_v : std::max(std::exp(icpt + slope * std::log(te)), floor_v);
      rho.row(static_cast<Eigen::Index>(k)) = v * share;
    }
    for (std::size_t t = 0; t < t0; ++t)
      if (eligible.empty() || eligible[k0 + t])
        ++filled;
    k0 += b;
  }
  if (filled == 0)
    return 0;
  // Ineligible leading bins may now sit below filled ones; restore the chains.
  k0 = 0;
  for (const auto b : blocks)
  {
    for (std::size_t t = b; t-- > 1;)
    {
      const auto k = static_cast<Eigen::Index>(k0 + t);
      for (Eigen::Index r = 0; r < rho.cols(); ++r)
        if (rho(k - 1, r) < rho(k, r) && seen(k - 1) == 0.0)
          rho(k - 1, r) = rho(k, r);
    }
    k0 += b;
  }
  const double total = rho.sum();
  rho /= total;
  for (auto &g : model.gains)
    g *= total;
  return filled;
}

Tensor3 reconstruct(const FactorModel &model)
{
  if (model.rank() == 0)
    return Tensor3(0, 0, model.dim_k());
  const Eigen::MatrixXd unfolded = model.stacked_gains() * model.attenuation.transpose();
  return mode3_fold(unfolded, model.dim_i(), model.dim_j());
}

void write_factors(const std::string &path, const FactorModel &model)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "FACTORS " << model.rank() << ' ' << model.dim_i() << ' ' << model.dim_j() << ' ' << model.dim_k() << '\n';
  for (const auto &g : model.gains)
    for (Eigen::Index j = 0; j < g.cols(); ++j)
    {
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        out << g(i, j) << (i + 1 == g.rows() ? '\n' : ' ');
    }
  for (Eigen::Index r = 0; r < model.attenuation.cols(); ++r)
    for (Eigen::Index k = 0; k < model.attenuation.rows(); ++k)
      out << model.attenuation(k, r) << (k + 1 == model.attenuation.rows() ? '\n' : ' ');
}

FactorModel read_factors(const std::string &path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  std::string tag;
  std::size_t R = 0, I = 0, J = 0, K = 0;
  if (!(in >> tag >> R >> I >> J >> K) || tag != "FACTORS")
    throw std::runtime_error(path + ": expected `FACTORS R I J K` header");
  FactorModel m;
  for (std::size_t r = 0; r < R; ++r)
  {
    Eigen::MatrixXd g(static_cast<Eigen::Index>(I), static_cast<Eigen::Index>(J));
    for (Eigen::Index n = 0; n < g.size(); ++n)
      if (!(in >> g.data()[n]))
        throw std::runtime_error(path + ": truncated gain data");
    m.gains.push_back(std::move(g));
  }
  m.attenuation.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(R));
  for (Eigen::Index n = 0; n < m.attenuation.size(); ++n)
    if (!(in >> m.attenuation.data()[n]))
      throw std::runtime_error(path + ": truncated attenuation data");
  return m;
}

void write_convergence_csv(const std::string &path, const std::vector<double> &objective)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "iter,objective\n";
  for (std::size_t t = 0; t < objective.size(); ++t)
    out << t << ',' << objective[t] << '\n';
}

} // namespace beammap
