// SPDX-License-Identifier: Apache-2.0

#include "beammap/los.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

namespace beammap
{

Eigen::MatrixXd ToeplitzGain::matrix() const { return lift(first_row); }

Eigen::MatrixXd lift(const Eigen::VectorXd &g)
{
  const Eigen::Index n = g.size();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      out(i, j) = g(std::abs(i - j));
  return out;
}

std::vector<std::size_t> lift_lags(std::size_t n)
{
  std::vector<std::size_t> lags(n * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i)
      lags[i + n * j] = i > j ? i - j : j - i;
  return lags;
}

Eigen::MatrixXd lift_matrix(std::size_t n)
{
  const auto lags = lift_lags(n);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n * n), static_cast<Eigen::Index>(n));
  for (std::size_t p = 0; p < lags.size(); ++p)
    t(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(lags[p])) = 1.0;
  return t;
}

LagObservations lag_observations(const MaskedTensor3 &x)
{
  const Tensor3 &v = x.values;
  if (v.dim_i != v.dim_j)
    throw std::invalid_argument("Toeplitz gains need I = J");
  LagObservations obs;
  obs.n = v.dim_i;
  obs.dim_k = v.dim_k;
  for (std::size_t k = 0; k < v.dim_k; ++k)
    for (std::size_t j = 0; j < v.dim_j; ++j)
      for (std::size_t i = 0; i < v.dim_i; ++i)
      {
        const std::size_t idx = v.index(i, j, k);
        if (!x.mask[idx])
          continue;
        obs.lag.push_back(i > j ? i - j : j - i);
        obs.bin.push_back(k);
        obs.value.push_back(v.data[idx]);
      }
  return obs;
}

namespace
{
void lag_sums(const LagObservations &obs, const Eigen::VectorXd &rho, Eigen::VectorXd &num, Eigen::VectorXd &den,
              OpCounter *counter)
{
  if (static_cast<std::size_t>(rho.size()) != obs.dim_k)
    throw std::invalid_argument("attenuation length does not match the tensor");
  num = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(obs.n));
  den = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(obs.n));
  for (std::size_t m = 0; m < obs.size(); ++m)
  {
    const double r = rho(static_cast<Eigen::Index>(obs.bin[m]));
    const auto d = static_cast<Eigen::Index>(obs.lag[m]);
    num(d) += obs.value[m] * r;
    den(d) += r * r;
  }
  if (counter)
    counter->flops += 4 * obs.size();
}
} // namespace

Eigen::VectorXd update_g_closed_form(const LagObservations &obs, const Eigen::VectorXd &rho, OpCounter *counter)
{
  Eigen::VectorXd num, den;
  lag_sums(obs, rho, num, den, counter);
  Eigen::VectorXd g(num.size());
  for (Eigen::Index d = 0; d < g.size(); ++d)
  {
    if (den(d) <= 0.0)
      throw undetermined_lag(static_cast<std::size_t>(d));
    g(d) = num(d) / den(d);
  }
  if (counter)
    counter->flops += static_cast<std::uint64_t>(g.size());
  return g;
}

LagFit update_g_filled(const LagObservations &obs, const Eigen::VectorXd &rho, OpCounter *counter)
{
  Eigen::VectorXd num, den;
  lag_sums(obs, rho, num, den, counter);
  LagFit out;
  out.g = Eigen::VectorXd::Zero(num.size());
  std::vector<Eigen::Index> known;
  for (Eigen::Index d = 0; d < num.size(); ++d)
    if (den(d) > 0.0)
    {
      out.g(d) = num(d) / den(d);
      known.push_back(d);
    }
  if (counter)
    counter->flops += static_cast<std::uint64_t>(known.size());
  if (known.empty())
    throw undetermined_lag(0);
  for (Eigen::Index d = 0; d < num.size(); ++d)
  {
    if (den(d) > 0.0)
      continue;
    out.filled.push_back(static_cast<std::size_t>(d));
    const auto hi = std::lower_bound(known.begin(), known.end(), d);
    if (hi == known.begin())
      out.g(d) = out.g(*hi);
    else if (hi == known.end())
      out.g(d) = out.g(known.back());
    else
    {
      const Eigen::Index a = *(hi - 1);
      const Eigen::Index b = *hi;
      const double w = static_cast<double>(d - a) / static_cast<double>(b - a);
      out.g(d) = (1.0 - w) * out.g(a) + w * out.g(b);
    }
  }
  return out;
}

namespace
{
Eigen::MatrixXd difference_matrix(std::size_t dim_k, const std::vector<std::size_t> &blocks_in)
{
  std::vector<std::size_t> blocks = blocks_in.empty() ? std::vector<std::size_t>{dim_k} : blocks_in;
  if (std::accumulate(blocks.begin(), blocks.end(), std::size_t{0}) != dim_k)
    throw std::invalid_argument("distance blocks do not add up to the distance dimension");
  std::size_t rows = 0;
  for (const auto b : blocks)
    rows += b > 0 ? b - 1 : 0;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim_k));
  Eigen::Index row = 0;
  std::size_t k0 = 0;
  for (const auto b : blocks)
  {
    for (std::size_t k = k0; k + 1 < k0 + b; ++k, ++row)
    {
      a(row, static_cast<Eigen::Index>(k)) = 1.0;
      a(row, static_cast<Eigen::Index>(k + 1)) = -1.0;
    }
    k0 += b;
  }
  return a;
}
} // namespace

QPData rho_qp_data(const Unfolded &x, const Eigen::MatrixXd &g, const std::vector<std::size_t> &blocks)
{
  if (x.data.rows() != g.size())
    throw std::invalid_argument("gain matrix does not match the unfolded tensor");
  if ((g.array() < 0.0).any())
    throw std::invalid_argument("gain matrix must be nonnegative");
  const Eigen::Map<const Eigen::VectorXd> vg(g.data(), g.size());
  QPData out;
  out.h_diag = 2.0 * (x.mask.transpose() * vg.cwiseProduct(vg));
  out.c = -2.0 * (x.mask.cwiseProduct(x.data).transpose() * vg);
  out.a = difference_matrix(static_cast<std::size_t>(x.data.cols()), blocks);
  out.blocks = blocks.empty() ? std::vector<std::size_t>{static_cast<std::size_t>(x.data.cols())} : blocks;
  return out;
}

QPData rho_qp_data(const LagObservations &obs, const Eigen::VectorXd &first_row,
                   const std::vector<std::size_t> &blocks)
{
  if (static_cast<std::size_t>(first_row.size()) != obs.n)
    throw std::invalid_argument("first row length does not match the tensor");
  QPData out;
  out.h_diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(obs.dim_k));
  out.c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(obs.dim_k));
  for (std::size_t m = 0; m < obs.size(); ++m)
  {
    const double gv = first_row(static_cast<Eigen::Index>(obs.lag[m]));
    const auto k = static_cast<Eigen::Index>(obs.bin[m]);
    out.h_diag(k) += 2.0 * gv * gv;
    out.c(k) -= 2.0 * obs.value[m] * gv;
  }
  out.a = difference_matrix(obs.dim_k, blocks);
  out.blocks = blocks.empty() ? std::vector<std::size_t>{obs.dim_k} : blocks;
  return out;
}

QuadraticProgram to_quadratic_program(const QPData &data)
{
  const Eigen::Index k = data.h_diag.size();
  QuadraticProgram qp;
  qp.hessian = data.h_diag.asDiagonal();
  qp.linear = data.c;
  qp.eq_matrix = Eigen::MatrixXd::Ones(1, k);
  qp.eq_rhs = Eigen::VectorXd::Ones(1);
  qp.ineq_matrix.resize(k + data.a.rows(), k);
  qp.ineq_matrix << Eigen::MatrixXd::Identity(k, k), data.a;
  qp.ineq_rhs = Eigen::VectorXd::Zero(qp.ineq_matrix.rows());
  return qp;
}

namespace
{
// Nonincreasing weighted isotonic regression of t, clipped at zero.
void pava_nonincreasing(const double *w, const double *t, std::size_t n, double *out)
{
  struct Pool
  {
    double w, wt;
    std::size_t len;
  };
  std::vector<Pool> st;
  st.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
  {
    st.push_back({w[k], w[k] * t[k], 1});
    while (st.size() > 1)
    {
      const Pool &b = st.back();
      const Pool &a = st[st.size() - 2];
      if (a.wt * b.w >= b.wt * a.w) // mean(a) >= mean(b)
        break;
      const Pool m{a.w + b.w, a.wt + b.wt, a.len + b.len};
      st.pop_back();
      st.back() = m;
    }
  }
  std::size_t k = 0;
  for (const auto &p : st)
    for (std::size_t r = 0; r < p.len; ++r)
      out[k++] = std::max(p.wt / p.w, 0.0);
}
} // namespace

namespace
{
struct IsotonicProblem
{
  std::vector<std::size_t> blocks;
  Eigen::VectorXd w;

  explicit IsotonicProblem(const QPData &data)
  {
    const Eigen::Index kdim = data.h_diag.size();
    if (data.c.size() != kdim)
      throw std::invalid_argument("attenuation QP: size mismatch");
    blocks = data.blocks.empty() ? std::vector<std::size_t>{static_cast<std::size_t>(kdim)} : data.blocks;
    if (std::accumulate(blocks.begin(), blocks.end(), std::size_t{0}) != static_cast<std::size_t>(kdim))
      throw std::invalid_argument("attenuation QP: blocks do not add up");
    if ((data.h_diag.array() < 0.0).any() || !data.h_diag.allFinite() || !data.c.allFinite())
      throw std::invalid_argument("attenuation QP: invalid data");
    const double hmax = kdim ? data.h_diag.maxCoeff() : 0.0;
    const double eps = hmax > 0.0 ? 1e-12 * hmax : 1.0;
    w = data.h_diag.unaryExpr([eps](double h) { return h > 0.0 ? h : eps; });
  }

  // Minimizer of sum 1/2 w rho^2 + (c - mu) rho over the block-wise
  // nonincreasing, nonnegative cone.
  Eigen::VectorXd solve(const Eigen::VectorXd &c, double mu) const
  {
    const Eigen::VectorXd t = (mu - c.array()) / w.array();
    Eigen::VectorXd rho(t.size());
    std::size_t k0 = 0;
    for (const auto b : blocks)
    {
      pava_nonincreasing(w.data() + k0, t.data() + k0, b, rho.data() + k0);
      k0 += b;
    }
    return rho;
  }
};
} // namespace

Eigen::VectorXd solve_rho_qp_exact(const QPData &data)
{
  const IsotonicProblem p(data);
  const double scale = std::max(data.c.size() ? data.c.cwiseAbs().maxCoeff() : 0.0, p.w.minCoeff());
  double lo = -scale, hi = scale;
  while (p.solve(data.c, hi).sum() < 1.0)
    hi = 2.0 * hi + scale;
  while (p.solve(data.c, lo).sum() > 1.0)
    lo = 2.0 * lo - scale;
  // sum(rho(mu)) is nondecreasing in mu.
  for (int it = 0; it < 2000; ++it)
  {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi)
      break;
    (p.solve(data.c, mid).sum() < 1.0 ? lo : hi) = mid;
  }
  // rho is piecewise linear in mu; interpolate inside the final bracket.
  const Eigen::VectorXd r_lo = p.solve(data.c, lo), r_hi = p.solve(data.c, hi);
  const double s_lo = r_lo.sum(), s_hi = r_hi.sum();
  const double a = s_hi > s_lo ? (1.0 - s_lo) / (s_hi - s_lo) : 1.0;
  const Eigen::VectorXd out = (1.0 - a) * r_lo + a * r_hi;
  return out / out.sum();
}

Eigen::VectorXd solve_rho_cone(const QPData &data)
{
  return IsotonicProblem(data).solve(data.c, 0.0);
}

Eigen::VectorXd update_rho_qp(const QPData &data, double /*tolerance*/)
{
  return solve_rho_qp_exact(data);
}

Eigen::VectorXd update_rho_qp(const Unfolded &x, const Eigen::MatrixXd &g, const std::vector<std::size_t> &blocks,
                              double tolerance)
{
  return update_rho_qp(rho_qp_data(x, g, blocks), tolerance);
}

FactorModel LosSolution::as_model() const
{
  FactorModel m;
  m.gains.push_back(gain.matrix());
  m.attenuation = attenuation;
  return m;
}

double los_misfit(const LagObservations &obs, const Eigen::VectorXd &g, const Eigen::VectorXd &rho)
{
  double acc = 0.0;
  for (std::size_t m = 0; m < obs.size(); ++m)
  {
    const double r = obs.value[m] - g(static_cast<Eigen::Index>(obs.lag[m])) * rho(static_cast<Eigen::Index>(obs.bin[m]));
    acc += r * r;
  }
  return acc;
}

LosSolution solve_los_hard(const MaskedTensor3 &x, const SolverOptions &options)
{
  if (x.values.dim_i != x.values.dim_j)
    throw std::invalid_argument("solve_los_hard: I must equal J");
  if (x.observed() == 0)
    throw std::invalid_argument("solve_los_hard: the tensor has no observed entries");
  const LagObservations obs = lag_observations(x);
  for (const double v : obs.value)
    if (!std::isfinite(v))
      throw std::invalid_argument("solve_los_hard: non-finite tensor values");
  const std::size_t n = obs.n;
  const std::vector<std::size_t> blocks = x.blocks.empty() ? std::vector<std::size_t>{x.values.dim_k} : x.blocks;

  LosSolution out;
  Eigen::VectorXd g = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  if (options.gain_prior)
  {
    if (options.gain_prior->rows() != static_cast<Eigen::Index>(n) ||
        options.gain_prior->cols() != static_cast<Eigen::Index>(n))
      throw std::invalid_argument("gain prior shape does not match the tensor");
    g = options.gain_prior->row(0).transpose().cwiseMax(options.epsilon_positive);
  }
  Eigen::VectorXd rho = initial_attenuation(x.values.dim_k, 1, blocks).col(0);
  double f = los_misfit(obs, g, rho);
  out.report.objective.push_back(f);
  OpCounter ops;

  for (int t = 0; t < options.max_outer_iters; ++t)
  {
    const double f_prev = f;
    const QPData qp = rho_qp_data(obs, g, blocks);
    Eigen::VectorXd rho_new = solve_rho_cone(qp);
    Eigen::VectorXd g_new = g;
    if (const double mass = rho_new.sum(); mass > 0.0 && std::isfinite(mass))
    {
      rho_new /= mass;
      g_new *= mass;
    }
    else
      rho_new = update_rho_qp(qp, options.qp_tolerance);
    double fc = los_misfit(obs, g_new, rho_new);
    if (fc <= f)
    {
      rho = rho_new;
      g = g_new;
      f = fc;
    }
    else
      out.report.notes.push_back("iteration " + std::to_string(t + 1) + ": attenuation step kept previous iterate");

    LagFit fit = update_g_filled(obs, rho, &ops);
    fc = los_misfit(obs, fit.g, rho);
    if (fc <= f)
    {
      g = fit.g;
      f = fc;
      out.filled_lags = std::move(fit.filled);
    }

    out.report.objective.push_back(f);
    out.report.iterations = t + 1;
    if (f_prev - f <= options.outer_rel_tolerance * std::max(std::abs(f_prev), std::numeric_limits<double>::min()))
    {
      out.report.converged = true;
      break;
    }
  }
  if (!out.filled_lags.empty())
    out.report.notes.push_back(std::to_string(out.filled_lags.size()) + " undetermined lags filled by interpolation");

  out.gain.first_row = g;
  out.attenuation = rho;
  out.g_update_flops = ops.flops;
  if (options.complete_leading_bins)
  {
    FactorModel m = out.as_model();
    const std::size_t filled =
        complete_leading_bins(m, mode3_unfold(x), blocks, options.completion_bins, options.completion_min_slope);
    if (filled > 0)
    {
      out.gain.first_row = m.gains.front().col(0);
      out.attenuation = m.attenuation.col(0);
      out.report.notes.push_back("filled " + std::to_string(filled) + " unobserved leading distance bins");
    }
  }
  return out;
}

SolveResult solve_los_regularized(const MaskedTensor3 &x, std::optional<double> lambda1,
                                  std::optional<double> lambda2, SolverOptions options)
{
  if (x.values.dim_i != x.values.dim_j)
    throw std::invalid_argument("solve_los_regularized: I must equal J");
  if (x.observed() == 0)
    throw std::invalid_argument("solve_los_regularized: the tensor has no observed entries");
  double l1 = 0.0;
  if (lambda1)
    l1 = *lambda1;
  else
  {
    SolverOptions probe = options;
    probe.lambda_toeplitz.clear();
    const std::vector<std::size_t> blocks =
        x.blocks.empty() ? std::vector<std::size_t>{x.values.dim_k} : x.blocks;
    l1 = resolve_penalties(mode3_unfold(x), initial_attenuation(x.values.dim_k, 1, blocks), probe).toeplitz.front();
  }
  if (l1 < 0.0 || (lambda2 && *lambda2 < 0.0))
    throw std::invalid_argument("solve_los_regularized: penalty weights must be nonnegative");
  options.lambda_toeplitz = {l1};
  options.lambda_symmetry = lambda2 ? *lambda2 : l1;
  options.lambda_frob = 0.0;
  return solve_general(x, 1, options);
}

void write_toeplitz_factors(const std::string &path, const ToeplitzGain &gain, const Eigen::VectorXd &rho)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "FACTORS-TOEPLITZ " << gain.size() << ' ' << rho.size() << '\n';
  for (Eigen::Index n = 0; n < gain.first_row.size(); ++n)
    out << gain.first_row(n) << (n + 1 == gain.first_row.size() ? '\n' : ' ');
  for (Eigen::Index k = 0; k < rho.size(); ++k)
    out << rho(k) << (k + 1 == rho.size() ? '\n' : ' ');
}

std::pair<ToeplitzGain, Eigen::VectorXd> read_toeplitz_factors(const std::string &path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  std::string tag;
  std::size_t n = 0, k = 0;
  if (!(in >> tag >> n >> k) || tag != "FACTORS-TOEPLITZ")
    throw std::runtime_error(path + ": expected `FACTORS-TOEPLITZ N K` header");
  ToeplitzGain gain;
  gain.first_row.resize(static_cast<Eigen::Index>(n));
  Eigen::VectorXd rho(static_cast<Eigen::Index>(k));
  for (Eigen::Index m = 0; m < gain.first_row.size(); ++m)
    if (!(in >> gain.first_row(m)))
      throw std::runtime_error(path + ": truncated first row");
  for (Eigen::Index m = 0; m < rho.size(); ++m)
    if (!(in >> rho(m)))
      throw std::runtime_error(path + ": truncated attenuation");
  return {gain, rho};
}

} // namespace beammap
