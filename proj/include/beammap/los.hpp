// SPDX-License-Identifier: Apache-2.0
//
// Pure line-of-sight specializations of the decomposition. The gain matrix of
// a sin-uniform beam/angle grid is symmetric Toeplitz, so it is either
// encouraged by penalties (regularized solver) or imposed exactly by
// parameterizing G through its first row g, [G]_{i,j} = g_{|i-j|} (hard
// solver). With the lifting vec(G) = T g the Gram matrix of the g update is
// diagonal, and each lag is a one-line least-squares problem.

#pragma once

#include "beammap/decomp.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace beammap
{

struct ToeplitzGain
{
  Eigen::VectorXd first_row; // g, length N

  std::size_t size() const { return static_cast<std::size_t>(first_row.size()); }
  Eigen::MatrixXd matrix() const;
};

// [G]_{i,j} = g_{|i-j|}.
Eigen::MatrixXd lift(const Eigen::VectorXd &g);

// Lag of every vec position p = i + N*j, i.e. |i - j|.
std::vector<std::size_t> lift_lags(std::size_t n);

// The N^2 x N 0/1 lifting matrix T with vec(G) = T g. Only oracles need it.
Eigen::MatrixXd lift_matrix(std::size_t n);

class undetermined_lag : public std::runtime_error
{
public:
  undetermined_lag(std::size_t lag)
      : std::runtime_error("lag " + std::to_string(lag) + " has no observation with positive attenuation"), lag_(lag)
  {
  }
  std::size_t lag() const { return lag_; }

private:
  std::size_t lag_;
};

// Observed tensor entries grouped for the lag-wise update.
struct LagObservations
{
  std::size_t n = 0; // I = J = N
  std::size_t dim_k = 0;
  std::vector<std::size_t> lag;
  std::vector<std::size_t> bin; // distance index k
  std::vector<double> value;

  std::size_t size() const { return value.size(); }
};

// Throws std::invalid_argument unless I = J.
LagObservations lag_observations(const MaskedTensor3 &x);

// Counts floating-point operations of instrumented kernels.
struct OpCounter
{
  std::uint64_t flops = 0;
};

// g_delta = sum x rho_k / sum rho_k^2 over the observations of lag delta.
// Throws undetermined_lag for the first lag with a zero denominator.
Eigen::VectorXd update_g_closed_form(const LagObservations &obs, const Eigen::VectorXd &rho,
                                     OpCounter *counter = nullptr);

struct LagFit
{
  Eigen::VectorXd g;
  std::vector<std::size_t> filled; // undetermined lags filled by interpolation
};

// As update_g_closed_form, but undetermined lags are filled by linear
// interpolation between the nearest determined lags (constant beyond the
// ends). Throws undetermined_lag only when no lag is determined.
LagFit update_g_filled(const LagObservations &obs, const Eigen::VectorXd &rho, OpCounter *counter = nullptr);

// Diagonal QP for the attenuation of a rank-1 model:
//   minimize 0.5 rho' diag(h) rho + c' rho
//   subject to A rho >= 0, rho >= 0, 1' rho = 1,
// with h_k = 2 sum_p W G_p^2, c_k = -2 sum_p W X G_p, and A the first
// differences within every distance block.
struct QPData
{
  Eigen::VectorXd h_diag;
  Eigen::VectorXd c;
  Eigen::MatrixXd a; // (K - #blocks) x K
  std::vector<std::size_t> blocks;
};

QPData rho_qp_data(const Unfolded &x, const Eigen::MatrixXd &g, const std::vector<std::size_t> &blocks);
QPData rho_qp_data(const LagObservations &obs, const Eigen::VectorXd &first_row,
                   const std::vector<std::size_t> &blocks);

QuadraticProgram to_quadratic_program(const QPData &data);

// Exact minimizer of the diagonal QP: per block a weighted nonincreasing
// isotonic regression (pool-adjacent-violators) clipped at zero, with the
// multiplier of sum(rho) = 1 found by bisection. Bins without observations
// get a vanishing weight so the minimizer is unique. Unlike an interior-point
// solve its accuracy does not depend on the spread of scales between blocks.
Eigen::VectorXd solve_rho_qp_exact(const QPData &data);

// Same minimizer without sum(rho) = 1 (multiplier zero). The hard solver
// uses it and moves the scale into the gain: at any stationary point of the
// bilinear objective the sum multiplier vanishes, and a nonzero one during
// the alternation would wipe out blocks whose data are orders of magnitude
// weaker than the others.
Eigen::VectorXd solve_rho_cone(const QPData &data);

// Uses solve_rho_qp_exact; `tolerance` is kept for the interior-point path.
Eigen::VectorXd update_rho_qp(const QPData &data, double tolerance = 1e-8);
Eigen::VectorXd update_rho_qp(const Unfolded &x, const Eigen::MatrixXd &g, const std::vector<std::size_t> &blocks,
                              double tolerance = 1e-8);

struct LosSolution
{
  ToeplitzGain gain;
  Eigen::VectorXd attenuation;
  ConvergenceReport report;
  std::vector<std::size_t> filled_lags;
  std::uint64_t g_update_flops = 0;

  FactorModel as_model() const;
};

// Masked misfit of the Toeplitz model.
double los_misfit(const LagObservations &obs, const Eigen::VectorXd &g, const Eigen::VectorXd &rho);

// Hard-constrained solver: alternates update_rho_qp and the lag-wise g update
// (attenuation first) from the physics prior until the relative objective
// change drops below options.outer_rel_tolerance.
LosSolution solve_los_hard(const MaskedTensor3 &x, const SolverOptions &options);

// Regularized solver: rank-1 general solve with Toeplitz weight lambda1 and
// symmetry weight lambda2 (default lambda1), no ridge. When lambda1 is absent
// the curvature-matched default is used.
SolveResult solve_los_regularized(const MaskedTensor3 &x, std::optional<double> lambda1,
                                  std::optional<double> lambda2, SolverOptions options);

// `FACTORS-TOEPLITZ N K`, then g, then rho.
void write_toeplitz_factors(const std::string &path, const ToeplitzGain &gain, const Eigen::VectorXd &rho);
std::pair<ToeplitzGain, Eigen::VectorXd> read_toeplitz_factors(const std::string &path);

} // namespace beammap
