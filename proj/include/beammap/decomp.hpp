// SPDX-License-Identifier: Apache-2.0
//
// Toeplitz-regularized matrix-vector tensor decomposition
//
//   X ~ sum_r G_r o rho_r
//
// fitted on the observed cells of a masked polar tensor. In mode-3 unfolded
// form the data term is || W * X - W * (Gs rho^T) ||_F^2 with Gs = [vec(G_1),
// ..., vec(G_R)] and rho = [rho_1, ..., rho_R] (K x R). The gain matrices
// carry a diagonal-shift (Toeplitz) penalty, an optional transpose
// (symmetry) penalty and a ridge term, and are kept >= epsilon. The
// attenuation matrix lives on the polytope
//
//   rho >= 0,  sum_{k,r} rho_{k,r} = 1,
//   sum_r rho_{k,r} nonincreasing in k,  rho_{k,1} nonincreasing in k,
//
// with the monotone chains restarting at every concatenated distance block.

#pragma once

#include "beammap/polar.hpp"
#include "beammap/qp.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace beammap
{

struct FactorModel
{
  std::vector<Eigen::MatrixXd> gains; // R matrices, I x J
  Eigen::MatrixXd attenuation;        // K x R

  std::size_t rank() const { return gains.size(); }
  std::size_t dim_i() const { return gains.empty() ? 0 : static_cast<std::size_t>(gains.front().rows()); }
  std::size_t dim_j() const { return gains.empty() ? 0 : static_cast<std::size_t>(gains.front().cols()); }
  std::size_t dim_k() const { return static_cast<std::size_t>(attenuation.rows()); }

  // (I*J) x R matrix of vectorized gains.
  Eigen::MatrixXd stacked_gains() const;
  void set_stacked_gains(const Eigen::MatrixXd &stacked);
};

struct SolverOptions
{
  // Per-component Toeplitz weights; empty selects the curvature-matched default.
  std::vector<double> lambda_toeplitz;
  std::optional<double> lambda_frob;
  double lambda_symmetry = 0.0;
  int max_outer_iters = 100;
  int max_inner_iters = 50;
  double inner_rel_tolerance = 1e-8;
  double qp_tolerance = 1e-8;
  double outer_rel_tolerance = 1e-7;
  double epsilon_positive = 1e-9;
  std::uint64_t rng_seed = 1;
  // Physics prior for the gain matrices (I x J); ones when absent.
  std::optional<Eigen::MatrixXd> gain_prior;
  // Scale applied to the default Toeplitz weight.
  double toeplitz_scale = 1.0;
  // Relative ridge weight used when lambda_frob is not given.
  double frob_ratio = 1e-3;
  // Fill the attenuation of unobserved leading distance bins after the solve
  // (see complete_leading_bins).
  bool complete_leading_bins = true;
  // Bins eligible for completion (1 = eligible, length K); empty = all.
  std::vector<std::uint8_t> completion_bins;
  // Steepest log-log decay the completion may extrapolate with.
  double completion_min_slope = -4.0;
};

// Penalty weights in effect for one solve.
struct Penalties
{
  std::vector<double> toeplitz;
  double frob = 0.0;
  double symmetry = 0.0;
};

// sum_{i<I-1, j<J-1} (G(i,j) - G(i+1,j+1))^2
double toeplitz_penalty(const Eigen::MatrixXd &g);

// sum_{i,j} (G(i,j) - G(j,i))^2; requires a square matrix.
double symmetry_penalty(const Eigen::MatrixXd &g);

// Masked residual plus all penalty terms.
double objective(const Unfolded &x, const FactorModel &model, const Penalties &penalties);

// Masked data term alone.
double data_misfit(const Unfolded &x, const FactorModel &model);

// Gradient of the objective with respect to the stacked gains, (I*J) x R.
Eigen::MatrixXd gains_gradient(const Unfolded &x, const FactorModel &model, const Penalties &penalties);

// Default weights: lambda_r = toeplitz_scale * mean_{i,j} sum_k W rho_{k,r}^2
// (the average data curvature of one gain entry at the given attenuation) and
// lambda = frob_ratio * max_r lambda_r. Explicit options override both.
Penalties resolve_penalties(const Unfolded &x, const Eigen::MatrixXd &attenuation, const SolverOptions &options);

struct GainUpdate
{
  std::vector<Eigen::MatrixXd> gains;
  int iterations = 0;
  std::vector<double> objective; // value before the first and after every iteration
};

// Projected Newton on the box G >= epsilon with an Armijo search along the
// projection arc; the objective never increases.
GainUpdate update_gains(const Unfolded &x, const Eigen::MatrixXd &attenuation,
                        const std::vector<Eigen::MatrixXd> &gains_init, const Penalties &penalties,
                        const SolverOptions &options);

// Assembles the attenuation subproblem as a dense QP over vec(rho).
QuadraticProgram attenuation_qp(const Unfolded &x, const std::vector<Eigen::MatrixXd> &gains,
                                const std::vector<std::size_t> &blocks);

// Minimizes the data term over the attenuation polytope. Throws
// convergence_error if the interior-point solver stalls.
Eigen::MatrixXd update_attenuation(const Unfolded &x, const std::vector<Eigen::MatrixXd> &gains,
                                   const std::vector<std::size_t> &blocks, const SolverOptions &options);

// Largest violation of the attenuation constraints.
double attenuation_violation(const Eigen::MatrixXd &attenuation, const std::vector<std::size_t> &blocks);

// Feasible starting point: each column proportional to 0.9^k within every
// block, jointly normalized to unit sum.
Eigen::MatrixXd initial_attenuation(std::size_t dim_k, std::size_t rank, const std::vector<std::size_t> &blocks);

struct ConvergenceReport
{
  std::vector<double> objective; // objective(0) is the initial model
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> notes;
};

struct SolveResult
{
  FactorModel model;
  ConvergenceReport report;
  Penalties penalties;
};

FactorModel initial_model(std::size_t dim_i, std::size_t dim_j, std::size_t dim_k, std::size_t rank,
                          const std::vector<std::size_t> &blocks, const SolverOptions &options);

// Alternating minimization of the full problem.
SolveResult solve_general(const MaskedTensor3 &x, std::size_t rank, const SolverOptions &options);

// A distance bin without any observation does not enter the data term, so its
// attenuation is pinned down only by the chain constraints, and the split of
// mass between those bins and the scale of the gains is arbitrary. This fills
// the eligible bins that precede the first observed bin of each block with a
// power-law extrapolation of the total attenuation of the first observed bins
// (log-log slope clamped to [min_slope, 0], never below the first observed
// bin), split across components like that bin, and renormalizes jointly,
// moving the scale into the gains. Fitted entries of the reconstruction are
// unchanged. Returns the number of filled bins.
std::size_t complete_leading_bins(FactorModel &model, const Unfolded &x, const std::vector<std::size_t> &blocks,
                                  const std::vector<std::uint8_t> &eligible = {}, double min_slope = -4.0);

// Dense sum_r G_r o rho_r.
Tensor3 reconstruct(const FactorModel &model);

// `FACTORS R I J K`, then each G_r in vec layout, then each rho_r.
void write_factors(const std::string &path, const FactorModel &model);
FactorModel read_factors(const std::string &path);

// `iter,objective` CSV.
void write_convergence_csv(const std::string &path, const std::vector<double> &objective);

} // namespace beammap
