// SPDX-License-Identifier: Apache-2.0
//
// Dense convex quadratic programming by a primal-dual interior-point method
// (Mehrotra predictor-corrector):
//
//   minimize  0.5 x' P x + q' x   subject to  A x = b,  C x >= d.
//
// Sized for the attenuation subproblems (a few hundred variables).

#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace beammap
{

struct QuadraticProgram
{
  Eigen::MatrixXd hessian; // P, symmetric positive semidefinite
  Eigen::VectorXd linear;  // q
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  Eigen::MatrixXd ineq_matrix;
  Eigen::VectorXd ineq_rhs;

  double objective(const Eigen::VectorXd &x) const { return 0.5 * x.dot(hessian * x) + linear.dot(x); }
};

struct QpOptions
{
  double tolerance = 1e-8;
  int max_iterations = 200;
};

struct QpResult
{
  Eigen::VectorXd x;
  Eigen::VectorXd eq_dual;
  Eigen::VectorXd ineq_dual;
  int iterations = 0;
  // Largest of the scaled stationarity, primal and complementarity residuals.
  double kkt_residual = 0.0;
  double objective = 0.0;
};

class convergence_error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// Throws std::invalid_argument on inconsistent shapes and convergence_error
// when the residuals do not reach the tolerance within the iteration cap.
QpResult solve_qp(const QuadraticProgram &qp, const QpOptions &options = {});

// Largest constraint violation of x: |A x - b| and max(d - C x, 0).
double constraint_violation(const QuadraticProgram &qp, const Eigen::VectorXd &x);

} // namespace beammap
