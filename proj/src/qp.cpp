// SPDX-License-Identifier: Apache-2.0

#include "beammap/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace beammap
{

namespace
{
double max_step(const Eigen::VectorXd &v, const Eigen::VectorXd &dv)
{
  double a = 1.0;
  for (Eigen::Index n = 0; n < v.size(); ++n)
    if (dv(n) < 0.0)
      a = std::min(a, -v(n) / dv(n));
  return a;
}

double inf_norm(const Eigen::VectorXd &v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }
} // namespace

double constraint_violation(const QuadraticProgram &qp, const Eigen::VectorXd &x)
{
  double v = 0.0;
  if (qp.eq_matrix.rows() > 0)
    v = std::max(v, inf_norm(qp.eq_matrix * x - qp.eq_rhs));
  if (qp.ineq_matrix.rows() > 0)
    v = std::max(v, (qp.ineq_rhs - qp.ineq_matrix * x).cwiseMax(0.0).maxCoeff());
  return v;
}

QpResult solve_qp(const QuadraticProgram &qp, const QpOptions &options)
{
  const Eigen::Index n = qp.linear.size();
  const Eigen::Index me = qp.eq_matrix.rows();
  const Eigen::Index mi = qp.ineq_matrix.rows();
  if (qp.hessian.rows() != n || qp.hessian.cols() != n)
    throw std::invalid_argument("solve_qp: hessian shape does not match the linear term");
  if ((me > 0 && qp.eq_matrix.cols() != n) || qp.eq_rhs.size() != me)
    throw std::invalid_argument("solve_qp: equality constraint shape mismatch");
  if ((mi > 0 && qp.ineq_matrix.cols() != n) || qp.ineq_rhs.size() != mi)
    throw std::invalid_argument("solve_qp: inequality constraint shape mismatch");
  if (!qp.hessian.allFinite() || !qp.linear.allFinite())
    throw std::invalid_argument("solve_qp: non-finite objective data");

  // Objective scaling leaves the minimizer unchanged.
  const double scale =
      std::max({1e-300, qp.hessian.cwiseAbs().maxCoeff(), n ? qp.linear.cwiseAbs().maxCoeff() : 0.0});
  const Eigen::MatrixXd P = qp.hessian / scale;
  const Eigen::VectorXd q = qp.linear / scale;
  const Eigen::MatrixXd &A = qp.eq_matrix;
  const Eigen::VectorXd &b = qp.eq_rhs;
  const Eigen::MatrixXd &C = qp.ineq_matrix;
  const Eigen::VectorXd &d = qp.ineq_rhs;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (me > 0)
    x = A.transpose() * (A * A.transpose()).ldlt().solve(b); // minimum-norm point on the affine set
  Eigen::VectorXd y = Eigen::VectorXd::Zero(me);
  Eigen::VectorXd s = (C * x - d).cwiseMax(1.0);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(mi);

  const double tol = options.tolerance;
  const double q_norm = 1.0 + inf_norm(q);
  const double b_norm = 1.0 + inf_norm(b);
  const double d_norm = 1.0 + inf_norm(d);

  QpResult res;
  double kkt = 0.0;
  for (int it = 0; it <= options.max_iterations; ++it)
  {
    const Eigen::VectorXd r_d = P * x + q - A.transpose() * y - C.transpose() * z;
    const Eigen::VectorXd r_e = A * x - b;
    const Eigen::VectorXd r_i = C * x - s - d;
    const double mu = mi > 0 ? s.dot(z) / static_cast<double>(mi) : 0.0;
    const double obj = std::abs(0.5 * x.dot(P * x) + q.dot(x));
    kkt = std::max({inf_norm(r_d) / q_norm, inf_norm(r_e) / b_norm, inf_norm(r_i) / d_norm, mu / (1.0 + obj)});
    res.iterations = it;
    if (kkt <= tol)
      break;
    if (it == options.max_iterations)
    {
      std::ostringstream msg;
      msg << "solve_qp: no convergence after " << it << " iterations (stationarity " << inf_norm(r_d) / q_norm
          << ", equality " << inf_norm(r_e) / b_norm << ", inequality " << inf_norm(r_i) / d_norm
          << ", complementarity " << mu << ")";
      throw convergence_error(msg.str());
    }

    const Eigen::VectorXd D = z.cwiseQuotient(s);
    const Eigen::MatrixXd M = P + C.transpose() * D.asDiagonal() * C;
    Eigen::MatrixXd M_reg = M;
    M_reg.diagonal().array() += 1e-12 * (1.0 + M.diagonal().cwiseAbs().maxCoeff());
    const Eigen::LDLT<Eigen::MatrixXd> fact(M_reg);
    // The shift keeps singular Hessians factorizable; refinement against the
    // unshifted matrix removes its bias from the step.
    auto solve_m = [&](const Eigen::MatrixXd &rhs) {
      Eigen::MatrixXd sol = fact.solve(rhs);
      for (int r = 0; r < 3; ++r)
        sol += fact.solve(rhs - M * sol);
      return sol;
    };
    Eigen::MatrixXd MinvAt;
    Eigen::LDLT<Eigen::MatrixXd> schur;
    if (me > 0)
    {
      MinvAt = solve_m(A.transpose());
      schur.compute(A * MinvAt);
    }

    // Solves the reduced Newton system for a complementarity target r_c.
    auto newton = [&](const Eigen::VectorXd &r_c, Eigen::VectorXd &dx, Eigen::VectorXd &dy, Eigen::VectorXd &ds,
                      Eigen::VectorXd &dz) {
      const Eigen::VectorXd w = (r_c - z.cwiseProduct(r_i)).cwiseQuotient(s);
      const Eigen::VectorXd rhs = -r_d + C.transpose() * w;
      const Eigen::VectorXd base = solve_m(rhs);
      if (me > 0)
      {
        dy = schur.solve(-r_e - A * base);
        dx = base + MinvAt * dy;
      }
      else
      {
        dy.resize(0);
        dx = base;
      }
      ds = C * dx + r_i;
      dz = w - D.cwiseProduct(C * dx);
    };

    Eigen::VectorXd dx, dy, ds, dz;
    const Eigen::VectorXd sz = s.cwiseProduct(z);
    newton(-sz, dx, dy, ds, dz);
    const double a_aff = std::min(max_step(s, ds), max_step(z, dz));
    double sigma = 0.0;
    if (mi > 0)
    {
      const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(mi);
      sigma = std::pow(std::max(mu_aff, 0.0) / std::max(mu, 1e-300), 3.0);
    }
    // Driving complementarity far below the tolerance only ruins the
    // conditioning of the Newton system.
    const double target = std::max(sigma * mu, 0.1 * tol * (1.0 + obj));
    const Eigen::VectorXd r_c = (-sz - ds.cwiseProduct(dz)).array() + target;
    newton(r_c, dx, dy, ds, dz);
    const double alpha = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));
    x += alpha * dx;
    y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;
  }

  res.x = x;
  res.eq_dual = y * scale;
  res.ineq_dual = z * scale;
  res.kkt_residual = kkt;
  res.objective = qp.objective(x);
  return res;
}

} // namespace beammap
