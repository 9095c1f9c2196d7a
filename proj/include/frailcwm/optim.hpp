#pragma once

#include <functional>

#include <Eigen/Dense>

namespace frailcwm {

using Objective = std::function<double(const Eigen::VectorXd&)>;

/// Central-difference step for coordinate value x.
inline double fd_step(double x) { return 1e-5 * (1.0 + std::abs(x)); }

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x);
Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x);

struct MaximizeOptions {
  int max_iter = 500;
  double grad_tol = 1e-6;      // max-norm of the gradient
  double rel_tol = 1e-9;       // relative change of the objective between iterations
  double max_step = 2.0;       // max-norm cap on a single step
};

struct MaximizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// BFGS ascent with backtracking line search. Non-finite objective values are
/// treated as infeasible and rejected by the line search. Every accepted step
/// strictly increases the objective.
MaximizeResult maximize_bfgs(const Objective& f, Eigen::VectorXd x0, const MaximizeOptions& options = {});

}  // namespace frailcwm
