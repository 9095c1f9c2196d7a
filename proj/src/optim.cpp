#include "frailcwm/optim.hpp"

#include <cmath>
#include <limits>

namespace frailcwm {

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double h = fd_step(x[i]);
    probe[i] = x[i] + h;
    double up = f(probe);
    probe[i] = x[i] - h;
    double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x) {
  const Eigen::Index k = x.size();
  Eigen::MatrixXd H(k, k);
  Eigen::VectorXd probe = x;
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < k; ++i) {
    double hi = fd_step(x[i]);
    probe[i] = x[i] + hi;
    double up = f(probe);
    probe[i] = x[i] - hi;
    double down = f(probe);
    probe[i] = x[i];
    H(i, i) = (up - 2.0 * f0 + down) / (hi * hi);
    for (Eigen::Index j = 0; j < i; ++j) {
      double hj = fd_step(x[j]);
      auto eval = [&](double si, double sj) {
        probe[i] = x[i] + si * hi;
        probe[j] = x[j] + sj * hj;
        double v = f(probe);
        probe[i] = x[i];
        probe[j] = x[j];
        return v;
      };
      double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * hi * hj);
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  return H;
}

MaximizeResult maximize_bfgs(const Objective& f, Eigen::VectorXd x0, const MaximizeOptions& options) {
  // Work on -f so the textbook minimization update applies.
  const Eigen::Index k = x0.size();
  MaximizeResult result;
  result.x = std::move(x0);
  double fx = -f(result.x);
  result.value = -fx;
  if (!std::isfinite(fx)) return result;
  if (k == 0) {
    result.converged = true;
    return result;
  }

  Eigen::VectorXd g = -fd_gradient(f, result.x);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(k, k);
  bool fresh_metric = true;

  for (int iter = 0; iter < options.max_iter; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < options.grad_tol) {
      result.converged = true;
      break;
    }
    Eigen::VectorXd dir = -Hinv * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      Hinv.setIdentity();
      fresh_metric = true;
      dir = -g;
      slope = g.dot(dir);
    }
    double cap = dir.lpNorm<Eigen::Infinity>();
    if (cap > options.max_step) dir *= options.max_step / cap;
    slope = g.dot(dir);

    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = result.x + step * dir;
      f_new = -f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope && f_new < fx) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (fresh_metric) {
        // No ascent direction left at finite-difference resolution.
        result.converged = true;
        break;
      }
      Hinv.setIdentity();
      fresh_metric = true;
      continue;
    }

    Eigen::VectorXd g_new = -fd_gradient(f, x_new);
    Eigen::VectorXd s = x_new - result.x;
    Eigen::VectorXd y = g_new - g;
    double sy = s.dot(y);
    double rel_change = std::abs(f_new - fx) / std::max(std::abs(fx), 1.0);

    result.x = std::move(x_new);
    fx = f_new;
    g = std::move(g_new);
    result.value = -fx;
    result.iterations = iter + 1;

    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_metric) Hinv *= sy / y.squaredNorm();
      double rho = 1.0 / sy;
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
      fresh_metric = false;
    }
    if (rel_change < options.rel_tol || g.lpNorm<Eigen::Infinity>() < options.grad_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace frailcwm
