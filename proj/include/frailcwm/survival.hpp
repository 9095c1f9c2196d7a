#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "frailcwm/baseline.hpp"
#include "frailcwm/optim.hpp"

namespace frailcwm {

/// Survival block of one cluster: regression coefficients, baseline, frailty variance.
struct SurvivalParams {
  Eigen::VectorXd beta;
  Baseline baseline = Exponential{};
  double theta = 0.1;
};

/// Survival rows of one cluster, regrouped into contiguous (group) cells.
class SurvivalSample {
 public:
  struct Cell {
    std::size_t group;
    std::size_t begin;
    std::size_t end;
  };

  /// `group[i]` is the observed group of row i. Rows are stably reordered by group.
  SurvivalSample(const std::vector<double>& time, const std::vector<int>& status,
                 const Eigen::MatrixXd& X, const std::vector<std::size_t>& group);

  std::size_t size() const { return time_.size(); }
  Eigen::Index covariate_count() const { return X_.cols(); }
  std::size_t event_count() const { return events_; }
  const std::vector<Cell>& cells() const { return cells_; }
  const std::vector<double>& time() const { return time_; }
  const std::vector<double>& log_time() const { return log_time_; }
  const std::vector<int>& status() const { return status_; }
  const Eigen::MatrixXd& X() const { return X_; }

 private:
  std::vector<double> time_;
  std::vector<double> log_time_;
  std::vector<int> status_;
  Eigen::MatrixXd X_;
  std::vector<Cell> cells_;
  std::size_t events_ = 0;
};

/// Integrated-frailty log-likelihood of one (group, cluster) cell:
///   sum delta (log h0 + x'beta) + log[(-1)^d L^(d)(sum H0 e^{x'beta}; theta)].
/// Empty cell gives 0. Throws std::domain_error on a non-finite contribution.
double group_cluster_loglik(std::span<const double> time, std::span<const int> status,
                            const Eigen::Ref<const Eigen::MatrixXd>& X, const SurvivalParams& params);

/// Single-observation marginal density with the frailty integrated out.
double obs_marginal_logdensity(double y, int delta, const Eigen::Ref<const Eigen::VectorXd>& x,
                               const SurvivalParams& params);

/// Sum of group_cluster_loglik over the sample's cells.
double cluster_survival_loglik(const SurvivalSample& sample, const SurvivalParams& params);

/// Unconstrained layout: [beta (m), baseline (b, positive parts on log scale), log theta].
Eigen::VectorXd pack(const SurvivalParams& params);
SurvivalParams unpack(Family family, Eigen::Index m, const Eigen::VectorXd& u);

/// Minimum cluster size for a survival fit: m + b + f + 5.
std::size_t survival_size_floor(Eigen::Index m, Family family);

/// Moment-based starting values: beta = 0, theta = 0.1, rate = events / exposure,
/// shape = 1, lognormal location/scale from the log event times.
SurvivalParams default_survival_init(const SurvivalSample& sample, Family family);

/// The log-likelihood as a function of the unconstrained vector, plus the
/// finite-difference derivatives the optimizer uses.
class SurvivalObjective {
 public:
  SurvivalObjective(const SurvivalSample& sample, Family family)
      : sample_(&sample), family_(family) {}
  /// Returns -inf for parameter vectors outside the model's domain.
  double operator()(const Eigen::VectorXd& u) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& u) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& u) const;
  Objective as_function() const;

 private:
  const SurvivalSample* sample_;
  Family family_;
};

struct SurvivalFitResult {
  SurvivalParams params;
  double loglik = 0.0;
  /// Inverse negative Hessian over the unconstrained vector; empty when not PD.
  std::optional<Eigen::MatrixXd> covariance;
  bool converged = false;
  int iterations = 0;
};

/// Maximum-likelihood fit of one cluster's shared-frailty survival model.
/// Throws FitPreconditionError when the sample is too small, has no events or
/// a rank-deficient design. Non-convergence is reported through `converged`.
SurvivalFitResult fit_survival_mle(const SurvivalSample& sample, Family family,
                                   const std::optional<SurvivalParams>& init = std::nullopt,
                                   const MaximizeOptions& options = {});

struct WaldRow {
  std::string parameter;
  double estimate = 0.0;
  std::optional<double> std_error;
  std::optional<double> z;
  std::optional<double> p_value;
  bool boundary_approximate = false;
};

/// Natural-scale Wald table: beta entries, baseline parameters (no test), theta
/// (tested against 0, flagged boundary-approximate). Standard errors come from
/// the delta method; absent when the covariance is unavailable.
std::vector<WaldRow> wald_tests(const SurvivalFitResult& result,
                                const std::vector<std::string>& beta_names = {});

}  // namespace frailcwm
