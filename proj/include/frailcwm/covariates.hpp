#pragma once

#include <vector>

#include <Eigen/Dense>

namespace frailcwm {

inline constexpr double kProbabilityFloor = 1e-12;

struct GaussianParams {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct MultinomialParams {
  std::vector<Eigen::VectorXd> probs;  // one probability vector per categorical variable
};

/// Multivariate normal log-density through a Cholesky factor of the covariance.
/// p = 0 gives 0. Throws std::domain_error if the covariance is not PD.
double log_gaussian_density(const Eigen::Ref<const Eigen::VectorXd>& u, const GaussianParams& params);

/// Factorizes once; evaluates many rows.
class GaussianLogDensity {
 public:
  explicit GaussianLogDensity(const GaussianParams& params);
  double operator()(const Eigen::Ref<const Eigen::VectorXd>& u) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_norm_ = 0.0;
};

/// sum_r log pi_r[v_r]. Throws std::invalid_argument for an undeclared category.
double log_multinomial_density(const Eigen::Ref<const Eigen::VectorXi>& v, const MultinomialParams& params);

/// Sample mean and n-divisor covariance; a ridge eps tr(S)/p is added to the
/// diagonal when the smallest eigenvalue falls below 1e-10.
/// Throws std::invalid_argument with fewer than p + 1 rows.
GaussianParams mle_gaussian(const Eigen::Ref<const Eigen::MatrixXd>& rows);

/// Relative frequencies per variable, floored at kProbabilityFloor and renormalized.
MultinomialParams mle_multinomial(const Eigen::Ref<const Eigen::MatrixXi>& rows,
                                  const std::vector<int>& category_counts);

}  // namespace frailcwm
