#include "frailcwm/covariates.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace frailcwm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kRidge = 1e-8;
constexpr double kMinEigen = 1e-10;
}  // namespace

GaussianLogDensity::GaussianLogDensity(const GaussianParams& params) : mean_(params.mean) {
  const Eigen::Index p = params.mean.size();
  if (params.cov.rows() != p || params.cov.cols() != p)
    throw std::invalid_argument("Gaussian covariance dimension does not match the mean");
  if (p == 0) return;
  llt_.compute(params.cov);
  if (llt_.info() != Eigen::Success)
    throw std::domain_error("Gaussian covariance is not positive definite");
  double log_det = 2.0 * llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(p) * kLog2Pi + log_det);
}

double GaussianLogDensity::operator()(const Eigen::Ref<const Eigen::VectorXd>& u) const {
  if (u.size() != mean_.size()) throw std::invalid_argument("Gaussian density: dimension mismatch");
  if (mean_.size() == 0) return 0.0;
  Eigen::VectorXd z = llt_.matrixL().solve(u - mean_);
  return log_norm_ - 0.5 * z.squaredNorm();
}

double log_gaussian_density(const Eigen::Ref<const Eigen::VectorXd>& u, const GaussianParams& params) {
  return GaussianLogDensity(params)(u);
}

double log_multinomial_density(const Eigen::Ref<const Eigen::VectorXi>& v, const MultinomialParams& params) {
  if (static_cast<std::size_t>(v.size()) != params.probs.size())
    throw std::invalid_argument("multinomial density: dimension mismatch");
  double total = 0.0;
  for (std::size_t r = 0; r < params.probs.size(); ++r) {
    int level = v[static_cast<Eigen::Index>(r)];
    if (level < 0 || level >= params.probs[r].size())
      throw std::invalid_argument(fmt::format("categorical variable {}: undeclared category {}", r + 1, level));
    total += std::log(params.probs[r][level]);
  }
  return total;
}

GaussianParams mle_gaussian(const Eigen::Ref<const Eigen::MatrixXd>& rows) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index p = rows.cols();
  if (n < p + 1)
    throw std::invalid_argument(fmt::format("Gaussian MLE needs at least {} rows, got {}", p + 1, n));
  GaussianParams params;
  params.mean = rows.colwise().mean().transpose();
  Eigen::MatrixXd centered = rows.rowwise() - params.mean.transpose();
  params.cov = centered.transpose() * centered / static_cast<double>(n);
  if (p > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(params.cov, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < kMinEigen) {
      double trace = params.cov.trace();
      double ridge = kRidge * (trace > 0.0 ? trace / static_cast<double>(p) : 1.0);
      // Identical rows give a zero matrix; keep the ridge above the eigenvalue floor.
      ridge = std::max(ridge, kMinEigen);
      params.cov.diagonal().array() += ridge;
    }
  }
  return params;
}

MultinomialParams mle_multinomial(const Eigen::Ref<const Eigen::MatrixXi>& rows,
                                  const std::vector<int>& category_counts) {
  if (static_cast<std::size_t>(rows.cols()) != category_counts.size())
    throw std::invalid_argument("multinomial MLE: column count does not match category counts");
  if (rows.rows() == 0 && rows.cols() > 0) throw std::invalid_argument("multinomial MLE: empty cluster");
  MultinomialParams params;
  for (std::size_t r = 0; r < category_counts.size(); ++r) {
    Eigen::VectorXd freq = Eigen::VectorXd::Zero(category_counts[r]);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      int level = rows(i, static_cast<Eigen::Index>(r));
      if (level < 0 || level >= category_counts[r])
        throw std::invalid_argument("multinomial MLE: undeclared category");
      freq[level] += 1.0;
    }
    freq /= static_cast<double>(rows.rows());
    freq = freq.cwiseMax(kProbabilityFloor);
    freq /= freq.sum();
    params.probs.push_back(std::move(freq));
  }
  return params;
}

}  // namespace frailcwm
