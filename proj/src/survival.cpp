#include "frailcwm/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "frailcwm/error.hpp"
#include "frailcwm/frailty.hpp"

namespace frailcwm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct CellSums {
  double linear = 0.0;  // sum delta (log h0 + eta)
  int events = 0;
  double hazard = 0.0;  // sum H0 e^eta
};

// Accumulates one cell. Returns false if any term is non-finite.
template <class B>
bool accumulate_cell(const B& baseline, const double* time, const double* log_time,
                     const int* status, const double* eta, std::size_t n, CellSums& sums) {
  for (std::size_t i = 0; i < n; ++i) {
    double H = baseline.cumulative_hazard(time[i], log_time[i]) * std::exp(eta[i]);
    if (!std::isfinite(H)) return false;
    sums.hazard += H;
    if (status[i]) {
      double lh = baseline.log_hazard(time[i], log_time[i]);
      if (!std::isfinite(lh)) return false;
      sums.linear += lh + eta[i];
      ++sums.events;
    }
  }
  return std::isfinite(sums.hazard);
}

double cell_value(const CellSums& sums, double theta) {
  return sums.linear + log_laplace_deriv(theta, sums.events, sums.hazard);
}

// Non-throwing evaluation used by the optimizer; -inf outside the domain.
double sample_loglik(const SurvivalSample& sample, const SurvivalParams& params) {
  if (sample.size() == 0) return 0.0;
  Eigen::VectorXd eta = sample.covariate_count() > 0 ? Eigen::VectorXd(sample.X() * params.beta)
                                                     : Eigen::VectorXd::Zero(sample.size());
  if (!eta.allFinite()) return kNegInf;
  return std::visit(
      [&](const auto& b) {
        double total = 0.0;
        for (const auto& cell : sample.cells()) {
          CellSums sums;
          std::size_t n = cell.end - cell.begin;
          if (!accumulate_cell(b, sample.time().data() + cell.begin,
                               sample.log_time().data() + cell.begin,
                               sample.status().data() + cell.begin, eta.data() + cell.begin, n,
                               sums))
            return kNegInf;
          total += cell_value(sums, params.theta);
        }
        return std::isfinite(total) ? total : kNegInf;
      },
      params.baseline);
}

bool params_valid(const SurvivalParams& params) {
  if (!params.beta.allFinite() || !(params.theta > 0.0) || !std::isfinite(params.theta))
    return false;
  try {
    validate(params.baseline);
  } catch (const std::invalid_argument&) {
    return false;
  }
  return true;
}

}  // namespace

SurvivalSample::SurvivalSample(const std::vector<double>& time, const std::vector<int>& status,
                               const Eigen::MatrixXd& X, const std::vector<std::size_t>& group) {
  const std::size_t n = time.size();
  if (status.size() != n || group.size() != n || static_cast<std::size_t>(X.rows()) != n)
    throw std::invalid_argument("SurvivalSample: inconsistent row counts");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return group[a] < group[b]; });
  time_.resize(n);
  log_time_.resize(n);
  status_.resize(n);
  X_.resize(static_cast<Eigen::Index>(n), X.cols());
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t i = order[r];
    if (!(time[i] > 0.0)) throw std::invalid_argument("SurvivalSample: time must be positive");
    time_[r] = time[i];
    log_time_[r] = std::log(time[i]);
    status_[r] = status[i];
    events_ += static_cast<std::size_t>(status[i] != 0);
    X_.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(i));
    if (r == 0 || group[i] != cells_.back().group)
      cells_.push_back({group[i], r, r + 1});
    else
      cells_.back().end = r + 1;
  }
}

double group_cluster_loglik(std::span<const double> time, std::span<const int> status,
                            const Eigen::Ref<const Eigen::MatrixXd>& X, const SurvivalParams& params) {
  const std::size_t n = time.size();
  if (status.size() != n || static_cast<std::size_t>(X.rows()) != n)
    throw std::invalid_argument("group_cluster_loglik: inconsistent row counts");
  if (n == 0) return 0.0;
  if (X.cols() != params.beta.size())
    throw std::invalid_argument("group_cluster_loglik: covariate count does not match beta");
  validate(params.baseline);
  Eigen::VectorXd eta = X.cols() > 0 ? Eigen::VectorXd(X * params.beta) : Eigen::VectorXd::Zero(n);
  std::vector<double> log_time(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(time[i] > 0.0)) throw std::invalid_argument("group_cluster_loglik: time must be positive");
    log_time[i] = std::log(time[i]);
  }
  CellSums sums;
  bool ok = eta.allFinite() &&
            std::visit(
                [&](const auto& b) {
                  return accumulate_cell(b, time.data(), log_time.data(), status.data(), eta.data(),
                                         n, sums);
                },
                params.baseline);
  double value = ok ? cell_value(sums, params.theta) : kNegInf;
  if (!std::isfinite(value))
    throw std::domain_error("group_cluster_loglik: non-finite covariate or hazard contribution");
  return value;
}

double obs_marginal_logdensity(double y, int delta, const Eigen::Ref<const Eigen::VectorXd>& x,
                               const SurvivalParams& params) {
  Eigen::MatrixXd row = x.transpose();
  return group_cluster_loglik(std::span<const double>(&y, 1), std::span<const int>(&delta, 1), row,
                              params);
}

double cluster_survival_loglik(const SurvivalSample& sample, const SurvivalParams& params) {
  if (sample.covariate_count() != params.beta.size())
    throw std::invalid_argument("cluster_survival_loglik: covariate count does not match beta");
  validate(params.baseline);
  double value = sample_loglik(sample, params);
  if (!std::isfinite(value))
    throw std::domain_error("cluster_survival_loglik: non-finite contribution");
  return value;
}

Eigen::VectorXd pack(const SurvivalParams& params) {
  auto base = to_unconstrained(params.baseline);
  const Eigen::Index m = params.beta.size();
  Eigen::VectorXd u(m + static_cast<Eigen::Index>(base.size()) + 1);
  u.head(m) = params.beta;
  for (std::size_t k = 0; k < base.size(); ++k) u[m + static_cast<Eigen::Index>(k)] = base[k];
  u[u.size() - 1] = std::log(std::max(params.theta, kThetaMin));
  return u;
}

SurvivalParams unpack(Family family, Eigen::Index m, const Eigen::VectorXd& u) {
  const Eigen::Index b = parameter_count(family);
  if (u.size() != m + b + 1)
    throw std::invalid_argument(
        fmt::format("unpack: expected {} unconstrained values, got {}", m + b + 1, u.size()));
  SurvivalParams params;
  params.beta = u.head(m);
  params.baseline = from_unconstrained(family, std::span<const double>(u.data() + m, b));
  params.theta = std::max(std::exp(u[m + b]), kThetaMin);
  return params;
}

std::size_t survival_size_floor(Eigen::Index m, Family family) {
  return static_cast<std::size_t>(m + parameter_count(family) + 1 + 5);
}

SurvivalParams default_survival_init(const SurvivalSample& sample, Family family) {
  SurvivalParams params;
  params.beta = Eigen::VectorXd::Zero(sample.covariate_count());
  params.theta = 0.1;
  double exposure = std::accumulate(sample.time().begin(), sample.time().end(), 0.0);
  double events = static_cast<double>(sample.event_count());
  double rate = events > 0 && exposure > 0 ? events / exposure : 1.0;
  switch (family) {
    case Family::exponential: params.baseline = Exponential{rate}; break;
    case Family::weibull: params.baseline = Weibull{rate, 1.0}; break;
    case Family::gompertz: params.baseline = Gompertz{rate, 1.0}; break;
    case Family::lognormal: {
      double sum = 0.0, sum_sq = 0.0;
      std::size_t k = 0;
      for (std::size_t i = 0; i < sample.size(); ++i) {
        if (!sample.status()[i]) continue;
        sum += sample.log_time()[i];
        sum_sq += sample.log_time()[i] * sample.log_time()[i];
        ++k;
      }
      double mean = k > 0 ? sum / static_cast<double>(k) : 0.0;
      double var = k > 1 ? (sum_sq - static_cast<double>(k) * mean * mean) / static_cast<double>(k - 1)
                         : 1.0;
      double sd = var > 1e-12 ? std::sqrt(var) : 1.0;
      params.baseline = Lognormal{mean, sd};
      break;
    }
  }
  return params;
}

double SurvivalObjective::operator()(const Eigen::VectorXd& u) const {
  if (!u.allFinite()) return kNegInf;
  const Eigen::Index m = sample_->covariate_count();
  const Eigen::Index b = parameter_count(family_);
  SurvivalParams params;
  params.beta = u.head(m);
  std::vector<double> base(u.data() + m, u.data() + m + b);
  for (Eigen::Index k = 0; k < b; ++k)
    if (!(family_ == Family::lognormal && k == 0)) base[static_cast<std::size_t>(k)] = std::exp(base[static_cast<std::size_t>(k)]);
  switch (family_) {
    case Family::exponential: params.baseline = Exponential{base[0]}; break;
    case Family::weibull: params.baseline = Weibull{base[0], base[1]}; break;
    case Family::gompertz: params.baseline = Gompertz{base[0], base[1]}; break;
    case Family::lognormal: params.baseline = Lognormal{base[0], base[1]}; break;
  }
  params.theta = std::max(std::exp(u[m + b]), kThetaMin);
  if (!params_valid(params)) return kNegInf;
  return sample_loglik(*sample_, params);
}

Eigen::VectorXd SurvivalObjective::gradient(const Eigen::VectorXd& u) const {
  return fd_gradient(as_function(), u);
}

Eigen::MatrixXd SurvivalObjective::hessian(const Eigen::VectorXd& u) const {
  return fd_hessian(as_function(), u);
}

Objective SurvivalObjective::as_function() const {
  return [this](const Eigen::VectorXd& u) { return (*this)(u); };
}

namespace {

// Inverse of -H. When theta sits on its floor the log-theta direction is flat;
// the remaining block is inverted and theta gets zero variance.
std::optional<Eigen::MatrixXd> covariance_from_hessian(const Eigen::MatrixXd& H, bool theta_on_floor) {
  const Eigen::Index k = H.rows();
  Eigen::MatrixXd info = -0.5 * (H + H.transpose());
  auto invert = [](const Eigen::MatrixXd& A) -> std::optional<Eigen::MatrixXd> {
    if (A.size() == 0) return Eigen::MatrixXd(0, 0);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
    if (!inv.allFinite()) return std::nullopt;
    return Eigen::MatrixXd(0.5 * (inv + inv.transpose()));
  };
  if (auto full = invert(info)) return full;
  if (!theta_on_floor) return std::nullopt;
  auto reduced = invert(info.topLeftCorner(k - 1, k - 1));
  if (!reduced) return std::nullopt;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
  cov.topLeftCorner(k - 1, k - 1) = *reduced;
  return cov;
}

}  // namespace

SurvivalFitResult fit_survival_mle(const SurvivalSample& sample, Family family,
                                   const std::optional<SurvivalParams>& init,
                                   const MaximizeOptions& options) {
  const Eigen::Index m = sample.covariate_count();
  if (sample.size() < survival_size_floor(m, family))
    throw FitPreconditionError(fmt::format("survival fit needs at least {} observations, got {}",
                                           survival_size_floor(m, family), sample.size()));
  if (sample.event_count() == 0) throw FitPreconditionError("survival fit needs at least one event");
  if (m > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sample.X());
    if (qr.rank() < m)
      throw FitPreconditionError(
          fmt::format("regression design has rank {} < {} on this cluster", qr.rank(), m));
  }

  SurvivalParams start = init ? *init : default_survival_init(sample, family);
  if (start.beta.size() != m || family_of(start.baseline) != family)
    throw std::invalid_argument("fit_survival_mle: initial values do not match the model");

  SurvivalObjective objective(sample, family);
  Eigen::VectorXd u0 = pack(start);
  if (!std::isfinite(objective(u0))) {
    // Warm start left the feasible region on this partition; fall back to defaults.
    u0 = pack(default_survival_init(sample, family));
  }
  auto opt = maximize_bfgs(objective.as_function(), u0, options);

  SurvivalFitResult result;
  result.params = unpack(family, m, opt.x);
  result.loglik = opt.value;
  result.converged = opt.converged && std::isfinite(opt.value);
  result.iterations = opt.iterations;
  if (result.converged) {
    bool on_floor = opt.x[opt.x.size() - 1] <= std::log(kThetaMin) + 1e-8;
    result.covariance = covariance_from_hessian(objective.hessian(opt.x), on_floor);
  }
  return result;
}

std::vector<WaldRow> wald_tests(const SurvivalFitResult& result,
                                const std::vector<std::string>& beta_names) {
  const auto& p = result.params;
  const Eigen::Index m = p.beta.size();
  const Family family = family_of(p.baseline);
  const Eigen::Index b = parameter_count(family);
  std::optional<Eigen::MatrixXd> cov = result.covariance;
  if (cov && (cov->rows() != m + b + 1 || !cov->allFinite())) cov.reset();

  boost::math::normal_distribution<double> normal;
  auto se_at = [&](Eigen::Index idx, double factor) -> std::optional<double> {
    if (!cov) return std::nullopt;
    double v = (*cov)(idx, idx);
    if (!(v > 0.0)) return std::nullopt;
    return std::abs(factor) * std::sqrt(v);
  };
  auto tested = [&](WaldRow row) {
    if (row.std_error) {
      row.z = row.estimate / *row.std_error;
      row.p_value = 2.0 * boost::math::cdf(boost::math::complement(normal, std::abs(*row.z)));
    }
    return row;
  };

  std::vector<WaldRow> rows;
  for (Eigen::Index k = 0; k < m; ++k) {
    WaldRow row;
    row.parameter = static_cast<std::size_t>(k) < beta_names.size()
                        ? "beta[" + beta_names[static_cast<std::size_t>(k)] + "]"
                        : fmt::format("beta[{}]", k + 1);
    row.estimate = p.beta[k];
    row.std_error = se_at(k, 1.0);
    rows.push_back(tested(row));
  }
  auto natural = natural_parameters(p.baseline);
  auto jac = natural_jacobian(p.baseline);
  auto names = parameter_names(family);
  for (Eigen::Index k = 0; k < b; ++k) {
    WaldRow row;
    row.parameter = names[static_cast<std::size_t>(k)];
    row.estimate = natural[static_cast<std::size_t>(k)];
    row.std_error = se_at(m + k, jac[static_cast<std::size_t>(k)]);
    rows.push_back(row);
  }
  WaldRow theta;
  theta.parameter = "theta";
  theta.estimate = p.theta;
  theta.std_error = se_at(m + b, p.theta);
  theta.boundary_approximate = true;
  rows.push_back(tested(theta));
  return rows;
}

}  // namespace frailcwm
