#include "frailcwm/selection.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <type_traits>
#include <variant>
#include <stdexcept>

#include <fmt/format.h>

#include "frailcwm/parallel.hpp"

namespace frailcwm {

ModelConfig model_config_for(const ModelData& data, int G, Family family) {
  ModelConfig config;
  config.G = G;
  config.family = family;
  config.p = static_cast<long>(data.p());
  config.category_counts = data.blocks.category_counts;
  config.m = static_cast<long>(data.m());
  return config;
}

long count_parameters(const ModelConfig& config) {
  const long G = config.G;
  long categorical = 0;
  for (int k : config.category_counts) categorical += k - 1;
  return G * (1 + config.m) + G * config.p * (config.p + 3) / 2 + G * categorical +
         G * parameter_count(config.family) + G * config.f + (G - 1);
}

double bic(double loglik, long d, double N) { return 2.0 * loglik - static_cast<double>(d) * std::log(N); }

std::uint64_t restart_seed(std::uint64_t seed, int G, Family family, int restart) {
  return derive_seed(seed, {static_cast<std::uint64_t>(G), static_cast<std::uint64_t>(family),
                            static_cast<std::uint64_t>(restart)});
}

GridResult grid_search(const ModelData& data, const std::vector<int>& Gs, const std::vector<Family>& families,
                       Algorithm algorithm, int restarts, std::uint64_t seed, const EmOptions& base,
                       unsigned threads) {
  if (Gs.empty() || families.empty()) throw std::invalid_argument("grid_search: empty G or family set");
  if (restarts < 1) throw std::invalid_argument("grid_search: restarts must be at least 1");
  for (int G : Gs)
    if (G < 1) throw std::invalid_argument("grid_search: G must be at least 1");

  GridResult result;
  for (int G : Gs)
    for (Family family : families) {
      GridCell cell;
      cell.G = G;
      cell.family = family;
      cell.restarts = restarts;
      cell.restart_logliks.assign(static_cast<std::size_t>(restarts), std::numeric_limits<double>::quiet_NaN());
      cell.restart_errors.assign(static_cast<std::size_t>(restarts), {});
      cell.d = count_parameters(model_config_for(data, G, family));
      result.cells.push_back(std::move(cell));
    }

  const std::size_t tasks = result.cells.size() * static_cast<std::size_t>(restarts);
  std::vector<std::optional<ModelFit>> fits(tasks);
  parallel_for(tasks, threads, [&](std::size_t k) {
    auto& cell = result.cells[k / static_cast<std::size_t>(restarts)];
    auto r = static_cast<int>(k % static_cast<std::size_t>(restarts));
    EmOptions options = base;
    options.seed = restart_seed(seed, cell.G, cell.family, r);
    try {
      ModelFit fit = run_em(data, cell.G, cell.family, algorithm, options);
      if (fit.degenerate) {
        cell.restart_errors[static_cast<std::size_t>(r)] = fit.diagnostic;
        return;
      }
      cell.restart_logliks[static_cast<std::size_t>(r)] = fit.final_loglik;
      fit.posterior.resize(0, 0);  // recomputed for the winner only
      fits[k] = std::move(fit);
    } catch (const std::exception& e) {
      cell.restart_errors[static_cast<std::size_t>(r)] = e.what();
    }
  });

  double best_bic = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < result.cells.size(); ++c) {
    auto& cell = result.cells[c];
    std::optional<std::size_t> winner;
    for (int r = 0; r < restarts; ++r) {
      double ll = cell.restart_logliks[static_cast<std::size_t>(r)];
      if (std::isnan(ll) || !std::isfinite(ll)) continue;
      ++cell.successful;
      if (!winner || ll > cell.restart_logliks[*winner]) winner = static_cast<std::size_t>(r);
    }
    if (!winner) continue;
    cell.failed = false;
    cell.best_loglik = cell.restart_logliks[*winner];
    cell.bic = bic(cell.best_loglik, cell.d, static_cast<double>(data.size()));
    cell.best_fit = std::move(fits[c * static_cast<std::size_t>(restarts) + *winner]);
    cell.best_fit->posterior = e_step(data, cell.best_fit->params);
    if (cell.bic > best_bic) {
      best_bic = cell.bic;
      result.best = c;
    }
  }
  return result;
}

namespace {

void check_grid(const std::vector<double>& t_grid) {
  if (t_grid.empty()) throw std::invalid_argument("time grid is empty");
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    if (!(t_grid[k] > 0.0) || !std::isfinite(t_grid[k]))
      throw std::invalid_argument("time grid values must be positive and finite");
    if (k > 0 && !(t_grid[k] > t_grid[k - 1]))
      throw std::invalid_argument("time grid must be strictly ascending");
  }
}

double linear_predictor(const SurvivalParams& params, const Eigen::VectorXd& profile) {
  if (profile.size() != params.beta.size())
    throw std::invalid_argument(fmt::format("profile has {} entries, the model has {} regression columns",
                                            profile.size(), params.beta.size()));
  return params.beta.size() > 0 ? params.beta.dot(profile) : 0.0;
}

// dH0/d(natural baseline parameters) at t.
std::vector<double> cumhazard_partials(const Baseline& baseline, double t) {
  return std::visit(
      [t](const auto& b) -> std::vector<double> {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, Exponential>) {
          return {t};
        } else if constexpr (std::is_same_v<B, Weibull>) {
          double tr = std::pow(t, b.shape);
          return {tr, b.scale * tr * std::log(t)};
        } else if constexpr (std::is_same_v<B, Gompertz>) {
          double em1 = std::expm1(b.shape * t);
          double e = em1 + 1.0;
          return {em1 / b.shape, b.scale * (t * e / b.shape - em1 / (b.shape * b.shape))};
        } else {
          double z = (std::log(t) - b.location) / b.scale;
          constexpr double kLogSqrt2Pi = 0.91893853320467274178;
          double ratio = std::exp(-0.5 * z * z - kLogSqrt2Pi - log_normal_sf(z));  // phi(z) / Q(z)
          return {-ratio / b.scale, -ratio * z / b.scale};
        }
      },
      baseline);
}

}  // namespace

Eigen::VectorXd survival_gradient(const SurvivalParams& params, const Eigen::VectorXd& profile, double t) {
  const double lp = linear_predictor(params, profile);
  const double risk = std::exp(lp);
  const double H = cumhazard0(params.baseline, t);
  const double S = std::exp(-H * risk);
  const Eigen::Index m = params.beta.size();
  const Eigen::Index b = parameter_count(family_of(params.baseline));
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(m + b + 1);
  if (m > 0) grad.head(m) = -S * H * risk * profile;
  auto partials = cumhazard_partials(params.baseline, t);
  auto jac = natural_jacobian(params.baseline);
  for (Eigen::Index k = 0; k < b; ++k)
    grad[m + k] = -S * risk * partials[static_cast<std::size_t>(k)] * jac[static_cast<std::size_t>(k)];
  return grad;
}

Curve survival_curve(const SurvivalParams& params, const std::optional<Eigen::MatrixXd>& covariance,
                     const Eigen::VectorXd& profile, const std::vector<double>& t_grid) {
  check_grid(t_grid);
  const double risk = std::exp(linear_predictor(params, profile));
  const Eigen::Index dim = params.beta.size() + parameter_count(family_of(params.baseline)) + 1;
  std::optional<Eigen::MatrixXd> cov = covariance;
  if (cov && (cov->rows() != dim || cov->cols() != dim || !cov->allFinite())) cov.reset();

  Curve curve;
  curve.has_bands = cov.has_value();
  for (double t : t_grid) {
    CurvePoint point;
    point.t = t;
    point.value = std::exp(-cumhazard0(params.baseline, t) * risk);
    if (cov) {
      Eigen::VectorXd g = survival_gradient(params, profile, t);
      double var = std::max(0.0, g.dot(*cov * g));
      double se = std::sqrt(var);
      point.se = se;
      point.lower = std::clamp(point.value - 1.96 * se, 0.0, 1.0);
      point.upper = std::clamp(point.value + 1.96 * se, 0.0, 1.0);
    }
    curve.points.push_back(point);
  }
  return curve;
}

Curve hazard_curve(const SurvivalParams& params, const Eigen::VectorXd& profile, const std::vector<double>& t_grid) {
  check_grid(t_grid);
  const double lp = linear_predictor(params, profile);
  Curve curve;
  for (double t : t_grid) {
    CurvePoint point;
    point.t = t;
    point.value = lp == 0.0 ? hazard0(params.baseline, t) : std::exp(log_hazard0(params.baseline, t) + lp);
    curve.points.push_back(point);
  }
  return curve;
}

std::string_view effect_name(FrailtyEffect effect) {
  switch (effect) {
    case FrailtyEffect::protective: return "protective";
    case FrailtyEffect::risk: return "risk";
    default: return "neutral";
  }
}

FrailtyEffect classify_frailty(const FrailtyPosterior& posterior) {
  if (posterior.ci_low > 1.0) return FrailtyEffect::risk;
  if (posterior.ci_high < 1.0) return FrailtyEffect::protective;
  return FrailtyEffect::neutral;
}

std::vector<CellStats> cell_statistics(const ModelData& data, const ModelParams& params, const Partition& partition) {
  if (params.size() != static_cast<std::size_t>(partition.G) || partition.assignment.size() != data.size())
    throw std::invalid_argument("cell_statistics: parameters, partition and data disagree");
  const std::size_t J = data.group_count;
  std::vector<CellStats> table(static_cast<std::size_t>(partition.G) * J);
  for (int g = 0; g < partition.G; ++g)
    for (std::size_t j = 0; j < J; ++j) {
      auto& c = table[static_cast<std::size_t>(g) * J + j];
      c.group = j;
      c.cluster = g;
    }
  for (std::size_t i = 0; i < data.size(); ++i) {
    int g = partition.assignment[i];
    const auto& sp = params.clusters[static_cast<std::size_t>(g)].survival;
    double lp = data.m() > 0 ? data.blocks.X.row(static_cast<Eigen::Index>(i)).dot(sp.beta) : 0.0;
    auto& c = table[static_cast<std::size_t>(g) * J + data.group[i]];
    ++c.n;
    c.events += data.status[i];
    c.cumulative_hazard += cumhazard0(sp.baseline, data.time[i]) * std::exp(lp);
  }
  std::vector<CellStats> out;
  for (auto& c : table)
    if (c.n > 0) out.push_back(c);
  return out;
}

std::vector<FrailtyRow> frailty_estimates(const std::vector<CellStats>& cells, const ModelParams& params) {
  std::vector<FrailtyRow> rows;
  for (const auto& c : cells) {
    if (c.n == 0) continue;
    FrailtyRow row;
    row.group = c.group;
    row.cluster = c.cluster;
    row.events = c.events;
    row.cumulative_hazard = c.cumulative_hazard;
    row.posterior = posterior_frailty(params.clusters.at(static_cast<std::size_t>(c.cluster)).survival.theta,
                                      c.events, c.cumulative_hazard);
    row.effect = classify_frailty(row.posterior);
    rows.push_back(row);
  }
  return rows;
}

std::vector<FrailtyRow> frailty_estimates(const ModelData& data, const ModelFit& fit) {
  return frailty_estimates(cell_statistics(data, fit.params, fit.partition), fit.params);
}

}  // namespace frailcwm
