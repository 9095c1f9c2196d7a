#include "frailcwm/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "frailcwm/error.hpp"
#include "frailcwm/frailty.hpp"
#include "frailcwm/parallel.hpp"
#include "frailcwm/selection.hpp"

namespace frailcwm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Per-observation, per-cluster pieces of the classification log-likelihood.
struct ComponentTerms {
  Eigen::MatrixXd linear;     // delta (log h0 + x'beta)
  Eigen::MatrixXd hazard;     // H0(y) e^{x'beta}
  Eigen::MatrixXd covariate;  // log tau + log phi + log xi
  std::vector<double> theta;
};

ComponentTerms compute_terms(const ModelData& data, const ModelParams& params) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto G = static_cast<Eigen::Index>(params.size());
  ComponentTerms terms;
  terms.linear.resize(n, G);
  terms.hazard.resize(n, G);
  terms.covariate.resize(n, G);
  for (Eigen::Index g = 0; g < G; ++g) {
    const auto& cluster = params.clusters[static_cast<std::size_t>(g)];
    terms.theta.push_back(cluster.survival.theta);
    Eigen::VectorXd eta = data.m() > 0 ? Eigen::VectorXd(data.blocks.X * cluster.survival.beta)
                                       : Eigen::VectorXd::Zero(n);
    std::visit(
        [&](const auto& b) {
          for (Eigen::Index i = 0; i < n; ++i) {
            double t = data.time[static_cast<std::size_t>(i)];
            double log_t = std::log(t);
            terms.hazard(i, g) = b.cumulative_hazard(t, log_t) * std::exp(eta[i]);
            terms.linear(i, g) =
                data.status[static_cast<std::size_t>(i)] ? b.log_hazard(t, log_t) + eta[i] : 0.0;
          }
        },
        cluster.survival.baseline);

    double log_tau = cluster.tau > 0.0 ? std::log(cluster.tau) : kNegInf;
    GaussianLogDensity gaussian(cluster.gaussian);
    for (Eigen::Index i = 0; i < n; ++i) {
      double value = log_tau;
      if (data.p() > 0) value += gaussian(data.blocks.U.row(i).transpose());
      if (data.q() > 0)
        value += log_multinomial_density(data.blocks.V.row(i).transpose(), cluster.multinomial);
      terms.covariate(i, g) = value;
    }
  }
  return terms;
}

double lld_or_neginf(double theta, int d, double s) {
  if (!std::isfinite(s) || s < 0.0) return kNegInf;
  return log_laplace_deriv(theta, d, s);
}

// Running (group, cluster) cell sums for a partition.
struct CellTable {
  int G = 0;
  std::size_t J = 0;
  std::vector<double> linear, hazard;
  std::vector<int> events, count;

  CellTable(int G_, std::size_t J_)
      : G(G_), J(J_), linear(G_ * J_, 0.0), hazard(G_ * J_, 0.0), events(G_ * J_, 0), count(G_ * J_, 0) {}

  std::size_t at(int g, std::size_t j) const { return static_cast<std::size_t>(g) * J + j; }

  void add(const ComponentTerms& terms, const ModelData& data, Eigen::Index i, int g, int sign) {
    auto k = at(g, data.group[static_cast<std::size_t>(i)]);
    count[k] += sign;
    if (count[k] == 0) {
      linear[k] = 0.0;
      hazard[k] = 0.0;
      events[k] = 0;
      return;
    }
    linear[k] += sign * terms.linear(i, g);
    hazard[k] = std::max(0.0, hazard[k] + sign * terms.hazard(i, g));
    events[k] += sign * data.status[static_cast<std::size_t>(i)];
  }

  double value(const std::vector<double>& theta, int g, std::size_t j) const {
    auto k = at(g, j);
    if (count[k] == 0) return 0.0;
    return linear[k] + lld_or_neginf(theta[static_cast<std::size_t>(g)], events[k], hazard[k]);
  }
};

CellTable build_cells(const ComponentTerms& terms, const ModelData& data, const Partition& partition) {
  CellTable cells(partition.G, data.group_count);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(data.size()); ++i)
    cells.add(terms, data, i, partition.assignment[static_cast<std::size_t>(i)], +1);
  return cells;
}

double loglik_from_terms(const ComponentTerms& terms, const ModelData& data, const Partition& partition) {
  CellTable cells = build_cells(terms, data, partition);
  double total = 0.0;
  for (int g = 0; g < partition.G; ++g)
    for (std::size_t j = 0; j < data.group_count; ++j) total += cells.value(terms.theta, g, j);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(data.size()); ++i)
    total += terms.covariate(i, partition.assignment[static_cast<std::size_t>(i)]);
  return std::isnan(total) ? kNegInf : total;
}

Eigen::MatrixXd posterior_from_terms(const ComponentTerms& terms, const ModelData& data) {
  const Eigen::Index n = terms.linear.rows();
  const Eigen::Index G = terms.linear.cols();
  Eigen::MatrixXd post(n, G);
  for (Eigen::Index i = 0; i < n; ++i) {
    int delta = data.status[static_cast<std::size_t>(i)];
    double best = kNegInf;
    for (Eigen::Index g = 0; g < G; ++g) {
      double v = terms.linear(i, g) +
                 lld_or_neginf(terms.theta[static_cast<std::size_t>(g)], delta, terms.hazard(i, g)) +
                 terms.covariate(i, g);
      if (std::isnan(v)) v = kNegInf;
      post(i, g) = v;
      best = std::max(best, v);
    }
    if (!std::isfinite(best))
      throw std::domain_error(fmt::format("e_step: observation {} has zero density under every cluster", i + 1));
    double sum = 0.0;
    for (Eigen::Index g = 0; g < G; ++g) {
      post(i, g) = std::exp(post(i, g) - best);
      sum += post(i, g);
    }
    post.row(i) /= sum;
  }
  return post;
}

// Accepts the argmax proposal if it does not lower the objective at the current
// parameters; otherwise applies the proposed moves one at a time, keeping only
// those that increase it. The frailty couples rows of a cell, so a row-wise
// argmax alone can lower the objective.
Partition guarded_assignment(const ComponentTerms& terms, const ModelData& data, const Partition& current,
                             const Partition& proposal) {
  double before = loglik_from_terms(terms, data, current);
  double after = loglik_from_terms(terms, data, proposal);
  if (after >= before) return proposal;

  Partition result = current;
  CellTable cells = build_cells(terms, data, current);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(data.size()); ++i) {
    auto idx = static_cast<std::size_t>(i);
    int from = result.assignment[idx];
    int to = proposal.assignment[idx];
    if (from == to) continue;
    std::size_t j = data.group[idx];
    double old_value = cells.value(terms.theta, from, j) + cells.value(terms.theta, to, j) + terms.covariate(i, from);
    cells.add(terms, data, i, from, -1);
    cells.add(terms, data, i, to, +1);
    double new_value = cells.value(terms.theta, from, j) + cells.value(terms.theta, to, j) + terms.covariate(i, to);
    if (new_value > old_value) {
      result.assignment[idx] = to;
    } else {
      cells.add(terms, data, i, to, -1);
      cells.add(terms, data, i, from, +1);
    }
  }
  return result;
}

std::vector<std::vector<Eigen::Index>> members_of(const Partition& partition) {
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(partition.G));
  for (std::size_t i = 0; i < partition.assignment.size(); ++i)
    members[static_cast<std::size_t>(partition.assignment[i])].push_back(static_cast<Eigen::Index>(i));
  return members;
}

template <class Matrix>
Matrix take_rows(const Matrix& source, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = source.row(rows[r]);
  return out;
}

SurvivalSample sample_of(const ModelData& data, const std::vector<Eigen::Index>& rows) {
  std::vector<double> time;
  std::vector<int> status;
  std::vector<std::size_t> group;
  for (auto i : rows) {
    time.push_back(data.time[static_cast<std::size_t>(i)]);
    status.push_back(data.status[static_cast<std::size_t>(i)]);
    group.push_back(data.group[static_cast<std::size_t>(i)]);
  }
  return SurvivalSample(time, status, take_rows(data.blocks.X, rows), group);
}

std::vector<Eigen::Index> all_rows(const ModelData& data) {
  std::vector<Eigen::Index> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

void check_partition(const ModelData& data, const Partition& partition) {
  if (partition.assignment.size() != data.size())
    throw std::invalid_argument("partition length does not match the data");
  if (partition.G < 1) throw std::invalid_argument("partition needs at least one cluster");
  for (int z : partition.assignment)
    if (z < 0 || z >= partition.G) throw std::invalid_argument("partition label out of range");
}

// Shared state for CEM/SEM bookkeeping of frozen clusters and covariances.
struct Tracker {
  std::vector<int> frozen_run;
  std::vector<std::optional<Eigen::MatrixXd>> covariance;

  explicit Tracker(int G) : frozen_run(static_cast<std::size_t>(G), 0), covariance(static_cast<std::size_t>(G)) {}

  // Returns the index of a cluster frozen `limit` consecutive times, or -1.
  int update(const MStepResult& m, int limit) {
    int stuck = -1;
    for (std::size_t g = 0; g < frozen_run.size(); ++g) {
      frozen_run[g] = m.frozen[g] ? frozen_run[g] + 1 : 0;
      if (m.survival_covariance[g]) covariance[g] = m.survival_covariance[g];
      if (frozen_run[g] >= limit && stuck < 0) stuck = static_cast<int>(g);
    }
    return stuck;
  }
};

void finish_fit(ModelFit& fit, const ModelData& data, Family family) {
  fit.final_loglik = classification_loglik(data, fit.params, fit.partition);
  fit.posterior = e_step(data, fit.params);
  ModelConfig config = model_config_for(data, fit.partition.G, family);
  fit.parameter_count = count_parameters(config);
  fit.bic = bic(fit.final_loglik, fit.parameter_count, data.size());
}

}  // namespace

std::string_view algorithm_name(Algorithm algorithm) {
  return algorithm == Algorithm::cem ? "CEM" : "SEM";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "cem" || name == "CEM") return Algorithm::cem;
  if (name == "sem" || name == "SEM") return Algorithm::sem;
  throw std::invalid_argument(fmt::format("unknown algorithm '{}'", name));
}

ModelData ModelData::from_dataset(const Dataset& dataset) {
  ModelData data;
  data.group_count = dataset.group_count();
  for (const auto& obs : dataset.observations()) {
    data.time.push_back(obs.time);
    data.status.push_back(obs.status);
    data.group.push_back(obs.group);
  }
  data.blocks = split_covariates(dataset);
  return data;
}

std::vector<std::size_t> Partition::sizes() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(G), 0);
  for (int z : assignment) ++out[static_cast<std::size_t>(z)];
  return out;
}

KPrototypesResult kprototypes(const ModelData& data, int G, std::uint64_t seed, int restarts, int max_iter) {
  const auto n = static_cast<Eigen::Index>(data.size());
  if (G < 1) throw std::invalid_argument("k-prototypes: G must be at least 1");
  if (static_cast<Eigen::Index>(G) > n) throw std::invalid_argument("k-prototypes: G exceeds the number of observations");
  if (restarts < 1) throw std::invalid_argument("k-prototypes: restarts must be at least 1");
  const Eigen::Index p = data.p();
  const Eigen::Index q = data.q();
  if (G > 1 && p == 0 && q == 0)
    throw std::invalid_argument("k-prototypes: no marginal covariates to cluster on");

  Eigen::MatrixXd Z = data.blocks.U;
  double mean_var = 0.0;
  for (Eigen::Index c = 0; c < p; ++c) {
    double mu = Z.col(c).mean();
    Z.col(c).array() -= mu;
    double sd = std::sqrt(Z.col(c).squaredNorm() / static_cast<double>(n));
    if (sd > 0.0) Z.col(c) /= sd;
    mean_var += Z.col(c).squaredNorm() / static_cast<double>(n);
  }
  const double weight = p > 0 ? 0.5 * mean_var / static_cast<double>(p) : 1.0;
  const Eigen::MatrixXi& V = data.blocks.V;

  auto distance = [&](Eigen::Index i, const Eigen::MatrixXd& centers, const Eigen::MatrixXi& modes, int g) {
    double d = p > 0 ? (Z.row(i) - centers.row(g)).squaredNorm() : 0.0;
    for (Eigen::Index r = 0; r < q; ++r) d += weight * (V(i, r) != modes(g, r) ? 1.0 : 0.0);
    return d;
  };

  KPrototypesResult best;
  best.cost = std::numeric_limits<double>::infinity();
  bool found = false;

  for (int restart = 0; restart < restarts; ++restart) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(restart)}));
    std::vector<Eigen::Index> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int g = 0; g < G; ++g) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(g), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(g)], pool[pick(rng)]);
    }
    Eigen::MatrixXd centers(G, p);
    Eigen::MatrixXi modes(G, q);
    for (int g = 0; g < G; ++g) {
      centers.row(g) = Z.row(pool[static_cast<std::size_t>(g)]);
      modes.row(g) = V.row(pool[static_cast<std::size_t>(g)]);
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
    int repairs = 0;
    bool failed = false;
    for (int iter = 0; iter < max_iter; ++iter) {
      bool changed = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double best_d = distance(i, centers, modes, 0);
        for (int g = 1; g < G; ++g) {
          double d = distance(i, centers, modes, g);
          if (d < best_d) {
            best_d = d;
            arg = g;
          }
        }
        if (assign[static_cast<std::size_t>(i)] != arg) changed = true;
        assign[static_cast<std::size_t>(i)] = arg;
        dist[static_cast<std::size_t>(i)] = best_d;
      }
      std::vector<std::size_t> counts(static_cast<std::size_t>(G), 0);
      for (int z : assign) ++counts[static_cast<std::size_t>(z)];
      auto empty = std::find(counts.begin(), counts.end(), 0);
      if (empty != counts.end()) {
        if (++repairs > 5) {
          failed = true;
          break;
        }
        auto far = static_cast<Eigen::Index>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        auto g = static_cast<Eigen::Index>(empty - counts.begin());
        centers.row(g) = Z.row(far);
        modes.row(g) = V.row(far);
        continue;
      }
      if (!changed && iter > 0) break;
      // Update prototypes: means and modes.
      centers.setZero();
      std::vector<std::vector<std::vector<int>>> tally(
          static_cast<std::size_t>(G), std::vector<std::vector<int>>(static_cast<std::size_t>(q)));
      for (int g = 0; g < G; ++g)
        for (Eigen::Index r = 0; r < q; ++r)
          tally[static_cast<std::size_t>(g)][static_cast<std::size_t>(r)].assign(
              static_cast<std::size_t>(data.blocks.category_counts[static_cast<std::size_t>(r)]), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        int g = assign[static_cast<std::size_t>(i)];
        if (p > 0) centers.row(g) += Z.row(i);
        for (Eigen::Index r = 0; r < q; ++r)
          ++tally[static_cast<std::size_t>(g)][static_cast<std::size_t>(r)][static_cast<std::size_t>(V(i, r))];
      }
      for (int g = 0; g < G; ++g) {
        if (p > 0) centers.row(g) /= static_cast<double>(counts[static_cast<std::size_t>(g)]);
        for (Eigen::Index r = 0; r < q; ++r) {
          const auto& t = tally[static_cast<std::size_t>(g)][static_cast<std::size_t>(r)];
          modes(g, r) = static_cast<int>(std::max_element(t.begin(), t.end()) - t.begin());
        }
      }
    }
    if (failed) continue;
    // Final cost against the final prototypes.
    double cost = 0.0;
    std::vector<std::size_t> counts(static_cast<std::size_t>(G), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      int g = assign[static_cast<std::size_t>(i)];
      cost += distance(i, centers, modes, g);
      ++counts[static_cast<std::size_t>(g)];
    }
    if (std::find(counts.begin(), counts.end(), 0) != counts.end()) continue;
    if (cost < best.cost) {
      best.cost = cost;
      best.partition.G = G;
      best.partition.assignment = assign;
      found = true;
    }
  }
  if (!found) throw std::runtime_error("k-prototypes: every restart ended with an empty cluster");
  return best;
}

Partition kprototypes_init(const ModelData& data, int G, std::uint64_t seed, int restarts, int max_iter) {
  return kprototypes(data, G, seed, restarts, max_iter).partition;
}

Eigen::MatrixXd e_step(const ModelData& data, const ModelParams& params) {
  if (params.size() == 0) throw std::invalid_argument("e_step: no clusters");
  return posterior_from_terms(compute_terms(data, params), data);
}

Partition c_step(const Eigen::MatrixXd& posterior) {
  Partition partition;
  partition.G = static_cast<int>(posterior.cols());
  partition.assignment.resize(static_cast<std::size_t>(posterior.rows()));
  for (Eigen::Index i = 0; i < posterior.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index g = 1; g < posterior.cols(); ++g)
      if (posterior(i, g) > posterior(i, arg)) arg = g;
    partition.assignment[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return partition;
}

Partition classification_step(const ModelData& data, const ModelParams& params, const Partition& current) {
  check_partition(data, current);
  if (params.size() != static_cast<std::size_t>(current.G))
    throw std::invalid_argument("classification_step: parameter and partition cluster counts differ");
  ComponentTerms terms = compute_terms(data, params);
  return guarded_assignment(terms, data, current, c_step(posterior_from_terms(terms, data)));
}

Partition s_step(const Eigen::MatrixXd& posterior, std::mt19937_64& rng) {
  Partition partition;
  partition.G = static_cast<int>(posterior.cols());
  partition.assignment.resize(static_cast<std::size_t>(posterior.rows()));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index i = 0; i < posterior.rows(); ++i) {
    double u = unif(rng);
    double acc = 0.0;
    Eigen::Index pick = posterior.cols() - 1;
    for (Eigen::Index g = 0; g < posterior.cols(); ++g) {
      acc += posterior(i, g);
      if (u < acc && posterior(i, g) > 0.0) {
        pick = g;
        break;
      }
    }
    while (pick > 0 && posterior(i, pick) <= 0.0) --pick;
    partition.assignment[static_cast<std::size_t>(i)] = static_cast<int>(pick);
  }
  return partition;
}

MStepResult m_step(const ModelData& data, const Partition& partition, Family family,
                   const ModelParams* previous, const MaximizeOptions& survival_options) {
  check_partition(data, partition);
  if (previous && previous->size() != static_cast<std::size_t>(partition.G))
    throw std::invalid_argument("m_step: previous parameters have a different cluster count");
  const int G = partition.G;
  const auto N = static_cast<double>(data.size());
  const std::size_t floor = std::max<std::size_t>(survival_size_floor(data.m(), family),
                                                  static_cast<std::size_t>(data.p() + 1));
  auto members = members_of(partition);

  MStepResult out;
  out.params.clusters.resize(static_cast<std::size_t>(G));
  out.survival_covariance.resize(static_cast<std::size_t>(G));
  out.frozen.assign(static_cast<std::size_t>(G), false);

  for (int g = 0; g < G; ++g) {
    const auto& rows = members[static_cast<std::size_t>(g)];
    auto& cluster = out.params.clusters[static_cast<std::size_t>(g)];
    cluster.tau = static_cast<double>(rows.size()) / N;
    std::size_t events = 0;
    for (auto i : rows) events += static_cast<std::size_t>(data.status[static_cast<std::size_t>(i)]);

    auto freeze = [&](const std::string& why) {
      out.frozen[static_cast<std::size_t>(g)] = true;
      out.warnings.push_back(fmt::format("cluster {} frozen: {}", g + 1, why));
    };

    if (previous) {
      const auto& prev = previous->clusters[static_cast<std::size_t>(g)];
      auto keep_previous = [&] {
        cluster.gaussian = prev.gaussian;
        cluster.multinomial = prev.multinomial;
        cluster.survival = prev.survival;
      };
      if (rows.size() < floor) {
        keep_previous();
        freeze(fmt::format("{} members, below the floor of {}", rows.size(), floor));
        continue;
      }
      if (events == 0) {
        keep_previous();
        freeze("no events");
        continue;
      }
      try {
        SurvivalSample sample = sample_of(data, rows);
        auto fit = fit_survival_mle(sample, family, prev.survival, survival_options);
        if (fit.converged) {
          cluster.survival = fit.params;
          out.survival_covariance[static_cast<std::size_t>(g)] = fit.covariance;
        } else {
          cluster.survival = prev.survival;
          out.warnings.push_back(fmt::format(
              "cluster {}: survival fit did not converge after {} iterations; previous values kept", g + 1,
              fit.iterations));
        }
      } catch (const FitPreconditionError& e) {
        keep_previous();
        freeze(e.what());
        continue;
      }
      cluster.gaussian = mle_gaussian(take_rows(data.blocks.U, rows));
      cluster.multinomial = mle_multinomial(take_rows(data.blocks.V, rows), data.blocks.category_counts);
      continue;
    }

    // Initial M-step: no previous values to fall back on.
    const auto& cov_rows = rows.size() >= static_cast<std::size_t>(data.p() + 1) && !rows.empty() ? rows : all_rows(data);
    cluster.gaussian = mle_gaussian(take_rows(data.blocks.U, cov_rows));
    cluster.multinomial = mle_multinomial(take_rows(data.blocks.V, cov_rows), data.blocks.category_counts);
    try {
      if (rows.size() < floor)
        throw FitPreconditionError(fmt::format("{} members, below the floor of {}", rows.size(), floor));
      SurvivalSample sample = sample_of(data, rows);
      auto fit = fit_survival_mle(sample, family, std::nullopt, survival_options);
      cluster.survival = fit.params;
      out.survival_covariance[static_cast<std::size_t>(g)] = fit.covariance;
      if (!fit.converged)
        out.warnings.push_back(fmt::format("cluster {}: initial survival fit did not converge", g + 1));
    } catch (const FitPreconditionError& e) {
      cluster.survival = default_survival_init(sample_of(data, all_rows(data)), family);
      freeze(fmt::format("initial survival fit impossible ({}); pooled defaults used", e.what()));
    }
  }
  return out;
}

double classification_loglik(const ModelData& data, const ModelParams& params, const Partition& partition) {
  check_partition(data, partition);
  if (params.size() != static_cast<std::size_t>(partition.G))
    throw std::invalid_argument("classification_loglik: parameter and partition cluster counts differ");
  return loglik_from_terms(compute_terms(data, params), data, partition);
}

SurvivalSample cluster_sample(const ModelData& data, const Partition& partition, int cluster) {
  return sample_of(data, members_of(partition)[static_cast<std::size_t>(cluster)]);
}

ModelFit run_cem(const ModelData& data, int G, Family family, const EmOptions& options) {
  Partition init = kprototypes_init(data, G, derive_seed(options.seed, {0x1417}), options.init_restarts,
                                    options.init_max_iter);
  return run_cem(data, init, family, options);
}

ModelFit run_cem(const ModelData& data, const Partition& init, Family family, const EmOptions& options) {
  check_partition(data, init);
  ModelFit fit;
  fit.algorithm = Algorithm::cem;
  fit.family = family;
  fit.seed = options.seed;
  Tracker tracker(init.G);

  Partition partition = init;
  MStepResult m = m_step(data, partition, family, nullptr, options.survival);
  tracker.update(m, options.freeze_limit);
  ModelParams params = std::move(m.params);
  double loglik = classification_loglik(data, params, partition);
  fit.loglik_trace.push_back(loglik);
  fit.flags.push_back(m.warnings);

  for (int iter = 1; iter <= options.max_iter; ++iter) {
    ComponentTerms terms = compute_terms(data, params);
    Partition proposal = c_step(posterior_from_terms(terms, data));
    partition = guarded_assignment(terms, data, partition, proposal);

    m = m_step(data, partition, family, &params, options.survival);
    int stuck = tracker.update(m, options.freeze_limit);
    params = std::move(m.params);
    double next = classification_loglik(data, params, partition);
    fit.loglik_trace.push_back(next);
    fit.flags.push_back(m.warnings);
    fit.iterations = iter;
    if (stuck >= 0) {
      fit.degenerate = true;
      fit.diagnostic = fmt::format("degenerate cluster: cluster {} frozen for {} consecutive iterations",
                                   stuck + 1, options.freeze_limit);
      break;
    }
    double rel = std::abs(next - loglik) / std::max(std::abs(loglik), std::numeric_limits<double>::min());
    loglik = next;
    if (rel < options.epsilon) {
      fit.converged = true;
      break;
    }
  }

  fit.params = std::move(params);
  fit.partition = std::move(partition);
  fit.survival_covariance = tracker.covariance;
  finish_fit(fit, data, family);
  return fit;
}

namespace {

// Maps each current cluster to a reference cluster by greedy nearest pairs on
// standardized (tau, mu, pi) distance.
std::vector<int> align_labels(const ModelParams& current, const ModelParams& reference,
                              const Eigen::VectorXd& scale) {
  const std::size_t G = current.size();
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(G), static_cast<Eigen::Index>(G));
  for (std::size_t a = 0; a < G; ++a)
    for (std::size_t b = 0; b < G; ++b) {
      const auto& x = current.clusters[a];
      const auto& y = reference.clusters[b];
      double d = (x.tau - y.tau) * (x.tau - y.tau);
      if (x.gaussian.mean.size() > 0)
        d += (x.gaussian.mean - y.gaussian.mean).cwiseQuotient(scale).squaredNorm();
      for (std::size_t r = 0; r < x.multinomial.probs.size(); ++r)
        d += (x.multinomial.probs[r] - y.multinomial.probs[r]).squaredNorm();
      cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d;
    }
  std::vector<int> map(G, -1);
  std::vector<bool> taken(G, false);
  for (std::size_t step = 0; step < G; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < G; ++a) {
      if (map[a] >= 0) continue;
      for (std::size_t b = 0; b < G; ++b) {
        if (taken[b]) continue;
        double c = cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        if (c < best) {
          best = c;
          ba = a;
          bb = b;
        }
      }
    }
    map[ba] = static_cast<int>(bb);
    taken[bb] = true;
  }
  return map;
}

struct ParamAccumulator {
  Family family = Family::weibull;
  std::vector<double> tau;
  std::vector<Eigen::VectorXd> mean, beta, baseline;
  std::vector<Eigen::MatrixXd> cov;
  std::vector<std::vector<Eigen::VectorXd>> probs;
  std::vector<double> theta;
  int count = 0;

  void add(const ModelParams& params, const std::vector<int>& map) {
    const std::size_t G = params.size();
    if (count == 0) {
      tau.assign(G, 0.0);
      theta.assign(G, 0.0);
      mean.resize(G);
      beta.resize(G);
      baseline.resize(G);
      cov.resize(G);
      probs.resize(G);
      for (std::size_t g = 0; g < G; ++g) {
        const auto& c = params.clusters[g];
        mean[g] = Eigen::VectorXd::Zero(c.gaussian.mean.size());
        cov[g] = Eigen::MatrixXd::Zero(c.gaussian.cov.rows(), c.gaussian.cov.cols());
        beta[g] = Eigen::VectorXd::Zero(c.survival.beta.size());
        baseline[g] = Eigen::VectorXd::Zero(parameter_count(family));
        for (const auto& pr : c.multinomial.probs) probs[g].push_back(Eigen::VectorXd::Zero(pr.size()));
      }
    }
    for (std::size_t a = 0; a < G; ++a) {
      auto g = static_cast<std::size_t>(map[a]);
      const auto& c = params.clusters[a];
      tau[g] += c.tau;
      mean[g] += c.gaussian.mean;
      cov[g] += c.gaussian.cov;
      beta[g] += c.survival.beta;
      auto nat = natural_parameters(c.survival.baseline);
      baseline[g] += Eigen::Map<const Eigen::VectorXd>(nat.data(), static_cast<Eigen::Index>(nat.size()));
      theta[g] += c.survival.theta;
      for (std::size_t r = 0; r < c.multinomial.probs.size(); ++r) probs[g][r] += c.multinomial.probs[r];
    }
    ++count;
  }

  ModelParams mean_params() const {
    ModelParams out;
    const double k = static_cast<double>(count);
    double tau_sum = 0.0;
    for (double t : tau) tau_sum += t;
    for (std::size_t g = 0; g < tau.size(); ++g) {
      ClusterParams c;
      c.tau = tau[g] / tau_sum;
      c.gaussian.mean = mean[g] / k;
      c.gaussian.cov = cov[g] / k;
      for (const auto& pr : probs[g]) c.multinomial.probs.push_back(pr / pr.sum());
      c.survival.beta = beta[g] / k;
      Eigen::VectorXd nat = baseline[g] / k;
      c.survival.baseline = from_natural(family, std::span<const double>(nat.data(), static_cast<std::size_t>(nat.size())));
      c.survival.theta = std::max(theta[g] / k, kThetaMin);
      out.clusters.push_back(std::move(c));
    }
    return out;
  }
};

}  // namespace

ModelFit run_sem(const ModelData& data, int G, Family family, const EmOptions& options) {
  if (options.burn_in >= options.iterations) throw std::invalid_argument("run_sem: empty averaging window");
  Partition init = kprototypes_init(data, G, derive_seed(options.seed, {0x1417}), options.init_restarts,
                                    options.init_max_iter);
  return run_sem(data, init, family, options);
}

ModelFit run_sem(const ModelData& data, const Partition& init, Family family, const EmOptions& options) {
  if (options.burn_in >= options.iterations) throw std::invalid_argument("run_sem: empty averaging window");
  check_partition(data, init);
  ModelFit fit;
  fit.algorithm = Algorithm::sem;
  fit.family = family;
  fit.seed = options.seed;
  Tracker tracker(init.G);
  std::mt19937_64 rng(derive_seed(options.seed, {0x5e3}));

  Partition partition = init;
  MStepResult m = m_step(data, partition, family, nullptr, options.survival);
  tracker.update(m, options.freeze_limit);
  ModelParams params = std::move(m.params);
  fit.loglik_trace.push_back(classification_loglik(data, params, partition));
  fit.flags.push_back(m.warnings);

  Eigen::VectorXd scale = Eigen::VectorXd::Ones(data.p());
  for (Eigen::Index c = 0; c < data.p(); ++c) {
    double mu = data.blocks.U.col(c).mean();
    double sd = std::sqrt((data.blocks.U.col(c).array() - mu).square().mean());
    if (sd > 0.0) scale[c] = sd;
  }

  ParamAccumulator acc;
  acc.family = family;
  ModelParams reference;
  for (int iter = 1; iter <= options.iterations; ++iter) {
    Eigen::MatrixXd post = e_step(data, params);
    partition = s_step(post, rng);
    m = m_step(data, partition, family, &params, options.survival);
    int stuck = tracker.update(m, options.freeze_limit);
    params = std::move(m.params);
    fit.loglik_trace.push_back(classification_loglik(data, params, partition));
    fit.flags.push_back(m.warnings);
    fit.iterations = iter;
    if (stuck >= 0) {
      fit.degenerate = true;
      fit.diagnostic = fmt::format("degenerate cluster: cluster {} frozen for {} consecutive iterations",
                                   stuck + 1, options.freeze_limit);
      break;
    }
    if (iter > options.burn_in) {
      if (acc.count == 0) reference = params;
      acc.add(params, align_labels(params, reference, scale));
    }
  }

  if (fit.degenerate || acc.count == 0) {
    fit.params = std::move(params);
    fit.partition = std::move(partition);
    fit.survival_covariance = tracker.covariance;
    finish_fit(fit, data, family);
    return fit;
  }

  fit.converged = true;
  fit.params = acc.mean_params();
  fit.partition = c_step(e_step(data, fit.params));
  // Inference at the ergodic mean, on the MAP partition.
  fit.survival_covariance.assign(static_cast<std::size_t>(init.G), std::nullopt);
  auto members = members_of(fit.partition);
  for (int g = 0; g < init.G; ++g) {
    const auto& rows = members[static_cast<std::size_t>(g)];
    if (rows.empty()) continue;
    SurvivalSample sample = sample_of(data, rows);
    SurvivalObjective objective(sample, family);
    Eigen::VectorXd u = pack(fit.params.clusters[static_cast<std::size_t>(g)].survival);
    Eigen::MatrixXd info = -objective.hessian(u);
    info = 0.5 * (info + info.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() == Eigen::Success)
      fit.survival_covariance[static_cast<std::size_t>(g)] =
          llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
  }
  finish_fit(fit, data, family);
  return fit;
}

ModelFit run_em(const ModelData& data, int G, Family family, Algorithm algorithm, const EmOptions& options) {
  return algorithm == Algorithm::cem ? run_cem(data, G, family, options) : run_sem(data, G, family, options);
}

}  // namespace frailcwm
