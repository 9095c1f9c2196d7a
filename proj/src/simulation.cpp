#include "frailcwm/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <map>
#include <set>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "frailcwm/frailty.hpp"
#include "frailcwm/parallel.hpp"

namespace frailcwm {

std::vector<VariableSpec> DGPConfig::schema() const {
  std::vector<VariableSpec> out;
  for (const auto& law : continuous) {
    VariableSpec spec;
    spec.name = law.name;
    spec.kind = VariableKind::continuous;
    spec.in_marginal = law.marginal;
    spec.in_regression = law.regression;
    out.push_back(spec);
  }
  for (const auto& law : categorical) {
    VariableSpec spec;
    spec.name = law.name;
    spec.kind = VariableKind::categorical;
    spec.categories = law.categories;
    spec.in_marginal = law.marginal;
    spec.in_regression = law.regression;
    out.push_back(spec);
  }
  return out;
}

std::size_t DGPConfig::total_size() const {
  std::size_t per_group = 0;
  for (int n : sizes) per_group += static_cast<std::size_t>(std::max(n, 0));
  return per_group * static_cast<std::size_t>(std::max(J, 0));
}

void DGPConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("simulation config: " + what); };
  if (G < 1) fail("G must be at least 1");
  if (J < 1) fail("J must be at least 1");
  if (sizes.size() != static_cast<std::size_t>(G)) fail("need one size per cluster");
  for (int n : sizes)
    if (n < 1) fail("cluster sizes must be at least 1");
  if (clusters.size() != static_cast<std::size_t>(G)) fail("need one survival block per cluster");
  if (censor_time && !(*censor_time > 0.0)) fail("censoring time must be positive");
  try {
    validate_schema(schema());
  } catch (const std::exception& e) {
    fail(e.what());
  }
  const auto m = static_cast<Eigen::Index>(regression_column_names(schema()).size());
  for (std::size_t g = 0; g < clusters.size(); ++g) {
    if (clusters[g].beta.size() != m)
      fail(fmt::format("cluster {} has {} coefficients, the design has {}", g + 1, clusters[g].beta.size(), m));
    if (!(clusters[g].theta >= 0.0) || !std::isfinite(clusters[g].theta))
      fail(fmt::format("cluster {}: theta must be non-negative", g + 1));
    try {
      frailcwm::validate(clusters[g].baseline);
    } catch (const std::exception& e) {
      fail(fmt::format("cluster {}: {}", g + 1, e.what()));
    }
  }
  for (const auto& law : continuous) {
    if (law.mean.size() != static_cast<std::size_t>(G) || law.sd.size() != static_cast<std::size_t>(G))
      fail(fmt::format("variable '{}' needs one mean and sd per cluster", law.name));
    for (double s : law.sd)
      if (!(s > 0.0)) fail(fmt::format("variable '{}': sd must be positive", law.name));
  }
  for (const auto& law : categorical) {
    if (law.probs.size() != static_cast<std::size_t>(G))
      fail(fmt::format("variable '{}' needs one probability vector per cluster", law.name));
    for (const auto& p : law.probs) {
      if (p.size() != law.categories.size())
        fail(fmt::format("variable '{}': probability vector length differs from category count", law.name));
      double sum = 0.0;
      for (double x : p) {
        if (!(x >= 0.0)) fail(fmt::format("variable '{}': negative probability", law.name));
        sum += x;
      }
      if (std::abs(sum - 1.0) > 1e-9) fail(fmt::format("variable '{}': probabilities must sum to 1", law.name));
    }
  }
}

DGPConfig benchmark_config() {
  DGPConfig c;
  c.G = 3;
  c.J = 10;
  c.sizes = {40, 50, 60};
  auto beta = [](std::initializer_list<double> v) {
    Eigen::VectorXd b(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) b[k++] = x;
    return b;
  };
  c.clusters = {
      {beta({0.2, -0.1, 0.3, 0.5, 0.2}), 0.8, Weibull{2.0, 3.0}},
      {beta({-0.2, -0.1, 0.2, -0.3, 0.15}), 0.6, Weibull{0.7, 3.0}},
      {beta({-0.2, 0.2, -0.3, -0.3, -0.4}), 0.4, Weibull{0.4, 3.0}},
  };
  c.continuous = {
      {"u1", {1.0, 3.0, 5.0}, {1.0, 1.0, 1.0}, true, true},
      {"u2", {-3.0, 1.0, 3.0}, {1.0, 1.0, 1.0}, true, true},
  };
  c.categorical = {
      {"v1", {"a", "b"}, {{0.4, 0.6}, {0.8, 0.2}, {0.2, 0.8}}, true, true},
      {"v2", {"a", "b", "c"}, {{0.3, 0.5, 0.2}, {0.6, 0.1, 0.3}, {0.1, 0.3, 0.6}}, true, true},
  };
  return c;
}

DGPConfig application_config() {
  DGPConfig c;
  c.G = 3;
  c.J = 32;
  c.sizes = {30, 35, 29};
  Eigen::VectorXd b1(2), b2(2), b3(2);
  b1 << 0.235, 0.4;
  b2 << 0.1, 0.5;
  b3 << 0.3, 0.2;
  c.clusters = {
      {b1, 0.3, Lognormal{-2.387, 1.754}},
      {b2, 0.15, Lognormal{-1.0, 1.4}},
      {b3, 0.5, Lognormal{0.5, 1.1}},
  };
  c.continuous = {
      {"age", {72.0, 81.0, 66.0}, {8.0, 6.0, 9.0}, true, false},
      {"mcs", {4.0, 9.0, 1.5}, {2.0, 3.0, 1.0}, true, false},
  };
  c.categorical = {
      {"gender", {"M", "F"}, {{0.6, 0.4}, {0.35, 0.65}, {0.7, 0.3}}, true, false},
      {"copd", {"no", "yes"}, {{0.8, 0.2}, {0.55, 0.45}, {0.95, 0.05}}, true, false},
      {"brh", {"no", "yes"}, {{0.85, 0.15}, {0.5, 0.5}, {0.9, 0.1}}, true, false},
      {"pna", {"no", "yes"}, {{0.9, 0.1}, {0.8, 0.2}, {0.95, 0.05}}, false, true},
      {"rf", {"no", "yes"}, {{0.85, 0.15}, {0.7, 0.3}, {0.9, 0.1}}, false, true},
  };
  c.censor_time = 1.0;
  return c;
}

double inverse_cumhazard(const Baseline& baseline, double h) {
  if (!(h >= 0.0)) throw std::invalid_argument("inverse_cumhazard: h must be non-negative");
  return std::visit(
      [h](const auto& b) -> double {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, Exponential>) {
          return h / b.rate;
        } else if constexpr (std::is_same_v<B, Weibull>) {
          return std::pow(h / b.scale, 1.0 / b.shape);
        } else if constexpr (std::is_same_v<B, Gompertz>) {
          double arg = h * b.shape / b.scale;
          if (arg <= -1.0) return std::numeric_limits<double>::infinity();
          return std::log1p(arg) / b.shape;
        } else {
          boost::math::normal_distribution<double> normal;
          double z;
          if (h == 0.0) return 0.0;
          if (h < 1.0) {
            z = boost::math::quantile(normal, -std::expm1(-h));
          } else {
            double tail = std::exp(-h);
            if (tail == 0.0) return std::numeric_limits<double>::infinity();
            z = boost::math::quantile(boost::math::complement(normal, tail));
          }
          return std::exp(b.location + b.scale * z);
        }
      },
      baseline);
}

SimulatedData simulate_dataset(const DGPConfig& config, std::uint64_t seed) {
  config.validate();
  const auto schema = config.schema();
  const std::size_t nc = config.continuous.size();
  std::vector<Observation> rows;
  rows.reserve(config.total_size());
  std::vector<int> truth;
  truth.reserve(config.total_size());
  Eigen::MatrixXd frailties(config.J, config.G);
  std::vector<std::string> labels;

  for (int j = 0; j < config.J; ++j) {
    labels.push_back(fmt::format("H{:02d}", j + 1));
    for (int g = 0; g < config.G; ++g) {
      const auto& cl = config.clusters[static_cast<std::size_t>(g)];
      std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(g)}));
      double frailty = 1.0;
      if (cl.theta > kThetaMin) {
        std::gamma_distribution<double> gamma(1.0 / cl.theta, cl.theta);
        frailty = gamma(rng);
      }
      frailties(j, g) = frailty;

      std::normal_distribution<double> stdnorm(0.0, 1.0);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (int k = 0; k < config.sizes[static_cast<std::size_t>(g)]; ++k) {
        Observation obs;
        obs.group = static_cast<std::size_t>(j);
        for (const auto& law : config.continuous)
          obs.values.push_back(law.mean[static_cast<std::size_t>(g)] +
                               law.sd[static_cast<std::size_t>(g)] * stdnorm(rng));
        for (const auto& law : config.categorical) {
          const auto& p = law.probs[static_cast<std::size_t>(g)];
          double u = unif(rng), acc = 0.0;
          std::size_t pick = p.size() - 1;
          for (std::size_t c = 0; c < p.size(); ++c) {
            acc += p[c];
            if (u < acc) {
              pick = c;
              break;
            }
          }
          obs.values.push_back(static_cast<double>(pick));
        }
        // Linear predictor over the regression columns, in schema order.
        double lp = 0.0;
        Eigen::Index col = 0;
        for (std::size_t v = 0; v < schema.size(); ++v) {
          if (!schema[v].in_regression) continue;
          if (v < nc) {
            lp += cl.beta[col++] * obs.values[v];
          } else {
            auto level = static_cast<Eigen::Index>(obs.values[v]);
            if (level > 0) lp += cl.beta[col + level - 1];
            col += static_cast<Eigen::Index>(schema[v].categories.size()) - 1;
          }
        }
        double t = 0.0;
        while (!(t > 0.0)) {
          double e = -std::log1p(-unif(rng));
          t = inverse_cumhazard(cl.baseline, e / (frailty * std::exp(lp)));
        }
        if (config.censor_time && t > *config.censor_time) {
          obs.time = *config.censor_time;
          obs.status = 0;
        } else {
          if (!std::isfinite(t))
            throw std::domain_error("simulate_dataset: infinite event time without censoring");
          obs.time = t;
          obs.status = 1;
        }
        rows.push_back(std::move(obs));
        truth.push_back(g);
      }
    }
  }
  Partition partition;
  partition.G = config.G;
  partition.assignment = std::move(truth);
  return SimulatedData{Dataset(schema, std::move(rows), std::move(labels)), std::move(partition), frailties};
}

namespace {

Eigen::MatrixXd contingency(const Partition& a, const Partition& b, int K) {
  if (a.assignment.size() != b.assignment.size())
    throw std::invalid_argument("partitions have different lengths");
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(K, K);
  for (std::size_t i = 0; i < a.assignment.size(); ++i) {
    int x = a.assignment[i], y = b.assignment[i];
    if (x < 0 || y < 0 || x >= K || y >= K) throw std::invalid_argument("partition label out of range");
    table(x, y) += 1.0;
  }
  return table;
}

double choose2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

double ari(const Partition& a, const Partition& b) {
  const int K = std::max({a.G, b.G, 1});
  Eigen::MatrixXd table = contingency(a, b, K);
  const double n = static_cast<double>(a.assignment.size());
  double index = 0.0;
  for (Eigen::Index i = 0; i < table.size(); ++i) index += choose2(table.data()[i]);
  double sum_a = 0.0, sum_b = 0.0;
  for (int k = 0; k < K; ++k) {
    sum_a += choose2(table.row(k).sum());
    sum_b += choose2(table.col(k).sum());
  }
  const double pairs = choose2(n);
  if (pairs == 0.0) return 1.0;
  const double expected = sum_a * sum_b / pairs;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

std::vector<int> best_label_map(const Partition& truth, const Partition& estimate) {
  const int K = std::max({truth.G, estimate.G, 1});
  if (K > 9) throw std::invalid_argument("label matching supports at most 9 clusters");
  Eigen::MatrixXd table = contingency(truth, estimate, K);
  std::vector<int> perm(static_cast<std::size_t>(K));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_hits = -1.0;
  do {
    double hits = 0.0;
    for (int e = 0; e < K; ++e) hits += table(perm[static_cast<std::size_t>(e)], e);
    if (hits > best_hits) {
      best_hits = hits;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double misclassification_rate(const Partition& truth, const Partition& estimate) {
  if (truth.assignment.empty()) {
    if (!estimate.assignment.empty()) throw std::invalid_argument("partitions have different lengths");
    return 0.0;
  }
  auto map = best_label_map(truth, estimate);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.assignment.size(); ++i)
    if (map[static_cast<std::size_t>(estimate.assignment[i])] != truth.assignment[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(truth.assignment.size());
}

namespace {

std::vector<ParameterEstimate> matched_parameters(const DGPConfig& config, const ModelData& data,
                                                  const Partition& truth, const ModelFit& fit) {
  auto map = best_label_map(truth, fit.partition);
  std::vector<ParameterEstimate> out;
  const auto& x_names = data.blocks.x_names;
  for (int e = 0; e < fit.partition.G; ++e) {
    int g = map[static_cast<std::size_t>(e)];
    if (g >= config.G) continue;
    const auto& est = fit.params.clusters[static_cast<std::size_t>(e)];
    const auto& tr = config.clusters[static_cast<std::size_t>(g)];
    double tau_true = static_cast<double>(config.sizes[static_cast<std::size_t>(g)]) /
                      static_cast<double>(std::accumulate(config.sizes.begin(), config.sizes.end(), 0));
    out.push_back({g, "tau", tau_true, est.tau});
    for (Eigen::Index k = 0; k < est.survival.beta.size(); ++k)
      out.push_back({g, "beta[" + x_names[static_cast<std::size_t>(k)] + "]", tr.beta[k], est.survival.beta[k]});
    if (family_of(est.survival.baseline) == family_of(tr.baseline)) {
      auto names = parameter_names(family_of(tr.baseline));
      auto t_nat = natural_parameters(tr.baseline);
      auto e_nat = natural_parameters(est.survival.baseline);
      for (std::size_t k = 0; k < names.size(); ++k) out.push_back({g, names[k], t_nat[k], e_nat[k]});
    }
    out.push_back({g, "theta", tr.theta, est.survival.theta});
    std::size_t u = 0;
    for (const auto& law : config.continuous)
      if (law.marginal) {
        out.push_back({g, "mu[" + law.name + "]", law.mean[static_cast<std::size_t>(g)], est.gaussian.mean[static_cast<Eigen::Index>(u)]});
        ++u;
      }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ParameterEstimate& a, const ParameterEstimate& b) { return a.cluster < b.cluster; });
  return out;
}

}  // namespace

StudySummary replicate_study(const DGPConfig& config, int R, const std::vector<int>& Gs,
                             const std::vector<Family>& families, int restarts, std::uint64_t seed,
                             const EmOptions& base, unsigned threads) {
  if (R < 1) throw std::invalid_argument("replicate_study: R must be at least 1");
  config.validate();
  StudySummary summary;
  summary.replicates.resize(static_cast<std::size_t>(R));

  parallel_for(static_cast<std::size_t>(R), threads, [&](std::size_t r) {
    auto& rep = summary.replicates[r];
    rep.replicate = static_cast<int>(r);
    rep.seed = derive_seed(seed, {static_cast<std::uint64_t>(r)});
    try {
      SimulatedData sim = simulate_dataset(config, derive_seed(rep.seed, {1}));
      ModelData data = ModelData::from_dataset(sim.dataset);
      rep.grid = grid_search(data, Gs, families, Algorithm::cem, restarts, derive_seed(rep.seed, {2}), base, 1);
      if (!rep.grid.best) throw std::runtime_error("every grid cell failed");
      const auto& best = rep.grid.cells[*rep.grid.best];
      rep.selected_G = best.G;
      rep.selected_family = best.family;
      rep.ari = ari(sim.truth, best.best_fit->partition);
      rep.misclassification = misclassification_rate(sim.truth, best.best_fit->partition);
      for (const auto& cell : rep.grid.cells)
        if (cell.G == config.G && cell.family == families.front() && cell.best_fit) {
          rep.parameters = matched_parameters(config, data, sim.truth, *cell.best_fit);
          break;
        }
    } catch (const std::exception& e) {
      rep.failed = true;
      rep.error = e.what();
    }
    for (auto& cell : rep.grid.cells) cell.best_fit.reset();
  });

  std::vector<double> aris, miss;
  std::map<int, int> counts;
  for (int G : Gs) counts[G] = 0;
  for (const auto& rep : summary.replicates) {
    if (rep.failed) {
      ++summary.failed;
      continue;
    }
    aris.push_back(rep.ari);
    miss.push_back(rep.misclassification);
    ++counts[rep.selected_G];
  }
  auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
    if (v.empty()) {
      mean = sd = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  };
  mean_sd(aris, summary.mean_ari, summary.sd_ari);
  mean_sd(miss, summary.mean_misclassification, summary.sd_misclassification);
  for (const auto& [G, n] : counts) summary.selected_counts.emplace_back(G, n);
  return summary;
}

}  // namespace frailcwm
