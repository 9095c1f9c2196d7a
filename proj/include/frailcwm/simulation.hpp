#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "frailcwm/data.hpp"
#include "frailcwm/selection.hpp"

namespace frailcwm {

/// Cluster-specific law of a continuous covariate: independent Gaussian.
struct ContinuousLaw {
  std::string name;
  std::vector<double> mean;  // one per cluster
  std::vector<double> sd;
  bool marginal = true;
  bool regression = true;
};

struct CategoricalLaw {
  std::string name;
  std::vector<std::string> categories;
  std::vector<std::vector<double>> probs;  // one probability vector per cluster
  bool marginal = true;
  bool regression = true;
};

struct ClusterTruth {
  Eigen::VectorXd beta;  // aligned with regression_column_names(schema())
  double theta = 0.5;
  Baseline baseline = Weibull{1.0, 1.0};
};

struct DGPConfig {
  int G = 1;
  int J = 1;
  std::vector<int> sizes;  // observations per group in each cluster
  std::vector<ClusterTruth> clusters;
  std::vector<ContinuousLaw> continuous;
  std::vector<CategoricalLaw> categorical;
  std::optional<double> censor_time;  // administrative censoring; none by default

  /// Continuous variables first, then categorical, each in declaration order.
  std::vector<VariableSpec> schema() const;
  std::size_t total_size() const;
  /// Throws std::invalid_argument on the first violated constraint.
  void validate() const;
};

/// Three Weibull clusters, ten groups, 1500 observations, two Gaussian and two
/// categorical covariates entering both the marginal and the regression parts.
DGPConfig benchmark_config();

/// 32 groups, about 3000 observations, Lognormal clusters, two continuous and
/// three binary marginal covariates plus two binary regression-only covariates,
/// administrative censoring.
DGPConfig application_config();

struct SimulatedData {
  Dataset dataset;
  Partition truth;                 // aligned row-for-row with the dataset
  Eigen::MatrixXd frailties;       // J x G group-cluster frailty draws
};

/// Deterministic given (config, seed). Rows are ordered by group, then cluster.
SimulatedData simulate_dataset(const DGPConfig& config, std::uint64_t seed);

/// Inverse of H0: the t with H0(t) = h.
double inverse_cumhazard(const Baseline& baseline, double h);

/// Hubert-Arabie adjusted Rand index. Throws std::invalid_argument on length mismatch.
double ari(const Partition& a, const Partition& b);

/// Minimum disagreement fraction over all label permutations.
double misclassification_rate(const Partition& truth, const Partition& estimate);

/// Permutation of estimate labels (estimate label -> truth label) attaining the
/// misclassification minimum. Label spaces are padded to max(G_truth, G_estimate).
std::vector<int> best_label_map(const Partition& truth, const Partition& estimate);

struct ParameterEstimate {
  int cluster = 0;  // truth cluster
  std::string parameter;
  double truth = 0.0;
  double estimate = 0.0;
};

struct ReplicateResult {
  int replicate = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  GridResult grid;  // best_fit members are dropped after scoring
  int selected_G = 0;
  Family selected_family = Family::weibull;
  double ari = 0.0;
  double misclassification = 0.0;
  /// From the best fit at the true G (first family), matched to the truth labels.
  std::vector<ParameterEstimate> parameters;
};

struct StudySummary {
  std::vector<ReplicateResult> replicates;
  double mean_ari = 0.0;
  double sd_ari = 0.0;
  double mean_misclassification = 0.0;
  double sd_misclassification = 0.0;
  std::vector<std::pair<int, int>> selected_counts;  // (G, replicates selecting it)
  int failed = 0;
};

StudySummary replicate_study(const DGPConfig& config, int R, const std::vector<int>& Gs,
                             const std::vector<Family>& families, int restarts, std::uint64_t seed,
                             const EmOptions& base = {}, unsigned threads = 1);

}  // namespace frailcwm
