#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "frailcwm/covariates.hpp"
#include "frailcwm/data.hpp"
#include "frailcwm/survival.hpp"

namespace frailcwm {

enum class Algorithm { cem, sem };

std::string_view algorithm_name(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view name);

/// Flattened, immutable view of a Dataset in the form the estimators consume.
struct ModelData {
  std::vector<double> time;
  std::vector<int> status;
  std::vector<std::size_t> group;
  std::size_t group_count = 0;
  CovariateBlocks blocks;

  static ModelData from_dataset(const Dataset& dataset);
  std::size_t size() const { return time.size(); }
  Eigen::Index p() const { return blocks.U.cols(); }
  Eigen::Index q() const { return blocks.V.cols(); }
  Eigen::Index m() const { return blocks.X.cols(); }
};

struct ClusterParams {
  double tau = 1.0;
  GaussianParams gaussian;
  MultinomialParams multinomial;
  SurvivalParams survival;
};

struct ModelParams {
  std::vector<ClusterParams> clusters;
  std::size_t size() const { return clusters.size(); }
};

/// Hard assignment; labels are 0-based internally and 1-based in every export.
struct Partition {
  std::vector<int> assignment;
  int G = 1;
  std::vector<std::size_t> sizes() const;
};

struct EmOptions {
  std::uint64_t seed = 1;
  int max_iter = 200;       // CEM
  double epsilon = 1e-5;    // CEM relative tolerance
  int burn_in = 50;         // SEM
  int iterations = 500;     // SEM
  int init_restarts = 10;
  int init_max_iter = 100;
  int freeze_limit = 10;
  MaximizeOptions survival;
};

struct ModelFit {
  ModelParams params;
  Partition partition;
  Eigen::MatrixXd posterior;
  std::vector<double> loglik_trace;             // entry 0 is the initial M-step
  std::vector<std::vector<std::string>> flags;  // M-step warnings, aligned with the trace
  std::vector<std::optional<Eigen::MatrixXd>> survival_covariance;
  double final_loglik = 0.0;
  double bic = 0.0;
  long parameter_count = 0;
  Algorithm algorithm = Algorithm::cem;
  Family family = Family::weibull;
  std::uint64_t seed = 0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
  std::string diagnostic;
};

struct KPrototypesResult {
  Partition partition;
  double cost = 0.0;
};

/// k-prototypes on the marginal covariates: squared Euclidean distance on the
/// standardized continuous columns plus gamma_w times the number of categorical
/// mismatches, gamma_w = 0.5 x mean variance of the standardized columns.
/// Best of `restarts` random starts by total cost; deterministic given seed.
KPrototypesResult kprototypes(const ModelData& data, int G, std::uint64_t seed, int restarts = 10,
                              int max_iter = 100);
Partition kprototypes_init(const ModelData& data, int G, std::uint64_t seed, int restarts = 10,
                           int max_iter = 100);

/// Posterior membership probabilities (N x G), normalized in log space.
Eigen::MatrixXd e_step(const ModelData& data, const ModelParams& params);

/// Row-wise argmax, ties to the lowest cluster index.
Partition c_step(const Eigen::MatrixXd& posterior);

/// CEM assignment update at fixed parameters: the row-wise argmax when it does
/// not lower the classification log-likelihood, otherwise the subset of its
/// moves that raise it, applied one row at a time. Never decreases the objective.
Partition classification_step(const ModelData& data, const ModelParams& params, const Partition& current);

/// One categorical draw per row.
Partition s_step(const Eigen::MatrixXd& posterior, std::mt19937_64& rng);

struct MStepResult {
  ModelParams params;
  std::vector<std::optional<Eigen::MatrixXd>> survival_covariance;
  std::vector<bool> frozen;
  std::vector<std::string> warnings;
};

/// Closed-form covariate MLEs and one survival fit per cluster, warm-started
/// from `previous`. A cluster below the survival size floor, without events or
/// with a rank-deficient design keeps its previous parameters (frozen); a
/// non-convergent survival fit keeps the previous survival block.
MStepResult m_step(const ModelData& data, const Partition& partition, Family family,
                   const ModelParams* previous, const MaximizeOptions& survival_options = {});

/// The classification log-likelihood of (params, partition).
double classification_loglik(const ModelData& data, const ModelParams& params, const Partition& partition);

ModelFit run_cem(const ModelData& data, int G, Family family, const EmOptions& options = {});
ModelFit run_cem(const ModelData& data, const Partition& init, Family family, const EmOptions& options = {});

/// Throws std::invalid_argument when burn_in >= iterations.
ModelFit run_sem(const ModelData& data, int G, Family family, const EmOptions& options = {});
ModelFit run_sem(const ModelData& data, const Partition& init, Family family, const EmOptions& options = {});

ModelFit run_em(const ModelData& data, int G, Family family, Algorithm algorithm, const EmOptions& options = {});

/// Survival sample of the rows assigned to `cluster`.
SurvivalSample cluster_sample(const ModelData& data, const Partition& partition, int cluster);

}  // namespace frailcwm
