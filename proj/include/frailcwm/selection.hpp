#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "frailcwm/em.hpp"
#include "frailcwm/frailty.hpp"

namespace frailcwm {

/// Dimensions that determine the free-parameter count of a fitted model.
struct ModelConfig {
  int G = 1;
  Family family = Family::weibull;
  Algorithm algorithm = Algorithm::cem;
  int restarts = 1;
  std::uint64_t seed = 1;
  long p = 0;                         // continuous marginal variables
  std::vector<int> category_counts;   // k_r of each categorical marginal variable
  long m = 0;                         // regression columns
  long f = 1;                         // frailty parameters per cluster
};

ModelConfig model_config_for(const ModelData& data, int G, Family family);

/// d = G(1+m) + G p(p+3)/2 + G sum(k_r - 1) + G b + G f + (G - 1).
long count_parameters(const ModelConfig& config);

/// 2 loglik - d ln N; larger is better.
double bic(double loglik, long d, double N);

struct GridCell {
  int G = 1;
  Family family = Family::weibull;
  int restarts = 0;
  int successful = 0;
  std::vector<double> restart_logliks;  // NaN for failed restarts
  std::vector<std::string> restart_errors;
  bool failed = true;
  double best_loglik = 0.0;
  long d = 0;
  double bic = 0.0;
  std::optional<ModelFit> best_fit;
};

struct GridResult {
  std::vector<GridCell> cells;  // G-major, families in request order
  std::optional<std::size_t> best;
};

/// Seed of restart r in cell (G, family).
std::uint64_t restart_seed(std::uint64_t seed, int G, Family family, int restart);

/// Runs `restarts` seeded fits per (G, family) cell and keeps the highest final
/// loglik among non-degenerate runs. Cells whose restarts all fail are marked
/// failed and never chosen as best.
GridResult grid_search(const ModelData& data, const std::vector<int>& Gs, const std::vector<Family>& families,
                       Algorithm algorithm, int restarts, std::uint64_t seed, const EmOptions& base = {},
                       unsigned threads = 1);

struct CurvePoint {
  double t = 0.0;
  double value = 0.0;
  std::optional<double> se;
  std::optional<double> lower;
  std::optional<double> upper;
};

struct Curve {
  std::vector<CurvePoint> points;
  bool has_bands = false;
};

/// S(t) = exp(-H0(t) e^{x'beta}) with the frailty at 1. With a covariance over
/// the unconstrained survival vector, bands are S -/+ 1.96 SE clamped to [0,1];
/// SE uses the full gradient over beta and the baseline parameters (theta
/// contributes nothing). Throws std::invalid_argument unless t_grid is
/// positive and strictly ascending.
Curve survival_curve(const SurvivalParams& params, const std::optional<Eigen::MatrixXd>& covariance,
                     const Eigen::VectorXd& profile, const std::vector<double>& t_grid);

/// Gradient of S(t) with respect to the unconstrained survival vector.
Eigen::VectorXd survival_gradient(const SurvivalParams& params, const Eigen::VectorXd& profile, double t);

/// h0(t) e^{x'beta}.
Curve hazard_curve(const SurvivalParams& params, const Eigen::VectorXd& profile, const std::vector<double>& t_grid);

enum class FrailtyEffect { protective, neutral, risk };
std::string_view effect_name(FrailtyEffect effect);

struct CellStats {
  std::size_t group = 0;
  int cluster = 0;
  std::size_t n = 0;
  int events = 0;
  double cumulative_hazard = 0.0;
};

/// Per populated (group, cluster) cell: size, events and sum H0 e^{x'beta}.
std::vector<CellStats> cell_statistics(const ModelData& data, const ModelParams& params, const Partition& partition);

struct FrailtyRow {
  std::size_t group = 0;
  int cluster = 0;
  int events = 0;
  double cumulative_hazard = 0.0;
  FrailtyPosterior posterior;
  FrailtyEffect effect = FrailtyEffect::neutral;
};

FrailtyEffect classify_frailty(const FrailtyPosterior& posterior);

std::vector<FrailtyRow> frailty_estimates(const std::vector<CellStats>& cells, const ModelParams& params);
std::vector<FrailtyRow> frailty_estimates(const ModelData& data, const ModelFit& fit);

}  // namespace frailcwm
