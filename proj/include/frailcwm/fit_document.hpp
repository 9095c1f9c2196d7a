#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "frailcwm/data.hpp"
#include "frailcwm/em.hpp"
#include "frailcwm/selection.hpp"

namespace frailcwm {

/// Everything the curve and frailty exports need from a fit, without the data.
struct FitDocument {
  std::vector<VariableSpec> schema;
  std::vector<std::string> groups;
  std::vector<std::string> regression_columns;
  Family family = Family::weibull;
  Algorithm algorithm = Algorithm::cem;
  std::uint64_t seed = 0;
  std::size_t N = 0;
  double loglik = 0.0;
  double bic = 0.0;
  long parameter_count = 0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
  std::string diagnostic;
  ModelParams params;
  std::vector<std::size_t> sizes;
  std::vector<std::optional<Eigen::MatrixXd>> covariance;  // unconstrained survival vector
  std::vector<CellStats> cells;
};

FitDocument make_fit_document(const Dataset& dataset, const ModelData& data, const ModelFit& fit);

void write_fit_document(const std::filesystem::path& path, const FitDocument& doc);

/// Throws InputError when the file is missing or malformed.
FitDocument read_fit_document(const std::filesystem::path& path);

}  // namespace frailcwm
