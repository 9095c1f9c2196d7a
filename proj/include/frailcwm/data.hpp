#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace frailcwm {

enum class VariableKind { continuous, categorical };

/// Declares one covariate column and the part(s) of the model that consume it.
///
/// `in_marginal` variables get a cluster-wise density (Gaussian for continuous,
/// multinomial for categorical); `in_regression` variables enter the linear
/// predictor of the survival component. Both flags may be set.
struct VariableSpec {
  std::string name;
  VariableKind kind = VariableKind::continuous;
  std::vector<std::string> categories;  // categorical only, first = reference
  bool in_marginal = false;
  bool in_regression = false;
};

/// One statistical unit. `values` is aligned with the schema; categorical
/// entries hold the 0-based index of the category.
struct Observation {
  double time = 0.0;
  int status = 0;
  std::size_t group = 0;  // 0-based index into Dataset::group_labels()
  std::vector<double> values;
};

void validate_schema(const std::vector<VariableSpec>& schema);

class Dataset {
 public:
  /// Validates every invariant; throws InputError on the first violation.
  Dataset(std::vector<VariableSpec> schema, std::vector<Observation> observations,
          std::vector<std::string> group_labels);

  const std::vector<VariableSpec>& schema() const { return schema_; }
  const std::vector<Observation>& observations() const { return observations_; }
  const std::vector<std::string>& group_labels() const { return group_labels_; }
  const std::vector<std::size_t>& group_sizes() const { return group_sizes_; }

  std::size_t size() const { return observations_.size(); }
  std::size_t group_count() const { return group_labels_.size(); }

  std::size_t column_index(const std::string& name) const;

 private:
  std::vector<VariableSpec> schema_;
  std::vector<Observation> observations_;
  std::vector<std::string> group_labels_;
  std::vector<std::size_t> group_sizes_;
};

/// Reads a comma-separated table with a header row holding `time`, `status`,
/// `group` and every schema variable. Extra columns are ignored. Group labels
/// are indexed in order of first appearance.
Dataset load_dataset(const std::filesystem::path& path, const std::vector<VariableSpec>& schema);

/// Writes the dataset in the format read by load_dataset (17 significant digits).
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);

/// Design matrices consumed by the covariate model and the survival component.
struct CovariateBlocks {
  Eigen::MatrixXd U;  // continuous marginal variables, N x p
  Eigen::MatrixXi V;  // categorical marginal variables (category indices), N x q
  Eigen::MatrixXd X;  // regression design, N x m, reference-coded categoricals
  std::vector<int> category_counts;  // k_r for each column of V
  std::vector<std::string> u_names;
  std::vector<std::string> v_names;
  std::vector<std::string> x_names;  // categorical columns named `var=level`
};

CovariateBlocks split_covariates(const Dataset& dataset);

/// Regression columns generated by a schema, in order (`var` or `var=level`).
std::vector<std::string> regression_column_names(const std::vector<VariableSpec>& schema);

}  // namespace frailcwm
