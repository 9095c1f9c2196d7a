#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "frailcwm/em.hpp"
#include "frailcwm/simulation.hpp"

namespace frailcwm::cli {

enum ExitCode : int {
  kOk = 0,
  kInternalError = 1,
  kInputError = 2,
  kDegenerate = 3,
  kNotConverged = 4,
};

struct RunConfig {
  std::filesystem::path dataset;  // resolved against the config file's directory
  std::vector<VariableSpec> schema;
  std::vector<int> Gs{1};
  std::vector<Family> families{Family::weibull};
  Algorithm algorithm = Algorithm::cem;
  int restarts = 20;
  EmOptions em;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::optional<DGPConfig> dgp;
  int replicates = 10;
  std::map<std::string, std::string> profile;
  std::vector<double> t_grid;
};

/// Reads a JSON run configuration. Throws InputError on malformed content.
RunConfig load_run_config(const std::filesystem::path& path);

/// "3", "1,2,4" or "1-5".
std::vector<int> parse_g_list(const std::string& text);
/// Comma-separated family names, or "all".
std::vector<Family> parse_family_list(const std::string& text);
/// "from:to:count" (evenly spaced) or a comma-separated list.
std::vector<double> parse_t_grid(const std::string& text);
/// "name=value,name=value"; values are numbers or category labels.
std::map<std::string, std::string> parse_profile(const std::string& text);

/// Regression row for a covariate profile. Unlisted variables sit at zero or
/// their reference category. Throws InputError for unknown or non-regression
/// variables and undeclared categories.
Eigen::VectorXd profile_vector(const std::vector<VariableSpec>& schema, const std::map<std::string, std::string>& profile);

/// Entry point; returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace frailcwm::cli
