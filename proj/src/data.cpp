#include "frailcwm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "frailcwm/error.hpp"

namespace frailcwm {

namespace {

const std::set<std::string> kReserved = {"time", "status", "group"};

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string_view rest(line);
  while (true) {
    auto pos = rest.find(',');
    out.push_back(trim(rest.substr(0, pos)));
    if (pos == std::string_view::npos) break;
    rest.remove_prefix(pos + 1);
  }
  return out;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* first = text.data();
  const char* last = first + text.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::string fmt_double(double x) { return fmt::format("{:.17g}", x); }

}  // namespace

void validate_schema(const std::vector<VariableSpec>& schema) {
  std::set<std::string> seen;
  for (const auto& var : schema) {
    if (var.name.empty()) throw InputError("schema: variable with empty name");
    if (kReserved.count(var.name))
      throw InputError(fmt::format("schema: '{}' is a reserved column name", var.name));
    if (!seen.insert(var.name).second)
      throw InputError(fmt::format("schema: duplicate variable '{}'", var.name));
    if (!var.in_marginal && !var.in_regression)
      throw InputError(
          fmt::format("schema: variable '{}' is neither marginal nor regression", var.name));
    if (var.kind == VariableKind::categorical) {
      if (var.categories.size() < 2)
        throw InputError(
            fmt::format("schema: categorical variable '{}' needs at least 2 categories", var.name));
      std::set<std::string> levels(var.categories.begin(), var.categories.end());
      if (levels.size() != var.categories.size())
        throw InputError(fmt::format("schema: variable '{}' repeats a category", var.name));
    } else if (!var.categories.empty()) {
      throw InputError(fmt::format("schema: continuous variable '{}' lists categories", var.name));
    }
  }
}

Dataset::Dataset(std::vector<VariableSpec> schema, std::vector<Observation> observations,
                 std::vector<std::string> group_labels)
    : schema_(std::move(schema)),
      observations_(std::move(observations)),
      group_labels_(std::move(group_labels)) {
  validate_schema(schema_);
  if (observations_.empty()) throw InputError("dataset: no observations");
  if (group_labels_.empty()) throw InputError("dataset: no groups");
  std::set<std::string> unique_labels(group_labels_.begin(), group_labels_.end());
  if (unique_labels.size() != group_labels_.size())
    throw InputError("dataset: duplicate group label");

  group_sizes_.assign(group_labels_.size(), 0);
  for (std::size_t i = 0; i < observations_.size(); ++i) {
    const auto& obs = observations_[i];
    if (!(obs.time > 0.0) || !std::isfinite(obs.time))
      throw InputError(fmt::format("observation {}: time must be positive and finite", i + 1));
    if (obs.status != 0 && obs.status != 1)
      throw InputError(fmt::format("observation {}: status outside {{0,1}}", i + 1));
    if (obs.group >= group_labels_.size())
      throw InputError(fmt::format("observation {}: group index out of range", i + 1));
    if (obs.values.size() != schema_.size())
      throw InputError(fmt::format("observation {}: expected {} covariate values, got {}", i + 1,
                                   schema_.size(), obs.values.size()));
    for (std::size_t c = 0; c < schema_.size(); ++c) {
      double v = obs.values[c];
      if (!std::isfinite(v))
        throw InputError(
            fmt::format("observation {}, column '{}': missing or non-finite value", i + 1,
                        schema_[c].name));
      if (schema_[c].kind == VariableKind::categorical) {
        double k = static_cast<double>(schema_[c].categories.size());
        if (v < 0 || v >= k || v != std::floor(v))
          throw InputError(fmt::format("observation {}, column '{}': undeclared category", i + 1,
                                       schema_[c].name));
      }
    }
    ++group_sizes_[obs.group];
  }
  for (std::size_t j = 0; j < group_sizes_.size(); ++j)
    if (group_sizes_[j] == 0)
      throw InputError(fmt::format("dataset: group '{}' has no observations", group_labels_[j]));
}

std::size_t Dataset::column_index(const std::string& name) const {
  for (std::size_t c = 0; c < schema_.size(); ++c)
    if (schema_[c].name == name) return c;
  throw InputError(fmt::format("unknown variable '{}'", name));
}

Dataset load_dataset(const std::filesystem::path& path, const std::vector<VariableSpec>& schema) {
  validate_schema(schema);
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open dataset '{}'", path.string()));

  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw InputError(fmt::format("dataset '{}' is empty", path.string()));
  auto header = split_line(line);

  auto find_column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw InputError(fmt::format("dataset '{}': missing column '{}'", path.string(), name));
    return static_cast<std::size_t>(it - header.begin());
  };
  std::size_t time_col = find_column("time");
  std::size_t status_col = find_column("status");
  std::size_t group_col = find_column("group");
  std::vector<std::size_t> var_cols;
  for (const auto& var : schema) var_cols.push_back(find_column(var.name));

  std::vector<Observation> observations;
  std::vector<std::string> labels;
  std::unordered_map<std::string, std::size_t> label_index;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != header.size())
      throw InputError(fmt::format("line {}: expected {} fields, got {}", line_no, header.size(),
                                   fields.size()));
    auto where = [&](const std::string& column) {
      return fmt::format("line {}, column '{}'", line_no, column);
    };

    Observation obs;
    if (!parse_double(fields[time_col], obs.time))
      throw InputError(fmt::format("{}: non-numeric time '{}'", where("time"), fields[time_col]));
    if (!(obs.time > 0.0) || !std::isfinite(obs.time))
      throw InputError(fmt::format("{}: time must be > 0", where("time")));

    const auto& status = fields[status_col];
    if (status == "0")
      obs.status = 0;
    else if (status == "1")
      obs.status = 1;
    else
      throw InputError(fmt::format("{}: status outside {{0,1}} ('{}')", where("status"), status));

    const auto& label = fields[group_col];
    if (label.empty()) throw InputError(fmt::format("{}: missing group label", where("group")));
    auto [it, inserted] = label_index.try_emplace(label, labels.size());
    if (inserted) labels.push_back(label);
    obs.group = it->second;

    obs.values.reserve(schema.size());
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const auto& var = schema[c];
      const auto& text = fields[var_cols[c]];
      if (text.empty() || text == "NA")
        throw InputError(fmt::format("{}: missing value", where(var.name)));
      if (var.kind == VariableKind::continuous) {
        double v;
        if (!parse_double(text, v) || !std::isfinite(v))
          throw InputError(fmt::format("{}: non-numeric value '{}'", where(var.name), text));
        obs.values.push_back(v);
      } else {
        auto cat = std::find(var.categories.begin(), var.categories.end(), text);
        if (cat == var.categories.end())
          throw InputError(fmt::format("{}: undeclared category '{}'", where(var.name), text));
        obs.values.push_back(static_cast<double>(cat - var.categories.begin()));
      }
    }
    observations.push_back(std::move(obs));
  }
  if (observations.empty())
    throw InputError(fmt::format("dataset '{}' has no data rows", path.string()));
  return Dataset(schema, std::move(observations), std::move(labels));
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
  const auto& schema = dataset.schema();
  out << "time,status,group";
  for (const auto& var : schema) out << ',' << var.name;
  out << '\n';
  for (const auto& obs : dataset.observations()) {
    out << fmt_double(obs.time) << ',' << obs.status << ',' << dataset.group_labels()[obs.group];
    for (std::size_t c = 0; c < schema.size(); ++c) {
      out << ',';
      if (schema[c].kind == VariableKind::continuous)
        out << fmt_double(obs.values[c]);
      else
        out << schema[c].categories[static_cast<std::size_t>(obs.values[c])];
    }
    out << '\n';
  }
}

std::vector<std::string> regression_column_names(const std::vector<VariableSpec>& schema) {
  std::vector<std::string> names;
  for (const auto& var : schema) {
    if (!var.in_regression) continue;
    if (var.kind == VariableKind::continuous) {
      names.push_back(var.name);
    } else {
      for (std::size_t k = 1; k < var.categories.size(); ++k)
        names.push_back(var.name + "=" + var.categories[k]);
    }
  }
  return names;
}

CovariateBlocks split_covariates(const Dataset& dataset) {
  const auto& schema = dataset.schema();
  const auto n = static_cast<Eigen::Index>(dataset.size());
  CovariateBlocks blocks;

  std::vector<std::size_t> u_cols, v_cols;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (!schema[c].in_marginal) continue;
    if (schema[c].kind == VariableKind::continuous) {
      u_cols.push_back(c);
      blocks.u_names.push_back(schema[c].name);
    } else {
      v_cols.push_back(c);
      blocks.v_names.push_back(schema[c].name);
      blocks.category_counts.push_back(static_cast<int>(schema[c].categories.size()));
    }
  }
  blocks.x_names = regression_column_names(schema);

  blocks.U.resize(n, static_cast<Eigen::Index>(u_cols.size()));
  blocks.V.resize(n, static_cast<Eigen::Index>(v_cols.size()));
  blocks.X.setZero(n, static_cast<Eigen::Index>(blocks.x_names.size()));

  const auto& obs = dataset.observations();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& values = obs[static_cast<std::size_t>(i)].values;
    for (std::size_t k = 0; k < u_cols.size(); ++k)
      blocks.U(i, static_cast<Eigen::Index>(k)) = values[u_cols[k]];
    for (std::size_t k = 0; k < v_cols.size(); ++k)
      blocks.V(i, static_cast<Eigen::Index>(k)) = static_cast<int>(values[v_cols[k]]);
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (!schema[c].in_regression) continue;
      if (schema[c].kind == VariableKind::continuous) {
        blocks.X(i, col++) = values[c];
      } else {
        auto level = static_cast<Eigen::Index>(values[c]);
        auto levels = static_cast<Eigen::Index>(schema[c].categories.size());
        if (level > 0) blocks.X(i, col + level - 1) = 1.0;
        col += levels - 1;
      }
    }
  }
  return blocks;
}

}  // namespace frailcwm
