#include "frailcwm/fit_document.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "frailcwm/error.hpp"

namespace frailcwm {

using Json = nlohmann::ordered_json;

namespace {

Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v[k]);
  return out;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_json(m.row(r).transpose()));
  return out;
}

Eigen::VectorXd vector_from(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = j.at(k).get<double>();
  return v;
}

Eigen::MatrixXd matrix_from(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw InputError("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

// NaN and infinity have no JSON representation.
void require_finite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw std::domain_error(fmt::format("fit document: non-finite {}", what));
}

}  // namespace

FitDocument make_fit_document(const Dataset& dataset, const ModelData& data, const ModelFit& fit) {
  FitDocument doc;
  doc.schema = dataset.schema();
  doc.groups = dataset.group_labels();
  doc.regression_columns = data.blocks.x_names;
  doc.family = fit.family;
  doc.algorithm = fit.algorithm;
  doc.seed = fit.seed;
  doc.N = data.size();
  doc.loglik = fit.final_loglik;
  doc.bic = fit.bic;
  doc.parameter_count = fit.parameter_count;
  doc.iterations = fit.iterations;
  doc.converged = fit.converged;
  doc.degenerate = fit.degenerate;
  doc.diagnostic = fit.diagnostic;
  doc.params = fit.params;
  doc.sizes = fit.partition.sizes();
  doc.covariance = fit.survival_covariance;
  doc.covariance.resize(fit.params.size());
  doc.cells = cell_statistics(data, fit.params, fit.partition);
  return doc;
}

void write_fit_document(const std::filesystem::path& path, const FitDocument& doc) {
  Json root;
  root["format"] = "frailcwm-fit";
  root["version"] = 1;
  Json schema = Json::array();
  for (const auto& var : doc.schema) {
    Json v;
    v["name"] = var.name;
    v["kind"] = var.kind == VariableKind::continuous ? "continuous" : "categorical";
    if (var.kind == VariableKind::categorical) v["categories"] = var.categories;
    v["marginal"] = var.in_marginal;
    v["regression"] = var.in_regression;
    schema.push_back(v);
  }
  root["schema"] = schema;
  root["groups"] = doc.groups;
  root["regression_columns"] = doc.regression_columns;
  root["family"] = std::string(family_name(doc.family));
  root["algorithm"] = std::string(algorithm_name(doc.algorithm));
  root["seed"] = doc.seed;
  root["N"] = doc.N;
  root["J"] = doc.groups.size();
  root["G"] = doc.params.size();
  require_finite(doc.loglik, "loglik");
  root["loglik"] = doc.loglik;
  root["bic"] = doc.bic;
  root["parameters"] = doc.parameter_count;
  root["iterations"] = doc.iterations;
  root["converged"] = doc.converged;
  root["degenerate"] = doc.degenerate;
  root["diagnostic"] = doc.diagnostic;

  Json clusters = Json::array();
  for (std::size_t g = 0; g < doc.params.size(); ++g) {
    const auto& c = doc.params.clusters[g];
    Json jc;
    jc["cluster"] = g + 1;
    jc["tau"] = c.tau;
    jc["size"] = g < doc.sizes.size() ? doc.sizes[g] : 0;
    jc["mean"] = vector_json(c.gaussian.mean);
    jc["cov"] = matrix_json(c.gaussian.cov);
    Json probs = Json::array();
    for (const auto& p : c.multinomial.probs) probs.push_back(vector_json(p));
    jc["probs"] = probs;
    jc["beta"] = vector_json(c.survival.beta);
    Json baseline;
    baseline["family"] = std::string(family_name(family_of(c.survival.baseline)));
    Json values;
    auto names = parameter_names(family_of(c.survival.baseline));
    auto natural = natural_parameters(c.survival.baseline);
    for (std::size_t k = 0; k < names.size(); ++k) values[names[k]] = natural[k];
    baseline["parameters"] = values;
    jc["baseline"] = baseline;
    jc["theta"] = c.survival.theta;
    jc["unconstrained"] = vector_json(pack(c.survival));
    if (g < doc.covariance.size() && doc.covariance[g] && doc.covariance[g]->allFinite())
      jc["covariance"] = matrix_json(*doc.covariance[g]);
    else
      jc["covariance"] = nullptr;
    clusters.push_back(jc);
  }
  root["clusters"] = clusters;

  Json cells = Json::array();
  for (const auto& c : doc.cells) {
    Json jc;
    jc["group"] = doc.groups.at(c.group);
    jc["cluster"] = c.cluster + 1;
    jc["n"] = c.n;
    jc["events"] = c.events;
    jc["cumulative_hazard"] = c.cumulative_hazard;
    cells.push_back(jc);
  }
  root["cells"] = cells;

  std::ofstream out(path);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
  out << root.dump(2) << '\n';
}

FitDocument read_fit_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open fit document '{}'", path.string()));
  FitDocument doc;
  try {
    Json root = Json::parse(in);
    if (root.at("format").get<std::string>() != "frailcwm-fit")
      throw InputError("not a frailcwm fit document");
    for (const auto& v : root.at("schema")) {
      VariableSpec spec;
      spec.name = v.at("name").get<std::string>();
      spec.kind = v.at("kind").get<std::string>() == "categorical" ? VariableKind::categorical : VariableKind::continuous;
      if (spec.kind == VariableKind::categorical) spec.categories = v.at("categories").get<std::vector<std::string>>();
      spec.in_marginal = v.at("marginal").get<bool>();
      spec.in_regression = v.at("regression").get<bool>();
      doc.schema.push_back(spec);
    }
    validate_schema(doc.schema);
    doc.groups = root.at("groups").get<std::vector<std::string>>();
    doc.regression_columns = root.at("regression_columns").get<std::vector<std::string>>();
    doc.family = parse_family(root.at("family").get<std::string>());
    doc.algorithm = parse_algorithm(root.at("algorithm").get<std::string>());
    doc.seed = root.at("seed").get<std::uint64_t>();
    doc.N = root.at("N").get<std::size_t>();
    doc.loglik = root.at("loglik").get<double>();
    doc.bic = root.at("bic").get<double>();
    doc.parameter_count = root.at("parameters").get<long>();
    doc.iterations = root.at("iterations").get<int>();
    doc.converged = root.at("converged").get<bool>();
    doc.degenerate = root.at("degenerate").get<bool>();
    doc.diagnostic = root.at("diagnostic").get<std::string>();

    const auto m = static_cast<Eigen::Index>(doc.regression_columns.size());
    for (const auto& jc : root.at("clusters")) {
      ClusterParams c;
      c.tau = jc.at("tau").get<double>();
      doc.sizes.push_back(jc.at("size").get<std::size_t>());
      c.gaussian.mean = vector_from(jc.at("mean"));
      c.gaussian.cov = matrix_from(jc.at("cov"));
      for (const auto& p : jc.at("probs")) c.multinomial.probs.push_back(vector_from(p));
      c.survival.beta = vector_from(jc.at("beta"));
      if (c.survival.beta.size() != m) throw InputError("coefficient count differs from regression columns");
      Family family = parse_family(jc.at("baseline").at("family").get<std::string>());
      std::vector<double> natural;
      for (const auto& name : parameter_names(family))
        natural.push_back(jc.at("baseline").at("parameters").at(name).get<double>());
      c.survival.baseline = from_natural(family, natural);
      c.survival.theta = jc.at("theta").get<double>();
      if (jc.at("covariance").is_null()) {
        doc.covariance.emplace_back(std::nullopt);
      } else {
        Eigen::MatrixXd cov = matrix_from(jc.at("covariance"));
        if (cov.rows() != m + parameter_count(family) + 1 || cov.cols() != cov.rows())
          throw InputError("survival covariance has the wrong shape");
        doc.covariance.emplace_back(std::move(cov));
      }
      doc.params.clusters.push_back(std::move(c));
    }
    if (doc.params.size() == 0) throw InputError("fit document has no clusters");

    for (const auto& jc : root.at("cells")) {
      CellStats cell;
      auto label = jc.at("group").get<std::string>();
      auto it = std::find(doc.groups.begin(), doc.groups.end(), label);
      if (it == doc.groups.end()) throw InputError(fmt::format("cell refers to unknown group '{}'", label));
      cell.group = static_cast<std::size_t>(it - doc.groups.begin());
      cell.cluster = jc.at("cluster").get<int>() - 1;
      if (cell.cluster < 0 || static_cast<std::size_t>(cell.cluster) >= doc.params.size())
        throw InputError("cell refers to an unknown cluster");
      cell.n = jc.at("n").get<std::size_t>();
      cell.events = jc.at("events").get<int>();
      cell.cumulative_hazard = jc.at("cumulative_hazard").get<double>();
      doc.cells.push_back(cell);
    }
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw InputError(fmt::format("malformed fit document '{}': {}", path.string(), e.what()));
  }
  return doc;
}

}  // namespace frailcwm
