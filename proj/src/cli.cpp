#include "frailcwm/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "frailcwm/error.hpp"
#include "frailcwm/fit_document.hpp"
#include "frailcwm/frailty.hpp"
#include "frailcwm/selection.hpp"

namespace frailcwm::cli {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string num(double x) { return fmt::format("{:.17g}", x); }
std::string num(const std::optional<double>& x) { return x ? num(*x) : std::string(); }

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path), path_(path) {
    if (!out_) throw InputError(fmt::format("cannot write '{}'", path.string()));
    row(header);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k) out_ << ',';
      out_ << quote(fields[k]);
    }
    out_ << '\n';
  }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  std::ofstream out_;
  fs::path path_;
};

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
  out << j.dump(2) << '\n';
}

std::string trim(std::string s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw InputError(fmt::format("{}: '{}' is not a number", what, text));
  }
}

int to_int(const std::string& text, const std::string& what) {
  double v = to_double(text, what);
  if (v != std::floor(v)) throw InputError(fmt::format("{}: '{}' is not an integer", what, text));
  return static_cast<int>(v);
}

// ---- configuration ----------------------------------------------------------

Json schema_json(const std::vector<VariableSpec>& schema) {
  Json out = Json::array();
  for (const auto& var : schema) {
    Json v;
    v["name"] = var.name;
    v["kind"] = var.kind == VariableKind::continuous ? "continuous" : "categorical";
    if (var.kind == VariableKind::categorical) v["categories"] = var.categories;
    v["marginal"] = var.in_marginal;
    v["regression"] = var.in_regression;
    out.push_back(v);
  }
  return out;
}

std::vector<VariableSpec> schema_from(const Json& j) {
  std::vector<VariableSpec> schema;
  for (const auto& v : j) {
    VariableSpec spec;
    spec.name = v.at("name").get<std::string>();
    auto kind = v.value("kind", std::string("continuous"));
    if (kind == "categorical")
      spec.kind = VariableKind::categorical;
    else if (kind != "continuous")
      throw InputError(fmt::format("variable '{}': unknown kind '{}'", spec.name, kind));
    if (spec.kind == VariableKind::categorical) spec.categories = v.at("categories").get<std::vector<std::string>>();
    spec.in_marginal = v.value("marginal", false);
    spec.in_regression = v.value("regression", false);
    schema.push_back(spec);
  }
  validate_schema(schema);
  return schema;
}

template <class T, class Fn>
std::vector<T> scalar_or_list(const Json& j, Fn convert) {
  std::vector<T> out;
  if (j.is_array())
    for (const auto& x : j) out.push_back(convert(x));
  else
    out.push_back(convert(j));
  return out;
}

Baseline baseline_from(const Json& j) {
  Family family = parse_family(j.at("family").get<std::string>());
  std::vector<double> values;
  for (const auto& name : parameter_names(family)) values.push_back(j.at("parameters").at(name).get<double>());
  return from_natural(family, values);
}

DGPConfig dgp_from(const Json& j) {
  auto preset = j.value("preset", std::string(j.contains("clusters") ? "none" : "benchmark"));
  DGPConfig c;
  if (preset == "benchmark")
    c = benchmark_config();
  else if (preset == "application")
    c = application_config();
  else if (preset != "none")
    throw InputError(fmt::format("unknown simulation preset '{}'", preset));

  if (j.contains("G")) c.G = j.at("G").get<int>();
  if (j.contains("J")) c.J = j.at("J").get<int>();
  if (j.contains("sizes")) c.sizes = j.at("sizes").get<std::vector<int>>();
  if (j.contains("censor_time")) {
    if (j.at("censor_time").is_null())
      c.censor_time.reset();
    else
      c.censor_time = j.at("censor_time").get<double>();
  }
  if (j.contains("clusters")) {
    c.clusters.clear();
    for (const auto& jc : j.at("clusters")) {
      ClusterTruth t;
      auto beta = jc.at("beta").get<std::vector<double>>();
      t.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
      t.theta = jc.at("theta").get<double>();
      t.baseline = baseline_from(jc.at("baseline"));
      c.clusters.push_back(t);
    }
  }
  if (j.contains("continuous")) {
    c.continuous.clear();
    for (const auto& v : j.at("continuous"))
      c.continuous.push_back({v.at("name").get<std::string>(), v.at("mean").get<std::vector<double>>(),
                              v.at("sd").get<std::vector<double>>(), v.value("marginal", true),
                              v.value("regression", true)});
  }
  if (j.contains("categorical")) {
    c.categorical.clear();
    for (const auto& v : j.at("categorical"))
      c.categorical.push_back({v.at("name").get<std::string>(), v.at("categories").get<std::vector<std::string>>(),
                               v.at("probs").get<std::vector<std::vector<double>>>(), v.value("marginal", true),
                               v.value("regression", true)});
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  return c;
}

// ---- fit artifacts ----------------------------------------------------------

void write_fit_artifacts(const fs::path& dir, const Dataset& dataset, const ModelData& data, const ModelFit& fit) {
  fs::create_directories(dir);
  write_fit_document(dir / "fit.json", make_fit_document(dataset, data, fit));

  CsvWriter partition(dir / "partition.csv", {"row", "group", "cluster"});
  for (std::size_t i = 0; i < data.size(); ++i)
    partition.row({std::to_string(i + 1), dataset.group_labels()[data.group[i]],
                   std::to_string(fit.partition.assignment[i] + 1)});

  CsvWriter trace(dir / "loglik_trace.csv", {"iteration", "loglik", "warnings"});
  for (std::size_t k = 0; k < fit.loglik_trace.size(); ++k)
    trace.row({std::to_string(k), num(fit.loglik_trace[k]), std::to_string(fit.flags[k].size())});

  CsvWriter flags(dir / "flags.csv", {"iteration", "message"});
  for (std::size_t k = 0; k < fit.flags.size(); ++k)
    for (const auto& msg : fit.flags[k]) flags.row({std::to_string(k), msg});
  if (fit.degenerate) flags.row({std::to_string(fit.iterations), fit.diagnostic});

  std::vector<std::string> header{"row"};
  for (int g = 0; g < fit.partition.G; ++g) header.push_back(fmt::format("cluster_{}", g + 1));
  CsvWriter posterior(dir / "posterior.csv", header);
  for (Eigen::Index i = 0; i < fit.posterior.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i + 1)};
    for (Eigen::Index g = 0; g < fit.posterior.cols(); ++g) row.push_back(num(fit.posterior(i, g)));
    posterior.row(row);
  }

  CsvWriter wald(dir / "wald.csv", {"cluster", "parameter", "estimate", "hazard_ratio", "std_error", "z", "p_value",
                                    "boundary_approximate"});
  for (std::size_t g = 0; g < fit.params.size(); ++g) {
    SurvivalFitResult r;
    r.params = fit.params.clusters[g].survival;
    if (g < fit.survival_covariance.size()) r.covariance = fit.survival_covariance[g];
    for (const auto& w : wald_tests(r, data.blocks.x_names)) {
      bool is_beta = w.parameter.rfind("beta[", 0) == 0;
      wald.row({std::to_string(g + 1), w.parameter, num(w.estimate),
                is_beta ? num(std::exp(w.estimate)) : std::string(), num(w.std_error), num(w.z), num(w.p_value),
                w.boundary_approximate ? "yes" : "no"});
    }
  }
}

// ---- commands -----------------------------------------------------------------

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<unsigned> threads;
  std::string G, family, algorithm, fit, profile, t_grid, preset;
  std::optional<int> restarts, replicates;
};

RunConfig resolve(const Overrides& o, bool need_config) {
  RunConfig config;
  if (!o.config.empty())
    config = load_run_config(o.config);
  else if (need_config)
    throw InputError("--config is required for this command");
  if (o.seed) config.seed = o.seed;
  if (o.threads) config.threads = *o.threads;
  if (!o.G.empty()) config.Gs = parse_g_list(o.G);
  if (!o.family.empty()) config.families = parse_family_list(o.family);
  if (!o.algorithm.empty()) {
    try {
      config.algorithm = parse_algorithm(o.algorithm);
    } catch (const std::invalid_argument& e) {
      throw InputError(e.what());
    }
  }
  if (o.restarts) config.restarts = *o.restarts;
  if (o.replicates) config.replicates = *o.replicates;
  if (!o.profile.empty()) config.profile = parse_profile(o.profile);
  if (!o.t_grid.empty()) config.t_grid = parse_t_grid(o.t_grid);
  if (!o.preset.empty()) {
    Json j;
    j["preset"] = o.preset;
    config.dgp = dgp_from(j);
  }
  if (!config.seed) throw InputError("a seed is required (--seed or \"seed\" in the config)");
  if (config.restarts < 1) throw InputError("restarts must be at least 1");
  if (config.threads < 1) config.threads = 1;
  config.em.seed = *config.seed;
  return config;
}

Dataset load_configured_dataset(const RunConfig& config) {
  if (config.dataset.empty()) throw InputError("the config names no dataset");
  if (config.schema.empty()) throw InputError("the config declares no schema");
  return load_dataset(config.dataset, config.schema);
}

int fit_exit_code(const ModelFit& fit) {
  if (fit.degenerate) return kDegenerate;
  return fit.converged ? kOk : kNotConverged;
}

int cmd_fit(const Overrides& o) {
  RunConfig config = resolve(o, true);
  if (config.Gs.size() != 1 || config.families.size() != 1)
    throw InputError("fit needs a single G and a single family (use grid for several)");
  Dataset dataset = load_configured_dataset(config);
  ModelData data = ModelData::from_dataset(dataset);
  ModelFit fit = run_em(data, config.Gs.front(), config.families.front(), config.algorithm, config.em);
  write_fit_artifacts(o.out, dataset, data, fit);
  if (fit.degenerate) std::cerr << "fit: " << fit.diagnostic << '\n';
  return fit_exit_code(fit);
}

int cmd_grid(const Overrides& o) {
  RunConfig config = resolve(o, true);
  Dataset dataset = load_configured_dataset(config);
  ModelData data = ModelData::from_dataset(dataset);
  GridResult grid = grid_search(data, config.Gs, config.families, config.algorithm, config.restarts, *config.seed,
                                config.em, config.threads);
  fs::create_directories(o.out);
  CsvWriter table(fs::path(o.out) / "bic_table.csv",
                  {"G", "family", "restarts", "successful", "loglik", "d", "bic", "status", "best"});
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    const auto& cell = grid.cells[c];
    table.row({std::to_string(cell.G), std::string(family_name(cell.family)), std::to_string(cell.restarts),
               std::to_string(cell.successful), cell.failed ? "" : num(cell.best_loglik), std::to_string(cell.d),
               cell.failed ? "" : num(cell.bic), cell.failed ? "FAILED" : "ok",
               grid.best && *grid.best == c ? "*" : ""});
  }
  CsvWriter restarts(fs::path(o.out) / "grid_restarts.csv", {"G", "family", "restart", "loglik", "error"});
  for (const auto& cell : grid.cells)
    for (int r = 0; r < cell.restarts; ++r) {
      double ll = cell.restart_logliks[static_cast<std::size_t>(r)];
      restarts.row({std::to_string(cell.G), std::string(family_name(cell.family)), std::to_string(r + 1),
                    std::isfinite(ll) ? num(ll) : "", cell.restart_errors[static_cast<std::size_t>(r)]});
    }
  if (!grid.best) {
    std::cerr << "grid: every cell failed\n";
    return kDegenerate;
  }
  const auto& best = grid.cells[*grid.best];
  write_fit_artifacts(fs::path(o.out) / "best", dataset, data, *best.best_fit);
  return kOk;
}

int cmd_simulate(const Overrides& o) {
  RunConfig config = resolve(o, false);
  DGPConfig dgp = config.dgp ? *config.dgp : benchmark_config();
  SimulatedData sim = simulate_dataset(dgp, *config.seed);
  fs::path out(o.out);
  fs::create_directories(out);
  write_dataset(out / "dataset.csv", sim.dataset);
  CsvWriter truth(out / "truth_partition.csv", {"row", "group", "cluster"});
  const auto& obs = sim.dataset.observations();
  for (std::size_t i = 0; i < obs.size(); ++i)
    truth.row({std::to_string(i + 1), sim.dataset.group_labels()[obs[i].group],
               std::to_string(sim.truth.assignment[i] + 1)});
  CsvWriter frailties(out / "truth_frailties.csv", {"group", "cluster", "frailty"});
  for (Eigen::Index j = 0; j < sim.frailties.rows(); ++j)
    for (Eigen::Index g = 0; g < sim.frailties.cols(); ++g)
      frailties.row({sim.dataset.group_labels()[static_cast<std::size_t>(j)], std::to_string(g + 1),
                     num(sim.frailties(j, g))});

  // A configuration that fits the simulated data as-is.
  Json fit_config;
  fit_config["dataset"] = "dataset.csv";
  fit_config["seed"] = *config.seed;
  fit_config["schema"] = schema_json(sim.dataset.schema());
  Json model;
  model["G"] = dgp.G;
  model["family"] = std::string(family_name(family_of(dgp.clusters.front().baseline)));
  model["algorithm"] = "cem";
  model["restarts"] = config.restarts;
  fit_config["model"] = model;
  write_json(out / "fit_config.json", fit_config);
  return kOk;
}

int cmd_curves(const Overrides& o) {
  if (o.fit.empty()) throw InputError("--fit is required");
  RunConfig config;
  if (!o.config.empty()) config = load_run_config(o.config);
  if (!o.profile.empty()) config.profile = parse_profile(o.profile);
  if (!o.t_grid.empty()) config.t_grid = parse_t_grid(o.t_grid);
  if (config.t_grid.empty()) throw InputError("a time grid is required (--t-grid or curves.t_grid in the config)");
  FitDocument doc = read_fit_document(o.fit);
  Eigen::VectorXd x = profile_vector(doc.schema, config.profile);

  fs::path out(o.out);
  fs::create_directories(out);
  CsvWriter surv(out / "survival_curves.csv", {"cluster", "t", "S", "se", "lower", "upper"});
  CsvWriter haz(out / "hazard_curves.csv", {"cluster", "t", "hazard"});
  for (std::size_t g = 0; g < doc.params.size(); ++g) {
    const auto& sp = doc.params.clusters[g].survival;
    Curve s = survival_curve(sp, doc.covariance[g], x, config.t_grid);
    if (!s.has_bands) std::cerr << fmt::format("curves: cluster {} has no covariance; bands omitted\n", g + 1);
    for (const auto& p : s.points)
      surv.row({std::to_string(g + 1), num(p.t), num(p.value), num(p.se), num(p.lower), num(p.upper)});
    for (const auto& p : hazard_curve(sp, x, config.t_grid).points)
      haz.row({std::to_string(g + 1), num(p.t), num(p.value)});
  }
  return kOk;
}

int cmd_frailties(const Overrides& o) {
  if (o.fit.empty()) throw InputError("--fit is required");
  FitDocument doc = read_fit_document(o.fit);
  fs::path out(o.out);
  fs::create_directories(out);
  CsvWriter table(out / "frailties.csv",
                  {"group", "cluster", "n", "events", "cumulative_hazard", "mean", "variance", "lower", "upper", "effect"});
  std::vector<std::size_t> sizes;
  auto rows = frailty_estimates(doc.cells, doc.params);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    table.row({doc.groups[r.group], std::to_string(r.cluster + 1), std::to_string(doc.cells[k].n),
               std::to_string(r.events), num(r.cumulative_hazard), num(r.posterior.mean), num(r.posterior.variance),
               num(r.posterior.ci_low), num(r.posterior.ci_high), std::string(effect_name(r.effect))});
  }
  return kOk;
}

int cmd_study(const Overrides& o) {
  RunConfig config = resolve(o, false);
  DGPConfig dgp = config.dgp ? *config.dgp : benchmark_config();
  if (o.config.empty() && o.G.empty()) {
    config.Gs = {1, 2, 3, 4};
  }
  if (config.replicates < 1) throw InputError("replicates must be at least 1");
  StudySummary study = replicate_study(dgp, config.replicates, config.Gs, config.families, config.restarts,
                                       *config.seed, config.em, config.threads);
  fs::path out(o.out);
  fs::create_directories(out);
  CsvWriter reps(out / "study_replicates.csv",
                 {"replicate", "seed", "status", "selected_G", "selected_family", "ari", "misclassification", "error"});
  CsvWriter bics(out / "study_bic.csv", {"replicate", "G", "family", "successful", "loglik", "d", "bic", "status", "best"});
  CsvWriter pars(out / "study_parameters.csv", {"replicate", "cluster", "parameter", "truth", "estimate"});
  for (const auto& rep : study.replicates) {
    std::string id = std::to_string(rep.replicate + 1);
    reps.row({id, std::to_string(rep.seed), rep.failed ? "FAILED" : "ok",
              rep.failed ? "" : std::to_string(rep.selected_G),
              rep.failed ? "" : std::string(family_name(rep.selected_family)), rep.failed ? "" : num(rep.ari),
              rep.failed ? "" : num(rep.misclassification), rep.error});
    for (std::size_t c = 0; c < rep.grid.cells.size(); ++c) {
      const auto& cell = rep.grid.cells[c];
      bics.row({id, std::to_string(cell.G), std::string(family_name(cell.family)), std::to_string(cell.successful),
                cell.failed ? "" : num(cell.best_loglik), std::to_string(cell.d), cell.failed ? "" : num(cell.bic),
                cell.failed ? "FAILED" : "ok", rep.grid.best && *rep.grid.best == c ? "*" : ""});
    }
    for (const auto& p : rep.parameters)
      pars.row({id, std::to_string(p.cluster + 1), p.parameter, num(p.truth), num(p.estimate)});
  }
  Json summary;
  summary["replicates"] = study.replicates.size();
  summary["failed"] = study.failed;
  auto finite_or_null = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
  summary["mean_ari"] = finite_or_null(study.mean_ari);
  summary["sd_ari"] = finite_or_null(study.sd_ari);
  summary["mean_misclassification"] = finite_or_null(study.mean_misclassification);
  summary["sd_misclassification"] = finite_or_null(study.sd_misclassification);
  Json counts = Json::object();
  for (const auto& [G, n] : study.selected_counts) counts[std::to_string(G)] = n;
  summary["selected_G"] = counts;
  write_json(out / "study_summary.json", summary);
  return study.failed == static_cast<int>(study.replicates.size()) ? kDegenerate : kOk;
}

}  // namespace

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open config '{}'", path.string()));
  RunConfig config;
  try {
    Json root = Json::parse(in, nullptr, true, true);
    if (!root.is_object()) throw InputError("config must be a JSON object");
    if (root.contains("dataset")) {
      fs::path ds = root.at("dataset").get<std::string>();
      config.dataset = ds.is_absolute() ? ds : path.parent_path() / ds;
    }
    if (root.contains("schema")) config.schema = schema_from(root.at("schema"));
    if (root.contains("seed")) config.seed = root.at("seed").get<std::uint64_t>();
    if (root.contains("threads")) config.threads = root.at("threads").get<unsigned>();
    if (root.contains("model")) {
      const auto& m = root.at("model");
      if (m.contains("G")) config.Gs = scalar_or_list<int>(m.at("G"), [](const Json& x) { return x.get<int>(); });
      if (m.contains("family")) {
        config.families.clear();
        for (const auto& name : scalar_or_list<std::string>(m.at("family"), [](const Json& x) { return x.get<std::string>(); }))
          for (Family f : parse_family_list(name)) config.families.push_back(f);
      }
      if (m.contains("algorithm")) config.algorithm = parse_algorithm(m.at("algorithm").get<std::string>());
      if (m.contains("restarts")) config.restarts = m.at("restarts").get<int>();
      if (m.contains("epsilon")) config.em.epsilon = m.at("epsilon").get<double>();
      if (m.contains("max_iter")) config.em.max_iter = m.at("max_iter").get<int>();
      if (m.contains("burn_in")) config.em.burn_in = m.at("burn_in").get<int>();
      if (m.contains("iterations")) config.em.iterations = m.at("iterations").get<int>();
      if (m.contains("init_restarts")) config.em.init_restarts = m.at("init_restarts").get<int>();
    }
    if (root.contains("simulation")) {
      const auto& s = root.at("simulation");
      config.dgp = dgp_from(s);
      if (s.contains("replicates")) config.replicates = s.at("replicates").get<int>();
    }
    if (root.contains("curves")) {
      const auto& c = root.at("curves");
      if (c.contains("profile"))
        for (const auto& [name, value] : c.at("profile").items())
          config.profile[name] = value.is_string() ? value.get<std::string>() : num(value.get<double>());
      if (c.contains("t_grid")) {
        const auto& t = c.at("t_grid");
        config.t_grid = t.is_string() ? parse_t_grid(t.get<std::string>()) : t.get<std::vector<double>>();
      }
    }
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw InputError(fmt::format("config '{}': {}", path.string(), e.what()));
  }
  for (int G : config.Gs)
    if (G < 1) throw InputError("G must be at least 1");
  return config;
}

std::vector<int> parse_g_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split(text, ',')) {
    auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      int lo = to_int(item.substr(0, dash), "G range"), hi = to_int(item.substr(dash + 1), "G range");
      if (lo > hi) throw InputError(fmt::format("G range '{}' is empty", item));
      for (int g = lo; g <= hi; ++g) out.push_back(g);
    } else {
      out.push_back(to_int(item, "G"));
    }
  }
  if (out.empty()) throw InputError("empty G list");
  for (int g : out)
    if (g < 1) throw InputError("G must be at least 1");
  return out;
}

std::vector<Family> parse_family_list(const std::string& text) {
  if (trim(text) == "all") return {Family::exponential, Family::weibull, Family::gompertz, Family::lognormal};
  std::vector<Family> out;
  for (const auto& item : split(text, ',')) {
    try {
      out.push_back(parse_family(item));
    } catch (const std::invalid_argument& e) {
      throw InputError(e.what());
    }
  }
  if (out.empty()) throw InputError("empty family list");
  return out;
}

std::vector<double> parse_t_grid(const std::string& text) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    auto parts = split(text, ':');
    if (parts.size() != 3) throw InputError("time grid range must be from:to:count");
    double from = to_double(parts[0], "time grid"), to = to_double(parts[1], "time grid");
    int count = to_int(parts[2], "time grid");
    if (count < 1) throw InputError("time grid count must be positive");
    for (int k = 0; k < count; ++k)
      out.push_back(count == 1 ? from : from + (to - from) * static_cast<double>(k) / static_cast<double>(count - 1));
  } else {
    for (const auto& item : split(text, ',')) out.push_back(to_double(item, "time grid"));
  }
  for (std::size_t k = 0; k < out.size(); ++k)
    if (!(out[k] > 0.0) || (k > 0 && !(out[k] > out[k - 1])))
      throw InputError("time grid must be positive and strictly ascending");
  return out;
}

std::map<std::string, std::string> parse_profile(const std::string& text) {
  std::map<std::string, std::string> out;
  for (const auto& item : split(text, ',')) {
    if (item.empty()) continue;
    auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw InputError(fmt::format("profile entry '{}' is not name=value", item));
    out[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
  return out;
}

Eigen::VectorXd profile_vector(const std::vector<VariableSpec>& schema, const std::map<std::string, std::string>& profile) {
  for (const auto& [name, value] : profile) {
    auto it = std::find_if(schema.begin(), schema.end(), [&](const VariableSpec& v) { return v.name == name; });
    if (it == schema.end()) throw InputError(fmt::format("profile: unknown covariate '{}'", name));
    if (!it->in_regression) throw InputError(fmt::format("profile: '{}' is not a regression covariate", name));
  }
  const auto columns = regression_column_names(schema);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(columns.size()));
  Eigen::Index col = 0;
  for (const auto& var : schema) {
    if (!var.in_regression) continue;
    auto found = profile.find(var.name);
    if (var.kind == VariableKind::continuous) {
      if (found != profile.end()) x[col] = to_double(found->second, "profile '" + var.name + "'");
      ++col;
    } else {
      if (found != profile.end()) {
        auto level = std::find(var.categories.begin(), var.categories.end(), found->second);
        if (level == var.categories.end())
          throw InputError(fmt::format("profile: '{}' has no category '{}'", var.name, found->second));
        auto k = static_cast<Eigen::Index>(level - var.categories.begin());
        if (k > 0) x[col + k - 1] = 1.0;
      }
      col += static_cast<Eigen::Index>(var.categories.size()) - 1;
    }
  }
  return x;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Clustering of hierarchical survival data with shared gamma frailty"};
  app.require_subcommand(1);
  Overrides o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--threads", o.threads, "Worker threads");
  };
  auto model = [&](CLI::App* sub) {
    sub->add_option("--G", o.G, "Cluster count(s): 3, 1,2,4 or 1-5");
    sub->add_option("--family", o.family, "Baseline family list or 'all'");
    sub->add_option("--algorithm", o.algorithm, "cem or sem");
    sub->add_option("--restarts", o.restarts, "Seeded restarts per grid cell");
  };

  auto* fit = app.add_subcommand("fit", "Fit one model");
  common(fit);
  model(fit);
  auto* grid = app.add_subcommand("grid", "Fit a (G, family) grid and select by BIC");
  common(grid);
  model(grid);
  auto* simulate = app.add_subcommand("simulate", "Simulate a dataset");
  common(simulate);
  simulate->add_option("--preset", o.preset, "benchmark or application");
  auto* curves = app.add_subcommand("curves", "Survival and hazard curves from a fit document");
  common(curves);
  curves->add_option("--fit", o.fit, "fit.json written by fit or grid");
  curves->add_option("--profile", o.profile, "Covariate profile, name=value,...");
  curves->add_option("--t-grid", o.t_grid, "from:to:count or a comma-separated list");
  auto* frailties = app.add_subcommand("frailties", "Posterior group frailties from a fit document");
  common(frailties);
  frailties->add_option("--fit", o.fit, "fit.json written by fit or grid");
  auto* study = app.add_subcommand("study", "Simulation study: simulate, select, score");
  common(study);
  model(study);
  study->add_option("--replicates", o.replicates, "Replicate count");
  study->add_option("--preset", o.preset, "benchmark or application");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (*fit) return cmd_fit(o);
    if (*grid) return cmd_grid(o);
    if (*simulate) return cmd_simulate(o);
    if (*curves) return cmd_curves(o);
    if (*frailties) return cmd_frailties(o);
    if (*study) return cmd_study(o);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const FitPreconditionError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    return kDegenerate;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternalError;
  }
  return kInternalError;
}

}  // namespace frailcwm::cli
