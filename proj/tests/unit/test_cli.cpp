#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "frailcwm/cli.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string err;
};

Outcome cli(const std::string& args, const fs::path& scratch) {
  fs::path err = scratch / "stderr.txt";
  std::string cmd = std::string(FRAILCWM_CLI) + " " + args + " > /dev/null 2> " + err.string();
  int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, oracle::slurp(err)};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

// Simulated benchmark data plus its fit config, shared by the cases below.
const fs::path& simulated() {
  static const fs::path dir = [] {
    fs::path d = oracle::scratch_dir("cli_sim");
    int code = cli("simulate --seed 17 --out " + d.string(), d).code;
    REQUIRE(code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("simulate writes aligned truth files") {
  const auto& d = simulated();
  CHECK(line_count(d / "dataset.csv") == 1501);
  CHECK(line_count(d / "truth_partition.csv") == 1501);
  CHECK(line_count(d / "truth_frailties.csv") == 31);
  CHECK(fs::exists(d / "fit_config.json"));
  fs::path again = oracle::scratch_dir("cli_sim_again");
  REQUIRE(cli("simulate --seed 17 --out " + again.string(), again).code == 0);
  for (auto f : {"dataset.csv", "truth_partition.csv", "truth_frailties.csv", "fit_config.json"})
    CHECK(oracle::slurp(d / f) == oracle::slurp(again / f));
}

TEST_CASE("fit artifacts, determinism and consumers") {
  const auto& d = simulated();
  fs::path out = oracle::scratch_dir("cli_fit");
  std::string args = "fit --config " + (d / "fit_config.json").string() + " --seed 3 --out ";
  auto r = cli(args + out.string(), out);
  CHECK(r.code == 0);
  for (auto f : {"fit.json", "partition.csv", "loglik_trace.csv", "flags.csv", "posterior.csv", "wald.csv"})
    CHECK(fs::exists(out / f));
  CHECK(line_count(out / "partition.csv") == 1501);

  fs::path rerun = oracle::scratch_dir("cli_fit_again");
  REQUIRE(cli(args + rerun.string(), rerun).code == 0);
  for (auto f : {"fit.json", "partition.csv", "loglik_trace.csv", "posterior.csv", "wald.csv"})
    CHECK(oracle::slurp(out / f) == oracle::slurp(rerun / f));

  auto doc = nlohmann::json::parse(oracle::slurp(out / "fit.json"));
  CHECK(doc["clusters"].size() == 3);

  fs::path curves = oracle::scratch_dir("cli_curves");
  REQUIRE(cli("curves --fit " + (out / "fit.json").string() + " --t-grid 0.05:3:40 --out " + curves.string(), curves)
              .code == 0);
  CHECK(line_count(curves / "survival_curves.csv") == 1 + 3 * 40);
  CHECK(line_count(curves / "hazard_curves.csv") == 1 + 3 * 40);
  auto bad = cli("curves --fit " + (out / "fit.json").string() + " --t-grid 1,2 --profile nope=1 --out " + curves.string(), curves);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("nope") != std::string::npos);

  fs::path fr = oracle::scratch_dir("cli_frailties");
  REQUIRE(cli("frailties --fit " + (out / "fit.json").string() + " --out " + fr.string(), fr).code == 0);
  std::ifstream in(fr / "frailties.csv");
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    bool labelled = line.find(",protective") != std::string::npos || line.find(",neutral") != std::string::npos ||
                    line.find(",risk") != std::string::npos;
    CHECK(labelled);
  }
  CHECK(rows > 0);
  CHECK(rows <= 30);
}

TEST_CASE("input errors") {
  const auto& d = simulated();
  fs::path out = oracle::scratch_dir("cli_errors");
  auto cfg = nlohmann::json::parse(oracle::slurp(d / "fit_config.json"));
  cfg["dataset"] = (d / "dataset.csv").string();
  cfg["schema"][0]["name"] = "u_missing";
  std::ofstream(out / "bad.json") << cfg.dump();
  auto r = cli("fit --config " + (out / "bad.json").string() + " --seed 1 --out " + out.string(), out);
  CHECK(r.code == 2);
  CHECK(r.err.find("u_missing") != std::string::npos);

  cfg = nlohmann::json::parse(oracle::slurp(d / "fit_config.json"));
  cfg["dataset"] = (d / "dataset.csv").string();
  cfg.erase("seed");
  std::ofstream(out / "noseed.json") << cfg.dump();
  r = cli("fit --config " + (out / "noseed.json").string() + " --out " + out.string(), out);
  CHECK(r.code == 2);
  CHECK(r.err.find("seed") != std::string::npos);

  CHECK(cli("fit --bogus", out).code == 2);
  CHECK(cli("frailties --fit " + (out / "missing.json").string() + " --out " + out.string(), out).code == 2);
}

TEST_CASE("grid table") {
  const auto& d = simulated();
  fs::path out = oracle::scratch_dir("cli_grid");
  auto r = cli("grid --config " + (d / "fit_config.json").string() +
                   " --seed 2 --G 2-3 --family weibull,lognormal --restarts 1 --out " + out.string(),
               out);
  CHECK(r.code == 0);
  CHECK(line_count(out / "bic_table.csv") == 1 + 2 * 2);
  CHECK(fs::exists(out / "best" / "fit.json"));
  std::string table = oracle::slurp(out / "bic_table.csv");
  CHECK(std::count(table.begin(), table.end(), '*') == 1);
}

TEST_CASE("helpers") {
  using namespace frailcwm::cli;
  CHECK(parse_g_list("3") == std::vector<int>{3});
  CHECK(parse_g_list("1,2,4") == std::vector<int>{1, 2, 4});
  CHECK(parse_g_list("1-5") == std::vector<int>{1, 2, 3, 4, 5});
  CHECK_THROWS(parse_g_list("0"));
  CHECK(parse_family_list("all").size() == 4);
  CHECK(parse_t_grid("1:2:3") == std::vector<double>{1.0, 1.5, 2.0});
  CHECK_THROWS(parse_t_grid("0:1:3"));
  CHECK(parse_profile("a=1, b = x").at("b") == "x");
}
