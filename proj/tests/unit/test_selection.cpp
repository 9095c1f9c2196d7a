#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include <boost/math/distributions/normal.hpp>

#include "frailcwm/selection.hpp"
#include "frailcwm/simulation.hpp"
#include "oracles.hpp"

using namespace frailcwm;
using doctest::Approx;

namespace {

ModelConfig config(int G, Family family, long p, std::vector<int> k, long m) {
  ModelConfig c;
  c.G = G;
  c.family = family;
  c.p = p;
  c.category_counts = std::move(k);
  c.m = m;
  return c;
}

SurvivalParams lognormal_cluster(Eigen::VectorXd beta) {
  return {std::move(beta), Lognormal{-2.387, 1.754}, 0.3};
}

std::vector<double> grid(double a, double b, int n) {
  std::vector<double> t;
  for (int k = 0; k < n; ++k) t.push_back(a + (b - a) * k / (n - 1));
  return t;
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(count_parameters(config(3, Family::lognormal, 2, {2, 2, 2}, 2)) == 44);
  CHECK(count_parameters(config(3, Family::weibull, 2, {2, 3}, 5)) == 53);
  CHECK(count_parameters(config(1, Family::exponential, 0, {}, 0)) == 3);

  auto sim = simulate_dataset(benchmark_config(), 1);
  auto data = ModelData::from_dataset(sim.dataset);
  CHECK(count_parameters(model_config_for(data, 3, Family::weibull)) == 53);
}

TEST_CASE("BIC") {
  CHECK(bic(0.0, 0, 10.0) == 0.0);
  CHECK(bic(-100.0, 10, std::exp(2.0)) == Approx(-220.0).epsilon(1e-14));
  for (long d = 1; d < 60; ++d) CHECK(bic(-50.0, d, 1500.0) < bic(-50.0, d - 1, 1500.0));
}

TEST_CASE("grid search") {
  auto sim = simulate_dataset(benchmark_config(), 77);
  auto data = ModelData::from_dataset(sim.dataset);

  SUBCASE("a single cell with one restart is a plain CEM fit") {
    auto g = grid_search(data, {3}, {Family::weibull}, Algorithm::cem, 1, 9);
    REQUIRE(g.cells.size() == 1);
    REQUIRE(g.best);
    EmOptions opt;
    opt.seed = restart_seed(9, 3, Family::weibull, 0);
    auto direct = run_cem(data, 3, Family::weibull, opt);
    CHECK(g.cells[0].best_loglik == direct.final_loglik);
    REQUIRE(g.cells[0].best_fit);
    CHECK(g.cells[0].best_fit->partition.assignment == direct.partition.assignment);
    CHECK(g.cells[0].bic == Approx(direct.bic).epsilon(1e-14));
  }

  SUBCASE("table shape, best cell and thread independence") {
    std::vector<int> Gs{1, 2, 3};
    std::vector<Family> fams{Family::weibull, Family::lognormal};
    auto g = grid_search(data, Gs, fams, Algorithm::cem, 2, 4);
    REQUIRE(g.cells.size() == Gs.size() * fams.size());
    for (std::size_t k = 0; k < g.cells.size(); ++k) {
      CHECK(g.cells[k].G == Gs[k / fams.size()]);
      CHECK(g.cells[k].family == fams[k % fams.size()]);
      for (double ll : g.cells[k].restart_logliks)
        if (!std::isnan(ll) && !g.cells[k].failed) CHECK(g.cells[k].best_loglik >= ll);
    }
    REQUIRE(g.best);
    for (const auto& c : g.cells)
      if (!c.failed) CHECK(g.cells[*g.best].bic >= c.bic);
    CHECK(g.cells[*g.best].G == 3);

    auto threaded = grid_search(data, Gs, fams, Algorithm::cem, 2, 4, {}, 2);
    for (std::size_t k = 0; k < g.cells.size(); ++k) {
      CHECK(threaded.cells[k].restart_logliks.size() == g.cells[k].restart_logliks.size());
      for (std::size_t r = 0; r < g.cells[k].restart_logliks.size(); ++r) {
        double a = g.cells[k].restart_logliks[r], b = threaded.cells[k].restart_logliks[r];
        CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
      }
    }
    CHECK(threaded.best == g.best);
  }
}

TEST_CASE("survival curves") {
  SUBCASE("reference value at t = 1") {
    auto c = survival_curve(lognormal_cluster(Eigen::VectorXd(0)), std::nullopt, Eigen::VectorXd(0), {1.0});
    boost::math::normal_distribution<double> z;
    CHECK(c.points[0].value == Approx(boost::math::cdf(boost::math::complement(z, 1.3609))).epsilon(1e-4));
    CHECK(c.points[0].value == Approx(0.0868).epsilon(1e-3));
    CHECK_FALSE(c.has_bands);
    CHECK_FALSE(c.points[0].se);
  }

  SUBCASE("properties with covariance") {
    std::mt19937_64 rng(3);
    for (Family family : {Family::exponential, Family::weibull, Family::gompertz, Family::lognormal}) {
      Baseline b = family == Family::exponential ? Baseline{Exponential{0.8}}
                   : family == Family::weibull   ? Baseline{Weibull{0.5, 1.7}}
                   : family == Family::gompertz  ? Baseline{Gompertz{0.3, 0.4}}
                                                 : Baseline{Lognormal{0.2, 0.9}};
      SurvivalParams p{Eigen::Vector2d(0.3, -0.5), b, 0.4};
      Eigen::Index n = 2 + parameter_count(family) + 1;
      Eigen::MatrixXd A = Eigen::MatrixXd::Random(n, n) * 0.2;
      Eigen::MatrixXd cov = A * A.transpose();
      Eigen::Vector2d profile(1.0, 0.5);
      auto t = grid(0.01, 6.0, 80);
      auto c = survival_curve(p, cov, profile, t);
      CHECK(c.has_bands);
      for (std::size_t k = 0; k < t.size(); ++k) {
        const auto& pt = c.points[k];
        if (k > 0) CHECK(pt.value <= c.points[k - 1].value);
        CHECK(*pt.lower <= pt.value);
        CHECK(*pt.upper >= pt.value);
        CHECK(*pt.lower >= 0.0);
        CHECK(*pt.upper <= 1.0);
      }
      auto near0 = survival_curve(p, cov, profile, {1e-12});
      CHECK(near0.points[0].value == Approx(1.0).epsilon(1e-6));
      CHECK(*near0.points[0].se < 1e-5);

      // Gradient against central differences on the unconstrained vector.
      Eigen::VectorXd u = pack(p);
      for (double tt : {0.3, 1.0, 2.5}) {
        Eigen::VectorXd g = survival_gradient(p, profile, tt);
        for (Eigen::Index k = 0; k < u.size(); ++k) {
          Eigen::VectorXd a = u, d = u;
          a[k] += 1e-6;
          d[k] -= 1e-6;
          double fd = (survival_curve(unpack(family, 2, a), std::nullopt, profile, {tt}).points[0].value -
                       survival_curve(unpack(family, 2, d), std::nullopt, profile, {tt}).points[0].value) / 2e-6;
          CHECK(g[k] == Approx(fd).epsilon(1e-6).scale(1e-3));
        }
        CHECK(g[u.size() - 1] == 0.0);
      }
    }
  }

  SUBCASE("invalid grids") {
    auto p = lognormal_cluster(Eigen::VectorXd(0));
    CHECK_THROWS_AS(survival_curve(p, std::nullopt, Eigen::VectorXd(0), {0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(survival_curve(p, std::nullopt, Eigen::VectorXd(0), {2.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(survival_curve(p, std::nullopt, Eigen::VectorXd::Zero(3), {1.0}), std::invalid_argument);
  }
}

TEST_CASE("hazard curves") {
  auto p = lognormal_cluster(Eigen::Vector2d(0.235, -0.4));
  auto t = grid(0.05, 3.0, 30);
  auto off = hazard_curve(p, Eigen::Vector2d::Zero(), t);
  auto on = hazard_curve(p, Eigen::Vector2d(1.0, 0.0), t);
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(off.points[k].value == hazard0(p.baseline, t[k]));
    CHECK(on.points[k].value / off.points[k].value == Approx(std::exp(0.235)).epsilon(1e-13));
  }
  CHECK(std::exp(0.235) == Approx(1.2650).epsilon(1e-4));
}

TEST_CASE("frailty estimates") {
  ModelParams params;
  params.clusters.resize(2);
  params.clusters[0].survival.theta = 0.2;
  params.clusters[1].survival.theta = kThetaMin;

  SUBCASE("crafted cell") {
    auto rows = frailty_estimates({{4, 0, 30, 10, 2.0}}, params);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].posterior.mean == Approx(15.0 / 7.0).epsilon(1e-14));
    CHECK(rows[0].posterior.mean == Approx(2.1429).epsilon(1e-4));
    CHECK(rows[0].posterior.ci_low > 1.0);
    CHECK(rows[0].effect == FrailtyEffect::risk);
    CHECK(effect_name(rows[0].effect) == "risk");
  }
  SUBCASE("classification rule") {
    CHECK(classify_frailty({0.5, 0.01, 0.3, 0.8}) == FrailtyEffect::protective);
    CHECK(classify_frailty({1.0, 0.1, 0.6, 1.4}) == FrailtyEffect::neutral);
    CHECK(classify_frailty({1.5, 0.01, 1.2, 1.8}) == FrailtyEffect::risk);
  }
  SUBCASE("degenerate frailty is neutral everywhere") {
    std::vector<CellStats> cells;
    for (std::size_t j = 0; j < 10; ++j) cells.push_back({j, 1, 20, static_cast<int>(3 * j), 1.0 + static_cast<double>(j)});
    for (const auto& r : frailty_estimates(cells, params)) {
      CHECK(r.posterior.mean == Approx(1.0).epsilon(1e-4));
      CHECK(r.effect == FrailtyEffect::neutral);
    }
  }
}

TEST_CASE("frailty table from a fit") {
  auto sim = simulate_dataset(benchmark_config(), 13);
  auto data = ModelData::from_dataset(sim.dataset);
  EmOptions opt;
  opt.seed = 2;
  auto fit = run_cem(data, 3, Family::weibull, opt);
  auto rows = frailty_estimates(data, fit);
  auto cells = cell_statistics(data, fit.params, fit.partition);
  CHECK(rows.size() == cells.size());
  for (const auto& c : cells) CHECK(c.n > 0);
  std::size_t populated = 0;
  {
    std::set<std::pair<std::size_t, int>> seen;
    for (std::size_t i = 0; i < data.size(); ++i) seen.insert({data.group[i], fit.partition.assignment[i]});
    populated = seen.size();
  }
  CHECK(rows.size() == populated);

  // Cumulative hazard sums match a direct evaluation.
  for (const auto& c : cells) {
    double s = 0.0;
    int d = 0;
    const auto& sp = fit.params.clusters[static_cast<std::size_t>(c.cluster)].survival;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.group[i] == c.group && fit.partition.assignment[i] == c.cluster) {
        s += cumhazard0(sp.baseline, data.time[i]) *
             std::exp(data.blocks.X.row(static_cast<Eigen::Index>(i)).dot(sp.beta));
        d += data.status[i];
      }
    CHECK(c.cumulative_hazard == Approx(s).epsilon(1e-12));
    CHECK(c.events == d);
  }

  // Relabeling clusters leaves every (group, cluster) classification unchanged.
  std::vector<int> perm{2, 0, 1};
  ModelFit relabeled = fit;
  for (auto& z : relabeled.partition.assignment) z = perm[static_cast<std::size_t>(z)];
  for (std::size_t g = 0; g < 3; ++g) relabeled.params.clusters[static_cast<std::size_t>(perm[g])] = fit.params.clusters[g];
  auto rows2 = frailty_estimates(data, relabeled);
  REQUIRE(rows2.size() == rows.size());
  std::map<std::pair<std::size_t, int>, FrailtyEffect> before;
  for (const auto& r : rows) before[{r.group, perm[static_cast<std::size_t>(r.cluster)]}] = r.effect;
  for (const auto& r : rows2) CHECK(before.at({r.group, r.cluster}) == r.effect);
}
