#include <doctest.h>

#include <algorithm>
#include <random>

#include "frailcwm/frailty.hpp"
#include "frailcwm/parallel.hpp"
#include "frailcwm/simulation.hpp"
#include "oracles.hpp"

using namespace frailcwm;
using doctest::Approx;

namespace {

DGPConfig iid_exponential(int n) {
  DGPConfig c;
  c.G = 1;
  c.J = 1;
  c.sizes = {n};
  c.clusters = {{Eigen::VectorXd(0), kThetaMin, Weibull{1.0, 1.0}}};
  return c;
}

Partition labels(std::vector<int> z) {
  int G = *std::max_element(z.begin(), z.end()) + 1;
  return {std::move(z), G};
}

}  // namespace

TEST_CASE("benchmark layout") {
  auto cfg = benchmark_config();
  CHECK(cfg.total_size() == 1500);
  auto sim = simulate_dataset(cfg, 1);
  CHECK(sim.dataset.size() == 1500);
  CHECK(sim.dataset.group_count() == 10);
  CHECK(sim.truth.assignment.size() == 1500);
  CHECK(sim.truth.sizes() == std::vector<std::size_t>{400, 500, 600});
  CHECK(sim.frailties.rows() == 10);
  CHECK(sim.frailties.cols() == 3);
  for (std::size_t j = 0; j < 10; ++j) CHECK(sim.dataset.group_sizes()[j] == 150);
  CHECK((sim.frailties.array() > 0.0).all());
  // No censoring by default.
  for (const auto& o : sim.dataset.observations()) CHECK(o.status == 1);
}

TEST_CASE("configuration validation") {
  auto cfg = benchmark_config();
  cfg.sizes[1] = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = benchmark_config();
  cfg.clusters[0].theta = -1.0;
  CHECK_THROWS_AS(simulate_dataset(cfg, 1), std::invalid_argument);
  cfg = benchmark_config();
  cfg.categorical[0].probs[0] = {0.5, 0.6};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(application_config().validate());
}

TEST_CASE("administrative censoring") {
  auto cfg = benchmark_config();
  cfg.censor_time = 0.8;
  auto cens = simulate_dataset(cfg, 5);
  cfg.censor_time.reset();
  auto full = simulate_dataset(cfg, 5);
  int censored = 0;
  for (std::size_t i = 0; i < cens.dataset.size(); ++i) {
    const auto& a = cens.dataset.observations()[i];
    const auto& b = full.dataset.observations()[i];
    CHECK(a.time <= 0.8);
    CHECK((a.status == 0) == (b.time > 0.8));
    if (a.status == 1) CHECK(a.time == b.time);
    censored += a.status == 0;
  }
  CHECK(censored > 0);
}

TEST_CASE("degenerate frailty gives iid unit exponentials") {
  const int n = 10000;
  auto sim = simulate_dataset(iid_exponential(n), 123);
  std::vector<double> t;
  for (const auto& o : sim.dataset.observations()) t.push_back(o.time);
  std::sort(t.begin(), t.end());
  double D = 0.0;
  for (int i = 0; i < n; ++i) {
    double F = 1.0 - std::exp(-t[static_cast<std::size_t>(i)]);
    D = std::max({D, F - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - F});
  }
  // Asymptotic 1% critical value of the one-sample KS statistic.
  CHECK(D < 1.6276 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("frailty draws match the gamma moments") {
  DGPConfig cfg;
  cfg.G = 2;
  cfg.J = 5000;
  cfg.sizes = {1, 1};
  cfg.clusters = {{Eigen::VectorXd(0), 0.8, Weibull{1.0, 1.0}}, {Eigen::VectorXd(0), 0.3, Weibull{1.0, 1.0}}};
  Eigen::VectorXd draws0(10000), draws1(10000);
  for (int rep = 0; rep < 2; ++rep) {
    auto sim = simulate_dataset(cfg, 900 + static_cast<std::uint64_t>(rep));
    draws0.segment(rep * 5000, 5000) = sim.frailties.col(0);
    draws1.segment(rep * 5000, 5000) = sim.frailties.col(1);
  }
  for (auto [draws, theta] : {std::pair{draws0, 0.8}, std::pair{draws1, 0.3}}) {
    double n = static_cast<double>(draws.size());
    double mean = draws.mean();
    double var = (draws.array() - mean).square().sum() / (n - 1);
    CHECK(std::abs(mean - 1.0) <= 3.0 * std::sqrt(theta / n));
    // Gamma(k = 1/theta) fourth central moment 3 theta^2 + 6 theta^3.
    double mu4 = 3.0 * theta * theta + 6.0 * theta * theta * theta;
    CHECK(std::abs(var - theta) <= 3.0 * std::sqrt((mu4 - theta * theta) / n));
  }
}

TEST_CASE("bitwise determinism") {
  auto a = simulate_dataset(benchmark_config(), 31);
  auto b = simulate_dataset(benchmark_config(), 31);
  auto c = simulate_dataset(benchmark_config(), 32);
  CHECK(a.truth.assignment == b.truth.assignment);
  CHECK(a.frailties == b.frailties);
  bool differs = false;
  for (std::size_t i = 0; i < a.dataset.size(); ++i) {
    CHECK(a.dataset.observations()[i].time == b.dataset.observations()[i].time);
    CHECK(a.dataset.observations()[i].values == b.dataset.observations()[i].values);
    differs |= a.dataset.observations()[i].time != c.dataset.observations()[i].time;
  }
  CHECK(differs);
}

TEST_CASE("inverse cumulative hazard") {
  for (const Baseline& b : {Baseline{Exponential{1.3}}, Baseline{Weibull{0.4, 3.0}}, Baseline{Gompertz{0.2, 0.7}},
                            Baseline{Lognormal{-0.5, 1.2}}})
    for (double h : {1e-6, 0.01, 0.5, 1.0, 4.0, 20.0}) {
      double t = inverse_cumhazard(b, h);
      CHECK(cumhazard0(b, t) == Approx(h).epsilon(1e-9));
    }
}

TEST_CASE("adjusted Rand index") {
  auto a = labels({0, 0, 1, 1});
  auto b = labels({0, 1, 0, 1});
  CHECK(ari(a, b) == Approx(oracle::ari_by_pairs(a.assignment, b.assignment)).epsilon(1e-14));
  CHECK(ari(a, b) == Approx(-0.5).epsilon(1e-14));
  CHECK(ari(a, a) == 1.0);
  CHECK(ari(a, labels({1, 1, 0, 0})) == 1.0);
  CHECK_THROWS_AS(ari(a, labels({0, 1, 0})), std::invalid_argument);

  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> lab(0, 3);
  double total = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<int> x(60), y(60);
    for (auto& v : x) v = lab(rng);
    for (auto& v : y) v = lab(rng);
    x[0] = y[0] = 3;
    auto px = labels(x), py = labels(y);
    double r = ari(px, py);
    if (rep < 20) {
      CHECK(r == Approx(oracle::ari_by_pairs(x, y)).epsilon(1e-12));
      CHECK(r == Approx(ari(py, px)).epsilon(1e-14));
      std::vector<int> relabeled = x;
      for (auto& v : relabeled) v = 3 - v;
      CHECK(ari(labels(relabeled), py) == Approx(r).epsilon(1e-12));
    }
    total += r;
  }
  CHECK(std::abs(total / 200.0) < 0.02);
}

TEST_CASE("misclassification rate") {
  auto truth = labels({0, 0, 1, 1});
  CHECK(misclassification_rate(truth, truth) == 0.0);
  CHECK(misclassification_rate(truth, labels({0, 1, 1, 1})) == 0.25);
  CHECK(misclassification_rate(truth, labels({1, 1, 0, 0})) == 0.0);
  auto three = labels({0, 1, 2, 2, 1, 0, 0});
  auto other = labels({2, 0, 1, 1, 1, 2, 0});
  CHECK(misclassification_rate(three, other) == Approx(misclassification_rate(other, three)).epsilon(1e-15));
  // Brute force over all permutations.
  std::vector<int> perm{0, 1, 2};
  double best = 1.0;
  do {
    int wrong = 0;
    for (std::size_t i = 0; i < 7; ++i) wrong += perm[static_cast<std::size_t>(other.assignment[i])] != three.assignment[i];
    best = std::min(best, wrong / 7.0);
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(misclassification_rate(three, other) == Approx(best).epsilon(1e-15));
}

TEST_CASE("replicate study bookkeeping") {
  auto s = replicate_study(benchmark_config(), 2, {2, 3}, {Family::weibull}, 1, 8);
  REQUIRE(s.replicates.size() == 2);
  CHECK(s.failed == 0);
  for (const auto& r : s.replicates) {
    CHECK(r.grid.cells.size() == 2);
    CHECK(r.ari >= -1.0);
    CHECK(r.ari <= 1.0);
    CHECK(r.misclassification >= 0.0);
    CHECK_FALSE(r.parameters.empty());
  }
  CHECK(s.mean_ari == Approx((s.replicates[0].ari + s.replicates[1].ari) / 2).epsilon(1e-14));
  auto again = replicate_study(benchmark_config(), 2, {2, 3}, {Family::weibull}, 1, 8);
  CHECK(again.replicates[1].ari == s.replicates[1].ari);

  // R = 1 is one simulate-fit-score cycle.
  auto one = replicate_study(benchmark_config(), 1, {3}, {Family::weibull}, 1, 8);
  REQUIRE(one.replicates.size() == 1);
  auto sim = simulate_dataset(benchmark_config(), derive_seed(one.replicates[0].seed, {1}));
  auto data = ModelData::from_dataset(sim.dataset);
  auto g = grid_search(data, {3}, {Family::weibull}, Algorithm::cem, 1, derive_seed(one.replicates[0].seed, {2}));
  CHECK(one.replicates[0].ari == ari(sim.truth, g.cells[0].best_fit->partition));
}
