#include <doctest.h>

#include <algorithm>
#include <random>

#include "frailcwm/error.hpp"
#include "frailcwm/frailty.hpp"
#include "frailcwm/simulation.hpp"
#include "frailcwm/survival.hpp"
#include "oracles.hpp"

using namespace frailcwm;
using doctest::Approx;

namespace {

SurvivalParams make_params(Baseline baseline, Eigen::VectorXd beta, double theta) {
  SurvivalParams p;
  p.baseline = baseline;
  p.beta = std::move(beta);
  p.theta = theta;
  return p;
}

struct Cell {
  std::vector<double> time;
  std::vector<int> status;
  Eigen::MatrixXd X;
};

Cell random_cell(std::mt19937_64& rng, int n, int m) {
  std::exponential_distribution<double> ex(1.0);
  std::normal_distribution<double> nz;
  Cell c;
  c.X.resize(n, m);
  for (int i = 0; i < n; ++i) {
    c.time.push_back(0.1 + ex(rng));
    c.status.push_back(i % 3 == 2 ? 0 : 1);
    for (int k = 0; k < m; ++k) c.X(i, k) = nz(rng);
  }
  return c;
}

// Integrated cell likelihood with the frailty integral done by quadrature.
double cell_oracle(const Cell& c, const SurvivalParams& p) {
  double linear = 0.0, s = 0.0;
  int d = 0;
  for (std::size_t i = 0; i < c.time.size(); ++i) {
    double eta = p.beta.size() ? c.X.row(static_cast<Eigen::Index>(i)).dot(p.beta) : 0.0;
    if (c.status[i]) linear += std::log(hazard0(p.baseline, c.time[i])) + eta;
    d += c.status[i];
    s += cumhazard0(p.baseline, c.time[i]) * std::exp(eta);
  }
  return linear + std::log(oracle::frailty_moment(p.theta, d, s));
}

// One-cluster DGP with no covariates.
DGPConfig single_cluster(Baseline baseline, double theta, int J, int n) {
  DGPConfig c;
  c.G = 1;
  c.J = J;
  c.sizes = {n};
  c.clusters = {{Eigen::VectorXd(0), theta, baseline}};
  return c;
}

SurvivalSample sample_from(const SimulatedData& sim, int cluster = -1) {
  ModelData data = ModelData::from_dataset(sim.dataset);
  std::vector<double> t;
  std::vector<int> s;
  std::vector<std::size_t> g;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (cluster < 0 || sim.truth.assignment[i] == cluster) {
      t.push_back(data.time[i]);
      s.push_back(data.status[i]);
      g.push_back(data.group[i]);
      rows.push_back(static_cast<Eigen::Index>(i));
    }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), data.m());
  for (std::size_t r = 0; r < rows.size(); ++r) X.row(static_cast<Eigen::Index>(r)) = data.blocks.X.row(rows[r]);
  return SurvivalSample(t, s, X, g);
}

}  // namespace

TEST_CASE("cell likelihood special cases") {
  auto p = make_params(Weibull{0.8, 1.5}, Eigen::Vector2d(0.3, -0.2), 0.7);
  Eigen::MatrixXd empty(0, 2);
  CHECK(group_cluster_loglik({}, {}, empty, p) == 0.0);

  Eigen::Vector2d x(0.5, 1.0);
  double H = cumhazard0(p.baseline, 1.3) * std::exp(x.dot(p.beta));
  double expected = -(1.0 / p.theta) * std::log1p(p.theta * H);
  CHECK(obs_marginal_logdensity(1.3, 0, x, p) == Approx(expected).epsilon(1e-13));

  std::vector<double> t{1.3};
  std::vector<int> s{0};
  CHECK(group_cluster_loglik(t, s, x.transpose(), p) == obs_marginal_logdensity(1.3, 0, x, p));
  s[0] = 1;
  CHECK(group_cluster_loglik(t, s, x.transpose(), p) == obs_marginal_logdensity(1.3, 1, x, p));

  auto flat = p;
  flat.theta = kThetaMin;
  double free = std::log(hazard0(p.baseline, 1.3)) + x.dot(p.beta) - H;
  CHECK(obs_marginal_logdensity(1.3, 1, x, flat) == Approx(free).epsilon(1e-12));
}

TEST_CASE("cell likelihood against quadrature of the frailty integral") {
  std::mt19937_64 rng(5);
  const std::vector<Baseline> families{Exponential{0.7}, Weibull{0.9, 1.4}, Gompertz{0.5, 0.3}, Lognormal{0.2, 0.9}};
  for (const auto& b : families)
    for (double theta : {0.2, 1.0, 2.5}) {
      Cell c = random_cell(rng, 6, 2);
      auto p = make_params(b, Eigen::Vector2d(0.25, -0.4), theta);
      CHECK(group_cluster_loglik(c.time, c.status, c.X, p) == Approx(cell_oracle(c, p)).epsilon(1e-8));
    }
}

TEST_CASE("frailty couples observations of a cell") {
  auto p = make_params(Exponential{1.0}, Eigen::VectorXd(0), 1.0);
  std::vector<double> t{0.5, 1.0};
  std::vector<int> s{1, 1};
  Eigen::MatrixXd X(2, 0);
  double joint = group_cluster_loglik(t, s, X, p);
  double separate = obs_marginal_logdensity(0.5, 1, Eigen::VectorXd(0), p) + obs_marginal_logdensity(1.0, 1, Eigen::VectorXd(0), p);
  CHECK(joint != Approx(separate).epsilon(1e-6));
}

TEST_CASE("cluster likelihood is additive over groups and order-free") {
  std::mt19937_64 rng(9);
  Cell c = random_cell(rng, 5, 1);
  auto p = make_params(Weibull{1.1, 0.8}, Eigen::VectorXd::Constant(1, 0.3), 0.4);
  double single = group_cluster_loglik(c.time, c.status, c.X, p);

  std::vector<double> t;
  std::vector<int> s;
  std::vector<std::size_t> g;
  Eigen::MatrixXd X(15, 1);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 5; ++i) {
      t.push_back(c.time[static_cast<std::size_t>(i)]);
      s.push_back(c.status[static_cast<std::size_t>(i)]);
      g.push_back(static_cast<std::size_t>(j));
      X(j * 5 + i, 0) = c.X(i, 0);
    }
  CHECK(cluster_survival_loglik(SurvivalSample(c.time, c.status, c.X, std::vector<std::size_t>(5, 0)), p) == single);
  CHECK(cluster_survival_loglik(SurvivalSample(t, s, X, g), p) == Approx(3.0 * single).epsilon(1e-13));

  // Interleave rows and relabel groups: same cells, same value.
  std::vector<std::size_t> order{14, 0, 7, 3, 11, 5, 9, 1, 13, 2, 8, 6, 12, 4, 10};
  std::vector<double> t2;
  std::vector<int> s2;
  std::vector<std::size_t> g2;
  Eigen::MatrixXd X2(15, 1);
  for (std::size_t r = 0; r < order.size(); ++r) {
    t2.push_back(t[order[r]]);
    s2.push_back(s[order[r]]);
    g2.push_back(2 - g[order[r]]);
    X2(static_cast<Eigen::Index>(r), 0) = X(static_cast<Eigen::Index>(order[r]), 0);
  }
  CHECK(cluster_survival_loglik(SurvivalSample(t2, s2, X2, g2), p) ==
        Approx(cluster_survival_loglik(SurvivalSample(t, s, X, g), p)).epsilon(1e-13));
}

TEST_CASE("pack and unpack") {
  auto p = make_params(Lognormal{-2.387, 1.754}, Eigen::Vector3d(0.1, -0.2, 0.3), 0.25);
  Eigen::VectorXd u = pack(p);
  CHECK(u.size() == 6);
  CHECK(u[3] == -2.387);
  CHECK(u[5] == Approx(std::log(0.25)).epsilon(1e-15));
  auto q = unpack(Family::lognormal, 3, u);
  CHECK(q.beta == p.beta);
  CHECK(q.theta == Approx(0.25).epsilon(1e-14));
  CHECK(survival_size_floor(3, Family::lognormal) == 11);
  CHECK(survival_size_floor(0, Family::exponential) == 7);
}

TEST_CASE("internal gradient matches a refined finite difference") {
  auto sim = simulate_dataset(benchmark_config(), 42);
  SurvivalSample sample = sample_from(sim, 0);
  for (Family family : {Family::weibull, Family::lognormal, Family::gompertz}) {
    SurvivalObjective f(sample, family);
    Eigen::VectorXd u = pack(default_survival_init(sample, family));
    u.head(5).setConstant(0.05);
    Eigen::VectorXd g = f.gradient(u);
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      // Richardson extrapolation over two step sizes.
      auto central = [&](double h) {
        Eigen::VectorXd a = u, b = u;
        a[k] += h;
        b[k] -= h;
        return (f(a) - f(b)) / (2 * h);
      };
      double h = 1e-3;
      double refined = (4.0 * central(h / 2) - central(h)) / 3.0;
      CHECK(g[k] == Approx(refined).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("exponential recovery with shared frailty") {
  // The rate estimate tracks the realized mean frailty, whose sd is about
  // sqrt(theta / J) = 0.1 here, so the tolerances apply to the median over replicates.
  std::vector<double> lambda_err, theta_err;
  for (std::uint64_t seed = 2024; seed < 2024 + 40; ++seed) {
    auto sim = simulate_dataset(single_cluster(Exponential{1.0}, 0.5, 50, 40), seed);
    auto fit = fit_survival_mle(sample_from(sim), Family::exponential);
    REQUIRE(fit.converged);
    lambda_err.push_back(std::abs(std::get<Exponential>(fit.params.baseline).rate - 1.0));
    theta_err.push_back(std::abs(fit.params.theta - 0.5));
    REQUIRE(fit.covariance);
    CHECK(fit.covariance->isApprox(fit.covariance->transpose()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*fit.covariance);
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  CHECK(median(lambda_err) <= 0.1);
  CHECK(median(theta_err) <= 0.15);
}

TEST_CASE("Weibull shape recovered on a true cluster slice") {
  auto sim = simulate_dataset(benchmark_config(), 77);
  SurvivalSample sample = sample_from(sim, 2);
  auto fit = fit_survival_mle(sample, Family::weibull);
  REQUIRE(fit.converged);
  CHECK(std::abs(std::get<Weibull>(fit.params.baseline).shape - 3.0) <= 0.3);

  SUBCASE("warm start at the optimum is a fixed point") {
    auto again = fit_survival_mle(sample, Family::weibull, fit.params);
    CHECK(again.iterations <= 3);
    CHECK(again.loglik == Approx(fit.loglik).epsilon(1e-9));
  }
  SUBCASE("deterministic") {
    auto again = fit_survival_mle(sample, Family::weibull);
    CHECK(again.loglik == fit.loglik);
    CHECK(pack(again.params) == pack(fit.params));
  }
  SUBCASE("no coordinate perturbation improves the optimum") {
    SurvivalObjective f(sample, Family::weibull);
    Eigen::VectorXd u = pack(fit.params);
    double best = f(u);
    for (Eigen::Index k = 0; k < u.size(); ++k)
      for (double step : {-1e-3, 1e-3}) {
        Eigen::VectorXd v = u;
        v[k] += step;
        CHECK(f(v) <= best + 1e-6);
      }
  }
}

TEST_CASE("fit preconditions") {
  std::vector<double> t{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::size_t> g(8, 0);
  Eigen::MatrixXd X0(8, 0);
  CHECK_THROWS_AS(fit_survival_mle(SurvivalSample(t, std::vector<int>(8, 0), X0, g), Family::exponential),
                  FitPreconditionError);  // no events
  CHECK_THROWS_AS(fit_survival_mle(SurvivalSample({1, 2}, {1, 1}, Eigen::MatrixXd(2, 0), {0, 0}), Family::weibull),
                  FitPreconditionError);  // too small
  Eigen::MatrixXd X(8, 2);
  X.col(0).setLinSpaced(8, 0, 1);
  X.col(1) = 2.0 * X.col(0);
  CHECK_THROWS_AS(fit_survival_mle(SurvivalSample(t, std::vector<int>(8, 1), X, g), Family::exponential),
                  FitPreconditionError);  // rank deficient
}

TEST_CASE("Wald table") {
  SurvivalFitResult r;
  r.params = make_params(Weibull{2.0, 1.5}, Eigen::Vector2d(0.0, 0.235), 0.4);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(5, 5);
  cov(0, 0) = 1.0;
  cov(1, 1) = 0.101 * 0.101;
  cov(2, 2) = 0.3 * 0.3;  // log lambda
  cov(3, 3) = 0.05 * 0.05;
  cov(4, 4) = 0.2 * 0.2;  // log theta
  r.covariance = cov;
  auto rows = wald_tests(r, {"a", "b"});
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].parameter == "beta[a]");
  CHECK(*rows[0].z == 0.0);
  CHECK(*rows[0].p_value == Approx(1.0).epsilon(1e-15));
  CHECK(*rows[1].p_value == Approx(0.02).epsilon(0.1));
  CHECK(*rows[2].std_error == Approx(2.0 * 0.3).epsilon(1e-14));
  CHECK_FALSE(rows[2].z.has_value());
  // Delta-method SE for lambda against a finite-difference reparameterization.
  double fd = (std::exp(std::log(2.0) + 1e-6) - std::exp(std::log(2.0) - 1e-6)) / 2e-6 * 0.3;
  CHECK(*rows[2].std_error == Approx(fd).epsilon(1e-8));
  CHECK(rows[4].parameter == "theta");
  CHECK(rows[4].boundary_approximate);
  CHECK(*rows[4].std_error == Approx(0.4 * 0.2).epsilon(1e-14));

  r.covariance.reset();
  for (const auto& row : wald_tests(r)) CHECK_FALSE(row.std_error.has_value());
}
