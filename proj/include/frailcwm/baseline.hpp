#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace frailcwm {

enum class Family { exponential, weibull, gompertz, lognormal };

/// log(1 - Phi(z)) without cancellation or underflow.
double log_normal_sf(double z);

// Each family exposes log_hazard(t, log t) and cumulative_hazard(t, log t).
// These raw members never throw; they may return inf/nan outside the domain,
// which the likelihood code treats as an infeasible point.

struct Exponential {
  double rate = 1.0;
  double log_hazard(double, double) const { return std::log(rate); }
  double cumulative_hazard(double t, double) const { return rate * t; }
};

struct Weibull {
  double scale = 1.0;  // lambda
  double shape = 1.0;  // rho
  double log_hazard(double, double log_t) const {
    return std::log(scale) + std::log(shape) + (shape - 1.0) * log_t;
  }
  double cumulative_hazard(double t, double log_t) const {
    return t == 0.0 ? 0.0 : scale * std::exp(shape * log_t);
  }
};

struct Gompertz {
  double scale = 1.0;  // lambda
  double shape = 1.0;  // rho
  double log_hazard(double t, double) const { return std::log(scale) + shape * t; }
  double cumulative_hazard(double t, double) const { return scale / shape * std::expm1(shape * t); }
};

struct Lognormal {
  double location = 0.0;  // eta
  double scale = 1.0;     // nu
  double log_hazard(double, double log_t) const {
    double z = (log_t - location) / scale;
    constexpr double kLogSqrt2Pi = 0.91893853320467274178;
    return -0.5 * z * z - kLogSqrt2Pi - std::log(scale) - log_t - log_normal_sf(z);
  }
  double cumulative_hazard(double t, double log_t) const {
    if (t == 0.0) return 0.0;
    return -log_normal_sf((log_t - location) / scale);
  }
};

using Baseline = std::variant<Exponential, Weibull, Gompertz, Lognormal>;

Family family_of(const Baseline& baseline);
std::string_view family_name(Family family);
/// Accepts "exponential", "weibull", "gompertz", "lognormal".
Family parse_family(std::string_view name);
/// b: 1 for Exponential, 2 otherwise.
int parameter_count(Family family);
std::vector<std::string> parameter_names(Family family);

/// Throws std::invalid_argument unless every positivity constraint holds.
void validate(const Baseline& baseline);

double hazard0(const Baseline& baseline, double t);
double cumhazard0(const Baseline& baseline, double t);
double log_hazard0(const Baseline& baseline, double t);

/// Natural parameters in table order: (lambda), (lambda, rho) or (eta, nu).
std::vector<double> natural_parameters(const Baseline& baseline);
Baseline from_natural(Family family, std::span<const double> values);

/// Positive parameters map through log; the lognormal location passes through.
std::vector<double> to_unconstrained(const Baseline& baseline);
Baseline from_unconstrained(Family family, std::span<const double> values);

/// d(natural)/d(unconstrained) for each coordinate (the map is diagonal).
std::vector<double> natural_jacobian(const Baseline& baseline);

}  // namespace frailcwm
