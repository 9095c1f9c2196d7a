#pragma once

namespace frailcwm {

/// Gamma frailty with mean 1 and variance theta. At or below this floor the
/// frailty is treated as degenerate at 1 (frailty-free proportional hazards).
inline constexpr double kThetaMin = 1e-6;

/// log[(-1)^q L^(q)(s; theta)] for the Laplace transform L(s) = (1 + theta s)^(-1/theta):
///   sum_{l<q} log(1 + l theta) - (1/theta + q) log(1 + theta s).
/// For theta <= kThetaMin returns the degenerate limit -s.
/// Throws std::invalid_argument for theta <= 0, q < 0 or s < 0.
double log_laplace_deriv(double theta, int q, double s);

struct FrailtyPosterior {
  double mean = 1.0;
  double variance = 0.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
};

/// Posterior of a group frailty given d events and cumulative-hazard sum s:
/// Gamma(shape 1/theta + d, rate 1/theta + s). The interval is equal-tailed.
FrailtyPosterior posterior_frailty(double theta, int d, double s, double level = 0.95);

}  // namespace frailcwm
