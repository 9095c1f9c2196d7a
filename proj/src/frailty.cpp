#include "frailcwm/frailty.hpp"

#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/gamma.hpp>
#include <fmt/format.h>

namespace frailcwm {

namespace {

void check_args(double theta, int q, double s) {
  if (!(theta > 0.0) || !std::isfinite(theta))
    throw std::invalid_argument(fmt::format("frailty variance must be positive, got {}", theta));
  if (q < 0) throw std::invalid_argument("derivative order must be nonnegative");
  if (!(s >= 0.0) || !std::isfinite(s))
    throw std::invalid_argument(fmt::format("Laplace argument must be nonnegative, got {}", s));
}

}  // namespace

double log_laplace_deriv(double theta, int q, double s) {
  check_args(theta, q, s);
  if (theta <= kThetaMin) return -s;
  double acc = 0.0;
  for (int l = 1; l < q; ++l) acc += std::log1p(l * theta);
  return acc - (1.0 / theta + q) * std::log1p(theta * s);
}

FrailtyPosterior posterior_frailty(double theta, int d, double s, double level) {
  check_args(theta, d, s);
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("confidence level must lie in (0, 1)");
  FrailtyPosterior post;
  if (theta <= kThetaMin) return post;

  double shape = 1.0 / theta + d;
  double rate = 1.0 / theta + s;
  post.mean = shape / rate;
  post.variance = shape / (rate * rate);
  boost::math::gamma_distribution<double> dist(shape, 1.0 / rate);
  double tail = 0.5 * (1.0 - level);
  post.ci_low = boost::math::quantile(dist, tail);
  post.ci_high = boost::math::quantile(boost::math::complement(dist, tail));
  return post;
}

}  // namespace frailcwm
