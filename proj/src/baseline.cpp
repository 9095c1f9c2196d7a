#include "frailcwm/baseline.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace frailcwm {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_positive(double value, std::string_view what) {
  if (!(value > 0.0) || !std::isfinite(value))
    throw std::invalid_argument(fmt::format("{} must be positive and finite, got {}", what, value));
}

void check_time(double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw std::invalid_argument(fmt::format("time must be positive and finite, got {}", t));
}

}  // namespace

double log_normal_sf(double z) {
  if (z < 5.0) return std::log(0.5 * std::erfc(z / std::sqrt(2.0)));
  // Mills ratio Q(z)/phi(z) = 1/(z + 1/(z + 2/(z + 3/(z + ...)))), evaluated backwards.
  double tail = z;
  for (int k = 300; k >= 1; --k) tail = z + k / tail;
  constexpr double kLogSqrt2Pi = 0.91893853320467274178;
  return -0.5 * z * z - kLogSqrt2Pi - std::log(tail);
}

Family family_of(const Baseline& baseline) {
  return std::visit(overloaded{[](const Exponential&) { return Family::exponential; },
                               [](const Weibull&) { return Family::weibull; },
                               [](const Gompertz&) { return Family::gompertz; },
                               [](const Lognormal&) { return Family::lognormal; }},
                    baseline);
}

std::string_view family_name(Family family) {
  switch (family) {
    case Family::exponential: return "exponential";
    case Family::weibull: return "weibull";
    case Family::gompertz: return "gompertz";
    case Family::lognormal: return "lognormal";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "exponential") return Family::exponential;
  if (name == "weibull") return Family::weibull;
  if (name == "gompertz") return Family::gompertz;
  if (name == "lognormal") return Family::lognormal;
  throw std::invalid_argument(fmt::format("unknown baseline family '{}'", name));
}

int parameter_count(Family family) { return family == Family::exponential ? 1 : 2; }

std::vector<std::string> parameter_names(Family family) {
  switch (family) {
    case Family::exponential: return {"lambda"};
    case Family::weibull:
    case Family::gompertz: return {"lambda", "rho"};
    case Family::lognormal: return {"eta", "nu"};
  }
  return {};
}

void validate(const Baseline& baseline) {
  std::visit(overloaded{[](const Exponential& b) { check_positive(b.rate, "exponential lambda"); },
                        [](const Weibull& b) {
                          check_positive(b.scale, "weibull lambda");
                          check_positive(b.shape, "weibull rho");
                        },
                        [](const Gompertz& b) {
                          check_positive(b.scale, "gompertz lambda");
                          check_positive(b.shape, "gompertz rho");
                        },
                        [](const Lognormal& b) {
                          if (!std::isfinite(b.location))
                            throw std::invalid_argument("lognormal eta must be finite");
                          check_positive(b.scale, "lognormal nu");
                        }},
             baseline);
}

double hazard0(const Baseline& baseline, double t) {
  check_time(t);
  validate(baseline);
  double h = std::visit(
      overloaded{[&](const Lognormal& b) {
                   // Direct table formula; the survival term underflows far in the tail.
                   double z = (std::log(t) - b.location) / b.scale;
                   double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
                   double sf = 0.5 * std::erfc(z / std::sqrt(2.0));
                   return pdf / (b.scale * t * sf);
                 },
                 [&](const auto& b) { return std::exp(b.log_hazard(t, std::log(t))); }},
      baseline);
  if (!std::isfinite(h))
    throw std::domain_error(
        fmt::format("hazard0 is not finite at t={}; use log_hazard0 instead", t));
  return h;
}

double cumhazard0(const Baseline& baseline, double t) {
  if (!(t >= 0.0) || !std::isfinite(t))
    throw std::invalid_argument(fmt::format("time must be nonnegative and finite, got {}", t));
  validate(baseline);
  if (t == 0.0) return 0.0;
  double H = std::visit([&](const auto& b) { return b.cumulative_hazard(t, std::log(t)); }, baseline);
  if (!std::isfinite(H))
    throw std::domain_error(fmt::format("cumulative hazard overflows at t={} for the {} baseline",
                                        t, family_name(family_of(baseline))));
  return H;
}

double log_hazard0(const Baseline& baseline, double t) {
  check_time(t);
  validate(baseline);
  double lh = std::visit([&](const auto& b) { return b.log_hazard(t, std::log(t)); }, baseline);
  if (!std::isfinite(lh))
    throw std::domain_error(fmt::format("log hazard is not finite at t={}", t));
  return lh;
}

std::vector<double> natural_parameters(const Baseline& baseline) {
  return std::visit(overloaded{[](const Exponential& b) { return std::vector<double>{b.rate}; },
                               [](const Weibull& b) { return std::vector<double>{b.scale, b.shape}; },
                               [](const Gompertz& b) { return std::vector<double>{b.scale, b.shape}; },
                               [](const Lognormal& b) {
                                 return std::vector<double>{b.location, b.scale};
                               }},
                    baseline);
}

Baseline from_natural(Family family, std::span<const double> v) {
  if (v.size() != static_cast<std::size_t>(parameter_count(family)))
    throw std::invalid_argument(fmt::format("{} baseline expects {} parameters, got {}",
                                            family_name(family), parameter_count(family), v.size()));
  Baseline out;
  switch (family) {
    case Family::exponential: out = Exponential{v[0]}; break;
    case Family::weibull: out = Weibull{v[0], v[1]}; break;
    case Family::gompertz: out = Gompertz{v[0], v[1]}; break;
    case Family::lognormal: out = Lognormal{v[0], v[1]}; break;
  }
  validate(out);
  return out;
}

std::vector<double> to_unconstrained(const Baseline& baseline) {
  validate(baseline);
  auto v = natural_parameters(baseline);
  bool lognormal = family_of(baseline) == Family::lognormal;
  for (std::size_t k = 0; k < v.size(); ++k)
    if (!(lognormal && k == 0)) v[k] = std::log(v[k]);
  return v;
}

Baseline from_unconstrained(Family family, std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(parameter_count(family)))
    throw std::invalid_argument(fmt::format("{} baseline expects {} unconstrained values, got {}",
                                            family_name(family), parameter_count(family),
                                            values.size()));
  std::vector<double> v(values.begin(), values.end());
  for (std::size_t k = 0; k < v.size(); ++k)
    if (!(family == Family::lognormal && k == 0)) v[k] = std::exp(v[k]);
  return from_natural(family, v);
}

std::vector<double> natural_jacobian(const Baseline& baseline) {
  auto v = natural_parameters(baseline);
  if (family_of(baseline) == Family::lognormal) v[0] = 1.0;
  return v;
}

}  // namespace frailcwm
