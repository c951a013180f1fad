#pragma once

// Truncated univariate margins (normal, log-normal, gamma): density, cdf,
// quantile, truncated maximum likelihood, and family selection by summed
// likelihood across time steps. All three families reduce to sufficient
// statistics, so likelihood evaluations cost O(1) after one pass.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <json.hpp>

#include "agglo/optimize.hpp"
#include "agglo/quadrature.hpp"
#include "agglo/rng.hpp"

namespace agglo::margins {

enum class Family { normal, lognormal, gamma };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::normal: return "normal";
    case Family::lognormal: return "lognormal";
    case Family::gamma: return "gamma";
  }
  return "?";
}

inline Family family_from_name(const std::string& name) {
  if (name == "normal") return Family::normal;
  if (name == "lognormal") return Family::lognormal;
  if (name == "gamma") return Family::gamma;
  throw std::runtime_error("unknown margin family: " + name);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline Interval solidity_support() { return {0.0, 1.0}; }
inline Interval diameter_support() { return {0.0, std::numeric_limits<double>::infinity()}; }

// params: normal (mu, sigma); lognormal (scale m, shape sigma); gamma
// (shape alpha, scale beta).
struct MarginFit {
  Family family = Family::normal;
  std::array<double, 2> params{0.0, 1.0};
  Interval support{-std::numeric_limits<double>::infinity(),
                   std::numeric_limits<double>::infinity()};
  double log_likelihood = 0.0;
  long long n = 0;
};

namespace detail {

inline bool params_valid(Family family, const std::array<double, 2>& p) {
  switch (family) {
    case Family::normal: return std::isfinite(p[0]) && p[1] > 0.0 && std::isfinite(p[1]);
    case Family::lognormal:
    case Family::gamma:
      return p[0] > 0.0 && std::isfinite(p[0]) && p[1] > 0.0 && std::isfinite(p[1]);
  }
  return false;
}

inline double untruncated_cdf(Family family, const std::array<double, 2>& p, double x) {
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  if (x == std::numeric_limits<double>::infinity()) return 1.0;
  switch (family) {
    case Family::normal:
      return boost::math::cdf(boost::math::normal_distribution<double>(p[0], p[1]), x);
    case Family::lognormal:
      if (x <= 0.0) return 0.0;
      return boost::math::cdf(
          boost::math::lognormal_distribution<double>(std::log(p[0]), p[1]), x);
    case Family::gamma:
      if (x <= 0.0) return 0.0;
      return boost::math::cdf(boost::math::gamma_distribution<double>(p[0], p[1]), x);
  }
  return 0.0;
}

inline double untruncated_comp_cdf(Family family, const std::array<double, 2>& p, double x) {
  if (x == -std::numeric_limits<double>::infinity()) return 1.0;
  if (x == std::numeric_limits<double>::infinity()) return 0.0;
  switch (family) {
    case Family::normal:
      return boost::math::cdf(
          boost::math::complement(boost::math::normal_distribution<double>(p[0], p[1]), x));
    case Family::lognormal:
      if (x <= 0.0) return 1.0;
      return boost::math::cdf(boost::math::complement(
          boost::math::lognormal_distribution<double>(std::log(p[0]), p[1]), x));
    case Family::gamma:
      if (x <= 0.0) return 1.0;
      return boost::math::cdf(
          boost::math::complement(boost::math::gamma_distribution<double>(p[0], p[1]), x));
  }
  return 0.0;
}

inline double untruncated_quantile(Family family, const std::array<double, 2>& p, double u) {
  switch (family) {
    case Family::normal:
      return boost::math::quantile(boost::math::normal_distribution<double>(p[0], p[1]), u);
    case Family::lognormal:
      return boost::math::quantile(
          boost::math::lognormal_distribution<double>(std::log(p[0]), p[1]), u);
    case Family::gamma:
      return boost::math::quantile(boost::math::gamma_distribution<double>(p[0], p[1]), u);
  }
  return 0.0;
}

inline double untruncated_logpdf(Family family, const std::array<double, 2>& p, double x) {
  constexpr double half_log_two_pi = 0.91893853320467274178;
  switch (family) {
    case Family::normal: {
      const double z = (x - p[0]) / p[1];
      return -0.5 * z * z - std::log(p[1]) - half_log_two_pi;
    }
    case Family::lognormal: {
      if (x <= 0.0) return -std::numeric_limits<double>::infinity();
      const double z = (std::log(x) - std::log(p[0])) / p[1];
      return -0.5 * z * z - std::log(x) - std::log(p[1]) - half_log_two_pi;
    }
    case Family::gamma: {
      if (x <= 0.0) return -std::numeric_limits<double>::infinity();
      return (p[0] - 1.0) * std::log(x) - x / p[1] - std::lgamma(p[0]) -
             p[0] * std::log(p[1]);
    }
  }
  return -std::numeric_limits<double>::infinity();
}

// Mass of the untruncated distribution inside [lo, hi], using the complement
// branch when the lower tail carries most of the mass.
inline double support_mass(Family family, const std::array<double, 2>& p,
                           const Interval& support) {
  const double f_lo = untruncated_cdf(family, p, support.lo);
  if (f_lo < 0.5)
    return untruncated_cdf(family, p, support.hi) - f_lo;
  return untruncated_comp_cdf(family, p, support.lo) -
         untruncated_comp_cdf(family, p, support.hi);
}

// One-pass moments reused by every likelihood evaluation.
struct SampleStats {
  long long n = 0;
  double sum = 0.0;
  double sum_sq = 0.0;
  double sum_log = 0.0;
  double sum_log_sq = 0.0;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();
};

inline SampleStats collect_stats(const std::vector<double>& samples) {
  SampleStats s;
  s.n = static_cast<long long>(samples.size());
  for (const double x : samples) {
    s.sum += x;
    s.sum_sq += x * x;
    if (x > 0.0) {
      const double lx = std::log(x);
      s.sum_log += lx;
      s.sum_log_sq += lx * lx;
    }
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  return s;
}

// Sum of untruncated log densities from sufficient statistics.
inline double logpdf_sum(Family family, const std::array<double, 2>& p, const SampleStats& s) {
  constexpr double half_log_two_pi = 0.91893853320467274178;
  const double n = static_cast<double>(s.n);
  switch (family) {
    case Family::normal: {
      const double ss = s.sum_sq - 2.0 * p[0] * s.sum + n * p[0] * p[0];
      return -0.5 * ss / (p[1] * p[1]) - n * (std::log(p[1]) + half_log_two_pi);
    }
    case Family::lognormal: {
      const double mu = std::log(p[0]);
      const double ss = s.sum_log_sq - 2.0 * mu * s.sum_log + n * mu * mu;
      return -0.5 * ss / (p[1] * p[1]) - s.sum_log - n * (std::log(p[1]) + half_log_two_pi);
    }
    case Family::gamma:
      return (p[0] - 1.0) * s.sum_log - s.sum / p[1] -
             n * (std::lgamma(p[0]) + p[0] * std::log(p[1]));
  }
  return -std::numeric_limits<double>::infinity();
}

// Untruncated gamma MLE: moment start, then damped Newton on (log alpha,
// log beta) until the mean-likelihood gradient norm falls below 1e-10.
inline std::array<double, 2> gamma_untruncated_mle(const SampleStats& s) {
  const double n = static_cast<double>(s.n);
  const double mean = s.sum / n;
  const double var = s.sum_sq / n - mean * mean;
  const double mean_log = s.sum_log / n;
  double alpha = var > 0.0 ? mean * mean / var : 1.0;
  alpha = std::clamp(alpha, 1e-8, 1e8);
  double beta = mean / alpha;

  const auto nll = [&](double a, double b) {
    return std::lgamma(a) + a * std::log(b) + (1.0 - a) * mean_log + mean / b;
  };
  double value = nll(alpha, beta);
  for (int iter = 0; iter < 100; ++iter) {
    const double gu = alpha * (boost::math::digamma(alpha) + std::log(beta) - mean_log);
    const double gv = alpha - mean / beta;
    if (std::hypot(gu, gv) <= 1e-10) break;
    const double huu =
        alpha * alpha * boost::math::trigamma(alpha) + gu;  // d2/d(log alpha)2
    const double huv = alpha;
    const double hvv = mean / beta;
    const double det = huu * hvv - huv * huv;
    double du, dv;
    if (std::abs(det) > 1e-30) {
      du = -(hvv * gu - huv * gv) / det;
      dv = -(huu * gv - huv * gu) / det;
    } else {
      du = -gu;
      dv = -gv;
    }
    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h < 40; ++h, scale *= 0.5) {
      const double a = alpha * std::exp(scale * du);
      const double b = beta * std::exp(scale * dv);
      const double trial = nll(a, b);
      if (trial < value) {
        alpha = a;
        beta = b;
        value = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  return {alpha, beta};
}

inline std::array<double, 2> transformed_to_params(Family family,
                                                   const std::vector<double>& z) {
  if (family == Family::normal) return {z[0], std::exp(z[1])};
  return {std::exp(z[0]), std::exp(z[1])};
}

inline std::vector<double> params_to_transformed(Family family,
                                                 const std::array<double, 2>& p) {
  if (family == Family::normal) return {p[0], std::log(p[1])};
  return {std::log(p[0]), std::log(p[1])};
}

}  // namespace detail

inline bool params_valid(Family family, const std::array<double, 2>& params) {
  return detail::params_valid(family, params);
}

inline double pdf(const MarginFit& fit, double x) {
  if (!(x >= fit.support.lo && x <= fit.support.hi)) return 0.0;
  const double mass = detail::support_mass(fit.family, fit.params, fit.support);
  if (!(mass > 0.0)) throw std::runtime_error("margin pdf: support carries no mass");
  return std::exp(detail::untruncated_logpdf(fit.family, fit.params, x)) / mass;
}

inline double cdf(const MarginFit& fit, double x) {
  if (x <= fit.support.lo) return 0.0;
  if (x >= fit.support.hi) return 1.0;
  const double mass = detail::support_mass(fit.family, fit.params, fit.support);
  if (!(mass > 0.0)) throw std::runtime_error("margin cdf: support carries no mass");
  const double p = (detail::untruncated_cdf(fit.family, fit.params, x) -
                    detail::untruncated_cdf(fit.family, fit.params, fit.support.lo)) /
                   mass;
  return std::clamp(p, 0.0, 1.0);
}

inline double quantile(const MarginFit& fit, double u) {
  if (!(u > 0.0 && u < 1.0))
    throw std::invalid_argument("margin quantile: u must lie in (0,1)");
  const double f_lo = detail::untruncated_cdf(fit.family, fit.params, fit.support.lo);
  const double mass = detail::support_mass(fit.family, fit.params, fit.support);
  if (!(mass > 0.0)) throw std::runtime_error("margin quantile: support carries no mass");
  const double target = f_lo + u * mass;
  double x = detail::untruncated_quantile(fit.family, fit.params,
                                          std::clamp(target, 1e-300, 1.0 - 1e-16));
  return std::clamp(x, fit.support.lo, fit.support.hi);
}

// Mean of the truncated distribution by quadrature between extreme truncated
// quantiles (the skipped tails carry ~1e-13 of the mass).
inline double mean(const MarginFit& fit) {
  const double mass = detail::support_mass(fit.family, fit.params, fit.support);
  if (!(mass > 0.0)) throw std::runtime_error("margin mean: support carries no mass");
  const double lo = quantile(fit, 1e-13);
  const double hi = quantile(fit, 1.0 - 1e-13);
  if (!(lo < hi)) return lo;
  const auto integrand = [&](double x) {
    return x * std::exp(detail::untruncated_logpdf(fit.family, fit.params, x));
  };
  return quadrature::integrate_composite(integrand, lo, hi, 16, quadrature::cached_rule(64)) /
         mass;
}

// Inverse-CDF draw from the truncated distribution.
inline double sample(const MarginFit& fit, Rng& rng) {
  double u = rng.uniform();
  while (u <= 0.0) u = rng.uniform();
  return quantile(fit, u);
}

inline MarginFit fit_mle(const std::vector<double>& samples, Family family, Interval support) {
  if (!(support.lo < support.hi)) throw std::invalid_argument("fit_mle: empty support");
  if (samples.size() < 3) throw std::invalid_argument("fit_mle: need at least three samples");
  for (const double x : samples)
    if (!(x >= support.lo && x <= support.hi) || !std::isfinite(x))
      throw std::invalid_argument("fit_mle: sample outside support");
  if (family != Family::normal)
    for (const double x : samples)
      if (x <= 0.0) throw std::invalid_argument("fit_mle: nonpositive sample for log-family");

  const detail::SampleStats stats = detail::collect_stats(samples);
  const double n = static_cast<double>(stats.n);
  const double mean_x = stats.sum / n;
  const double var_x = stats.sum_sq / n - mean_x * mean_x;
  if (!(var_x > 0.0) || stats.min == stats.max)
    throw std::runtime_error("fit_mle: degenerate samples (zero variance)");

  // Untruncated MLE as the anchor start.
  std::array<double, 2> start_params{};
  switch (family) {
    case Family::normal:
      start_params = {mean_x, std::sqrt(var_x)};
      break;
    case Family::lognormal: {
      const double mu = stats.sum_log / n;
      const double var_log = stats.sum_log_sq / n - mu * mu;
      if (!(var_log > 0.0))
        throw std::runtime_error("fit_mle: degenerate samples (zero variance)");
      start_params = {std::exp(mu), std::sqrt(var_log)};
      break;
    }
    case Family::gamma:
      start_params = detail::gamma_untruncated_mle(stats);
      break;
  }

  const auto neg_mean_loglik = [&](const std::vector<double>& z) {
    const std::array<double, 2> p = detail::transformed_to_params(family, z);
    if (!detail::params_valid(family, p)) return 1e100;
    const double mass = detail::support_mass(family, p, support);
    if (!(mass > 1e-300)) return 1e100;
    const double value = -(detail::logpdf_sum(family, p, stats) / n - std::log(mass));
    return std::isfinite(value) ? value : 1e100;
  };

  const std::vector<double> anchor = detail::params_to_transformed(family, start_params);
  const std::vector<std::vector<double>> starts{
      anchor,
      {anchor[0], anchor[1] + 0.4},
      {anchor[0], anchor[1] - 0.4},
  };
  optimize::SimplexResult best;
  for (const auto& start : starts) {
    const auto result = optimize::nelder_mead(neg_mean_loglik, start, {0.05, 0.05});
    if (result.value < best.value) best = result;
  }
  if (!(best.value < 1e99)) throw std::runtime_error("fit_mle: likelihood maximization failed");

  MarginFit fit;
  fit.family = family;
  fit.params = detail::transformed_to_params(family, best.x);
  fit.support = support;
  fit.n = stats.n;
  fit.log_likelihood = -best.value * n;
  return fit;
}

struct FamilySelection {
  Family family = Family::normal;
  std::vector<MarginFit> fits;  // per time step, for the selected family
  std::array<double, 3> total_log_likelihood{};  // indexed by Family order
  std::array<bool, 3> family_ok{};
};

// Sums maximized per-time log-likelihoods per family; a family failing any
// time step is removed. Ties keep the earlier family in declaration order.
inline FamilySelection select_family(const std::vector<std::vector<double>>& per_time_samples,
                                     Interval support) {
  if (per_time_samples.empty())
    throw std::invalid_argument("select_family: no time steps");
  for (const auto& samples : per_time_samples)
    if (samples.empty()) throw std::invalid_argument("select_family: empty time step");

  constexpr std::array<Family, 3> order{Family::normal, Family::lognormal, Family::gamma};
  FamilySelection out;
  out.total_log_likelihood = {-std::numeric_limits<double>::infinity(),
                              -std::numeric_limits<double>::infinity(),
                              -std::numeric_limits<double>::infinity()};
  bool have = false;
  for (std::size_t k = 0; k < order.size(); ++k) {
    std::vector<MarginFit> fits;
    double total = 0.0;
    bool ok = true;
    for (const auto& samples : per_time_samples) {
      try {
        fits.push_back(fit_mle(samples, order[k], support));
        total += fits.back().log_likelihood;
      } catch (const std::exception&) {
        ok = false;
        break;
      }
    }
    out.family_ok[k] = ok;
    if (!ok) continue;
    out.total_log_likelihood[k] = total;
    if (!have || total > out.total_log_likelihood[static_cast<std::size_t>(
                             static_cast<int>(out.family))]) {
      out.family = order[k];
      out.fits = std::move(fits);
      have = true;
    }
  }
  if (!have) throw std::runtime_error("select_family: every family failed to fit");
  return out;
}

inline nlohmann::json interval_to_json(const Interval& support) {
  nlohmann::json j;
  j["lo"] = std::isfinite(support.lo) ? nlohmann::json(support.lo)
                                      : nlohmann::json(support.lo > 0 ? "inf" : "-inf");
  j["hi"] = std::isfinite(support.hi) ? nlohmann::json(support.hi)
                                      : nlohmann::json(support.hi > 0 ? "inf" : "-inf");
  return j;
}

inline double interval_bound_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::runtime_error("interval bound: unrecognized string " + s);
  }
  return j.get<double>();
}

inline nlohmann::json margin_to_json(const MarginFit& fit) {
  return nlohmann::json{{"family", family_name(fit.family)},
                        {"params", fit.params},
                        {"support", interval_to_json(fit.support)},
                        {"loglik", fit.log_likelihood},
                        {"n", fit.n}};
}

inline MarginFit margin_from_json(const nlohmann::json& j) {
  MarginFit fit;
  fit.family = family_from_name(j.at("family").get<std::string>());
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != 2) throw std::runtime_error("margin document: need two parameters");
  fit.params = {params[0], params[1]};
  fit.support.lo = interval_bound_from_json(j.at("support").at("lo"));
  fit.support.hi = interval_bound_from_json(j.at("support").at("hi"));
  fit.log_likelihood = j.at("loglik").get<double>();
  fit.n = j.at("n").get<long long>();
  if (!detail::params_valid(fit.family, fit.params) || !(fit.support.lo < fit.support.hi))
    throw std::runtime_error("margin document: invalid parameters");
  return fit;
}

}  // namespace agglo::margins
