// Archimedean copula families with rotations: generators, closed-form densities
// and CDFs, conditional-inversion sampling, theta MLE with fixed margins, family
// selection, and Kendall tau diagnostics.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "agglo/margins.hpp"
#include "agglo/optimize.hpp"
#include "agglo/rng.hpp"

namespace agglo::copula {

// Inputs on the unit square are clamped this far from the edges; clayton and
// gumbel densities diverge at the corners.
inline constexpr double kEdgeClamp = 1e-12;

enum class Family { frank, joe, clayton, gumbel, amh };
enum class Rotation { deg0, deg90, deg180, deg270 };

inline const char* family_name(Family family) {
  switch (family) {
    case Family::frank: return "frank";
    case Family::joe: return "joe";
    case Family::clayton: return "clayton";
    case Family::gumbel: return "gumbel";
    case Family::amh: return "amh";
  }
  throw std::logic_error("unknown copula family");
}

inline Family family_from_name(const std::string& name) {
  if (name == "frank") return Family::frank;
  if (name == "joe") return Family::joe;
  if (name == "clayton") return Family::clayton;
  if (name == "gumbel") return Family::gumbel;
  if (name == "amh" || name == "ali") return Family::amh;  // short alias accepted
  throw std::invalid_argument("unknown copula family: " + name);
}

inline int rotation_degrees(Rotation rotation) {
  switch (rotation) {
    case Rotation::deg0: return 0;
    case Rotation::deg90: return 90;
    case Rotation::deg180: return 180;
    case Rotation::deg270: return 270;
  }
  throw std::logic_error("unknown rotation");
}

inline Rotation rotation_from_degrees(int degrees) {
  switch (degrees) {
    case 0: return Rotation::deg0;
    case 90: return Rotation::deg90;
    case 180: return Rotation::deg180;
    case 270: return Rotation::deg270;
  }
  throw std::invalid_argument("rotation must be 0, 90, 180, or 270 degrees");
}

// Valid parameter ranges: frank R\{0}, joe [1,inf), clayton (0,inf),
// gumbel [1,inf), amh [-1,1).
inline bool theta_in_domain(Family family, double theta) {
  if (!std::isfinite(theta)) return false;
  switch (family) {
    case Family::frank: return theta != 0.0;
    case Family::joe: return theta >= 1.0;
    case Family::clayton: return theta > 0.0;
    case Family::gumbel: return theta >= 1.0;
    case Family::amh: return theta >= -1.0 && theta < 1.0;
  }
  return false;
}

inline void require_theta(Family family, double theta) {
  if (!theta_in_domain(family, theta))
    throw std::invalid_argument(std::string("theta ") + std::to_string(theta) +
                                " outside the valid range for " + family_name(family));
}

struct CopulaFit {
  Family family = Family::frank;
  Rotation rotation = Rotation::deg0;
  double theta = 1.0;
  double log_likelihood = 0.0;
  bool boundary = false;  // fit ended pinned at a range end; diagnostic only
};

// Argument transform that turns the base density into the rotated density.
inline std::pair<double, double> density_rotation_map(Rotation rotation, double u, double v) {
  switch (rotation) {
    case Rotation::deg0: return {u, v};
    case Rotation::deg90: return {v, 1.0 - u};
    case Rotation::deg180: return {1.0 - u, 1.0 - v};
    case Rotation::deg270: return {1.0 - v, u};
  }
  throw std::logic_error("unknown rotation");
}

// Transform applied to a draw from the base copula to sample the rotated one.
inline std::pair<double, double> sample_rotation_map(Rotation rotation, double u, double v) {
  switch (rotation) {
    case Rotation::deg0: return {u, v};
    case Rotation::deg90: return {1.0 - v, u};
    case Rotation::deg180: return {1.0 - u, 1.0 - v};
    case Rotation::deg270: return {v, 1.0 - u};
  }
  throw std::logic_error("unknown rotation");
}

namespace detail {

inline double clamp_unit(double u) { return std::clamp(u, kEdgeClamp, 1.0 - kEdgeClamp); }

// log(e^a + e^b - 1) for a, b >= 0 without overflow or cancellation.
inline double log_sum_exp_m1(double a, double b) {
  const double m = std::max(a, b);
  if (m < 30.0) return std::log1p(std::expm1(a) + std::expm1(b));
  return m + std::log(std::exp(a - m) + std::exp(b - m) - std::exp(-m));
}

// Unrotated log densities; inputs must already lie strictly inside (0,1).
inline double log_density_clayton(double theta, double u, double v) {
  const double lu = std::log(u), lv = std::log(v);
  const double log_t = log_sum_exp_m1(-theta * lu, -theta * lv);
  return std::log1p(theta) - (theta + 1.0) * (lu + lv) - (2.0 + 1.0 / theta) * log_t;
}

inline double log_density_gumbel(double theta, double u, double v) {
  const double x = -std::log(u), y = -std::log(v);
  const double mx = std::max(x, y), mn = std::min(x, y);
  const double log_a = std::log(mx) + std::log1p(std::pow(mn / mx, theta)) / theta;
  const double a = std::exp(log_a);
  return -a + (theta - 1.0) * (std::log(x) + std::log(y)) + (x + y) +
         (1.0 - 2.0 * theta) * log_a + std::log(a + theta - 1.0);
}

inline double log_density_frank(double theta, double u, double v) {
  // Numerically singular at theta = 0; the limit there is independence.
  if (std::abs(theta) < 1e-6) return 0.0;
  // The textbook denominator (e^{-tu}-1)(e^{-tv}-1)+(e^{-t}-1) cancels badly
  // for large theta; this regrouping keeps every term the same sign.
  const double d = std::exp(-theta * u) * std::expm1(-theta * (1.0 - u)) +
                   std::exp(-theta * v) * std::expm1(-theta * u);
  return std::log(std::abs(theta)) + std::log(std::abs(std::expm1(-theta))) -
         theta * (u + v) - 2.0 * std::log(std::abs(d));
}

inline double log_density_joe(double theta, double u, double v) {
  const double lu = std::log1p(-u), lv = std::log1p(-v);
  const double p = std::exp(theta * lu), q = std::exp(theta * lv);
  const double w = p + q - p * q;
  if (!(w > 0.0)) return -std::numeric_limits<double>::infinity();
  return (1.0 / theta - 2.0) * std::log(w) + (theta - 1.0) * (lu + lv) +
         std::log(theta - 1.0 + w);
}

inline double log_density_amh(double theta, double u, double v) {
  const double d = 1.0 - theta * (1.0 - u) * (1.0 - v);
  const double num = 1.0 - theta + 2.0 * theta * u * v / d;
  if (!(num > 0.0) || !(d > 0.0)) return -std::numeric_limits<double>::infinity();
  return std::log(num) - 2.0 * std::log(d);
}

inline double log_density_base(Family family, double theta, double u, double v) {
  switch (family) {
    case Family::frank: return log_density_frank(theta, u, v);
    case Family::joe: return log_density_joe(theta, u, v);
    case Family::clayton: return log_density_clayton(theta, u, v);
    case Family::gumbel: return log_density_gumbel(theta, u, v);
    case Family::amh: return log_density_amh(theta, u, v);
  }
  throw std::logic_error("unknown copula family");
}

// Unrotated CDFs.
inline double cdf_base(Family family, double theta, double u, double v) {
  switch (family) {
    case Family::frank: {
      if (std::abs(theta) < 1e-6) return u * v;
      return -std::log1p(std::expm1(-theta * u) * std::expm1(-theta * v) /
                         std::expm1(-theta)) /
             theta;
    }
    case Family::joe: {
      const double p = std::exp(theta * std::log1p(-u));
      const double q = std::exp(theta * std::log1p(-v));
      const double w = p + q - p * q;
      return -std::expm1(std::log(w) / theta);
    }
    case Family::clayton: {
      const double log_t = log_sum_exp_m1(-theta * std::log(u), -theta * std::log(v));
      return std::exp(-log_t / theta);
    }
    case Family::gumbel: {
      const double x = -std::log(u), y = -std::log(v);
      const double mx = std::max(x, y), mn = std::min(x, y);
      const double log_a = std::log(mx) + std::log1p(std::pow(mn / mx, theta)) / theta;
      return std::exp(-std::exp(log_a));
    }
    case Family::amh:
      return u * v / (1.0 - theta * (1.0 - u) * (1.0 - v));
  }
  throw std::logic_error("unknown copula family");
}

// Conditional distribution P(V <= v | U = u) of the unrotated copula.
inline double h_base(Family family, double theta, double u, double v) {
  switch (family) {
    case Family::frank: {
      if (std::abs(theta) < 1e-6) return v;
      const double d = std::exp(-theta * u) * std::expm1(-theta * (1.0 - u)) +
                       std::exp(-theta * v) * std::expm1(-theta * u);
      return std::exp(-theta * u) * std::expm1(-theta * v) / d;
    }
    case Family::joe: {
      const double lu = std::log1p(-u), lv = std::log1p(-v);
      const double p = std::exp(theta * lu), q = std::exp(theta * lv);
      const double w = p + q - p * q;
      if (!(w > 0.0)) return 1.0;
      return std::exp((1.0 / theta - 1.0) * std::log(w) + (theta - 1.0) * lu +
                      std::log1p(-q));
    }
    case Family::clayton: {
      const double log_t = log_sum_exp_m1(-theta * std::log(u), -theta * std::log(v));
      return std::exp(-(theta + 1.0) * std::log(u) - (1.0 + 1.0 / theta) * log_t);
    }
    case Family::gumbel: {
      const double x = -std::log(u), y = -std::log(v);
      const double mx = std::max(x, y), mn = std::min(x, y);
      const double log_a = std::log(mx) + std::log1p(std::pow(mn / mx, theta)) / theta;
      const double a = std::exp(log_a);
      return std::exp(-a + (1.0 - theta) * log_a + (theta - 1.0) * std::log(x) + x);
    }
    case Family::amh: {
      const double d = 1.0 - theta * (1.0 - u) * (1.0 - v);
      return v * (1.0 - theta * (1.0 - v)) / (d * d);
    }
  }
  throw std::logic_error("unknown copula family");
}

// Solves h(v | u) = w by bisection with Newton acceleration; h is monotone in v
// and its derivative is the copula density.
inline double conditional_inverse(Family family, double theta, double u, double w) {
  double lo = kEdgeClamp, hi = 1.0 - kEdgeClamp;
  if (h_base(family, theta, u, lo) >= w) return lo;
  if (h_base(family, theta, u, hi) <= w) return hi;
  double v = std::clamp(w, lo, hi);
  for (int iter = 0; iter < 100; ++iter) {
    const double diff = h_base(family, theta, u, v) - w;
    if (std::abs(diff) < 1e-12) return v;
    if (diff > 0.0) hi = v; else lo = v;
    const double slope = std::exp(log_density_base(family, theta, u, v));
    double next = slope > 1e-300 ? v - diff / slope : 0.5 * (lo + hi);
    if (!(next > lo) || !(next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - v) < 1e-15) return next;
    v = next;
  }
  return v;
}

// Fitting search ranges; clayton/gumbel/joe are scanned on a log scale.
struct FitRange {
  double lo;
  double hi;
  bool log_scale;
  int scan_points;
};

inline FitRange fit_range(Family family) {
  switch (family) {
    case Family::frank: return {-50.0, 50.0, false, 51};
    case Family::joe: return {1.0, 50.0, true, 33};
    case Family::clayton: return {1e-6, 50.0, true, 41};
    case Family::gumbel: return {1.0, 50.0, true, 33};
    case Family::amh: return {-1.0 + 1e-9, 1.0 - 1e-9, false, 41};
  }
  throw std::logic_error("unknown copula family");
}

}  // namespace detail

// Archimedean generator phi(u) and its pseudo-inverse. phi(1) = 0 for every
// family; phi(0+) = +inf, so the pseudo-inverse only returns 0 for infinite x.
inline double generator(Family family, double theta, double u) {
  require_theta(family, theta);
  u = std::clamp(u, 1e-300, 1.0);
  switch (family) {
    case Family::frank:
      return -std::log(std::expm1(-theta * u) / std::expm1(-theta));
    case Family::joe:
      return -std::log1p(-std::exp(theta * std::log1p(-u)));
    case Family::clayton:
      return std::expm1(-theta * std::log(u)) / theta;
    case Family::gumbel:
      return std::pow(-std::log(u), theta);
    case Family::amh:
      return std::log((1.0 - theta * (1.0 - u)) / u);
  }
  throw std::logic_error("unknown copula family");
}

inline double generator_pinv(Family family, double theta, double x) {
  require_theta(family, theta);
  if (!(x > 0.0)) return 1.0;
  if (std::isinf(x)) return 0.0;
  switch (family) {
    case Family::frank:
      return -std::log1p(std::expm1(-theta) * std::exp(-x)) / theta;
    case Family::joe:
      return 1.0 - std::pow(-std::expm1(-x), 1.0 / theta);
    case Family::clayton:
      return std::exp(-std::log1p(theta * x) / theta);
    case Family::gumbel:
      return std::exp(-std::pow(x, 1.0 / theta));
    case Family::amh:
      return (1.0 - theta) / (std::exp(x) - theta);
  }
  throw std::logic_error("unknown copula family");
}

inline double copula_log_density(const CopulaFit& fit, double u1, double u2) {
  require_theta(fit.family, fit.theta);
  const auto [a, b] =
      density_rotation_map(fit.rotation, detail::clamp_unit(u1), detail::clamp_unit(u2));
  return detail::log_density_base(fit.family, fit.theta, detail::clamp_unit(a),
                                  detail::clamp_unit(b));
}

inline double copula_density(const CopulaFit& fit, double u1, double u2) {
  return std::exp(copula_log_density(fit, u1, u2));
}

inline double copula_cdf(const CopulaFit& fit, double u1, double u2) {
  require_theta(fit.family, fit.theta);
  const double u = detail::clamp_unit(u1), v = detail::clamp_unit(u2);
  double value = 0.0;
  switch (fit.rotation) {
    case Rotation::deg0:
      value = detail::cdf_base(fit.family, fit.theta, u, v);
      break;
    case Rotation::deg90:
      value = v - detail::cdf_base(fit.family, fit.theta, v, 1.0 - u);
      break;
    case Rotation::deg180:
      value = u + v - 1.0 + detail::cdf_base(fit.family, fit.theta, 1.0 - u, 1.0 - v);
      break;
    case Rotation::deg270:
      value = u - detail::cdf_base(fit.family, fit.theta, 1.0 - v, u);
      break;
  }
  return std::clamp(value, 0.0, 1.0);
}

// Maximum-likelihood theta for a fixed family and rotation: coarse scan over the
// search range, then golden-section refinement around the best scan point.
inline CopulaFit fit_theta(Family family, Rotation rotation,
                           const std::vector<std::pair<double, double>>& pseudo_obs) {
  if (pseudo_obs.size() < 5)
    throw std::invalid_argument("copula fit needs at least 5 pseudo-observation pairs");
  std::vector<std::pair<double, double>> obs;
  obs.reserve(pseudo_obs.size());
  for (const auto& [u, v] : pseudo_obs) {
    if (!std::isfinite(u) || !std::isfinite(v))
      throw std::invalid_argument("pseudo-observations must be finite");
    const auto [a, b] = density_rotation_map(rotation, detail::clamp_unit(u),
                                             detail::clamp_unit(v));
    obs.emplace_back(detail::clamp_unit(a), detail::clamp_unit(b));
  }
  const auto range = detail::fit_range(family);
  const double t_lo = range.log_scale ? std::log(range.lo) : range.lo;
  const double t_hi = range.log_scale ? std::log(range.hi) : range.hi;
  const auto to_theta = [&](double t) {
    return std::clamp(range.log_scale ? std::exp(t) : t, range.lo, range.hi);
  };
  const auto neg_loglik = [&](double t) {
    const double theta = to_theta(t);
    double total = 0.0;
    for (const auto& [u, v] : obs) total += detail::log_density_base(family, theta, u, v);
    return std::isfinite(total) ? -total : 1e100;
  };

  int best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<double> grid(static_cast<std::size_t>(range.scan_points));
  for (int i = 0; i < range.scan_points; ++i) {
    grid[static_cast<std::size_t>(i)] =
        t_lo + (t_hi - t_lo) * i / (range.scan_points - 1);
    const double value = neg_loglik(grid[static_cast<std::size_t>(i)]);
    if (value < best_value) {
      best_value = value;
      best = i;
    }
  }
  const int last = range.scan_points - 1;
  const double b_lo = grid[static_cast<std::size_t>(std::max(0, best - 1))];
  const double b_hi = grid[static_cast<std::size_t>(std::min(last, best + 1))];
  const double t_star =
      optimize::golden_section(neg_loglik, b_lo, b_hi, range.log_scale ? 1e-10 : 1e-9);

  double theta = to_theta(t_star);
  // The frank range crosses its excluded point 0; an exact-zero optimum means
  // independence, represented by the nearest in-range value.
  if (family == Family::frank && std::abs(theta) < 1e-12) theta = 1e-12;

  CopulaFit fit;
  fit.family = family;
  fit.rotation = rotation;
  fit.theta = theta;
  fit.log_likelihood = -neg_loglik(range.log_scale ? std::log(theta) : theta);
  const double margin = 1e-4 * (t_hi - t_lo);
  fit.boundary = (t_star - t_lo) <= margin || (t_hi - t_star) <= margin;
  return fit;
}

struct CopulaCandidate {
  Family family;
  Rotation rotation;
};

inline std::vector<CopulaCandidate> default_candidates() {
  std::vector<CopulaCandidate> out;
  for (const Family family : {Family::frank, Family::joe, Family::clayton, Family::gumbel,
                              Family::amh})
    for (const Rotation rotation :
         {Rotation::deg0, Rotation::deg90, Rotation::deg180, Rotation::deg270})
      out.push_back({family, rotation});
  return out;
}

struct CopulaSelection {
  Family family = Family::frank;
  Rotation rotation = Rotation::deg0;
  std::vector<CopulaFit> fits;  // one per time step
  double total_log_likelihood = 0.0;
};

// Picks the (family, rotation) whose summed per-step log likelihood is strictly
// greatest; margins are fixed, so their terms are candidate-independent.
inline CopulaSelection select_copula(
    const std::vector<std::vector<std::pair<double, double>>>& steps,
    const std::vector<CopulaCandidate>& candidates = default_candidates()) {
  if (steps.empty())
    throw std::invalid_argument("copula selection needs at least one time step");
  for (const auto& step : steps)
    if (step.empty())
      throw std::invalid_argument("copula selection time steps must be nonempty");
  if (candidates.empty())
    throw std::invalid_argument("copula selection needs at least one candidate");

  CopulaSelection selection;
  bool found = false;
  for (const auto& candidate : candidates) {
    std::vector<CopulaFit> fits;
    fits.reserve(steps.size());
    double total = 0.0;
    bool ok = true;
    try {
      for (const auto& step : steps) {
        fits.push_back(fit_theta(candidate.family, candidate.rotation, step));
        total += fits.back().log_likelihood;
      }
    } catch (const std::exception&) {
      ok = false;
    }
    if (!ok || !std::isfinite(total)) continue;
    if (!found || total > selection.total_log_likelihood) {
      selection.family = candidate.family;
      selection.rotation = candidate.rotation;
      selection.fits = std::move(fits);
      selection.total_log_likelihood = total;
      found = true;
    }
  }
  if (!found) throw std::runtime_error("every copula candidate failed to fit");
  return selection;
}

// Conditional-inversion sampling: the first coordinate is uniform, the second
// inverts the conditional CDF at a second uniform, then the rotation map runs.
inline std::vector<std::pair<double, double>> sample(const CopulaFit& fit, std::size_t n,
                                                     Rng& rng) {
  require_theta(fit.family, fit.theta);
  std::vector<std::pair<double, double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = detail::clamp_unit(rng.uniform());
    const double w = detail::clamp_unit(rng.uniform());
    const double v = detail::conditional_inverse(fit.family, fit.theta, u, w);
    out.push_back(sample_rotation_map(fit.rotation, u, v));
  }
  return out;
}

// Kendall tau-b: concordant minus discordant over the geometric mean of the
// tie-corrected pair counts.
inline double empirical_kendall_tau(const std::vector<std::pair<double, double>>& pairs) {
  const std::size_t n = pairs.size();
  if (n < 2) throw std::invalid_argument("kendall tau needs at least two pairs");
  long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = pairs[i].first - pairs[j].first;
      const double dy = pairs[i].second - pairs[j].second;
      if (dx == 0.0) ++ties_x;
      if (dy == 0.0) ++ties_y;
      if (dx == 0.0 || dy == 0.0) continue;
      if ((dx > 0.0) == (dy > 0.0)) ++concordant;
      else ++discordant;
    }
  }
  const double total = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  const double denom_x = total - static_cast<double>(ties_x);
  const double denom_y = total - static_cast<double>(ties_y);
  if (denom_x <= 0.0 || denom_y <= 0.0)
    throw std::runtime_error("kendall tau undefined: a coordinate is constant");
  return static_cast<double>(concordant - discordant) / std::sqrt(denom_x * denom_y);
}

// Joint diameter/solidity model; an absent copula means independent margins
// (used for the primary-particle class).
struct BivariateModel {
  margins::MarginFit margin_d;
  margins::MarginFit margin_s;
  std::optional<CopulaFit> copula;
};

inline double joint_density(const BivariateModel& model, double x_d, double x_s) {
  const double f_d = margins::pdf(model.margin_d, x_d);
  const double f_s = margins::pdf(model.margin_s, x_s);
  if (f_d <= 0.0 || f_s <= 0.0) return 0.0;
  double c = 1.0;
  if (model.copula) {
    const double u = margins::cdf(model.margin_d, x_d);
    const double v = margins::cdf(model.margin_s, x_s);
    c = copula_density(*model.copula, u, v);
  }
  return c * f_d * f_s;
}

inline std::vector<std::pair<double, double>> sample_bivariate(const BivariateModel& model,
                                                              std::size_t n, Rng& rng) {
  std::vector<std::pair<double, double>> out;
  out.reserve(n);
  if (model.copula) {
    for (const auto& [u, v] : sample(*model.copula, n, rng))
      out.emplace_back(margins::quantile(model.margin_d, u),
                       margins::quantile(model.margin_s, v));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = margins::sample(model.margin_d, rng);
      const double s = margins::sample(model.margin_s, rng);
      out.emplace_back(d, s);
    }
  }
  return out;
}

// Pulls a regressed theta back into the family's range; returns whether it moved.
inline std::pair<double, bool> clamp_theta(Family family, double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("theta must be finite");
  double clamped = theta;
  switch (family) {
    case Family::frank:
      if (std::abs(theta) < 1e-6) clamped = theta < 0.0 ? -1e-6 : 1e-6;
      break;
    case Family::joe:
    case Family::gumbel:
      clamped = std::max(theta, 1.0);
      break;
    case Family::clayton:
      clamped = std::max(theta, 1e-6);
      break;
    case Family::amh:
      clamped = std::clamp(theta, -1.0, 1.0 - 1e-9);
      break;
  }
  return {clamped, clamped != theta};
}

inline nlohmann::json copula_to_json(const CopulaFit& fit) {
  return nlohmann::json{{"family", family_name(fit.family)},
                        {"rotation", rotation_degrees(fit.rotation)},
                        {"theta", fit.theta},
                        {"loglik", fit.log_likelihood}};
}

inline CopulaFit copula_from_json(const nlohmann::json& j) {
  CopulaFit fit;
  try {
    fit.family = family_from_name(j.at("family").get<std::string>());
    fit.rotation = rotation_from_degrees(j.at("rotation").get<int>());
    fit.theta = j.at("theta").get<double>();
    fit.log_likelihood = j.at("loglik").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("invalid copula fit json: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("invalid copula fit json: ") + e.what());
  }
  if (!theta_in_domain(fit.family, fit.theta))
    throw std::runtime_error("invalid copula fit json: theta outside the family range");
  return fit;
}

inline nlohmann::json bivariate_to_json(const BivariateModel& model) {
  nlohmann::json j{{"margin_d", margins::margin_to_json(model.margin_d)},
                   {"margin_s", margins::margin_to_json(model.margin_s)}};
  j["copula"] = model.copula ? copula_to_json(*model.copula) : nlohmann::json();
  return j;
}

inline BivariateModel bivariate_from_json(const nlohmann::json& j) {
  BivariateModel model;
  try {
    model.margin_d = margins::margin_from_json(j.at("margin_d"));
    model.margin_s = margins::margin_from_json(j.at("margin_s"));
    if (!j.at("copula").is_null()) model.copula = copula_from_json(j.at("copula"));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("invalid bivariate model json: ") + e.what());
  }
  return model;
}

}  // namespace agglo::copula
