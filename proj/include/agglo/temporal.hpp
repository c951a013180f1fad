// Time-resolved modeling: saturating-exponential regression of class fractions
// and distribution-parameter trajectories, and assembly of predicted bivariate
// models at arbitrary times.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "agglo/copula.hpp"
#include "agglo/margins.hpp"
#include "agglo/optimize.hpp"

namespace agglo::temporal {

// zeta(t) = c1 - c2 * exp(-c3 * t); c1 is the saturation value.
struct RegressionCurve {
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  bool weighted = false;
  double sse = 0.0;
};

inline double curve_value(const RegressionCurve& curve, double t) {
  return curve.c1 - curve.c2 * std::exp(-curve.c3 * t);
}

namespace detail {

struct FitPoint {
  double t;
  double y;
  double w;
};

// Multi-start damped Gauss-Newton on (c1, c2, c3); residuals carry the weight
// inside the square, matching the literal weighted loss. c3 is kept >= 0.
inline RegressionCurve fit_points(std::vector<FitPoint> points, bool weighted_flag) {
  std::stable_sort(points.begin(), points.end(), [](const FitPoint& a, const FitPoint& b) {
    return a.t < b.t || (a.t == b.t && a.y < b.y);
  });
  const double first = points.front().y;
  const double last = points.back().y;

  const auto model = [&](const std::vector<double>& x, std::vector<double>& r,
                         std::vector<double>& jac) {
    const std::size_t m = points.size();
    r.resize(m);
    jac.resize(m * 3);
    for (std::size_t i = 0; i < m; ++i) {
      const auto& p = points[i];
      const double e = std::exp(-x[2] * p.t);
      r[i] = (x[0] - x[1] * e - p.y) * p.w;
      jac[i * 3 + 0] = p.w;
      jac[i * 3 + 1] = -e * p.w;
      jac[i * 3 + 2] = x[1] * p.t * e * p.w;
    }
  };
  const auto project = [](std::vector<double>& x) { x[2] = std::max(x[2], 0.0); };

  bool have = false;
  optimize::GaussNewtonResult best;
  for (const double c3_start : {0.01, 0.03, 0.1, 0.3}) {
    const auto result = optimize::gauss_newton(model, {last, last - first, c3_start}, project);
    if (!have || result.loss < best.loss) {
      best = result;
      have = true;
    }
  }

  RegressionCurve curve;
  curve.c1 = best.x[0];
  curve.c2 = best.x[1];
  curve.c3 = best.x[2];
  curve.weighted = weighted_flag;
  curve.sse = best.loss;
  return curve;
}

inline void validate_times(const std::vector<FitPoint>& points) {
  if (points.size() < 3)
    throw std::invalid_argument("curve fit needs at least 3 points");
  double t_min = points.front().t, t_max = points.front().t;
  for (const auto& p : points) {
    if (!std::isfinite(p.t) || !std::isfinite(p.y) || !std::isfinite(p.w))
      throw std::invalid_argument("curve fit points must be finite");
    t_min = std::min(t_min, p.t);
    t_max = std::max(t_max, p.t);
  }
  if (!(t_min < t_max))
    throw std::invalid_argument("curve fit needs at least 2 distinct times");
}

}  // namespace detail

inline RegressionCurve fit_curve(const std::vector<std::pair<double, double>>& points) {
  std::vector<detail::FitPoint> pts;
  pts.reserve(points.size());
  for (const auto& [t, y] : points) pts.push_back({t, y, 1.0});
  detail::validate_times(pts);
  return detail::fit_points(std::move(pts), false);
}

// Weighted fit minimizing sum((y - zeta(t)) * w)^2 with the weight inside the
// square; conventional = true uses the usual sum(w * (y - zeta(t))^2) instead.
inline RegressionCurve fit_curve_weighted(
    const std::vector<std::array<double, 3>>& points, bool conventional = false) {
  std::vector<detail::FitPoint> pts;
  pts.reserve(points.size());
  for (const auto& p : points) {
    if (!(p[2] > 0.0)) throw std::invalid_argument("curve fit weights must be positive");
    pts.push_back({p[0], p[1], conventional ? std::sqrt(p[2]) : p[2]});
  }
  detail::validate_times(pts);
  return detail::fit_points(std::move(pts), true);
}

// Constant-over-time curve through the mean of per-time values; used for the
// primary class, whose margins show no trend.
inline RegressionCurve constant_curve(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("constant curve needs values");
  double mean = 0.0;
  for (const double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("constant curve values must be finite");
    mean += v;
  }
  mean /= static_cast<double>(values.size());
  RegressionCurve curve;
  curve.c1 = mean;
  for (const double v : values) curve.sse += (v - mean) * (v - mean);
  return curve;
}

// Area-weighted class fractions per time step; objects are (label, area) pairs.
struct ClassFractions {
  double primary = 0.0;
  double chain = 0.0;
  double raspberry = 0.0;
};

inline ClassFractions class_fractions_step(
    const std::vector<std::pair<int, double>>& objects) {
  if (objects.empty())
    throw std::invalid_argument("class fractions need at least one object");
  std::array<double, 3> area{0.0, 0.0, 0.0};
  double total = 0.0;
  for (const auto& [label, a] : objects) {
    if (label < 0 || label > 2) throw std::invalid_argument("class label must be 0, 1, or 2");
    if (!(a > 0.0) || !std::isfinite(a))
      throw std::invalid_argument("object areas must be positive and finite");
    area[static_cast<std::size_t>(label)] += a;
    total += a;
  }
  return {area[0] / total, area[1] / total, area[2] / total};
}

inline std::vector<ClassFractions> class_fractions(
    const std::vector<std::vector<std::pair<int, double>>>& per_time) {
  std::vector<ClassFractions> out;
  out.reserve(per_time.size());
  for (const auto& step : per_time) out.push_back(class_fractions_step(step));
  return out;
}

// Modeled chain fraction 1 - g1(t) - g2(t), unclamped; the flag warns when the
// complement leaves [0,1].
inline std::pair<double, bool> chain_complement(const RegressionCurve& primary,
                                                const RegressionCurve& raspberry,
                                                double t) {
  const double value = 1.0 - curve_value(primary, t) - curve_value(raspberry, t);
  return {value, value < 0.0 || value > 1.0};
}

// Margin parameter trajectories for one descriptor.
struct MarginCurves {
  margins::Family family = margins::Family::normal;
  margins::Interval support{0.0, std::numeric_limits<double>::infinity()};
  RegressionCurve p0;
  RegressionCurve p1;
};

// Full temporal model of one particle class.
struct ClassModel {
  MarginCurves margin_d;
  MarginCurves margin_s;
  bool independent = false;  // primary class: copula factor suppressed
  copula::Family copula_family = copula::Family::frank;
  copula::Rotation copula_rotation = copula::Rotation::deg0;
  RegressionCurve theta;
};

struct TimeSeriesModel {
  std::array<ClassModel, 3> classes;  // primary, chain, raspberry
  RegressionCurve primary_fraction;    // g1
  RegressionCurve raspberry_fraction;  // g2; the chain fraction is the complement
  double t_min = 10.0;
  double t_max = 120.0;
};

// The three modeled fractions; the chain entry is nudged by at most a few ulp
// so the returned triple sums to exactly one.
inline std::array<double, 3> fractions_at_time(const TimeSeriesModel& model, double t) {
  const double g1 = curve_value(model.primary_fraction, t);
  const double g2 = curve_value(model.raspberry_fraction, t);
  double chain = 1.0 - g1 - g2;
  for (int i = 0; i < 4; ++i) {
    const double sum = g1 + chain + g2;
    if (sum == 1.0) break;
    chain -= sum - 1.0;
  }
  return {g1, chain, g2};
}

struct ModelAtTime {
  copula::BivariateModel model;
  bool extrapolated = false;
  bool theta_clamped = false;
};

inline ModelAtTime model_at_time(const ClassModel& cls, double t, double t_min = 10.0,
                                 double t_max = 120.0) {
  if (!std::isfinite(t)) throw std::invalid_argument("evaluation time must be finite");
  ModelAtTime out;
  out.extrapolated = t < t_min || t > t_max;

  const auto build_margin = [&](const MarginCurves& curves) {
    margins::MarginFit fit;
    fit.family = curves.family;
    fit.params = {curve_value(curves.p0, t), curve_value(curves.p1, t)};
    fit.support = curves.support;
    if (!margins::params_valid(curves.family, fit.params))
      throw std::runtime_error(
          std::string("parameter curves produced an invalid ") +
          margins::family_name(curves.family) + " margin at t = " + std::to_string(t));
    return fit;
  };
  out.model.margin_d = build_margin(cls.margin_d);
  out.model.margin_s = build_margin(cls.margin_s);

  if (!cls.independent) {
    const auto [theta, moved] =
        copula::clamp_theta(cls.copula_family, curve_value(cls.theta, t));
    out.theta_clamped = moved;
    copula::CopulaFit fit;
    fit.family = cls.copula_family;
    fit.rotation = cls.copula_rotation;
    fit.theta = theta;
    copula::require_theta(fit.family, fit.theta);
    out.model.copula = fit;
  }
  return out;
}

// Per-class observations over time, ready for trajectory fitting.
struct ClassTimeSeries {
  std::vector<double> times;
  std::vector<std::vector<double>> d;  // per-time diameter samples
  std::vector<std::vector<double>> s;  // per-time solidity samples
};

// Fits the complete temporal model of one class: margin family selection, then
// a weighted regression of every distribution parameter over time (weights are
// the per-time sample counts), then copula selection and a theta trajectory.
// The primary class gets constant margins and no copula.
inline ClassModel fit_class_model(const ClassTimeSeries& data, bool primary,
                                  const margins::Interval& d_support = margins::diameter_support(),
                                  const margins::Interval& s_support = margins::solidity_support()) {
  const std::size_t steps = data.times.size();
  if (steps == 0) throw std::invalid_argument("class model needs at least one time step");
  if (data.d.size() != steps || data.s.size() != steps)
    throw std::invalid_argument("descriptor series must match the time grid");
  for (std::size_t i = 0; i < steps; ++i)
    if (data.d[i].size() != data.s[i].size())
      throw std::invalid_argument("diameter and solidity counts must match per time step");

  const auto d_sel = margins::select_family(data.d, d_support);
  const auto s_sel = margins::select_family(data.s, s_support);

  ClassModel out;
  out.margin_d.family = d_sel.family;
  out.margin_d.support = d_support;
  out.margin_s.family = s_sel.family;
  out.margin_s.support = s_support;
  out.independent = primary;

  const auto param_curve = [&](const std::vector<margins::MarginFit>& fits, int index) {
    if (primary) {
      std::vector<double> values;
      values.reserve(steps);
      for (const auto& fit : fits) values.push_back(fit.params[static_cast<std::size_t>(index)]);
      return constant_curve(values);
    }
    std::vector<std::array<double, 3>> points;
    points.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i)
      points.push_back({data.times[i], fits[i].params[static_cast<std::size_t>(index)],
                        static_cast<double>(data.d[i].size())});
    return fit_curve_weighted(points);
  };
  out.margin_d.p0 = param_curve(d_sel.fits, 0);
  out.margin_d.p1 = param_curve(d_sel.fits, 1);
  out.margin_s.p0 = param_curve(s_sel.fits, 0);
  out.margin_s.p1 = param_curve(s_sel.fits, 1);

  if (!primary) {
    std::vector<std::vector<std::pair<double, double>>> pseudo(steps);
    for (std::size_t i = 0; i < steps; ++i) {
      pseudo[i].reserve(data.d[i].size());
      for (std::size_t k = 0; k < data.d[i].size(); ++k)
        pseudo[i].emplace_back(margins::cdf(d_sel.fits[i], data.d[i][k]),
                               margins::cdf(s_sel.fits[i], data.s[i][k]));
    }
    const auto selection = copula::select_copula(pseudo);
    out.copula_family = selection.family;
    out.copula_rotation = selection.rotation;
    std::vector<std::array<double, 3>> theta_points;
    theta_points.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i)
      theta_points.push_back({data.times[i], selection.fits[i].theta,
                              static_cast<double>(data.d[i].size())});
    out.theta = fit_curve_weighted(theta_points);
  }
  return out;
}

inline nlohmann::json curve_to_json(const RegressionCurve& curve) {
  return nlohmann::json{{"c1", curve.c1},
                        {"c2", curve.c2},
                        {"c3", curve.c3},
                        {"weighted", curve.weighted},
                        {"sse", curve.sse}};
}

inline RegressionCurve curve_from_json(const nlohmann::json& j) {
  RegressionCurve curve;
  try {
    curve.c1 = j.at("c1").get<double>();
    curve.c2 = j.at("c2").get<double>();
    curve.c3 = j.at("c3").get<double>();
    curve.weighted = j.at("weighted").get<bool>();
    curve.sse = j.at("sse").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("invalid regression curve json: ") + e.what());
  }
  if (curve.c3 < 0.0)
    throw std::runtime_error("invalid regression curve json: c3 must be nonnegative");
  return curve;
}

inline nlohmann::json class_model_to_json(const ClassModel& model) {
  const auto margin = [](const MarginCurves& curves) {
    return nlohmann::json{{"family", margins::family_name(curves.family)},
                          {"support", margins::interval_to_json(curves.support)},
                          {"p0", curve_to_json(curves.p0)},
                          {"p1", curve_to_json(curves.p1)}};
  };
  nlohmann::json j{{"margin_d", margin(model.margin_d)},
                   {"margin_s", margin(model.margin_s)},
                   {"independent", model.independent}};
  if (model.independent) {
    j["copula"] = nlohmann::json();
  } else {
    j["copula"] = nlohmann::json{{"family", copula::family_name(model.copula_family)},
                                 {"rotation", copula::rotation_degrees(model.copula_rotation)},
                                 {"theta", curve_to_json(model.theta)}};
  }
  return j;
}

inline ClassModel class_model_from_json(const nlohmann::json& j) {
  ClassModel model;
  try {
    const auto margin = [](const nlohmann::json& m) {
      MarginCurves curves;
      curves.family = margins::family_from_name(m.at("family").get<std::string>());
      curves.support.lo = margins::interval_bound_from_json(m.at("support").at("lo"));
      curves.support.hi = margins::interval_bound_from_json(m.at("support").at("hi"));
      curves.p0 = curve_from_json(m.at("p0"));
      curves.p1 = curve_from_json(m.at("p1"));
      return curves;
    };
    model.margin_d = margin(j.at("margin_d"));
    model.margin_s = margin(j.at("margin_s"));
    model.independent = j.at("independent").get<bool>();
    if (!model.independent) {
      const auto& c = j.at("copula");
      model.copula_family = copula::family_from_name(c.at("family").get<std::string>());
      model.copula_rotation = copula::rotation_from_degrees(c.at("rotation").get<int>());
      model.theta = curve_from_json(c.at("theta"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("invalid class model json: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("invalid class model json: ") + e.what());
  }
  return model;
}

inline nlohmann::json time_series_to_json(const TimeSeriesModel& model) {
  return nlohmann::json{{"schema_version", 1},
                        {"t_min", model.t_min},
                        {"t_max", model.t_max},
                        {"primary_fraction", curve_to_json(model.primary_fraction)},
                        {"raspberry_fraction", curve_to_json(model.raspberry_fraction)},
                        {"classes",
                         {class_model_to_json(model.classes[0]),
                          class_model_to_json(model.classes[1]),
                          class_model_to_json(model.classes[2])}}};
}

inline TimeSeriesModel time_series_from_json(const nlohmann::json& j) {
  TimeSeriesModel model;
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw std::runtime_error("unsupported time series model schema version");
    model.t_min = j.at("t_min").get<double>();
    model.t_max = j.at("t_max").get<double>();
    model.primary_fraction = curve_from_json(j.at("primary_fraction"));
    model.raspberry_fraction = curve_from_json(j.at("raspberry_fraction"));
    const auto& classes = j.at("classes");
    if (!classes.is_array() || classes.size() != 3)
      throw std::runtime_error("time series model json needs exactly 3 classes");
    for (std::size_t i = 0; i < 3; ++i)
      model.classes[i] = class_model_from_json(classes[i]);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("invalid time series model json: ") + e.what());
  }
  return model;
}

}  // namespace agglo::temporal
