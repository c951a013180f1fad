// Tests for truncated marginal distributions: densities, quantiles, MLE fitting,
// family selection, and JSON round trips.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "agglo/margins.hpp"
#include "agglo/quadrature.hpp"
#include "agglo/rng.hpp"
#include "catch2/catch_amalgamated.hpp"

using agglo::Rng;
namespace mg = agglo::margins;

namespace {

mg::MarginFit make_fit(mg::Family family, std::array<double, 2> params, mg::Interval support) {
  mg::MarginFit fit;
  fit.family = family;
  fit.params = params;
  fit.support = support;
  fit.log_likelihood = 0.0;
  fit.n = 0;
  return fit;
}

double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846 * 1.0); }

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::vector<double> draw_samples(const mg::MarginFit& fit, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(mg::sample(fit, rng));
  return out;
}

}  // namespace

TEST_CASE("wide-support normal density matches the closed form", "[margins]") {
  const auto fit = make_fit(mg::Family::normal, {215.3, 29.01}, mg::diameter_support());
  const double peak = 1.0 / (29.01 * std::sqrt(2.0 * 3.14159265358979323846));
  // Truncation at zero removes ~1e-13 of the mass, invisible at this tolerance.
  REQUIRE(mg::pdf(fit, 215.3) == Catch::Approx(peak).epsilon(1e-10));
  REQUIRE(mg::cdf(fit, 215.3) == Catch::Approx(0.5).margin(1e-10));
  REQUIRE(mg::pdf(fit, -1.0) == 0.0);
  REQUIRE(mg::cdf(fit, -1.0) == 0.0);
  REQUIRE(mg::cdf(fit, 1e9) == 1.0);
}

TEST_CASE("truncated solidity margin integrates to one and matches moment formulas",
          "[margins]") {
  const auto fit = make_fit(mg::Family::normal, {0.96, 0.01}, mg::solidity_support());
  const double mass = agglo::quadrature::integrate(
      [&](double x) { return mg::pdf(fit, x); }, 0.0, 1.0, agglo::quadrature::cached_rule(128));
  REQUIRE(mass == Catch::Approx(1.0).margin(1e-6));

  // Closed-form truncated-normal mean on (a, b).
  const double mu = 0.96, sigma = 0.01;
  const double a = (0.0 - mu) / sigma, b = (1.0 - mu) / sigma;
  const double z = norm_cdf(b) - norm_cdf(a);
  const double expect = mu + sigma * (norm_pdf(a) - norm_pdf(b)) / z;
  REQUIRE(mg::mean(fit) == Catch::Approx(expect).margin(1e-9));
  REQUIRE(mg::pdf(fit, 1.0000001) == 0.0);
  REQUIRE(mg::pdf(fit, -0.0000001) == 0.0);
}

TEST_CASE("quantile inverts the truncated cdf", "[margins]") {
  const std::vector<mg::MarginFit> fits = {
      make_fit(mg::Family::normal, {0.96, 0.01}, mg::solidity_support()),
      make_fit(mg::Family::normal, {-1.0, 2.0}, mg::diameter_support()),  // heavy truncation
      make_fit(mg::Family::lognormal, {468.71, 0.2}, mg::diameter_support()),
      make_fit(mg::Family::gamma, {33.53, 8.45}, mg::diameter_support()),
  };
  for (const auto& fit : fits) {
    for (const double u : {0.01, 0.25, 0.5, 0.75, 0.99}) {
      const double x = mg::quantile(fit, u);
      REQUIRE(x >= fit.support.lo);
      REQUIRE(x <= fit.support.hi);
      REQUIRE(mg::cdf(fit, x) == Catch::Approx(u).margin(1e-8));
    }
  }
  REQUIRE_THROWS_AS(mg::quantile(fits[0], 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(mg::quantile(fits[0], 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(mg::quantile(fits[0], -0.5), std::invalid_argument);
}

TEST_CASE("sampler draws stay inside the support and match the cdf", "[margins]") {
  const auto fit = make_fit(mg::Family::normal, {0.91, 0.05}, mg::solidity_support());
  const auto xs = draw_samples(fit, 4000, 77);
  std::size_t below_median = 0;
  for (const double x : xs) {
    REQUIRE(x > 0.0);
    REQUIRE(x <= 1.0);
    if (x <= mg::quantile(fit, 0.5)) ++below_median;
  }
  const double frac = static_cast<double>(below_median) / static_cast<double>(xs.size());
  REQUIRE(frac == Catch::Approx(0.5).margin(0.03));
}

TEST_CASE("normal mle recovers wide-support generator parameters", "[margins]") {
  const auto truth = make_fit(mg::Family::normal, {215.3, 29.01}, mg::diameter_support());
  const auto xs = draw_samples(truth, 5000, 11);
  const auto fit = mg::fit_mle(xs, mg::Family::normal, mg::diameter_support());
  REQUIRE(fit.params[0] == Catch::Approx(215.3).epsilon(0.05));
  REQUIRE(fit.params[1] == Catch::Approx(29.01).epsilon(0.05));
  REQUIRE(fit.n == 5000);

  // Likelihood at the fitted parameters cannot be below the truth's likelihood.
  const auto at_truth = [&] {
    double total = 0.0;
    for (const double x : xs) total += std::log(mg::pdf(truth, x));
    return total;
  }();
  REQUIRE(fit.log_likelihood >= at_truth - 1e-6);
}

TEST_CASE("heavily truncated normal mle sees past the truncation bias", "[margins]") {
  // Generator mean 1.0 sits on the upper support edge, so naive moments are badly
  // biased; the truncated likelihood still identifies the underlying parameters.
  const auto truth = make_fit(mg::Family::normal, {1.0, 0.1}, mg::solidity_support());
  const auto xs = draw_samples(truth, 8000, 23);
  double raw_mean = 0.0;
  for (const double x : xs) raw_mean += x;
  raw_mean /= static_cast<double>(xs.size());
  REQUIRE(raw_mean < 0.97);  // the bias the fitter must undo

  const auto fit = mg::fit_mle(xs, mg::Family::normal, mg::solidity_support());
  REQUIRE(fit.params[0] == Catch::Approx(1.0).epsilon(0.05));
  REQUIRE(fit.params[1] == Catch::Approx(0.1).epsilon(0.10));
}

TEST_CASE("lognormal mle recovers scale and shape", "[margins]") {
  const auto truth =
      make_fit(mg::Family::lognormal, {468.71, 0.2}, mg::diameter_support());
  const auto xs = draw_samples(truth, 5000, 31);
  const auto fit = mg::fit_mle(xs, mg::Family::lognormal, mg::diameter_support());
  REQUIRE(fit.params[0] == Catch::Approx(468.71).epsilon(0.05));
  REQUIRE(fit.params[1] == Catch::Approx(0.2).epsilon(0.05));
}

TEST_CASE("gamma mle recovers shape and scale", "[margins]") {
  const auto exp_truth = make_fit(mg::Family::gamma, {1.0, 3.0}, mg::diameter_support());
  const auto exp_xs = draw_samples(exp_truth, 5000, 41);
  const auto exp_fit = mg::fit_mle(exp_xs, mg::Family::gamma, mg::diameter_support());
  REQUIRE(exp_fit.params[0] == Catch::Approx(1.0).epsilon(0.10));
  REQUIRE(exp_fit.params[1] == Catch::Approx(3.0).epsilon(0.10));

  const auto truth = make_fit(mg::Family::gamma, {33.53, 8.45}, mg::diameter_support());
  const auto xs = draw_samples(truth, 10000, 43);
  const auto fit = mg::fit_mle(xs, mg::Family::gamma, mg::diameter_support());
  REQUIRE(fit.params[0] == Catch::Approx(33.53).epsilon(0.05));
  REQUIRE(fit.params[1] == Catch::Approx(8.45).epsilon(0.05));
}

TEST_CASE("mle is deterministic and validates its inputs", "[margins]") {
  const auto truth = make_fit(mg::Family::normal, {0.9, 0.05}, mg::solidity_support());
  const auto xs = draw_samples(truth, 500, 53);
  const auto a = mg::fit_mle(xs, mg::Family::normal, mg::solidity_support());
  const auto b = mg::fit_mle(xs, mg::Family::normal, mg::solidity_support());
  REQUIRE(a.params == b.params);
  REQUIRE(a.log_likelihood == b.log_likelihood);

  REQUIRE_THROWS_AS(mg::fit_mle({0.1, 0.2}, mg::Family::normal, mg::solidity_support()),
                    std::invalid_argument);  // too few samples
  REQUIRE_THROWS_AS(mg::fit_mle({0.1, 0.2, 1.5}, mg::Family::normal, mg::solidity_support()),
                    std::invalid_argument);  // outside support
  REQUIRE_THROWS_AS(
      mg::fit_mle({-1.0, 2.0, 3.0}, mg::Family::lognormal, mg::Interval{-5.0, 1e9}),
      std::invalid_argument);  // log family needs positive data
  REQUIRE_THROWS_AS(mg::fit_mle({0.5, 0.5, 0.5, 0.5}, mg::Family::normal,
                                mg::solidity_support()),
                    std::runtime_error);  // degenerate sample
  REQUIRE_THROWS_AS(mg::fit_mle({0.1, 0.2, 0.3}, mg::Family::normal, mg::Interval{1.0, 0.0}),
                    std::invalid_argument);  // inverted support
}

TEST_CASE("family selection picks the generating family per time step", "[margins]") {
  const std::size_t n = 1500;
  const auto run = [&](const mg::MarginFit& truth, mg::Family expect) {
    std::vector<std::vector<double>> steps;
    for (std::uint64_t t = 0; t < 3; ++t)
      steps.push_back(draw_samples(truth, n, 1000 + 17 * t));
    const auto sel = mg::select_family(steps, truth.support);
    REQUIRE(sel.family == expect);
    REQUIRE(sel.fits.size() == steps.size());
    for (const auto& fit : sel.fits) REQUIRE(fit.family == expect);
  };
  run(make_fit(mg::Family::normal, {215.3, 29.01}, mg::diameter_support()),
      mg::Family::normal);
  run(make_fit(mg::Family::lognormal, {30.0, 0.5}, mg::diameter_support()),
      mg::Family::lognormal);
  run(make_fit(mg::Family::gamma, {4.0, 8.0}, mg::diameter_support()), mg::Family::gamma);
}

TEST_CASE("family selection drops families that cannot fit the data", "[margins]") {
  // Negative observations rule out the log families, leaving only normal.
  const mg::Interval support{-1e6, 1e6};
  Rng rng(99);
  std::vector<std::vector<double>> steps(2);
  for (auto& step : steps)
    for (int i = 0; i < 400; ++i) step.push_back(rng.normal(-5.0, 2.0));
  const auto sel = mg::select_family(steps, support);
  REQUIRE(sel.family == mg::Family::normal);
  REQUIRE_FALSE(sel.family_ok[1]);
  REQUIRE_FALSE(sel.family_ok[2]);

  // A degenerate step defeats every family.
  std::vector<std::vector<double>> flat(1, std::vector<double>(10, 0.5));
  REQUIRE_THROWS_AS(mg::select_family(flat, mg::solidity_support()), std::runtime_error);
  REQUIRE_THROWS_AS(mg::select_family({}, mg::solidity_support()), std::invalid_argument);
  std::vector<std::vector<double>> has_empty(1);
  REQUIRE_THROWS_AS(mg::select_family(has_empty, mg::solidity_support()),
                    std::invalid_argument);
}

TEST_CASE("margin json round trip preserves fits exactly", "[margins]") {
  auto fit = make_fit(mg::Family::lognormal, {468.71, 0.2}, mg::diameter_support());
  fit.log_likelihood = -1234.5678901234;
  fit.n = 5000;
  const auto j = mg::margin_to_json(fit);
  REQUIRE(j.at("support").at("hi").get<std::string>() == "inf");
  const auto back = mg::margin_from_json(j);
  REQUIRE(back.family == fit.family);
  REQUIRE(back.params == fit.params);
  REQUIRE(back.support.lo == fit.support.lo);
  REQUIRE(std::isinf(back.support.hi));
  REQUIRE(back.log_likelihood == fit.log_likelihood);
  REQUIRE(back.n == fit.n);

  auto bad = j;
  bad["family"] = "cauchy";
  REQUIRE_THROWS_AS(mg::margin_from_json(bad), std::runtime_error);
  auto bad2 = j;
  bad2["params"] = std::vector<double>{1.0};
  REQUIRE_THROWS_AS(mg::margin_from_json(bad2), std::runtime_error);
}
