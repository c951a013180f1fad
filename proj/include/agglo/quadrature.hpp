#pragma once

// Gauss-Legendre quadrature: node/weight tables computed by Newton iteration
// on the Legendre recurrence, plus 1-D, composite, and tensor-product
// integration helpers.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace agglo::quadrature {

struct Rule {
  std::vector<double> nodes;    // on [-1, 1], ascending
  std::vector<double> weights;  // sum to 2
};

// P_n(x) and P_n'(x) via the three-term recurrence.
namespace detail {
inline std::pair<double, double> legendre(int n, double x) {
  double p0 = 1.0, p1 = x;
  for (int k = 2; k <= n; ++k) {
    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
    p0 = p1;
    p1 = p2;
  }
  const double dp = n * (x * p1 - p0) / (x * x - 1.0);
  return {p1, dp};
}
}  // namespace detail

inline Rule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
  Rule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  if (n == 1) {
    rule.nodes[0] = 0.0;
    rule.weights[0] = 2.0;
    return rule;
  }
  constexpr double pi = 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    double x = std::cos(pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      const auto [p, d] = detail::legendre(n, x);
      dp = d;
      const double dx = p / d;
      x -= dx;
      if (std::abs(dx) < 1e-15) {
        dp = detail::legendre(n, x).second;
        break;
      }
    }
    rule.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
    rule.weights[static_cast<std::size_t>(n - 1 - i)] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

// Shared tables for the sizes the library uses repeatedly.
inline const Rule& cached_rule(int n) {
  static const Rule r32 = gauss_legendre(32);
  static const Rule r64 = gauss_legendre(64);
  static const Rule r128 = gauss_legendre(128);
  switch (n) {
    case 32: return r32;
    case 64: return r64;
    case 128: return r128;
    default: throw std::invalid_argument("cached_rule: uncached size");
  }
}

template <class F>
double integrate(F&& f, double a, double b, const Rule& rule) {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double sum = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i)
    sum += rule.weights[i] * f(mid + half * rule.nodes[i]);
  return half * sum;
}

template <class F>
double integrate(F&& f, double a, double b, int n = 64) {
  return integrate(std::forward<F>(f), a, b, gauss_legendre(n));
}

// Equal-width panels; accuracy grows with either panel count or order.
template <class F>
double integrate_composite(F&& f, double a, double b, int panels, const Rule& rule) {
  if (panels < 1) throw std::invalid_argument("integrate_composite: need at least one panel");
  const double width = (b - a) / static_cast<double>(panels);
  double sum = 0.0;
  for (int p = 0; p < panels; ++p)
    sum += integrate(f, a + p * width, a + (p + 1) * width, rule);
  return sum;
}

template <class F>
double integrate2d(F&& f, double ax, double bx, double ay, double by, const Rule& rule) {
  const double half_x = 0.5 * (bx - ax);
  const double mid_x = 0.5 * (ax + bx);
  const double half_y = 0.5 * (by - ay);
  const double mid_y = 0.5 * (ay + by);
  double sum = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = mid_x + half_x * rule.nodes[i];
    double row = 0.0;
    for (std::size_t j = 0; j < rule.nodes.size(); ++j)
      row += rule.weights[j] * f(x, mid_y + half_y * rule.nodes[j]);
    sum += rule.weights[i] * row;
  }
  return half_x * half_y * sum;
}

}  // namespace agglo::quadrature
