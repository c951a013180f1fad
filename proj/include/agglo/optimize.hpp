#pragma once

// Deterministic small-scale optimizers: golden-section line search,
// Nelder-Mead simplex, and damped Gauss-Newton least squares with an
// optional projection onto the feasible set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace agglo::optimize {

// Minimizer of a unimodal function on [lo, hi] to within x_tol.
template <class F>
double golden_section(F&& f, double lo, double hi, double x_tol = 1e-10) {
  if (!(lo < hi)) throw std::invalid_argument("golden_section: empty interval");
  if (!(x_tol > 0.0)) throw std::invalid_argument("golden_section: nonpositive tolerance");
  constexpr double invphi = 0.6180339887498948482;
  double a = lo, b = hi;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = f(x1);
  double f2 = f(x2);
  while (b - a > x_tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
    }
    if (!(x1 < x2)) break;  // interval exhausted at double precision
  }
  return 0.5 * (a + b);
}

struct SimplexResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

struct SimplexOptions {
  int max_iterations = 4000;
  double f_tol = 1e-13;
  double x_tol = 1e-11;
};

// Standard Nelder-Mead (reflection 1, expansion 2, contraction 0.5,
// shrink 0.5). Ties in vertex ordering break by insertion index, so the
// search is fully deterministic.
template <class F>
SimplexResult nelder_mead(F&& f, const std::vector<double>& x0,
                          const std::vector<double>& steps, SimplexOptions opts = {}) {
  const std::size_t dim = x0.size();
  if (dim == 0) throw std::invalid_argument("nelder_mead: empty start point");
  if (steps.size() != dim) throw std::invalid_argument("nelder_mead: step size mismatch");

  std::vector<std::vector<double>> verts(dim + 1, x0);
  for (std::size_t i = 0; i < dim; ++i) {
    if (steps[i] == 0.0) throw std::invalid_argument("nelder_mead: zero initial step");
    verts[i + 1][i] += steps[i];
  }
  std::vector<double> fv(dim + 1);
  for (std::size_t i = 0; i <= dim; ++i) fv[i] = f(verts[i]);

  std::vector<std::size_t> order(dim + 1);
  SimplexResult out;
  for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[dim - 1];

    double diameter = 0.0;
    for (std::size_t i = 0; i <= dim; ++i)
      for (std::size_t k = 0; k < dim; ++k)
        diameter = std::max(diameter, std::abs(verts[i][k] - verts[best][k]));
    if (fv[worst] - fv[best] <= opts.f_tol * (1.0 + std::abs(fv[best])) ||
        diameter <= opts.x_tol) {
      out.converged = true;
      break;
    }

    std::vector<double> centroid(dim, 0.0);
    for (std::size_t i = 0; i <= dim; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < dim; ++k) centroid[k] += verts[i][k];
    }
    for (double& c : centroid) c /= static_cast<double>(dim);

    const auto blend = [&](double coef) {
      std::vector<double> p(dim);
      for (std::size_t k = 0; k < dim; ++k)
        p[k] = centroid[k] + coef * (verts[worst][k] - centroid[k]);
      return p;
    };

    std::vector<double> reflected = blend(-1.0);
    const double f_reflected = f(reflected);
    if (f_reflected < fv[best]) {
      std::vector<double> expanded = blend(-2.0);
      const double f_expanded = f(expanded);
      if (f_expanded < f_reflected) {
        verts[worst] = std::move(expanded);
        fv[worst] = f_expanded;
      } else {
        verts[worst] = std::move(reflected);
        fv[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < fv[second_worst]) {
      verts[worst] = std::move(reflected);
      fv[worst] = f_reflected;
      continue;
    }
    const bool outside = f_reflected < fv[worst];
    std::vector<double> contracted = blend(outside ? -0.5 : 0.5);
    const double f_contracted = f(contracted);
    if (f_contracted < std::min(f_reflected, fv[worst])) {
      verts[worst] = std::move(contracted);
      fv[worst] = f_contracted;
      continue;
    }
    for (std::size_t i = 0; i <= dim; ++i) {  // shrink toward the best vertex
      if (i == best) continue;
      for (std::size_t k = 0; k < dim; ++k)
        verts[i][k] = verts[best][k] + 0.5 * (verts[i][k] - verts[best][k]);
      fv[i] = f(verts[i]);
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i <= dim; ++i)
    if (fv[i] < fv[best]) best = i;
  out.x = verts[best];
  out.value = fv[best];
  return out;
}

namespace detail {

// In-place Gaussian elimination with partial pivoting; A is n x n row-major.
inline bool solve_dense(std::vector<double>& a, std::vector<double>& b, int n) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[static_cast<std::size_t>(r * n + col)]) >
          std::abs(a[static_cast<std::size_t>(pivot * n + col)]))
        pivot = r;
    if (a[static_cast<std::size_t>(pivot * n + col)] == 0.0) return false;
    if (pivot != col) {
      for (int c = col; c < n; ++c)
        std::swap(a[static_cast<std::size_t>(col * n + c)],
                  a[static_cast<std::size_t>(pivot * n + c)]);
      std::swap(b[static_cast<std::size_t>(col)], b[static_cast<std::size_t>(pivot)]);
    }
    const double d = a[static_cast<std::size_t>(col * n + col)];
    for (int r = col + 1; r < n; ++r) {
      const double m = a[static_cast<std::size_t>(r * n + col)] / d;
      if (m == 0.0) continue;
      for (int c = col; c < n; ++c)
        a[static_cast<std::size_t>(r * n + c)] -= m * a[static_cast<std::size_t>(col * n + c)];
      b[static_cast<std::size_t>(r)] -= m * b[static_cast<std::size_t>(col)];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = b[static_cast<std::size_t>(r)];
    for (int c = r + 1; c < n; ++c)
      s -= a[static_cast<std::size_t>(r * n + c)] * b[static_cast<std::size_t>(c)];
    b[static_cast<std::size_t>(r)] = s / a[static_cast<std::size_t>(r * n + r)];
  }
  return true;
}

}  // namespace detail

struct GaussNewtonResult {
  std::vector<double> x;
  double loss = std::numeric_limits<double>::infinity();  // sum of squared residuals
  int iterations = 0;
  bool converged = false;
};

struct GaussNewtonOptions {
  int max_iterations = 200;
  double loss_tol = 1e-14;  // relative decrease considered converged
  double step_tol = 1e-13;
};

// model(x, residuals, jacobian): fills residuals (m) and the m x dim Jacobian
// (row-major); project maps a trial point back into the feasible set. Steps
// are halved until the loss decreases (damping), with a tiny Tikhonov term
// guarding rank-deficient normal equations.
template <class Model, class Project>
GaussNewtonResult gauss_newton(Model&& model, std::vector<double> x0, Project&& project,
                               GaussNewtonOptions opts = {}) {
  const int dim = static_cast<int>(x0.size());
  if (dim == 0) throw std::invalid_argument("gauss_newton: empty start point");
  project(x0);

  std::vector<double> residuals, jacobian;
  const auto loss_of = [&](const std::vector<double>& x, std::vector<double>& r,
                           std::vector<double>& jac) {
    model(x, r, jac);
    double s = 0.0;
    for (const double v : r) s += v * v;
    return s;
  };

  GaussNewtonResult out;
  out.x = std::move(x0);
  out.loss = loss_of(out.x, residuals, jacobian);

  std::vector<double> normal(static_cast<std::size_t>(dim * dim));
  std::vector<double> rhs(static_cast<std::size_t>(dim));
  std::vector<double> trial_r, trial_j;
  for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
    const int m = static_cast<int>(residuals.size());
    std::fill(normal.begin(), normal.end(), 0.0);
    std::fill(rhs.begin(), rhs.end(), 0.0);
    for (int i = 0; i < m; ++i)
      for (int a = 0; a < dim; ++a) {
        const double ja = jacobian[static_cast<std::size_t>(i * dim + a)];
        rhs[static_cast<std::size_t>(a)] -= ja * residuals[static_cast<std::size_t>(i)];
        for (int b = a; b < dim; ++b)
          normal[static_cast<std::size_t>(a * dim + b)] +=
              ja * jacobian[static_cast<std::size_t>(i * dim + b)];
      }
    double trace = 0.0;
    for (int a = 0; a < dim; ++a) {
      trace += normal[static_cast<std::size_t>(a * dim + a)];
      for (int b = 0; b < a; ++b)
        normal[static_cast<std::size_t>(a * dim + b)] =
            normal[static_cast<std::size_t>(b * dim + a)];
    }
    const double ridge = 1e-12 * (trace > 0.0 ? trace : 1.0);
    for (int a = 0; a < dim; ++a) normal[static_cast<std::size_t>(a * dim + a)] += ridge;

    std::vector<double> step = rhs;
    std::vector<double> matrix = normal;
    if (!detail::solve_dense(matrix, step, dim)) break;

    double scale = 1.0;
    bool improved = false;
    for (int halvings = 0; halvings < 40; ++halvings, scale *= 0.5) {
      std::vector<double> trial = out.x;
      double step_norm = 0.0;
      for (int a = 0; a < dim; ++a) {
        trial[static_cast<std::size_t>(a)] += scale * step[static_cast<std::size_t>(a)];
        step_norm = std::max(step_norm, std::abs(scale * step[static_cast<std::size_t>(a)]));
      }
      project(trial);
      const double trial_loss = loss_of(trial, trial_r, trial_j);
      if (trial_loss < out.loss) {
        const double decrease = out.loss - trial_loss;
        out.x = std::move(trial);
        out.loss = trial_loss;
        residuals.swap(trial_r);
        jacobian.swap(trial_j);
        improved = true;
        if (decrease <= opts.loss_tol * (1.0 + out.loss) || step_norm <= opts.step_tol)
          out.converged = true;
        break;
      }
      if (step_norm <= opts.step_tol) break;
    }
    if (!improved) {
      out.converged = true;  // no descent direction left at double precision
      break;
    }
    if (out.converged) break;
  }
  return out;
}

template <class Model>
GaussNewtonResult gauss_newton(Model&& model, std::vector<double> x0,
                               GaussNewtonOptions opts = {}) {
  return gauss_newton(std::forward<Model>(model), std::move(x0),
                      [](std::vector<double>&) {}, opts);
}

}  // namespace agglo::optimize
