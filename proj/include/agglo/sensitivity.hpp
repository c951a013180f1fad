#pragma once

// Bootstrap sensitivity analysis of the bivariate fit: resample descriptor
// pairs, refit margins and copula parameter with families held fixed, and
// score the refit against the reference by margin-mean percentage error and
// the L1 distance between copula densities.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "agglo/copula.hpp"
#include "agglo/io.hpp"
#include "agglo/margins.hpp"
#include "agglo/quadrature.hpp"
#include "agglo/rng.hpp"

namespace agglo::sensitivity {

using Observations = std::vector<std::pair<double, double>>;

// Draws n_b points uniformly with replacement.
inline Observations bootstrap_sample(const Observations& data, int n_b, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("bootstrap_sample: empty data");
  if (n_b < 1) throw std::invalid_argument("bootstrap_sample: n_b must be positive");
  Observations out;
  out.reserve(static_cast<std::size_t>(n_b));
  const int hi = static_cast<int>(data.size()) - 1;
  for (int i = 0; i < n_b; ++i)
    out.push_back(data[static_cast<std::size_t>(rng.uniform_int(0, hi))]);
  return out;
}

// Absolute percentage errors of the two margin means. Means are those of the
// truncated fitted densities, so support clipping is accounted for.
inline std::pair<double, double> ape_margins(const copula::BivariateModel& reference,
                                             const copula::BivariateModel& refit) {
  const auto one = [](const margins::MarginFit& ref, const margins::MarginFit& fit) {
    const double m_ref = margins::mean(ref);
    if (!(m_ref > 0.0))
      throw std::invalid_argument("ape_margins: reference mean must be positive");
    return std::abs(margins::mean(fit) - m_ref) / m_ref;
  };
  return {one(reference.margin_d, refit.margin_d),
          one(reference.margin_s, refit.margin_s)};
}

namespace detail {

constexpr int kL1Nodes = 128;
constexpr double kL1Inset = 1e-6;

struct L1Grid {
  std::vector<double> points;   // mapped nodes on [inset, 1-inset]
  std::vector<double> weights;  // mapped 1-D weights
};

inline const L1Grid& l1_grid() {
  static const L1Grid grid = [] {
    const auto& rule = quadrature::cached_rule(kL1Nodes);
    const double lo = kL1Inset, hi = 1.0 - kL1Inset;
    const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    L1Grid g;
    for (int i = 0; i < kL1Nodes; ++i) {
      g.points.push_back(mid + half * rule.nodes[static_cast<std::size_t>(i)]);
      g.weights.push_back(half * rule.weights[static_cast<std::size_t>(i)]);
    }
    return g;
  }();
  return grid;
}

// Row-major density values over the tensor grid.
inline std::vector<double> density_grid(const copula::CopulaFit& fit) {
  const auto& g = l1_grid();
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(kL1Nodes) * kL1Nodes);
  for (int i = 0; i < kL1Nodes; ++i)
    for (int j = 0; j < kL1Nodes; ++j)
      vals.push_back(copula::copula_density(fit, g.points[static_cast<std::size_t>(i)],
                                            g.points[static_cast<std::size_t>(j)]));
  return vals;
}

}  // namespace detail

// L1 distance between two copula densities over the unit square, by tensor
// Gauss-Legendre quadrature slightly inset from the boundary.
inline double copula_l1(const copula::CopulaFit& reference,
                        const copula::CopulaFit& refit) {
  const auto& g = detail::l1_grid();
  double total = 0.0;
  for (int i = 0; i < detail::kL1Nodes; ++i) {
    const double u = g.points[static_cast<std::size_t>(i)];
    const double wu = g.weights[static_cast<std::size_t>(i)];
    double row = 0.0;
    for (int j = 0; j < detail::kL1Nodes; ++j) {
      const double v = g.points[static_cast<std::size_t>(j)];
      row += g.weights[static_cast<std::size_t>(j)] *
             std::abs(copula::copula_density(reference, u, v) -
                      copula::copula_density(refit, u, v));
    }
    total += wu * row;
  }
  return total;
}

struct ScoreRow {
  int class_label = 0;
  int n_b = 0;
  double ape_d_mean = 0.0, ape_d_std = 0.0;
  double ape_s_mean = 0.0, ape_s_std = 0.0;
  double l1_mean = 0.0, l1_std = 0.0;
  bool has_l1 = false;     // primary particles skip the copula comparison
  int replicates = 0;      // successfully refit replicates
  int n_dropped = 0;
  bool flagged = false;    // more than 5% of replicates dropped
};

struct ClassReference {
  copula::BivariateModel model;
  int data_size = 0;
};

struct SensitivityReport {
  std::vector<ScoreRow> rows;
  std::array<std::optional<ClassReference>, 3> references;
  std::vector<int> grid;
  int replicates = 0;
  std::uint64_t seed = 0;
};

inline std::vector<int> default_grid() {
  std::vector<int> grid;
  for (int n = 5; n <= 140; n += 15) grid.push_back(n);
  return grid;
}

namespace detail {

// Reference fit with full family selection; the copula is searched only for
// the dependent classes.
inline copula::BivariateModel fit_reference(const Observations& data, bool independent) {
  std::vector<double> d, s;
  d.reserve(data.size());
  s.reserve(data.size());
  for (const auto& [x, y] : data) {
    d.push_back(x);
    s.push_back(y);
  }
  copula::BivariateModel model;
  model.margin_d = margins::select_family({d}, margins::diameter_support()).fits.front();
  model.margin_s = margins::select_family({s}, margins::solidity_support()).fits.front();
  if (!independent) {
    std::vector<std::pair<double, double>> pseudo;
    pseudo.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      pseudo.emplace_back(margins::cdf(model.margin_d, d[i]),
                          margins::cdf(model.margin_s, s[i]));
    const auto selection = copula::select_copula({pseudo});
    model.copula = selection.fits.front();
  }
  return model;
}

// Refit on a bootstrap sample with every family pinned to the reference.
inline copula::BivariateModel refit_fixed(const Observations& sample,
                                          const copula::BivariateModel& reference) {
  std::vector<double> d, s;
  d.reserve(sample.size());
  s.reserve(sample.size());
  for (const auto& [x, y] : sample) {
    d.push_back(x);
    s.push_back(y);
  }
  copula::BivariateModel model;
  model.margin_d =
      margins::fit_mle(d, reference.margin_d.family, reference.margin_d.support);
  model.margin_s =
      margins::fit_mle(s, reference.margin_s.family, reference.margin_s.support);
  if (reference.copula.has_value()) {
    std::vector<std::pair<double, double>> pseudo;
    pseudo.reserve(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i)
      pseudo.emplace_back(margins::cdf(model.margin_d, d[i]),
                          margins::cdf(model.margin_s, s[i]));
    model.copula = copula::fit_theta(reference.copula->family,
                                     reference.copula->rotation, pseudo);
  }
  return model;
}

struct ReplicateScore {
  double ape_d = 0.0, ape_s = 0.0, l1 = 0.0;
  bool ok = false;
};

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (const double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (const double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace detail

// Sweeps bootstrap sizes for every nonempty class. Each replicate draws a
// bootstrap sample, refits with the reference families, and is scored against
// the reference model; replicates whose refit fails are dropped and counted.
// Replicates use independently derived seeds, so any thread partition yields
// the same aggregate as a serial run.
inline SensitivityReport sensitivity_sweep(const std::array<Observations, 3>& per_class,
                                           const std::vector<int>& grid,
                                           int replicates, std::uint64_t seed,
                                           int threads = 1) {
  if (grid.empty()) throw std::invalid_argument("sensitivity_sweep: empty grid");
  if (replicates < 1)
    throw std::invalid_argument("sensitivity_sweep: replicates must be positive");
  if (threads < 1)
    throw std::invalid_argument("sensitivity_sweep: threads must be positive");
  for (const int n : grid)
    if (n < 1) throw std::invalid_argument("sensitivity_sweep: grid sizes must be positive");
  const int max_nb = *std::max_element(grid.begin(), grid.end());
  bool any = false;
  for (std::size_t label = 0; label < 3; ++label) {
    if (per_class[label].empty()) continue;
    any = true;
    if (static_cast<int>(per_class[label].size()) < max_nb)
      throw std::invalid_argument(
          "sensitivity_sweep: class " + std::to_string(label) + " has " +
          std::to_string(per_class[label].size()) + " points, grid needs " +
          std::to_string(max_nb));
  }
  if (!any) throw std::invalid_argument("sensitivity_sweep: all classes empty");

  SensitivityReport report;
  report.grid = grid;
  report.replicates = replicates;
  report.seed = seed;

  for (std::size_t label = 0; label < 3; ++label) {
    const auto& data = per_class[label];
    if (data.empty()) continue;
    const bool independent = label == 0;
    ClassReference ref;
    ref.model = detail::fit_reference(data, independent);
    ref.data_size = static_cast<int>(data.size());
    const std::vector<double> ref_grid =
        independent ? std::vector<double>{} : detail::density_grid(*ref.model.copula);
    const std::uint64_t class_seed = derive_seed(seed, "sensitivity", label);

    for (const int n_b : grid) {
      const std::uint64_t nb_seed =
          derive_seed(class_seed, "nb", static_cast<std::uint64_t>(n_b));
      std::vector<detail::ReplicateScore> scores(
          static_cast<std::size_t>(replicates));

      const auto run_range = [&](int begin, int end) {
        for (int r = begin; r < end; ++r) {
          Rng rng(derive_seed(nb_seed, "rep", static_cast<std::uint64_t>(r)));
          const auto sample = bootstrap_sample(data, n_b, rng);
          detail::ReplicateScore score;
          try {
            const auto refit = detail::refit_fixed(sample, ref.model);
            const auto [ape_d, ape_s] = ape_margins(ref.model, refit);
            score.ape_d = ape_d;
            score.ape_s = ape_s;
            if (!independent) {
              const auto& g = detail::l1_grid();
              double total = 0.0;
              std::size_t k = 0;
              for (int i = 0; i < detail::kL1Nodes; ++i) {
                double row = 0.0;
                const double u = g.points[static_cast<std::size_t>(i)];
                for (int j = 0; j < detail::kL1Nodes; ++j, ++k)
                  row += g.weights[static_cast<std::size_t>(j)] *
                         std::abs(copula::copula_density(
                                      *refit.copula, u,
                                      g.points[static_cast<std::size_t>(j)]) -
                                  ref_grid[k]);
                total += g.weights[static_cast<std::size_t>(i)] * row;
              }
              score.l1 = total;
            }
            score.ok = std::isfinite(score.ape_d) && std::isfinite(score.ape_s) &&
                       std::isfinite(score.l1);
          } catch (const std::exception&) {
            score.ok = false;
          }
          scores[static_cast<std::size_t>(r)] = score;
        }
      };

      if (threads == 1 || replicates < 2 * threads) {
        run_range(0, replicates);
      } else {
        std::vector<std::thread> pool;
        const int chunk = (replicates + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
          const int begin = t * chunk;
          const int end = std::min(replicates, begin + chunk);
          if (begin >= end) break;
          pool.emplace_back(run_range, begin, end);
        }
        for (auto& th : pool) th.join();
      }

      std::vector<double> ape_d, ape_s, l1;
      int dropped = 0;
      for (const auto& score : scores) {
        if (!score.ok) {
          ++dropped;
          continue;
        }
        ape_d.push_back(score.ape_d);
        ape_s.push_back(score.ape_s);
        if (!independent) l1.push_back(score.l1);
      }
      if (ape_d.empty())
        throw std::runtime_error("sensitivity_sweep: every replicate failed for class " +
                                 std::to_string(label) + " at n_b=" +
                                 std::to_string(n_b));

      ScoreRow row;
      row.class_label = static_cast<int>(label);
      row.n_b = n_b;
      std::tie(row.ape_d_mean, row.ape_d_std) = detail::mean_std(ape_d);
      std::tie(row.ape_s_mean, row.ape_s_std) = detail::mean_std(ape_s);
      if (!independent) {
        std::tie(row.l1_mean, row.l1_std) = detail::mean_std(l1);
        row.has_l1 = true;
      }
      row.replicates = static_cast<int>(ape_d.size());
      row.n_dropped = dropped;
      row.flagged = dropped > replicates / 20;
      report.rows.push_back(row);
    }
    report.references[label] = std::move(ref);
  }
  return report;
}

// One line per (class, n_b, metric); primary rows carry no l1 metric.
inline std::string report_to_csv(const SensitivityReport& report) {
  std::string out = "# sensitivity-report v1\n";
  out += "class,n_b,metric,mean,std,n_dropped\n";
  for (const auto& row : report.rows) {
    const auto line = [&](const char* metric, double mean, double sd) {
      out += std::to_string(row.class_label);
      out += ',';
      out += std::to_string(row.n_b);
      out += ',';
      out += metric;
      out += ',';
      out += io::format_double(mean);
      out += ',';
      out += io::format_double(sd);
      out += ',';
      out += std::to_string(row.n_dropped);
      out += '\n';
    };
    line("ape_d", row.ape_d_mean, row.ape_d_std);
    line("ape_s", row.ape_s_mean, row.ape_s_std);
    if (row.has_l1) line("l1", row.l1_mean, row.l1_std);
  }
  return out;
}

}  // namespace agglo::sensitivity
