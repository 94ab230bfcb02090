#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ngmm/common.hpp"

namespace ngmm {

inline double normal_cdf(double x, double mu, double sigma) {
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0)));
}

/// Ascending, strictly positive PSA grid (g). Default: 40 log-spaced
/// points over [1e-3, 3] g.
struct IntensityGrid {
  std::vector<double> x;

  static IntensityGrid log_spaced(double lo = 1e-3, double hi = 3.0,
                                  int n = 40) {
    require(lo > 0 && hi > lo && n >= 2, "IntensityGrid: bad range");
    IntensityGrid g;
    g.x.resize(static_cast<std::size_t>(n));
    double la = std::log(lo), lb = std::log(hi);
    for (int i = 0; i < n; ++i)
      g.x[static_cast<std::size_t>(i)] =
          std::exp(la + (lb - la) * i / (n - 1.0));
    return g;
  }
};

struct HazardCurve {
  IntensityGrid grid;
  std::vector<double> rate;  // annual exceedance rate per grid point
  std::string estimator;
  std::vector<std::vector<double>> realizations;  // optional bundle

  void check_monotone() const {
    for (std::size_t i = 1; i < rate.size(); ++i)
      require(rate[i] <= rate[i - 1] + 1e-15 && rate[i] >= 0.0,
              "hazard curve must be non-increasing and non-negative");
  }
};

/// One scenario's contribution parameters at a site: its rate and the
/// ln-PSA mean/sigma of the ground-motion distribution.
struct ScenarioHazardInput {
  double annual_rate = 0.0;
  double mu_ln = 0.0;       // mean of ln(PSA)
  double sigma_ln = 0.0;    // aleatory stddev of ln(PSA)
  double epi_var = 0.0;     // epistemic variance of mu_ln (NGMM only)
};

/// Ergodic closed form: sum over scenarios of rate * P(lnPSA > ln x).
inline HazardCurve gmm_curve(const std::vector<ScenarioHazardInput>& scen,
                             const IntensityGrid& grid,
                             const std::string& tag = "gmm") {
  HazardCurve c;
  c.grid = grid;
  c.estimator = tag;
  c.rate.assign(grid.x.size(), 0.0);
  for (const auto& s : scen) {
    require(s.sigma_ln > 0, "gmm_curve: sigma must be > 0");
    for (std::size_t i = 0; i < grid.x.size(); ++i)
      c.rate[i] += s.annual_rate *
                   (1.0 - normal_cdf(std::log(grid.x[i]), s.mu_ln, s.sigma_ln));
  }
  c.check_monotone();
  return c;
}

enum class CurveSummary { Median, Mean };

/// Monte Carlo NGMM curve: per realization, draw each scenario's median
/// from its epistemic normal (one draw per scenario, shared across the
/// grid), evaluate the closed form, then summarize pointwise. The
/// realization bundle is retained.
inline HazardCurve ngmm_curve(const std::vector<ScenarioHazardInput>& scen,
                              const IntensityGrid& grid, int n_realizations,
                              std::uint64_t seed,
                              CurveSummary summary = CurveSummary::Median) {
  require(n_realizations >= 1, "ngmm_curve: need realizations >= 1");
  if (summary == CurveSummary::Median)
    require(n_realizations >= 2, "ngmm_curve: median needs >= 2 realizations");
  HazardCurve c;
  c.grid = grid;
  c.estimator = "ngmm";
  std::size_t ng = grid.x.size();
  c.realizations.assign(static_cast<std::size_t>(n_realizations),
                        std::vector<double>(ng, 0.0));
  for (int r = 0; r < n_realizations; ++r) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(r));
    auto& row = c.realizations[static_cast<std::size_t>(r)];
    for (const auto& s : scen) {
      double mu = s.mu_ln + std::sqrt(s.epi_var) * rng.normal();
      for (std::size_t i = 0; i < ng; ++i)
        row[i] += s.annual_rate *
                  (1.0 - normal_cdf(std::log(grid.x[i]), mu, s.sigma_ln));
    }
  }
  c.rate.assign(ng, 0.0);
  std::vector<double> tmp(static_cast<std::size_t>(n_realizations));
  for (std::size_t i = 0; i < ng; ++i) {
    for (int r = 0; r < n_realizations; ++r)
      tmp[static_cast<std::size_t>(r)] =
          c.realizations[static_cast<std::size_t>(r)][i];
    if (summary == CurveSummary::Mean) {
      double s = 0.0;
      for (double v : tmp) s += v;
      c.rate[i] = s / static_cast<double>(n_realizations);
    } else {
      std::sort(tmp.begin(), tmp.end());
      std::size_t n = tmp.size();
      c.rate[i] = n % 2 ? tmp[n / 2] : 0.5 * (tmp[n / 2 - 1] + tmp[n / 2]);
    }
  }
  c.check_monotone();
  return c;
}

/// Closed-form compound-normal variant: integrating the normally
/// distributed median analytically inflates sigma to
/// sqrt(sigma^2 + epi_var).
inline HazardCurve ngmm_curve_analytic(
    const std::vector<ScenarioHazardInput>& scen, const IntensityGrid& grid) {
  std::vector<ScenarioHazardInput> compound = scen;
  for (auto& s : compound) {
    s.sigma_ln = std::sqrt(s.sigma_ln * s.sigma_ln + s.epi_var);
    s.epi_var = 0.0;
  }
  return gmm_curve(compound, grid, "ngmm-analytic");
}

/// Empirical counting estimator over per-variation PSA values (g).
inline HazardCurve empirical_curve(
    const std::vector<std::pair<double, std::vector<double>>>& scenario_psa,
    const IntensityGrid& grid) {
  HazardCurve c;
  c.grid = grid;
  c.estimator = "empirical";
  c.rate.assign(grid.x.size(), 0.0);
  for (const auto& [rate, values] : scenario_psa) {
    require(!values.empty(), "empirical_curve: scenario with no variations");
    for (std::size_t i = 0; i < grid.x.size(); ++i) {
      long cnt = 0;
      for (double v : values)
        if (v > grid.x[i]) ++cnt;
      c.rate[i] += rate * static_cast<double>(cnt) /
                   static_cast<double>(values.size());
    }
  }
  c.check_monotone();
  return c;
}

enum class CurveMetric { KS, MAE };

/// KS: max pointwise absolute rate gap. MAE: trapezoidal integral of the
/// absolute gap over log intensity, divided by the log range.
inline double curve_distance(const HazardCurve& a, const HazardCurve& b,
                             CurveMetric metric) {
  require(a.grid.x.size() == b.grid.x.size(), "curve_distance: grid mismatch");
  for (std::size_t i = 0; i < a.grid.x.size(); ++i)
    require(a.grid.x[i] == b.grid.x[i], "curve_distance: grid mismatch");
  if (metric == CurveMetric::KS) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.rate.size(); ++i)
      m = std::max(m, std::fabs(a.rate[i] - b.rate[i]));
    return m;
  }
  double total = 0.0;
  for (std::size_t i = 1; i < a.rate.size(); ++i) {
    double d0 = std::fabs(a.rate[i - 1] - b.rate[i - 1]);
    double d1 = std::fabs(a.rate[i] - b.rate[i]);
    double dx = std::log(a.grid.x[i]) - std::log(a.grid.x[i - 1]);
    total += 0.5 * (d0 + d1) * dx;
  }
  double range = std::log(a.grid.x.back()) - std::log(a.grid.x.front());
  return total / range;
}

}  // namespace ngmm
