#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "ngmm/catalog.hpp"
#include "ngmm/kernel.hpp"
#include "ngmm/lmm.hpp"
#include "ngmm/trainer.hpp"

namespace ngmm {

/// Synthetic-catalog layout. Scenarios share source locations in groups
/// (n_sources distinct locations) so the latent path field stays within
/// the dense-sampling cap while the scenario count can grow; scenarios on
/// the same source are exact collocations of the path kernel.
struct SynthSpec {
  int n_sites = 50;
  double extent_km = 100.0;
  int n_scenarios = 100;
  int n_sources = 0;  // 0: one distinct source per scenario
  double mag_min = 6.0, mag_max = 7.5;
  double rate_min = 1e-4, rate_max = 1e-2;  // log-uniform (1/year)
  int var_min = 4, var_max = 12;            // variations per scenario
  HyperParams params;
  VarianceComponents components;
  std::uint64_t seed = 1;
  int latent_cap = 5000;

  void validate() const {
    require(n_sites >= 1 && n_scenarios >= 1, "synth: counts must be >= 1");
    require(extent_km > 0, "synth: extent must be positive");
    require(var_min >= 1 && var_max >= var_min, "synth: bad variation range");
    require(n_sources >= 0 && n_sources <= n_scenarios,
            "synth: n_sources must be in [0, n_scenarios]");
  }
};

/// Everything the generator drew, persisted for truth comparison.
struct SynthTruth {
  std::vector<double> delta_s2s;              // per site
  Eigen::MatrixXd delta_p2p;                  // n_sources x n_sites
  std::vector<int> source_of_scenario;        // scenario -> source index
  std::vector<double> b_dot;                  // per scenario
  Eigen::MatrixXd w_dot;                      // n_scenarios x n_sites
  std::vector<double> b_ddot;                 // per variation
  std::vector<double> w_ddot;                 // per record, record order

  /// GP part of the scenario mean: delta_s2s + delta_p2p.
  double gp_mean(int scenario, int site) const {
    return delta_s2s[static_cast<std::size_t>(site)] +
           delta_p2p(source_of_scenario[static_cast<std::size_t>(scenario)],
                     site);
  }
  /// Full latent scenario mean ybar_ls before primary noise.
  double latent_ybar(int scenario, int site) const {
    return gp_mean(scenario, site) +
           b_dot[static_cast<std::size_t>(scenario)] + w_dot(scenario, site);
  }
};

namespace detail {

/// Joint draw from a dense kernel covariance. The oracle path: no sparse
/// machinery involved.
inline Eigen::VectorXd dense_field_draw(const Eigen::MatrixXd& cov, Rng& rng) {
  Eigen::MatrixXd C = cov;
  double jit = 1e-10 * C.trace() / static_cast<double>(C.rows());
  C.diagonal().array() += jit;
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw NumericError("synth: latent covariance not PD");
  Eigen::VectorXd z(C.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return llt.matrixL() * z;
}

}  // namespace detail

/// Simple magnitude-scaled backbone median, ln(g) at 2.0 s. Stands in for
/// an externally supplied table; its exact shape is irrelevant to the GP,
/// which models residuals about it.
inline double synth_backbone_mu(double magnitude) {
  return -1.5 + 0.8 * (magnitude - 6.0);
}

inline std::pair<ResidualCatalog, SynthTruth> generate(const SynthSpec& spec) {
  spec.validate();
  const auto& h = spec.params.kernel;
  // zero variances are allowed here (degenerate catalogs are useful for
  // testing); length scales must still be positive
  require(h.site_var >= 0 && h.path_var >= 0,
          "synth: kernel variances must be >= 0");
  require(h.site_len > 0 && h.path_len > 0,
          "synth: kernel length scales must be > 0");
  require(spec.components.tau_dot2 >= 0 && spec.components.phi_dot2 >= 0 &&
              spec.components.tau_ddot2 >= 0 && spec.components.phi_ddot2 >= 0,
          "synth: variance components must be >= 0");
  const auto& vc = spec.components;
  int n_sources = spec.n_sources > 0 ? spec.n_sources : spec.n_scenarios;

  require(spec.n_sites <= spec.latent_cap,
          "synth: site count exceeds the dense latent cap");
  require(static_cast<long>(n_sources) * spec.n_sites <=
              static_cast<long>(spec.latent_cap),
          "synth: n_sources * n_sites exceeds the dense latent cap");

  Rng layout = Rng::derive(spec.seed, 1);
  Rng field_rng = Rng::derive(spec.seed, 2);
  Rng noise = Rng::derive(spec.seed, 3);

  ResidualCatalog cat;
  SynthTruth truth;
  char buf[32];

  for (int s = 0; s < spec.n_sites; ++s) {
    Site site;
    std::snprintf(buf, sizeof(buf), "S%04d", s);
    site.site_id = buf;
    site.x_km = layout.uniform(0.0, spec.extent_km);
    site.y_km = layout.uniform(0.0, spec.extent_km);
    site.vs30 = layout.uniform(200.0, 800.0);
    cat.sites.push_back(std::move(site));
  }

  std::vector<std::pair<double, double>> sources(
      static_cast<std::size_t>(n_sources));
  for (auto& src : sources) {
    src.first = layout.uniform(0.0, spec.extent_km);
    src.second = layout.uniform(0.0, spec.extent_km);
  }

  truth.source_of_scenario.resize(static_cast<std::size_t>(spec.n_scenarios));
  double lr0 = std::log(spec.rate_min), lr1 = std::log(spec.rate_max);
  for (int l = 0; l < spec.n_scenarios; ++l) {
    RuptureScenario sc;
    std::snprintf(buf, sizeof(buf), "L%05d", l);
    sc.scenario_id = buf;
    sc.magnitude = layout.uniform(spec.mag_min, spec.mag_max);
    sc.annual_rate = std::exp(layout.uniform(lr0, lr1));
    int src = l % n_sources;
    truth.source_of_scenario[static_cast<std::size_t>(l)] = src;
    sc.closest_point_x_km = sources[static_cast<std::size_t>(src)].first;
    sc.closest_point_y_km = sources[static_cast<std::size_t>(src)].second;
    cat.scenarios.push_back(std::move(sc));
  }

  int var_id = 0;
  std::vector<std::pair<int, int>> var_range(
      static_cast<std::size_t>(spec.n_scenarios));  // [first, count]
  for (int l = 0; l < spec.n_scenarios; ++l) {
    int count = spec.var_min +
                static_cast<int>(layout.below(static_cast<std::uint64_t>(
                    spec.var_max - spec.var_min + 1)));
    var_range[static_cast<std::size_t>(l)] = {var_id, count};
    for (int k = 0; k < count; ++k, ++var_id) {
      RuptureVariation v;
      std::snprintf(buf, sizeof(buf), "E%07d", var_id);
      v.variation_id = buf;
      v.scenario = l;
      cat.variations.push_back(std::move(v));
    }
  }
  cat.rebuild_indices();

  // latent site field
  if (h.site_var == 0.0) {
    truth.delta_s2s.assign(static_cast<std::size_t>(spec.n_sites), 0.0);
  } else {
    auto n = static_cast<Eigen::Index>(spec.n_sites);
    Eigen::MatrixXd C(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        double dx = cat.sites[static_cast<std::size_t>(i)].x_km -
                    cat.sites[static_cast<std::size_t>(j)].x_km;
        double dy = cat.sites[static_cast<std::size_t>(i)].y_km -
                    cat.sites[static_cast<std::size_t>(j)].y_km;
        double v =
            h.site_var * matern(h.nu, std::sqrt(dx * dx + dy * dy), h.site_len);
        C(i, j) = v;
        C(j, i) = v;
      }
    Eigen::VectorXd f = detail::dense_field_draw(C, field_rng);
    truth.delta_s2s.assign(f.data(), f.data() + f.size());
  }

  // latent path field over distinct (source, site) pairs, 4D metric
  if (h.path_var == 0.0) {
    truth.delta_p2p = Eigen::MatrixXd::Zero(n_sources, spec.n_sites);
  } else {
    auto n = static_cast<Eigen::Index>(n_sources) * spec.n_sites;
    Eigen::MatrixXd C(n, n);
    auto coord = [&](Eigen::Index idx) {
      auto a = static_cast<int>(idx) / spec.n_sites;  // source
      auto s = static_cast<int>(idx) % spec.n_sites;  // site
      const auto& st = cat.sites[static_cast<std::size_t>(s)];
      const auto& src = sources[static_cast<std::size_t>(a)];
      return std::array<double, 4>{st.x_km, st.y_km, src.first, src.second};
    };
    for (Eigen::Index i = 0; i < n; ++i) {
      auto ci = coord(i);
      for (Eigen::Index j = 0; j <= i; ++j) {
        auto cj = coord(j);
        double d2 = 0.0;
        for (int k = 0; k < 4; ++k)
          d2 += (ci[static_cast<std::size_t>(k)] -
                 cj[static_cast<std::size_t>(k)]) *
                (ci[static_cast<std::size_t>(k)] -
                 cj[static_cast<std::size_t>(k)]);
        double v = h.path_var * matern(h.nu, std::sqrt(d2), h.path_len);
        C(i, j) = v;
        C(j, i) = v;
      }
    }
    Eigen::VectorXd f = detail::dense_field_draw(C, field_rng);
    truth.delta_p2p = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic,
                                               Eigen::Dynamic, Eigen::RowMajor>>(
        f.data(), n_sources, spec.n_sites);
  }

  truth.b_dot.resize(static_cast<std::size_t>(spec.n_scenarios));
  truth.w_dot.resize(spec.n_scenarios, spec.n_sites);
  for (int l = 0; l < spec.n_scenarios; ++l) {
    truth.b_dot[static_cast<std::size_t>(l)] =
        std::sqrt(vc.tau_dot2) * noise.normal();
    for (int s = 0; s < spec.n_sites; ++s)
      truth.w_dot(l, s) = std::sqrt(vc.phi_dot2) * noise.normal();
  }
  truth.b_ddot.resize(cat.variations.size());
  for (auto& b : truth.b_ddot) b = std::sqrt(vc.tau_ddot2) * noise.normal();

  double total_var = h.prior_variance() + vc.tau_dot2 + vc.phi_dot2 +
                     vc.tau_ddot2 + vc.phi_ddot2;
  double sigma_erg = std::sqrt(total_var);

  cat.records.reserve(cat.variations.size() *
                      static_cast<std::size_t>(spec.n_sites));
  for (int l = 0; l < spec.n_scenarios; ++l) {
    auto [first, count] = var_range[static_cast<std::size_t>(l)];
    double mu_bar =
        synth_backbone_mu(cat.scenarios[static_cast<std::size_t>(l)].magnitude);
    for (int k = 0; k < count; ++k) {
      int e = first + k;
      for (int s = 0; s < spec.n_sites; ++s) {
        double w = std::sqrt(vc.phi_ddot2) * noise.normal();
        truth.w_ddot.push_back(w);
        ResidualRecord rec;
        rec.variation = e;
        rec.site = s;
        rec.y = truth.latent_ybar(l, s) +
                truth.b_ddot[static_cast<std::size_t>(e)] + w;
        rec.backbone_mu = mu_bar;
        rec.backbone_sigma = sigma_erg;
        cat.records.push_back(rec);
      }
    }
  }
  return {cat, truth};
}

}  // namespace ngmm
