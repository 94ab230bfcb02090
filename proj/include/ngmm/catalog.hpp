#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ngmm/csv.hpp"
#include "ngmm/types.hpp"

namespace ngmm {

/// Configurable column names for the input CSVs. Either `y` or
/// (`ln_psa`, `backbone_mu`) must be present in the residual file; when
/// both raw ln(PSA) and the backbone median are given, y is computed as
/// their difference.
struct ColumnMap {
  std::string site_id = "site_id";
  std::string x_km = "x_km";
  std::string y_km = "y_km";
  std::string vs30 = "vs30";
  std::string scenario_id = "scenario_id";
  std::string magnitude = "magnitude";
  std::string annual_rate = "annual_rate";
  std::string closest_x = "closest_point_x_km";
  std::string closest_y = "closest_point_y_km";
  std::string variation_id = "variation_id";
  std::string y = "y";
  std::string ln_psa = "ln_psa";
  std::string backbone_mu = "backbone_mu";
  std::string backbone_sigma = "backbone_sigma";
};

struct CatalogPaths {
  std::string sites;
  std::string scenarios;
  std::string variations;
  std::vector<std::string> residuals;
};

namespace detail {

inline void read_sites(const std::string& path, const ColumnMap& cm,
                       ResidualCatalog& cat) {
  CsvReader r(path);
  int c_id = r.column(cm.site_id), c_x = r.column(cm.x_km),
      c_y = r.column(cm.y_km), c_v = r.column_opt(cm.vs30);
  std::vector<std::string> f;
  while (r.next(f)) {
    Site s;
    s.site_id = f[static_cast<std::size_t>(c_id)];
    s.x_km = r.num(f, c_x);
    s.y_km = r.num(f, c_y);
    if (c_v >= 0) s.vs30 = r.num(f, c_v);
    cat.sites.push_back(std::move(s));
  }
}

inline void read_scenarios(const std::string& path, const ColumnMap& cm,
                           const std::set<std::string>& exclude,
                           ResidualCatalog& cat) {
  CsvReader r(path);
  int c_id = r.column(cm.scenario_id), c_m = r.column(cm.magnitude),
      c_r = r.column(cm.annual_rate), c_x = r.column(cm.closest_x),
      c_y = r.column(cm.closest_y);
  std::vector<std::string> f;
  while (r.next(f)) {
    RuptureScenario s;
    s.scenario_id = f[static_cast<std::size_t>(c_id)];
    if (exclude.count(s.scenario_id)) continue;
    s.magnitude = r.num(f, c_m);
    s.annual_rate = r.num(f, c_r);
    if (s.annual_rate < 0)
      throw IntegrityError("negative annual_rate for scenario " +
                           s.scenario_id);
    s.closest_point_x_km = r.num(f, c_x);
    s.closest_point_y_km = r.num(f, c_y);
    cat.scenarios.push_back(std::move(s));
  }
}

inline void read_variations(const std::string& path, const ColumnMap& cm,
                            ResidualCatalog& cat) {
  CsvReader r(path);
  int c_id = r.column(cm.variation_id), c_sc = r.column(cm.scenario_id);
  std::vector<std::string> f;
  while (r.next(f)) {
    const std::string& sc = f[static_cast<std::size_t>(c_sc)];
    auto it = cat.scenario_index.find(sc);
    if (it == cat.scenario_index.end()) continue;  // excluded scenario
    RuptureVariation v;
    v.variation_id = f[static_cast<std::size_t>(c_id)];
    v.scenario = it->second;
    cat.variations.push_back(std::move(v));
  }
}

}  // namespace detail

/// Stream the residual files into a catalog. Referential integrity against
/// the site/scenario/variation tables is enforced row by row; errors carry
/// the offending file and line.
inline ResidualCatalog ingest_catalog(
    const CatalogPaths& paths, const ColumnMap& cm = {},
    const std::set<std::string>& exclude_scenarios = {}) {
  ResidualCatalog cat;
  detail::read_sites(paths.sites, cm, cat);
  detail::read_scenarios(paths.scenarios, cm, exclude_scenarios, cat);
  cat.rebuild_indices();
  detail::read_variations(paths.variations, cm, cat);
  cat.rebuild_indices();

  for (const auto& path : paths.residuals) {
    CsvReader r(path);
    int c_var = r.column(cm.variation_id);
    int c_site = r.column(cm.site_id);
    int c_y = r.column_opt(cm.y);
    int c_psa = r.column_opt(cm.ln_psa);
    int c_mu = r.column_opt(cm.backbone_mu);
    int c_sig = r.column_opt(cm.backbone_sigma);
    if (c_y < 0 && (c_psa < 0 || c_mu < 0))
      throw SchemaError("residual file " + path + " needs column '" + cm.y +
                        "' or columns '" + cm.ln_psa + "'+'" + cm.backbone_mu +
                        "'");
    std::vector<std::string> f;
    while (r.next(f)) {
      const std::string& var_id = f[static_cast<std::size_t>(c_var)];
      auto vit = cat.variation_index.find(var_id);
      if (vit == cat.variation_index.end()) {
        if (exclude_scenarios.empty())
          throw IntegrityError(path + ":" + std::to_string(r.line_no()) +
                               ": unknown variation_id '" + var_id + "'");
        continue;  // row belongs to an excluded scenario
      }
      ResidualRecord rec;
      rec.variation = vit->second;
      const std::string& site_id = f[static_cast<std::size_t>(c_site)];
      auto sit = cat.site_index.find(site_id);
      if (sit == cat.site_index.end())
        throw IntegrityError(path + ":" + std::to_string(r.line_no()) +
                             ": unknown site_id '" + site_id + "'");
      rec.site = sit->second;
      if (c_mu >= 0) rec.backbone_mu = r.num(f, c_mu);
      if (c_sig >= 0) {
        rec.backbone_sigma = r.num(f, c_sig);
        if (rec.backbone_sigma <= 0)
          throw IntegrityError(path + ":" + std::to_string(r.line_no()) +
                               ": backbone_sigma must be > 0");
      }
      if (c_y >= 0) {
        rec.y = r.num(f, c_y);
      } else {
        rec.y = r.num(f, c_psa) - rec.backbone_mu;
      }
      cat.records.push_back(rec);
    }
  }
  return cat;
}

/// Collapse per-variation residuals to per-(scenario, site) means.
/// Single streaming pass: sum and count per cell.
inline ScenarioMeanTable collapse_to_means(const ResidualCatalog& cat) {
  require(!cat.records.empty(), "collapse_to_means: empty catalog");
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  for (const auto& rec : cat.records) {
    int sc = cat.variations[static_cast<std::size_t>(rec.variation)].scenario;
    auto& a = acc[{sc, rec.site}];
    a.first += rec.y;
    a.second += 1;
  }
  ScenarioMeanTable t;
  t.cells.reserve(acc.size());
  for (const auto& [key, a] : acc) {
    ScenarioMeanRecord m;
    m.scenario = key.first;
    m.site = key.second;
    m.n_variations = a.second;
    m.y_bar = a.first / a.second;
    t.cells.push_back(m);
  }
  return t;
}

/// Deterministic random train/test partition of sites and scenarios.
/// Test counts use round(frac * n); a seeded Fisher-Yates shuffle picks
/// the test members.
inline SplitAssignment split(std::size_t n_sites, std::size_t n_scenarios,
                             double site_test_frac, double scenario_test_frac,
                             std::uint64_t seed) {
  require(site_test_frac > 0.0 && site_test_frac < 1.0,
          "site_test_frac must be in (0,1)");
  require(scenario_test_frac > 0.0 && scenario_test_frac < 1.0,
          "scenario_test_frac must be in (0,1)");
  SplitAssignment sa;
  sa.seed = seed;
  sa.site_test_frac = site_test_frac;
  sa.scenario_test_frac = scenario_test_frac;

  auto assign = [](std::size_t n, double frac, Rng& rng) {
    std::vector<Role> role(n, Role::Train);
    auto n_test =
        static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = rng.below(i);
      std::swap(idx[i - 1], idx[j]);
    }
    for (std::size_t i = 0; i < n_test; ++i) role[idx[i]] = Role::Test;
    return role;
  };

  Rng site_rng = Rng::derive(seed, 0);
  Rng scen_rng = Rng::derive(seed, 1);
  sa.site_role = assign(n_sites, site_test_frac, site_rng);
  sa.scenario_role = assign(n_scenarios, scenario_test_frac, scen_rng);
  return sa;
}

}  // namespace ngmm
