#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ngmm/common.hpp"

namespace ngmm {

struct Site {
  std::string site_id;
  double x_km = 0.0;
  double y_km = 0.0;
  double vs30 = 0.0;  // informational; 0 when not supplied
};

struct RuptureScenario {
  std::string scenario_id;
  double magnitude = 0.0;
  double annual_rate = 0.0;  // events/year
  double closest_point_x_km = 0.0;
  double closest_point_y_km = 0.0;
};

struct RuptureVariation {
  std::string variation_id;
  int scenario = -1;  // index into ResidualCatalog::scenarios
};

/// One (variation, site) observation. y is the natural-log residual about
/// the backbone median; backbone_mu/sigma are carried through from input
/// and never computed here.
struct ResidualRecord {
  int variation = -1;  // index into variations
  int site = -1;       // index into sites
  double y = 0.0;
  double backbone_mu = 0.0;
  double backbone_sigma = 0.0;
};

struct ResidualCatalog {
  std::vector<Site> sites;
  std::vector<RuptureScenario> scenarios;
  std::vector<RuptureVariation> variations;
  std::vector<ResidualRecord> records;

  std::unordered_map<std::string, int> site_index;
  std::unordered_map<std::string, int> scenario_index;
  std::unordered_map<std::string, int> variation_index;

  int site_of(const std::string& id) const {
    auto it = site_index.find(id);
    if (it == site_index.end()) throw IntegrityError("unknown site_id: " + id);
    return it->second;
  }
  int scenario_of(const std::string& id) const {
    auto it = scenario_index.find(id);
    if (it == scenario_index.end())
      throw IntegrityError("unknown scenario_id: " + id);
    return it->second;
  }
  int variation_of(const std::string& id) const {
    auto it = variation_index.find(id);
    if (it == variation_index.end())
      throw IntegrityError("unknown variation_id: " + id);
    return it->second;
  }

  void rebuild_indices() {
    site_index.clear();
    scenario_index.clear();
    variation_index.clear();
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (!site_index.emplace(sites[i].site_id, static_cast<int>(i)).second)
        throw IntegrityError("duplicate site_id: " + sites[i].site_id);
    }
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      if (!scenario_index
               .emplace(scenarios[i].scenario_id, static_cast<int>(i))
               .second)
        throw IntegrityError("duplicate scenario_id: " +
                             scenarios[i].scenario_id);
    }
    for (std::size_t i = 0; i < variations.size(); ++i) {
      if (!variation_index
               .emplace(variations[i].variation_id, static_cast<int>(i))
               .second)
        throw IntegrityError("duplicate variation_id: " +
                             variations[i].variation_id);
    }
  }
};

/// Collapsed (scenario, site) cell: arithmetic mean over variations.
struct ScenarioMeanRecord {
  int scenario = -1;
  int site = -1;
  double y_bar = 0.0;
  int n_variations = 0;
};

struct ScenarioMeanTable {
  std::vector<ScenarioMeanRecord> cells;
};

enum class Role : std::uint8_t { Train, Test };

enum class Group : std::uint8_t { TrTr, TrTe, TeTr, TeTe };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::TrTr: return "TrTr";
    case Group::TrTe: return "TrTe";
    case Group::TeTr: return "TeTr";
    case Group::TeTe: return "TeTe";
  }
  return "?";
}

struct SplitAssignment {
  std::vector<Role> site_role;       // per site index
  std::vector<Role> scenario_role;   // per scenario index
  std::uint64_t seed = 0;
  double site_test_frac = 0.0;
  double scenario_test_frac = 0.0;

  Group group(int scenario, int site) const {
    bool etr = scenario_role[static_cast<std::size_t>(scenario)] == Role::Train;
    bool str = site_role[static_cast<std::size_t>(site)] == Role::Train;
    if (etr) return str ? Group::TrTr : Group::TrTe;
    return str ? Group::TeTr : Group::TeTe;
  }
};

}  // namespace ngmm
