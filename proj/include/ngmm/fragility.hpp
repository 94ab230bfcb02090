#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "ngmm/common.hpp"
#include "ngmm/hazard.hpp"

namespace ngmm {

/// Ordered lognormal fragility curves (slight -> complete in the HAZUS
/// convention). Medians in g of PGA before translation.
struct FragilityState {
  std::string name;
  double alpha = 0.0;  // median (g)
  double beta = 0.0;   // logarithmic dispersion
};

struct FragilitySet {
  std::vector<FragilityState> states;

  void validate() const {
    require(!states.empty(), "FragilitySet: no damage states");
    for (std::size_t k = 0; k < states.size(); ++k) {
      require(states[k].alpha > 0 && states[k].beta > 0,
              "FragilitySet: alpha and beta must be > 0");
      if (k > 0)
        require(states[k].alpha > states[k - 1].alpha,
                "FragilitySet: medians must be strictly increasing");
    }
  }
};

struct Facility {
  std::string facility_id;
  double x_km = 0.0, y_km = 0.0;
  double ratio = 1.0;  // r_i = SD_{i,2.0s} / SD_{i,PGA}
};

/// Translate the PGA-based medians to the facility's intensity measure:
/// each median scales by r_i, dispersions unchanged.
inline FragilitySet translate(const FragilitySet& set, double ratio) {
  require(ratio > 0, "translate: design-spectrum ratio must be > 0");
  set.validate();
  FragilitySet out = set;
  for (auto& s : out.states) s.alpha *= ratio;
  return out;
}

/// Exceedance probability of state k at the given intensity.
inline double exceedance(const FragilityState& s, double psa) {
  if (psa <= 0.0) return 0.0;
  return normal_cdf(std::log(psa), std::log(s.alpha), s.beta);
}

/// Probability vector over {none, ds_1..ds_K} from exceedance differences.
/// Crossing curves at this intensity are a validity error.
inline std::vector<double> state_probabilities(const FragilitySet& translated,
                                               double psa) {
  translated.validate();
  std::size_t k_states = translated.states.size();
  std::vector<double> exc(k_states);
  for (std::size_t k = 0; k < k_states; ++k) {
    exc[k] = exceedance(translated.states[k], psa);
    if (k > 0 && exc[k] > exc[k - 1] + 1e-15)
      throw std::runtime_error(
          "state_probabilities: crossing fragility curves between states '" +
          translated.states[k - 1].name + "' and '" +
          translated.states[k].name + "'");
  }
  std::vector<double> p(k_states + 1);
  p[0] = 1.0 - exc[0];
  for (std::size_t k = 0; k + 1 < k_states; ++k) p[k + 1] = exc[k] - exc[k + 1];
  p[k_states] = exc[k_states - 1];
  return p;
}

struct DamageRealization {
  int field_realization = 0;
  std::vector<int> state;  // per facility, 0 = none .. K = last state
};

struct DamageStats {
  // empirical frequency per facility per state, rows = facilities
  Eigen::MatrixXd frequency;
  std::vector<double> expected_state_count;  // per state, over facilities
};

/// Multinomial damage draws per facility per field realization.
/// field(r, i): PSA (g) at facility i in ground-motion realization r.
/// Facility draws are independent conditional on the field; RNG streams
/// derive from (seed, realization) so worker scheduling cannot change
/// results.
inline std::pair<std::vector<DamageRealization>, DamageStats> sample_damage(
    const Eigen::MatrixXd& field, const std::vector<Facility>& facilities,
    const FragilitySet& set, std::uint64_t seed) {
  set.validate();
  require(field.cols() == static_cast<Eigen::Index>(facilities.size()),
          "sample_damage: field column count != facility count");
  std::size_t n_states = set.states.size() + 1;
  auto n_fac = facilities.size();
  auto n_real = field.rows();

  std::vector<FragilitySet> translated;
  translated.reserve(n_fac);
  for (const auto& f : facilities) translated.push_back(translate(set, f.ratio));

  std::vector<DamageRealization> out;
  out.reserve(static_cast<std::size_t>(n_real));
  DamageStats stats;
  stats.frequency = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(n_fac), static_cast<Eigen::Index>(n_states));
  stats.expected_state_count.assign(n_states, 0.0);

  for (Eigen::Index r = 0; r < n_real; ++r) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(r));
    DamageRealization dr;
    dr.field_realization = static_cast<int>(r);
    dr.state.resize(n_fac);
    for (std::size_t i = 0; i < n_fac; ++i) {
      auto p = state_probabilities(translated[i],
                                   field(r, static_cast<Eigen::Index>(i)));
      double u = rng.uniform();
      double cum = 0.0;
      int s = static_cast<int>(n_states) - 1;
      for (std::size_t k = 0; k < n_states; ++k) {
        cum += p[k];
        if (u < cum) {
          s = static_cast<int>(k);
          break;
        }
      }
      dr.state[i] = s;
      stats.frequency(static_cast<Eigen::Index>(i), s) += 1.0;
    }
    out.push_back(std::move(dr));
  }
  if (n_real > 0) stats.frequency /= static_cast<double>(n_real);
  for (std::size_t k = 0; k < n_states; ++k)
    stats.expected_state_count[k] =
        stats.frequency.col(static_cast<Eigen::Index>(k)).sum();
  return {out, stats};
}

}  // namespace ngmm
