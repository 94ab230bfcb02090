#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ngmm/common.hpp"

namespace ngmm {

/// Sufficient statistics of one rupture variation (event): record count,
/// sum of values, and sum of squared deviations about the event mean.
struct EventSummary {
  int variation = -1;
  long n = 0;
  double mu = 0.0;  // sum of values in the event
  double s2 = 0.0;  // within-event sum of squared deviations
};

/// All four variance components, ln-units^2. tau/phi_ddot2 are the primary
/// (per-variation) components estimated here; tau/phi_dot2 are the
/// secondary components tuned with the kernel hyperparameters.
struct VarianceComponents {
  double tau_ddot2 = 0.0553;
  double phi_ddot2 = 0.0663;
  double tau_dot2 = 0.0360;
  double phi_dot2 = 0.0545;
};

inline VarianceComponents preset_components(const std::string& name) {
  VarianceComponents v;
  if (name == "ngmm1") {
    v.tau_dot2 = 0.0360;
    v.phi_dot2 = 0.0545;
    v.tau_ddot2 = 0.0553;
    v.phi_ddot2 = 0.0663;
  } else if (name == "ngmm2") {
    v.tau_dot2 = 0.0665;
    v.phi_dot2 = 0.0461;
    v.tau_ddot2 = 0.0567;
    v.phi_ddot2 = 0.0665;
  } else {
    throw std::invalid_argument("unknown component preset: " + name);
  }
  return v;
}

/// One pass over (variation, value) pairs. Values are the deviations
/// y_es - ybar_ls of each record about its scenario-site mean.
inline std::vector<EventSummary> summarize_events(
    const std::vector<std::pair<int, double>>& deviations) {
  std::map<int, EventSummary> acc;
  for (const auto& [var, v] : deviations) {
    auto& e = acc[var];
    e.variation = var;
    e.n += 1;
    e.mu += v;
  }
  // second pass for the deviations about the event mean; the event means
  // are exact, so this matches a textbook two-pass computation
  for (const auto& [var, v] : deviations) {
    auto& e = acc[var];
    double m = e.mu / static_cast<double>(e.n);
    e.s2 += (v - m) * (v - m);
  }
  std::vector<EventSummary> out;
  out.reserve(acc.size());
  for (auto& [var, e] : acc) out.push_back(e);
  return out;
}

/// Closed-form log-likelihood of the per-event random intercept model with
/// covariance V_e = tau2 * 11^T + phi2 * I. Includes the full
/// -(N/2) log(2 pi) constant, so the value equals the dense multivariate
/// normal log-density exactly.
inline double lmm_loglik(const std::vector<EventSummary>& events, double tau2,
                         double phi2) {
  if (phi2 <= 0.0) throw std::domain_error("lmm_loglik: phi2 must be > 0");
  require(tau2 >= 0.0, "lmm_loglik: tau2 must be >= 0");
  double ll = 0.0;
  long total_n = 0;
  for (const auto& e : events) {
    double ne = static_cast<double>(e.n);
    double c = phi2 + ne * tau2;
    ll += -0.5 * (std::log(c) + (ne - 1.0) * std::log(phi2) +
                  e.mu * e.mu / (ne * c) + e.s2 / phi2);
    total_n += e.n;
  }
  ll -= 0.5 * static_cast<double>(total_n) * std::log(2.0 * M_PI);
  return ll;
}

struct LmmFitReport {
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
  double loglik = 0.0;
};

/// Gradient of the log-likelihood w.r.t. (tau2, phi2).
inline std::pair<double, double> lmm_grad(
    const std::vector<EventSummary>& events, double tau2, double phi2) {
  double gt = 0.0, gp = 0.0;
  for (const auto& e : events) {
    double ne = static_cast<double>(e.n);
    double c = phi2 + ne * tau2;
    double q1 = e.mu * e.mu / ne;  // quadratic numerator on the 1-direction
    gt += -0.5 * (ne / c - ne * q1 / (c * c));
    gp += -0.5 * (1.0 / c + (ne - 1.0) / phi2 - q1 / (c * c) -
                  e.s2 / (phi2 * phi2));
  }
  return {gt, gp};
}

/// Maximum-likelihood fit of (tau_ddot2, phi_ddot2), log-parameterized
/// gradient ascent with Armijo backtracking. Order of events does not
/// affect the result beyond floating-point sum order of the summaries.
inline std::pair<VarianceComponents, LmmFitReport> fit_mle(
    const std::vector<EventSummary>& events, double init_tau2 = 0.0,
    double init_phi2 = 0.0, double lower_bound = 1e-8, int max_iter = 500,
    double grad_tol = 1e-9) {
  require(events.size() >= 2, "fit_mle: need at least 2 events");
  bool any_multi = false;
  long total_n = 0;
  for (const auto& e : events) {
    if (e.n >= 2) any_multi = true;
    total_n += e.n;
  }
  if (!any_multi)
    throw std::invalid_argument(
        "fit_mle: all events are singletons; tau_ddot2 and phi_ddot2 are not "
        "separately identifiable");

  // method-of-moments starting point unless the caller supplied one
  if (init_tau2 <= 0.0 || init_phi2 <= 0.0) {
    double s2_within = 0.0;
    long dof_within = 0;
    double mean_all = 0.0;
    for (const auto& e : events) {
      s2_within += e.s2;
      dof_within += e.n - 1;
      mean_all += e.mu;
    }
    mean_all /= static_cast<double>(total_n);
    double phi0 = dof_within > 0 ? s2_within / static_cast<double>(dof_within)
                                 : 0.1;
    double between = 0.0;
    double nbar = 0.0;
    for (const auto& e : events) {
      double m = e.mu / static_cast<double>(e.n) - mean_all;
      between += m * m;
      nbar += 1.0 / static_cast<double>(e.n);
    }
    between /= static_cast<double>(events.size());
    nbar /= static_cast<double>(events.size());
    double tau0 = between - phi0 * nbar;
    init_phi2 = std::max(phi0, lower_bound);
    init_tau2 = std::max(tau0, lower_bound);
  }

  double a = std::log(std::max(init_tau2, lower_bound));
  double b = std::log(std::max(init_phi2, lower_bound));
  double lo = std::log(lower_bound);

  auto eval = [&](double la, double lb) {
    return lmm_loglik(events, std::exp(la), std::exp(lb));
  };

  LmmFitReport rep;
  double ll = eval(a, b);
  double scale = static_cast<double>(total_n);
  for (rep.iterations = 0; rep.iterations < max_iter; ++rep.iterations) {
    double t2 = std::exp(a), p2 = std::exp(b);
    auto [gt, gp] = lmm_grad(events, t2, p2);
    double ga = gt * t2;  // chain rule into log space
    double gb = gp * p2;
    rep.grad_norm = std::sqrt(ga * ga + gb * gb) / scale;
    if (rep.grad_norm < grad_tol) {
      rep.converged = true;
      break;
    }
    double step = 1.0 / scale;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      double na = std::max(a + step * ga, lo);
      double nb = std::max(b + step * gb, lo);
      double nll = eval(na, nb);
      if (nll > ll) {
        a = na;
        b = nb;
        ll = nll;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      rep.converged = rep.grad_norm < 1e-5;
      break;
    }
  }
  rep.loglik = ll;
  VarianceComponents out;
  out.tau_ddot2 = std::exp(a);
  out.phi_ddot2 = std::exp(b);
  return {out, rep};
}

/// Posterior (shrinkage) mean of the between-event effect per variation:
/// tau2 * mu_e / (phi2 + n_e tau2). This is the exact blockwise inverse of
/// the rank-1 covariance structure.
inline std::map<int, double> condition_random_effects(
    const std::vector<EventSummary>& events, const VarianceComponents& vc) {
  std::map<int, double> out;
  for (const auto& e : events) {
    double ne = static_cast<double>(e.n);
    out[e.variation] =
        vc.tau_ddot2 * e.mu / (vc.phi_ddot2 + ne * vc.tau_ddot2);
  }
  return out;
}

}  // namespace ngmm
