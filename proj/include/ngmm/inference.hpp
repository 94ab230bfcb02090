#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "ngmm/catalog.hpp"
#include "ngmm/klsc.hpp"
#include "ngmm/lmm.hpp"
#include "ngmm/trainer.hpp"

namespace ngmm {

enum class InferenceMode { Prediction, Interpolation };

/// A query point: kernel inputs plus, for interpolation, the rupture
/// variation whose observed records inform the between-event effect.
struct InferencePoint {
  PredictionPoint point;
  int variation = -1;  // -1: no variation association (prediction mode)
};

/// Marginal posterior per point with the variance decomposition needed by
/// hazard sampling: the epistemic kernel part and the aleatory add-ons.
struct PosteriorResult {
  InferenceMode mode = InferenceMode::Prediction;
  Eigen::VectorXd mean;
  Eigen::VectorXd kernel_variance;  // diag(K* - k^T Theta^-1 k), clipped
  Eigen::VectorXd bddot_variance;   // per-point between-event residual var
  Eigen::VectorXd stddev;           // total reported stddev
  VarianceComponents components;
  long clipped = 0;

  double total_variance(Eigen::Index i) const {
    return kernel_variance(i) + components.tau_dot2 + components.phi_dot2 +
           bddot_variance(i) + components.phi_ddot2;
  }
};

namespace detail {

inline PosteriorSolve kernel_posterior(
    const SparseFactor& factor, const std::vector<PredictionPoint>& obs_pts,
    const Eigen::VectorXd& obs_values,
    const std::vector<PredictionPoint>& pred_pts, const HyperParams& p) {
  Eigen::MatrixXd cross = assemble_cross_cov(pred_pts, obs_pts, p.kernel);
  Eigen::VectorXd prior =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(pred_pts.size()),
                                p.kernel.prior_variance());
  return solve_posterior(factor, obs_values, cross, prior, p.tau_dot2,
                         p.phi_dot2);
}

}  // namespace detail

/// Prediction mode: scenarios with no same-event observations. Mean is the
/// scenario-mean GP posterior; variance carries the full primary aleatory
/// terms.
inline PosteriorResult predict(const ResidualCatalog& cat,
                               const ScenarioMeanTable& obs_table,
                               const std::vector<InferencePoint>& pred,
                               const HyperParams& params,
                               const VarianceComponents& vc,
                               const SparseFactor& factor) {
  auto obs_pts = table_points(cat, obs_table);
  require(static_cast<int>(obs_pts.size()) == factor.n(),
          "predict: factor was built on a different observation set");
  Eigen::VectorXd y(static_cast<Eigen::Index>(obs_table.cells.size()));
  for (std::size_t i = 0; i < obs_table.cells.size(); ++i)
    y(static_cast<Eigen::Index>(i)) = obs_table.cells[i].y_bar;

  std::vector<PredictionPoint> pts;
  pts.reserve(pred.size());
  for (const auto& ip : pred) pts.push_back(ip.point);
  auto ps = detail::kernel_posterior(factor, obs_pts, y, pts, params);

  PosteriorResult r;
  r.mode = InferenceMode::Prediction;
  r.components = vc;
  r.components.tau_dot2 = params.tau_dot2;
  r.components.phi_dot2 = params.phi_dot2;
  r.mean = ps.mean;
  r.kernel_variance = ps.kernel_variance;
  r.clipped = ps.clipped;
  auto m = ps.mean.size();
  r.bddot_variance = Eigen::VectorXd::Constant(m, vc.tau_ddot2);
  r.stddev.resize(m);
  for (Eigen::Index i = 0; i < m; ++i)
    r.stddev(i) = std::sqrt(r.total_variance(i));
  return r;
}

/// Interpolation mode: points whose variation has observed records get the
/// blockwise random-effect correction; points without degrade to
/// prediction, bit for bit.
inline PosteriorResult interpolate(const ResidualCatalog& cat,
                                   const ScenarioMeanTable& obs_table,
                                   const std::vector<InferencePoint>& pred,
                                   const HyperParams& params,
                                   const VarianceComponents& vc,
                                   const SparseFactor& factor,
                                   const std::vector<EventSummary>& events) {
  PosteriorResult r = predict(cat, obs_table, pred, params, vc, factor);
  r.mode = InferenceMode::Interpolation;
  std::map<int, const EventSummary*> by_var;
  for (const auto& e : events) by_var[e.variation] = &e;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto it = pred[i].variation >= 0 ? by_var.find(pred[i].variation)
                                     : by_var.end();
    if (it == by_var.end()) continue;  // degrade to prediction at this point
    const EventSummary& e = *it->second;
    double ne = static_cast<double>(e.n);
    double denom = vc.phi_ddot2 + ne * vc.tau_ddot2;
    auto ii = static_cast<Eigen::Index>(i);
    r.mean(ii) += vc.tau_ddot2 * e.mu / denom;
    r.bddot_variance(ii) =
        vc.tau_ddot2 * (1.0 - ne * vc.tau_ddot2 / denom);
    r.stddev(ii) = std::sqrt(r.total_variance(ii));
  }
  return r;
}

/// Deviations y_es - ybar_ls of every catalog record about its cell mean;
/// the inputs summarize_events expects.
inline std::vector<std::pair<int, double>> record_deviations(
    const ResidualCatalog& cat, const ScenarioMeanTable& table) {
  std::map<std::pair<int, int>, double> ybar;
  for (const auto& c : table.cells) ybar[{c.scenario, c.site}] = c.y_bar;
  std::vector<std::pair<int, double>> dev;
  dev.reserve(cat.records.size());
  for (const auto& rec : cat.records) {
    int sc = cat.variations[static_cast<std::size_t>(rec.variation)].scenario;
    auto it = ybar.find({sc, rec.site});
    if (it == ybar.end()) continue;
    dev.emplace_back(rec.variation, rec.y - it->second);
  }
  return dev;
}

struct GroupMetrics {
  Group group = Group::TrTr;
  bool present = false;
  long n_records = 0;
  long n_cells = 0;
  double rmse_ybar = 0.0;     // cell-level, vs the scenario-site mean
  double rmse_y = 0.0;        // record-level, vs the raw residual
  double mean_stddev = 0.0;   // average predicted stddev over cells
  double backbone_rmse = 0.0; // RMS of y (the backbone predicts residual 0)
  double reduction = 0.0;     // 1 - rmse_y / backbone_rmse
};

/// Per-group error metrics. Results are matched to truth by
/// (scenario, site) cell, with a (scenario, site, variation) entry taking
/// precedence for record-level errors when interpolation supplied one.
inline std::vector<GroupMetrics> evaluate_groups(
    const ResidualCatalog& cat, const ScenarioMeanTable& truth_means,
    const SplitAssignment& split_assignment,
    const std::vector<InferencePoint>& points, const PosteriorResult& result) {
  require(points.size() == static_cast<std::size_t>(result.mean.size()),
          "evaluate_groups: points/result size mismatch");
  std::map<std::tuple<int, int, int>, std::size_t> lookup;
  for (std::size_t i = 0; i < points.size(); ++i)
    lookup[{points[i].point.scenario, points[i].point.site,
            points[i].variation}] = i;

  auto find_pred = [&](int sc, int site, int var) -> std::optional<std::size_t> {
    auto it = lookup.find({sc, site, var});
    if (it != lookup.end()) return it->second;
    it = lookup.find({sc, site, -1});
    if (it != lookup.end()) return it->second;
    return std::nullopt;
  };

  std::array<GroupMetrics, 4> acc;
  for (int g = 0; g < 4; ++g) acc[static_cast<std::size_t>(g)].group = static_cast<Group>(g);
  std::array<double, 4> se_y{}, se_backbone{}, se_ybar{}, sd_sum{};

  for (const auto& rec : cat.records) {
    int sc = cat.variations[static_cast<std::size_t>(rec.variation)].scenario;
    auto pi = find_pred(sc, rec.site, rec.variation);
    if (!pi) continue;
    auto g = static_cast<std::size_t>(split_assignment.group(sc, rec.site));
    double err = result.mean(static_cast<Eigen::Index>(*pi)) - rec.y;
    se_y[g] += err * err;
    se_backbone[g] += rec.y * rec.y;
    acc[g].n_records += 1;
  }
  for (const auto& c : truth_means.cells) {
    auto pi = find_pred(c.scenario, c.site, -1);
    if (!pi) continue;
    auto g = static_cast<std::size_t>(
        split_assignment.group(c.scenario, c.site));
    double err = result.mean(static_cast<Eigen::Index>(*pi)) - c.y_bar;
    se_ybar[g] += err * err;
    sd_sum[g] += result.stddev(static_cast<Eigen::Index>(*pi));
    acc[g].n_cells += 1;
  }

  std::vector<GroupMetrics> out;
  for (std::size_t g = 0; g < 4; ++g) {
    GroupMetrics& m = acc[g];
    if (m.n_records == 0 && m.n_cells == 0) {
      out.push_back(m);
      continue;
    }
    m.present = true;
    if (m.n_records > 0) {
      m.rmse_y = std::sqrt(se_y[g] / static_cast<double>(m.n_records));
      m.backbone_rmse =
          std::sqrt(se_backbone[g] / static_cast<double>(m.n_records));
      m.reduction =
          m.backbone_rmse > 0 ? 1.0 - m.rmse_y / m.backbone_rmse : 0.0;
    }
    if (m.n_cells > 0) {
      m.rmse_ybar = std::sqrt(se_ybar[g] / static_cast<double>(m.n_cells));
      m.mean_stddev = sd_sum[g] / static_cast<double>(m.n_cells);
    }
    out.push_back(m);
  }
  return out;
}

/// Sample ground-motion residual fields from the posterior. Marginal in
/// the kernel part (diagonal reporting); the between-event terms share one
/// standard normal draw per scenario per realization, so same-scenario
/// points move together.
inline Eigen::MatrixXd sample_fields(const PosteriorResult& r,
                                     const std::vector<InferencePoint>& points,
                                     int n_realizations, std::uint64_t seed) {
  require(n_realizations >= 1, "sample_fields: need at least 1 realization");
  auto m = r.mean.size();
  Eigen::MatrixXd out(n_realizations, m);
  for (int real = 0; real < n_realizations; ++real) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(real));
    std::map<int, double> z_tau_dot, z_tau_ddot;
    for (Eigen::Index i = 0; i < m; ++i) {
      int sc = points[static_cast<std::size_t>(i)].point.scenario;
      if (!z_tau_dot.count(sc)) {
        z_tau_dot[sc] = rng.normal();
        z_tau_ddot[sc] = rng.normal();
      }
      double v = r.mean(i);
      v += std::sqrt(r.kernel_variance(i)) * rng.normal();
      v += std::sqrt(r.components.tau_dot2) * z_tau_dot[sc];
      v += std::sqrt(r.bddot_variance(i)) * z_tau_ddot[sc];
      v += std::sqrt(r.components.phi_dot2) * rng.normal();
      v += std::sqrt(r.components.phi_ddot2) * rng.normal();
      out(real, i) = v;
    }
  }
  return out;
}

}  // namespace ngmm
