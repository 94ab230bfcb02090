#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "ngmm/catalog.hpp"
#include "ngmm/kernel.hpp"
#include "ngmm/lmm.hpp"

namespace ngmm {

/// The six tunable parameters of the scenario-mean GP: kernel
/// hyperparameters plus the secondary variance components entering the
/// noise model.
struct HyperParams {
  KernelHyper kernel;
  double tau_dot2 = 0.0360;
  double phi_dot2 = 0.0545;
};

inline HyperParams preset_params(const std::string& name) {
  HyperParams p;
  p.kernel = preset_kernel(name);
  auto vc = preset_components(name);
  p.tau_dot2 = vc.tau_dot2;
  p.phi_dot2 = vc.phi_dot2;
  return p;
}

/// Leave-one-out pseudo-likelihood of a batch, via the precision-matrix
/// identities: with P = A^{-1} and alpha = P y,
///   E[y_i | y_-i]   = y_i - alpha_i / P_ii
///   COV[y_i | y_-i] = 1 / P_ii
/// Includes -1/2 ln(2 pi) per point.
inline double loo_cv_objective(const std::vector<PredictionPoint>& points,
                               const Eigen::VectorXd& values,
                               const HyperParams& p) {
  require(points.size() >= 2, "loo_cv_objective: need at least 2 points");
  require(values.size() == static_cast<Eigen::Index>(points.size()),
          "loo_cv_objective: value vector size mismatch");
  Eigen::MatrixXd A =
      assemble_train_cov(points, p.kernel, p.tau_dot2, p.phi_dot2);
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericError("loo_cv_objective: batch covariance not PD");
  auto n = A.rows();
  Eigen::MatrixXd P = llt.solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::VectorXd alpha = P * values;
  double obj = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double pii = P(i, i);
    obj += 0.5 * std::log(pii) - alpha(i) * alpha(i) / (2.0 * pii) -
           0.5 * std::log(2.0 * M_PI);
  }
  return obj;
}

struct TrainConfig {
  int batch_size = 256;
  int epochs = 60;
  int batches_per_epoch = 0;  // 0: every full batch of the shuffled table
  double learning_rate = 0.04;
  double lr_decay = 1.0;  // per-epoch multiplier
  std::uint64_t seed = 0;
  double fd_step = 1e-4;       // central difference step in log space
  double log_lower = -16.0;    // bounds in log-parameter space
  double log_upper = 8.0;
};

struct TrainTrace {
  std::vector<double> objective;                // per-epoch mean per point
  std::vector<std::array<double, 6>> params;    // snapshot per epoch
  bool aborted_nan = false;
  int epochs_completed = 0;
};

namespace detail {

inline std::array<double, 6> to_log(const HyperParams& p) {
  return {std::log(p.kernel.site_len), std::log(p.kernel.site_var),
          std::log(p.kernel.path_len), std::log(p.kernel.path_var),
          std::log(p.tau_dot2),        std::log(p.phi_dot2)};
}

inline HyperParams from_log(const std::array<double, 6>& w) {
  HyperParams p;
  p.kernel.site_len = std::exp(w[0]);
  p.kernel.site_var = std::exp(w[1]);
  p.kernel.path_len = std::exp(w[2]);
  p.kernel.path_var = std::exp(w[3]);
  p.tau_dot2 = std::exp(w[4]);
  p.phi_dot2 = std::exp(w[5]);
  return p;
}

}  // namespace detail

/// Mini-batched stochastic ascent on the LOO-CV objective. Batches are
/// contiguous chunks of the epoch-shuffled table; gradients are central
/// finite differences in log-parameter space; updates use adaptive-moment
/// scaling. Deterministic for a fixed seed.
inline std::pair<HyperParams, TrainTrace> fit(
    const ResidualCatalog& cat, const ScenarioMeanTable& table,
    const TrainConfig& cfg, const HyperParams& init) {
  require(!table.cells.empty(), "fit: empty table");
  require(cfg.batch_size >= 2, "fit: batch_size must be >= 2");
  require(cfg.epochs >= 1, "fit: epochs must be >= 1");
  init.kernel.validate();

  auto all_points = table_points(cat, table);
  Eigen::VectorXd all_values(static_cast<Eigen::Index>(table.cells.size()));
  for (std::size_t i = 0; i < table.cells.size(); ++i)
    all_values(static_cast<Eigen::Index>(i)) = table.cells[i].y_bar;

  std::size_t n = all_points.size();
  auto bsz = static_cast<std::size_t>(
      std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n));

  std::array<double, 6> w = detail::to_log(init);
  for (auto& x : w) x = std::clamp(x, cfg.log_lower, cfg.log_upper);
  std::array<double, 6> m{}, v{};
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step_count = 0;

  Rng rng = Rng::derive(cfg.seed, 0x7261696e);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainTrace trace;
  double lr = cfg.learning_rate;

  std::vector<PredictionPoint> bp(bsz);
  Eigen::VectorXd bv(static_cast<Eigen::Index>(bsz));

  auto batch_obj = [&](const std::array<double, 6>& lw) {
    return loo_cv_objective(bp, bv, detail::from_log(lw)) /
           static_cast<double>(bsz);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = rng.below(i);
      std::swap(order[i - 1], order[j]);
    }
    std::size_t nb = n / bsz;
    if (cfg.batches_per_epoch > 0)
      nb = std::min(nb, static_cast<std::size_t>(cfg.batches_per_epoch));
    nb = std::max<std::size_t>(nb, 1);
    double epoch_obj = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t i = 0; i < bsz; ++i) {
        std::size_t idx = order[(b * bsz + i) % n];
        bp[i] = all_points[idx];
        bv(static_cast<Eigen::Index>(i)) = all_values(
            static_cast<Eigen::Index>(idx));
      }
      double f0 = batch_obj(w);
      if (!std::isfinite(f0)) {
        trace.aborted_nan = true;
        trace.epochs_completed = epoch;
        return {detail::from_log(w), trace};
      }
      epoch_obj += f0;
      if (lr > 0.0) {
        std::array<double, 6> g{};
        for (int d = 0; d < 6; ++d) {
          auto wp = w, wm = w;
          wp[static_cast<std::size_t>(d)] += cfg.fd_step;
          wm[static_cast<std::size_t>(d)] -= cfg.fd_step;
          g[static_cast<std::size_t>(d)] =
              (batch_obj(wp) - batch_obj(wm)) / (2.0 * cfg.fd_step);
        }
        ++step_count;
        for (int d = 0; d < 6; ++d) {
          auto du = static_cast<std::size_t>(d);
          m[du] = b1 * m[du] + (1 - b1) * g[du];
          v[du] = b2 * v[du] + (1 - b2) * g[du] * g[du];
          double mh = m[du] / (1 - std::pow(b1, step_count));
          double vh = v[du] / (1 - std::pow(b2, step_count));
          w[du] += lr * mh / (std::sqrt(vh) + eps);
          w[du] = std::clamp(w[du], cfg.log_lower, cfg.log_upper);
        }
      }
    }
    trace.objective.push_back(epoch_obj / static_cast<double>(nb));
    trace.params.push_back(w);
    trace.epochs_completed = epoch + 1;
    lr *= cfg.lr_decay;
  }
  return {detail::from_log(w), trace};
}

}  // namespace ngmm
