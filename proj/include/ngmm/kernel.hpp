#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "ngmm/common.hpp"
#include "ngmm/types.hpp"

namespace ngmm {

enum class MaternNu { Half, ThreeHalves, FiveHalves };

inline MaternNu matern_from_string(const std::string& s) {
  if (s == "1/2" || s == "0.5") return MaternNu::Half;
  if (s == "3/2" || s == "1.5") return MaternNu::ThreeHalves;
  if (s == "5/2" || s == "2.5") return MaternNu::FiveHalves;
  throw std::invalid_argument("matern_nu must be one of 1/2, 3/2, 5/2");
}

/// Unit-variance Matern correlation at distance d with length scale ell.
inline double matern(MaternNu nu, double d, double ell) {
  double r = d / ell;
  switch (nu) {
    case MaternNu::Half:
      return std::exp(-r);
    case MaternNu::ThreeHalves: {
      double a = std::sqrt(3.0) * r;
      return (1.0 + a) * std::exp(-a);
    }
    case MaternNu::FiveHalves: {
      double a = std::sqrt(5.0) * r;
      return (1.0 + a + a * a / 3.0) * std::exp(-a);
    }
  }
  return 0.0;
}

/// Additive site + path kernel. Site term acts on the 2D site distance,
/// path term on the 4D distance between concatenated (site, source-point)
/// coordinates. Variances in ln-units^2, lengths in km.
struct KernelHyper {
  double site_var = 0.098;   // omega^2_S
  double site_len = 9.352;   // ell_S (km)
  double path_var = 0.073;   // omega^2_P
  double path_len = 8.566;   // ell_P (km)
  MaternNu nu = MaternNu::ThreeHalves;

  void validate() const {
    require(site_var > 0 && path_var > 0, "kernel variances must be > 0");
    require(site_len > 0 && path_len > 0, "kernel length scales must be > 0");
  }

  double prior_variance() const { return site_var + path_var; }
};

struct PredictionPoint {
  double site_x = 0.0, site_y = 0.0;
  double src_x = 0.0, src_y = 0.0;
  int scenario = -1;
  int site = -1;
};

inline PredictionPoint make_point(const ResidualCatalog& cat, int scenario,
                                  int site) {
  PredictionPoint p;
  const auto& s = cat.sites[static_cast<std::size_t>(site)];
  const auto& sc = cat.scenarios[static_cast<std::size_t>(scenario)];
  p.site_x = s.x_km;
  p.site_y = s.y_km;
  p.src_x = sc.closest_point_x_km;
  p.src_y = sc.closest_point_y_km;
  p.scenario = scenario;
  p.site = site;
  return p;
}

inline std::vector<PredictionPoint> table_points(const ResidualCatalog& cat,
                                                 const ScenarioMeanTable& t) {
  std::vector<PredictionPoint> pts;
  pts.reserve(t.cells.size());
  for (const auto& c : t.cells) pts.push_back(make_point(cat, c.scenario, c.site));
  return pts;
}

inline double site_distance(const PredictionPoint& p,
                            const PredictionPoint& q) {
  double dx = p.site_x - q.site_x, dy = p.site_y - q.site_y;
  return std::sqrt(dx * dx + dy * dy);
}

/// Euclidean distance between the concatenated (site, source) 4-vectors.
inline double path_distance(const PredictionPoint& p,
                            const PredictionPoint& q) {
  double a = p.site_x - q.site_x, b = p.site_y - q.site_y;
  double c = p.src_x - q.src_x, d = p.src_y - q.src_y;
  return std::sqrt(a * a + b * b + c * c + d * d);
}

inline double kernel_value(const PredictionPoint& p, const PredictionPoint& q,
                           const KernelHyper& h) {
  return h.site_var * matern(h.nu, site_distance(p, q), h.site_len) +
         h.path_var * matern(h.nu, path_distance(p, q), h.path_len);
}

/// Diagonal jitter applied before factorization; negligible next to the
/// phi noise term.
inline double jitter(const KernelHyper& h) {
  return 1e-9 * h.prior_variance();
}

/// K_f + phi^2 I + tau^2 1, where 1 couples rows/columns that share a
/// scenario.
inline Eigen::MatrixXd assemble_train_cov(
    const std::vector<PredictionPoint>& points, const KernelHyper& h,
    double tau2, double phi2) {
  require(!points.empty(), "assemble_train_cov: no points");
  require(tau2 >= 0 && phi2 >= 0, "variance components must be >= 0");
  h.validate();
  auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto iu = static_cast<std::size_t>(i);
    for (Eigen::Index j = 0; j <= i; ++j) {
      auto ju = static_cast<std::size_t>(j);
      double v = kernel_value(points[iu], points[ju], h);
      if (points[iu].scenario == points[ju].scenario) v += tau2;
      K(i, j) = v;
      K(j, i) = v;
    }
    K(i, i) += phi2 + jitter(h);
  }
  return K;
}

/// Cross-covariance block k_f: pure kernel values, no noise augmentation.
inline Eigen::MatrixXd assemble_cross_cov(
    const std::vector<PredictionPoint>& pred,
    const std::vector<PredictionPoint>& obs, const KernelHyper& h) {
  h.validate();
  Eigen::MatrixXd K(static_cast<Eigen::Index>(pred.size()),
                    static_cast<Eigen::Index>(obs.size()));
  for (Eigen::Index i = 0; i < K.rows(); ++i)
    for (Eigen::Index j = 0; j < K.cols(); ++j)
      K(i, j) = kernel_value(pred[static_cast<std::size_t>(i)],
                             obs[static_cast<std::size_t>(j)], h);
  return K;
}

/// Table 2 presets.
inline KernelHyper preset_kernel(const std::string& name) {
  KernelHyper h;
  if (name == "ngmm1") {
    h.site_var = 0.098;
    h.site_len = 9.352;
    h.path_var = 0.073;
    h.path_len = 8.566;
  } else if (name == "ngmm2") {
    h.site_var = 0.177;
    h.site_len = 11.351;
    h.path_var = 0.070;
    h.path_len = 6.173;
  } else {
    throw std::invalid_argument("unknown kernel preset: " + name);
  }
  return h;
}

}  // namespace ngmm
