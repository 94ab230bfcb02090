#include <catch_amalgamated.hpp>

#include "ngmm/inference.hpp"
#include "ngmm/synth.hpp"

using namespace ngmm;

namespace {

struct Fixture {
  ResidualCatalog cat;
  SynthTruth truth;
  ScenarioMeanTable table;
  HyperParams params = preset_params("ngmm1");
  VarianceComponents vc = preset_components("ngmm1");
  SparseFactor factor;

  explicit Fixture(int n_sites = 12, int n_scenarios = 10,
                   std::uint64_t seed = 17) {
    SynthSpec spec;
    spec.n_sites = n_sites;
    spec.n_scenarios = n_scenarios;
    spec.var_min = 3;
    spec.var_max = 5;
    spec.seed = seed;
    std::tie(cat, truth) = generate(spec);
    table = collapse_to_means(cat);
    auto pts = table_points(cat, table);
    auto d = [&](int i, int j) {
      return path_distance(pts[static_cast<std::size_t>(i)],
                           pts[static_cast<std::size_t>(j)]);
    };
    auto ord = reverse_maximin(static_cast<int>(pts.size()), d);
    auto pat = build_pattern(ord, 1e12, d);  // exact factor
    factor = factorize(
        [&](int i, int j) {
          double v = kernel_value(pts[static_cast<std::size_t>(i)],
                                  pts[static_cast<std::size_t>(j)],
                                  params.kernel);
          if (pts[static_cast<std::size_t>(i)].scenario ==
              pts[static_cast<std::size_t>(j)].scenario)
            v += params.tau_dot2;
          if (i == j) v += params.phi_dot2 + jitter(params.kernel);
          return v;
        },
        ord, pat, 1);
  }
};

}  // namespace

TEST_CASE("far-from-data points revert to the prior") {
  Fixture fx;
  InferencePoint ip;
  ip.point.site_x = 1e6;
  ip.point.site_y = 1e6;
  ip.point.src_x = 1e6;
  ip.point.src_y = 1e6;
  ip.point.scenario = 0;
  ip.point.site = 0;
  auto r = predict(fx.cat, fx.table, {ip}, fx.params, fx.vc, fx.factor);
  CHECK(std::fabs(r.mean(0)) < 1e-9);
  double expect = std::sqrt(fx.params.kernel.prior_variance() +
                            fx.params.tau_dot2 + fx.params.phi_dot2 +
                            fx.vc.tau_ddot2 + fx.vc.phi_ddot2);
  CHECK(r.stddev(0) == Catch::Approx(expect).epsilon(1e-9));
}

TEST_CASE("prediction matches a from-scratch dense evaluation") {
  Fixture fx;
  std::vector<InferencePoint> pred;
  Rng rng(8);
  for (int i = 0; i < 6; ++i) {
    InferencePoint ip;
    ip.point.site_x = rng.uniform(0, 100);
    ip.point.site_y = rng.uniform(0, 100);
    ip.point.src_x = rng.uniform(0, 100);
    ip.point.src_y = rng.uniform(0, 100);
    ip.point.scenario = 999 + i;  // unseen scenarios
    ip.point.site = -1;
    pred.push_back(ip);
  }
  auto r = predict(fx.cat, fx.table, pred, fx.params, fx.vc, fx.factor);

  auto obs_pts = table_points(fx.cat, fx.table);
  Eigen::MatrixXd A = assemble_train_cov(obs_pts, fx.params.kernel,
                                         fx.params.tau_dot2,
                                         fx.params.phi_dot2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(fx.table.cells.size()));
  for (std::size_t i = 0; i < fx.table.cells.size(); ++i)
    y(static_cast<Eigen::Index>(i)) = fx.table.cells[i].y_bar;
  std::vector<PredictionPoint> pp;
  for (const auto& ip : pred) pp.push_back(ip.point);
  Eigen::MatrixXd cross = assemble_cross_cov(pp, obs_pts, fx.params.kernel);
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  Eigen::VectorXd mean = cross * llt.solve(y);
  for (int i = 0; i < 6; ++i) {
    CHECK(r.mean(i) == Catch::Approx(mean(i)).margin(1e-8));
    double kv = fx.params.kernel.prior_variance() -
                cross.row(i).dot(llt.solve(cross.row(i).transpose()));
    double total = kv + fx.params.tau_dot2 + fx.params.phi_dot2 +
                   fx.vc.tau_ddot2 + fx.vc.phi_ddot2;
    CHECK(r.stddev(i) == Catch::Approx(std::sqrt(total)).margin(1e-8));
  }
}

TEST_CASE("interpolation applies the exact shrinkage correction") {
  Fixture fx;
  auto events = summarize_events(record_deviations(fx.cat, fx.table));
  // pick a variation with records
  int var = events.front().variation;
  int scen = fx.cat.variations[static_cast<std::size_t>(var)].scenario;
  InferencePoint ip;
  ip.point = make_point(fx.cat, scen, 3);
  ip.variation = var;
  auto rp = predict(fx.cat, fx.table, {ip}, fx.params, fx.vc, fx.factor);
  auto ri = interpolate(fx.cat, fx.table, {ip}, fx.params, fx.vc, fx.factor,
                        events);
  const auto& e = events.front();
  double ne = static_cast<double>(e.n);
  double denom = fx.vc.phi_ddot2 + ne * fx.vc.tau_ddot2;
  CHECK(ri.mean(0) - rp.mean(0) ==
        Catch::Approx(fx.vc.tau_ddot2 * e.mu / denom).margin(1e-12));
  CHECK(ri.bddot_variance(0) ==
        Catch::Approx(fx.vc.tau_ddot2 *
                      (1.0 - ne * fx.vc.tau_ddot2 / denom)).margin(1e-15));
  CHECK(ri.stddev(0) < rp.stddev(0));
}

TEST_CASE("two-record event matches a dense random-effect solve") {
  // two observed deviations of one event; the conditional mean of the
  // shared effect comes from the 2x2 system (tau2 11^T + phi2 I) z = x
  VarianceComponents vc = preset_components("ngmm1");
  std::vector<std::pair<int, double>> dev{{0, 0.31}, {0, -0.12}};
  auto events = summarize_events(dev);
  Eigen::Matrix2d V = Eigen::Matrix2d::Constant(vc.tau_ddot2);
  V.diagonal().array() += vc.phi_ddot2;
  Eigen::Vector2d x(0.31, -0.12);
  double dense = vc.tau_ddot2 * Eigen::Vector2d::Ones().dot(V.llt().solve(x));
  auto eff = condition_random_effects(events, vc);
  CHECK(eff.at(0) == Catch::Approx(dense).epsilon(1e-10));
}

TEST_CASE("unknown variations degrade interpolation to prediction exactly") {
  Fixture fx;
  auto events = summarize_events(record_deviations(fx.cat, fx.table));
  InferencePoint ip;
  ip.point = make_point(fx.cat, 2, 5);
  ip.variation = -1;
  auto rp = predict(fx.cat, fx.table, {ip}, fx.params, fx.vc, fx.factor);
  auto ri = interpolate(fx.cat, fx.table, {ip}, fx.params, fx.vc, fx.factor,
                        events);
  CHECK(ri.mean(0) == rp.mean(0));
  CHECK(ri.stddev(0) == rp.stddev(0));
  CHECK(ri.bddot_variance(0) == rp.bddot_variance(0));

  // same with an empty event list
  auto r0 = interpolate(fx.cat, fx.table, {ip}, fx.params, fx.vc, fx.factor,
                        {});
  CHECK(r0.mean(0) == rp.mean(0));
  CHECK(r0.stddev(0) == rp.stddev(0));
}

TEST_CASE("posterior kernel variance never exceeds the prior variance") {
  Fixture fx;
  std::vector<InferencePoint> pred;
  Rng rng(4);
  for (int i = 0; i < 30; ++i) {
    InferencePoint ip;
    ip.point.site_x = rng.uniform(-50, 150);
    ip.point.site_y = rng.uniform(-50, 150);
    ip.point.src_x = rng.uniform(-50, 150);
    ip.point.src_y = rng.uniform(-50, 150);
    ip.point.scenario = -1;
    pred.push_back(ip);
  }
  auto r = predict(fx.cat, fx.table, pred, fx.params, fx.vc, fx.factor);
  for (int i = 0; i < 30; ++i) {
    CHECK(r.kernel_variance(i) >= 0.0);
    CHECK(r.kernel_variance(i) <=
          fx.params.kernel.prior_variance() + 1e-10);
  }
}

TEST_CASE("group metrics for perfect and zero predictors") {
  Fixture fx;
  auto sa = split(fx.cat.sites.size(), fx.cat.scenarios.size(), 0.25, 0.4, 3);
  std::vector<InferencePoint> pts;
  for (const auto& c : fx.table.cells) {
    InferencePoint ip;
    ip.point = make_point(fx.cat, c.scenario, c.site);
    pts.push_back(ip);
  }
  PosteriorResult perfect;
  auto m = static_cast<Eigen::Index>(pts.size());
  perfect.mean.resize(m);
  for (std::size_t i = 0; i < pts.size(); ++i)
    perfect.mean(static_cast<Eigen::Index>(i)) = fx.table.cells[i].y_bar;
  perfect.stddev = Eigen::VectorXd::Zero(m);
  auto gm = evaluate_groups(fx.cat, fx.table, sa, pts, perfect);
  for (const auto& g : gm) {
    if (!g.present) continue;
    CHECK(g.rmse_ybar == Catch::Approx(0.0).margin(1e-12));
  }

  PosteriorResult zero;
  zero.mean = Eigen::VectorXd::Zero(m);
  zero.stddev = Eigen::VectorXd::Zero(m);
  gm = evaluate_groups(fx.cat, fx.table, sa, pts, zero);
  for (const auto& g : gm) {
    if (!g.present) continue;
    CHECK(g.rmse_y == Catch::Approx(g.backbone_rmse).margin(1e-12));
    CHECK(g.reduction == Catch::Approx(0.0).margin(1e-12));
    CHECK(g.n_records > 0);
  }
}

TEST_CASE("field sampling is seeded and respects the posterior moments") {
  Fixture fx;
  std::vector<InferencePoint> pts;
  for (int s = 0; s < 4; ++s) {
    InferencePoint ip;
    ip.point = make_point(fx.cat, 1, s);
    pts.push_back(ip);
  }
  auto r = predict(fx.cat, fx.table, pts, fx.params, fx.vc, fx.factor);
  auto f1 = sample_fields(r, pts, 2000, 77);
  auto f2 = sample_fields(r, pts, 2000, 77);
  CHECK(f1 == f2);
  for (int i = 0; i < 4; ++i) {
    double mean = f1.col(i).mean();
    double var =
        (f1.col(i).array() - mean).square().sum() / (f1.rows() - 1.0);
    CHECK(mean == Catch::Approx(r.mean(i)).margin(0.05));
    CHECK(var == Catch::Approx(r.stddev(i) * r.stddev(i)).epsilon(0.15));
  }
  // same-scenario points share the event draws: residuals about the mean
  // must be positively correlated
  Eigen::VectorXd a = f1.col(0).array() - r.mean(0);
  Eigen::VectorXd b = f1.col(1).array() - r.mean(1);
  double corr = a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm());
  CHECK(corr > 0.1);
}
