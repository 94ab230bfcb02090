#include <catch_amalgamated.hpp>

#include "ngmm/synth.hpp"
#include "ngmm/trainer.hpp"

using namespace ngmm;

namespace {

std::vector<PredictionPoint> random_points(int n, Rng& rng, int n_scen = 3) {
  std::vector<PredictionPoint> pts;
  for (int i = 0; i < n; ++i) {
    PredictionPoint p;
    p.site_x = rng.uniform(0, 60);
    p.site_y = rng.uniform(0, 60);
    p.src_x = rng.uniform(0, 60);
    p.src_y = rng.uniform(0, 60);
    p.scenario = static_cast<int>(rng.below(
        static_cast<std::uint64_t>(n_scen)));
    p.site = i;
    pts.push_back(p);
  }
  return pts;
}

// Explicit hold-out oracle: for each point, fit the exact GP posterior on
// the remaining points and evaluate the held-out log density.
double brute_loo(const std::vector<PredictionPoint>& pts,
                 const Eigen::VectorXd& y, const HyperParams& p) {
  auto n = static_cast<int>(pts.size());
  Eigen::MatrixXd A =
      assemble_train_cov(pts, p.kernel, p.tau_dot2, p.phi_dot2);
  double obj = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<int> rest;
    for (int j = 0; j < n; ++j)
      if (j != i) rest.push_back(j);
    auto m = static_cast<Eigen::Index>(rest.size());
    Eigen::MatrixXd Ar(m, m);
    Eigen::VectorXd cr(m), yr(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      cr(a) = A(i, rest[static_cast<std::size_t>(a)]);
      yr(a) = y(rest[static_cast<std::size_t>(a)]);
      for (Eigen::Index b = 0; b < m; ++b)
        Ar(a, b) = A(rest[static_cast<std::size_t>(a)],
                     rest[static_cast<std::size_t>(b)]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Ar);
    double mean = cr.dot(llt.solve(yr));
    double var = A(i, i) - cr.dot(llt.solve(cr));
    double r = y(i) - mean;
    obj += -0.5 * std::log(var) - r * r / (2 * var) -
           0.5 * std::log(2 * M_PI);
  }
  return obj;
}

}  // namespace

TEST_CASE("pure-noise objective is a sum of standard normal densities") {
  // kernel contribution made negligible; unit noise on the diagonal
  HyperParams p;
  p.kernel.site_var = 1e-14;
  p.kernel.path_var = 1e-14;
  p.kernel.site_len = 1.0;
  p.kernel.path_len = 1.0;
  p.tau_dot2 = 0.0;
  p.phi_dot2 = 1.0;
  std::vector<PredictionPoint> pts(2);
  pts[0].site_x = 0;
  pts[0].scenario = 0;
  pts[1].site_x = 500;
  pts[1].scenario = 1;
  Eigen::VectorXd y(2);
  y << 0.7, -1.2;
  double expect = 0.0;
  for (int i = 0; i < 2; ++i)
    expect += -0.5 * std::log(2 * M_PI) - y(i) * y(i) / 2;
  CHECK(loo_cv_objective(pts, y, p) == Catch::Approx(expect).epsilon(1e-9));
}

TEST_CASE("objective equals explicit hold-out refits") {
  HyperParams p = preset_params("ngmm1");
  for (int n = 2; n <= 8; ++n) {
    Rng rng(static_cast<std::uint64_t>(100 + n));
    auto pts = random_points(n, rng);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = 0.4 * rng.normal();
    double fast = loo_cv_objective(pts, y, p);
    double slow = brute_loo(pts, y, p);
    CHECK(fast == Catch::Approx(slow).epsilon(1e-9));
  }
}

TEST_CASE("objective is invariant to point order within a batch") {
  HyperParams p = preset_params("ngmm2");
  Rng rng(7);
  auto pts = random_points(10, rng);
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) y(i) = 0.3 * rng.normal();
  double a = loo_cv_objective(pts, y, p);
  std::vector<PredictionPoint> rev(pts.rbegin(), pts.rend());
  Eigen::VectorXd yr = y.reverse();
  double b = loo_cv_objective(rev, yr, p);
  CHECK(a == Catch::Approx(b).epsilon(1e-12));
}

TEST_CASE("duplicating a consistent point raises its held-out density") {
  HyperParams p = preset_params("ngmm1");
  p.tau_dot2 = 1e-6;
  p.phi_dot2 = 1e-6;
  Rng rng(3);
  auto pts = random_points(5, rng);
  Eigen::VectorXd y(5);
  for (int i = 0; i < 5; ++i) y(i) = 0.2 * rng.normal();
  double base = loo_cv_objective(pts, y, p) / 5.0;
  auto dup = pts;
  dup.push_back(pts[0]);
  Eigen::VectorXd yd(6);
  yd << y, y(0);
  double with_dup = loo_cv_objective(dup, yd, p) / 6.0;
  CHECK(with_dup > base);
}

TEST_CASE("zero learning rate is a fixed point of training") {
  SynthSpec spec;
  spec.n_sites = 12;
  spec.n_scenarios = 10;
  spec.var_min = 2;
  spec.var_max = 4;
  spec.seed = 5;
  auto [cat, truth] = generate(spec);
  auto table = collapse_to_means(cat);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  cfg.seed = 1;
  HyperParams init = preset_params("ngmm1");
  auto [out, trace] = fit(cat, table, cfg, init);
  CHECK(out.kernel.site_len == Catch::Approx(init.kernel.site_len));
  CHECK(out.kernel.path_var == Catch::Approx(init.kernel.path_var));
  CHECK(out.tau_dot2 == Catch::Approx(init.tau_dot2));
  CHECK(trace.epochs_completed == 3);
}

TEST_CASE("training is deterministic for a fixed seed") {
  SynthSpec spec;
  spec.n_sites = 10;
  spec.n_scenarios = 8;
  spec.var_min = 2;
  spec.var_max = 3;
  spec.seed = 11;
  auto [cat, truth] = generate(spec);
  auto table = collapse_to_means(cat);
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.epochs = 4;
  cfg.seed = 99;
  HyperParams init = preset_params("ngmm1");
  auto [o1, t1] = fit(cat, table, cfg, init);
  auto [o2, t2] = fit(cat, table, cfg, init);
  CHECK(t1.objective == t2.objective);
  CHECK(o1.kernel.site_len == o2.kernel.site_len);
  CHECK(o1.phi_dot2 == o2.phi_dot2);

  cfg.seed = 100;
  auto [o3, t3] = fit(cat, table, cfg, init);
  CHECK(t1.objective != t3.objective);
}

TEST_CASE("training improves the objective on synthetic data") {
  SynthSpec spec;
  spec.n_sites = 20;
  spec.n_scenarios = 25;
  spec.var_min = 3;
  spec.var_max = 6;
  spec.seed = 21;
  auto [cat, truth] = generate(spec);
  auto table = collapse_to_means(cat);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.epochs = 12;
  cfg.seed = 7;
  HyperParams init = preset_params("ngmm1");
  init.kernel.site_len *= 3.0;  // start away from the generating values
  init.kernel.path_len *= 0.4;
  init.phi_dot2 *= 2.5;
  auto [out, trace] = fit(cat, table, cfg, init);
  REQUIRE(trace.objective.size() == 12);
  CHECK(trace.objective.back() > trace.objective.front());
  CHECK(!trace.aborted_nan);
}

TEST_CASE("parameters stay inside the configured bounds") {
  SynthSpec spec;
  spec.n_sites = 8;
  spec.n_scenarios = 6;
  spec.seed = 3;
  auto [cat, truth] = generate(spec);
  auto table = collapse_to_means(cat);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 5;
  cfg.learning_rate = 5.0;  // absurd rate: bounds must still hold
  cfg.log_lower = -4.0;
  cfg.log_upper = 4.0;
  cfg.seed = 2;
  auto [out, trace] = fit(cat, table, cfg, preset_params("ngmm1"));
  for (double v : {out.kernel.site_len, out.kernel.site_var,
                   out.kernel.path_len, out.kernel.path_var, out.tau_dot2,
                   out.phi_dot2}) {
    CHECK(std::log(v) >= -4.0 - 1e-12);
    CHECK(std::log(v) <= 4.0 + 1e-12);
  }
}
