#include <catch_amalgamated.hpp>

#include "ngmm/fragility.hpp"

using namespace ngmm;

namespace {

FragilitySet demo_set() {
  FragilitySet s;
  s.states = {{"slight", 0.15, 0.6},
              {"moderate", 0.30, 0.6},
              {"extensive", 0.55, 0.6},
              {"complete", 0.90, 0.6}};
  return s;
}

}  // namespace

TEST_CASE("exceedance is one half at the translated median") {
  auto set = translate(demo_set(), 1.4);
  for (const auto& st : set.states)
    CHECK(exceedance(st, st.alpha) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("unit ratio translation is the identity") {
  auto set = demo_set();
  auto t = translate(set, 1.0);
  for (std::size_t k = 0; k < set.states.size(); ++k) {
    CHECK(t.states[k].alpha == set.states[k].alpha);
    CHECK(t.states[k].beta == set.states[k].beta);
  }
  CHECK_THROWS_AS(translate(set, 0.0), std::invalid_argument);
}

TEST_CASE("vanishing dispersion approaches a step at the median") {
  FragilityState st{"x", 0.4, 1e-9};
  CHECK(exceedance(st, 0.39) == Catch::Approx(0.0).margin(1e-12));
  CHECK(exceedance(st, 0.41) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("state probabilities match direct normal-CDF arithmetic") {
  FragilitySet s;
  s.states = {{"a", 0.2, 0.5}, {"b", 0.4, 0.5}};
  double psa = 0.3;
  auto p = state_probabilities(s, psa);
  double e1 = normal_cdf(std::log(psa), std::log(0.2), 0.5);
  double e2 = normal_cdf(std::log(psa), std::log(0.4), 0.5);
  REQUIRE(p.size() == 3);
  CHECK(p[0] == Catch::Approx(1 - e1).epsilon(1e-14));
  CHECK(p[1] == Catch::Approx(e1 - e2).epsilon(1e-14));
  CHECK(p[2] == Catch::Approx(e2).epsilon(1e-14));
}

TEST_CASE("probability vectors are normalized at every intensity") {
  auto set = demo_set();
  for (double psa : {1e-6, 0.01, 0.1, 0.2, 0.5, 0.9, 2.0, 50.0}) {
    auto p = state_probabilities(set, psa);
    double sum = 0;
    for (double v : p) {
      CHECK(v >= -1e-15);
      sum += v;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("extreme intensities concentrate on the end states") {
  auto set = demo_set();
  auto lo = state_probabilities(set, 1e-12);
  CHECK(lo.front() == Catch::Approx(1.0).margin(1e-12));
  auto hi = state_probabilities(set, 1e6);
  CHECK(hi.back() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("scaling medians and intensity together changes nothing") {
  auto set = demo_set();
  double psa = 0.33, c = 7.3;
  auto p1 = state_probabilities(set, psa);
  FragilitySet scaled = set;
  for (auto& st : scaled.states) st.alpha *= c;
  auto p2 = state_probabilities(scaled, psa * c);
  for (std::size_t k = 0; k < p1.size(); ++k)
    CHECK(p1[k] == Catch::Approx(p2[k]).margin(1e-12));
}

TEST_CASE("crossing fragility curves are rejected with state names") {
  FragilitySet s;
  s.states = {{"a", 0.2, 0.2}, {"b", 0.25, 1.5}};  // crosses at low psa
  bool threw = false;
  try {
    state_probabilities(s, 1e-4);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("a") != std::string::npos);
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("validation rejects malformed sets") {
  FragilitySet s;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.states = {{"a", 0.4, 0.5}, {"b", 0.3, 0.5}};  // not increasing
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.states = {{"a", 0.4, 0.0}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("damage sampling frequencies sit inside binomial bands") {
  auto set = demo_set();
  std::vector<Facility> fac{{"F1", 0, 0, 1.2}};
  int n = 100000;
  Eigen::MatrixXd field = Eigen::MatrixXd::Constant(n, 1, 0.45);
  auto [reals, stats] = sample_damage(field, fac, set, 5);
  REQUIRE(reals.size() == static_cast<std::size_t>(n));
  auto p = state_probabilities(translate(set, 1.2), 0.45);
  for (std::size_t k = 0; k < p.size(); ++k) {
    double freq = stats.frequency(0, static_cast<Eigen::Index>(k));
    double sd = std::sqrt(p[k] * (1 - p[k]) / n);
    CHECK(std::fabs(freq - p[k]) <= 3 * sd + 1e-12);
  }
}

TEST_CASE("zero intensity leaves every facility undamaged") {
  auto set = demo_set();
  std::vector<Facility> fac{{"F1", 0, 0, 1.0}, {"F2", 1, 1, 0.8}};
  Eigen::MatrixXd field = Eigen::MatrixXd::Zero(50, 2);
  auto [reals, stats] = sample_damage(field, fac, set, 2);
  for (const auto& r : reals)
    for (int s : r.state) CHECK(s == 0);
  CHECK(stats.expected_state_count[0] == Catch::Approx(2.0));
}

TEST_CASE("damage sampling is reproducible per seed") {
  auto set = demo_set();
  std::vector<Facility> fac{{"F1", 0, 0, 1.0}, {"F2", 1, 1, 1.5}};
  Eigen::MatrixXd field(3, 2);
  field << 0.2, 0.5, 0.9, 0.1, 0.4, 0.4;
  auto [a, sa] = sample_damage(field, fac, set, 42);
  auto [b, sb] = sample_damage(field, fac, set, 42);
  auto [c, sc] = sample_damage(field, fac, set, 43);
  REQUIRE(a.size() == b.size());
  bool same = true, diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].state == b[i].state;
    diff = diff || a[i].state != c[i].state;
  }
  CHECK(same);
  CHECK(diff);
}
