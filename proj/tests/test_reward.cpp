#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "dccool/mdp.hpp"
#include "dccool/presets.hpp"
#include "dccool/reward.hpp"

using namespace dccool;

namespace {

// single cold sensor, single ACU, single rack: state dim 7, action dim 2
RoomLayout one_of_each() {
  RoomLayout lay;
  lay.name = "one";
  lay.racks.push_back({"rk0", 0, 2.0});
  lay.acus.push_back({"acu0", "left", 0, 3.0});
  lay.cold_sensors.push_back({"tc0", "cold", 0});
  lay.hot_sensors.push_back({"th0", "hot", 0});
  return lay;
}

Eigen::VectorXd state_with(const SegmentMap& m, double cold, double lwt) {
  Eigen::VectorXd s = Eigen::VectorXd::Constant(m.state_dim(), 20.0);
  for (int i : m.cold_idx) s[i] = cold;
  for (int i : m.lwt_idx) s[i] = lwt;
  return s;
}

}  // namespace

TEST_CASE("softplus: ln(1+e^x) with overflow-safe tail") {
  REQUIRE(softplus(0.0) == Catch::Approx(std::log(2.0)).epsilon(1e-15));
  REQUIRE(softplus(1.0) == Catch::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-15));
  // for large x, softplus(x) - x vanishes
  for (double x : {31.0, 50.0, 700.0, 1e6}) REQUIRE(softplus(x) - x < 1e-12);
  REQUIRE(softplus(800.0) == 800.0);  // no overflow
  REQUIRE(softplus(-800.0) == 0.0);   // no underflow surprise
  REQUIRE(softplus(-40.0) == Catch::Approx(std::exp(-40.0)).epsilon(1e-10));
}

TEST_CASE("reward: all penalties vanish at zero action and very cold temps") {
  const SegmentMap m = build_segment_map(one_of_each());
  RewardParams p;
  p.r0 = 5.0;
  p.rho_t = 25.0;
  p.rho_l = 20.0;
  const Eigen::VectorXd s = state_with(m, -400.0, -400.0);
  const Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
  REQUIRE(compute_reward(p, m, s, a) == Catch::Approx(5.0).margin(1e-12));
}

TEST_CASE("reward: f=0.5 at the cold threshold gives r0 - 0.125 - ln 2") {
  // M=N=1, f=0.5, o=0, T_c = rho_T, T_l far below rho_L, unit weights
  const SegmentMap m = build_segment_map(one_of_each());
  RewardParams p;
  p.r0 = 2.0;
  p.rho_t = 25.0;
  p.rho_l = 20.0;
  const Eigen::VectorXd s = state_with(m, 25.0, -400.0);
  Eigen::VectorXd a(2);
  a << 0.5, 0.0;
  REQUIRE(compute_reward(p, m, s, a) ==
          Catch::Approx(2.0 - 0.125 - std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("reward: strictly decreasing in every fan, valve and temperature") {
  const ExperimentPreset preset = make_testbed_preset();
  const SegmentMap m = build_segment_map(preset.layout);
  RewardParams p;
  p.rho_t = preset.rho_t;
  p.rho_l = preset.rho_l;
  p.beta1 = 0.7;
  p.beta2 = 2.0;
  p.beta3 = 0.4;
  p.beta4 = 1.1;

  Rng rng(99);
  for (int probe = 0; probe < 50; ++probe) {
    Eigen::VectorXd s = Eigen::VectorXd::Constant(m.state_dim(), 0.0);
    for (int i = 0; i < m.state_dim(); ++i) s[i] = rng.uniform(15.0, 30.0);
    Eigen::VectorXd a(m.action_dim());
    for (int i = 0; i < m.action_dim(); ++i) a[i] = rng.uniform(0.05, 0.95);
    const double base = compute_reward(p, m, s, a);

    for (int i = 0; i < m.action_dim(); ++i) {
      Eigen::VectorXd up = a;
      up[i] += 0.01;
      REQUIRE(compute_reward(p, m, s, up) < base);
    }
    for (int idx : m.cold_idx) {
      Eigen::VectorXd warmer = s;
      warmer[idx] += 0.5;
      REQUIRE(compute_reward(p, m, warmer, a) < base);
    }
    for (int idx : m.lwt_idx) {
      Eigen::VectorXd warmer = s;
      warmer[idx] += 0.5;
      REQUIRE(compute_reward(p, m, warmer, a) < base);
    }
  }
}

TEST_CASE("reward: dimension mismatches are shape errors") {
  const SegmentMap m = build_segment_map(one_of_each());
  RewardParams p;
  const Eigen::VectorXd s = state_with(m, 20.0, 15.0);
  REQUIRE_THROWS_AS(
      compute_reward(p, m, Eigen::VectorXd::Zero(m.state_dim() + 1),
                     Eigen::VectorXd::Zero(2)),
      ShapeError);
  REQUIRE_THROWS_AS(compute_reward(p, m, s, Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST_CASE("reward fit: beta is the reciprocal of the term mean") {
  // mean fan-cube term 0.125 -> beta1 = 8
  std::vector<RewardTerms> terms;
  for (int i = 0; i < 4; ++i) {
    RewardTerms t;
    t.fan_cube = 0.125;
    t.overtemp = 0.5;
    t.valve = 2.0;
    t.water = 0.25;
    terms.push_back(t);
  }
  const RewardFit fit = fit_reward_params(terms, 25.0, 20.0);
  REQUIRE(fit.params.beta1 == Catch::Approx(8.0).epsilon(1e-12));
  REQUIRE(fit.params.beta2 == Catch::Approx(2.0).epsilon(1e-12));
  REQUIRE(fit.params.beta3 == Catch::Approx(0.5).epsilon(1e-12));
  REQUIRE(fit.params.beta4 == Catch::Approx(4.0).epsilon(1e-12));
  REQUIRE(fit.warnings.empty());
  // identical transitions: every penalty sum is the worst one; min reward 1
  REQUIRE(compute_reward(fit.params, terms[0]) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("reward fit: minimum reward over the fitting set is exactly 1") {
  Rng rng(3);
  std::vector<RewardTerms> terms;
  for (int i = 0; i < 500; ++i) {
    RewardTerms t;
    t.fan_cube = rng.uniform(0.0, 1.0);
    t.overtemp = rng.uniform(0.01, 2.0);
    t.valve = rng.uniform(0.0, 2.0);
    t.water = rng.uniform(0.001, 0.5);
    terms.push_back(t);
  }
  const RewardFit fit = fit_reward_params(terms, 25.0, 20.0);
  double mn = 1e300;
  for (const auto& t : terms) mn = std::min(mn, compute_reward(fit.params, t));
  REQUIRE(mn == Catch::Approx(1.0).margin(1e-9));
  for (const auto& t : terms) REQUIRE(compute_reward(fit.params, t) >= 1.0 - 1e-9);
}

TEST_CASE("reward fit: near-zero term mean falls back to unit weight + warning") {
  // a dataset whose temperatures sit far below both thresholds
  std::vector<RewardTerms> terms;
  for (int i = 0; i < 20; ++i) {
    RewardTerms t;
    t.fan_cube = 0.2;
    t.overtemp = 0.0;  // softplus of very negative arguments
    t.valve = 0.5;
    t.water = 0.0;
    terms.push_back(t);
  }
  const RewardFit fit = fit_reward_params(terms, 25.0, 20.0);
  REQUIRE(fit.params.beta2 == 1.0);
  REQUIRE(fit.params.beta4 == 1.0);
  REQUIRE(fit.warnings.size() == 2);
  REQUIRE(fit.warnings[0].find("overtemp") != std::string::npos);
  REQUIRE(fit.warnings[1].find("water") != std::string::npos);
}

TEST_CASE("reward fit: empty dataset is a data error") {
  REQUIRE_THROWS_AS(fit_reward_params({}, 25.0, 20.0), DataError);
}

TEST_CASE("overtemp rescale: k=1 is the identity on beta2") {
  std::vector<RewardTerms> terms(10);
  for (auto& t : terms) {
    t.fan_cube = 0.1;
    t.overtemp = 0.4;
    t.valve = 0.3;
    t.water = 0.2;
  }
  const RewardFit fit = fit_reward_params(terms, 25.0, 20.0);
  const RewardParams same = rescale_overtemp_weight(fit.params, 1.0, terms);
  REQUIRE(same.beta2 == fit.params.beta2);
  REQUIRE(same.r0 == Catch::Approx(fit.params.r0).margin(1e-12));
}

TEST_CASE("overtemp rescale: k=5 multiplies beta2 exactly and re-anchors r0") {
  Rng rng(8);
  std::vector<RewardTerms> terms;
  for (int i = 0; i < 100; ++i) {
    RewardTerms t;
    t.fan_cube = rng.uniform(0.0, 0.3);
    t.overtemp = rng.uniform(0.1, 1.5);
    t.valve = rng.uniform(0.0, 1.0);
    t.water = rng.uniform(0.01, 0.4);
    terms.push_back(t);
  }
  const RewardFit fit = fit_reward_params(terms, 25.0, 20.0);
  for (double k : {5.0, 10.0}) {
    const RewardParams scaled = rescale_overtemp_weight(fit.params, k, terms);
    REQUIRE(scaled.beta2 == Catch::Approx(k * fit.params.beta2).epsilon(1e-14));
    // the other weights are untouched
    REQUIRE(scaled.beta1 == fit.params.beta1);
    REQUIRE(scaled.beta3 == fit.params.beta3);
    REQUIRE(scaled.beta4 == fit.params.beta4);
    // re-anchored: min reward over the fitting set is 1 again
    double mn = 1e300;
    for (const auto& t : terms) mn = std::min(mn, compute_reward(scaled, t));
    REQUIRE(mn == Catch::Approx(1.0).margin(1e-9));
  }
  REQUIRE_THROWS_AS(rescale_overtemp_weight(fit.params, 0.0, terms), ConfigError);
  REQUIRE_THROWS_AS(rescale_overtemp_weight(fit.params, 5.0, {}), DataError);
}

TEST_CASE("reward params: JSON round-trip") {
  RewardParams p;
  p.r0 = 30.25;
  p.beta1 = 29.9;
  p.beta2 = 0.9;
  p.beta3 = 3.0;
  p.beta4 = 11.0;
  p.rho_t = 22.0;
  const RewardParams back = RewardParams::from_json(p.to_json());
  REQUIRE(back.to_json() == p.to_json());
}

TEST_CASE("reward terms: simulator-scale sanity on the testbed segment map") {
  const ExperimentPreset preset = make_testbed_preset();
  const SegmentMap m = build_segment_map(preset.layout);
  Eigen::VectorXd s = Eigen::VectorXd::Constant(m.state_dim(), 21.0);
  Eigen::VectorXd a(m.action_dim());
  a << 0.5, 0.5;  // one ACU: fan, valve
  const RewardTerms t = compute_reward_terms(m, s, a, preset.rho_t, preset.rho_l);
  REQUIRE(t.fan_cube == Catch::Approx(0.125).margin(1e-15));
  REQUIRE(t.valve == Catch::Approx(0.5).margin(1e-15));
  // six cold sensors one degree below threshold
  REQUIRE(t.overtemp == Catch::Approx(6.0 * softplus(-1.0)).epsilon(1e-12));
  // one LWT one degree above its threshold
  REQUIRE(t.water == Catch::Approx(softplus(1.0)).epsilon(1e-12));
  // every term is nonnegative by construction
  REQUIRE(t.fan_cube >= 0.0);
  REQUIRE(t.overtemp >= 0.0);
  REQUIRE(t.valve >= 0.0);
  REQUIRE(t.water >= 0.0);
}
