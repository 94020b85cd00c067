#pragma once

// Reward shaping for the cooling controller. One scalar per transition:
//
//   r = r0 - b1 * sum_m fan_m^3
//          - b2 * sum_n softplus(Tcold_n - rho_T)
//          - b3 * sum_m valve_m
//          - b4 * sum_m softplus(Tlwt_m - rho_L)
//
// Temperatures are raw deg C taken from the NEXT state of the transition;
// fan/valve commands are normalized to [0,1]. The b_i are fit on a behavior
// dataset so each penalty term contributes at unit mean scale, and r0 shifts
// the worst observed transition to a reward of exactly 1.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "dccool/common.hpp"
#include "dccool/mdp.hpp"
#include "json.hpp"

namespace dccool {

// Overflow-safe softplus: log(1 + exp(x)).
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

struct RewardParams {
  double r0 = 1.0;
  double beta1 = 1.0;  // fan cube
  double beta2 = 1.0;  // cold-aisle overtemperature
  double beta3 = 1.0;  // valve opening
  double beta4 = 1.0;  // leaving-water overtemperature
  double rho_t = 25.0;  // cold-aisle threshold, deg C
  double rho_l = 20.0;  // leaving-water threshold, deg C

  nlohmann::json to_json() const {
    return {{"r0", r0},     {"beta1", beta1}, {"beta2", beta2},
            {"beta3", beta3}, {"beta4", beta4}, {"rho_t", rho_t},
            {"rho_l", rho_l}};
  }
  static RewardParams from_json(const nlohmann::json& j) {
    RewardParams p;
    p.r0 = j.at("r0").get<double>();
    p.beta1 = j.at("beta1").get<double>();
    p.beta2 = j.at("beta2").get<double>();
    p.beta3 = j.at("beta3").get<double>();
    p.beta4 = j.at("beta4").get<double>();
    p.rho_t = j.at("rho_t").get<double>();
    p.rho_l = j.at("rho_l").get<double>();
    return p;
  }
};

// Raw (unweighted) penalty terms of one transition.
struct RewardTerms {
  double fan_cube = 0.0;
  double overtemp = 0.0;
  double valve = 0.0;
  double water = 0.0;
};

// next_state is the raw next-state vector laid out by the segment map; the
// action is normalized [fans | valves].
inline RewardTerms compute_reward_terms(const SegmentMap& m,
                                        const Eigen::VectorXd& next_state,
                                        const Eigen::VectorXd& action,
                                        double rho_t, double rho_l) {
  if (next_state.size() != m.state_dim())
    throw ShapeError("reward: state vector does not match segment map");
  if (action.size() != m.action_dim())
    throw ShapeError("reward: action vector does not match segment map");
  RewardTerms t;
  const int M = m.num_acus;
  for (int i = 0; i < M; ++i) {
    const double f = action[i];
    const double o = action[M + i];
    t.fan_cube += f * f * f;
    t.valve += o;
  }
  for (int idx : m.cold_idx) t.overtemp += softplus(next_state[idx] - rho_t);
  for (int idx : m.lwt_idx) t.water += softplus(next_state[idx] - rho_l);
  return t;
}

inline double penalty_sum(const RewardParams& p, const RewardTerms& t) {
  return p.beta1 * t.fan_cube + p.beta2 * t.overtemp + p.beta3 * t.valve +
         p.beta4 * t.water;
}

inline double compute_reward(const RewardParams& p, const RewardTerms& t) {
  return p.r0 - penalty_sum(p, t);
}

inline double compute_reward(const RewardParams& p, const SegmentMap& m,
                             const Eigen::VectorXd& next_state,
                             const Eigen::VectorXd& action) {
  return compute_reward(p, compute_reward_terms(m, next_state, action, p.rho_t, p.rho_l));
}

struct RewardFit {
  RewardParams params;
  std::vector<std::string> warnings;
};

// Fit b_i = 1 / mean(term_i) over the behavior transitions so every penalty
// channel lands at unit mean, then set r0 one above the worst total penalty:
// the minimum reward over the fitting set is exactly 1. A term whose mean is
// numerically zero keeps b = 1 and is reported as a warning.
inline RewardFit fit_reward_params(const std::vector<RewardTerms>& terms,
                                   double rho_t, double rho_l) {
  if (terms.empty()) throw DataError("reward fit requires at least one transition");
  RewardFit fit;
  fit.params.rho_t = rho_t;
  fit.params.rho_l = rho_l;

  double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
  for (const auto& t : terms) {
    m1 += t.fan_cube;
    m2 += t.overtemp;
    m3 += t.valve;
    m4 += t.water;
  }
  const double n = static_cast<double>(terms.size());
  m1 /= n; m2 /= n; m3 /= n; m4 /= n;

  auto inv_or_warn = [&](double mean, const char* name) {
    if (mean < 1e-8) {
      fit.warnings.push_back(std::string("penalty term '") + name +
                             "' has near-zero mean; keeping unit weight");
      return 1.0;
    }
    return 1.0 / mean;
  };
  fit.params.beta1 = inv_or_warn(m1, "fan_cube");
  fit.params.beta2 = inv_or_warn(m2, "overtemp");
  fit.params.beta3 = inv_or_warn(m3, "valve");
  fit.params.beta4 = inv_or_warn(m4, "water");

  double worst = 0.0;
  for (const auto& t : terms) worst = std::max(worst, penalty_sum(fit.params, t));
  fit.params.r0 = worst + 1.0;
  return fit;
}

// Scale the overtemperature weight by `factor` and re-anchor r0 on the same
// fitting set so the minimum reward stays at 1.
inline RewardParams rescale_overtemp_weight(const RewardParams& base,
                                            double factor,
                                            const std::vector<RewardTerms>& terms) {
  if (factor <= 0.0) throw ConfigError("overtemp weight factor must be positive");
  if (terms.empty()) throw DataError("reward rescale requires fit transitions");
  RewardParams p = base;
  p.beta2 = base.beta2 * factor;
  double worst = 0.0;
  for (const auto& t : terms) worst = std::max(worst, penalty_sum(p, t));
  p.r0 = worst + 1.0;
  return p;
}

}  // namespace dccool
