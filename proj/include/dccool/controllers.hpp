#pragma once

// Baseline controllers and the closed-loop evaluation driver.
//
// The PID baseline mirrors the plant's native regulation: one PID instance per
// ACU drives the fan from the measured entering-air temperature (reverse
// acting: hotter return air -> more airflow), and the chilled-water valve is
// slaved to the same signal through an affine map. Policy deployment wraps the
// learned actor with min-max normalization and a five-step temporal smoothing
// window. A linear receding-horizon controller (least-squares model, projected
// gradient) is kept as an optional reference.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "dccool/autodiff.hpp"
#include "dccool/common.hpp"
#include "dccool/dataio.hpp"
#include "dccool/mdp.hpp"
#include "dccool/offline_rl.hpp"
#include "dccool/reward.hpp"
#include "dccool/simenv.hpp"
#include "json.hpp"

namespace dccool {

// ---------------------------------------------------------------------------
// PID

struct PidState {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
  double bias = 0.0;
  double out_lo = 0.0;
  double out_hi = 1.0;
  double integral_clamp = 50.0;  // bound on accumulated error (deg C * s units)
  double integral = 0.0;
  double prev_error = 0.0;
  bool has_prev = false;
};

// One PID step. Reverse-acting convention: error = measurement - setpoint, so
// readings above the setpoint push the output up (more cooling).
inline std::pair<double, PidState> pid_step(PidState st, double setpoint,
                                            double measurement, double dt) {
  if (dt <= 0.0) throw ConfigError("pid_step: dt must be positive");
  const double error = measurement - setpoint;
  st.integral = std::clamp(st.integral + error * dt, -st.integral_clamp,
                           st.integral_clamp);
  const double deriv = st.has_prev ? (error - st.prev_error) / dt : 0.0;
  const double u =
      st.bias + st.kp * error + st.ki * st.integral + st.kd * deriv;
  st.prev_error = error;
  st.has_prev = true;
  return {std::clamp(u, st.out_lo, st.out_hi), st};
}

// ---------------------------------------------------------------------------
// Temporal smoothing

// Mean of the current action and up to four predecessors; before the window
// fills, the mean runs over the actions seen so far (warm-up rule).
class SmoothingWindow {
 public:
  explicit SmoothingWindow(int capacity = 5) : capacity_(capacity) {
    if (capacity_ < 1) throw ConfigError("smoothing window capacity must be >= 1");
  }

  ActionVector smooth(const ActionVector& a) {
    buf_.push_back(a.values);
    if (static_cast<int>(buf_.size()) > capacity_) buf_.pop_front();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(a.values.size());
    for (const auto& v : buf_) {
      if (v.size() != a.values.size())
        throw ShapeError("smoothing window: action width changed");
      mean += v;
    }
    mean /= static_cast<double>(buf_.size());
    return ActionVector{mean};
  }

  void reset() { buf_.clear(); }
  int fill() const { return static_cast<int>(buf_.size()); }

 private:
  int capacity_;
  std::deque<Eigen::VectorXd> buf_;
};

// ---------------------------------------------------------------------------
// Controller interface

class Controller {
 public:
  virtual ~Controller() = default;
  virtual ActionVector act(const Observation& obs, double dt) = 0;
  virtual void reset() = 0;
  virtual std::string name() const = 0;
};

struct PidRoomConfig {
  double kp = 0.08;
  double ki = 0.004;
  double kd = 0.0;
  double bias = 0.35;
  double setpoint = 30.0;      // EAT setpoint, deg C
  double min_fan = 0.0;        // static minimum-airflow floor
  double valve_offset = 0.05;  // valve = clamp(offset + gain * fan)
  double valve_gain = 1.0;
  double integral_clamp = 120.0;

  nlohmann::json to_json() const {
    return {{"kp", kp},     {"ki", ki},
            {"kd", kd},     {"bias", bias},
            {"setpoint", setpoint}, {"min_fan", min_fan},
            {"valve_offset", valve_offset},
            {"valve_gain", valve_gain}, {"integral_clamp", integral_clamp}};
  }
  static PidRoomConfig from_json(const nlohmann::json& j) {
    PidRoomConfig c;
    c.kp = j.value("kp", c.kp);
    c.ki = j.value("ki", c.ki);
    c.kd = j.value("kd", c.kd);
    c.bias = j.value("bias", c.bias);
    c.setpoint = j.value("setpoint", c.setpoint);
    c.min_fan = j.value("min_fan", c.min_fan);
    c.valve_offset = j.value("valve_offset", c.valve_offset);
    c.valve_gain = j.value("valve_gain", c.valve_gain);
    c.integral_clamp = j.value("integral_clamp", c.integral_clamp);
    return c;
  }
};

// Per-ACU PID on the entering-air temperature; valves slaved affinely.
class PidRoomController : public Controller {
 public:
  PidRoomController(std::vector<std::string> acu_ids, PidRoomConfig cfg)
      : acu_ids_(std::move(acu_ids)), cfg_(cfg) {
    reset();
  }

  ActionVector act(const Observation& obs, double dt) override {
    const int M = static_cast<int>(acu_ids_.size());
    Eigen::VectorXd a(2 * M);
    for (int m = 0; m < M; ++m) {
      const auto it = obs.find("eat." + acu_ids_[m]);
      if (it == obs.end())
        throw DataError("pid controller: observation missing eat." + acu_ids_[m]);
      auto [fan, st] = pid_step(states_[m], cfg_.setpoint, it->second, dt);
      states_[m] = st;
      a[m] = fan;
      a[M + m] = std::clamp(cfg_.valve_offset + cfg_.valve_gain * fan, 0.0, 1.0);
    }
    return ActionVector{a};
  }

  void reset() override {
    states_.assign(acu_ids_.size(),
                   PidState{cfg_.kp, cfg_.ki, cfg_.kd, cfg_.bias, cfg_.min_fan,
                            1.0, cfg_.integral_clamp});
  }
  std::string name() const override { return "pid"; }

  // Setpoint shifts are how behavior-data episodes explore the action space.
  void set_setpoint(double sp) { cfg_.setpoint = sp; }
  double setpoint() const { return cfg_.setpoint; }

 private:
  std::vector<std::string> acu_ids_;
  PidRoomConfig cfg_;
  std::vector<PidState> states_;
};

// Learned policy behind normalization and the smoothing window.
class PolicyController : public Controller {
 public:
  PolicyController(PolicyModel policy, NormalizationSpec norm)
      : policy_(std::move(policy)), norm_(norm), window_(5) {}

  ActionVector act(const Observation& obs, double) override {
    StateVector raw = assemble_state(obs, policy_.segments());
    StateVector s{normalize_state(raw.values, policy_.segments(), norm_)};
    return window_.smooth(policy_.act(s));
  }

  void reset() override { window_.reset(); }
  std::string name() const override { return "policy"; }

 private:
  PolicyModel policy_;
  NormalizationSpec norm_;
  SmoothingWindow window_;
};

// Bounded uniform action dither around any base controller; used to widen the
// behavior dataset's action coverage.
class DitheredController : public Controller {
 public:
  DitheredController(std::unique_ptr<Controller> base, double amplitude,
                     std::uint64_t seed)
      : base_(std::move(base)), amp_(amplitude), seed_(seed), rng_(seed) {}

  ActionVector act(const Observation& obs, double dt) override {
    ActionVector a = base_->act(obs, dt);
    for (int i = 0; i < a.values.size(); ++i)
      a.values[i] = std::clamp(a.values[i] + rng_.uniform(-amp_, amp_), 0.0, 1.0);
    return a;
  }

  void reset() override {
    base_->reset();
    rng_ = Rng(seed_);
  }
  std::string name() const override { return base_->name() + "+dither"; }

  Controller& base() { return *base_; }

 private:
  std::unique_ptr<Controller> base_;
  double amp_;
  std::uint64_t seed_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Linear model + receding-horizon baseline

struct LinearModel {
  Eigen::MatrixXd a;  // D x D
  Eigen::MatrixXd b;  // D x 2M
  Eigen::VectorXd c;  // D
  double residual = 0.0;
  double ridge = 0.0;
};

// Least-squares fit of s' ~ A s + B a + c on normalized transitions, with a
// small documented ridge term for rank-deficient data.
inline LinearModel fit_linear_model(const TransitionDataset& ds,
                                    double ridge = 1e-8) {
  if (ds.size() == 0) throw DataError("linear model fit requires transitions");
  const int D = ds.segments.state_dim();
  const int A2 = ds.segments.action_dim();
  const long n = ds.size();
  Eigen::MatrixXd x(n, D + A2 + 1);
  x << ds.s, ds.a, Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * ds.s_next);

  LinearModel lm;
  lm.a = w.topRows(D).transpose();
  lm.b = w.middleRows(D, A2).transpose();
  lm.c = w.bottomRows(1).transpose().col(0);
  lm.ridge = ridge;
  lm.residual = (x * w - ds.s_next).squaredNorm() / static_cast<double>(n);
  return lm;
}

struct MpcConfig {
  int horizon = 6;
  int iterations = 80;
  double step_size = 0.15;
  double w_fan = 1.0;    // fan-cube energy weight
  double w_valve = 0.3;  // valve opening weight
  double w_cat = 40.0;   // squared-hinge weight on cold temps above the margin
  double cat_margin = 0.8;  // keep cold aisles this far below rho_t, deg C
};

// Projected-gradient receding-horizon step on the linear model; returns the
// first action of the optimized sequence. Falls back to prev_action when the
// optimization goes non-finite.
inline ActionVector mpc_step(const LinearModel& lm, const Eigen::VectorXd& s_norm,
                             const MpcConfig& mc, const SegmentMap& segs,
                             const NormalizationSpec& norm, double rho_t,
                             const ActionVector& prev_action,
                             bool* fell_back = nullptr) {
  if (mc.horizon < 1) throw ConfigError("mpc horizon must be >= 1");
  const int D = segs.state_dim();
  const int A2 = segs.action_dim();
  const int M = segs.num_acus;
  if (s_norm.size() != D) throw ShapeError("mpc_step: state width mismatch");

  Eigen::MatrixXd u = Eigen::MatrixXd::Constant(mc.horizon, A2, 0.5);
  const NormRange tr = norm.temperature;
  const double cat_limit = rho_t - mc.cat_margin;

  for (int iter = 0; iter < mc.iterations; ++iter) {
    ad::Tape tape;
    ad::Var uv = tape.input(u);
    ad::Var at = tape.input(lm.a.transpose());
    ad::Var bt = tape.input(lm.b.transpose());
    ad::Var ct = tape.input(lm.c.transpose());
    ad::Var s = tape.input(s_norm.transpose());

    ad::Var cost;
    for (int k = 0; k < mc.horizon; ++k) {
      ad::Var uk = ad::block_slice_rows(uv, mc.horizon, k, 1);
      s = ad::add(ad::add(ad::matmul(s, at), ad::matmul(uk, bt)), ct);
      ad::Var fan = ad::slice_cols(uk, 0, M);
      ad::Var valve = ad::slice_cols(uk, M, M);
      ad::Var term = ad::scale(ad::sum_all(ad::cube(fan)), mc.w_fan);
      term = ad::add(term, ad::scale(ad::sum_all(valve), mc.w_valve));
      ad::Var cold = ad::slice_cols(s, segs.ss_begin, static_cast<int>(segs.cold_idx.size()));
      ad::Var cold_raw = ad::affine_const(cold, tr.hi - tr.lo, tr.lo);
      ad::Var over = ad::hinge_sq(ad::affine_const(cold_raw, 1.0, -cat_limit));
      term = ad::add(term, ad::scale(ad::sum_all(over), mc.w_cat));
      cost = cost.valid() ? ad::add(cost, term) : term;
    }

    if (!std::isfinite(tape.val(cost)(0, 0))) {
      if (fell_back) *fell_back = true;
      std::fprintf(stderr, "warning: mpc optimization went non-finite; "
                           "holding previous action\n");
      return prev_action;
    }
    tape.backward(cost);
    if (tape.has_grad(uv.idx)) u -= mc.step_size * tape.grad_ref(uv.idx);
    u = u.array().min(1.0).max(0.0);
  }
  if (fell_back) *fell_back = false;
  return ActionVector{u.row(0).transpose()};
}

class MpcController : public Controller {
 public:
  MpcController(LinearModel lm, MpcConfig mc, SegmentMap segs,
                NormalizationSpec norm, double rho_t)
      : lm_(std::move(lm)), mc_(mc), segs_(std::move(segs)), norm_(norm),
        rho_t_(rho_t) {
    reset();
  }

  ActionVector act(const Observation& obs, double) override {
    StateVector raw = assemble_state(obs, segs_);
    Eigen::VectorXd s = normalize_state(raw.values, segs_, norm_);
    prev_ = mpc_step(lm_, s, mc_, segs_, norm_, rho_t_, prev_);
    return prev_;
  }

  void reset() override {
    prev_ = ActionVector{Eigen::VectorXd::Constant(segs_.action_dim(), 0.5)};
  }
  std::string name() const override { return "mpc"; }

 private:
  LinearModel lm_;
  MpcConfig mc_;
  SegmentMap segs_;
  NormalizationSpec norm_;
  double rho_t_;
  ActionVector prev_;
};

// ---------------------------------------------------------------------------
// Closed-loop runner

struct TrajectoryStep {
  long t = 0;
  Observation obs;           // raw state the controller acted on
  Eigen::VectorXd action;    // applied command, fractions in [0,1]
  double next_cold_max = 0;  // max cold-aisle temp after the step, deg C
  RewardTerms terms;         // penalty terms of this transition
  double reward = 0.0;
  double server_kw = 0.0;    // instantaneous powers over the interval
  double acu_kw = 0.0;
  double server_kwh = 0.0;   // cumulative since logging started
  double acu_kwh = 0.0;
};

struct TrajectoryLog {
  std::string controller;
  double interval_seconds = 0.0;
  double rho_t = 0.0;
  std::vector<TrajectoryStep> steps;
};

struct RolloutConfig {
  long horizon = 1000;
  long warmup = 50;  // settle steps excluded from the log and the energies
  std::uint64_t seed = 1;
  RewardParams reward;  // defaults are identity weights until fit
};

// Drives sim + controller for warmup + horizon steps, logging the last
// `horizon`. Deterministic per seed. On a simulation fault the partial log is
// preserved in `out` and the fault rethrown.
//
// When `warmup_ctl` is given it drives the warmup phase and `ctl` takes over
// at the first logged step — the handover protocol used for evaluation, so
// every controller under test starts from the same stabilized room state.
inline void run_closed_loop(const ServerRoomSim& sim, Controller& ctl,
                            const LoadTrace& loads, const Eigen::MatrixXd& ewt,
                            const RolloutConfig& rc, TrajectoryLog& out,
                            Controller* warmup_ctl = nullptr) {
  const long total = rc.warmup + rc.horizon;
  if (rc.horizon < 1) throw ConfigError("rollout horizon must be >= 1");
  if (loads.loads.rows() < total || ewt.rows() < total)
    throw ConfigError("rollout: load/ewt traces shorter than warmup + horizon");
  const double dt = sim.params().interval_seconds;

  out.controller = ctl.name();
  out.interval_seconds = dt;
  out.rho_t = rc.reward.rho_t;
  out.steps.clear();

  ctl.reset();
  if (warmup_ctl) warmup_ctl->reset();
  SimState state = sim.reset(rc.seed);
  Observation obs = sim.observe(state);

  for (long t = 0; t < total; ++t) {
    Controller& acting = (warmup_ctl && t < rc.warmup) ? *warmup_ctl : ctl;
    const ActionVector a = acting.act(obs, dt);
    if (t == rc.warmup) {
      // metrics window starts here
      state.server_kwh = 0.0;
      state.acu_kwh = 0.0;
    }
    const double kwh_before_server = state.server_kwh;
    const double kwh_before_acu = state.acu_kwh;
    ServerRoomSim::StepResult res =
        sim.step(state, a, loads.loads.row(t).transpose(), ewt.row(t).transpose());

    if (t >= rc.warmup) {
      TrajectoryStep step;
      step.t = t - rc.warmup;
      step.obs = obs;
      step.action = a.values;
      step.next_cold_max = res.state.cold.maxCoeff();
      StateVector next_raw = assemble_state(res.obs, sim.segments());
      step.terms = compute_reward_terms(sim.segments(), next_raw.values, a.values,
                                        rc.reward.rho_t, rc.reward.rho_l);
      step.reward = compute_reward(rc.reward, step.terms);
      step.server_kwh = res.state.server_kwh;
      step.acu_kwh = res.state.acu_kwh;
      step.server_kw = (res.state.server_kwh - kwh_before_server) / (dt / 3600.0);
      step.acu_kw = (res.state.acu_kwh - kwh_before_acu) / (dt / 3600.0);
      out.steps.push_back(std::move(step));
    }
    state = std::move(res.state);
    obs = std::move(res.obs);
  }
}

// Columnar serialization of a trajectory log (same layout family as the
// dataset format: header row, one record per interval).
inline std::string trajectory_to_tsv(const TrajectoryLog& log,
                                     const SegmentMap& segs) {
  std::string tsv = "t";
  for (const auto& f : segs.state_features) tsv += "\t" + f.name;
  for (const auto& n : segs.action_names) tsv += "\t" + n;
  tsv += "\tnext_cold_max\tfan_cube\tovertemp\tvalve\twater\treward"
         "\tserver_kw\tacu_kw\tserver_kwh\tacu_kwh\n";
  for (const auto& s : log.steps) {
    tsv += std::to_string(s.t);
    for (const auto& f : segs.state_features)
      tsv += "\t" + format_double(s.obs.at(f.name));
    for (int i = 0; i < s.action.size(); ++i)
      tsv += "\t" + format_double(s.action[i] * 100.0);  // percent, raw units
    for (double v : {s.next_cold_max, s.terms.fan_cube, s.terms.overtemp,
                     s.terms.valve, s.terms.water, s.reward, s.server_kw,
                     s.acu_kw, s.server_kwh, s.acu_kwh})
      tsv += "\t" + format_double(v);
    tsv += "\n";
  }
  return tsv;
}

// Convert a trajectory to dataio log records (raw units, actions in percent).
inline std::vector<LogRecord> trajectory_to_records(const TrajectoryLog& log,
                                                    const SegmentMap& segs) {
  std::vector<LogRecord> recs;
  recs.reserve(log.steps.size());
  for (const auto& s : log.steps) {
    LogRecord r;
    r.timestamp = static_cast<double>(s.t) * log.interval_seconds;
    r.values = s.obs;
    auto [fans, valves] = split_action(ActionVector{s.action});
    const int M = static_cast<int>(fans.size());
    for (int m = 0; m < M; ++m) {
      r.values[segs.action_names[m]] = fans[m] * 100.0;
      r.values[segs.action_names[M + m]] = valves[m] * 100.0;
    }
    recs.push_back(std::move(r));
  }
  return recs;
}

}  // namespace dccool
