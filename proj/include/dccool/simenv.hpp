#pragma once

// Lumped-parameter thermal simulator of the server room. First-order lags
// drive every temperature toward a mixing/heat-balance target recomputed each
// control interval:
//
//   (i)   LAT_m  <- EAT_m - eps(o_m, f_m) * max(EAT_m - EWT_m, 0)
//         with coil effectiveness eps(o,f) = eps_max * o / (o + kappa*f + delta)
//   (ii)  cold sensor -> fan*distance-weighted mix of ACU supply air, plus a
//         recirculation fraction of hot-aisle air and an ambient leak
//   (iii) hot sensor  -> facing cold-aisle inlet + load / (c_air * mdot(f))
//   (iv)  EAT_m       -> distance-weighted hot-aisle return
//   (v)   energy accumulation (rectangle rule at the control interval)
//   (vi)  bounded uniform sensor noise
//
// The model is intentionally coarse: it only has to exhibit the fan-cube vs
// cooling-effect trade-off that the reward encodes, not match any real
// facility. All constants live in SimParams and the experiment config.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "dccool/common.hpp"
#include "dccool/mdp.hpp"
#include "dccool/topology.hpp"
#include "json.hpp"

namespace dccool {

struct SimParams {
  double interval_seconds = 120.0;

  // first-order lag time constants, in steps
  double tau_cold = 3.0;
  double tau_hot = 2.0;
  double tau_eat = 2.0;
  double tau_acu = 1.5;

  // coil effectiveness
  double eps_max = 0.92;
  double kappa = 0.6;
  double delta = 0.08;

  // per-rack airflow heat capacity, kW/K: cm(f) = cm_base + cm_span * mean(f)
  double cm_base = 0.30;
  double cm_span = 0.60;

  // ACU coil air-side capacity flow (kW/K) for the water-side heat balance
  double acu_cm_base = 0.10;
  double acu_cm_span = 0.90;

  // water-side capacity (kW/K): cw_floor + cw_span * o
  double cw_floor = 0.08;
  double cw_span = 1.2;

  // cold-aisle mixing weights
  double recirc = 0.08;
  double amb_leak = 0.05;
  double t_ambient = 24.0;

  double fan_overhead_kw = 0.10;
  double noise_amp = 0.10;  // deg C, uniform +/-; 0 disables

  // exogenous entering-water temperature: base + drift*sin(2*pi*t/period)
  double ewt_base = 14.0;
  double ewt_drift = 1.0;
  double ewt_period_steps = 900.0;

  double temp_lo = 1.0;
  double temp_hi = 60.0;

  nlohmann::json to_json() const;
  static SimParams from_json(const nlohmann::json& j);
};

inline nlohmann::json SimParams::to_json() const {
  return {{"interval_seconds", interval_seconds},
          {"tau_cold", tau_cold},
          {"tau_hot", tau_hot},
          {"tau_eat", tau_eat},
          {"tau_acu", tau_acu},
          {"eps_max", eps_max},
          {"kappa", kappa},
          {"delta", delta},
          {"cm_base", cm_base},
          {"cm_span", cm_span},
          {"acu_cm_base", acu_cm_base},
          {"acu_cm_span", acu_cm_span},
          {"cw_floor", cw_floor},
          {"cw_span", cw_span},
          {"recirc", recirc},
          {"amb_leak", amb_leak},
          {"t_ambient", t_ambient},
          {"fan_overhead_kw", fan_overhead_kw},
          {"noise_amp", noise_amp},
          {"ewt_base", ewt_base},
          {"ewt_drift", ewt_drift},
          {"ewt_period_steps", ewt_period_steps},
          {"temp_lo", temp_lo},
          {"temp_hi", temp_hi}};
}

inline SimParams SimParams::from_json(const nlohmann::json& j) {
  SimParams p;
  p.interval_seconds = j.value("interval_seconds", p.interval_seconds);
  p.tau_cold = j.value("tau_cold", p.tau_cold);
  p.tau_hot = j.value("tau_hot", p.tau_hot);
  p.tau_eat = j.value("tau_eat", p.tau_eat);
  p.tau_acu = j.value("tau_acu", p.tau_acu);
  p.eps_max = j.value("eps_max", p.eps_max);
  p.kappa = j.value("kappa", p.kappa);
  p.delta = j.value("delta", p.delta);
  p.cm_base = j.value("cm_base", p.cm_base);
  p.cm_span = j.value("cm_span", p.cm_span);
  p.acu_cm_base = j.value("acu_cm_base", p.acu_cm_base);
  p.acu_cm_span = j.value("acu_cm_span", p.acu_cm_span);
  p.cw_floor = j.value("cw_floor", p.cw_floor);
  p.cw_span = j.value("cw_span", p.cw_span);
  p.recirc = j.value("recirc", p.recirc);
  p.amb_leak = j.value("amb_leak", p.amb_leak);
  p.t_ambient = j.value("t_ambient", p.t_ambient);
  p.fan_overhead_kw = j.value("fan_overhead_kw", p.fan_overhead_kw);
  p.noise_amp = j.value("noise_amp", p.noise_amp);
  p.ewt_base = j.value("ewt_base", p.ewt_base);
  p.ewt_drift = j.value("ewt_drift", p.ewt_drift);
  p.ewt_period_steps = j.value("ewt_period_steps", p.ewt_period_steps);
  p.temp_lo = j.value("temp_lo", p.temp_lo);
  p.temp_hi = j.value("temp_hi", p.temp_hi);
  return p;
}

// Electric power draw of one ACU: fan cube law plus standby overhead.
inline double acu_electric_power(double fan_fraction, double p_fan_max_kw,
                                 double overhead_kw = 0.0) {
  if (!(fan_fraction >= 0.0 && fan_fraction <= 1.0))
    throw DataError("acu_electric_power: fan fraction outside [0,1]");
  return p_fan_max_kw * fan_fraction * fan_fraction * fan_fraction + overhead_kw;
}

struct AcuThermalState {
  double eat = 0.0;
  double lat = 0.0;
  double lwt = 0.0;
};

struct SimState {
  long t = 0;
  Eigen::VectorXd cold;   // cold-aisle sensor temps, sorted-id order
  Eigen::VectorXd hot;    // hot-aisle sensor temps
  std::vector<AcuThermalState> acus;
  Eigen::VectorXd rack_loads;  // kW, as of the last step
  Eigen::VectorXd ewt;         // deg C, as of the last step
  double server_kwh = 0.0;
  double acu_kwh = 0.0;
  Rng rng;

  bool operator==(const SimState& o) const {
    auto acu_eq = [&] {
      if (acus.size() != o.acus.size()) return false;
      for (std::size_t i = 0; i < acus.size(); ++i)
        if (acus[i].eat != o.acus[i].eat || acus[i].lat != o.acus[i].lat ||
            acus[i].lwt != o.acus[i].lwt)
          return false;
      return true;
    };
    return t == o.t && cold == o.cold && hot == o.hot && acu_eq() &&
           rack_loads == o.rack_loads && ewt == o.ewt &&
           server_kwh == o.server_kwh && acu_kwh == o.acu_kwh && rng == o.rng;
  }
};

enum class LoadProfile { kConstant, kDiurnal, kStepFluctuation };

inline LoadProfile load_profile_from_name(const std::string& s) {
  if (s == "constant") return LoadProfile::kConstant;
  if (s == "diurnal") return LoadProfile::kDiurnal;
  if (s == "step" || s == "step-fluctuation") return LoadProfile::kStepFluctuation;
  throw ConfigError("unknown load profile: " + s);
}

struct LoadTrace {
  std::string profile;
  std::vector<std::string> rack_ids;  // sorted-id order
  Eigen::MatrixXd loads;              // horizon x num_racks, kW
};

// Per-rack load series at the control interval. The step-fluctuation profile
// carries one drastic drop-then-recovery on a single rack.
inline LoadTrace generate_load_trace(const RoomLayout& layout,
                                     LoadProfile profile, long horizon,
                                     std::uint64_t seed, double scale = 1.0) {
  if (horizon < 1) throw ConfigError("load trace horizon must be >= 1");
  std::vector<RackInfo> racks = layout.racks;
  std::sort(racks.begin(), racks.end(),
            [](const RackInfo& a, const RackInfo& b) { return a.id < b.id; });
  const int nr = static_cast<int>(racks.size());

  LoadTrace tr;
  tr.rack_ids.reserve(nr);
  for (const auto& r : racks) tr.rack_ids.push_back(r.id);
  tr.loads.resize(horizon, nr);

  Rng rng(seed);
  switch (profile) {
    case LoadProfile::kConstant: {
      tr.profile = "constant";
      for (int r = 0; r < nr; ++r)
        tr.loads.col(r).setConstant(scale * racks[r].max_load_kw);
      break;
    }
    case LoadProfile::kDiurnal:
    case LoadProfile::kStepFluctuation: {
      tr.profile = profile == LoadProfile::kDiurnal ? "diurnal" : "step-fluctuation";
      const double period = std::max<double>(60.0, static_cast<double>(horizon) / 2.0);
      std::vector<double> phase(nr);
      for (int r = 0; r < nr; ++r) phase[r] = rng.uniform(0.0, 2.0 * M_PI);
      for (long t = 0; t < horizon; ++t) {
        for (int r = 0; r < nr; ++r) {
          const double swing =
              0.5 * (1.0 + std::sin(2.0 * M_PI * t / period + phase[r]));
          double frac = 0.60 + 0.30 * swing;
          tr.loads(t, r) = scale * racks[r].max_load_kw * frac;
        }
      }
      // mild per-step jitter, deterministic per seed
      for (long t = 0; t < horizon; ++t)
        for (int r = 0; r < nr; ++r)
          tr.loads(t, r) =
              std::max(0.0, tr.loads(t, r) * (1.0 + 0.02 * rng.uniform(-1.0, 1.0)));
      if (profile == LoadProfile::kStepFluctuation && horizon >= 6) {
        const int target = rng.uniform_int(nr);
        const long t1 = horizon / 3;
        const long t2 = t1 + std::max<long>(1, horizon / 6);
        for (long t = t1; t < t2 && t < horizon; ++t)
          tr.loads(t, target) *= 0.25;
      }
      break;
    }
  }
  return tr;
}

// Exogenous entering-water temperature series, horizon x M.
inline Eigen::MatrixXd generate_ewt_series(const SimParams& p, int num_acus,
                                           long horizon, std::uint64_t seed) {
  Eigen::MatrixXd out(horizon, num_acus);
  Rng rng(seed);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  for (long t = 0; t < horizon; ++t) {
    const double base =
        p.ewt_base +
        p.ewt_drift * std::sin(2.0 * M_PI * t / p.ewt_period_steps + phase);
    for (int m = 0; m < num_acus; ++m) out(t, m) = base + 0.1 * m;
  }
  return out;
}

class ServerRoomSim {
 public:
  ServerRoomSim(RoomLayout layout, RoomGraph graph, SimParams params)
      : layout_(std::move(layout)), graph_(std::move(graph)), p_(params) {
    layout_.validate();
    segs_ = build_segment_map(layout_);
    init_tables();
  }

  const RoomLayout& layout() const { return layout_; }
  const RoomGraph& graph() const { return graph_; }
  const SimParams& params() const { return p_; }
  const SegmentMap& segments() const { return segs_; }
  int num_cold() const { return static_cast<int>(cold_ids_.size()); }
  int num_hot() const { return static_cast<int>(hot_ids_.size()); }
  int num_acus() const { return static_cast<int>(acu_ids_.size()); }
  int num_racks() const { return static_cast<int>(rack_ids_.size()); }

  // Near-ambient equilibrium start; energies zero.
  SimState reset(std::uint64_t seed) const {
    SimState s;
    s.t = 0;
    s.cold = Eigen::VectorXd::Constant(num_cold(), p_.t_ambient);
    s.hot = Eigen::VectorXd::Constant(num_hot(), p_.t_ambient);
    s.acus.assign(num_acus(), AcuThermalState{p_.t_ambient, p_.t_ambient, p_.ewt_base});
    s.rack_loads = Eigen::VectorXd::Zero(num_racks());
    s.ewt = Eigen::VectorXd::Constant(num_acus(), p_.ewt_base);
    s.rng = Rng(seed);
    return s;
  }

  struct StepResult {
    SimState state;
    Observation obs;
  };

  StepResult step(const SimState& prev, const ActionVector& action,
                  const Eigen::VectorXd& rack_loads,
                  const Eigen::VectorXd& ewt) const {
    const int M = num_acus();
    if (action.values.size() != 2 * M)
      throw ShapeError("action vector length must be 2M");
    for (int i = 0; i < action.values.size(); ++i)
      if (!(action.values[i] >= 0.0 && action.values[i] <= 1.0))
        throw DataError("action component outside [0,1]");
    if (rack_loads.size() != num_racks() || ewt.size() != M)
      throw ShapeError("rack_loads/ewt size mismatch");

    auto [fans, valves] = split_action(action);
    SimState s = prev;
    s.t = prev.t + 1;
    s.rack_loads = rack_loads;
    s.ewt = ewt;

    // (i) ACU leaving-air temperature
    Eigen::VectorXd lat_new(M);
    for (int m = 0; m < M; ++m) {
      double eps = p_.eps_max * valves[m] / (valves[m] + p_.kappa * fans[m] + p_.delta);
      eps = std::clamp(eps, 0.0, 0.999);
      const double target =
          prev.acus[m].eat - eps * std::max(prev.acus[m].eat - ewt[m], 0.0);
      lat_new[m] = prev.acus[m].lat + (target - prev.acus[m].lat) / p_.tau_acu;
      s.acus[m].lat = clamp_temp(lat_new[m]);
    }

    // (ii) cold-aisle sensors: supply mix + hot recirculation + ambient leak
    Eigen::VectorXd cold_new(num_cold());
    for (int n = 0; n < num_cold(); ++n) {
      double num = p_.recirc * (hot_near_cold_.row(n) * prev.hot)(0) +
                   p_.amb_leak * p_.t_ambient;
      double den = p_.recirc + p_.amb_leak;
      for (int m = 0; m < M; ++m) {
        const double w = fans[m] * supply_w_(n, m);
        num += w * s.acus[m].lat;
        den += w;
      }
      const double target = num / den;
      cold_new[n] = clamp_temp(prev.cold[n] + (target - prev.cold[n]) / p_.tau_cold);
    }
    s.cold = cold_new;

    // (iii) hot-aisle sensors: facing cold inlet + local rack heat rise
    const double mean_fan = M > 0 ? fans.mean() : 0.0;
    const double cm = p_.cm_base + p_.cm_span * mean_fan;
    Eigen::VectorXd hot_new(num_hot());
    for (int h = 0; h < num_hot(); ++h) {
      const double inlet = (cold_near_hot_.row(h) * s.cold)(0);
      const double local_load = (rack_to_hot_.row(h) * rack_loads)(0);
      const double target = inlet + local_load / cm;
      hot_new[h] = clamp_temp(prev.hot[h] + (target - prev.hot[h]) / p_.tau_hot);
    }
    s.hot = hot_new;

    // (iv) ACU entering-air temperature from the hot-aisle return
    for (int m = 0; m < M; ++m) {
      const double ret = num_hot() > 0 ? (acu_return_w_.row(m) * s.hot)(0)
                                       : s.cold.mean();
      s.acus[m].eat =
          clamp_temp(prev.acus[m].eat + (ret - prev.acus[m].eat) / p_.tau_eat);
      // water-side heat balance for LWT
      const double q = (p_.acu_cm_base + p_.acu_cm_span * fans[m]) *
                       std::max(s.acus[m].eat - s.acus[m].lat, 0.0);
      s.acus[m].lwt = clamp_temp(ewt[m] + q / (p_.cw_floor + p_.cw_span * valves[m]));
    }

    // (v) energy accumulation
    const double dt_h = p_.interval_seconds / 3600.0;
    s.server_kwh = prev.server_kwh + rack_loads.sum() * dt_h;
    double acu_kw = 0.0;
    for (int m = 0; m < M; ++m)
      acu_kw += acu_electric_power(fans[m], acu_pmax_[m], p_.fan_overhead_kw);
    s.acu_kwh = prev.acu_kwh + acu_kw * dt_h;

    // (vi) bounded sensor noise on aisle readings
    if (p_.noise_amp > 0.0) {
      for (int n = 0; n < num_cold(); ++n)
        s.cold[n] = clamp_temp(s.cold[n] + s.rng.uniform(-p_.noise_amp, p_.noise_amp));
      for (int h = 0; h < num_hot(); ++h)
        s.hot[h] = clamp_temp(s.hot[h] + s.rng.uniform(-p_.noise_amp, p_.noise_amp));
    }

    check_finite(s);
    Observation obs = observe(s);
    return {std::move(s), std::move(obs)};
  }

  Observation observe(const SimState& s) const {
    Observation obs;
    for (int n = 0; n < num_cold(); ++n) obs["tc." + cold_ids_[n]] = s.cold[n];
    for (int h = 0; h < num_hot(); ++h) obs["th." + hot_ids_[h]] = s.hot[h];
    for (int m = 0; m < num_acus(); ++m) {
      obs["lwt." + acu_ids_[m]] = s.acus[m].lwt;
      obs["lat." + acu_ids_[m]] = s.acus[m].lat;
      obs["eat." + acu_ids_[m]] = s.acus[m].eat;
      obs["ewt." + acu_ids_[m]] = s.ewt[m];
    }
    for (int r = 0; r < num_racks(); ++r)
      obs["pw." + rack_ids_[r]] = s.rack_loads[r];
    return obs;
  }

  double acu_max_fan_power(int m) const { return acu_pmax_[m]; }

 private:
  double clamp_temp(double v) const { return std::clamp(v, p_.temp_lo, p_.temp_hi); }

  void check_finite(const SimState& s) const {
    auto bad = [](double v) { return !std::isfinite(v); };
    bool fault = false;
    for (int i = 0; i < s.cold.size() && !fault; ++i) fault = bad(s.cold[i]);
    for (int i = 0; i < s.hot.size() && !fault; ++i) fault = bad(s.hot[i]);
    for (const auto& a : s.acus)
      fault = fault || bad(a.eat) || bad(a.lat) || bad(a.lwt);
    if (fault || bad(s.server_kwh) || bad(s.acu_kwh))
      throw NumericError("simulation fault: non-finite state at step " +
                         std::to_string(s.t));
  }

  void init_tables() {
    auto sorted = [](auto items) {
      std::sort(items.begin(), items.end(),
                [](const auto& a, const auto& b) { return a.id < b.id; });
      return items;
    };
    const auto cold = sorted(layout_.cold_sensors);
    const auto hot = sorted(layout_.hot_sensors);
    const auto acus = sorted(layout_.acus);
    const auto racks = sorted(layout_.racks);
    for (const auto& s : cold) cold_ids_.push_back(s.id);
    for (const auto& s : hot) hot_ids_.push_back(s.id);
    for (const auto& a : acus) acu_ids_.push_back(a.id);
    for (const auto& r : racks) rack_ids_.push_back(r.id);
    for (const auto& a : acus) acu_pmax_.push_back(a.max_fan_power_kw);

    const int nc = num_cold(), nh = num_hot(), M = num_acus(), nr = num_racks();

    // supply weights: cold-sensor rows of the graph's control block
    supply_w_ = graph_.control_weights().topRows(nc);

    auto inv_dist_rows = [](const auto& rows, const auto& cols) {
      Eigen::MatrixXd w(rows.size(), cols.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j)
          w(i, j) = 1.0 / (1.0 + std::abs(rows[i].position - cols[j].position));
        const double sum = w.row(i).sum();
        if (sum > 0) w.row(i) /= sum;
      }
      return w;
    };
    hot_near_cold_ = inv_dist_rows(cold, hot);
    cold_near_hot_ = inv_dist_rows(hot, cold);

    // rack heat -> hot sensors, restricted to the rack's hot aisle when the
    // aisle_map provides one
    rack_to_hot_ = Eigen::MatrixXd::Zero(nh, nr);
    for (int r = 0; r < nr; ++r) {
      std::string rack_aisle;
      for (const auto& [aisle, members] : layout_.aisle_map)
        for (const auto& mname : members)
          if (mname == racks[r].id &&
              std::any_of(hot.begin(), hot.end(),
                          [&](const SensorInfo& s) { return s.aisle == aisle; }))
            rack_aisle = aisle;
      for (int h = 0; h < nh; ++h) {
        if (!rack_aisle.empty() && hot[h].aisle != rack_aisle) continue;
        rack_to_hot_(h, r) =
            1.0 / (1.0 + std::abs(hot[h].position - racks[r].position));
      }
    }
    // normalize over racks per sensor: each sensor reads its local rack mix
    for (int h = 0; h < nh; ++h) {
      const double sum = rack_to_hot_.row(h).sum();
      if (sum > 0) rack_to_hot_.row(h) /= sum;
    }

    acu_return_w_ = Eigen::MatrixXd::Zero(M, nh);
    for (int m = 0; m < M; ++m) {
      for (int h = 0; h < nh; ++h)
        acu_return_w_(m, h) =
            1.0 / (1.0 + std::abs(acus[m].position - hot[h].position));
      const double sum = acu_return_w_.row(m).sum();
      if (sum > 0) acu_return_w_.row(m) /= sum;
    }
  }

  RoomLayout layout_;
  RoomGraph graph_;
  SimParams p_;
  SegmentMap segs_;
  std::vector<std::string> cold_ids_, hot_ids_, acu_ids_, rack_ids_;
  std::vector<double> acu_pmax_;
  Eigen::MatrixXd supply_w_;       // nc x M
  Eigen::MatrixXd hot_near_cold_;  // nc x nh, rows normalized
  Eigen::MatrixXd cold_near_hot_;  // nh x nc, rows normalized
  Eigen::MatrixXd rack_to_hot_;    // nh x nr, rows normalized
  Eigen::MatrixXd acu_return_w_;   // M x nh, rows normalized
};

}  // namespace dccool
