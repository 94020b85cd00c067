#pragma once

// MDP state/action assembly. The state vector is s = [s_s | s_a | s_e]:
// aisle sensor temperatures, per-ACU working states (LWT, LAT, EAT), then
// external factors (per-ACU EWT and per-rack server power). The segment map
// fixes feature names, classes and index ranges once per layout; it is
// persisted with datasets and checkpoints so trained models reject
// mismatched layouts.

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dccool/common.hpp"
#include "dccool/topology.hpp"
#include "json.hpp"

namespace dccool {

enum class FeatureClass { kTemperature, kHumidity, kPower, kAction };

inline std::string feature_class_name(FeatureClass c) {
  switch (c) {
    case FeatureClass::kTemperature: return "temp";
    case FeatureClass::kHumidity: return "humidity";
    case FeatureClass::kPower: return "power";
    case FeatureClass::kAction: return "action";
  }
  return "?";
}

inline FeatureClass feature_class_from_name(const std::string& s) {
  if (s == "temp") return FeatureClass::kTemperature;
  if (s == "humidity") return FeatureClass::kHumidity;
  if (s == "power") return FeatureClass::kPower;
  if (s == "action") return FeatureClass::kAction;
  throw DataError("unknown feature class: " + s);
}

struct FeatureInfo {
  std::string name;
  FeatureClass cls;
};

// Index maps into the state vector. Segments are contiguous, disjoint and
// cover the whole vector: [ss_begin, ss_begin+ss_count) etc.
struct SegmentMap {
  std::vector<FeatureInfo> state_features;
  std::vector<std::string> action_names;  // [fan.<id>...][valve.<id>...]
  int ss_begin = 0, ss_count = 0;
  int sa_begin = 0, sa_count = 0;
  int se_begin = 0, se_count = 0;
  int num_acus = 0;

  std::vector<int> cold_idx;   // cold-aisle sensor temps (CAT), within s_s
  std::vector<int> hot_idx;    // hot-aisle sensor temps, within s_s
  std::vector<int> lwt_idx, lat_idx, eat_idx;  // per ACU, within s_a
  std::vector<int> ewt_idx;    // per ACU, within s_e
  std::vector<int> power_idx;  // per rack, within s_e

  int state_dim() const { return static_cast<int>(state_features.size()); }
  int action_dim() const { return static_cast<int>(action_names.size()); }

  nlohmann::json to_json() const;
  static SegmentMap from_json(const nlohmann::json& j);
  std::uint64_t hash() const { return fnv1a64(to_json().dump()); }
};

inline nlohmann::json SegmentMap::to_json() const {
  nlohmann::json j;
  nlohmann::json feats = nlohmann::json::array();
  for (const auto& f : state_features)
    feats.push_back({{"name", f.name}, {"class", feature_class_name(f.cls)}});
  j["state_features"] = feats;
  j["action_names"] = action_names;
  j["segments"] = {{"ss", {ss_begin, ss_count}},
                   {"sa", {sa_begin, sa_count}},
                   {"se", {se_begin, se_count}}};
  j["num_acus"] = num_acus;
  j["cold_idx"] = cold_idx;
  j["hot_idx"] = hot_idx;
  j["lwt_idx"] = lwt_idx;
  j["lat_idx"] = lat_idx;
  j["eat_idx"] = eat_idx;
  j["ewt_idx"] = ewt_idx;
  j["power_idx"] = power_idx;
  return j;
}

inline SegmentMap SegmentMap::from_json(const nlohmann::json& j) {
  SegmentMap m;
  for (const auto& f : j.at("state_features"))
    m.state_features.push_back(
        {f.at("name"), feature_class_from_name(f.at("class"))});
  m.action_names = j.at("action_names").get<std::vector<std::string>>();
  auto seg = j.at("segments");
  m.ss_begin = seg.at("ss")[0];
  m.ss_count = seg.at("ss")[1];
  m.sa_begin = seg.at("sa")[0];
  m.sa_count = seg.at("sa")[1];
  m.se_begin = seg.at("se")[0];
  m.se_count = seg.at("se")[1];
  m.num_acus = j.at("num_acus");
  m.cold_idx = j.at("cold_idx").get<std::vector<int>>();
  m.hot_idx = j.at("hot_idx").get<std::vector<int>>();
  m.lwt_idx = j.at("lwt_idx").get<std::vector<int>>();
  m.lat_idx = j.at("lat_idx").get<std::vector<int>>();
  m.eat_idx = j.at("eat_idx").get<std::vector<int>>();
  m.ewt_idx = j.at("ewt_idx").get<std::vector<int>>();
  m.power_idx = j.at("power_idx").get<std::vector<int>>();
  return m;
}

// Deterministic ordering: sensors by id (cold then hot), ACUs by id,
// externals last (per-ACU EWT by id, then per-rack power by id).
inline SegmentMap build_segment_map(const RoomLayout& layout) {
  layout.validate();
  SegmentMap m;

  auto sorted_ids = [](const auto& items) {
    std::vector<std::string> ids;
    for (const auto& it : items) ids.push_back(it.id);
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  const auto cold_ids = sorted_ids(layout.cold_sensors);
  const auto hot_ids = sorted_ids(layout.hot_sensors);
  const auto acu_ids = sorted_ids(layout.acus);
  const auto rack_ids = sorted_ids(layout.racks);

  m.ss_begin = 0;
  for (const auto& id : cold_ids) {
    m.cold_idx.push_back(m.state_dim());
    m.state_features.push_back({"tc." + id, FeatureClass::kTemperature});
  }
  for (const auto& id : hot_ids) {
    m.hot_idx.push_back(m.state_dim());
    m.state_features.push_back({"th." + id, FeatureClass::kTemperature});
  }
  m.ss_count = m.state_dim();

  m.sa_begin = m.state_dim();
  for (const auto& id : acu_ids) {
    m.lwt_idx.push_back(m.state_dim());
    m.state_features.push_back({"lwt." + id, FeatureClass::kTemperature});
    m.lat_idx.push_back(m.state_dim());
    m.state_features.push_back({"lat." + id, FeatureClass::kTemperature});
    m.eat_idx.push_back(m.state_dim());
    m.state_features.push_back({"eat." + id, FeatureClass::kTemperature});
  }
  m.sa_count = m.state_dim() - m.sa_begin;

  m.se_begin = m.state_dim();
  for (const auto& id : acu_ids) {
    m.ewt_idx.push_back(m.state_dim());
    m.state_features.push_back({"ewt." + id, FeatureClass::kTemperature});
  }
  for (const auto& id : rack_ids) {
    m.power_idx.push_back(m.state_dim());
    m.state_features.push_back({"pw." + id, FeatureClass::kPower});
  }
  m.se_count = m.state_dim() - m.se_begin;

  m.num_acus = static_cast<int>(acu_ids.size());
  for (const auto& id : acu_ids) m.action_names.push_back("fan." + id);
  for (const auto& id : acu_ids) m.action_names.push_back("valve." + id);
  return m;
}

struct StateVector {
  Eigen::VectorXd values;
};

// Layout [f_1..f_M, o_1..o_M], every component in [0,1] after normalization.
struct ActionVector {
  Eigen::VectorXd values;

  int num_acus() const {
    if (values.size() % 2 != 0)
      throw ShapeError("action vector length must be 2M");
    return static_cast<int>(values.size() / 2);
  }
};

// Raw readings keyed by feature name (the simulator and log replay both
// produce this). Key order is irrelevant: assembly follows the segment map.
using Observation = std::map<std::string, double>;

inline StateVector assemble_state(const Observation& obs, const SegmentMap& m) {
  StateVector s;
  s.values.resize(m.state_dim());
  for (int i = 0; i < m.state_dim(); ++i) {
    auto it = obs.find(m.state_features[i].name);
    if (it == obs.end())
      throw DataError("observation missing reading: " + m.state_features[i].name);
    s.values[i] = it->second;
  }
  return s;
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> split_action(
    const ActionVector& a) {
  const int m = a.num_acus();
  return {a.values.head(m), a.values.tail(m)};
}

inline ActionVector concat_action(const Eigen::VectorXd& fans,
                                  const Eigen::VectorXd& valves) {
  if (fans.size() != valves.size())
    throw ShapeError("fan/valve vectors must have equal length");
  ActionVector a;
  a.values.resize(fans.size() + valves.size());
  a.values << fans, valves;
  return a;
}

}  // namespace dccool
