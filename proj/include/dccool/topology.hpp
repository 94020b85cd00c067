#pragma once

// Server-room layout and the two coupled graph structures used by both the
// simulator and the dynamics-model encoder: a symmetric sensor-sensor spatial
// adjacency and a bipartite sensor-ACU control adjacency.
//
// Edges are derived from integer position indices and radii. Layouts come
// from a JSON config with one section per rack/ACU/sensor; the resulting
// node order (cold sensors, then hot sensors, then ACUs, each sorted by id)
// is stable and persisted with every dataset and checkpoint.

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "dccool/common.hpp"
#include "json.hpp"

namespace dccool {

struct RackInfo {
  std::string id;
  int position = 0;
  double max_load_kw = 0.0;
};

struct AcuInfo {
  std::string id;
  std::string side = "left";
  int position = 0;
  double max_fan_power_kw = 0.0;
};

struct SensorInfo {
  std::string id;
  std::string aisle;
  int position = 0;
};

struct RoomLayout {
  std::string name;
  std::vector<RackInfo> racks;
  std::vector<AcuInfo> acus;
  std::vector<SensorInfo> cold_sensors;
  std::vector<SensorInfo> hot_sensors;
  // aisle id -> ids of racks/ACUs facing that aisle
  std::map<std::string, std::vector<std::string>> aisle_map;

  void validate() const;
  nlohmann::json to_json() const;
  static RoomLayout from_json(const nlohmann::json& j);
  static RoomLayout load(const std::string& path);

  // Stable content hash; datasets and checkpoints refuse to mix layouts.
  std::uint64_t hash() const { return fnv1a64(to_json().dump()); }
};

inline void RoomLayout::validate() const {
  if (acus.empty()) throw ConfigError("layout has no ACUs");
  if (cold_sensors.empty()) throw ConfigError("layout has no cold-aisle sensors");
  std::set<std::string> ids;
  auto add_id = [&](const std::string& id, const char* kind) {
    if (id.empty()) throw ConfigError(std::string(kind) + " with empty id");
    if (!ids.insert(id).second) throw ConfigError("duplicate id: " + id);
  };
  for (const auto& r : racks) add_id(r.id, "rack");
  for (const auto& a : acus) add_id(a.id, "acu");
  for (const auto& s : cold_sensors) {
    add_id(s.id, "sensor");
    if (s.aisle.empty()) throw ConfigError("sensor " + s.id + " has no aisle");
  }
  for (const auto& s : hot_sensors) {
    add_id(s.id, "sensor");
    if (s.aisle.empty()) throw ConfigError("sensor " + s.id + " has no aisle");
  }
  for (const auto& [aisle, members] : aisle_map) {
    for (const auto& m : members) {
      if (!ids.count(m))
        throw ConfigError("aisle_map entry " + aisle + " references unknown id " + m);
    }
  }
}

inline nlohmann::json RoomLayout::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["racks"] = nlohmann::json::array();
  for (const auto& r : racks)
    j["racks"].push_back({{"id", r.id}, {"position", r.position},
                          {"max_load_kw", r.max_load_kw}});
  j["acus"] = nlohmann::json::array();
  for (const auto& a : acus)
    j["acus"].push_back({{"id", a.id}, {"side", a.side}, {"position", a.position},
                         {"max_fan_power_kw", a.max_fan_power_kw}});
  auto sensors_json = [](const std::vector<SensorInfo>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : v)
      arr.push_back({{"id", s.id}, {"aisle", s.aisle}, {"position", s.position}});
    return arr;
  };
  j["cold_sensors"] = sensors_json(cold_sensors);
  j["hot_sensors"] = sensors_json(hot_sensors);
  j["aisle_map"] = aisle_map;
  return j;
}

inline RoomLayout RoomLayout::from_json(const nlohmann::json& j) {
  RoomLayout out;
  out.name = j.value("name", "");
  for (const auto& r : j.value("racks", nlohmann::json::array()))
    out.racks.push_back({r.at("id"), r.at("position"), r.at("max_load_kw")});
  for (const auto& a : j.value("acus", nlohmann::json::array()))
    out.acus.push_back({a.at("id"), a.value("side", "left"), a.at("position"),
                        a.at("max_fan_power_kw")});
  auto read_sensors = [](const nlohmann::json& arr) {
    std::vector<SensorInfo> v;
    for (const auto& s : arr)
      v.push_back({s.at("id"), s.at("aisle"), s.at("position")});
    return v;
  };
  out.cold_sensors = read_sensors(j.value("cold_sensors", nlohmann::json::array()));
  out.hot_sensors = read_sensors(j.value("hot_sensors", nlohmann::json::array()));
  if (j.contains("aisle_map"))
    out.aisle_map = j.at("aisle_map")
                        .get<std::map<std::string, std::vector<std::string>>>();
  out.validate();
  return out;
}

inline RoomLayout RoomLayout::load(const std::string& path) {
  return from_json(nlohmann::json::parse(read_file(path)));
}

// Node order: sensor_nodes = cold sensors (sorted by id) then hot sensors
// (sorted by id); acu_nodes sorted by id. a_control spans the union node set
// [sensors | acus] and is nonzero only in the cross blocks.
struct RoomGraph {
  std::vector<std::string> sensor_nodes;
  std::vector<std::string> acu_nodes;
  Eigen::MatrixXd a_spatial;
  Eigen::MatrixXd a_control;
  Eigen::MatrixXd distance_weights;  // union-sized; >0 exactly on edges

  int num_sensors() const { return static_cast<int>(sensor_nodes.size()); }
  int num_acus() const { return static_cast<int>(acu_nodes.size()); }
  int num_nodes() const { return num_sensors() + num_acus(); }

  // sensor x acu block of distance_weights, used by the simulator for
  // supply-air mixing and return-air aggregation
  Eigen::MatrixXd control_weights() const {
    return distance_weights.block(0, num_sensors(), num_sensors(), num_acus());
  }
};

inline RoomGraph build_room_graph(const RoomLayout& layout, int spatial_radius,
                                  int control_radius) {
  layout.validate();
  if (spatial_radius < 1 || control_radius < 1)
    throw ConfigError("graph radii must be positive");

  struct Node {
    std::string id;
    std::string aisle;
    int position;
  };
  std::vector<Node> sensors;
  auto push_sorted = [&sensors](std::vector<SensorInfo> v) {
    std::sort(v.begin(), v.end(),
              [](const SensorInfo& a, const SensorInfo& b) { return a.id < b.id; });
    for (const auto& s : v) sensors.push_back({s.id, s.aisle, s.position});
  };
  push_sorted(layout.cold_sensors);
  push_sorted(layout.hot_sensors);

  std::vector<AcuInfo> acus = layout.acus;
  std::sort(acus.begin(), acus.end(),
            [](const AcuInfo& a, const AcuInfo& b) { return a.id < b.id; });

  const int ns = static_cast<int>(sensors.size());
  const int na = static_cast<int>(acus.size());
  const int n = ns + na;

  RoomGraph g;
  for (const auto& s : sensors) g.sensor_nodes.push_back(s.id);
  for (const auto& a : acus) g.acu_nodes.push_back(a.id);
  g.a_spatial = Eigen::MatrixXd::Zero(ns, ns);
  g.a_control = Eigen::MatrixXd::Zero(n, n);
  g.distance_weights = Eigen::MatrixXd::Zero(n, n);

  for (int i = 0; i < ns; ++i) {
    for (int j = i + 1; j < ns; ++j) {
      if (sensors[i].aisle != sensors[j].aisle) continue;
      const int d = std::abs(sensors[i].position - sensors[j].position);
      if (d <= spatial_radius) {
        g.a_spatial(i, j) = g.a_spatial(j, i) = 1.0;
        const double w = 1.0 / (1.0 + d);
        g.distance_weights(i, j) = g.distance_weights(j, i) = w;
      }
    }
  }
  for (int i = 0; i < ns; ++i) {
    for (int m = 0; m < na; ++m) {
      const int d = std::abs(sensors[i].position - acus[m].position);
      if (d <= control_radius) {
        g.a_control(i, ns + m) = g.a_control(ns + m, i) = 1.0;
        const double w = 1.0 / (1.0 + d);
        g.distance_weights(i, ns + m) = g.distance_weights(ns + m, i) = w;
      }
    }
  }
  for (int m = 0; m < na; ++m) {
    if (g.a_control.row(ns + m).sum() == 0.0)
      throw ConfigError("ACU " + acus[m].id +
                        " has no control edge; increase control_radius");
  }
  return g;
}

// D^(-1/2) (A+I) D^(-1/2) with D the degree matrix of A+I.
inline Eigen::MatrixXd propagation_operator(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols())
    throw ShapeError("propagation_operator: adjacency must be square");
  for (int i = 0; i < a.rows(); ++i) {
    if (a(i, i) != 0.0)
      throw DataError("propagation_operator: adjacency diagonal must be zero");
    for (int j = 0; j < a.cols(); ++j)
      if (a(i, j) < 0.0)
        throw DataError("propagation_operator: adjacency must be nonnegative");
  }
  Eigen::MatrixXd s = a + Eigen::MatrixXd::Identity(a.rows(), a.cols());
  Eigen::VectorXd d = s.rowwise().sum();
  Eigen::VectorXd dinv = d.array().rsqrt();
  return dinv.asDiagonal() * s * dinv.asDiagonal();
}

inline void write_edge_list(const RoomGraph& g, std::ostream& os) {
  std::vector<std::string> names = g.sensor_nodes;
  names.insert(names.end(), g.acu_nodes.begin(), g.acu_nodes.end());
  const int ns = g.num_sensors();
  os << "# type\tnode_a\tnode_b\tweight\n";
  for (int i = 0; i < ns; ++i)
    for (int j = i + 1; j < ns; ++j)
      if (g.a_spatial(i, j) != 0.0)
        os << "spatial\t" << names[i] << "\t" << names[j] << "\t"
           << g.distance_weights(i, j) << "\n";
  for (int i = 0; i < ns; ++i)
    for (int m = ns; m < g.num_nodes(); ++m)
      if (g.a_control(i, m) != 0.0)
        os << "control\t" << names[i] << "\t" << names[m] << "\t"
           << g.distance_weights(i, m) << "\n";
}

}  // namespace dccool
