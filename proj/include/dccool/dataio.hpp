#pragma once

// Dataset pipeline: min-max normalization with fixed per-class bounds,
// resampling of irregular telemetry to a uniform control interval
// (last-observation-carried-forward), transition assembly, and a columnar
// on-disk format with a structured manifest sidecar.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dccool/common.hpp"
#include "dccool/mdp.hpp"
#include "dccool/reward.hpp"
#include "json.hpp"

namespace dccool {

struct NormRange {
  double lo = 0.0;
  double hi = 1.0;
};

// Fixed normalization boundaries per feature class. Raw actions are logged in
// percent, so the (0,100) action range maps a fully-open command to 1.0.
struct NormalizationSpec {
  NormRange temperature{1.0, 40.0};
  NormRange humidity{0.0, 100.0};
  NormRange power{0.0, 150.0};
  NormRange action{0.0, 100.0};

  const NormRange& range_for(FeatureClass cls) const {
    switch (cls) {
      case FeatureClass::kTemperature: return temperature;
      case FeatureClass::kHumidity: return humidity;
      case FeatureClass::kPower: return power;
      case FeatureClass::kAction: return action;
    }
    throw ConfigError("feature class without a normalization mapping");
  }

  void validate() const {
    for (auto cls : {FeatureClass::kTemperature, FeatureClass::kHumidity,
                     FeatureClass::kPower, FeatureClass::kAction}) {
      const auto& r = range_for(cls);
      if (!(r.hi > r.lo))
        throw ConfigError("normalization range must satisfy hi > lo for class " +
                          feature_class_name(cls));
    }
  }

  nlohmann::json to_json() const {
    auto rj = [](const NormRange& r) { return nlohmann::json{{"lo", r.lo}, {"hi", r.hi}}; };
    return {{"temperature", rj(temperature)},
            {"humidity", rj(humidity)},
            {"power", rj(power)},
            {"action", rj(action)}};
  }
  static NormalizationSpec from_json(const nlohmann::json& j) {
    auto rr = [&](const char* key) {
      return NormRange{j.at(key).at("lo").get<double>(), j.at(key).at("hi").get<double>()};
    };
    NormalizationSpec s;
    s.temperature = rr("temperature");
    s.humidity = rr("humidity");
    s.power = rr("power");
    s.action = rr("action");
    s.validate();
    return s;
  }
};

// Scalar min-max map, clipping into [0,1]; the counter records clips.
inline double normalize_value(double x, const NormRange& r, long* clip_count) {
  double u = (x - r.lo) / (r.hi - r.lo);
  if (u < 0.0 || u > 1.0) {
    if (clip_count) ++*clip_count;
    u = std::clamp(u, 0.0, 1.0);
  }
  return u;
}

inline double denormalize_value(double u, const NormRange& r) {
  return r.lo + u * (r.hi - r.lo);
}

inline Eigen::VectorXd normalize_state(const Eigen::VectorXd& raw,
                                       const SegmentMap& m,
                                       const NormalizationSpec& spec,
                                       long* clip_count = nullptr) {
  if (raw.size() != m.state_dim())
    throw ShapeError("normalize_state: vector does not match segment map");
  Eigen::VectorXd u(raw.size());
  for (int i = 0; i < raw.size(); ++i)
    u[i] = normalize_value(raw[i], spec.range_for(m.state_features[i].cls), clip_count);
  return u;
}

inline Eigen::VectorXd denormalize_state(const Eigen::VectorXd& u,
                                         const SegmentMap& m,
                                         const NormalizationSpec& spec) {
  if (u.size() != m.state_dim())
    throw ShapeError("denormalize_state: vector does not match segment map");
  Eigen::VectorXd raw(u.size());
  for (int i = 0; i < u.size(); ++i)
    raw[i] = denormalize_value(u[i], spec.range_for(m.state_features[i].cls));
  return raw;
}

inline Eigen::VectorXd normalize_action(const Eigen::VectorXd& raw_percent,
                                        const NormalizationSpec& spec,
                                        long* clip_count = nullptr) {
  Eigen::VectorXd u(raw_percent.size());
  for (int i = 0; i < raw_percent.size(); ++i)
    u[i] = normalize_value(raw_percent[i], spec.action, clip_count);
  return u;
}

inline Eigen::VectorXd denormalize_action(const Eigen::VectorXd& u,
                                          const NormalizationSpec& spec) {
  Eigen::VectorXd raw(u.size());
  for (int i = 0; i < u.size(); ++i) raw[i] = denormalize_value(u[i], spec.action);
  return raw;
}

// ---------------------------------------------------------------------------
// Resampling

struct LogRecord {
  double timestamp = 0.0;  // seconds
  Observation values;      // state features and action commands, raw units
};

struct ResampleResult {
  std::vector<std::vector<LogRecord>> episodes;
  long dropped_records = 0;
};

inline bool record_is_malformed(const LogRecord& r) {
  if (!std::isfinite(r.timestamp) || r.values.empty()) return true;
  for (const auto& [k, v] : r.values)
    if (k.empty() || !std::isfinite(v)) return true;
  return false;
}

// Snap a (possibly irregular) log onto a uniform grid anchored at the first
// kept record. Each grid point takes the latest record at or before it; when
// more than three intervals pass without a fresh record the episode is closed
// and the grid re-anchors at the next record. Malformed or time-regressing
// records are dropped and counted.
inline ResampleResult resample(const std::vector<LogRecord>& log,
                               double interval_seconds) {
  if (interval_seconds <= 0.0) throw ConfigError("resample interval must be positive");
  ResampleResult out;
  std::vector<LogRecord> kept;
  kept.reserve(log.size());
  for (const auto& r : log) {
    if (record_is_malformed(r) ||
        (!kept.empty() && r.timestamp < kept.back().timestamp)) {
      ++out.dropped_records;
      continue;
    }
    kept.push_back(r);
  }
  if (kept.empty()) throw DataError("resample: empty log");

  const double max_stale = 3.0 * interval_seconds;
  std::vector<LogRecord> episode;
  std::size_t i = 0;
  double grid = kept.front().timestamp;
  const double t_end = kept.back().timestamp;
  while (true) {
    while (i + 1 < kept.size() && kept[i + 1].timestamp <= grid) ++i;
    if (grid > kept[i].timestamp) {
      // This grid point would carry a stale value. Carrying is only sound
      // across holes a fresh record closes within three intervals; a longer
      // silence is a telemetry gap, so end the episode and re-anchor the grid
      // at the record after the gap.
      const bool gap = i + 1 >= kept.size() ||
                       kept[i + 1].timestamp - kept[i].timestamp > max_stale;
      if (gap) {
        if (!episode.empty()) out.episodes.push_back(std::move(episode));
        episode.clear();
        if (i + 1 >= kept.size()) break;
        ++i;
        grid = kept[i].timestamp;
        continue;
      }
    }
    episode.push_back(LogRecord{grid, kept[i].values});
    if (grid >= t_end) break;
    grid += interval_seconds;
  }
  if (!episode.empty()) out.episodes.push_back(std::move(episode));
  return out;
}

// ---------------------------------------------------------------------------
// Transition dataset

struct TransitionDataset {
  double interval_seconds = 0.0;
  SegmentMap segments;
  NormalizationSpec norm;
  RewardParams reward;  // identity weights until fit-reward runs
  std::uint64_t layout_hash = 0;
  std::string created;
  long clip_count = 0;
  long dropped_records = 0;

  std::vector<int> episode_id;            // per transition
  Eigen::MatrixXd s, a, s_next, a_next;   // rows = transitions, normalized

  long size() const { return static_cast<long>(episode_id.size()); }

  // Raw penalty terms of transition row i, from denormalized values.
  RewardTerms terms(long i) const {
    const Eigen::VectorXd raw_next = denormalize_state(s_next.row(i).transpose(), segments, norm);
    return compute_reward_terms(segments, raw_next, a.row(i).transpose(),
                                reward.rho_t, reward.rho_l);
  }
  double reward_at(long i) const { return compute_reward(reward, terms(i)); }

  std::vector<RewardTerms> all_terms() const {
    std::vector<RewardTerms> out;
    out.reserve(size());
    for (long i = 0; i < size(); ++i) out.push_back(terms(i));
    return out;
  }

  nlohmann::json manifest() const;
  std::uint64_t manifest_hash() const { return fnv1a64(manifest().dump()); }
  void save(const std::string& dir) const;
  static TransitionDataset load(const std::string& dir);
};

// Pull an action vector (raw percent) out of an observation by name.
inline Eigen::VectorXd assemble_action(const Observation& obs, const SegmentMap& m) {
  Eigen::VectorXd a(m.action_dim());
  for (int i = 0; i < m.action_dim(); ++i) {
    auto it = obs.find(m.action_names[i]);
    if (it == obs.end())
      throw DataError("observation missing action command: " + m.action_names[i]);
    a[i] = it->second;
  }
  return a;
}

// Consecutive pairing within episodes; the last record of an episode yields no
// transition, and the a' of an episode's final transition duplicates its a.
inline TransitionDataset build_transitions(
    const std::vector<std::vector<LogRecord>>& episodes, const SegmentMap& m,
    const NormalizationSpec& norm, double interval_seconds,
    std::uint64_t layout_hash) {
  norm.validate();
  long total = 0;
  for (const auto& ep : episodes) {
    if (ep.size() < 2)
      throw DataError("build_transitions: every episode needs >= 2 records");
    total += static_cast<long>(ep.size()) - 1;
  }

  TransitionDataset ds;
  ds.interval_seconds = interval_seconds;
  ds.segments = m;
  ds.norm = norm;
  ds.layout_hash = layout_hash;
  ds.episode_id.reserve(total);
  ds.s.resize(total, m.state_dim());
  ds.a.resize(total, m.action_dim());
  ds.s_next.resize(total, m.state_dim());
  ds.a_next.resize(total, m.action_dim());

  long row = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    std::vector<Eigen::VectorXd> states(ep.size()), actions(ep.size());
    for (std::size_t t = 0; t < ep.size(); ++t) {
      states[t] = normalize_state(assemble_state(ep[t].values, m).values, m,
                                  norm, &ds.clip_count);
      actions[t] = normalize_action(assemble_action(ep[t].values, m), norm,
                                    &ds.clip_count);
    }
    for (std::size_t t = 0; t + 1 < ep.size(); ++t) {
      ds.episode_id.push_back(static_cast<int>(e));
      ds.s.row(row) = states[t].transpose();
      ds.a.row(row) = actions[t].transpose();
      ds.s_next.row(row) = states[t + 1].transpose();
      const bool last = (t + 2 == ep.size());
      ds.a_next.row(row) = (last ? actions[t] : actions[t + 1]).transpose();
      ++row;
    }
  }
  return ds;
}

inline nlohmann::json TransitionDataset::manifest() const {
  long episodes = 0;
  for (std::size_t i = 0; i < episode_id.size(); ++i)
    if (i == 0 || episode_id[i] != episode_id[i - 1]) ++episodes;
  return {{"format", "transition-dataset-v1"},
          {"interval_seconds", interval_seconds},
          {"layout_hash", to_hex(layout_hash)},
          {"segment_map", segments.to_json()},
          {"normalization", norm.to_json()},
          {"reward", reward.to_json()},
          {"created", created},
          {"counts",
           {{"transitions", size()},
            {"episodes", episodes},
            {"clipped_values", clip_count},
            {"dropped_records", dropped_records}}}};
}

inline void TransitionDataset::save(const std::string& dir) const {
  std::string csv;
  csv += "episode";
  for (const auto& f : segments.state_features) csv += "\ts." + f.name;
  for (const auto& n : segments.action_names) csv += "\ta." + n;
  for (const auto& f : segments.state_features) csv += "\tsp." + f.name;
  for (const auto& n : segments.action_names) csv += "\tap." + n;
  csv += "\n";
  for (long i = 0; i < size(); ++i) {
    csv += std::to_string(episode_id[i]);
    auto emit = [&](const Eigen::MatrixXd& mat) {
      for (int c = 0; c < mat.cols(); ++c) csv += "\t" + format_double(mat(i, c));
    };
    emit(s);
    emit(a);
    emit(s_next);
    emit(a_next);
    csv += "\n";
  }
  write_file(dir + "/data.tsv", csv);
  nlohmann::json man = manifest();
  man["data_hash"] = to_hex(fnv1a64(csv));
  write_file(dir + "/manifest.json", man.dump(2) + "\n");
}

inline TransitionDataset TransitionDataset::load(const std::string& dir) {
  const nlohmann::json man = nlohmann::json::parse(read_file(dir + "/manifest.json"));
  if (man.value("format", "") != std::string("transition-dataset-v1"))
    throw DataError("unrecognized dataset manifest format");
  TransitionDataset ds;
  ds.interval_seconds = man.at("interval_seconds").get<double>();
  ds.layout_hash = std::stoull(man.at("layout_hash").get<std::string>(), nullptr, 16);
  ds.segments = SegmentMap::from_json(man.at("segment_map"));
  ds.norm = NormalizationSpec::from_json(man.at("normalization"));
  ds.reward = RewardParams::from_json(man.at("reward"));
  ds.created = man.value("created", "");
  ds.clip_count = man.at("counts").at("clipped_values").get<long>();
  ds.dropped_records = man.at("counts").at("dropped_records").get<long>();

  const std::string csv = read_file(dir + "/data.tsv");
  if (man.contains("data_hash") &&
      man.at("data_hash").get<std::string>() != to_hex(fnv1a64(csv)))
    throw DataError("dataset data file does not match manifest hash");

  const int sd = ds.segments.state_dim(), ad = ds.segments.action_dim();
  std::vector<std::string> lines = split(csv, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.size() < 1) throw DataError("dataset data file is empty");
  const long n = static_cast<long>(lines.size()) - 1;
  ds.episode_id.reserve(n);
  ds.s.resize(n, sd);
  ds.a.resize(n, ad);
  ds.s_next.resize(n, sd);
  ds.a_next.resize(n, ad);
  for (long i = 0; i < n; ++i) {
    const auto cells = split(lines[i + 1], '\t');
    if (static_cast<int>(cells.size()) != 1 + 2 * (sd + ad))
      throw DataError("dataset row " + std::to_string(i) + " has wrong arity");
    ds.episode_id.push_back(std::stoi(cells[0]));
    int c = 1;
    for (int k = 0; k < sd; ++k) ds.s(i, k) = std::stod(cells[c++]);
    for (int k = 0; k < ad; ++k) ds.a(i, k) = std::stod(cells[c++]);
    for (int k = 0; k < sd; ++k) ds.s_next(i, k) = std::stod(cells[c++]);
    for (int k = 0; k < ad; ++k) ds.a_next(i, k) = std::stod(cells[c++]);
  }
  if (man.at("counts").at("transitions").get<long>() != ds.size())
    throw DataError("dataset row count does not match manifest");
  return ds;
}

// Uniform minibatch sampling with an explicit RNG (dataset itself immutable).
inline std::vector<long> sample_batch_indices(const TransitionDataset& ds,
                                              int batch, Rng& rng) {
  if (ds.size() == 0) throw DataError("cannot sample from an empty dataset");
  std::vector<long> idx(batch);
  for (int i = 0; i < batch; ++i)
    idx[i] = static_cast<long>(rng.uniform_int(static_cast<int>(ds.size())));
  return idx;
}

}  // namespace dccool
