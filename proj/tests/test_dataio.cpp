#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "dccool/dataio.hpp"
#include "dccool/mdp.hpp"
#include "dccool/presets.hpp"

using namespace dccool;

namespace {

RoomLayout one_of_each_layout() {
  RoomLayout lay;
  lay.name = "one-of-each";
  lay.racks.push_back({"rk0", 0, 2.0});
  lay.acus.push_back({"acu0", "left", 0, 3.0});
  lay.cold_sensors.push_back({"tc0", "cold", 0});
  lay.hot_sensors.push_back({"th0", "hot", 0});
  return lay;
}

// A well-formed observation for the one-of-each layout: every temperature at
// `temp` degC, rack power at `power` kW, both commands at `action` percent.
Observation obs_at(double temp, double power, double action) {
  return {{"tc.tc0", temp},    {"th.th0", temp},  {"lwt.acu0", temp},
          {"lat.acu0", temp},  {"eat.acu0", temp}, {"ewt.acu0", temp},
          {"pw.rk0", power},   {"fan.acu0", action}, {"valve.acu0", action}};
}

LogRecord rec(double ts, double temp, double power = 75.0, double action = 50.0) {
  return LogRecord{ts, obs_at(temp, power, action)};
}

struct TempDir {
  std::string path;
  TempDir() {
    path = (std::filesystem::temp_directory_path() /
            ("dccool-dataio-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++)))
               .string();
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static inline int counter = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Scalar normalization

TEST_CASE("normalize: temperature 20.5 degC maps to exactly 0.5") {
  const NormalizationSpec spec;
  long clips = 0;
  REQUIRE(normalize_value(20.5, spec.temperature, &clips) == 0.5);
  REQUIRE(clips == 0);
}

TEST_CASE("normalize: a fully-open 100 percent command maps to exactly 1.0") {
  const NormalizationSpec spec;
  REQUIRE(normalize_value(100.0, spec.action, nullptr) == 1.0);
  REQUIRE(normalize_value(0.0, spec.action, nullptr) == 0.0);
  REQUIRE(normalize_value(50.0, spec.action, nullptr) == 0.5);
}

TEST_CASE("normalize: default ranges per feature class") {
  const NormalizationSpec spec;
  REQUIRE(spec.temperature.lo == 1.0);
  REQUIRE(spec.temperature.hi == 40.0);
  REQUIRE(spec.humidity.lo == 0.0);
  REQUIRE(spec.humidity.hi == 100.0);
  REQUIRE(spec.power.lo == 0.0);
  REQUIRE(spec.power.hi == 150.0);
  REQUIRE(spec.action.lo == 0.0);
  REQUIRE(spec.action.hi == 100.0);
  // mid-range checks against the closed-form map
  REQUIRE(normalize_value(75.0, spec.power, nullptr) == 0.5);
  REQUIRE(normalize_value(25.0, spec.humidity, nullptr) == 0.25);
}

TEST_CASE("normalize: denormalize(normalize(x)) = x within 1e-9 in range") {
  const NormalizationSpec spec;
  Rng rng(42);
  for (int k = 0; k < 200; ++k) {
    for (auto cls : {FeatureClass::kTemperature, FeatureClass::kHumidity,
                     FeatureClass::kPower, FeatureClass::kAction}) {
      const NormRange& r = spec.range_for(cls);
      const double x = r.lo + rng.uniform() * (r.hi - r.lo);
      long clips = 0;
      const double back = denormalize_value(normalize_value(x, r, &clips), r);
      REQUIRE(clips == 0);
      REQUIRE(back == Catch::Approx(x).margin(1e-9));
    }
  }
}

TEST_CASE("normalize: out-of-range values clip into [0,1] and are counted") {
  const NormalizationSpec spec;
  long clips = 0;
  REQUIRE(normalize_value(45.0, spec.temperature, &clips) == 1.0);
  REQUIRE(clips == 1);
  REQUIRE(normalize_value(0.5, spec.temperature, &clips) == 0.0);
  REQUIRE(clips == 2);
  REQUIRE(normalize_value(20.0, spec.temperature, &clips) > 0.0);
  REQUIRE(clips == 2);  // in-range value does not bump the counter
  // the counter pointer is optional
  REQUIRE(normalize_value(45.0, spec.temperature, nullptr) == 1.0);
}

TEST_CASE("normalize: a degenerate range is rejected") {
  NormalizationSpec spec;
  spec.power = {10.0, 10.0};
  REQUIRE_THROWS_AS(spec.validate(), ConfigError);
  spec.power = {10.0, 5.0};
  REQUIRE_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("normalize: spec round-trips through JSON") {
  NormalizationSpec spec;
  spec.temperature = {2.0, 45.0};
  spec.power = {0.0, 99.0};
  const NormalizationSpec back = NormalizationSpec::from_json(spec.to_json());
  REQUIRE(back.temperature.lo == 2.0);
  REQUIRE(back.temperature.hi == 45.0);
  REQUIRE(back.power.hi == 99.0);
  REQUIRE(back.action.lo == 0.0);
  REQUIRE(back.to_json() == spec.to_json());
}

// ---------------------------------------------------------------------------
// Vector normalization against the segment map

TEST_CASE("normalize: state vectors pick the range of each feature class") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  const NormalizationSpec spec;
  // every temperature at 20.5 and the rack power at 75 both normalize to 0.5
  const Eigen::VectorXd raw =
      assemble_state(obs_at(20.5, 75.0, 0.0), m).values;
  long clips = 0;
  const Eigen::VectorXd u = normalize_state(raw, m, spec, &clips);
  REQUIRE(clips == 0);
  for (int i = 0; i < u.size(); ++i) REQUIRE(u[i] == 0.5);

  const Eigen::VectorXd back = denormalize_state(u, m, spec);
  for (int i = 0; i < raw.size(); ++i)
    REQUIRE(back[i] == Catch::Approx(raw[i]).margin(1e-9));
}

TEST_CASE("normalize: state vector of the wrong dimension is rejected") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  const NormalizationSpec spec;
  const Eigen::VectorXd bad = Eigen::VectorXd::Zero(m.state_dim() + 1);
  REQUIRE_THROWS_AS(normalize_state(bad, m, spec), ShapeError);
  REQUIRE_THROWS_AS(denormalize_state(bad, m, spec), ShapeError);
}

TEST_CASE("normalize: raw percent actions map onto [0,1] and back") {
  const NormalizationSpec spec;
  Eigen::VectorXd raw(3);
  raw << 100.0, 0.0, 37.5;
  long clips = 0;
  const Eigen::VectorXd u = normalize_action(raw, spec, &clips);
  REQUIRE(clips == 0);
  REQUIRE(u[0] == 1.0);
  REQUIRE(u[1] == 0.0);
  REQUIRE(u[2] == 0.375);
  const Eigen::VectorXd back = denormalize_action(u, spec);
  for (int i = 0; i < 3; ++i)
    REQUIRE(back[i] == Catch::Approx(raw[i]).margin(1e-9));
}

// ---------------------------------------------------------------------------
// Malformed records

TEST_CASE("resample: malformed record predicate") {
  REQUIRE_FALSE(record_is_malformed(rec(0.0, 22.0)));
  LogRecord r = rec(0.0, 22.0);
  r.timestamp = std::nan("");
  REQUIRE(record_is_malformed(r));
  r = rec(0.0, 22.0);
  r.values.clear();
  REQUIRE(record_is_malformed(r));
  r = rec(0.0, 22.0);
  r.values[""] = 1.0;
  REQUIRE(record_is_malformed(r));
  r = rec(0.0, 22.0);
  r.values["tc.tc0"] = std::numeric_limits<double>::infinity();
  REQUIRE(record_is_malformed(r));
}

// ---------------------------------------------------------------------------
// Resampling

TEST_CASE("resample: an already-uniform log passes through unchanged") {
  std::vector<LogRecord> log{rec(0, 20), rec(120, 21), rec(240, 22)};
  const ResampleResult rs = resample(log, 120.0);
  REQUIRE(rs.dropped_records == 0);
  REQUIRE(rs.episodes.size() == 1);
  REQUIRE(rs.episodes[0].size() == 3);
  for (int t = 0; t < 3; ++t) {
    REQUIRE(rs.episodes[0][t].timestamp == 120.0 * t);
    REQUIRE(rs.episodes[0][t].values.at("tc.tc0") == 20.0 + t);
  }
}

TEST_CASE("resample: each grid point carries the latest record at or before it") {
  // records at t = 0, 90, 240 s on a 120 s grid -> values {t0: v0, t120: v90,
  // t240: v240}
  std::vector<LogRecord> log{rec(0, 10), rec(90, 11), rec(240, 12)};
  const ResampleResult rs = resample(log, 120.0);
  REQUIRE(rs.episodes.size() == 1);
  const auto& ep = rs.episodes[0];
  REQUIRE(ep.size() == 3);
  REQUIRE(ep[0].timestamp == 0.0);
  REQUIRE(ep[0].values.at("tc.tc0") == 10.0);
  REQUIRE(ep[1].timestamp == 120.0);
  REQUIRE(ep[1].values.at("tc.tc0") == 11.0);
  REQUIRE(ep[2].timestamp == 240.0);
  REQUIRE(ep[2].values.at("tc.tc0") == 12.0);
}

TEST_CASE("resample: the grid anchors at the first kept record") {
  std::vector<LogRecord> log{rec(35, 20), rec(155, 21), rec(275, 22)};
  const ResampleResult rs = resample(log, 120.0);
  REQUIRE(rs.episodes.size() == 1);
  REQUIRE(rs.episodes[0][0].timestamp == 35.0);
  REQUIRE(rs.episodes[0][1].timestamp == 155.0);
  REQUIRE(rs.episodes[0][2].timestamp == 275.0);
}

TEST_CASE("resample: a twenty-minute gap on a five-minute grid splits episodes") {
  // silence from 600 s to 1800 s is four intervals, past the three-interval
  // carry tolerance, so the log becomes two episodes
  std::vector<LogRecord> log{rec(0, 20),    rec(300, 21),  rec(600, 22),
                             rec(1800, 23), rec(2100, 24), rec(2400, 25)};
  const ResampleResult rs = resample(log, 300.0);
  REQUIRE(rs.episodes.size() == 2);
  REQUIRE(rs.episodes[0].size() == 3);
  REQUIRE(rs.episodes[1].size() == 3);
  REQUIRE(rs.episodes[0].back().timestamp == 600.0);
  REQUIRE(rs.episodes[1].front().timestamp == 1800.0);
  REQUIRE(rs.episodes[1].front().values.at("tc.tc0") == 23.0);
}

TEST_CASE("resample: holes up to three intervals are carried forward") {
  // record missing at t=300 and t=600; the 900 s hole (exactly three
  // intervals) is bridged by carrying the t=0 value
  std::vector<LogRecord> log{rec(0, 20), rec(900, 23), rec(1200, 24)};
  const ResampleResult rs = resample(log, 300.0);
  REQUIRE(rs.episodes.size() == 1);
  const auto& ep = rs.episodes[0];
  REQUIRE(ep.size() == 5);
  REQUIRE(ep[1].timestamp == 300.0);
  REQUIRE(ep[1].values.at("tc.tc0") == 20.0);  // carried
  REQUIRE(ep[2].values.at("tc.tc0") == 20.0);  // carried
  REQUIRE(ep[3].values.at("tc.tc0") == 23.0);  // fresh again
}

TEST_CASE("resample: a hole just past three intervals splits instead") {
  std::vector<LogRecord> log{rec(0, 20), rec(901, 23), rec(1201, 24)};
  const ResampleResult rs = resample(log, 300.0);
  REQUIRE(rs.episodes.size() == 2);
  REQUIRE(rs.episodes[0].size() == 1);
  REQUIRE(rs.episodes[1].front().timestamp == 901.0);
}

TEST_CASE("resample: malformed and time-regressing records are dropped and counted") {
  LogRecord bad = rec(60, 99);
  bad.values["tc.tc0"] = std::nan("");
  std::vector<LogRecord> log{rec(0, 20), bad, rec(120, 21), rec(30, 55),
                             rec(240, 22)};
  const ResampleResult rs = resample(log, 120.0);
  REQUIRE(rs.dropped_records == 2);
  REQUIRE(rs.episodes.size() == 1);
  REQUIRE(rs.episodes[0].size() == 3);
  REQUIRE(rs.episodes[0][1].values.at("tc.tc0") == 21.0);
}

TEST_CASE("resample: rejects empty logs and non-positive intervals") {
  REQUIRE_THROWS_AS(resample({}, 120.0), DataError);
  LogRecord bad = rec(0, 20);
  bad.values.clear();
  REQUIRE_THROWS_AS(resample({bad}, 120.0), DataError);
  REQUIRE_THROWS_AS(resample({rec(0, 20)}, 0.0), ConfigError);
  REQUIRE_THROWS_AS(resample({rec(0, 20)}, -5.0), ConfigError);
}

// ---------------------------------------------------------------------------
// Transition assembly

TEST_CASE("transitions: an episode of length L yields L-1 transitions") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  for (int L = 2; L <= 6; ++L) {
    std::vector<LogRecord> ep;
    for (int t = 0; t < L; ++t) ep.push_back(rec(120.0 * t, 20.0 + t));
    const TransitionDataset ds =
        build_transitions({ep}, m, NormalizationSpec{}, 120.0, 0x1234u);
    REQUIRE(ds.size() == L - 1);
  }
}

TEST_CASE("transitions: two episodes of lengths 3 and 2 yield 3 transitions") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  std::vector<LogRecord> ep1{rec(0, 20), rec(120, 21), rec(240, 22)};
  std::vector<LogRecord> ep2{rec(0, 30), rec(120, 31)};
  const TransitionDataset ds =
      build_transitions({ep1, ep2}, m, NormalizationSpec{}, 120.0, 0x1234u);
  REQUIRE(ds.size() == 3);
  REQUIRE(ds.episode_id == std::vector<int>{0, 0, 1});
}

TEST_CASE("transitions: s' chains within an episode and never across") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  std::vector<LogRecord> ep1{rec(0, 20), rec(120, 21), rec(240, 22),
                             rec(360, 23)};
  std::vector<LogRecord> ep2{rec(0, 30), rec(120, 31), rec(240, 32)};
  const TransitionDataset ds =
      build_transitions({ep1, ep2}, m, NormalizationSpec{}, 120.0, 0x1234u);
  REQUIRE(ds.size() == 5);
  for (long i = 0; i + 1 < ds.size(); ++i) {
    if (ds.episode_id[i] == ds.episode_id[i + 1]) {
      REQUIRE((ds.s_next.row(i) - ds.s.row(i + 1)).cwiseAbs().maxCoeff() == 0.0);
    } else {
      // episode boundary: the next row restarts from fresh data
      REQUIRE((ds.s_next.row(i) - ds.s.row(i + 1)).cwiseAbs().maxCoeff() > 0.0);
    }
  }
}

TEST_CASE("transitions: the final a' of each episode duplicates its a") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  std::vector<LogRecord> ep;
  for (int t = 0; t < 4; ++t)
    ep.push_back(rec(120.0 * t, 20.0, 75.0, 10.0 * (t + 1)));
  const TransitionDataset ds =
      build_transitions({ep}, m, NormalizationSpec{}, 120.0, 0x1234u);
  REQUIRE(ds.size() == 3);
  // interior transitions: a' is the next row's a
  REQUIRE((ds.a_next.row(0) - ds.a.row(1)).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((ds.a_next.row(1) - ds.a.row(2)).cwiseAbs().maxCoeff() == 0.0);
  // final transition: no successor action exists, so a' duplicates a
  REQUIRE((ds.a_next.row(2) - ds.a.row(2)).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(ds.a(2, 0) == 0.3);  // fan at 30 percent normalized
}

TEST_CASE("transitions: every episode needs at least two records") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  std::vector<LogRecord> ok{rec(0, 20), rec(120, 21)};
  std::vector<LogRecord> solo{rec(0, 30)};
  REQUIRE_THROWS_AS(
      build_transitions({ok, solo}, m, NormalizationSpec{}, 120.0, 0u),
      DataError);
  REQUIRE_THROWS_AS(
      build_transitions({{}}, m, NormalizationSpec{}, 120.0, 0u), DataError);
}

TEST_CASE("transitions: values are normalized and clips are counted") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  std::vector<LogRecord> ep{rec(0, 20.5, 75.0, 100.0),
                            rec(120, 45.0, 75.0, 0.0)};  // 45 degC clips
  const TransitionDataset ds =
      build_transitions({ep}, m, NormalizationSpec{}, 120.0, 0u);
  REQUIRE(ds.s(0, m.cold_idx[0]) == 0.5);
  REQUIRE(ds.a(0, 0) == 1.0);
  REQUIRE(ds.s_next(0, m.cold_idx[0]) == 1.0);  // clipped at the top
  REQUIRE(ds.clip_count == 6);  // six temperature features clipped once each
}

TEST_CASE("transitions: a missing action command is a data error") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  Observation obs = obs_at(20.0, 75.0, 50.0);
  obs.erase("valve.acu0");
  REQUIRE_THROWS_AS(assemble_action(obs, m), DataError);
  std::vector<LogRecord> ep{rec(0, 20), LogRecord{120.0, obs}};
  REQUIRE_THROWS_AS(
      build_transitions({ep}, m, NormalizationSpec{}, 120.0, 0u), DataError);
}

// ---------------------------------------------------------------------------
// On-disk round trip

namespace {

TransitionDataset small_dataset(const SegmentMap& m) {
  std::vector<std::vector<LogRecord>> eps;
  eps.push_back({rec(0, 20.5, 75, 40), rec(120, 21.5, 80, 45),
                 rec(240, 22.5, 85, 50)});
  eps.push_back({rec(0, 24.0, 60, 55), rec(120, 25.0, 65, 60)});
  TransitionDataset ds =
      build_transitions(eps, m, NormalizationSpec{}, 120.0, 0xabcdef12u);
  ds.created = "2026-08-15T00:00:00Z";
  ds.dropped_records = 4;
  return ds;
}

}  // namespace

TEST_CASE("dataset: manifest carries format tag and counts") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  const TransitionDataset ds = small_dataset(m);
  const nlohmann::json man = ds.manifest();
  REQUIRE(man.at("format") == "transition-dataset-v1");
  REQUIRE(man.at("counts").at("transitions") == 3);
  REQUIRE(man.at("counts").at("episodes") == 2);
  REQUIRE(man.at("counts").at("dropped_records") == 4);
  REQUIRE(man.at("interval_seconds") == 120.0);
  REQUIRE(man.at("layout_hash") == to_hex(0xabcdef12u));
}

TEST_CASE("dataset: save/load round-trips every matrix bit-exactly") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  const TransitionDataset ds = small_dataset(m);
  TempDir dir;
  ds.save(dir.path);
  const TransitionDataset back = TransitionDataset::load(dir.path);
  REQUIRE(back.size() == ds.size());
  REQUIRE(back.episode_id == ds.episode_id);
  REQUIRE(back.interval_seconds == ds.interval_seconds);
  REQUIRE(back.layout_hash == ds.layout_hash);
  REQUIRE(back.clip_count == ds.clip_count);
  REQUIRE(back.dropped_records == ds.dropped_records);
  REQUIRE((back.s - ds.s).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((back.a - ds.a).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((back.s_next - ds.s_next).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((back.a_next - ds.a_next).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.manifest_hash() == ds.manifest_hash());
  REQUIRE(back.segments.hash() == ds.segments.hash());
}

TEST_CASE("dataset: a tampered data file is rejected by the manifest hash") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  const TransitionDataset ds = small_dataset(m);
  TempDir dir;
  ds.save(dir.path);
  std::string csv = read_file(dir.path + "/data.tsv");
  const auto pos = csv.find("0.5");
  REQUIRE(pos != std::string::npos);
  csv[pos] = '9';
  write_file(dir.path + "/data.tsv", csv);
  REQUIRE_THROWS_AS(TransitionDataset::load(dir.path), DataError);
}

TEST_CASE("dataset: an unknown manifest format is rejected") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  const TransitionDataset ds = small_dataset(m);
  TempDir dir;
  ds.save(dir.path);
  nlohmann::json man = nlohmann::json::parse(read_file(dir.path + "/manifest.json"));
  man["format"] = "transition-dataset-v9";
  write_file(dir.path + "/manifest.json", man.dump(2));
  REQUIRE_THROWS_AS(TransitionDataset::load(dir.path), DataError);
}

TEST_CASE("dataset: a row with the wrong arity is rejected") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  const TransitionDataset ds = small_dataset(m);
  TempDir dir;
  ds.save(dir.path);
  std::string csv = read_file(dir.path + "/data.tsv");
  csv += "0\t0.5\n";  // short row appended
  write_file(dir.path + "/data.tsv", csv);
  nlohmann::json man = nlohmann::json::parse(read_file(dir.path + "/manifest.json"));
  man["data_hash"] = to_hex(fnv1a64(csv));  // keep the hash valid
  write_file(dir.path + "/manifest.json", man.dump(2));
  REQUIRE_THROWS_AS(TransitionDataset::load(dir.path), DataError);
}

TEST_CASE("dataset: reward terms use denormalized next-state temperatures") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  std::vector<LogRecord> ep{rec(0, 20.0, 75, 50), rec(120, 26.0, 75, 50)};
  TransitionDataset ds =
      build_transitions({ep}, m, NormalizationSpec{}, 120.0, 0u);
  ds.reward.rho_t = 25.0;
  ds.reward.rho_l = 18.0;
  const RewardTerms terms = ds.terms(0);
  // next-state cold-aisle temp is 26 degC, one degree over the 25 degC cap
  REQUIRE(terms.overtemp == Catch::Approx(softplus(1.0)).margin(1e-12));
  // the action column holds normalized commands: fan 0.5 cubed
  REQUIRE(terms.fan_cube == Catch::Approx(0.125).margin(1e-12));
  REQUIRE(terms.valve == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(terms.water == Catch::Approx(softplus(26.0 - 18.0)).margin(1e-12));
}

// ---------------------------------------------------------------------------
// Batch sampling

TEST_CASE("dataset: batch sampling is deterministic per seed and in range") {
  const SegmentMap m = build_segment_map(one_of_each_layout());
  const TransitionDataset ds = small_dataset(m);
  Rng a(7), b(7), c(8);
  const auto ia = sample_batch_indices(ds, 64, a);
  const auto ib = sample_batch_indices(ds, 64, b);
  const auto ic = sample_batch_indices(ds, 64, c);
  REQUIRE(ia == ib);
  REQUIRE(ia != ic);
  REQUIRE(ia.size() == 64);
  for (long i : ia) REQUIRE((i >= 0 && i < ds.size()));

  TransitionDataset empty;
  Rng r(1);
  REQUIRE_THROWS_AS(sample_batch_indices(empty, 4, r), DataError);
}
