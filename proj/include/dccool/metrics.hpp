#pragma once

// Run metrics and report plumbing: the air-cooling load factor (ACU energy as
// a percentage of server energy), the cold-aisle threshold violation rate,
// temperature distributions, replay-consistent recomputation from persisted
// trajectory logs, and small static SVG charts for the report command.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dccool/common.hpp"
#include "dccool/controllers.hpp"
#include "dccool/mdp.hpp"
#include "json.hpp"

namespace dccool {

inline double compute_aclf(double acu_energy_kwh, double server_energy_kwh) {
  if (!(server_energy_kwh > 0.0))
    throw DataError("aclf: server energy must be positive");
  return 100.0 * acu_energy_kwh / server_energy_kwh;
}

// Display convention: two decimals.
inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

// Fraction of steps whose post-step cold-aisle maximum exceeds the threshold.
// Exactly-at-threshold counts as a non-violation (strict >).
inline double cat_violation_rate(const TrajectoryLog& log, double rho_t) {
  if (log.steps.empty()) throw DataError("violation rate: empty log");
  long bad = 0;
  for (const auto& s : log.steps)
    if (s.next_cold_max > rho_t) ++bad;
  return static_cast<double>(bad) / static_cast<double>(log.steps.size());
}

struct RunMetrics {
  double server_kwh = 0.0;
  double acu_kwh = 0.0;
  double aclf = 0.0;
  double cat_violation_rate = 0.0;
  double hot_aisle_std = 0.0;
  double mean_action_delta = 0.0;  // mean |a_t - a_{t-1}| per component

  nlohmann::json to_json() const {
    return {{"server_kwh", server_kwh},
            {"acu_kwh", acu_kwh},
            {"aclf_percent", aclf},
            {"cat_violation_rate", cat_violation_rate},
            {"hot_aisle_std", hot_aisle_std},
            {"mean_action_delta", mean_action_delta}};
  }
  static RunMetrics from_json(const nlohmann::json& j) {
    RunMetrics m;
    m.server_kwh = j.at("server_kwh").get<double>();
    m.acu_kwh = j.at("acu_kwh").get<double>();
    m.aclf = j.at("aclf_percent").get<double>();
    m.cat_violation_rate = j.at("cat_violation_rate").get<double>();
    m.hot_aisle_std = j.at("hot_aisle_std").get<double>();
    m.mean_action_delta = j.at("mean_action_delta").get<double>();
    return m;
  }
};

inline RunMetrics compute_run_metrics(const TrajectoryLog& log,
                                      const SegmentMap& segs) {
  if (log.steps.empty()) throw DataError("run metrics: empty log");
  RunMetrics m;
  m.server_kwh = log.steps.back().server_kwh;
  m.acu_kwh = log.steps.back().acu_kwh;
  m.aclf = compute_aclf(m.acu_kwh, m.server_kwh);
  m.cat_violation_rate = cat_violation_rate(log, log.rho_t);

  // pooled standard deviation of all hot-aisle readings over the run
  std::vector<double> hot;
  for (const auto& s : log.steps)
    for (int i = segs.ss_begin; i < segs.ss_begin + segs.ss_count; ++i) {
      const auto& f = segs.state_features[i];
      if (f.name.rfind("th.", 0) == 0) hot.push_back(s.obs.at(f.name));
    }
  if (!hot.empty()) {
    double mean = 0.0;
    for (double v : hot) mean += v;
    mean /= static_cast<double>(hot.size());
    double var = 0.0;
    for (double v : hot) var += (v - mean) * (v - mean);
    m.hot_aisle_std = std::sqrt(var / static_cast<double>(hot.size()));
  }

  double delta = 0.0;
  long count = 0;
  for (std::size_t t = 1; t < log.steps.size(); ++t) {
    delta += (log.steps[t].action - log.steps[t - 1].action).cwiseAbs().sum();
    count += log.steps[t].action.size();
  }
  m.mean_action_delta = count > 0 ? delta / static_cast<double>(count) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Temperature distribution

struct TemperatureHistogram {
  double bin_width = 0.25;
  double origin = 0.0;  // left edge of bin 0
  std::vector<long> counts;
  double mean = 0.0;
  double stddev = 0.0;
  long total = 0;

  double bin_left(std::size_t i) const { return origin + bin_width * static_cast<double>(i); }
};

inline TemperatureHistogram temperature_histogram(const std::vector<double>& temps,
                                                  double bin_width = 0.25) {
  if (temps.empty()) throw DataError("temperature histogram: no samples");
  if (bin_width <= 0.0) throw ConfigError("histogram bin width must be positive");
  TemperatureHistogram h;
  h.bin_width = bin_width;
  const double lo = *std::min_element(temps.begin(), temps.end());
  h.origin = std::floor(lo / bin_width) * bin_width;
  for (double v : temps) {
    const auto idx = static_cast<std::size_t>((v - h.origin) / bin_width);
    if (idx >= h.counts.size()) h.counts.resize(idx + 1, 0);
    ++h.counts[idx];
    h.mean += v;
  }
  h.total = static_cast<long>(temps.size());
  h.mean /= static_cast<double>(h.total);
  double var = 0.0;
  for (double v : temps) var += (v - h.mean) * (v - h.mean);
  h.stddev = std::sqrt(var / static_cast<double>(h.total));
  return h;
}

// Pull one aisle's readings out of a trajectory log ("cold" or "hot").
inline std::vector<double> aisle_temps(const TrajectoryLog& log,
                                       const SegmentMap& segs,
                                       const std::string& aisle) {
  std::string prefix;
  if (aisle == "cold") prefix = "tc.";
  else if (aisle == "hot") prefix = "th.";
  else throw ConfigError("aisle must be 'cold' or 'hot'");
  std::vector<double> out;
  for (const auto& s : log.steps)
    for (const auto& [k, v] : s.obs)
      if (k.rfind(prefix, 0) == 0) out.push_back(v);
  return out;
}

// ---------------------------------------------------------------------------
// Replay: parse a persisted trajectory table back into a log

inline TrajectoryLog parse_trajectory_tsv(const std::string& tsv,
                                          const SegmentMap& segs,
                                          double interval_seconds, double rho_t) {
  std::vector<std::string> lines = split(tsv, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.size() < 2) throw DataError("trajectory table has no records");
  const std::vector<std::string> header = split(lines[0], '\t');

  TrajectoryLog log;
  log.interval_seconds = interval_seconds;
  log.rho_t = rho_t;
  const int D = segs.state_dim();
  const int A = segs.action_dim();
  const int expect = 1 + D + A + 10;
  if (static_cast<int>(header.size()) != expect)
    throw DataError("trajectory table has unexpected column count");

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::vector<std::string> cells = split(lines[i], '\t');
    if (static_cast<int>(cells.size()) != expect)
      throw DataError("trajectory row " + std::to_string(i) + " has wrong arity");
    TrajectoryStep s;
    int c = 0;
    s.t = std::stol(cells[c++]);
    for (int k = 0; k < D; ++k)
      s.obs[segs.state_features[k].name] = std::stod(cells[c++]);
    s.action.resize(A);
    for (int k = 0; k < A; ++k) s.action[k] = std::stod(cells[c++]) / 100.0;
    s.next_cold_max = std::stod(cells[c++]);
    s.terms.fan_cube = std::stod(cells[c++]);
    s.terms.overtemp = std::stod(cells[c++]);
    s.terms.valve = std::stod(cells[c++]);
    s.terms.water = std::stod(cells[c++]);
    s.reward = std::stod(cells[c++]);
    s.server_kw = std::stod(cells[c++]);
    s.acu_kw = std::stod(cells[c++]);
    s.server_kwh = std::stod(cells[c++]);
    s.acu_kwh = std::stod(cells[c++]);
    log.steps.push_back(std::move(s));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Plain-text comparison table (energy pairs + ACLF per scenario and controller)

struct AclfCell {
  double acu_kwh = 0.0;
  double server_kwh = 0.0;
  double aclf = 0.0;
  double violation_rate = 0.0;
};

// rows: controller name -> scenario name -> cell
using AclfTable = std::map<std::string, std::map<std::string, AclfCell>>;

inline std::string render_aclf_table(const AclfTable& table) {
  std::vector<std::string> scenarios;
  for (const auto& [ctl, row] : table)
    for (const auto& [sc, cell] : row)
      if (std::find(scenarios.begin(), scenarios.end(), sc) == scenarios.end())
        scenarios.push_back(sc);
  std::sort(scenarios.begin(), scenarios.end());

  auto fmt2 = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::string out = "controller";
  for (const auto& sc : scenarios)
    out += "\t" + sc + ":EC(kWh)\t" + sc + ":ACLF(%)\t" + sc + ":viol";
  out += "\n";
  for (const auto& [ctl, row] : table) {
    out += ctl;
    for (const auto& sc : scenarios) {
      auto it = row.find(sc);
      if (it == row.end()) {
        out += "\t-\t-\t-";
        continue;
      }
      out += "\t" + fmt2(it->second.acu_kwh) + "/" + fmt2(it->second.server_kwh);
      out += "\t" + fmt2(it->second.aclf);
      out += "\t" + fmt2(it->second.violation_rate);
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Minimal static SVG charts

struct SvgSeries {
  std::string label;
  std::string color = "#1f77b4";
  std::vector<double> x, y;
};

inline std::string svg_line_chart(const std::vector<SvgSeries>& series,
                                  const std::string& title,
                                  const std::string& x_label,
                                  const std::string& y_label) {
  const int W = 720, H = 440, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
    for (double v : s.y) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
  }
  if (!(xmax > xmin)) { xmax = xmin + 1.0; }
  if (!(ymax > ymin)) { ymax = ymin + 1.0; }
  const double xr = xmax - xmin, yr = ymax - ymin;
  auto px = [&](double x) { return ml + (x - xmin) / xr * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / yr * (H - mt - mb); };

  std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" +
                    std::to_string(W) + "' height='" + std::to_string(H) + "'>\n";
  svg += "<rect width='100%' height='100%' fill='white'/>\n";
  svg += "<text x='" + std::to_string(W / 2) + "' y='24' text-anchor='middle' "
         "font-size='16'>" + title + "</text>\n";
  svg += "<line x1='" + std::to_string(ml) + "' y1='" + std::to_string(H - mb) +
         "' x2='" + std::to_string(W - mr) + "' y2='" + std::to_string(H - mb) +
         "' stroke='black'/>\n";
  svg += "<line x1='" + std::to_string(ml) + "' y1='" + std::to_string(mt) +
         "' x2='" + std::to_string(ml) + "' y2='" + std::to_string(H - mb) +
         "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + xr * i / 4.0, yv = ymin + yr * i / 4.0;
    char bx[64], by[64];
    std::snprintf(bx, sizeof bx, "%.3g", xv);
    std::snprintf(by, sizeof by, "%.3g", yv);
    svg += "<text x='" + std::to_string(px(xv)) + "' y='" +
           std::to_string(H - mb + 18) + "' text-anchor='middle' font-size='11'>" +
           bx + "</text>\n";
    svg += "<text x='" + std::to_string(ml - 8) + "' y='" +
           std::to_string(py(yv) + 4) + "' text-anchor='end' font-size='11'>" +
           by + "</text>\n";
  }
  svg += "<text x='" + std::to_string(W / 2) + "' y='" + std::to_string(H - 12) +
         "' text-anchor='middle' font-size='13'>" + x_label + "</text>\n";
  svg += "<text x='16' y='" + std::to_string(H / 2) +
         "' text-anchor='middle' font-size='13' transform='rotate(-90 16 " +
         std::to_string(H / 2) + ")'>" + y_label + "</text>\n";

  int li = 0;
  for (const auto& s : series) {
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      pts += std::to_string(px(s.x[i])) + "," + std::to_string(py(s.y[i])) + " ";
    svg += "<polyline points='" + pts + "' fill='none' stroke='" + s.color +
           "' stroke-width='1.8'/>\n";
    svg += "<text x='" + std::to_string(W - mr - 10) + "' y='" +
           std::to_string(mt + 16 * li) + "' text-anchor='end' font-size='12' "
           "fill='" + s.color + "'>" + s.label + "</text>\n";
    ++li;
  }
  svg += "</svg>\n";
  return svg;
}

inline std::string svg_histogram(const TemperatureHistogram& h,
                                 const std::string& title,
                                 const std::string& x_label) {
  SvgSeries s;
  s.label = "count";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    // render as a step outline
    s.x.push_back(h.bin_left(i));
    s.y.push_back(static_cast<double>(h.counts[i]));
    s.x.push_back(h.bin_left(i + 1));
    s.y.push_back(static_cast<double>(h.counts[i]));
  }
  return svg_line_chart({s}, title, x_label, "samples");
}

}  // namespace dccool
