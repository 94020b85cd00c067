// Command-line front end for the air-cooling control toolkit.
//
// Subcommands cover the full experiment cycle: simulate behavior logs from
// the baseline controller (gen-data), fit reward coefficients (fit-reward),
// train the thermal dynamics model (train-ttdm) and the offline-RL policy
// (train-policy), roll controllers out in the simulator (rollout), run the
// ablation studies (ablate), assemble tables and plots (report), and run the
// model-free invariant suite (verify).
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric fault.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dccool/experiment.hpp"

namespace fs = std::filesystem;
using namespace dccool;

namespace {

ExperimentPreset resolve_preset(const std::string& preset,
                                const std::string& config) {
  if (!config.empty()) return ExperimentPreset::load(config);
  return preset_by_name(preset);
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  for (const auto& tok : split(csv, ',')) {
    const std::string t = trim(tok);
    if (t.empty()) continue;
    seeds.push_back(std::stoull(t));
  }
  if (seeds.empty()) throw ConfigError("no seeds given");
  return seeds;
}

void ensure_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
}

// Checkpoint flags accept either the file itself or the directory a training
// command wrote it into; directories resolve to their conventional filename.
std::string resolve_checkpoint(const std::string& path, const char* filename) {
  if (!path.empty() && fs::is_directory(path))
    return (fs::path(path) / filename).string();
  return path;
}

void check_layout(const ExperimentPreset& p, const TransitionDataset& ds) {
  if (p.layout.hash() != ds.layout_hash)
    throw ConfigError(
        "dataset was built from a different room layout than this preset");
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const ExperimentPreset& p, std::uint64_t seed,
                 const std::string& out) {
  ensure_dir(out);
  DatasetBuild b = generate_dataset(p, seed);
  b.ds.save(out);
  write_file(out + "/preset.json", p.to_json().dump(2) + "\n");
  std::printf("wrote %ld transitions (%ld raw records) to %s\n",
              b.ds.size(), b.raw_records, out.c_str());
  std::printf("  clipped values: %ld   dropped records: %ld\n",
              b.ds.clip_count, b.ds.dropped_records);
  const RewardParams& r = b.ds.reward;
  std::printf("  reward: r0=%.6g b=[%.6g %.6g %.6g %.6g] rho_t=%.3g rho_l=%.3g\n",
              r.r0, r.beta1, r.beta2, r.beta3, r.beta4, r.rho_t, r.rho_l);
  for (const auto& w : b.reward_fit.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

int cmd_fit_reward(const std::string& data, double scale_overtemp,
                   std::string out) {
  TransitionDataset ds = TransitionDataset::load(data);
  const std::vector<RewardTerms> terms = ds.all_terms();
  RewardFit fit = fit_reward_params(terms, ds.reward.rho_t, ds.reward.rho_l);
  RewardParams params = fit.params;
  if (scale_overtemp != 1.0)
    params = rescale_overtemp_weight(params, scale_overtemp, terms);
  ds.reward = params;
  if (out.empty()) out = data;
  ensure_dir(out);
  ds.save(out);
  std::printf("reward fit on %ld transitions -> %s\n", ds.size(), out.c_str());
  std::printf("  r0=%.9g b1=%.9g b2=%.9g b3=%.9g b4=%.9g\n", params.r0,
              params.beta1, params.beta2, params.beta3, params.beta4);
  for (const auto& w : fit.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

int cmd_train_ttdm(const ExperimentPreset& p, const std::string& data,
                   const std::string& variant_name, std::uint64_t seed,
                   const std::string& out) {
  ensure_dir(out);
  TransitionDataset ds = TransitionDataset::load(data);
  check_layout(p, ds);
  TtdmVariant variant = ttdm_variant_from_name(variant_name);
  TtdmTrainResult tr = train_dynamics(p, ds, variant, seed);
  tr.model.save(out + "/ttdm.json");
  write_file(out + "/curve.csv", curve_to_csv(tr.curve));
  const TtdmLosses& L = tr.curve.back().losses;
  std::printf("trained %s dynamics model (%ld steps, seed %llu) -> %s\n",
              variant_name.c_str(), p.ttdm_train.steps,
              static_cast<unsigned long long>(seed), out.c_str());
  std::printf("  final losses: rec=%.6g fwd=%.6g rvs=%.6g ds=%.6g tsym=%.6g "
              "total=%.6g\n", L.rec, L.fwd, L.rvs, L.ds, L.tsym, L.total);
  return 0;
}

int cmd_train_policy(const ExperimentPreset& p, const std::string& data,
                     const std::string& ttdm_path, std::uint64_t seed,
                     double alpha, bool no_tsym, const std::string& out) {
  ensure_dir(out);
  TransitionDataset ds = TransitionDataset::load(data);
  check_layout(p, ds);
  TtdmModel ttdm = TtdmModel::load(resolve_checkpoint(ttdm_path, "ttdm.json"));
  RLConfig cfg = p.rl;
  cfg.alpha = alpha;
  cfg.tsym_reg = !no_tsym;
  PolicyTrainResult tr = train_policy(ds, ttdm, cfg, seed);
  tr.policy.save(out + "/policy.json");
  write_file(out + "/curve.csv", policy_curve_to_csv(tr.curve));
  const PolicyCurvePoint& c = tr.curve.back();
  std::printf("trained policy (%ld critic steps, seed %llu, alpha %.3g, "
              "tsym %s) -> %s\n", cfg.iterations,
              static_cast<unsigned long long>(seed), alpha,
              cfg.tsym_reg ? "on" : "off", out.c_str());
  std::printf("  final: critic_loss=%.6g actor_loss=%.6g mean|Q|=%.6g\n",
              c.critic_loss, c.actor_loss, c.mean_abs_q);
  return 0;
}

int cmd_rollout(const ExperimentPreset& p, const std::string& controller,
                const std::string& data, const std::string& policy_path,
                const std::string& scenario_name, std::uint64_t seed,
                long horizon, const std::string& out) {
  ensure_dir(out);
  ExperimentPreset preset = p;
  if (horizon > 0) preset.eval_horizon = horizon;

  // dataset provides normalization + fitted reward; optional for pid
  NormalizationSpec norm;
  RewardParams reward;
  reward.rho_t = preset.rho_t;
  reward.rho_l = preset.rho_l;
  TransitionDataset ds;
  bool have_ds = false;
  if (!data.empty()) {
    ds = TransitionDataset::load(data);
    check_layout(preset, ds);
    norm = ds.norm;
    reward = ds.reward;
    have_ds = true;
  }

  std::unique_ptr<Controller> ctl;
  if (controller == "pid") {
    ctl = make_pid_controller(preset);
  } else if (controller == "policy") {
    if (policy_path.empty())
      throw ConfigError("rollout --controller policy requires --policy");
    ctl = make_policy_controller(
        PolicyModel::load(resolve_checkpoint(policy_path, "policy.json")), norm);
  } else if (controller == "mpc") {
    if (!have_ds) throw ConfigError("rollout --controller mpc requires --data");
    ctl = make_mpc_controller(preset, ds);
  } else {
    throw ConfigError("unknown controller '" + controller +
                      "' (expected pid, policy, or mpc)");
  }

  Scenario sc = scenario_name == "low" ? low_load_scenario(preset)
                                       : high_load_scenario(preset);
  if (scenario_name != "low" && scenario_name != "high")
    throw ConfigError("scenario must be 'low' or 'high'");

  const ServerRoomSim sim = make_sim(preset);
  EvalRun run = evaluate_controller(preset, sim, *ctl, sc, seed, reward);

  write_file(out + "/trajectory.tsv",
             trajectory_to_tsv(run.log, sim.segments()));
  nlohmann::json sidecar = run.metrics.to_json();
  sidecar["controller"] = run.log.controller;
  sidecar["scenario"] = sc.name;
  sidecar["preset"] = preset.name;
  sidecar["seed"] = seed;
  sidecar["horizon"] = preset.eval_horizon;
  sidecar["rho_t"] = preset.rho_t;
  sidecar["interval_seconds"] = preset.sim.interval_seconds;
  write_file(out + "/metrics.json", sidecar.dump(2) + "\n");

  std::printf("%s on %s (%ld steps): ACLF %.2f%%  violations %.4f  "
              "ACU %.2f kWh / server %.2f kWh -> %s\n",
              run.log.controller.c_str(), sc.name.c_str(), preset.eval_horizon,
              run.metrics.aclf, run.metrics.cat_violation_rate,
              run.metrics.acu_kwh, run.metrics.server_kwh, out.c_str());
  return 0;
}

int cmd_ablate(const ExperimentPreset& p, const std::string& data,
               const std::string& kind, const std::string& seeds_csv,
               int horizon, double alpha, const std::string& ttdm_path,
               const std::string& out) {
  ensure_dir(out);
  TransitionDataset ds = TransitionDataset::load(data);
  check_layout(p, ds);
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_csv);

  if (kind == "dynamics" || kind == "both") {
    DynamicsAblationResult r = run_dynamics_ablation(p, ds, seeds, horizon);
    write_file(out + "/mse.csv", r.to_csv());
    std::printf("median %d-step MSE (held-out):\n", horizon);
    for (const auto& [variant, mse] : r.median_final)
      std::printf("  %-10s %.8g\n", variant.c_str(), mse);
  }
  if (kind == "tsym" || kind == "both") {
    TtdmModel ttdm =
        ttdm_path.empty()
            ? train_dynamics(p, ds, TtdmVariant::kFull, seeds[0]).model
            : TtdmModel::load(resolve_checkpoint(ttdm_path, "ttdm.json"));
    PolicyAblationResult r = run_policy_ablation(p, ds, ttdm, seeds, alpha);
    nlohmann::json j;
    for (const auto& [variant, by_sc] : r.median_aclf)
      for (const auto& [sc, aclf] : by_sc) j["median_aclf"][variant][sc] = aclf;
    for (const auto& [variant, by_sc] : r.runs)
      for (const auto& [sc, metrics] : by_sc) {
        nlohmann::json arr = nlohmann::json::array();
        for (std::size_t i = 0; i < metrics.size(); ++i) {
          nlohmann::json m = metrics[i].to_json();
          m["seed"] = r.seeds[i];
          arr.push_back(std::move(m));
        }
        j["runs"][variant][sc] = std::move(arr);
      }
    write_file(out + "/policy_ablation.json", j.dump(2) + "\n");
    std::printf("median closed-loop ACLF:\n");
    for (const auto& [variant, by_sc] : r.median_aclf)
      for (const auto& [sc, aclf] : by_sc)
        std::printf("  %-13s %-10s %.2f%%\n", variant.c_str(), sc.c_str(), aclf);
  }
  if (kind != "dynamics" && kind != "tsym" && kind != "both")
    throw ConfigError("ablate kind must be dynamics, tsym, or both");
  return 0;
}

int cmd_report(const std::string& in, const std::string& config,
               const std::string& out) {
  ensure_dir(out);
  if (in.empty()) throw ConfigError("report requires --in");

  AclfTable table;
  long charts = 0;
  for (const auto& entry : fs::directory_iterator(in)) {
    if (!entry.is_directory()) continue;
    const std::string dir = entry.path().string();
    const std::string name = entry.path().filename().string();
    if (fs::exists(dir + "/metrics.json")) {
      nlohmann::json j = nlohmann::json::parse(read_file(dir + "/metrics.json"));
      RunMetrics m = RunMetrics::from_json(j);
      AclfCell cell{m.acu_kwh, m.server_kwh, m.aclf, m.cat_violation_rate};
      std::string ctl = j.value("controller", name);
      if (j.contains("seed"))
        ctl += "@" + std::to_string(j.at("seed").get<long long>());
      table[ctl][j.value("scenario", "run")] = cell;

      if (fs::exists(dir + "/trajectory.tsv")) {
        ExperimentPreset p = config.empty()
                                 ? preset_by_name(j.value("preset", "testbed"))
                                 : ExperimentPreset::load(config);
        const SegmentMap segs = build_segment_map(p.layout);
        TrajectoryLog log = parse_trajectory_tsv(
            read_file(dir + "/trajectory.tsv"), segs,
            j.value("interval_seconds", p.sim.interval_seconds),
            j.value("rho_t", p.rho_t));
        for (const char* aisle : {"cold", "hot"}) {
          TemperatureHistogram h =
              temperature_histogram(aisle_temps(log, segs, aisle));
          write_file(out + "/" + name + "_" + aisle + "_hist.svg",
                     svg_histogram(h, name + " " + aisle + "-aisle temperature",
                                   "temperature (C)"));
          ++charts;
        }
      }
    }
    if (fs::exists(dir + "/curve.csv")) {
      // training curve: first column step, remaining columns series
      const std::vector<std::string> lines =
          split(trim(read_file(dir + "/curve.csv")), '\n');
      if (lines.size() > 1) {
        const std::vector<std::string> head = split(lines[0], '\t');
        std::vector<SvgSeries> series(head.size() - 1);
        const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                 "#9467bd", "#ff7f0e", "#8c564b"};
        for (std::size_t c = 1; c < head.size(); ++c) {
          series[c - 1].label = head[c];
          series[c - 1].color = palette[(c - 1) % 6];
        }
        for (std::size_t i = 1; i < lines.size(); ++i) {
          const std::vector<std::string> cells = split(lines[i], '\t');
          if (cells.size() != head.size()) continue;
          for (std::size_t c = 1; c < cells.size(); ++c) {
            series[c - 1].x.push_back(std::stod(cells[0]));
            series[c - 1].y.push_back(std::stod(cells[c]));
          }
        }
        write_file(out + "/" + name + "_curve.svg",
                   svg_line_chart(series, name + " training curve", "step",
                                  "loss"));
        ++charts;
      }
    }
  }
  if (fs::exists(in + "/mse.csv")) {
    const std::vector<std::string> lines =
        split(trim(read_file(in + "/mse.csv")), '\n');
    std::vector<SvgSeries> series;
    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c"};
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const std::vector<std::string> cells = split(lines[i], ',');
      if (cells.size() < 3 || cells[1] != "median") continue;
      SvgSeries s;
      s.label = cells[0];
      s.color = palette[series.size() % 3];
      for (std::size_t c = 2; c < cells.size(); ++c) {
        s.x.push_back(static_cast<double>(c - 1));
        s.y.push_back(std::stod(cells[c]));
      }
      series.push_back(std::move(s));
    }
    if (!series.empty()) {
      write_file(out + "/mse_horizon.svg",
                 svg_line_chart(series, "held-out prediction error by horizon",
                                "steps ahead", "normalized MSE"));
      ++charts;
    }
  }

  if (!table.empty()) {
    const std::string rendered = render_aclf_table(table);
    write_file(out + "/aclf_table.txt", rendered);
    std::fputs(rendered.c_str(), stdout);
  }
  std::printf("report: %zu table rows, %ld charts -> %s\n", table.size(),
              charts, out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// verify: model-free invariant suite (fast; no training, no dataset needed)

int checks_run = 0;
void check(bool ok, const std::string& what) {
  ++checks_run;
  if (!ok) throw NumericError("verify failed: " + what);
  std::printf("ok: %s\n", what.c_str());
}

int cmd_verify() {
  // deterministic rng
  {
    Rng a(7), b(7);
    bool same = true, bounded = true;
    for (int i = 0; i < 1000; ++i) {
      const double x = a.uniform(), y = b.uniform();
      same = same && x == y;
      bounded = bounded && x >= 0.0 && x < 1.0;
    }
    check(same && bounded, "seeded rng is deterministic and bounded");
  }
  // propagation operator on a 2-node path: all entries 1/2
  {
    Eigen::MatrixXd a(2, 2);
    a << 0, 1, 1, 0;
    const Eigen::MatrixXd p = propagation_operator(a);
    check((p - Eigen::MatrixXd::Constant(2, 2, 0.5)).cwiseAbs().maxCoeff() < 1e-12,
          "propagation operator matches the 2-node closed form");
  }
  const ExperimentPreset preset = make_testbed_preset();
  const ServerRoomSim sim = make_sim(preset);
  const SegmentMap& segs = sim.segments();
  // normalization round-trip
  {
    Rng rng(3);
    NormalizationSpec norm;
    bool ok = true;
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd raw(segs.state_dim());
      for (int i = 0; i < raw.size(); ++i) {
        const NormRange r = norm.range_for(segs.state_features[i].cls);
        raw[i] = rng.uniform(r.lo, r.hi);
      }
      const Eigen::VectorXd back =
          denormalize_state(normalize_state(raw, segs, norm), segs, norm);
      ok = ok && (back - raw).cwiseAbs().maxCoeff() < 1e-9;
    }
    check(ok, "state normalization round-trips within 1e-9");
  }
  // reward fit: min over fitting set exactly 1; strictly decreasing per input
  {
    Rng rng(11);
    std::vector<RewardTerms> terms;
    for (int i = 0; i < 64; ++i)
      terms.push_back({rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.5),
                       rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.0)});
    const RewardFit fit = fit_reward_params(terms, 25.0, 20.0);
    double lo = 1e300;
    for (const auto& t : terms)
      lo = std::min(lo, compute_reward(fit.params, t));
    check(std::abs(lo - 1.0) < 1e-9, "fitted reward floor is exactly 1");
    bool mono = true;
    for (int i = 0; i < 20; ++i) {
      RewardTerms t{rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.5),
                    rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.0)};
      const double base = compute_reward(fit.params, t);
      for (int which = 0; which < 4; ++which) {
        RewardTerms u = t;
        (which == 0   ? u.fan_cube
         : which == 1 ? u.overtemp
         : which == 2 ? u.valve
                      : u.water) += rng.uniform(0.01, 0.5);
        mono = mono && compute_reward(fit.params, u) < base;
      }
    }
    check(mono, "reward strictly decreases in every penalty term");
  }
  // simulator: determinism and the monotone-cooling property
  {
    const int m = sim.num_acus();
    const Eigen::VectorXd loads =
        Eigen::VectorXd::Constant(sim.num_racks(), 1.2);
    const Eigen::VectorXd ewt = Eigen::VectorXd::Constant(m, 14.0);
    ActionVector act{Eigen::VectorXd::Constant(2 * m, 0.5)};
    SimState s1 = sim.reset(5), s2 = sim.reset(5);
    for (int t = 0; t < 20; ++t) {
      s1 = sim.step(s1, act, loads, ewt).state;
      s2 = sim.step(s2, act, loads, ewt).state;
    }
    check(s1 == s2, "simulator trajectories are bit-identical per seed");
    ActionVector hotter = act, cooler = act;
    cooler.values[m] = 0.9;  // first valve
    hotter.values[m] = 0.1;
    const SimState a = sim.step(s1, cooler, loads, ewt).state;
    const SimState b = sim.step(s1, hotter, loads, ewt).state;
    check(a.cold.mean() < b.cold.mean(),
          "opening the chilled-water valve cools the cold aisle");
  }
  // autodiff: JVP and weight gradients vs central finite differences
  {
    Rng rng(23);
    Mlp net("probe", 5, {8, 8}, 3, Head::kTanh, rng);
    Eigen::MatrixXd x(4, 5), dx(4, 5);
    for (int i = 0; i < x.size(); ++i) {
      x.data()[i] = rng.uniform(-1.0, 1.0);
      dx.data()[i] = rng.uniform(-1.0, 1.0);
    }
    const double h = 1e-5;
    auto value = [&](const Eigen::MatrixXd& in) { return net.forward(in); };
    const Eigen::MatrixXd jvp_fd =
        ((value(x + h * dx) - value(x - h * dx)) / (2.0 * h)).eval();
    ad::Tape tape;
    auto bound = net.bind(tape);
    ad::Var vx = tape.input(x), vdx = tape.input(dx);
    auto flow = net.apply(tape, bound, Flow{vx, vdx});
    const Eigen::MatrixXd jvp_ad = tape.val(flow.dy);
    const double rel = (jvp_ad - jvp_fd).cwiseAbs().maxCoeff() /
                       std::max(1.0, jvp_fd.cwiseAbs().maxCoeff());
    check(rel < 1e-4, "network JVP matches central finite differences");

    ad::Var loss = ad::mean_all(ad::sq_norm_rows(flow.dy));
    tape.backward(loss);
    std::vector<Param*> ps;
    net.collect(ps);
    Param* p0 = ps[0];
    const Eigen::MatrixXd g = tape.grad_ref(bound.w[0].idx);
    const double save = p0->value(0, 0);
    auto loss_at = [&](double w) {
      p0->value(0, 0) = w;
      ad::Tape t2;
      auto b2 = net.bind(t2);
      auto f2 = net.apply(t2, b2, Flow{t2.input(x), t2.input(dx)});
      ad::Var l2 = ad::mean_all(ad::sq_norm_rows(f2.dy));
      const double v = t2.val(l2)(0, 0);
      p0->value(0, 0) = save;
      return v;
    };
    const double gfd = (loss_at(save + h) - loss_at(save - h)) / (2.0 * h);
    check(std::abs(g(0, 0) - gfd) / std::max(1.0, std::abs(gfd)) < 1e-4,
          "JVP-loss weight gradient matches finite differences");
  }
  // dataset round-trip through a scratch directory
  {
    std::vector<LogRecord> ep;
    const ServerRoomSim& s = sim;
    SimState st = s.reset(2);
    const int m = s.num_acus();
    const Eigen::VectorXd loads = Eigen::VectorXd::Constant(s.num_racks(), 1.0);
    const Eigen::VectorXd ewt = Eigen::VectorXd::Constant(m, 14.0);
    Rng arng(9);
    for (int t = 0; t < 12; ++t) {
      ActionVector a{Eigen::VectorXd::NullaryExpr(
          2 * m, [&](Eigen::Index) { return arng.uniform(0.1, 0.9); })};
      auto res = s.step(st, a, loads, ewt);
      LogRecord rec;
      rec.timestamp = t * preset.sim.interval_seconds;
      rec.values = res.obs;
      for (int i = 0; i < 2 * m; ++i)
        rec.values[segs.action_names[i]] = a.values[i] * 100.0;
      ep.push_back(rec);
      st = res.state;
    }
    TransitionDataset ds =
        build_transitions({ep}, segs, NormalizationSpec{},
                          preset.sim.interval_seconds, preset.layout.hash());
    const fs::path tmp =
        fs::temp_directory_path() / ("dccool-verify-" + std::to_string(::getpid()));
    fs::create_directories(tmp);
    ds.save(tmp.string());
    const TransitionDataset back = TransitionDataset::load(tmp.string());
    fs::remove_all(tmp);
    check(back.manifest_hash() == ds.manifest_hash() &&
              back.s == ds.s && back.a == ds.a && back.s_next == ds.s_next,
          "transition dataset round-trips through disk");
  }
  // untrained checkpoints round-trip (no training required)
  {
    const RoomGraph g =
        build_room_graph(preset.layout, preset.spatial_radius, preset.control_radius);
    TtdmModel model(preset.encoder, TtdmVariant::kFull, segs,
                    propagation_operator(g.a_spatial),
                    propagation_operator(g.a_control), preset.loss_weights,
                    12345, 3);
    const fs::path tmp = fs::temp_directory_path() /
                         ("dccool-verify-ckpt-" + std::to_string(::getpid()));
    fs::create_directories(tmp);
    model.save((tmp / "ttdm.json").string());
    const TtdmModel back = TtdmModel::load((tmp / "ttdm.json").string());
    check(back.weights_hash() == model.weights_hash(),
          "dynamics checkpoint round-trips bit-exactly");
    PolicyModel pol(segs, preset.rl, preset.encoder.d_zs, model.weights_hash(),
                    12345, 4);
    pol.save((tmp / "policy.json").string());
    const PolicyModel pback = PolicyModel::load((tmp / "policy.json").string());
    fs::remove_all(tmp);
    check(pback.params_hash() == pol.params_hash(),
          "policy checkpoint round-trips bit-exactly");
  }
  std::printf("verify: all %d invariants hold\n", checks_run);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"physics-informed offline RL toolkit for data-center air cooling"};
  app.require_subcommand(1);

  std::string preset = "testbed", config, out, data, ttdm_path, policy_path;
  std::string controller = "pid", variant = "full", scenario = "high";
  std::string kind = "both", seeds_csv = "1,2,3";
  std::uint64_t seed = 1;
  double alpha = 2.5, scale_overtemp = 1.0;
  long horizon = 0;
  int mse_horizon = 10;
  bool no_tsym = false;

  auto add_preset_flags = [&](CLI::App* c) {
    c->add_option("--preset", preset, "built-in room preset")
        ->check(CLI::IsMember({"testbed", "room"}));
    c->add_option("--config", config, "preset override file (JSON)");
  };

  CLI::App* gen = app.add_subcommand(
      "gen-data", "simulate baseline-controller logs and build the dataset");
  add_preset_flags(gen);
  gen->add_option("--seed", seed);
  gen->add_option("--out", out)->required();

  CLI::App* fitr = app.add_subcommand(
      "fit-reward", "fit reward coefficients on a dataset");
  fitr->add_option("--data", data)->required();
  fitr->add_option("--scale-overtemp", scale_overtemp,
                   "multiply the fitted overtemperature weight");
  fitr->add_option("--out", out, "output dataset dir (default: in place)");

  CLI::App* tt = app.add_subcommand("train-ttdm", "train the dynamics model");
  add_preset_flags(tt);
  tt->add_option("--data", data)->required();
  tt->add_option("--variant", variant)
      ->check(CLI::IsMember({"full", "no-gnn", "no-tsym"}));
  tt->add_option("--seed", seed);
  tt->add_option("--out", out)->required();

  CLI::App* tp = app.add_subcommand("train-policy", "train the control policy");
  add_preset_flags(tp);
  tp->add_option("--data", data)->required();
  tp->add_option("--ttdm", ttdm_path, "dynamics checkpoint")->required();
  tp->add_option("--seed", seed);
  tp->add_option("--alpha", alpha, "value-maximization scale");
  tp->add_flag("--no-tsym", no_tsym, "drop the actor physics regularizer");
  tp->add_option("--out", out)->required();

  CLI::App* ro = app.add_subcommand("rollout", "closed-loop controller run");
  add_preset_flags(ro);
  ro->add_option("--controller", controller)
      ->check(CLI::IsMember({"pid", "policy", "mpc"}));
  ro->add_option("--policy", policy_path, "policy checkpoint");
  ro->add_option("--data", data, "dataset dir (normalization + reward)");
  ro->add_option("--scenario", scenario)->check(CLI::IsMember({"low", "high"}));
  ro->add_option("--seed", seed);
  ro->add_option("--horizon", horizon, "override evaluation horizon");
  ro->add_option("--out", out)->required();

  CLI::App* ab = app.add_subcommand("ablate", "run the ablation studies");
  add_preset_flags(ab);
  ab->add_option("--data", data)->required();
  ab->add_option("--kind", kind)->check(CLI::IsMember({"dynamics", "tsym", "both"}));
  ab->add_option("--seeds", seeds_csv, "comma-separated seeds");
  ab->add_option("--horizon", mse_horizon, "prediction depth for the MSE table");
  ab->add_option("--alpha", alpha);
  ab->add_option("--ttdm", ttdm_path, "reuse a dynamics checkpoint");
  ab->add_option("--out", out)->required();

  CLI::App* rp = app.add_subcommand("report", "tables and plots from run dirs");
  rp->add_option("--in", data, "directory of rollout/ablation outputs")->required();
  rp->add_option("--config", config, "preset override file (JSON)");
  rp->add_option("--out", out)->required();

  app.add_subcommand("verify", "run the model-free invariant suite");

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return cmd_gen_data(resolve_preset(preset, config), seed, out);
    if (fitr->parsed()) return cmd_fit_reward(data, scale_overtemp, out);
    if (tt->parsed())
      return cmd_train_ttdm(resolve_preset(preset, config), data, variant, seed, out);
    if (tp->parsed())
      return cmd_train_policy(resolve_preset(preset, config), data, ttdm_path,
                              seed, alpha, no_tsym, out);
    if (ro->parsed())
      return cmd_rollout(resolve_preset(preset, config), controller, data,
                         policy_path, scenario, seed, horizon, out);
    if (ab->parsed())
      return cmd_ablate(resolve_preset(preset, config), data, kind, seeds_csv,
                        mse_horizon, alpha, ttdm_path, out);
    if (rp->parsed()) return cmd_report(data, config, out);
    return cmd_verify();
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric fault: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
