#pragma once

// Offline policy optimization in the frozen dynamics-model latent space.
//
// Twin critics regress action values over latents z = phi(s, a); the actor
// maximizes
//
//   lambda * Q1(phi(s, pi(s))) - ||pi(s) - a||^2 - w * tsym(phi(s, pi(s)))
//
// where lambda = alpha / (mean |Q1(phi(s, a))|) is recomputed per batch from
// the dataset actions (value-scale normalization), the squared term clones the
// behavior policy, and the tsym term penalizes policy actions whose latent
// forward/reverse dynamics stop canceling — a physics-consistency trust
// region. The dynamics model is completely frozen during this phase; its
// parameter hash is asserted unchanged after training.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dccool/common.hpp"
#include "dccool/dataio.hpp"
#include "dccool/mdp.hpp"
#include "dccool/nn.hpp"
#include "dccool/ttdm.hpp"
#include "json.hpp"

namespace dccool {

struct RLConfig {
  double gamma = 0.99;
  double tau = 0.005;         // Polyak rate for target networks
  double policy_noise = 0.2;  // target-policy smoothing, normalized units
  double noise_clip = 0.5;
  int policy_freq = 2;        // critic updates per actor update
  int width = 512;
  int depth = 2;              // hidden layers in actor and critics
  double lr = 3e-4;
  long iterations = 500000;   // production default; desk-scale runs override
  int batch = 256;
  double alpha = 2.5;         // value-maximization scale, nominal range [2.5, 10]
  bool tsym_reg = true;       // false = plain TD3+BC objective
  double tsym_weight = 1.0;
  long log_every = 250;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0,1)");
    if (alpha <= 0.0) throw ConfigError("alpha must be positive");
    if (policy_freq < 1) throw ConfigError("policy_freq must be >= 1");
    if (width < 1 || depth < 1 || batch < 1 || iterations < 0)
      throw ConfigError("rl config: structural fields must be positive");
  }

  nlohmann::json to_json() const {
    return {{"gamma", gamma},     {"tau", tau},
            {"policy_noise", policy_noise}, {"noise_clip", noise_clip},
            {"policy_freq", policy_freq},   {"width", width},
            {"depth", depth},     {"lr", lr},
            {"iterations", iterations},     {"batch", batch},
            {"alpha", alpha},     {"tsym_reg", tsym_reg},
            {"tsym_weight", tsym_weight},   {"log_every", log_every}};
  }
  static RLConfig from_json(const nlohmann::json& j) {
    RLConfig c;
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.policy_noise = j.value("policy_noise", c.policy_noise);
    c.noise_clip = j.value("noise_clip", c.noise_clip);
    c.policy_freq = j.value("policy_freq", c.policy_freq);
    c.width = j.value("width", c.width);
    c.depth = j.value("depth", c.depth);
    c.lr = j.value("lr", c.lr);
    c.iterations = j.value("iterations", c.iterations);
    c.batch = j.value("batch", c.batch);
    c.alpha = j.value("alpha", c.alpha);
    c.tsym_reg = j.value("tsym_reg", c.tsym_reg);
    c.tsym_weight = j.value("tsym_weight", c.tsym_weight);
    c.log_every = j.value("log_every", c.log_every);
    c.validate();
    return c;
  }
};

class PolicyModel {
 public:
  PolicyModel() = default;

  PolicyModel(const SegmentMap& segments, const RLConfig& cfg, int latent_dim,
              std::uint64_t ttdm_hash, std::uint64_t manifest_hash,
              std::uint64_t seed)
      : cfg_(cfg),
        segments_(segments),
        ttdm_hash_(ttdm_hash),
        manifest_hash_(manifest_hash) {
    cfg_.validate();
    Rng rng(seed);
    const std::vector<int> hidden(cfg_.depth, cfg_.width);
    actor_ = Mlp("actor", segments_.state_dim(), hidden, segments_.action_dim(),
                 Head::kUnitInterval, rng);
    q1_ = Mlp("q1", latent_dim, hidden, 1, Head::kLinear, rng);
    q2_ = Mlp("q2", latent_dim, hidden, 1, Head::kLinear, rng);
    actor_target_ = actor_;
    q1_target_ = q1_;
    q2_target_ = q2_;
  }

  const RLConfig& config() const { return cfg_; }
  const SegmentMap& segments() const { return segments_; }
  std::uint64_t ttdm_hash() const { return ttdm_hash_; }
  std::uint64_t manifest_hash() const { return manifest_hash_; }

  // Content hash over every network (including targets), for round-trip and
  // reproducibility checks.
  std::uint64_t params_hash() const {
    std::vector<const Param*> ps;
    actor_.collect_const(ps);
    q1_.collect_const(ps);
    q2_.collect_const(ps);
    actor_target_.collect_const(ps);
    q1_target_.collect_const(ps);
    q2_target_.collect_const(ps);
    return ::dccool::params_hash(ps);
  }

  Mlp& actor() { return actor_; }
  const Mlp& actor() const { return actor_; }
  Mlp& q1() { return q1_; }
  Mlp& q2() { return q2_; }
  const Mlp& q1() const { return q1_; }
  const Mlp& q2() const { return q2_; }
  Mlp& actor_target() { return actor_target_; }
  Mlp& q1_target() { return q1_target_; }
  Mlp& q2_target() { return q2_target_; }

  // Deterministic bounded inference; the action width comes from the embedded
  // segment map, never from the caller.
  ActionVector act(const StateVector& s_normalized) const {
    if (s_normalized.values.size() != segments_.state_dim())
      throw ShapeError("act: state width does not match checkpoint segment map");
    Eigen::MatrixXd out = actor_.forward(s_normalized.values.transpose());
    ActionVector a;
    a.values = out.row(0).transpose();
    for (int i = 0; i < a.values.size(); ++i)
      a.values[i] = std::clamp(a.values[i], 0.0, 1.0);
    return a;
  }

  nlohmann::json to_json() const {
    return {{"format", "policy-checkpoint-v1"},
            {"config", cfg_.to_json()},
            {"segment_map", segments_.to_json()},
            {"ttdm_hash", to_hex(ttdm_hash_)},
            {"manifest_hash", to_hex(manifest_hash_)},
            {"actor", actor_.to_json()},
            {"q1", q1_.to_json()},
            {"q2", q2_.to_json()},
            {"actor_target", actor_target_.to_json()},
            {"q1_target", q1_target_.to_json()},
            {"q2_target", q2_target_.to_json()}};
  }
  static PolicyModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != std::string("policy-checkpoint-v1"))
      throw DataError("unrecognized policy checkpoint format");
    PolicyModel m;
    m.cfg_ = RLConfig::from_json(j.at("config"));
    m.segments_ = SegmentMap::from_json(j.at("segment_map"));
    m.ttdm_hash_ = std::stoull(j.at("ttdm_hash").get<std::string>(), nullptr, 16);
    m.manifest_hash_ =
        std::stoull(j.at("manifest_hash").get<std::string>(), nullptr, 16);
    m.actor_ = Mlp::from_json(j.at("actor"));
    m.q1_ = Mlp::from_json(j.at("q1"));
    m.q2_ = Mlp::from_json(j.at("q2"));
    m.actor_target_ = Mlp::from_json(j.at("actor_target"));
    m.q1_target_ = Mlp::from_json(j.at("q1_target"));
    m.q2_target_ = Mlp::from_json(j.at("q2_target"));
    return m;
  }
  void save(const std::string& path) const { write_file(path, to_json().dump()); }
  static PolicyModel load(const std::string& path) {
    return from_json(nlohmann::json::parse(read_file(path)));
  }

 private:
  RLConfig cfg_;
  SegmentMap segments_;
  std::uint64_t ttdm_hash_ = 0;
  std::uint64_t manifest_hash_ = 0;
  Mlp actor_, q1_, q2_;
  Mlp actor_target_, q1_target_, q2_target_;
};

struct PolicyCurvePoint {
  long step = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_abs_q = 0.0;
};

struct PolicyTrainResult {
  PolicyModel policy;
  std::vector<PolicyCurvePoint> curve;
};

namespace detail {

// Encode the whole dataset's (s, a) pairs through the frozen model in chunks.
inline Eigen::MatrixXd encode_dataset_latents(const TtdmModel& ttdm,
                                              const TransitionDataset& ds) {
  const int dz = ttdm.config().d_zs + ttdm.config().d_za;
  Eigen::MatrixXd z(ds.size(), dz);
  const long chunk = 1024;
  for (long i0 = 0; i0 < ds.size(); i0 += chunk) {
    const long n = std::min(chunk, ds.size() - i0);
    auto [zs, za] = ttdm.encode(ds.s.middleRows(i0, n), ds.a.middleRows(i0, n));
    z.block(i0, 0, n, ttdm.config().d_zs) = zs;
    z.block(i0, ttdm.config().d_zs, n, ttdm.config().d_za) = za;
  }
  return z;
}

}  // namespace detail

// Phase-2 training: TD3-style critic regression on frozen latents plus the
// behavior-cloned, physics-regularized actor. Deterministic per seed.
inline PolicyTrainResult train_policy(const TransitionDataset& ds,
                                      const TtdmModel& ttdm, const RLConfig& cfg,
                                      std::uint64_t seed) {
  cfg.validate();
  if (ds.size() == 0) throw DataError("policy training requires a nonempty dataset");
  if (ttdm.manifest_hash() != ds.manifest_hash())
    throw ConfigError(
        "policy training: dynamics model was trained on a different dataset "
        "(manifest hash mismatch)");
  if (cfg.alpha < 2.5 || cfg.alpha > 10.0)
    std::fprintf(stderr, "warning: alpha %.3f outside the nominal [2.5, 10] range\n",
                 cfg.alpha);

  const std::uint64_t frozen_hash = ttdm.weights_hash();
  const int d_zs = ttdm.config().d_zs;
  const int d_za = ttdm.config().d_za;

  PolicyTrainResult out;
  out.policy = PolicyModel(ds.segments, cfg, d_zs + d_za, frozen_hash,
                           ds.manifest_hash(), seed);
  PolicyModel& pm = out.policy;

  // frozen-model precomputation: latents of the dataset pairs and rewards
  const Eigen::MatrixXd z_data = detail::encode_dataset_latents(ttdm, ds);
  Eigen::VectorXd rewards(ds.size());
  for (long i = 0; i < ds.size(); ++i) rewards[i] = ds.reward_at(i);

  Rng rng(seed + 0x517cc1b727220a95ull);
  Adam opt_q(cfg.lr), opt_actor(cfg.lr);
  std::vector<Param*> q_params;
  pm.q1().collect(q_params);
  pm.q2().collect(q_params);
  std::vector<Param*> actor_params;
  pm.actor().collect(actor_params);

  double last_actor_loss = 0.0;
  for (long it = 1; it <= cfg.iterations; ++it) {
    const std::vector<long> idx = sample_batch_indices(ds, cfg.batch, rng);
    const int B = cfg.batch;
    Eigen::MatrixXd S(B, ds.segments.state_dim());
    Eigen::MatrixXd A(B, ds.segments.action_dim());
    Eigen::MatrixXd S2(B, ds.segments.state_dim());
    Eigen::MatrixXd Z(B, d_zs + d_za);
    Eigen::VectorXd R(B);
    for (int i = 0; i < B; ++i) {
      S.row(i) = ds.s.row(idx[i]);
      A.row(i) = ds.a.row(idx[i]);
      S2.row(i) = ds.s_next.row(idx[i]);
      Z.row(i) = z_data.row(idx[i]);
      R[i] = rewards[idx[i]];
    }

    // --- critic update -----------------------------------------------------
    // smoothed target action in action space, clipped back into bounds
    Eigen::MatrixXd a2 = pm.actor_target().forward(S2);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < a2.cols(); ++j) {
        const double noise = std::clamp(rng.normal() * cfg.policy_noise,
                                        -cfg.noise_clip, cfg.noise_clip);
        a2(i, j) = std::clamp(a2(i, j) + noise, 0.0, 1.0);
      }
    auto [zs2, za2] = ttdm.encode(S2, a2);
    Eigen::MatrixXd z2(B, d_zs + d_za);
    z2 << zs2, za2;
    const Eigen::MatrixXd q1t = pm.q1_target().forward(z2);
    const Eigen::MatrixXd q2t = pm.q2_target().forward(z2);
    Eigen::MatrixXd y(B, 1);
    for (int i = 0; i < B; ++i)
      y(i, 0) = R[i] + cfg.gamma * std::min(q1t(i, 0), q2t(i, 0));
    if (!y.allFinite())
      throw NumericError("critic update: non-finite TD target at step " +
                         std::to_string(it));

    double critic_loss_val = 0.0;
    {
      ad::Tape tape;
      Mlp::Bound b1 = pm.q1().bind(tape);
      Mlp::Bound b2 = pm.q2().bind(tape);
      ad::Var zv = tape.input(Z);
      ad::Var yv = tape.input(y);
      ad::Var q1v = pm.q1().apply(tape, b1, Flow{zv, {}}).y;
      ad::Var q2v = pm.q2().apply(tape, b2, Flow{zv, {}}).y;
      ad::Var loss = ad::add(ad::mean_all(ad::sq_norm_rows(ad::sub(q1v, yv))),
                             ad::mean_all(ad::sq_norm_rows(ad::sub(q2v, yv))));
      critic_loss_val = tape.val(loss)(0, 0);
      if (!std::isfinite(critic_loss_val))
        throw NumericError("critic update diverged at step " + std::to_string(it));
      tape.backward(loss);
      std::vector<Eigen::MatrixXd> gs = pm.q1().grads(tape, b1);
      for (auto& g : pm.q2().grads(tape, b2)) gs.push_back(std::move(g));
      opt_q.step(q_params, gs);
    }
    // Polyak-average critic targets at the configured rate
    {
      std::vector<const Param*> src;
      pm.q1().collect_const(src);
      pm.q2().collect_const(src);
      std::vector<Param*> dst;
      pm.q1_target().collect(dst);
      pm.q2_target().collect(dst);
      polyak_update(dst, src, cfg.tau);
    }

    // --- delayed actor update ----------------------------------------------
    if (it % cfg.policy_freq == 0) {
      // value-scale coefficient from the dataset actions of this batch
      const Eigen::MatrixXd q_data = pm.q1().forward(Z);
      const double mean_abs_q =
          std::max(q_data.array().abs().mean(), 1e-12);
      const double lambda = cfg.alpha / mean_abs_q;

      ad::Tape tape;
      TtdmModel::BoundModel bt = ttdm.bind(tape);  // frozen leaves
      Mlp::Bound ba = pm.actor().bind(tape);
      Mlp::Bound bq = pm.q1().bind(tape);
      ad::Var sv = tape.input(S);
      ad::Var av = tape.input(A);
      Flow pi = pm.actor().apply(tape, ba, Flow{sv, {}});
      TtdmModel::Latent z = ttdm.encode_vars(tape, bt, sv, pi.y);
      ad::Var zcat = ad::hcat(z.z_s, z.z_a);
      ad::Var qv = pm.q1().apply(tape, bq, Flow{zcat, {}}).y;
      ad::Var loss = ad::add(ad::scale(ad::mean_all(qv), -lambda),
                             ad::mean_all(ad::sq_norm_rows(ad::sub(pi.y, av))));
      if (cfg.tsym_reg) {
        ad::Var f_out = ttdm.apply_f(tape, bt, zcat);
        ad::Var g_out =
            ttdm.apply_g(tape, bt, ad::hcat(ad::add(z.z_s, f_out), z.z_a));
        ad::Var tsym = ad::mean_all(ad::sq_norm_rows(ad::add(f_out, g_out)));
        loss = ad::add(loss, ad::scale(tsym, cfg.tsym_weight));
      }
      last_actor_loss = tape.val(loss)(0, 0);
      if (!std::isfinite(last_actor_loss))
        throw NumericError("actor update diverged at step " + std::to_string(it));
      tape.backward(loss);
      std::vector<Eigen::MatrixXd> gs = pm.actor().grads(tape, ba);
      opt_actor.step(actor_params, gs);

      std::vector<const Param*> src;
      pm.actor().collect_const(src);
      std::vector<Param*> dst;
      pm.actor_target().collect(dst);
      polyak_update(dst, src, cfg.tau);
    }

    if (it % cfg.log_every == 0 || it == cfg.iterations) {
      const Eigen::MatrixXd q_data = pm.q1().forward(Z);
      out.curve.push_back(
          {it, critic_loss_val, last_actor_loss, q_data.array().abs().mean()});
    }
  }

  if (ttdm.weights_hash() != frozen_hash)
    throw NumericError("dynamics model parameters changed during policy training");
  return out;
}

inline std::string policy_curve_to_csv(const std::vector<PolicyCurvePoint>& curve) {
  std::string csv = "step\tcritic_loss\tactor_loss\tmean_abs_q\n";
  for (const auto& p : curve) {
    csv += std::to_string(p.step);
    for (double v : {p.critic_loss, p.actor_loss, p.mean_abs_q})
      csv += "\t" + format_double(v);
    csv += "\n";
  }
  return csv;
}

}  // namespace dccool
