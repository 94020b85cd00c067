#pragma once

// Time-symmetric thermal dynamics model.
//
// A graph state-action encoder maps (s, a) to latents (z_s, z_a): one GCN
// block runs over the sensor proximity graph, a second over the sensor-ACU
// control graph; per-node readouts are mean-pooled, concatenated and passed
// through linear heads, with the exogenous state segment s_e folded into z_s
// by a small fusion MLP. Decoders reconstruct s and a from the latents, and a
// pair of latent dynamics nets predicts the forward and reverse latent state
// increments. Training couples five losses:
//
//   rec   ||s - dec_s(z_s)||^2 + ||a - dec_a(z_a)||^2
//   fwd   ||(d z_s / d s) sdot - f(z_s, z_a)||^2
//   rvs   ||(d z'_s / d s') (-sdot) - g(z'_s, z'_a)||^2     (z' from (s', a))
//   ds    ||sdot - dec_s(z'_s - z_s)||^2
//   tsym  ||f(z_s, z_a) + g(z_s + f(z_s, z_a), z_a)||^2
//
// with sdot = s' - s (discrete first difference, normalized units). The
// Jacobian-vector products are carried through the graph as tangents, so all
// losses are exactly differentiable in the weights.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dccool/autodiff.hpp"
#include "dccool/common.hpp"
#include "dccool/dataio.hpp"
#include "dccool/mdp.hpp"
#include "dccool/nn.hpp"
#include "json.hpp"

namespace dccool {

enum class TtdmVariant { kFull, kNoGnn, kNoTsym };

inline std::string ttdm_variant_name(TtdmVariant v) {
  switch (v) {
    case TtdmVariant::kFull: return "full";
    case TtdmVariant::kNoGnn: return "no-gnn";
    case TtdmVariant::kNoTsym: return "no-tsym";
  }
  throw ConfigError("unknown ttdm variant");
}

inline TtdmVariant ttdm_variant_from_name(const std::string& s) {
  if (s == "full") return TtdmVariant::kFull;
  if (s == "no-gnn") return TtdmVariant::kNoGnn;
  if (s == "no-tsym") return TtdmVariant::kNoTsym;
  throw ConfigError("unknown ttdm variant: " + s);
}

struct LossWeights {
  double rec = 1.0;
  double fwd = 0.1;
  double rvs = 0.1;
  double ds = 1.0;
  double tsym = 1.0;

  nlohmann::json to_json() const {
    return {{"rec", rec}, {"fwd", fwd}, {"rvs", rvs}, {"ds", ds}, {"tsym", tsym}};
  }
  static LossWeights from_json(const nlohmann::json& j) {
    LossWeights w;
    w.rec = j.at("rec").get<double>();
    w.fwd = j.at("fwd").get<double>();
    w.rvs = j.at("rvs").get<double>();
    w.ds = j.at("ds").get<double>();
    w.tsym = j.at("tsym").get<double>();
    return w;
  }
};

struct EncoderConfig {
  int channels = 6;            // GCN output feature maps per block
  int features_per_node = 4;   // width of the per-node input projection
  int gnn_layers = 2;
  int gnn_hidden = 256;
  int fusion_layers = 2;
  int fusion_units = 128;
  int d_zs = 16;
  int d_za = 8;
  int dyn_layers = 2;    // hidden layers of the latent dynamics nets
  int dyn_hidden = 128;
  int dec_hidden = 128;  // 0 = purely linear decoders
  int nognn_hidden = 0;  // 0 = solve width for parameter-matched MLP encoder

  void validate() const {
    if (channels < 1 || features_per_node < 1 || gnn_layers < 1 ||
        gnn_hidden < 1 || fusion_layers < 1 || fusion_units < 1)
      throw ConfigError("encoder config: structural fields must be positive");
    if (d_zs < 1 || d_za < 1)
      throw ConfigError("encoder config: latent dims must be >= 1");
    if (dyn_layers < 0 || dyn_hidden < 1 || dec_hidden < 0 || nognn_hidden < 0)
      throw ConfigError("encoder config: negative width");
  }

  nlohmann::json to_json() const {
    return {{"channels", channels},
            {"features_per_node", features_per_node},
            {"gnn_layers", gnn_layers},
            {"gnn_hidden", gnn_hidden},
            {"fusion_layers", fusion_layers},
            {"fusion_units", fusion_units},
            {"d_zs", d_zs},
            {"d_za", d_za},
            {"dyn_layers", dyn_layers},
            {"dyn_hidden", dyn_hidden},
            {"dec_hidden", dec_hidden},
            {"nognn_hidden", nognn_hidden}};
  }
  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.channels = j.value("channels", c.channels);
    c.features_per_node = j.value("features_per_node", c.features_per_node);
    c.gnn_layers = j.value("gnn_layers", c.gnn_layers);
    c.gnn_hidden = j.value("gnn_hidden", c.gnn_hidden);
    c.fusion_layers = j.value("fusion_layers", c.fusion_layers);
    c.fusion_units = j.value("fusion_units", c.fusion_units);
    c.d_zs = j.value("d_zs", c.d_zs);
    c.d_za = j.value("d_za", c.d_za);
    c.dyn_layers = j.value("dyn_layers", c.dyn_layers);
    c.dyn_hidden = j.value("dyn_hidden", c.dyn_hidden);
    c.dec_hidden = j.value("dec_hidden", c.dec_hidden);
    c.nognn_hidden = j.value("nognn_hidden", c.nognn_hidden);
    c.validate();
    return c;
  }
};

// Multi-layer graph convolution: H <- tanh(P H W + b) per layer, with the
// batched propagation operator applied per node block.
class GcnBlock {
 public:
  GcnBlock() = default;
  GcnBlock(const std::string& name, int in, int hidden, int out, int layers,
           Rng& rng)
      : name_(name) {
    int prev = in;
    for (int l = 0; l < layers; ++l) {
      const int width = (l + 1 == layers) ? out : hidden;
      ws_.emplace_back(name + ".w" + std::to_string(l),
                       glorot_init(prev, width, rng));
      bs_.emplace_back(name + ".b" + std::to_string(l),
                       Eigen::MatrixXd::Zero(1, width));
      prev = width;
    }
  }

  struct Bound {
    std::vector<ad::Var> w, b;
  };
  Bound bind(ad::Tape& tape) const {
    Bound bd;
    for (const auto& p : ws_) bd.w.push_back(tape.input(p.value));
    for (const auto& p : bs_) bd.b.push_back(tape.input(p.value));
    return bd;
  }

  Flow apply(ad::Tape&, const Bound& bd, const Eigen::MatrixXd& prop, int n,
             Flow x) const {
    for (std::size_t l = 0; l < ws_.size(); ++l) {
      x.y = ad::block_propagate(prop, x.y, n);
      if (x.has_tangent()) x.dy = ad::block_propagate(prop, x.dy, n);
      ad::Var u = ad::add_row_broadcast(ad::matmul(x.y, bd.w[l]), bd.b[l]);
      ad::Var du;
      if (x.has_tangent()) du = ad::matmul(x.dy, bd.w[l]);
      ad::Var y = ad::tanh_op(u);
      if (x.has_tangent()) du = ad::tanh_jvp(y, du);
      x.y = y;
      x.dy = du;
    }
    return x;
  }

  void collect(std::vector<Param*>& out) {
    for (auto& p : ws_) out.push_back(&p);
    for (auto& p : bs_) out.push_back(&p);
  }
  void collect_const(std::vector<const Param*>& out) const {
    for (const auto& p : ws_) out.push_back(&p);
    for (const auto& p : bs_) out.push_back(&p);
  }
  std::vector<Eigen::MatrixXd> grads(ad::Tape& tape, const Bound& bd) const {
    std::vector<Eigen::MatrixXd> gs;
    auto take = [&](const ad::Var& v) {
      gs.push_back(tape.has_grad(v.idx)
                       ? tape.grad_ref(v.idx)
                       : Eigen::MatrixXd::Zero(tape.val(v).rows(), tape.val(v).cols()));
    };
    for (const auto& v : bd.w) take(v);
    for (const auto& v : bd.b) take(v);
    return gs;
  }

  long param_count() const {
    long n = 0;
    for (const auto& p : ws_) n += p.size();
    for (const auto& p : bs_) n += p.size();
    return n;
  }

 private:
  std::string name_;
  std::vector<Param> ws_, bs_;
};

// Constant lookup tables tying the segment map to the graph node order.
struct GraphTables {
  Eigen::MatrixXd p_spatial;  // ns x ns propagation operator
  Eigen::MatrixXd p_control;  // n x n propagation operator (sensors then ACUs)
  Eigen::MatrixXi idx_sp, mask_sp;  // ns x 1, sensor readings
  Eigen::MatrixXi idx_cs, mask_cs;  // n x 5, state-sourced node features
  Eigen::MatrixXi idx_ca, mask_ca;  // n x 5, action-sourced node features
  int ns = 0;
  int n_nodes = 0;
  int m_acus = 0;

  static GraphTables build(const SegmentMap& m, const Eigen::MatrixXd& p_spatial,
                           const Eigen::MatrixXd& p_control) {
    GraphTables g;
    g.ns = m.ss_count;
    g.m_acus = m.num_acus;
    g.n_nodes = g.ns + g.m_acus;
    if (p_spatial.rows() != g.ns || p_spatial.cols() != g.ns)
      throw ShapeError("spatial operator does not match sensor count");
    if (p_control.rows() != g.n_nodes || p_control.cols() != g.n_nodes)
      throw ShapeError("control operator does not match node count");
    g.p_spatial = p_spatial;
    g.p_control = p_control;

    g.idx_sp = Eigen::MatrixXi::Zero(g.ns, 1);
    g.mask_sp = Eigen::MatrixXi::Ones(g.ns, 1);
    for (int k = 0; k < g.ns; ++k) g.idx_sp(k, 0) = m.ss_begin + k;

    g.idx_cs = Eigen::MatrixXi::Zero(g.n_nodes, 5);
    g.mask_cs = Eigen::MatrixXi::Zero(g.n_nodes, 5);
    g.idx_ca = Eigen::MatrixXi::Zero(g.n_nodes, 5);
    g.mask_ca = Eigen::MatrixXi::Zero(g.n_nodes, 5);
    for (int k = 0; k < g.ns; ++k) {
      g.idx_cs(k, 0) = m.ss_begin + k;
      g.mask_cs(k, 0) = 1;
    }
    for (int a = 0; a < g.m_acus; ++a) {
      const int row = g.ns + a;
      g.idx_cs(row, 0) = m.lwt_idx.at(a);
      g.idx_cs(row, 1) = m.lat_idx.at(a);
      g.idx_cs(row, 2) = m.eat_idx.at(a);
      g.mask_cs(row, 0) = g.mask_cs(row, 1) = g.mask_cs(row, 2) = 1;
      g.idx_ca(row, 3) = a;               // fan command
      g.idx_ca(row, 4) = g.m_acus + a;    // valve command
      g.mask_ca(row, 3) = g.mask_ca(row, 4) = 1;
    }
    return g;
  }
};

struct TtdmLosses {
  double rec = 0, fwd = 0, rvs = 0, ds = 0, tsym = 0, total = 0;
};

struct TtdmBatch {
  Eigen::MatrixXd s, a, s_next;  // rows = samples, normalized units
};

class TtdmModel {
 public:
  TtdmModel() = default;

  TtdmModel(EncoderConfig cfg, TtdmVariant variant, SegmentMap segments,
            const Eigen::MatrixXd& p_spatial, const Eigen::MatrixXd& p_control,
            LossWeights weights, std::uint64_t manifest_hash, std::uint64_t seed)
      : cfg_(cfg),
        variant_(variant),
        segments_(std::move(segments)),
        weights_(weights),
        manifest_hash_(manifest_hash) {
    cfg_.validate();
    tables_ = GraphTables::build(segments_, p_spatial, p_control);
    Rng rng(seed);
    init_modules(rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  TtdmVariant variant() const { return variant_; }
  const SegmentMap& segments() const { return segments_; }
  const LossWeights& loss_weights() const { return weights_; }
  std::uint64_t manifest_hash() const { return manifest_hash_; }
  int state_dim() const { return segments_.state_dim(); }
  int action_dim() const { return segments_.action_dim(); }

  // ---- parameter plumbing -------------------------------------------------

  std::vector<Param*> params() {
    std::vector<Param*> ps;
    if (variant_ != TtdmVariant::kNoGnn) {
      ps.push_back(&w_sen_);
      ps.push_back(&w_ctl_);
      gcn_s_.collect(ps);
      gcn_c_.collect(ps);
      ps.push_back(&head_zs_w_);
      ps.push_back(&head_zs_b_);
      ps.push_back(&head_za_w_);
      ps.push_back(&head_za_b_);
      fusion_.collect(ps);
    } else {
      mlp_enc_.collect(ps);
    }
    dec_s_.collect(ps);
    dec_a_.collect(ps);
    f_net_.collect(ps);
    g_net_.collect(ps);
    return ps;
  }
  std::vector<const Param*> params_const() const {
    std::vector<const Param*> ps;
    if (variant_ != TtdmVariant::kNoGnn) {
      ps.push_back(&w_sen_);
      ps.push_back(&w_ctl_);
      gcn_s_.collect_const(ps);
      gcn_c_.collect_const(ps);
      ps.push_back(&head_zs_w_);
      ps.push_back(&head_zs_b_);
      ps.push_back(&head_za_w_);
      ps.push_back(&head_za_b_);
      fusion_.collect_const(ps);
    } else {
      mlp_enc_.collect_const(ps);
    }
    dec_s_.collect_const(ps);
    dec_a_.collect_const(ps);
    f_net_.collect_const(ps);
    g_net_.collect_const(ps);
    return ps;
  }
  Param* find_param(const std::string& name) {
    for (Param* p : params())
      if (p->name == name) return p;
    return nullptr;
  }
  std::uint64_t weights_hash() const { return params_hash(params_const()); }

  long encoder_param_count() const {
    if (variant_ == TtdmVariant::kNoGnn) return mlp_enc_.param_count();
    return w_sen_.size() + w_ctl_.size() + gcn_s_.param_count() +
           gcn_c_.param_count() + head_zs_w_.size() + head_zs_b_.size() +
           head_za_w_.size() + head_za_b_.size() + fusion_.param_count();
  }

  // ---- forward graph ------------------------------------------------------

  struct BoundModel {
    ad::Var w_sen, w_ctl, head_zs_w, head_zs_b, head_za_w, head_za_b;
    GcnBlock::Bound gcn_s, gcn_c;
    Mlp::Bound fusion, mlp_enc, dec_s, dec_a, f_net, g_net;
  };

  BoundModel bind(ad::Tape& tape) const {
    BoundModel bd;
    if (variant_ != TtdmVariant::kNoGnn) {
      bd.w_sen = tape.input(w_sen_.value);
      bd.w_ctl = tape.input(w_ctl_.value);
      bd.gcn_s = gcn_s_.bind(tape);
      bd.gcn_c = gcn_c_.bind(tape);
      bd.head_zs_w = tape.input(head_zs_w_.value);
      bd.head_zs_b = tape.input(head_zs_b_.value);
      bd.head_za_w = tape.input(head_za_w_.value);
      bd.head_za_b = tape.input(head_za_b_.value);
      bd.fusion = fusion_.bind(tape);
    } else {
      bd.mlp_enc = mlp_enc_.bind(tape);
    }
    bd.dec_s = dec_s_.bind(tape);
    bd.dec_a = dec_a_.bind(tape);
    bd.f_net = f_net_.bind(tape);
    bd.g_net = g_net_.bind(tape);
    return bd;
  }

  std::vector<Eigen::MatrixXd> grads(ad::Tape& tape, const BoundModel& bd) const {
    std::vector<Eigen::MatrixXd> gs;
    auto take = [&](const ad::Var& v) {
      gs.push_back(tape.has_grad(v.idx)
                       ? tape.grad_ref(v.idx)
                       : Eigen::MatrixXd::Zero(tape.val(v).rows(), tape.val(v).cols()));
    };
    auto append = [&](std::vector<Eigen::MatrixXd>&& more) {
      for (auto& g : more) gs.push_back(std::move(g));
    };
    if (variant_ != TtdmVariant::kNoGnn) {
      take(bd.w_sen);
      take(bd.w_ctl);
      append(gcn_s_.grads(tape, bd.gcn_s));
      append(gcn_c_.grads(tape, bd.gcn_c));
      take(bd.head_zs_w);
      take(bd.head_zs_b);
      take(bd.head_za_w);
      take(bd.head_za_b);
      append(fusion_.grads(tape, bd.fusion));
    } else {
      append(mlp_enc_.grads(tape, bd.mlp_enc));
    }
    append(dec_s_.grads(tape, bd.dec_s));
    append(dec_a_.grads(tape, bd.dec_a));
    append(f_net_.grads(tape, bd.f_net));
    append(g_net_.grads(tape, bd.g_net));
    return gs;
  }

  struct Latent {
    ad::Var z_s, z_a, dz_s;
  };

  // Encode a batch; if ds_tangent is a valid Var (rows = batch, cols =
  // state_dim), dz_s carries (d z_s / d s) * tangent through the graph.
  Latent encode_vars(ad::Tape& tape, const BoundModel& bd, ad::Var s, ad::Var a,
                     ad::Var ds_tangent = {}) const {
    if (tape.val(s).cols() != state_dim() || tape.val(a).cols() != action_dim())
      throw ShapeError("encode: input width does not match segment map");
    const bool tg = ds_tangent.valid();
    Latent out;
    if (variant_ == TtdmVariant::kNoGnn) {
      ad::Var in = ad::hcat(s, a);
      Flow x{in, ad::Var{}};
      if (tg) {
        ad::Var zeros = tape.input(
            Eigen::MatrixXd::Zero(tape.val(a).rows(), action_dim()));
        x.dy = ad::hcat(ds_tangent, zeros);
      }
      Flow z = mlp_enc_.apply(tape, bd.mlp_enc, x);
      out.z_s = ad::slice_cols(z.y, 0, cfg_.d_zs);
      out.z_a = ad::slice_cols(z.y, cfg_.d_zs, cfg_.d_za);
      if (tg) out.dz_s = ad::slice_cols(z.dy, 0, cfg_.d_zs);
      return out;
    }

    // sensor proximity block
    Flow xs{ad::pack_nodes(s, tables_.idx_sp, tables_.mask_sp), ad::Var{}};
    if (tg) xs.dy = ad::pack_nodes(ds_tangent, tables_.idx_sp, tables_.mask_sp);
    xs.y = ad::matmul(xs.y, bd.w_sen);
    if (tg) xs.dy = ad::matmul(xs.dy, bd.w_sen);
    xs = gcn_s_.apply(tape, bd.gcn_s, tables_.p_spatial, tables_.ns, xs);

    // control block over sensors + ACU nodes
    ad::Var xc_raw = ad::add(ad::pack_nodes(s, tables_.idx_cs, tables_.mask_cs),
                             ad::pack_nodes(a, tables_.idx_ca, tables_.mask_ca));
    Flow xc{ad::matmul(xc_raw, bd.w_ctl), ad::Var{}};
    if (tg)
      xc.dy = ad::matmul(ad::pack_nodes(ds_tangent, tables_.idx_cs, tables_.mask_cs),
                         bd.w_ctl);
    xc = gcn_c_.apply(tape, bd.gcn_c, tables_.p_control, tables_.n_nodes, xc);

    ad::Var hc_sen = ad::block_slice_rows(xc.y, tables_.n_nodes, 0, tables_.ns);
    ad::Var hc_acu =
        ad::block_slice_rows(xc.y, tables_.n_nodes, tables_.ns, tables_.m_acus);

    ad::Var sen = ad::hcat(xs.y, hc_sen);
    ad::Var pool_s = ad::block_mean_rows(sen, tables_.ns);
    ad::Var pool_a = ad::block_mean_rows(hc_acu, tables_.m_acus);

    ad::Var zs_lin =
        ad::add_row_broadcast(ad::matmul(pool_s, bd.head_zs_w), bd.head_zs_b);
    ad::Var s_e = ad::slice_cols(s, segments_.se_begin, segments_.se_count);
    Flow fus{s_e, ad::Var{}};
    if (tg) fus.dy = ad::slice_cols(ds_tangent, segments_.se_begin, segments_.se_count);
    fus = fusion_.apply(tape, bd.fusion, fus);
    out.z_s = ad::add(zs_lin, fus.y);
    out.z_a =
        ad::add_row_broadcast(ad::matmul(pool_a, bd.head_za_w), bd.head_za_b);

    if (tg) {
      ad::Var dc_sen = ad::block_slice_rows(xc.dy, tables_.n_nodes, 0, tables_.ns);
      ad::Var dsen = ad::hcat(xs.dy, dc_sen);
      ad::Var dpool_s = ad::block_mean_rows(dsen, tables_.ns);
      out.dz_s = ad::add(ad::matmul(dpool_s, bd.head_zs_w), fus.dy);
    }
    return out;
  }

  // Convenience batch encode on plain values.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> encode(const Eigen::MatrixXd& s,
                                                     const Eigen::MatrixXd& a) const {
    ad::Tape tape;
    BoundModel bd = bind(tape);
    Latent z = encode_vars(tape, bd, tape.input(s), tape.input(a));
    return {tape.val(z.z_s), tape.val(z.z_a)};
  }

  // One-step prediction: dec_s(z_s + f(z_s, z_a)) on a batch.
  Eigen::MatrixXd predict_next(const Eigen::MatrixXd& s,
                               const Eigen::MatrixXd& a) const {
    ad::Tape tape;
    BoundModel bd = bind(tape);
    Latent z = encode_vars(tape, bd, tape.input(s), tape.input(a));
    ad::Var fo = f_net_.apply(tape, bd.f_net, Flow{ad::hcat(z.z_s, z.z_a), {}}).y;
    ad::Var z2 = ad::add(z.z_s, fo);
    ad::Var sh = dec_s_.apply(tape, bd.dec_s, Flow{z2, {}}).y;
    const Eigen::MatrixXd& out = tape.val(sh);
    for (int i = 0; i < out.size(); ++i)
      if (!std::isfinite(out.data()[i]))
        throw NumericError("ttdm predict: non-finite output");
    return out;
  }

  struct LossVars {
    ad::Var rec, fwd, rvs, ds, tsym, total;
  };

  // Full loss graph over a batch; all five terms are evaluated, the total
  // weights only the terms active under the variant (the no-tsym ablation
  // removes exactly tsym and rvs).
  LossVars build_loss(ad::Tape& tape, const BoundModel& bd,
                      const TtdmBatch& batch) const {
    if (batch.s.rows() != batch.a.rows() || batch.s.rows() != batch.s_next.rows())
      throw ShapeError("ttdm batch: row counts disagree");
    ad::Var s = tape.input(batch.s);
    ad::Var a = tape.input(batch.a);
    ad::Var s2 = tape.input(batch.s_next);
    ad::Var sdot = tape.input(batch.s_next - batch.s);
    ad::Var sdot_neg = tape.input(batch.s - batch.s_next);

    Latent z1 = encode_vars(tape, bd, s, a, sdot);
    Latent z2 = encode_vars(tape, bd, s2, a, sdot_neg);

    ad::Var s_hat = dec_s_.apply(tape, bd.dec_s, Flow{z1.z_s, {}}).y;
    ad::Var a_hat = dec_a_.apply(tape, bd.dec_a, Flow{z1.z_a, {}}).y;
    LossVars lv;
    lv.rec = ad::add(ad::mean_all(ad::sq_norm_rows(ad::sub(s, s_hat))),
                     ad::mean_all(ad::sq_norm_rows(ad::sub(a, a_hat))));

    ad::Var f_out =
        f_net_.apply(tape, bd.f_net, Flow{ad::hcat(z1.z_s, z1.z_a), {}}).y;
    lv.fwd = ad::mean_all(ad::sq_norm_rows(ad::sub(z1.dz_s, f_out)));

    ad::Var g_out =
        g_net_.apply(tape, bd.g_net, Flow{ad::hcat(z2.z_s, z2.z_a), {}}).y;
    lv.rvs = ad::mean_all(ad::sq_norm_rows(ad::sub(z2.dz_s, g_out)));

    // latent chain: the increment fed to the decoder is, by construction,
    // encode(s',a) - encode(s,a) restricted to the state part
    ad::Var zdot = ad::sub(z2.z_s, z1.z_s);
    ad::Var sdot_hat = dec_s_.apply(tape, bd.dec_s, Flow{zdot, {}}).y;
    lv.ds = ad::mean_all(ad::sq_norm_rows(ad::sub(sdot, sdot_hat)));

    ad::Var z_fwd = ad::add(z1.z_s, f_out);
    ad::Var g_cyc =
        g_net_.apply(tape, bd.g_net, Flow{ad::hcat(z_fwd, z1.z_a), {}}).y;
    lv.tsym = ad::mean_all(ad::sq_norm_rows(ad::add(f_out, g_cyc)));

    lv.total = ad::scale(lv.rec, weights_.rec);
    lv.total = ad::add(lv.total, ad::scale(lv.fwd, weights_.fwd));
    lv.total = ad::add(lv.total, ad::scale(lv.ds, weights_.ds));
    if (variant_ != TtdmVariant::kNoTsym) {
      lv.total = ad::add(lv.total, ad::scale(lv.rvs, weights_.rvs));
      lv.total = ad::add(lv.total, ad::scale(lv.tsym, weights_.tsym));
    }
    return lv;
  }

  TtdmLosses eval_loss(const TtdmBatch& batch) const {
    ad::Tape tape;
    BoundModel bd = bind(tape);
    LossVars lv = build_loss(tape, bd, batch);
    return values_of(tape, lv);
  }

  static TtdmLosses values_of(const ad::Tape& tape, const LossVars& lv) {
    TtdmLosses v;
    v.rec = tape.val(lv.rec)(0, 0);
    v.fwd = tape.val(lv.fwd)(0, 0);
    v.rvs = tape.val(lv.rvs)(0, 0);
    v.ds = tape.val(lv.ds)(0, 0);
    v.tsym = tape.val(lv.tsym)(0, 0);
    v.total = tape.val(lv.total)(0, 0);
    return v;
  }

  // Latent dynamics on plain values (frozen-model use in phase 2).
  Eigen::MatrixXd f_value(const Eigen::MatrixXd& z) const { return f_net_.forward(z); }
  Eigen::MatrixXd g_value(const Eigen::MatrixXd& z) const { return g_net_.forward(z); }
  const Mlp& f_net() const { return f_net_; }
  const Mlp& g_net() const { return g_net_; }

  // In-graph latent dynamics for callers that differentiate through them
  // (gradients reach the caller's inputs; this model's leaves stay frozen
  // unless the caller applies them).
  ad::Var apply_f(ad::Tape& tape, const BoundModel& bd, ad::Var z) const {
    return f_net_.apply(tape, bd.f_net, Flow{z, {}}).y;
  }
  ad::Var apply_g(ad::Tape& tape, const BoundModel& bd, ad::Var z) const {
    return g_net_.apply(tape, bd.g_net, Flow{z, {}}).y;
  }

  // ---- persistence --------------------------------------------------------

  nlohmann::json to_json() const {
    nlohmann::json params = nlohmann::json::object();
    for (const Param* p : params_const())
      params[p->name] = Mlp::matrix_to_json(p->value);
    return {{"format", "ttdm-checkpoint-v1"},
            {"variant", ttdm_variant_name(variant_)},
            {"encoder_config", cfg_.to_json()},
            {"loss_weights", weights_.to_json()},
            {"segment_map", segments_.to_json()},
            {"manifest_hash", to_hex(manifest_hash_)},
            {"provenance", provenance},
            {"p_spatial", Mlp::matrix_to_json(tables_.p_spatial)},
            {"p_control", Mlp::matrix_to_json(tables_.p_control)},
            {"params", params}};
  }

  static TtdmModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != std::string("ttdm-checkpoint-v1"))
      throw DataError("unrecognized ttdm checkpoint format");
    TtdmModel m(EncoderConfig::from_json(j.at("encoder_config")),
                ttdm_variant_from_name(j.at("variant").get<std::string>()),
                SegmentMap::from_json(j.at("segment_map")),
                Mlp::matrix_from_json(j.at("p_spatial")),
                Mlp::matrix_from_json(j.at("p_control")),
                LossWeights::from_json(j.at("loss_weights")),
                std::stoull(j.at("manifest_hash").get<std::string>(), nullptr, 16),
                /*seed=*/0);
    m.provenance = j.value("provenance", "");
    const auto& params = j.at("params");
    for (Param* p : m.params()) {
      if (!params.contains(p->name))
        throw DataError("ttdm checkpoint missing parameter " + p->name);
      Eigen::MatrixXd v = Mlp::matrix_from_json(params.at(p->name));
      if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
        throw DataError("ttdm checkpoint parameter shape mismatch: " + p->name);
      p->value = v;
    }
    return m;
  }

  void save(const std::string& path) const { write_file(path, to_json().dump()); }
  static TtdmModel load(const std::string& path) {
    return from_json(nlohmann::json::parse(read_file(path)));
  }

  std::string provenance = "dccool-ttdm";

 private:
  void init_modules(Rng& rng) {
    const int D = state_dim();
    const int A = action_dim();
    const int F = cfg_.features_per_node;
    const int C = cfg_.channels;
    if (variant_ != TtdmVariant::kNoGnn) {
      w_sen_ = Param("enc.w_sen", glorot_init(1, F, rng));
      w_ctl_ = Param("enc.w_ctl", glorot_init(5, F, rng));
      gcn_s_ = GcnBlock("enc.gcn_s", F, cfg_.gnn_hidden, C, cfg_.gnn_layers, rng);
      gcn_c_ = GcnBlock("enc.gcn_c", F, cfg_.gnn_hidden, C, cfg_.gnn_layers, rng);
      head_zs_w_ = Param("enc.head_zs_w", glorot_init(2 * C, cfg_.d_zs, rng));
      head_zs_b_ = Param("enc.head_zs_b", Eigen::MatrixXd::Zero(1, cfg_.d_zs));
      head_za_w_ = Param("enc.head_za_w", glorot_init(C, cfg_.d_za, rng));
      head_za_b_ = Param("enc.head_za_b", Eigen::MatrixXd::Zero(1, cfg_.d_za));
      std::vector<int> fusion_hidden(cfg_.fusion_layers - 1, cfg_.fusion_units);
      fusion_ = Mlp("enc.fusion", segments_.se_count, fusion_hidden, cfg_.d_zs,
                    Head::kLinear, rng);
    } else {
      const int width = cfg_.nognn_hidden > 0 ? cfg_.nognn_hidden
                                              : matched_mlp_width(D, A);
      std::vector<int> hidden(cfg_.gnn_layers, width);
      if (width == 0) hidden.clear();
      mlp_enc_ = Mlp("enc.mlp", D + A, hidden, cfg_.d_zs + cfg_.d_za,
                     Head::kLinear, rng);
    }
    std::vector<int> dec_hidden;
    if (cfg_.dec_hidden > 0) dec_hidden.push_back(cfg_.dec_hidden);
    dec_s_ = Mlp("dec_s", cfg_.d_zs, dec_hidden, D, Head::kLinear, rng);
    dec_a_ = Mlp("dec_a", cfg_.d_za, dec_hidden, A, Head::kLinear, rng);
    std::vector<int> dyn_hidden(cfg_.dyn_layers, cfg_.dyn_hidden);
    f_net_ = Mlp("f", cfg_.d_zs + cfg_.d_za, dyn_hidden, cfg_.d_zs, Head::kLinear, rng);
    g_net_ = Mlp("g", cfg_.d_zs + cfg_.d_za, dyn_hidden, cfg_.d_zs, Head::kLinear, rng);
  }

  // Width of an MLP encoder whose parameter count matches the graph encoder
  // within 10%; structural fairness knob for the no-GNN ablation.
  int matched_mlp_width(int D, int A) const {
    // target: count of the graph path under this config
    Rng tmp_rng(1);
    TtdmModel probe;
    probe.cfg_ = cfg_;
    probe.variant_ = TtdmVariant::kFull;
    probe.segments_ = segments_;
    probe.tables_ = tables_;
    probe.init_modules(tmp_rng);
    const long target = probe.encoder_param_count();

    const int in = D + A;
    const int out = cfg_.d_zs + cfg_.d_za;
    const int L = cfg_.gnn_layers;  // hidden layer count mirrors the GCN depth
    long best_diff = -1;
    int best_w = 1;
    for (int w = 1; w <= 4096; ++w) {
      long count = static_cast<long>(in) * w + w;
      for (int l = 1; l < L; ++l) count += static_cast<long>(w) * w + w;
      count += static_cast<long>(w) * out + out;
      const long diff = std::abs(count - target);
      if (best_diff < 0 || diff < best_diff) {
        best_diff = diff;
        best_w = w;
      }
    }
    if (best_diff > target / 10)
      throw ConfigError("no-gnn ablation: cannot match encoder parameter count within 10%");
    return best_w;
  }

  EncoderConfig cfg_;
  TtdmVariant variant_ = TtdmVariant::kFull;
  SegmentMap segments_;
  LossWeights weights_;
  std::uint64_t manifest_hash_ = 0;
  GraphTables tables_;

  Param w_sen_, w_ctl_;
  GcnBlock gcn_s_, gcn_c_;
  Param head_zs_w_, head_zs_b_, head_za_w_, head_za_b_;
  Mlp fusion_;
  Mlp mlp_enc_;
  Mlp dec_s_, dec_a_, f_net_, g_net_;
};

// ---------------------------------------------------------------------------
// Training

struct TtdmTrainConfig {
  long steps = 4000;
  int batch = 64;
  double lr = 3e-4;
  double weight_decay = 1e-5;
  long log_every = 50;
  std::uint64_t expected_manifest_hash = 0;  // 0 = take the dataset's own

  nlohmann::json to_json() const {
    return {{"steps", steps},
            {"batch", batch},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"log_every", log_every}};
  }
  static TtdmTrainConfig from_json(const nlohmann::json& j) {
    TtdmTrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.log_every = j.value("log_every", c.log_every);
    return c;
  }
};

struct TtdmCurvePoint {
  long step = 0;
  TtdmLosses losses;
};

struct TtdmTrainResult {
  TtdmModel model;
  std::vector<TtdmCurvePoint> curve;
};

inline TtdmTrainResult train_ttdm(const TransitionDataset& ds,
                                  const Eigen::MatrixXd& p_spatial,
                                  const Eigen::MatrixXd& p_control,
                                  const EncoderConfig& cfg, TtdmVariant variant,
                                  const LossWeights& weights,
                                  const TtdmTrainConfig& tc, std::uint64_t seed) {
  if (ds.size() == 0) throw DataError("ttdm training requires a nonempty dataset");
  if (tc.expected_manifest_hash != 0 &&
      tc.expected_manifest_hash != ds.manifest_hash())
    throw ConfigError("ttdm training: dataset manifest hash mismatch");

  TtdmTrainResult out;
  out.model = TtdmModel(cfg, variant, ds.segments, p_spatial, p_control, weights,
                        ds.manifest_hash(), seed);
  Rng rng(seed + 0x9e3779b97f4a7c15ull);
  Adam opt(tc.lr, tc.weight_decay);
  std::vector<Param*> ps = out.model.params();

  for (long step = 0; step < tc.steps; ++step) {
    const std::vector<long> idx = sample_batch_indices(ds, tc.batch, rng);
    TtdmBatch batch;
    batch.s.resize(tc.batch, ds.segments.state_dim());
    batch.a.resize(tc.batch, ds.segments.action_dim());
    batch.s_next.resize(tc.batch, ds.segments.state_dim());
    for (int i = 0; i < tc.batch; ++i) {
      batch.s.row(i) = ds.s.row(idx[i]);
      batch.a.row(i) = ds.a.row(idx[i]);
      batch.s_next.row(i) = ds.s_next.row(idx[i]);
    }

    ad::Tape tape;
    TtdmModel::BoundModel bd = out.model.bind(tape);
    TtdmModel::LossVars lv = out.model.build_loss(tape, bd, batch);
    TtdmLosses vals = TtdmModel::values_of(tape, lv);
    if (!std::isfinite(vals.total))
      throw NumericError("ttdm training diverged at step " + std::to_string(step) +
                         " (rec=" + format_double(vals.rec) +
                         ", fwd=" + format_double(vals.fwd) +
                         ", rvs=" + format_double(vals.rvs) +
                         ", ds=" + format_double(vals.ds) +
                         ", tsym=" + format_double(vals.tsym) + ")");
    if (step % tc.log_every == 0 || step + 1 == tc.steps)
      out.curve.push_back({step, vals});

    tape.backward(lv.total);
    std::vector<Eigen::MatrixXd> gs = out.model.grads(tape, bd);
    opt.step(ps, gs);
  }
  return out;
}

inline std::string curve_to_csv(const std::vector<TtdmCurvePoint>& curve) {
  std::string csv = "step\trec\tfwd\trvs\tds\ttsym\ttotal\n";
  for (const auto& p : curve) {
    csv += std::to_string(p.step);
    for (double v : {p.losses.rec, p.losses.fwd, p.losses.rvs, p.losses.ds,
                     p.losses.tsym, p.losses.total})
      csv += "\t" + format_double(v);
    csv += "\n";
  }
  return csv;
}

// ---------------------------------------------------------------------------
// Episode reconstruction + multi-step evaluation

struct EpisodeArrays {
  Eigen::MatrixXd states;   // L x D
  Eigen::MatrixXd actions;  // (L-1) x 2M
};

inline std::vector<EpisodeArrays> episodes_from_dataset(const TransitionDataset& ds) {
  std::vector<EpisodeArrays> eps;
  long i = 0;
  while (i < ds.size()) {
    long j = i;
    while (j + 1 < ds.size() && ds.episode_id[j + 1] == ds.episode_id[i]) ++j;
    const long len = j - i + 1;  // transitions in this episode
    EpisodeArrays ep;
    ep.states.resize(len + 1, ds.segments.state_dim());
    ep.actions.resize(len, ds.segments.action_dim());
    for (long k = 0; k < len; ++k) {
      ep.states.row(k) = ds.s.row(i + k);
      ep.actions.row(k) = ds.a.row(i + k);
    }
    ep.states.row(len) = ds.s_next.row(j);
    eps.push_back(std::move(ep));
    i = j + 1;
  }
  return eps;
}

// Mean squared prediction error per forecast depth 1..K, normalized units per
// dimension. Rollouts restart from every `stride`-th step; the rolled state is
// re-encoded with the logged action at each depth.
inline std::vector<double> multi_step_mse(const TtdmModel& model,
                                          const std::vector<EpisodeArrays>& eps,
                                          int K, int stride = 1) {
  if (K < 1) throw ConfigError("multi-step horizon must be >= 1");
  if (stride < 1) throw ConfigError("multi-step stride must be >= 1");
  const int D = model.state_dim();

  // gather rollout start points
  std::vector<std::pair<int, long>> starts;  // (episode, start row)
  for (std::size_t e = 0; e < eps.size(); ++e) {
    const long L = eps[e].actions.rows();
    if (L < K)
      throw DataError("multi-step evaluation: episode shorter than horizon");
    for (long s = 0; s + K <= L; s += stride) starts.push_back({static_cast<int>(e), s});
  }
  if (starts.empty()) throw DataError("multi-step evaluation: no rollout starts");

  const long R = static_cast<long>(starts.size());
  Eigen::MatrixXd cur(R, D);
  for (long r = 0; r < R; ++r)
    cur.row(r) = eps[starts[r].first].states.row(starts[r].second);

  std::vector<double> mse(K, 0.0);
  Eigen::MatrixXd act(R, model.action_dim());
  for (int k = 1; k <= K; ++k) {
    for (long r = 0; r < R; ++r)
      act.row(r) = eps[starts[r].first].actions.row(starts[r].second + k - 1);
    cur = model.predict_next(cur, act);
    double acc = 0.0;
    for (long r = 0; r < R; ++r) {
      const Eigen::VectorXd truth =
          eps[starts[r].first].states.row(starts[r].second + k);
      acc += (cur.row(r).transpose() - truth).squaredNorm() / D;
    }
    mse[k - 1] = acc / static_cast<double>(R);
  }
  return mse;
}

// Deterministic episode-level split: every holdout_every-th episode becomes
// evaluation data, the rest feeds training. Identical across runs and model
// variants by construction.
inline std::pair<TransitionDataset, TransitionDataset> split_by_episode(
    const TransitionDataset& ds, int holdout_every = 5) {
  if (holdout_every < 2) throw ConfigError("holdout_every must be >= 2");
  TransitionDataset train = ds, hold = ds;
  auto filter = [&](TransitionDataset& out, bool take_holdout) {
    std::vector<long> rows;
    for (long i = 0; i < ds.size(); ++i) {
      const bool is_holdout = (ds.episode_id[i] % holdout_every) == 0;
      if (is_holdout == take_holdout) rows.push_back(i);
    }
    out.episode_id.clear();
    out.s.resize(rows.size(), ds.s.cols());
    out.a.resize(rows.size(), ds.a.cols());
    out.s_next.resize(rows.size(), ds.s_next.cols());
    out.a_next.resize(rows.size(), ds.a_next.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.episode_id.push_back(ds.episode_id[rows[r]]);
      out.s.row(r) = ds.s.row(rows[r]);
      out.a.row(r) = ds.a.row(rows[r]);
      out.s_next.row(r) = ds.s_next.row(rows[r]);
      out.a_next.row(r) = ds.a_next.row(rows[r]);
    }
  };
  filter(train, false);
  filter(hold, true);
  if (train.size() == 0 || hold.size() == 0)
    throw DataError("episode split produced an empty part");
  return {train, hold};
}

}  // namespace dccool
