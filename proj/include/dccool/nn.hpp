#pragma once

// Small dense-network toolkit on top of the autodiff tape: parameter store
// with Adam state, multi-layer perceptrons with tanh hidden activations, an
// optional tangent-carrying forward pass, and JSON (de)serialization for
// checkpoints.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "dccool/autodiff.hpp"
#include "dccool/common.hpp"
#include "json.hpp"

namespace dccool {

struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd m;  // Adam first moment
  Eigen::MatrixXd v;  // Adam second moment

  explicit Param(std::string n = {}, Eigen::MatrixXd val = {})
      : name(std::move(n)), value(std::move(val)) {
    m = Eigen::MatrixXd::Zero(value.rows(), value.cols());
    v = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  }
  long size() const { return value.size(); }
};

// Adam with decoupled weight decay. step() consumes gradients aligned with
// the parameter list.
class Adam {
 public:
  explicit Adam(double lr, double weight_decay = 0.0)
      : lr_(lr), weight_decay_(weight_decay) {}

  void step(std::vector<Param*>& params, const std::vector<Eigen::MatrixXd>& grads) {
    if (params.size() != grads.size())
      throw ShapeError("Adam: parameter/gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      const Eigen::MatrixXd& g = grads[i];
      if (g.rows() != p.value.rows() || g.cols() != p.value.cols())
        throw ShapeError("Adam: gradient shape mismatch for " + p.name);
      p.m = beta1_ * p.m + (1.0 - beta1_) * g;
      p.v = beta2_ * p.v.array().matrix() +
            (1.0 - beta2_) * g.array().square().matrix();
      Eigen::ArrayXXd mhat = p.m.array() / bc1;
      Eigen::ArrayXXd vhat = p.v.array() / bc2;
      if (weight_decay_ > 0.0)
        p.value -= lr_ * weight_decay_ * p.value;
      p.value -= (lr_ * mhat / (vhat.sqrt() + eps_)).matrix();
    }
  }

  long steps_taken() const { return t_; }

 private:
  double lr_;
  double weight_decay_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
};

// Xavier-uniform initialization.
inline Eigen::MatrixXd glorot_init(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd w(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) w(r, c) = rng.uniform(-limit, limit);
  return w;
}

// Value (and optional tangent) pair flowing through a network.
struct Flow {
  ad::Var y;
  ad::Var dy;  // invalid Var when no tangent is carried
  bool has_tangent() const { return dy.valid(); }
};

// Dense feed-forward net; tanh on hidden layers, configurable head.
enum class Head { kLinear, kTanh, kUnitInterval };  // unit interval: (tanh+1)/2

class Mlp {
 public:
  Mlp() = default;

  Mlp(const std::string& name, int in_dim, const std::vector<int>& hidden,
      int out_dim, Head head, Rng& rng)
      : name_(name), head_(head) {
    int prev = in_dim;
    std::vector<int> dims = hidden;
    dims.push_back(out_dim);
    for (std::size_t l = 0; l < dims.size(); ++l) {
      ws_.emplace_back(name + ".w" + std::to_string(l),
                       glorot_init(prev, dims[l], rng));
      bs_.emplace_back(name + ".b" + std::to_string(l),
                       Eigen::MatrixXd::Zero(1, dims[l]));
      prev = dims[l];
    }
  }

  int in_dim() const { return ws_.empty() ? 0 : static_cast<int>(ws_.front().value.rows()); }
  int out_dim() const { return ws_.empty() ? 0 : static_cast<int>(ws_.back().value.cols()); }

  void collect(std::vector<Param*>& out) {
    for (auto& p : ws_) out.push_back(&p);
    for (auto& p : bs_) out.push_back(&p);
  }
  void collect_const(std::vector<const Param*>& out) const {
    for (const auto& p : ws_) out.push_back(&p);
    for (const auto& p : bs_) out.push_back(&p);
  }

  long param_count() const {
    long n = 0;
    for (const auto& p : ws_) n += p.size();
    for (const auto& p : bs_) n += p.size();
    return n;
  }

  // Per-pass bound weights: the tape owns a snapshot of each parameter.
  struct Bound {
    std::vector<ad::Var> w, b;
  };
  Bound bind(ad::Tape& tape) const {
    Bound bd;
    for (const auto& p : ws_) bd.w.push_back(tape.input(p.value));
    for (const auto& p : bs_) bd.b.push_back(tape.input(p.value));
    return bd;
  }

  // Gradients of a bound pass, aligned with collect() order.
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

  // Forward pass; when x.dy is valid, the tangent is pushed through every
  // layer so the caller gets d(output) in the same graph.
  Flow apply(ad::Tape&, const Bound& bd, Flow x) const {
    const std::size_t L = ws_.size();
    for (std::size_t l = 0; l < L; ++l) {
      ad::Var u = ad::add_row_broadcast(ad::matmul(x.y, bd.w[l]), bd.b[l]);
      ad::Var du;
      if (x.has_tangent()) du = ad::matmul(x.dy, bd.w[l]);
      const bool last = (l + 1 == L);
      if (!last || head_ != Head::kLinear) {
        ad::Var y = ad::tanh_op(u);
        if (x.has_tangent()) du = ad::tanh_jvp(y, du);
        u = y;
      }
      if (last && head_ == Head::kUnitInterval) {
        u = ad::affine_const(u, 0.5, 0.5);
        if (x.has_tangent()) du = ad::scale(du, 0.5);
      }
      x.y = u;
      x.dy = du;
    }
    return x;
  }

  // Plain inference without a caller-managed tape.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    ad::Tape tape;
    Bound bd = bind(tape);
    Flow f{tape.input(x), ad::Var{}};
    f = apply(tape, bd, f);
    return tape.val(f.y);
  }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < ws_.size(); ++l)
      layers.push_back({{"w", matrix_to_json(ws_[l].value)},
                        {"b", matrix_to_json(bs_[l].value)}});
    return {{"name", name_}, {"head", static_cast<int>(head_)}, {"layers", layers}};
  }

  static Mlp from_json(const nlohmann::json& j) {
    Mlp m;
    m.name_ = j.at("name").get<std::string>();
    m.head_ = static_cast<Head>(j.at("head").get<int>());
    int l = 0;
    for (const auto& layer : j.at("layers")) {
      m.ws_.emplace_back(m.name_ + ".w" + std::to_string(l),
                         matrix_from_json(layer.at("w")));
      m.bs_.emplace_back(m.name_ + ".b" + std::to_string(l),
                         matrix_from_json(layer.at("b")));
      ++l;
    }
    return m;
  }

  static nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
  }

  static Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    Eigen::MatrixXd m(rows, cols);
    const auto& data = j.at("data");
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = data.at(r).at(c).get<double>();
    return m;
  }

 private:
  std::string name_;
  Head head_ = Head::kLinear;
  std::vector<Param> ws_, bs_;
};

// Write back updated values from checkpoints or across model copies.
inline void copy_params(const std::vector<const Param*>& src,
                        std::vector<Param*>& dst) {
  if (src.size() != dst.size()) throw ShapeError("copy_params: count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
}

// Polyak averaging: target <- (1 - tau) * target + tau * online.
inline void polyak_update(std::vector<Param*>& target,
                          const std::vector<const Param*>& online, double tau) {
  if (target.size() != online.size()) throw ShapeError("polyak: count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i)
    target[i]->value = (1.0 - tau) * target[i]->value + tau * online[i]->value;
}

// Content hash over an ordered parameter list (used to assert frozen
// networks stay frozen; callers pass the stable collect() order).
inline std::uint64_t params_hash(const std::vector<const Param*>& ps) {
  std::string buf;
  for (const auto* p : ps) {
    buf += p->name;
    const double* d = p->value.data();
    buf.append(reinterpret_cast<const char*>(d), sizeof(double) * p->value.size());
  }
  return fnv1a64(buf);
}

}  // namespace dccool
