#pragma once

// Minimal reverse-mode automatic differentiation over Eigen matrices.
//
// A Tape records primitive operations in execution order; backward() walks the
// record in reverse and accumulates adjoints. Everything the training code
// needs is expressible with the primitives below, including directional
// derivatives: a tangent is just another tape value pushed through the same
// (linear) primitives, with tanh_jvp covering the one nonlinearity. Because
// tangent propagation happens *inside* the graph, losses built from
// Jacobian-vector products remain exactly differentiable with respect to the
// network weights (the mixed second-order terms come out of the same reverse
// sweep). Finite-difference oracles in the test suite fence this construction.

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "dccool/common.hpp"

namespace dccool::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Eigen::MatrixXd&)>;

  Var input(Eigen::MatrixXd value) {
    slots_.push_back(Slot{std::move(value), {}, false, nullptr});
    return Var{this, static_cast<int>(slots_.size()) - 1};
  }

  Var op(Eigen::MatrixXd value, BackFn back) {
    slots_.push_back(Slot{std::move(value), {}, false, std::move(back)});
    return Var{this, static_cast<int>(slots_.size()) - 1};
  }

  const Eigen::MatrixXd& val(int i) const { return slots_[i].val; }
  const Eigen::MatrixXd& val(const Var& v) const { return slots_[v.idx].val; }

  bool has_grad(int i) const { return slots_[i].has_grad; }

  // Adjoint accumulator, allocated as zeros on first touch.
  Eigen::MatrixXd& grad_ref(int i) {
    Slot& s = slots_[i];
    if (!s.has_grad) {
      s.grad = Eigen::MatrixXd::Zero(s.val.rows(), s.val.cols());
      s.has_grad = true;
    }
    return s.grad;
  }

  void accum(int i, const Eigen::MatrixXd& g) {
    Slot& s = slots_[i];
    if (!s.has_grad) {
      s.grad = g;  // first touch: assign instead of zero-fill + add
      s.has_grad = true;
    } else {
      s.grad += g;
    }
  }

  // Reverse sweep from a scalar (1x1) root.
  void backward(const Var& root) {
    if (root.tape != this) throw NumericError("backward: var from another tape");
    const Eigen::MatrixXd& rv = slots_[root.idx].val;
    if (rv.rows() != 1 || rv.cols() != 1)
      throw ShapeError("backward root must be a 1x1 scalar");
    grad_ref(root.idx)(0, 0) += 1.0;
    for (int i = root.idx; i >= 0; --i) {
      Slot& s = slots_[i];
      if (s.has_grad && s.back) s.back(*this, s.grad);
    }
  }

  std::size_t size() const { return slots_.size(); }

 private:
  struct Slot {
    Eigen::MatrixXd val;
    Eigen::MatrixXd grad;
    bool has_grad = false;
    BackFn back;
  };
  std::vector<Slot> slots_;
};

inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw NumericError("autodiff: mixed tapes in one op");
}

inline Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  return t.op(t.val(ia) + t.val(ib), [ia, ib](Tape& tp, const Eigen::MatrixXd& g) {
    tp.accum(ia, g);
    tp.accum(ib, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  return t.op(t.val(ia) - t.val(ib), [ia, ib](Tape& tp, const Eigen::MatrixXd& g) {
    tp.accum(ia, g);
    tp.accum(ib, -g);
  });
}

inline Var scale(const Var& a, double c) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.op(c * t.val(ia), [ia, c](Tape& tp, const Eigen::MatrixXd& g) {
    tp.accum(ia, c * g);
  });
}

// Elementwise k*x + c.
inline Var affine_const(const Var& a, double k, double c) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.op((k * t.val(ia)).array() + c,
              [ia, k](Tape& tp, const Eigen::MatrixXd& g) { tp.accum(ia, k * g); });
}

inline Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  if (t.val(ia).cols() != t.val(ib).rows())
    throw ShapeError("matmul: inner dimensions disagree");
  return t.op(t.val(ia) * t.val(ib), [ia, ib](Tape& tp, const Eigen::MatrixXd& g) {
    tp.accum(ia, g * tp.val(ib).transpose());
    tp.accum(ib, tp.val(ia).transpose() * g);
  });
}

inline Var cmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  return t.op(t.val(ia).cwiseProduct(t.val(ib)),
              [ia, ib](Tape& tp, const Eigen::MatrixXd& g) {
                tp.accum(ia, g.cwiseProduct(tp.val(ib)));
                tp.accum(ib, g.cwiseProduct(tp.val(ia)));
              });
}

// X (R x C) plus a 1 x C bias row broadcast over rows.
inline Var add_row_broadcast(const Var& x, const Var& b) {
  check_same_tape(x, b);
  Tape& t = *x.tape;
  int ix = x.idx, ib = b.idx;
  if (t.val(ib).rows() != 1 || t.val(ib).cols() != t.val(ix).cols())
    throw ShapeError("add_row_broadcast: bias must be 1 x cols(x)");
  Eigen::MatrixXd v = t.val(ix);
  v.rowwise() += t.val(ib).row(0);
  return t.op(std::move(v), [ix, ib](Tape& tp, const Eigen::MatrixXd& g) {
    tp.accum(ix, g);
    tp.accum(ib, g.colwise().sum());
  });
}

inline Var tanh_op(const Var& a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.op(t.val(ia).array().tanh().matrix(),
              [ia](Tape& tp, const Eigen::MatrixXd& g) {
                Eigen::ArrayXXd y = tp.val(ia).array().tanh();
                tp.accum(ia, (g.array() * (1.0 - y.square())).matrix());
              });
}

// Tangent rule for tanh, expressed on the already-computed activation y:
// d(tanh(u)) = (1 - y∘y) ∘ du. Keeping y and du as tape values makes the
// tangent itself differentiable with respect to the weights upstream of both.
inline Var tanh_jvp(const Var& y, const Var& du) {
  check_same_tape(y, du);
  Tape& t = *y.tape;
  int iy = y.idx, idu = du.idx;
  if (t.val(iy).rows() != t.val(idu).rows() ||
      t.val(iy).cols() != t.val(idu).cols())
    throw ShapeError("tanh_jvp: activation/tangent shape mismatch");
  Eigen::MatrixXd v =
      ((1.0 - t.val(iy).array().square()) * t.val(idu).array()).matrix();
  return t.op(std::move(v), [iy, idu](Tape& tp, const Eigen::MatrixXd& g) {
    const auto& Y = tp.val(iy).array();
    const auto& DU = tp.val(idu).array();
    tp.accum(iy, (-2.0 * Y * DU * g.array()).matrix());
    tp.accum(idu, ((1.0 - Y.square()) * g.array()).matrix());
  });
}

// Per-row squared Euclidean norm: (R x C) -> (R x 1).
inline Var sq_norm_rows(const Var& a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Eigen::MatrixXd v = t.val(ia).array().square().rowwise().sum();
  return t.op(std::move(v), [ia](Tape& tp, const Eigen::MatrixXd& g) {
    const Eigen::MatrixXd& A = tp.val(ia);
    Eigen::MatrixXd ga =
        2.0 * (A.array().colwise() * g.col(0).array()).matrix();
    tp.accum(ia, ga);
  });
}

inline Var mean_all(const Var& a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  const double n = static_cast<double>(t.val(ia).size());
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = t.val(ia).sum() / n;
  return t.op(std::move(v), [ia, n](Tape& tp, const Eigen::MatrixXd& g) {
    const Eigen::MatrixXd& A = tp.val(ia);
    tp.accum(ia, Eigen::MatrixXd::Constant(A.rows(), A.cols(), g(0, 0) / n));
  });
}

inline Var sum_all(const Var& a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = t.val(ia).sum();
  return t.op(std::move(v), [ia](Tape& tp, const Eigen::MatrixXd& g) {
    const Eigen::MatrixXd& A = tp.val(ia);
    tp.accum(ia, Eigen::MatrixXd::Constant(A.rows(), A.cols(), g(0, 0)));
  });
}

inline Var hcat(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  int ia = a.idx, ib = b.idx;
  if (t.val(ia).rows() != t.val(ib).rows())
    throw ShapeError("hcat: row counts disagree");
  const int ca = static_cast<int>(t.val(ia).cols());
  const int cb = static_cast<int>(t.val(ib).cols());
  Eigen::MatrixXd v(t.val(ia).rows(), ca + cb);
  v << t.val(ia), t.val(ib);
  return t.op(std::move(v), [ia, ib, ca, cb](Tape& tp, const Eigen::MatrixXd& g) {
    tp.accum(ia, g.leftCols(ca));
    tp.accum(ib, g.rightCols(cb));
  });
}

inline Var slice_cols(const Var& a, int c0, int w) {
  Tape& t = *a.tape;
  int ia = a.idx;
  if (c0 < 0 || w < 1 || c0 + w > t.val(ia).cols())
    throw ShapeError("slice_cols: range out of bounds");
  return t.op(t.val(ia).middleCols(c0, w),
              [ia, c0, w](Tape& tp, const Eigen::MatrixXd& g) {
                tp.grad_ref(ia).middleCols(c0, w) += g;
              });
}

// Batched graph propagation: X is (B*n) x F with per-sample node blocks of n
// rows; each block is left-multiplied by the constant n x n operator P.
inline Var block_propagate(const Eigen::MatrixXd& P, const Var& x, int n) {
  Tape& t = *x.tape;
  int ix = x.idx;
  const Eigen::MatrixXd& X = t.val(ix);
  if (n < 1 || X.rows() % n != 0 || P.rows() != n || P.cols() != n)
    throw ShapeError("block_propagate: block size mismatch");
  const int batches = static_cast<int>(X.rows()) / n;
  Eigen::MatrixXd v(X.rows(), X.cols());
  for (int b = 0; b < batches; ++b)
    v.middleRows(b * n, n) = P * X.middleRows(b * n, n);
  Eigen::MatrixXd Pt = P.transpose();
  return t.op(std::move(v), [ix, n, batches, Pt](Tape& tp, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd gx(g.rows(), g.cols());
    for (int b = 0; b < batches; ++b)
      gx.middleRows(b * n, n) = Pt * g.middleRows(b * n, n);
    tp.accum(ix, gx);
  });
}

// Mean over each n-row node block: (B*n) x F -> B x F.
inline Var block_mean_rows(const Var& x, int n) {
  Tape& t = *x.tape;
  int ix = x.idx;
  const Eigen::MatrixXd& X = t.val(ix);
  if (n < 1 || X.rows() % n != 0)
    throw ShapeError("block_mean_rows: block size mismatch");
  const int batches = static_cast<int>(X.rows()) / n;
  Eigen::MatrixXd v(batches, X.cols());
  for (int b = 0; b < batches; ++b)
    v.row(b) = X.middleRows(b * n, n).colwise().mean();
  return t.op(std::move(v), [ix, n, batches](Tape& tp, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd gx(batches * n, g.cols());
    for (int b = 0; b < batches; ++b)
      gx.middleRows(b * n, n) = (g.row(b) / static_cast<double>(n)).replicate(n, 1);
    tp.accum(ix, gx);
  });
}

inline Var cube(const Var& a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.op(t.val(ia).array().cube().matrix(),
              [ia](Tape& tp, const Eigen::MatrixXd& g) {
                tp.accum(ia, (3.0 * tp.val(ia).array().square() * g.array()).matrix());
              });
}

// Elementwise max(0, x)^2 — C1-smooth one-sided penalty.
inline Var hinge_sq(const Var& a) {
  Tape& t = *a.tape;
  int ia = a.idx;
  return t.op(t.val(ia).array().max(0.0).square().matrix(),
              [ia](Tape& tp, const Eigen::MatrixXd& g) {
                tp.accum(ia, (2.0 * tp.val(ia).array().max(0.0) * g.array()).matrix());
              });
}

// Select rows [r0, r0+cnt) of every n-row node block: (B*n) x F -> (B*cnt) x F.
inline Var block_slice_rows(const Var& x, int n, int r0, int cnt) {
  Tape& t = *x.tape;
  int ix = x.idx;
  const Eigen::MatrixXd& X = t.val(ix);
  if (n < 1 || X.rows() % n != 0 || r0 < 0 || cnt < 1 || r0 + cnt > n)
    throw ShapeError("block_slice_rows: range out of bounds");
  const int batches = static_cast<int>(X.rows()) / n;
  Eigen::MatrixXd v(batches * cnt, X.cols());
  for (int b = 0; b < batches; ++b)
    v.middleRows(b * cnt, cnt) = X.middleRows(b * n + r0, cnt);
  return t.op(std::move(v),
              [ix, n, r0, cnt, batches](Tape& tp, const Eigen::MatrixXd& g) {
                Eigen::MatrixXd& gx = tp.grad_ref(ix);
                for (int b = 0; b < batches; ++b)
                  gx.middleRows(b * n + r0, cnt) += g.middleRows(b * cnt, cnt);
              });
}

// Scatter batch features onto graph nodes. S is B x D; idx/mask are n x F
// tables; output is (B*n) x F with out[b*n+k, j] = mask(k,j) ? S(b, idx(k,j)) : 0.
inline Var pack_nodes(const Var& s, const Eigen::MatrixXi& idx,
                      const Eigen::MatrixXi& mask) {
  Tape& t = *s.tape;
  int is = s.idx;
  const Eigen::MatrixXd& S = t.val(is);
  if (idx.rows() != mask.rows() || idx.cols() != mask.cols())
    throw ShapeError("pack_nodes: idx/mask shape mismatch");
  const int n = static_cast<int>(idx.rows());
  const int F = static_cast<int>(idx.cols());
  const int B = static_cast<int>(S.rows());
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < F; ++j)
      if (mask(k, j) && (idx(k, j) < 0 || idx(k, j) >= S.cols()))
        throw ShapeError("pack_nodes: index out of range");
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(B * n, F);
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < F; ++j)
        if (mask(k, j)) v(b * n + k, j) = S(b, idx(k, j));
  return t.op(std::move(v), [is, idx, mask, n, F, B](Tape& tp, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd gs = Eigen::MatrixXd::Zero(B, tp.val(is).cols());
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < n; ++k)
        for (int j = 0; j < F; ++j)
          if (mask(k, j)) gs(b, idx(k, j)) += g(b * n + k, j);
    tp.accum(is, gs);
  });
}

}  // namespace dccool::ad
