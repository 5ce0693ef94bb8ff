/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace rtbpn::ad {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape == b.tape,
          "ad: operands must live on the same tape");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::val() const { return tape->v(idx); }
const Matrix& Var::grad() const { return const_cast<Tape*>(tape)->g(idx); }

Var Tape::push(Matrix value, bool requires_grad, std::function<void()> back) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  return push(std::move(value), requires_grad);
}

Var Tape::param(Matrix& external) {
  auto it = bound_.find(&external);
  if (it != bound_.end()) return Var{this, it->second};
  Var v = push(external, true);
  bound_.emplace(&external, v.idx);
  return v;
}

Var Tape::frozen(const Matrix& external) {
  auto it = bound_.find(&external);
  if (it != bound_.end()) return Var{this, it->second};
  Var v = push(external, false);
  bound_.emplace(&external, v.idx);
  return v;
}

void Tape::backward(Var root, double seed) {
  require(root.valid() && root.tape == this, "ad: backward root not on this tape");
  require(v(root.idx).size() == 1, "ad: backward root must be 1x1");
  if (ran_backward_) throw std::logic_error("ad: backward already ran on this tape");
  ran_backward_ = true;

  for (std::size_t i = 0; i <= root.idx; ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) n.grad.setZero(n.value.rows(), n.value.cols());
  }
  if (!nodes_[root.idx].requires_grad) return;  // constant root, nothing flows
  nodes_[root.idx].grad(0, 0) = seed;
  for (std::size_t i = root.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.back) n.back();
  }
}

Matrix Tape::grad_of(const Matrix& external) const {
  auto it = bound_.find(&external);
  if (it == bound_.end() || nodes_[it->second].grad.size() == 0) {
    return Matrix::Zero(external.rows(), external.cols());
  }
  return nodes_[it->second].grad;
}

bool Tape::is_bound(const Matrix& external) const {
  return bound_.count(&external) > 0;
}

void Tape::reset() {
  nodes_.clear();
  bound_.clear();
  ran_backward_ = false;
}

// ---------------------------------------------------------------------------
// Elementwise / scalar arithmetic
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx) || t->rg(b.idx);
  const std::size_t ai = a.idx, bi = b.idx, oi = t->size();
  return t->push(a.val() + b.val(), rg, [t, ai, bi, oi] {
    if (t->rg(ai)) t->g(ai) += t->g(oi);
    if (t->rg(bi)) t->g(bi) += t->g(oi);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx) || t->rg(b.idx);
  const std::size_t ai = a.idx, bi = b.idx, oi = t->size();
  return t->push(a.val() - b.val(), rg, [t, ai, bi, oi] {
    if (t->rg(ai)) t->g(ai) += t->g(oi);
    if (t->rg(bi)) t->g(bi) -= t->g(oi);
  });
}

Var neg(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  return t->push(-a.val(), rg, [t, ai, oi] {
    if (t->rg(ai)) t->g(ai) -= t->g(oi);
  });
}

Var cmul(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "cmul: shape mismatch");
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx) || t->rg(b.idx);
  const std::size_t ai = a.idx, bi = b.idx, oi = t->size();
  return t->push(a.val().cwiseProduct(b.val()), rg, [t, ai, bi, oi] {
    if (t->rg(ai)) t->g(ai) += t->g(oi).cwiseProduct(t->v(bi));
    if (t->rg(bi)) t->g(bi) += t->g(oi).cwiseProduct(t->v(ai));
  });
}

Var scale(Var a, double s) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  return t->push(a.val() * s, rg, [t, ai, oi, s] {
    if (t->rg(ai)) t->g(ai) += t->g(oi) * s;
  });
}

Var shift(Var a, double s) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  return t->push(a.val().array() + s, rg, [t, ai, oi] {
    if (t->rg(ai)) t->g(ai) += t->g(oi);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx) || t->rg(b.idx);
  const std::size_t ai = a.idx, bi = b.idx, oi = t->size();
  return t->push(a.val() * b.val(), rg, [t, ai, bi, oi] {
    if (t->rg(ai)) t->g(ai).noalias() += t->g(oi) * t->v(bi).transpose();
    if (t->rg(bi)) t->g(bi).noalias() += t->v(ai).transpose() * t->g(oi);
  });
}

Var matmul_nt(Var x, Var w) {
  require_same_tape(x, w);
  require(x.cols() == w.cols(), "matmul_nt: inner dimension mismatch");
  Tape* t = x.tape;
  const bool rg = t->rg(x.idx) || t->rg(w.idx);
  const std::size_t xi = x.idx, wi = w.idx, oi = t->size();
  return t->push(x.val() * w.val().transpose(), rg, [t, xi, wi, oi] {
    if (t->rg(xi)) t->g(xi).noalias() += t->g(oi) * t->v(wi);
    if (t->rg(wi)) t->g(wi).noalias() += t->g(oi).transpose() * t->v(xi);
  });
}

Var linear(Var x, Var w, Var b) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  require(x.cols() == w.cols(), "linear: input dimension mismatch");
  require(b.rows() == w.rows() && b.cols() == 1, "linear: bias shape mismatch");
  Tape* t = x.tape;
  const bool rg = t->rg(x.idx) || t->rg(w.idx) || t->rg(b.idx);
  const std::size_t xi = x.idx, wi = w.idx, bi = b.idx, oi = t->size();
  Matrix out = x.val() * w.val().transpose();
  out.rowwise() += b.val().col(0).transpose();
  return t->push(std::move(out), rg, [t, xi, wi, bi, oi] {
    const Matrix& g = t->g(oi);
    if (t->rg(xi)) t->g(xi).noalias() += g * t->v(wi);
    if (t->rg(wi)) t->g(wi).noalias() += g.transpose() * t->v(xi);
    if (t->rg(bi)) t->g(bi) += g.colwise().sum().transpose();
  });
}

Var transpose(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  return t->push(a.val().transpose(), rg, [t, ai, oi] {
    if (t->rg(ai)) t->g(ai) += t->g(oi).transpose();
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

Var sigmoid(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  Matrix out = a.val().unaryExpr([](double x) { return stable_sigmoid(x); });
  return t->push(std::move(out), rg, [t, ai, oi] {
    if (!t->rg(ai)) return;
    const Matrix& y = t->v(oi);
    t->g(ai) += t->g(oi).cwiseProduct(
        y.cwiseProduct(Matrix::Ones(y.rows(), y.cols()) - y));
  });
}

Var tanh(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  Matrix out = a.val().unaryExpr([](double x) { return std::tanh(x); });
  return t->push(std::move(out), rg, [t, ai, oi] {
    if (!t->rg(ai)) return;
    const Matrix& y = t->v(oi);
    t->g(ai) += t->g(oi).cwiseProduct(
        Matrix::Ones(y.rows(), y.cols()) - y.cwiseProduct(y));
  });
}

Var relu(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  Matrix out = a.val().cwiseMax(0.0);
  return t->push(std::move(out), rg, [t, ai, oi] {
    if (!t->rg(ai)) return;
    // Subgradient at exactly zero takes the inactive side.
    const Matrix mask =
        (t->v(ai).array() > 0.0).cast<double>().matrix();
    t->g(ai) += t->g(oi).cwiseProduct(mask);
  });
}

Var log(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  Matrix out = a.val().array().log().matrix();
  return t->push(std::move(out), rg, [t, ai, oi] {
    if (t->rg(ai)) t->g(ai) += t->g(oi).cwiseQuotient(t->v(ai));
  });
}

Var softmax_rows(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  Matrix out = a.val();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return t->push(std::move(out), rg, [t, ai, oi] {
    if (!t->rg(ai)) return;
    const Matrix& p = t->v(oi);
    const Matrix& g = t->g(oi);
    Matrix& da = t->g(ai);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double dot = g.row(r).dot(p.row(r));
      da.row(r) += (p.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var sum_all(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  return t->push(Matrix::Constant(1, 1, a.val().sum()), rg, [t, ai, oi] {
    if (t->rg(ai)) t->g(ai).array() += t->g(oi)(0, 0);
  });
}

Var mean_all(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  const double n = static_cast<double>(a.val().size());
  return t->push(Matrix::Constant(1, 1, a.val().mean()), rg, [t, ai, oi, n] {
    if (t->rg(ai)) t->g(ai).array() += t->g(oi)(0, 0) / n;
  });
}

Var colwise_sum(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  return t->push(a.val().colwise().sum(), rg, [t, ai, oi] {
    if (t->rg(ai)) t->g(ai).rowwise() += t->g(oi).row(0);
  });
}

Var rowwise_sum(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  return t->push(a.val().rowwise().sum(), rg, [t, ai, oi] {
    if (t->rg(ai)) t->g(ai).colwise() += t->g(oi).col(0);
  });
}

Var rowwise_max(Var a) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  const Matrix& x = a.val();
  Matrix out(x.rows(), 1);
  std::vector<Eigen::Index> arg(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < x.cols(); ++c) {
      if (x(r, c) > x(r, best)) best = c;  // strict: ties keep lowest column
    }
    arg[static_cast<std::size_t>(r)] = best;
    out(r, 0) = x(r, best);
  }
  return t->push(std::move(out), rg, [t, ai, oi, arg] {
    if (!t->rg(ai)) return;
    Matrix& da = t->g(ai);
    const Matrix& g = t->g(oi);
    for (Eigen::Index r = 0; r < da.rows(); ++r) {
      da(r, arg[static_cast<std::size_t>(r)]) += g(r, 0);
    }
  });
}

namespace {

// Row-major scan; strict comparison keeps the lowest index on ties.
std::pair<Eigen::Index, Eigen::Index> scan_extreme(const Matrix& x, bool want_max) {
  Eigen::Index br = 0, bc = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const bool better = want_max ? x(r, c) > x(br, bc) : x(r, c) < x(br, bc);
      if (better) {
        br = r;
        bc = c;
      }
    }
  }
  return {br, bc};
}

Var extreme_all(Var a, bool want_max) {
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx);
  const std::size_t ai = a.idx, oi = t->size();
  auto [br, bc] = scan_extreme(a.val(), want_max);
  const Eigen::Index r = br, c = bc;
  return t->push(Matrix::Constant(1, 1, a.val()(r, c)), rg, [t, ai, oi, r, c] {
    if (t->rg(ai)) t->g(ai)(r, c) += t->g(oi)(0, 0);
  });
}

}  // namespace

Var max_all(Var a) { return extreme_all(a, true); }
Var min_all(Var a) { return extreme_all(a, false); }

// ---------------------------------------------------------------------------
// Broadcasting helpers
// ---------------------------------------------------------------------------

Var sub_scalar(Var x, Var s) {
  require_same_tape(x, s);
  require(s.val().size() == 1, "sub_scalar: s must be 1x1");
  Tape* t = x.tape;
  const bool rg = t->rg(x.idx) || t->rg(s.idx);
  const std::size_t xi = x.idx, si = s.idx, oi = t->size();
  return t->push(x.val().array() - s.val()(0, 0), rg, [t, xi, si, oi] {
    if (t->rg(xi)) t->g(xi) += t->g(oi);
    if (t->rg(si)) t->g(si)(0, 0) -= t->g(oi).sum();
  });
}

Var div_scalar(Var x, Var s, double eps) {
  require_same_tape(x, s);
  require(s.val().size() == 1, "div_scalar: s must be 1x1");
  Tape* t = x.tape;
  const bool rg = t->rg(x.idx) || t->rg(s.idx);
  const std::size_t xi = x.idx, si = s.idx, oi = t->size();
  const double denom = s.val()(0, 0) + eps;
  return t->push(x.val() / denom, rg, [t, xi, si, oi, denom] {
    if (t->rg(xi)) t->g(xi) += t->g(oi) / denom;
    if (t->rg(si)) {
      t->g(si)(0, 0) -= t->g(oi).cwiseProduct(t->v(oi)).sum() / denom;
    }
  });
}

Var rowscale(Var x, Var s) {
  require_same_tape(x, s);
  require(s.cols() == 1 && s.rows() == x.rows(), "rowscale: s must be r x 1");
  Tape* t = x.tape;
  const bool rg = t->rg(x.idx) || t->rg(s.idx);
  const std::size_t xi = x.idx, si = s.idx, oi = t->size();
  return t->push(s.val().col(0).asDiagonal() * x.val(), rg, [t, xi, si, oi] {
    const Matrix& g = t->g(oi);
    if (t->rg(xi)) t->g(xi) += t->v(si).col(0).asDiagonal() * g;
    if (t->rg(si)) {
      t->g(si).col(0) += g.cwiseProduct(t->v(xi)).rowwise().sum();
    }
  });
}

Var rowscale_const(Var x, const Vector& s) {
  require(s.size() == x.rows(), "rowscale_const: length mismatch");
  Tape* t = x.tape;
  const bool rg = t->rg(x.idx);
  const std::size_t xi = x.idx, oi = t->size();
  Vector sv = s;
  return t->push(sv.asDiagonal() * x.val(), rg, [t, xi, oi, sv] {
    if (t->rg(xi)) t->g(xi) += sv.asDiagonal() * t->g(oi);
  });
}

Var add_rowvec(Var x, Var r) {
  require_same_tape(x, r);
  require(r.rows() == 1 && r.cols() == x.cols(), "add_rowvec: r must be 1 x c");
  Tape* t = x.tape;
  const bool rg = t->rg(x.idx) || t->rg(r.idx);
  const std::size_t xi = x.idx, ri = r.idx, oi = t->size();
  Matrix out = x.val();
  out.rowwise() += r.val().row(0);
  return t->push(std::move(out), rg, [t, xi, ri, oi] {
    if (t->rg(xi)) t->g(xi) += t->g(oi);
    if (t->rg(ri)) t->g(ri) += t->g(oi).colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Var hconcat(Var a, Var b) {
  require_same_tape(a, b);
  require(a.rows() == b.rows(), "hconcat: row count mismatch");
  Tape* t = a.tape;
  const bool rg = t->rg(a.idx) || t->rg(b.idx);
  const std::size_t ai = a.idx, bi = b.idx, oi = t->size();
  const Eigen::Index ac = a.cols();
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(ac) = a.val();
  out.rightCols(b.cols()) = b.val();
  return t->push(std::move(out), rg, [t, ai, bi, oi, ac] {
    const Matrix& g = t->g(oi);
    if (t->rg(ai)) t->g(ai) += g.leftCols(ac);
    if (t->rg(bi)) t->g(bi) += g.rightCols(g.cols() - ac);
  });
}

Var vstack(const std::vector<Var>& parts) {
  require(!parts.empty(), "vstack: needs at least one part");
  Tape* t = parts.front().tape;
  Eigen::Index rows_total = 0;
  const Eigen::Index cols = parts.front().cols();
  bool rg = false;
  std::vector<std::size_t> idxs;
  std::vector<Eigen::Index> offs, lens;
  idxs.reserve(parts.size());
  offs.reserve(parts.size());
  lens.reserve(parts.size());
  for (const Var& p : parts) {
    require(p.tape == t, "vstack: parts live on different tapes");
    require(p.cols() == cols, "vstack: column count mismatch");
    idxs.push_back(p.idx);
    offs.push_back(rows_total);
    lens.push_back(p.rows());
    rows_total += p.rows();
    rg = rg || t->rg(p.idx);
  }
  Matrix out(rows_total, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.middleRows(offs[k], lens[k]) = parts[k].val();
  }
  const std::size_t oi = t->size();
  return t->push(std::move(out), rg,
                 [t, idxs = std::move(idxs), offs = std::move(offs),
                  lens = std::move(lens), oi] {
                   const Matrix& g = t->g(oi);
                   for (std::size_t k = 0; k < idxs.size(); ++k) {
                     if (t->rg(idxs[k])) {
                       t->g(idxs[k]) += g.middleRows(offs[k], lens[k]);
                     }
                   }
                 });
}

Var gather_rows(Var x, std::vector<int> rows) {
  Tape* t = x.tape;
  for (int r : rows) {
    require(r >= 0 && r < x.rows(), "gather_rows: index out of range");
  }
  const bool rg = t->rg(x.idx);
  const std::size_t xi = x.idx, oi = t->size();
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = x.val().row(rows[k]);
  }
  return t->push(std::move(out), rg, [t, xi, oi, rows = std::move(rows)] {
    if (!t->rg(xi)) return;
    Matrix& dx = t->g(xi);
    const Matrix& g = t->g(oi);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      dx.row(rows[k]) += g.row(static_cast<Eigen::Index>(k));
    }
  });
}

// ---------------------------------------------------------------------------
// Fused ops
// ---------------------------------------------------------------------------

Var additive_score(Var a, Var b, Var w1, Var w2, Var bias, Var wout) {
  require_same_tape(a, b);
  require_same_tape(a, w1);
  require_same_tape(a, w2);
  require_same_tape(a, bias);
  require_same_tape(a, wout);
  const Eigen::Index da = w1.rows();
  require(w1.cols() == a.cols(), "additive_score: w1/a dimension mismatch");
  require(w2.cols() == b.cols(), "additive_score: w2/b dimension mismatch");
  require(w2.rows() == da && bias.rows() == da && wout.rows() == da,
          "additive_score: hidden dimension mismatch");
  require(bias.cols() == 1 && wout.cols() == 1,
          "additive_score: bias/wout must be column vectors");

  Tape* t = a.tape;
  const std::size_t ai = a.idx, bi = b.idx, w1i = w1.idx, w2i = w2.idx,
                    bii = bias.idx, woi = wout.idx, oi = t->size();
  const bool rg = t->rg(ai) || t->rg(bi) || t->rg(w1i) || t->rg(w2i) ||
                  t->rg(bii) || t->rg(woi);

  const Eigen::Index n = a.rows(), m = b.rows();
  Matrix p = a.val() * w1.val().transpose();           // n x da
  Matrix r = b.val() * w2.val().transpose();           // m x da
  r.rowwise() += bias.val().col(0).transpose();

  Matrix th(n * m, da);  // tanh activations, row (i*m + j)
  Matrix out(n, m);
  const Vector& wv = wout.val().col(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      Eigen::RowVectorXd h = (p.row(i) + r.row(j)).unaryExpr(
          [](double x) { return std::tanh(x); });
      th.row(i * m + j) = h;
      out(i, j) = h * wv;
    }
  }
  return t->push(std::move(out), rg,
                 [t, ai, bi, w1i, w2i, bii, woi, oi, th = std::move(th), n, m, da] {
    const Matrix& g = t->g(oi);
    const Vector wv = t->v(woi).col(0);
    Matrix dp = Matrix::Zero(n, da);
    Matrix dr = Matrix::Zero(m, da);
    Vector dwout = Vector::Zero(da);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        const auto h = th.row(i * m + j);
        Eigen::RowVectorXd dt =
            gij * (1.0 - h.array().square()) * wv.transpose().array();
        dp.row(i) += dt;
        dr.row(j) += dt;
        dwout += gij * h.transpose();
      }
    }
    if (t->rg(ai)) t->g(ai).noalias() += dp * t->v(w1i);
    if (t->rg(w1i)) t->g(w1i).noalias() += dp.transpose() * t->v(ai);
    if (t->rg(bi)) t->g(bi).noalias() += dr * t->v(w2i);
    if (t->rg(w2i)) t->g(w2i).noalias() += dr.transpose() * t->v(bi);
    if (t->rg(bii)) t->g(bii).col(0) += dr.colwise().sum().transpose();
    if (t->rg(woi)) t->g(woi).col(0) += dwout;
  });
}

Var moment_sum_map(Var m, const std::vector<std::pair<int, int>>& valid, int n_v) {
  Tape* t = m.tape;
  require(m.rows() == n_v, "moment_sum_map: row count must equal n_v");
  for (auto [a, b] : valid) {
    require(0 <= a && a <= b && b < n_v, "moment_sum_map: invalid cell");
  }
  const bool rg = t->rg(m.idx);
  const std::size_t mi = m.idx, oi = t->size();
  const Eigen::Index d = m.cols();

  Matrix prefix = Matrix::Zero(n_v + 1, d);
  for (int i = 0; i < n_v; ++i) {
    prefix.row(i + 1) = prefix.row(i) + m.val().row(i);
  }
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_v) * n_v, d);
  for (auto [a, b] : valid) {
    out.row(static_cast<Eigen::Index>(a) * n_v + b) = prefix.row(b + 1) - prefix.row(a);
  }
  return t->push(std::move(out), rg, [t, mi, oi, cells = valid, n_v, d] {
    if (!t->rg(mi)) return;
    const Matrix& g = t->g(oi);
    Matrix diff = Matrix::Zero(n_v + 1, d);
    for (auto [a, b] : cells) {
      const auto row = g.row(static_cast<Eigen::Index>(a) * n_v + b);
      diff.row(a) += row;
      diff.row(b + 1) -= row;
    }
    Matrix& dm = t->g(mi);
    Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(d);
    for (int i = 0; i < n_v; ++i) {
      running += diff.row(i);
      dm.row(i) += running;
    }
  });
}

namespace {

// im2col for an n_v x n_v grid flattened row-major into (n_v^2 x c) rows.
Matrix grid_im2col(const Matrix& x, int n_v, int kernel) {
  const Eigen::Index c = x.cols();
  const int pad = (kernel - 1) / 2;
  Matrix patches = Matrix::Zero(static_cast<Eigen::Index>(n_v) * n_v,
                                static_cast<Eigen::Index>(kernel) * kernel * c);
  for (int a = 0; a < n_v; ++a) {
    for (int b = 0; b < n_v; ++b) {
      const Eigen::Index row = static_cast<Eigen::Index>(a) * n_v + b;
      for (int ki = 0; ki < kernel; ++ki) {
        const int sa = a + ki - pad;
        if (sa < 0 || sa >= n_v) continue;
        for (int kj = 0; kj < kernel; ++kj) {
          const int sb = b + kj - pad;
          if (sb < 0 || sb >= n_v) continue;
          patches.block(row, (static_cast<Eigen::Index>(ki) * kernel + kj) * c, 1, c) =
              x.row(static_cast<Eigen::Index>(sa) * n_v + sb);
        }
      }
    }
  }
  return patches;
}

}  // namespace

Var conv2d_grid(Var x, Var w, Var b, int n_v, int kernel) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  require(kernel >= 1 && kernel % 2 == 1, "conv2d_grid: kernel must be odd");
  require(x.rows() == static_cast<Eigen::Index>(n_v) * n_v,
          "conv2d_grid: x must have n_v^2 rows");
  const Eigen::Index c_in = x.cols();
  require(w.cols() == static_cast<Eigen::Index>(kernel) * kernel * c_in,
          "conv2d_grid: weight width mismatch");
  require(b.rows() == w.rows() && b.cols() == 1, "conv2d_grid: bias shape mismatch");

  Tape* t = x.tape;
  const bool rg = t->rg(x.idx) || t->rg(w.idx) || t->rg(b.idx);
  const std::size_t xi = x.idx, wi = w.idx, bi = b.idx, oi = t->size();

  Matrix patches = grid_im2col(x.val(), n_v, kernel);
  Matrix out = patches * w.val().transpose();
  out.rowwise() += b.val().col(0).transpose();
  return t->push(std::move(out), rg,
                 [t, xi, wi, bi, oi, patches = std::move(patches), n_v, kernel, c_in] {
    const Matrix& g = t->g(oi);
    if (t->rg(wi)) t->g(wi).noalias() += g.transpose() * patches;
    if (t->rg(bi)) t->g(bi).col(0) += g.colwise().sum().transpose();
    if (!t->rg(xi)) return;
    const Matrix dpatches = g * t->v(wi);  // n_v^2 x (k*k*c_in)
    Matrix& dx = t->g(xi);
    const int pad = (kernel - 1) / 2;
    for (int a = 0; a < n_v; ++a) {
      for (int b2 = 0; b2 < n_v; ++b2) {
        const Eigen::Index row = static_cast<Eigen::Index>(a) * n_v + b2;
        for (int ki = 0; ki < kernel; ++ki) {
          const int sa = a + ki - pad;
          if (sa < 0 || sa >= n_v) continue;
          for (int kj = 0; kj < kernel; ++kj) {
            const int sb = b2 + kj - pad;
            if (sb < 0 || sb >= n_v) continue;
            dx.row(static_cast<Eigen::Index>(sa) * n_v + sb) += dpatches.block(
                row, (static_cast<Eigen::Index>(ki) * kernel + kj) * c_in, 1, c_in);
          }
        }
      }
    }
  });
}

}  // namespace rtbpn::ad
