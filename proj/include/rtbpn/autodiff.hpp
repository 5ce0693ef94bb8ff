/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_AUTODIFF_HPP
#define RTBPN_AUTODIFF_HPP

#include <cstddef>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rtbpn/types.hpp"

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape owns a topologically ordered list of nodes; Var is a cheap handle
// into it. Graphs are built per forward pass and discarded afterwards.
// Parameters live outside the tape as plain matrices and are bound with
// Tape::param(), which memoizes on the address so that a parameter used in
// several places (the shared branch, repeated filter passes) maps to a
// single leaf and its gradient accumulates across all uses.
namespace rtbpn::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t idx = 0;

  bool valid() const { return tape != nullptr; }
  const Matrix& val() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding an ad-hoc value. requires_grad controls whether backward
  // flows into it (leaf gradients are readable via Var::grad()).
  Var leaf(Matrix value, bool requires_grad = false);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

  // Differentiable leaf bound to an external parameter matrix, memoized on
  // the matrix address. The value is copied at bind time.
  Var param(Matrix& external);
  // Like param() but without gradient tracking (frozen parameters).
  Var frozen(const Matrix& external);

  // Runs reverse accumulation from a 1x1 root. May be called once per graph.
  void backward(Var root, double seed = 1.0);

  // Gradient of the last backward() w.r.t. a bound parameter; zero matrix if
  // the parameter was never used or never reached.
  Matrix grad_of(const Matrix& external) const;
  bool is_bound(const Matrix& external) const;

  std::size_t size() const { return nodes_.size(); }
  void reset();

  // --- internals used by the op implementations ------------------------
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;
    bool requires_grad = false;
  };

  Var push(Matrix value, bool requires_grad, std::function<void()> back = {});
  const Matrix& v(std::size_t i) const { return nodes_[i].value; }
  Matrix& g(std::size_t i) { return nodes_[i].grad; }
  bool rg(std::size_t i) const { return nodes_[i].requires_grad; }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, std::size_t> bound_;
  bool ran_backward_ = false;
};

// Elementwise and scalar arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var cmul(Var a, Var b);            // elementwise product
Var scale(Var a, double s);
Var shift(Var a, double s);        // a + s elementwise

// Linear algebra.
Var matmul(Var a, Var b);
Var matmul_nt(Var x, Var w);       // x * w^T
Var linear(Var x, Var w, Var b);   // x * w^T + ones * b^T, w: (out x in), b: (out x 1)
Var transpose(Var a);

// Nonlinearities.
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var log(Var a);
Var softmax_rows(Var a);

// Reductions. Ties in max/min route the subgradient to the lowest index
// (row-major scan order; lowest column for rowwise_max).
Var sum_all(Var a);
Var mean_all(Var a);
Var colwise_sum(Var a);            // 1 x c
Var rowwise_sum(Var a);            // r x 1
Var rowwise_max(Var a);            // r x 1
Var max_all(Var a);                // 1 x 1
Var min_all(Var a);                // 1 x 1

// Broadcasting helpers. s must be 1x1 where named scalar.
Var sub_scalar(Var x, Var s);               // x - s
Var div_scalar(Var x, Var s, double eps);   // x / (s + eps)
Var rowscale(Var x, Var s);                 // diag(s) * x, s: r x 1
Var rowscale_const(Var x, const Vector& s);
Var add_rowvec(Var x, Var r);               // broadcast-add r (1 x c)

// Structure.
Var hconcat(Var a, Var b);
Var vstack(const std::vector<Var>& parts);
Var gather_rows(Var x, std::vector<int> rows);

// S(i, j) = wout . tanh(w1 a_i + w2 b_j + bias), for all row pairs.
Var additive_score(Var a, Var b, Var w1, Var w2, Var bias, Var wout);

// Inclusive range sums of rows of m over the listed (start, end) cells of an
// n_v x n_v grid, flattened row-major; unlisted cells are zero.
Var moment_sum_map(Var m, const std::vector<std::pair<int, int>>& valid, int n_v);

// Same-shape 2D convolution over an n_v x n_v grid stored as (n_v^2 x c_in)
// rows; w: (c_out x k*k*c_in), b: (c_out x 1), zero padding (k-1)/2.
Var conv2d_grid(Var x, Var w, Var b, int n_v, int kernel);

}  // namespace rtbpn::ad

#endif  // RTBPN_AUTODIFF_HPP
