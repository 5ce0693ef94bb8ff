/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rtbpn/autodiff.hpp"

using rtbpn::Matrix;
using rtbpn::Vector;
namespace ad = rtbpn::ad;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

using GraphBuilder =
    std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

double eval_scalar(const GraphBuilder& build, const std::vector<Matrix>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (const auto& m : inputs) vars.push_back(tape.leaf(m, true));
  return build(tape, vars).val()(0, 0);
}

// Central finite differences on every entry of every input against the
// tape's analytic gradient; returns the worst mixed abs/rel error.
double check_gradients(const GraphBuilder& build, std::vector<Matrix> inputs,
                       double h = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (const auto& m : inputs) vars.push_back(tape.leaf(m, true));
  ad::Var out = build(tape, vars);
  REQUIRE(out.val().size() == 1);
  tape.backward(out);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = vars[k].grad();
    for (Eigen::Index i = 0; i < inputs[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
        const double orig = inputs[k](i, j);
        inputs[k](i, j) = orig + h;
        const double fp = eval_scalar(build, inputs);
        inputs[k](i, j) = orig - h;
        const double fm = eval_scalar(build, inputs);
        inputs[k](i, j) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic(i, j);
        const double err =
            std::abs(fd - a) / std::max({1.0, std::abs(fd), std::abs(a)});
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

// Reduce an arbitrary matrix output to a scalar with fixed weights so every
// entry contributes to the gradient.
ad::Var weighted_sum(ad::Tape& tape, ad::Var y, std::mt19937_64& rng) {
  Matrix w = random_matrix(static_cast<int>(y.rows()),
                           static_cast<int>(y.cols()), rng);
  return ad::sum_all(ad::cmul(y, tape.constant(w)));
}

}  // namespace

TEST_CASE("forward values of basic ops") {
  ad::Tape tape;
  Matrix a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  ad::Var va = tape.leaf(a), vb = tape.leaf(b);

  CHECK(ad::add(va, vb).val()(1, 1) == doctest::Approx(12.0));
  CHECK(ad::sub(va, vb).val()(0, 0) == doctest::Approx(-4.0));
  CHECK(ad::cmul(va, vb).val()(0, 1) == doctest::Approx(12.0));
  CHECK(ad::matmul(va, vb).val()(0, 0) == doctest::Approx(19.0));
  CHECK(ad::sum_all(va).val()(0, 0) == doctest::Approx(10.0));
  CHECK(ad::mean_all(va).val()(0, 0) == doctest::Approx(2.5));
  CHECK(ad::max_all(va).val()(0, 0) == doctest::Approx(4.0));
  CHECK(ad::min_all(va).val()(0, 0) == doctest::Approx(1.0));
  CHECK(ad::rowwise_max(va).val()(0, 0) == doctest::Approx(2.0));
  CHECK(ad::colwise_sum(va).val()(0, 1) == doctest::Approx(6.0));
  CHECK(ad::rowwise_sum(va).val()(1, 0) == doctest::Approx(7.0));
  CHECK(ad::sigmoid(tape.scalar(0.0)).val()(0, 0) == doctest::Approx(0.5));
  CHECK(ad::relu(tape.scalar(-2.0)).val()(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("softmax rows sum to one and match direct evaluation") {
  std::mt19937_64 rng(11);
  ad::Tape tape;
  Matrix x = random_matrix(3, 4, rng);
  Matrix p = ad::softmax_rows(tape.leaf(x)).val();
  for (int r = 0; r < 3; ++r) {
    CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    double z = 0.0;
    for (int c = 0; c < 4; ++c) z += std::exp(x(r, c));
    for (int c = 0; c < 4; ++c) {
      CHECK(p(r, c) == doctest::Approx(std::exp(x(r, c)) / z).epsilon(1e-12));
    }
  }
}

TEST_CASE("max reductions break ties toward the lowest index") {
  ad::Tape tape;
  Matrix x(2, 3);
  x << 1.0, 3.0, 3.0, 2.0, 2.0, 0.0;
  ad::Var v = tape.leaf(x, true);
  ad::Var y = ad::sum_all(ad::rowwise_max(v));
  tape.backward(y);
  Matrix g = v.grad();
  CHECK(g(0, 1) == 1.0);  // first of the tied maxima
  CHECK(g(0, 2) == 0.0);
  CHECK(g(1, 0) == 1.0);
  CHECK(g(1, 1) == 0.0);
}

TEST_CASE("gradients of elementwise and linear-algebra ops") {
  std::mt19937_64 rng(42);

  SUBCASE("add/sub/cmul/scale chain") {
    auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
      ad::Var y = ad::cmul(ad::add(v[0], v[1]), ad::sub(v[0], ad::scale(v[1], 0.5)));
      std::mt19937_64 r(7);
      return weighted_sum(t, y, r);
    };
    CHECK(check_gradients(build, {random_matrix(3, 4, rng), random_matrix(3, 4, rng)}) < 1e-6);
  }
  SUBCASE("matmul + transpose") {
    auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
      ad::Var y = ad::matmul(v[0], ad::transpose(v[1]));
      std::mt19937_64 r(7);
      return weighted_sum(t, y, r);
    };
    CHECK(check_gradients(build, {random_matrix(3, 4, rng), random_matrix(5, 4, rng)}) < 1e-6);
  }
  SUBCASE("linear with bias") {
    auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
      ad::Var y = ad::linear(v[0], v[1], v[2]);
      std::mt19937_64 r(7);
      return weighted_sum(t, y, r);
    };
    CHECK(check_gradients(build, {random_matrix(3, 4, rng), random_matrix(2, 4, rng),
                                  random_matrix(2, 1, rng)}) < 1e-6);
  }
  SUBCASE("matmul_nt") {
    auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
      ad::Var y = ad::matmul_nt(v[0], v[1]);
      std::mt19937_64 r(7);
      return weighted_sum(t, y, r);
    };
    CHECK(check_gradients(build, {random_matrix(3, 4, rng), random_matrix(2, 4, rng)}) < 1e-6);
  }
}

TEST_CASE("gradients of nonlinearities") {
  std::mt19937_64 rng(43);
  auto unary = [&](auto op) {
    return [op](ad::Tape& t, const std::vector<ad::Var>& v) {
      ad::Var y = op(v[0]);
      std::mt19937_64 r(7);
      return weighted_sum(t, y, r);
    };
  };
  CHECK(check_gradients(unary([](ad::Var x) { return ad::sigmoid(x); }),
                        {random_matrix(3, 3, rng)}) < 1e-6);
  CHECK(check_gradients(unary([](ad::Var x) { return ad::tanh(x); }),
                        {random_matrix(3, 3, rng)}) < 1e-6);
  CHECK(check_gradients(unary([](ad::Var x) { return ad::relu(x); }),
                        {random_matrix(3, 3, rng)}) < 1e-6);
  CHECK(check_gradients(unary([](ad::Var x) { return ad::softmax_rows(x); }),
                        {random_matrix(3, 5, rng)}) < 1e-6);
  // log needs positive input
  Matrix pos = random_matrix(3, 3, rng).array().abs() + 0.5;
  CHECK(check_gradients(unary([](ad::Var x) { return ad::log(x); }), {pos}) < 1e-6);
}

TEST_CASE("gradients of reductions and broadcasting helpers") {
  std::mt19937_64 rng(44);
  auto with_weights = [](auto op) {
    return [op](ad::Tape& t, const std::vector<ad::Var>& v) {
      ad::Var y = op(t, v);
      std::mt19937_64 r(7);
      return weighted_sum(t, y, r);
    };
  };

  CHECK(check_gradients(with_weights([](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::rowwise_max(v[0]);
        }), {random_matrix(4, 5, rng)}) < 1e-6);
  CHECK(check_gradients(with_weights([](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::colwise_sum(v[0]);
        }), {random_matrix(4, 5, rng)}) < 1e-6);
  CHECK(check_gradients(with_weights([](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::rowwise_sum(v[0]);
        }), {random_matrix(4, 5, rng)}) < 1e-6);
  CHECK(check_gradients(with_weights([](ad::Tape&, const std::vector<ad::Var>& v) {
          // (x - min) / (max - min + eps), the normalization pattern
          ad::Var mn = ad::min_all(v[0]);
          ad::Var mx = ad::max_all(v[0]);
          return ad::div_scalar(ad::sub_scalar(v[0], mn), ad::sub(mx, mn), 1e-8);
        }), {random_matrix(5, 1, rng)}) < 1e-6);
  CHECK(check_gradients(with_weights([](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::rowscale(v[0], v[1]);
        }), {random_matrix(4, 3, rng), random_matrix(4, 1, rng)}) < 1e-6);
  CHECK(check_gradients(with_weights([](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::add_rowvec(v[0], v[1]);
        }), {random_matrix(4, 3, rng), random_matrix(1, 3, rng)}) < 1e-6);
  CHECK(check_gradients(with_weights([](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::hconcat(v[0], v[1]);
        }), {random_matrix(3, 2, rng), random_matrix(3, 4, rng)}) < 1e-6);
  CHECK(check_gradients(with_weights([](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::gather_rows(v[0], {2, 0, 2, 1});
        }), {random_matrix(4, 3, rng)}) < 1e-6);
}

TEST_CASE("additive_score matches a pairwise loop and its gradient checks out") {
  std::mt19937_64 rng(45);
  const int n = 3, m = 2, d1 = 4, d2 = 5, da = 6;
  Matrix a = random_matrix(n, d1, rng), b = random_matrix(m, d2, rng);
  Matrix w1 = random_matrix(da, d1, rng), w2 = random_matrix(da, d2, rng);
  Matrix bias = random_matrix(da, 1, rng), wout = random_matrix(da, 1, rng);

  ad::Tape tape;
  Matrix s = ad::additive_score(tape.leaf(a), tape.leaf(b), tape.leaf(w1),
                                tape.leaf(w2), tape.leaf(bias), tape.leaf(wout))
                 .val();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      Vector h = (w1 * a.row(i).transpose() + w2 * b.row(j).transpose() + bias)
                     .unaryExpr([](double x) { return std::tanh(x); });
      CHECK(s(i, j) == doctest::Approx(wout.col(0).dot(h)).epsilon(1e-12));
    }
  }

  auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    ad::Var y = ad::additive_score(v[0], v[1], v[2], v[3], v[4], v[5]);
    std::mt19937_64 r(7);
    return weighted_sum(t, y, r);
  };
  CHECK(check_gradients(build, {a, b, w1, w2, bias, wout}) < 1e-6);
}

TEST_CASE("moment_sum_map equals naive summation and differentiates") {
  std::mt19937_64 rng(46);
  const int n_v = 5, d = 3;
  Matrix m = random_matrix(n_v, d, rng);
  std::vector<std::pair<int, int>> valid;
  for (int a = 0; a < n_v; ++a)
    for (int b = a; b < n_v; ++b)
      if ((b - a) % 2 == 0) valid.emplace_back(a, b);

  ad::Tape tape;
  Matrix f = ad::moment_sum_map(tape.leaf(m), valid, n_v).val();
  Matrix expected = Matrix::Zero(n_v * n_v, d);
  for (auto [a, b] : valid) {
    for (int i = a; i <= b; ++i) expected.row(a * n_v + b) += m.row(i);
  }
  CHECK((f - expected).cwiseAbs().maxCoeff() < 1e-12);

  auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    ad::Var y = ad::moment_sum_map(v[0], valid, n_v);
    std::mt19937_64 r(7);
    return weighted_sum(t, y, r);
  };
  CHECK(check_gradients(build, {m}) < 1e-6);
}

TEST_CASE("conv2d_grid matches a sliding-window loop and differentiates") {
  std::mt19937_64 rng(47);
  const int n_v = 4, c_in = 3, c_out = 2, k = 3;
  Matrix x = random_matrix(n_v * n_v, c_in, rng);
  Matrix w = random_matrix(c_out, k * k * c_in, rng);
  Matrix b = random_matrix(c_out, 1, rng);

  ad::Tape tape;
  Matrix y = ad::conv2d_grid(tape.leaf(x), tape.leaf(w), tape.leaf(b), n_v, k).val();

  const int pad = (k - 1) / 2;
  for (int a = 0; a < n_v; ++a) {
    for (int bb = 0; bb < n_v; ++bb) {
      for (int oc = 0; oc < c_out; ++oc) {
        double acc = b(oc, 0);
        for (int ki = 0; ki < k; ++ki) {
          for (int kj = 0; kj < k; ++kj) {
            const int sa = a + ki - pad, sb = bb + kj - pad;
            if (sa < 0 || sa >= n_v || sb < 0 || sb >= n_v) continue;
            for (int c = 0; c < c_in; ++c) {
              acc += w(oc, (ki * k + kj) * c_in + c) * x(sa * n_v + sb, c);
            }
          }
        }
        CHECK(y(a * n_v + bb, oc) == doctest::Approx(acc).epsilon(1e-10));
      }
    }
  }

  auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    ad::Var out = ad::conv2d_grid(v[0], v[1], v[2], n_v, k);
    std::mt19937_64 r(7);
    return weighted_sum(t, out, r);
  };
  CHECK(check_gradients(build, {x, w, b}) < 1e-6);
}

TEST_CASE("conv2d_grid on a 1x1 grid reduces to the center tap") {
  std::mt19937_64 rng(48);
  const int c_in = 3, c_out = 2, k = 3;
  Matrix x = random_matrix(1, c_in, rng);
  Matrix w = random_matrix(c_out, k * k * c_in, rng);
  Matrix b = random_matrix(c_out, 1, rng);
  ad::Tape tape;
  Matrix y = ad::conv2d_grid(tape.leaf(x), tape.leaf(w), tape.leaf(b), 1, k).val();
  const int center = (k * k) / 2;
  for (int oc = 0; oc < c_out; ++oc) {
    double acc = b(oc, 0);
    for (int c = 0; c < c_in; ++c) acc += w(oc, center * c_in + c) * x(0, c);
    CHECK(y(0, oc) == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("param binding is memoized so shared parameters accumulate gradient") {
  Matrix theta(1, 1);
  theta << 3.0;
  ad::Tape tape;
  ad::Var a = tape.param(theta);
  ad::Var b = tape.param(theta);  // same leaf
  CHECK(a.idx == b.idx);
  ad::Var y = ad::add(ad::cmul(a, a), b);  // theta^2 + theta
  tape.backward(y);
  CHECK(tape.grad_of(theta)(0, 0) == doctest::Approx(7.0));  // 2*3 + 1
}

TEST_CASE("frozen parameters receive no gradient") {
  Matrix theta(1, 1), phi(1, 1);
  theta << 2.0;
  phi << 5.0;
  ad::Tape tape;
  ad::Var a = tape.param(theta);
  ad::Var c = tape.frozen(phi);
  ad::Var y = ad::sum_all(ad::cmul(a, c));
  tape.backward(y);
  CHECK(tape.grad_of(theta)(0, 0) == doctest::Approx(5.0));
  CHECK(tape.grad_of(phi)(0, 0) == 0.0);
}

TEST_CASE("vstack forward and gradient") {
  std::mt19937_64 rng(77);
  Matrix a = random_matrix(1, 3, rng);
  Matrix b = random_matrix(2, 3, rng);
  Matrix c = random_matrix(1, 3, rng);

  {
    ad::Tape tape;
    Matrix out = ad::vstack({tape.leaf(a), tape.leaf(b), tape.leaf(c)}).val();
    REQUIRE(out.rows() == 4);
    CHECK(out.row(0) == a.row(0));
    CHECK(out.row(1) == b.row(0));
    CHECK(out.row(2) == b.row(1));
    CHECK(out.row(3) == c.row(0));
  }

  auto build = [](ad::Tape& t, const std::vector<ad::Var>& v) {
    ad::Var y = ad::vstack({v[0], v[1], v[2]});
    std::mt19937_64 r(7);
    return weighted_sum(t, y, r);
  };
  CHECK(check_gradients(build, {a, b, c}) < 1e-6);
}

TEST_CASE("vstack rejects mismatched columns") {
  ad::Tape tape;
  ad::Var a = tape.leaf(Matrix::Ones(1, 2));
  ad::Var b = tape.leaf(Matrix::Ones(1, 3));
  CHECK_THROWS_AS(ad::vstack({a, b}), std::invalid_argument);
}
