/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/language_filter.hpp"

#include <stdexcept>

#include "rtbpn/initializers.hpp"

namespace rtbpn {

SceneBank SceneBank::init(int n_c, int d_q, std::mt19937_64& rng) {
  if (n_c < 1 || d_q < 1) {
    throw std::invalid_argument("SceneBank::init: dims must be positive");
  }
  SceneBank b;
  b.centers = fanin_matrix(n_c, d_q, d_q, rng);
  b.w_assign = fanin_matrix(n_c, d_q, d_q, rng);
  b.b_assign = fanin_matrix(n_c, 1, d_q, rng);
  return b;
}

FilterScorerParams FilterScorerParams::init(int d_a, int d_v, int d_q,
                                            std::mt19937_64& rng) {
  if (d_a < 1 || d_v < 1 || d_q < 1) {
    throw std::invalid_argument("FilterScorerParams::init: dims must be positive");
  }
  FilterScorerParams p;
  p.w1 = fanin_matrix(d_a, d_v, d_v, rng);
  p.w2 = fanin_matrix(d_a, d_q, d_q, rng);
  p.bias = fanin_matrix(d_a, 1, d_a, rng);
  p.wout = fanin_matrix(d_a, 1, d_a, rng);
  return p;
}

VisualScorerParams VisualScorerParams::init(int d_a, int d_v,
                                            std::mt19937_64& rng) {
  if (d_a < 1 || d_v < 1) {
    throw std::invalid_argument("VisualScorerParams::init: dims must be positive");
  }
  VisualScorerParams p;
  p.w = fanin_matrix(d_a, d_v, d_v, rng);
  p.b = fanin_matrix(d_a, 1, d_a, rng);
  p.wout = fanin_matrix(d_a, 1, d_a, rng);
  return p;
}

FilterParams FilterParams::init(int n_c, int d_a, int d_v, int d_q,
                                std::mt19937_64& rng) {
  FilterParams p;
  p.bank = SceneBank::init(n_c, d_q, rng);
  p.scorer = FilterScorerParams::init(d_a, d_v, d_q, rng);
  p.visual = VisualScorerParams::init(d_a, d_v, rng);
  return p;
}

ad::Var netvlad_aggregate(ad::Tape& tape, ad::Var Q, SceneBank& bank) {
  if (Q.cols() != bank.centers.cols()) {
    throw std::invalid_argument(
        "netvlad_aggregate: query dim does not match center dim");
  }
  ad::Var centers = tape.param(bank.centers);
  ad::Var w = tape.param(bank.w_assign);
  ad::Var b = tape.param(bank.b_assign);

  // alpha: n_q x n_c, rows are assignment distributions over centers.
  ad::Var alpha = ad::softmax_rows(ad::linear(Q, w, b));
  // sum_i alpha_ij q_i, per center j.
  ad::Var weighted = ad::matmul(ad::transpose(alpha), Q);  // n_c x d_q
  // sum_i alpha_ij c_j = (total mass on j) * c_j.
  ad::Var mass = ad::transpose(ad::colwise_sum(alpha));  // n_c x 1
  return ad::sub(weighted, ad::rowscale(centers, mass));
}

ad::Var score_frames(ad::Tape& tape, ad::Var V, ad::Var U,
                     FilterScorerParams& scorer) {
  if (V.cols() != scorer.w1.cols() || U.cols() != scorer.w2.cols()) {
    throw std::invalid_argument("score_frames: feature dims do not match scorer");
  }
  ad::Var w1 = tape.param(scorer.w1);
  ad::Var w2 = tape.param(scorer.w2);
  ad::Var bias = tape.param(scorer.bias);
  ad::Var wout = tape.param(scorer.wout);
  return ad::sigmoid(ad::additive_score(V, U, w1, w2, bias, wout));
}

ad::Var max_min_normalize(ad::Tape& tape, ad::Var per_frame) {
  if (per_frame.cols() != 1) {
    throw std::invalid_argument("max_min_normalize: expects a column vector");
  }
  ad::Var mx = ad::max_all(per_frame);
  ad::Var mn = ad::min_all(per_frame);
  if (mx.val()(0, 0) == mn.val()(0, 0)) {
    // Degenerate range: keep both streams active and gradients finite.
    return tape.constant(Matrix::Constant(per_frame.rows(), 1, 0.5));
  }
  // Non-degenerate range divides exactly so the extremes map to exactly 0
  // and 1 (the constant branch above already guards division by zero).
  return ad::div_scalar(ad::sub_scalar(per_frame, mn), ad::sub(mx, mn), 0.0);
}

std::pair<ad::Var, ad::Var> reduce_and_normalize(ad::Tape& tape, ad::Var raw) {
  ad::Var per_frame = ad::rowwise_max(raw);
  return {per_frame, max_min_normalize(tape, per_frame)};
}

std::pair<ad::Var, ad::Var> split_streams(ad::Tape& tape, ad::Var V,
                                          ad::Var normalized) {
  (void)tape;
  if (normalized.rows() != V.rows() || normalized.cols() != 1) {
    throw std::invalid_argument(
        "split_streams: gate length does not match frame count");
  }
  ad::Var enhanced = ad::rowscale(V, normalized);
  ad::Var suppressed = ad::sub(V, enhanced);
  return {enhanced, suppressed};
}

ad::Var visual_only_score(ad::Tape& tape, ad::Var V,
                          VisualScorerParams& params) {
  if (V.cols() != params.w.cols()) {
    throw std::invalid_argument(
        "visual_only_score: feature dim does not match scorer");
  }
  ad::Var w = tape.param(params.w);
  ad::Var b = tape.param(params.b);
  ad::Var wout = tape.param(params.wout);
  return ad::sigmoid(ad::matmul(ad::tanh(ad::linear(V, w, b)), wout));
}

}  // namespace rtbpn
