/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_LANGUAGE_FILTER_HPP
#define RTBPN_LANGUAGE_FILTER_HPP

#include <random>
#include <string>
#include <utility>

#include "rtbpn/autodiff.hpp"
#include "rtbpn/types.hpp"

namespace rtbpn {

// Trainable scene centers plus the soft-assignment projection that maps each
// word feature to a distribution over centers.
struct SceneBank {
  Matrix centers;   // n_c x d_q
  Matrix w_assign;  // n_c x d_q
  Matrix b_assign;  // n_c x 1

  static SceneBank init(int n_c, int d_q, std::mt19937_64& rng);

  int num_centers() const { return static_cast<int>(centers.rows()); }

  template <typename F>
  void visit(F&& f) {
    f("centers", centers);
    f("w_assign", w_assign);
    f("b_assign", b_assign);
  }
};

// Additive scorer between frames and aggregated scene features:
// score(i,j) = sigmoid(wout . tanh(w1 v_i + w2 u_j + bias)).
struct FilterScorerParams {
  Matrix w1;    // d_a x d_v
  Matrix w2;    // d_a x d_q
  Matrix bias;  // d_a x 1
  Matrix wout;  // d_a x 1

  static FilterScorerParams init(int d_a, int d_v, int d_q,
                                 std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    f("w1", w1);
    f("w2", w2);
    f("bias", bias);
    f("wout", wout);
  }
};

// Frame-only scoring head for the visual-only ablation:
// score(i) = sigmoid(wout . tanh(w v_i + b)).
struct VisualScorerParams {
  Matrix w;     // d_a x d_v
  Matrix b;     // d_a x 1
  Matrix wout;  // d_a x 1

  static VisualScorerParams init(int d_a, int d_v, std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    f("w", w);
    f("b", b);
    f("wout", wout);
  }
};

struct FilterParams {
  SceneBank bank;
  FilterScorerParams scorer;
  VisualScorerParams visual;

  static FilterParams init(int n_c, int d_a, int d_v, int d_q,
                           std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    bank.visit([&](const char* n, Matrix& m) {
      f((std::string("bank.") + n).c_str(), m);
    });
    scorer.visit([&](const char* n, Matrix& m) {
      f((std::string("scorer.") + n).c_str(), m);
    });
    visual.visit([&](const char* n, Matrix& m) {
      f((std::string("visual.") + n).c_str(), m);
    });
  }
};

// Soft-assigned residual aggregation: u_j = sum_i alpha_ij (q_i - c_j) with
// alpha_i = softmax over centers of (w_assign q_i + b_assign). Returns U
// (n_c x d_q).
ad::Var netvlad_aggregate(ad::Tape& tape, ad::Var Q, SceneBank& bank);

// Frame-scene relevance grid beta (n_v x n_c), every entry in (0, 1).
ad::Var score_frames(ad::Tape& tape, ad::Var V, ad::Var U,
                     FilterScorerParams& scorer);

// Max-min rescaling of a column vector to [0, 1]; constant input maps to
// all-0.5 so both downstream streams stay active.
ad::Var max_min_normalize(ad::Tape& tape, ad::Var per_frame);

// per_frame = rowwise max over centers; normalized = max_min_normalize.
std::pair<ad::Var, ad::Var> reduce_and_normalize(ad::Tape& tape, ad::Var raw);

// Gating into the enhanced/suppressed streams. The suppressed stream is
// computed as V minus the enhanced stream, so the two reconstruct the input
// exactly.
std::pair<ad::Var, ad::Var> split_streams(ad::Tape& tape, ad::Var V,
                                          ad::Var normalized);

// Ablation head: per-frame score column (n_v x 1) from frame features alone.
ad::Var visual_only_score(ad::Tape& tape, ad::Var V, VisualScorerParams& params);

}  // namespace rtbpn

#endif  // RTBPN_LANGUAGE_FILTER_HPP
