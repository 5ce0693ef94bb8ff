/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_PROPOSAL_BRANCH_HPP
#define RTBPN_PROPOSAL_BRANCH_HPP

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rtbpn/autodiff.hpp"
#include "rtbpn/types.hpp"

namespace rtbpn {

// Predicate selecting which (start, end) cells of the 2D moment grid are
// candidate moments.
struct SamplingRule {
  enum class Kind { all_pairs, parity, stride_multiple };
  Kind kind = Kind::all_pairs;
  int modulus = 1;  // m in the parity / stride_multiple predicates
  int n_v = 0;

  static SamplingRule all_pairs(int n_v);
  // Keeps cells with (b - a) mod m == 1.
  static SamplingRule parity(int m, int n_v);
  // Keeps cells with (b - a) mod m == 0.
  static SamplingRule stride_multiple(int m, int n_v);

  bool admits(int a, int b) const;
  void validate() const;  // throws ConfigError (empty valid set, bad dims)
};

std::string to_string(SamplingRule::Kind kind);
SamplingRule::Kind sampling_kind_from_name(const std::string& name);

// All admissible (a, b) with 0 <= a <= b < n_v, sorted lexicographically.
std::vector<std::pair<int, int>> enumerate_valid(const SamplingRule& rule);

// Static structure of the 2D grid: the valid cell list plus a reverse index.
struct MomentGrid {
  int n_v = 0;
  std::vector<std::pair<int, int>> cells;  // lexicographic
  std::vector<int> cell_of_flat;           // n_v*n_v -> cell position or -1

  int num_cells() const { return static_cast<int>(cells.size()); }
  bool is_valid(int a, int b) const {
    return a >= 0 && b < n_v && a <= b && cell_of_flat[a * n_v + b] >= 0;
  }
};

MomentGrid make_grid(const SamplingRule& rule);
// Grid over an explicit cell list (used by tests and oracles).
MomentGrid make_grid(int n_v, std::vector<std::pair<int, int>> cells);

// Concrete (value-level) snapshot of one scored moment map.
struct MomentMap {
  MomentGrid grid;
  Matrix features;  // (n_v*n_v) x d_m, flattened row-major, zero at invalid
  Vector scores;    // grid.num_cells() entries aligned with grid.cells

  int num_valid() const { return grid.num_cells(); }
};

enum class BranchTag { enhanced, suppressed };

// T selected moments with their scores; the head entry is the selection
// pivot (highest score for center/topk ordering).
struct ProposalSet {
  std::vector<std::pair<int, int>> boundaries;  // inclusive frame spans
  std::vector<double> scores;
  BranchTag branch = BranchTag::enhanced;
  double k_sum = 0.0;

  std::size_t size() const { return boundaries.size(); }
};

enum class SelectorKind { center, topk, all };

std::string to_string(SelectorKind kind);
SelectorKind selector_from_name(const std::string& name);

// Temporal IoU of inclusive frame-index spans [a1, b1] and [a2, b2].
double span_iou(std::pair<int, int> x, std::pair<int, int> y);

// Selection index sets into grid.cells. center: argmax-score cell first
// (ties toward the lexicographically smallest), rest ranked by descending
// IoU with the center, ties by higher score then lexicographic order.
std::vector<int> center_select_indices(const MomentGrid& grid,
                                       const Vector& scores, int T);
// topk: descending score, ties lexicographic.
std::vector<int> topk_select_indices(const MomentGrid& grid,
                                     const Vector& scores, int T);
// all: every valid cell, descending score.
std::vector<int> all_select_indices(const MomentGrid& grid,
                                    const Vector& scores);

ProposalSet center_select(const MomentMap& map, int T,
                          BranchTag tag = BranchTag::enhanced);
ProposalSet topk_select(const MomentMap& map, int T,
                        BranchTag tag = BranchTag::enhanced);
ProposalSet all_select(const MomentMap& map,
                       BranchTag tag = BranchTag::enhanced);

// One parameter set serves both the enhanced and the suppressed invocation.
struct BranchParams {
  // Frame-to-word attention over the query words.
  Matrix att_w1;    // d_a x d_v
  Matrix att_w2;    // d_a x d_q
  Matrix att_bias;  // d_a x 1
  Matrix att_wout;  // d_a x 1
  // Cross gate fusing each frame with its aggregated text feature.
  Matrix gate_wt;  // d_v x d_q
  Matrix gate_bt;  // d_v x 1
  Matrix gate_wv;  // d_q x d_v
  Matrix gate_bv;  // d_q x 1
  // Two-layer 2D convolution over the moment grid.
  Matrix conv1_w;  // c_mid x (K*K*(d_v+d_q))
  Matrix conv1_b;  // c_mid x 1
  Matrix conv2_w;  // c_out x (K*K*c_mid)
  Matrix conv2_b;  // c_out x 1
  int kernel = 3;
  // Scoring head mapping a cell's features to a score in (0, 1).
  Matrix head_w;  // 1 x c_out
  Matrix head_b;  // 1 x 1

  static BranchParams init(int d_v, int d_q, int d_a, int c_mid, int c_out,
                           int kernel, std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    f("att_w1", att_w1); f("att_w2", att_w2);
    f("att_bias", att_bias); f("att_wout", att_wout);
    f("gate_wt", gate_wt); f("gate_bt", gate_bt);
    f("gate_wv", gate_wv); f("gate_bv", gate_bv);
    f("conv1_w", conv1_w); f("conv1_b", conv1_b);
    f("conv2_w", conv2_w); f("conv2_b", conv2_b);
    f("head_w", head_w); f("head_b", head_b);
  }
};

// Aggregated per-frame text features: softmax frame-to-word attention
// weights times Q. Returns S (n_v x d_q).
ad::Var frame_word_attention(ad::Tape& tape, ad::Var stream, ad::Var Q,
                             BranchParams& params);

// Gated fusion m_i = [v_i * sigmoid(W^t s_i + b^t); s_i * sigmoid(W^v v_i
// + b^v)] (n_v x (d_v + d_q)).
ad::Var cross_gate(ad::Tape& tape, ad::Var stream, ad::Var S,
                   BranchParams& params);

// Inclusive-range row sums per valid cell, flattened (n_v^2 x d_m).
ad::Var build_moment_features(ad::Tape& tape, ad::Var fused,
                              const MomentGrid& grid);

// Two same-shape conv layers (rectifier between, invalid cells re-zeroed
// before each layer) followed by the sigmoid scoring head; returns the
// valid-cell score column (M x 1) aligned with grid.cells.
ad::Var conv_score(ad::Tape& tape, ad::Var moment_features,
                   const MomentGrid& grid, BranchParams& params);

// Full branch pass plus selection. Selection indices are computed from
// forward values and treated as constants by the backward pass.
struct BranchResult {
  MomentMap map;            // value snapshot
  ad::Var valid_scores;     // M x 1
  ad::Var selected_scores;  // min(T, M) x 1, selection order
  ad::Var k_sum;            // 1 x 1
  ProposalSet proposals;
};

BranchResult run_branch(ad::Tape& tape, ad::Var stream, ad::Var Q,
                        BranchParams& params, const SamplingRule& rule, int T,
                        SelectorKind selector = SelectorKind::center,
                        BranchTag tag = BranchTag::enhanced);

}  // namespace rtbpn

#endif  // RTBPN_PROPOSAL_BRANCH_HPP
