/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/proposal_branch.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "rtbpn/initializers.hpp"

namespace rtbpn {

SamplingRule SamplingRule::all_pairs(int n_v) {
  return SamplingRule{Kind::all_pairs, 1, n_v};
}

SamplingRule SamplingRule::parity(int m, int n_v) {
  return SamplingRule{Kind::parity, m, n_v};
}

SamplingRule SamplingRule::stride_multiple(int m, int n_v) {
  return SamplingRule{Kind::stride_multiple, m, n_v};
}

bool SamplingRule::admits(int a, int b) const {
  if (a < 0 || b >= n_v || a > b) return false;
  switch (kind) {
    case Kind::all_pairs:
      return true;
    case Kind::parity:
      return (b - a) % modulus == 1;
    case Kind::stride_multiple:
      return (b - a) % modulus == 0;
  }
  return false;
}

void SamplingRule::validate() const {
  if (n_v < 1) throw ConfigError("sampling rule: n_v must be >= 1");
  if (kind != Kind::all_pairs && modulus < 1) {
    throw ConfigError("sampling rule: modulus must be >= 1");
  }
  for (int a = 0; a < n_v; ++a) {
    for (int b = a; b < n_v; ++b) {
      if (admits(a, b)) return;
    }
  }
  throw ConfigError("sampling rule: no valid cells for n_v = " +
                    std::to_string(n_v));
}

std::string to_string(SamplingRule::Kind kind) {
  switch (kind) {
    case SamplingRule::Kind::all_pairs: return "all_pairs";
    case SamplingRule::Kind::parity: return "parity";
    case SamplingRule::Kind::stride_multiple: return "stride_multiple";
  }
  throw std::invalid_argument("to_string: unknown sampling kind");
}

SamplingRule::Kind sampling_kind_from_name(const std::string& name) {
  if (name == "all_pairs") return SamplingRule::Kind::all_pairs;
  if (name == "parity") return SamplingRule::Kind::parity;
  if (name == "stride_multiple") return SamplingRule::Kind::stride_multiple;
  throw std::invalid_argument("unknown sampling rule '" + name + "'");
}

std::vector<std::pair<int, int>> enumerate_valid(const SamplingRule& rule) {
  rule.validate();
  std::vector<std::pair<int, int>> cells;
  for (int a = 0; a < rule.n_v; ++a) {
    for (int b = a; b < rule.n_v; ++b) {
      if (rule.admits(a, b)) cells.emplace_back(a, b);
    }
  }
  return cells;
}

MomentGrid make_grid(const SamplingRule& rule) {
  return make_grid(rule.n_v, enumerate_valid(rule));
}

MomentGrid make_grid(int n_v, std::vector<std::pair<int, int>> cells) {
  if (n_v < 1) throw ConfigError("make_grid: n_v must be >= 1");
  if (cells.empty()) throw ConfigError("make_grid: cell list must be non-empty");
  MomentGrid grid;
  grid.n_v = n_v;
  grid.cells = std::move(cells);
  std::sort(grid.cells.begin(), grid.cells.end());
  grid.cell_of_flat.assign(static_cast<std::size_t>(n_v) * n_v, -1);
  for (int k = 0; k < grid.num_cells(); ++k) {
    const auto [a, b] = grid.cells[static_cast<std::size_t>(k)];
    if (a < 0 || b >= n_v || a > b) {
      throw ConfigError("make_grid: cell outside the upper triangle");
    }
    grid.cell_of_flat[static_cast<std::size_t>(a) * n_v + b] = k;
  }
  return grid;
}

std::string to_string(SelectorKind kind) {
  switch (kind) {
    case SelectorKind::center: return "center";
    case SelectorKind::topk: return "topk";
    case SelectorKind::all: return "all";
  }
  throw std::invalid_argument("to_string: unknown selector kind");
}

SelectorKind selector_from_name(const std::string& name) {
  if (name == "center") return SelectorKind::center;
  if (name == "topk") return SelectorKind::topk;
  if (name == "all") return SelectorKind::all;
  throw std::invalid_argument("unknown selector '" + name + "'");
}

double span_iou(std::pair<int, int> x, std::pair<int, int> y) {
  const double inter =
      std::max(0, std::min(x.second, y.second) + 1 -
                      std::max(x.first, y.first));
  const double uni = (x.second - x.first + 1) + (y.second - y.first + 1) - inter;
  return inter / uni;
}

namespace {

void check_scores(const MomentGrid& grid, const Vector& scores) {
  if (scores.size() != grid.num_cells()) {
    throw std::invalid_argument(
        "selection: score vector length does not match valid-cell count");
  }
}

int argmax_cell(const MomentGrid& grid, const Vector& scores) {
  int best = 0;
  for (int k = 1; k < grid.num_cells(); ++k) {
    if (scores(k) > scores(best)) best = k;  // lexicographic tie-break via order
  }
  return best;
}

ProposalSet assemble(const MomentMap& map, const std::vector<int>& idx,
                     BranchTag tag) {
  ProposalSet set;
  set.branch = tag;
  set.boundaries.reserve(idx.size());
  set.scores.reserve(idx.size());
  for (int k : idx) {
    set.boundaries.push_back(map.grid.cells[static_cast<std::size_t>(k)]);
    set.scores.push_back(map.scores(k));
    set.k_sum += map.scores(k);
  }
  return set;
}

}  // namespace

std::vector<int> center_select_indices(const MomentGrid& grid,
                                       const Vector& scores, int T) {
  if (T < 1) throw std::invalid_argument("center_select: T must be >= 1");
  check_scores(grid, scores);
  const int center = argmax_cell(grid, scores);
  const auto center_cell = grid.cells[static_cast<std::size_t>(center)];

  std::vector<int> rest;
  rest.reserve(static_cast<std::size_t>(grid.num_cells()) - 1);
  for (int k = 0; k < grid.num_cells(); ++k) {
    if (k != center) rest.push_back(k);
  }
  std::sort(rest.begin(), rest.end(), [&](int x, int y) {
    const double ix = span_iou(grid.cells[static_cast<std::size_t>(x)], center_cell);
    const double iy = span_iou(grid.cells[static_cast<std::size_t>(y)], center_cell);
    if (ix != iy) return ix > iy;
    if (scores(x) != scores(y)) return scores(x) > scores(y);
    return grid.cells[static_cast<std::size_t>(x)] <
           grid.cells[static_cast<std::size_t>(y)];
  });

  std::vector<int> out{center};
  const int take = std::min<int>(T - 1, static_cast<int>(rest.size()));
  out.insert(out.end(), rest.begin(), rest.begin() + take);
  return out;
}

std::vector<int> topk_select_indices(const MomentGrid& grid,
                                     const Vector& scores, int T) {
  if (T < 1) throw std::invalid_argument("topk_select: T must be >= 1");
  check_scores(grid, scores);
  std::vector<int> order(static_cast<std::size_t>(grid.num_cells()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    if (scores(x) != scores(y)) return scores(x) > scores(y);
    return grid.cells[static_cast<std::size_t>(x)] <
           grid.cells[static_cast<std::size_t>(y)];
  });
  order.resize(static_cast<std::size_t>(std::min<int>(T, grid.num_cells())));
  return order;
}

std::vector<int> all_select_indices(const MomentGrid& grid,
                                    const Vector& scores) {
  return topk_select_indices(grid, scores, grid.num_cells());
}

ProposalSet center_select(const MomentMap& map, int T, BranchTag tag) {
  return assemble(map, center_select_indices(map.grid, map.scores, T), tag);
}

ProposalSet topk_select(const MomentMap& map, int T, BranchTag tag) {
  return assemble(map, topk_select_indices(map.grid, map.scores, T), tag);
}

ProposalSet all_select(const MomentMap& map, BranchTag tag) {
  return assemble(map, all_select_indices(map.grid, map.scores), tag);
}

BranchParams BranchParams::init(int d_v, int d_q, int d_a, int c_mid,
                                int c_out, int kernel, std::mt19937_64& rng) {
  if (d_v < 1 || d_q < 1 || d_a < 1 || c_mid < 1 || c_out < 1) {
    throw std::invalid_argument("BranchParams::init: dims must be positive");
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("BranchParams::init: kernel must be odd and positive");
  }
  const int d_m = d_v + d_q;
  BranchParams p;
  p.att_w1 = fanin_matrix(d_a, d_v, d_v, rng);
  p.att_w2 = fanin_matrix(d_a, d_q, d_q, rng);
  p.att_bias = fanin_matrix(d_a, 1, d_a, rng);
  p.att_wout = fanin_matrix(d_a, 1, d_a, rng);
  p.gate_wt = fanin_matrix(d_v, d_q, d_q, rng);
  p.gate_bt = fanin_matrix(d_v, 1, d_q, rng);
  p.gate_wv = fanin_matrix(d_q, d_v, d_v, rng);
  p.gate_bv = fanin_matrix(d_q, 1, d_v, rng);
  p.kernel = kernel;
  p.conv1_w = fanin_matrix(c_mid, kernel * kernel * d_m, kernel * kernel * d_m, rng);
  p.conv1_b = fanin_matrix(c_mid, 1, kernel * kernel * d_m, rng);
  p.conv2_w = fanin_matrix(c_out, kernel * kernel * c_mid, kernel * kernel * c_mid, rng);
  p.conv2_b = fanin_matrix(c_out, 1, kernel * kernel * c_mid, rng);
  // The head starts non-negative so that, over the rectified conv features,
  // a cell's score initially grows with the evidence accumulated inside its
  // span. A sign-symmetric start can couple the score to span length with
  // either polarity, and the selection loop then locks onto degenerate
  // shortest/longest-span proposals before the filter aligns.
  p.head_w = fanin_matrix(1, c_out, c_out, rng).cwiseAbs();
  p.head_b = Matrix::Zero(1, 1);
  return p;
}

ad::Var frame_word_attention(ad::Tape& tape, ad::Var stream, ad::Var Q,
                             BranchParams& params) {
  if (stream.cols() != params.att_w1.cols() ||
      Q.cols() != params.att_w2.cols()) {
    throw std::invalid_argument(
        "frame_word_attention: feature dims do not match parameters");
  }
  ad::Var w1 = tape.param(params.att_w1);
  ad::Var w2 = tape.param(params.att_w2);
  ad::Var bias = tape.param(params.att_bias);
  ad::Var wout = tape.param(params.att_wout);
  ad::Var logits = ad::additive_score(stream, Q, w1, w2, bias, wout);
  return ad::matmul(ad::softmax_rows(logits), Q);
}

ad::Var cross_gate(ad::Tape& tape, ad::Var stream, ad::Var S,
                   BranchParams& params) {
  if (stream.rows() != S.rows()) {
    throw std::invalid_argument("cross_gate: row counts differ");
  }
  if (S.cols() != params.gate_wt.cols() ||
      stream.cols() != params.gate_wv.cols()) {
    throw std::invalid_argument("cross_gate: feature dims do not match gates");
  }
  ad::Var wt = tape.param(params.gate_wt);
  ad::Var bt = tape.param(params.gate_bt);
  ad::Var wv = tape.param(params.gate_wv);
  ad::Var bv = tape.param(params.gate_bv);
  ad::Var gated_v = ad::cmul(stream, ad::sigmoid(ad::linear(S, wt, bt)));
  ad::Var gated_s = ad::cmul(S, ad::sigmoid(ad::linear(stream, wv, bv)));
  return ad::hconcat(gated_v, gated_s);
}

ad::Var build_moment_features(ad::Tape& tape, ad::Var fused,
                              const MomentGrid& grid) {
  (void)tape;
  if (fused.rows() != grid.n_v) {
    throw std::invalid_argument(
        "build_moment_features: fused rows do not match grid n_v");
  }
  return ad::moment_sum_map(fused, grid.cells, grid.n_v);
}

namespace {

Vector valid_mask(const MomentGrid& grid) {
  Vector mask = Vector::Zero(static_cast<Eigen::Index>(grid.n_v) * grid.n_v);
  for (const auto& [a, b] : grid.cells) {
    mask(static_cast<Eigen::Index>(a) * grid.n_v + b) = 1.0;
  }
  return mask;
}

std::vector<int> valid_flat_rows(const MomentGrid& grid) {
  std::vector<int> rows;
  rows.reserve(grid.cells.size());
  for (const auto& [a, b] : grid.cells) rows.push_back(a * grid.n_v + b);
  return rows;
}

}  // namespace

ad::Var conv_score(ad::Tape& tape, ad::Var moment_features,
                   const MomentGrid& grid, BranchParams& params) {
  if (params.kernel % 2 == 0) {
    throw ConfigError("conv_score: kernel must be odd");
  }
  ad::Var w1 = tape.param(params.conv1_w);
  ad::Var b1 = tape.param(params.conv1_b);
  ad::Var w2 = tape.param(params.conv2_w);
  ad::Var b2 = tape.param(params.conv2_b);
  ad::Var hw = tape.param(params.head_w);
  ad::Var hb = tape.param(params.head_b);

  const Vector mask = valid_mask(grid);
  // Input rows are zero at invalid cells by construction (first mask).
  ad::Var h1 = ad::relu(
      ad::conv2d_grid(moment_features, w1, b1, grid.n_v, params.kernel));
  // Re-mask so bias and neighbour leakage cannot flow out of invalid cells.
  ad::Var h1m = ad::rowscale_const(h1, mask);
  ad::Var h2 = ad::conv2d_grid(h1m, w2, b2, grid.n_v, params.kernel);
  ad::Var logits = ad::linear(h2, hw, hb);  // n_v^2 x 1
  return ad::sigmoid(ad::gather_rows(logits, valid_flat_rows(grid)));
}

BranchResult run_branch(ad::Tape& tape, ad::Var stream, ad::Var Q,
                        BranchParams& params, const SamplingRule& rule, int T,
                        SelectorKind selector, BranchTag tag) {
  if (T < 1) throw std::invalid_argument("run_branch: T must be >= 1");
  if (stream.rows() != rule.n_v) {
    throw std::invalid_argument("run_branch: stream rows do not match rule n_v");
  }
  const MomentGrid grid = make_grid(rule);

  ad::Var S = frame_word_attention(tape, stream, Q, params);
  ad::Var fused = cross_gate(tape, stream, S, params);
  ad::Var F = build_moment_features(tape, fused, grid);
  ad::Var scores = conv_score(tape, F, grid, params);

  BranchResult result;
  result.map.grid = grid;
  result.map.features = F.val();
  result.map.scores = scores.val().col(0);

  std::vector<int> idx;
  switch (selector) {
    case SelectorKind::center:
      idx = center_select_indices(grid, result.map.scores, T);
      break;
    case SelectorKind::topk:
      idx = topk_select_indices(grid, result.map.scores, T);
      break;
    case SelectorKind::all:
      idx = all_select_indices(grid, result.map.scores);
      break;
  }

  result.valid_scores = scores;
  result.selected_scores = ad::gather_rows(scores, idx);
  result.k_sum = ad::sum_all(result.selected_scores);
  result.proposals = assemble(result.map, idx, tag);
  return result;
}

}  // namespace rtbpn
