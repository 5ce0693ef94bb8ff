/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/text_encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rtbpn/initializers.hpp"

namespace rtbpn {

GruCellParams GruCellParams::init(int in_dim, int hidden,
                                  std::mt19937_64& rng) {
  if (in_dim < 1 || hidden < 1) {
    throw std::invalid_argument("GruCellParams::init: dims must be positive");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  GruCellParams p;
  p.w_z = uniform_matrix(hidden, in_dim, bound, rng);
  p.u_z = uniform_matrix(hidden, hidden, bound, rng);
  p.b_z = uniform_matrix(hidden, 1, bound, rng);
  p.w_r = uniform_matrix(hidden, in_dim, bound, rng);
  p.u_r = uniform_matrix(hidden, hidden, bound, rng);
  p.b_r = uniform_matrix(hidden, 1, bound, rng);
  p.w_n = uniform_matrix(hidden, in_dim, bound, rng);
  p.u_n = uniform_matrix(hidden, hidden, bound, rng);
  p.b_n = uniform_matrix(hidden, 1, bound, rng);
  return p;
}

TextEncoderParams TextEncoderParams::init(int vocab_size, int embed_dim,
                                          int hidden, std::mt19937_64& rng) {
  if (vocab_size < 1 || embed_dim < 1 || hidden < 1) {
    throw std::invalid_argument("TextEncoderParams::init: dims must be positive");
  }
  TextEncoderParams p;
  p.hidden = hidden;
  p.embedding = normal_matrix(vocab_size, embed_dim, 0.01, rng);
  p.fwd = GruCellParams::init(embed_dim, hidden, rng);
  p.bwd = GruCellParams::init(embed_dim, hidden, rng);
  return p;
}

ad::Var gru_step(ad::Tape& tape, ad::Var x, ad::Var h_prev,
                 GruCellParams& cell) {
  ad::Var wz = tape.param(cell.w_z), uz = tape.param(cell.u_z),
          bz = tape.param(cell.b_z);
  ad::Var wr = tape.param(cell.w_r), ur = tape.param(cell.u_r),
          br = tape.param(cell.b_r);
  ad::Var wn = tape.param(cell.w_n), un = tape.param(cell.u_n),
          bn = tape.param(cell.b_n);

  ad::Var z = ad::sigmoid(
      ad::add(ad::linear(x, wz, bz), ad::matmul_nt(h_prev, uz)));
  ad::Var r = ad::sigmoid(
      ad::add(ad::linear(x, wr, br), ad::matmul_nt(h_prev, ur)));
  ad::Var n = ad::tanh(ad::add(ad::linear(x, wn, bn),
                               ad::matmul_nt(ad::cmul(r, h_prev), un)));
  // h = (1 - z) * h_prev + z * n, written as h_prev + z * (n - h_prev).
  return ad::add(h_prev, ad::cmul(z, ad::sub(n, h_prev)));
}

ad::Var encode_query(ad::Tape& tape, const std::vector<int>& token_ids,
                     TextEncoderParams& params) {
  if (token_ids.empty()) {
    throw std::invalid_argument("encode_query: token list must be non-empty");
  }
  for (int id : token_ids) {
    if (id < 0 || id >= params.vocab_size()) {
      throw std::invalid_argument("encode_query: token id " +
                                  std::to_string(id) + " outside vocabulary [0, " +
                                  std::to_string(params.vocab_size()) + ")");
    }
  }

  ad::Var table = params.freeze_embedding ? tape.frozen(params.embedding)
                                          : tape.param(params.embedding);
  ad::Var X = ad::gather_rows(table, token_ids);
  const int n_q = static_cast<int>(token_ids.size());
  ad::Var h0 = tape.constant(Matrix::Zero(1, params.hidden));

  std::vector<ad::Var> fwd_states(static_cast<std::size_t>(n_q));
  ad::Var h = h0;
  for (int i = 0; i < n_q; ++i) {
    h = gru_step(tape, ad::gather_rows(X, {i}), h, params.fwd);
    fwd_states[static_cast<std::size_t>(i)] = h;
  }

  std::vector<ad::Var> bwd_states(static_cast<std::size_t>(n_q));
  h = h0;
  for (int i = n_q - 1; i >= 0; --i) {
    h = gru_step(tape, ad::gather_rows(X, {i}), h, params.bwd);
    bwd_states[static_cast<std::size_t>(i)] = h;
  }

  std::vector<ad::Var> rows;
  rows.reserve(static_cast<std::size_t>(n_q));
  for (int i = 0; i < n_q; ++i) {
    rows.push_back(ad::hconcat(fwd_states[static_cast<std::size_t>(i)],
                               bwd_states[static_cast<std::size_t>(i)]));
  }
  return ad::vstack(rows);
}

EncodedQuery encode_query_values(const std::vector<int>& token_ids,
                                 TextEncoderParams& params) {
  ad::Tape tape;
  return EncodedQuery{encode_query(tape, token_ids, params).val()};
}

}  // namespace rtbpn
