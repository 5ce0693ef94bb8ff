/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_TEXT_ENCODER_HPP
#define RTBPN_TEXT_ENCODER_HPP

#include <random>
#include <vector>

#include "rtbpn/autodiff.hpp"
#include "rtbpn/types.hpp"

namespace rtbpn {

// One direction of the gated recurrent encoder. Update/reset formulation:
//   z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//   r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//   n_t = tanh(W_n x_t + U_n (r_t * h_{t-1}) + b_n)
//   h_t = (1 - z_t) * h_{t-1} + z_t * n_t
// Weight shapes: W_* (h x d_in), U_* (h x h), b_* (h x 1).
struct GruCellParams {
  Matrix w_z, u_z, b_z;
  Matrix w_r, u_r, b_r;
  Matrix w_n, u_n, b_n;

  static GruCellParams init(int in_dim, int hidden, std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    f("w_z", w_z); f("u_z", u_z); f("b_z", b_z);
    f("w_r", w_r); f("u_r", u_r); f("b_r", b_r);
    f("w_n", w_n); f("u_n", u_n); f("b_n", b_n);
  }
};

struct TextEncoderParams {
  Matrix embedding;  // vocab_size x d_emb
  GruCellParams fwd;
  GruCellParams bwd;
  int hidden = 128;
  bool freeze_embedding = false;

  // Embedding entries ~ normal(0, 0.01); recurrent weights and biases
  // ~ uniform(-1/sqrt(h), 1/sqrt(h)).
  static TextEncoderParams init(int vocab_size, int embed_dim, int hidden,
                                std::mt19937_64& rng);

  int vocab_size() const { return static_cast<int>(embedding.rows()); }
  int query_dim() const { return 2 * hidden; }

  template <typename F>
  void visit(F&& f) {
    f("embedding", embedding);
    fwd.visit([&](const char* n, Matrix& m) {
      f((std::string("fwd.") + n).c_str(), m);
    });
    bwd.visit([&](const char* n, Matrix& m) {
      f((std::string("bwd.") + n).c_str(), m);
    });
  }
};

struct EncodedQuery {
  Matrix Q;  // n_q x 2h

  Eigen::Index num_words() const { return Q.rows(); }
  Eigen::Index dim() const { return Q.cols(); }
};

// One recurrent step on the tape; x and h_prev are 1 x d row states.
ad::Var gru_step(ad::Tape& tape, ad::Var x, ad::Var h_prev, GruCellParams& cell);

// Contextual word features: row i concatenates the forward state after the
// prefix [0..i] with the backward state after the suffix [i..n_q-1].
// Differentiable w.r.t. every parameter bound on the tape.
ad::Var encode_query(ad::Tape& tape, const std::vector<int>& token_ids,
                     TextEncoderParams& params);

// Forward-only convenience wrapper.
EncodedQuery encode_query_values(const std::vector<int>& token_ids,
                                 TextEncoderParams& params);

}  // namespace rtbpn

#endif  // RTBPN_TEXT_ENCODER_HPP
