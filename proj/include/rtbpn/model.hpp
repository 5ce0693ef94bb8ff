/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_MODEL_HPP
#define RTBPN_MODEL_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rtbpn/data_synth.hpp"
#include "rtbpn/language_filter.hpp"
#include "rtbpn/objectives.hpp"
#include "rtbpn/proposal_branch.hpp"
#include "rtbpn/text_encoder.hpp"
#include "rtbpn/types.hpp"

namespace rtbpn {

// Composable switches that remove or replace individual model pieces.
struct AblationFlags {
  bool no_filter = false;         // feed raw frames to a single branch
  bool no_param_sharing = false;  // independent branch weights per stream
  bool visual_only = false;       // frame-only relevance scoring
  SelectorKind selector = SelectorKind::center;
};

// Every run-level knob: dimensions, sampling, loss weights, optimizer.
struct RunConfig {
  int feature_dim = 256;     // frame feature width
  int hidden_dim = 256;      // scorer/attention hidden width and conv channels
  int embed_dim = 300;       // word embedding width
  int encoder_hidden = 128;  // recurrent width; query features are twice this
  int num_centers = 8;       // scene bank size
  bool freeze_embedding = false;

  int T = 48;      // proposals kept per branch
  int kernel = 3;  // conv kernel, 3 or 9
  SamplingRule::Kind sampling = SamplingRule::Kind::all_pairs;
  int sampling_modulus = 1;
  int pooling_stride = 4;

  LossConfig loss;

  double lr = 0.001;
  int batch_size = 64;
  int epochs = 30;
  std::uint64_t seed = 0;

  AblationFlags ablate;

  SamplingRule rule_for(int n_v) const;
  void validate() const;  // throws ConfigError
};

// JSON round trip; parsing applies defaults for absent keys and rejects
// unknown ones.
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

// FNV-1a over the canonical JSON rendering; pins a checkpoint to its config.
std::uint64_t config_hash(const RunConfig& cfg);

// All trainable tensors of one model instance.
struct ModelParams {
  TextEncoderParams encoder;
  FilterParams filter;
  BranchParams branch;
  // Present only when parameter sharing is ablated: weights for the
  // suppressed-stream pass.
  std::optional<BranchParams> branch_b;

  static ModelParams init(const RunConfig& cfg, int vocab_size,
                          std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    encoder.visit([&](const char* n, Matrix& m) {
      f((std::string("encoder.") + n).c_str(), m);
    });
    filter.visit([&](const char* n, Matrix& m) {
      f((std::string("filter.") + n).c_str(), m);
    });
    branch.visit([&](const char* n, Matrix& m) {
      f((std::string("branch.") + n).c_str(), m);
    });
    if (branch_b) {
      branch_b->visit([&](const char* n, Matrix& m) {
        f((std::string("branch_b.") + n).c_str(), m);
      });
    }
  }
};

// Tape-level outcome of one (video, sentence) pass.
struct ForwardResult {
  ad::Var Q;                               // contextual word features
  std::optional<ad::Var> relevance;        // normalized per-frame weights
  BranchResult enhanced;
  std::optional<BranchResult> suppressed;  // absent when the filter is off
};

// Runs filter + both branches on pooled frames. `frames` rows are pooled
// feature vectors; tokens index the vocabulary.
ForwardResult forward_pair(ad::Tape& tape, const Matrix& frames,
                           const std::vector<int>& tokens, ModelParams& params,
                           const RunConfig& cfg);

// Enhanced-branch score sum only (used for the mismatched pairs).
ad::Var enhanced_sum(ad::Tape& tape, const Matrix& frames,
                     const std::vector<int>& tokens, ModelParams& params,
                     const RunConfig& cfg);

// Assembles the weighted multi-task loss for one positive pair and its
// sampled mismatches. Writes the unweighted term values to `out` when given.
ad::Var item_loss(ad::Tape& tape, const Matrix& pos_frames,
                  const std::vector<int>& pos_tokens,
                  const Matrix& neg_video_frames,
                  const std::vector<int>& neg_sentence_tokens,
                  ModelParams& params, const RunConfig& cfg, LossBundle* out);

// Value-level inference: pooled frames + tokens -> ranked enhanced proposals.
ProposalSet predict_proposals(const Matrix& frames,
                              const std::vector<int>& tokens,
                              ModelParams& params, const RunConfig& cfg);

// Pools a raw on-disk sequence by the configured stride.
FrameSequence pooled_frames(const FrameSequence& raw, const RunConfig& cfg);

}  // namespace rtbpn

#endif  // RTBPN_MODEL_HPP
