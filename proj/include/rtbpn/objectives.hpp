/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_OBJECTIVES_HPP
#define RTBPN_OBJECTIVES_HPP

#include <cstddef>
#include <random>
#include <vector>

#include "rtbpn/autodiff.hpp"
#include "rtbpn/data_synth.hpp"
#include "rtbpn/proposal_branch.hpp"
#include "rtbpn/types.hpp"

namespace rtbpn {

struct LossConfig {
  double margin_intra = 0.4;
  double margin_inter = 0.6;
  double lambda_intra = 0.1;
  double lambda_inter = 1.0;
  double lambda_global = 0.01;
  double lambda_gap = 0.01;

  void validate() const;  // throws ConfigError on negative margins/weights
};

struct LossBundle {
  double intra = 0.0;
  double inter = 0.0;
  double global = 0.0;
  double gap = 0.0;
  double total = 0.0;
};

// Margin ranking of the enhanced score sum over the suppressed one:
// max(0, margin - k_en + k_sp).
double intra_loss(double k_en, double k_sp, double margin);

// Two hinges ranking the positive pair above the mismatched-sentence and
// mismatched-video pairs.
double inter_loss(double k_en, double k_neg_sentence, double k_neg_video,
                  double margin);

// Mean proposal score over valid cells only.
double global_loss(const MomentMap& map);

// Shannon entropy (natural log) of the softmax over the selected scores.
double gap_loss(const std::vector<double>& scores);

LossBundle total_loss(double intra, double inter, double global, double gap,
                      const LossConfig& cfg);

// Tape-level counterparts used by training; scalars are 1x1 vars.
ad::Var intra_loss(ad::Tape& tape, ad::Var k_en, ad::Var k_sp, double margin);
ad::Var inter_loss(ad::Tape& tape, ad::Var k_en, ad::Var k_neg_sentence,
                   ad::Var k_neg_video, double margin);
ad::Var global_loss(ad::Tape& tape, ad::Var valid_scores);
ad::Var gap_loss(ad::Tape& tape, ad::Var selected_scores);
ad::Var total_loss(ad::Tape& tape, ad::Var intra, ad::Var inter,
                   ad::Var global, ad::Var gap, const LossConfig& cfg);

// Mismatched counterparts for one positive pair: a video drawn uniformly
// from the other entries, and a sentence drawn uniformly from the other
// entries' sentences.
struct NegativeChoice {
  std::size_t video_index = 0;     // source of the mismatched video
  std::size_t sentence_video = 0;  // entry owning the mismatched sentence
  std::size_t sentence_index = 0;  // sentence position within that entry
};

std::vector<NegativeChoice> sample_negatives(
    const std::vector<std::size_t>& batch_items, const CorpusManifest& manifest,
    std::mt19937_64& rng);

}  // namespace rtbpn

#endif  // RTBPN_OBJECTIVES_HPP
