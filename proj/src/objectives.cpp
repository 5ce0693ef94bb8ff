/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rtbpn {

void LossConfig::validate() const {
  if (margin_intra < 0.0 || margin_inter < 0.0) {
    throw ConfigError("loss config: margins must be >= 0");
  }
  if (lambda_intra < 0.0 || lambda_inter < 0.0 || lambda_global < 0.0 ||
      lambda_gap < 0.0) {
    throw ConfigError("loss config: loss weights must be >= 0");
  }
}

double intra_loss(double k_en, double k_sp, double margin) {
  if (!std::isfinite(k_en) || !std::isfinite(k_sp)) {
    throw std::invalid_argument("intra_loss: score sums must be finite");
  }
  return std::max(0.0, margin - k_en + k_sp);
}

double inter_loss(double k_en, double k_neg_sentence, double k_neg_video,
                  double margin) {
  if (!std::isfinite(k_en) || !std::isfinite(k_neg_sentence) ||
      !std::isfinite(k_neg_video)) {
    throw std::invalid_argument("inter_loss: score sums must be finite");
  }
  return std::max(0.0, margin - k_en + k_neg_sentence) +
         std::max(0.0, margin - k_en + k_neg_video);
}

double global_loss(const MomentMap& map) {
  if (map.num_valid() < 1) {
    throw std::invalid_argument("global_loss: map has no valid cells");
  }
  return map.scores.mean();
}

double gap_loss(const std::vector<double>& scores) {
  if (scores.empty()) {
    throw std::invalid_argument("gap_loss: needs at least one score");
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double denom = 0.0;
  for (double s : scores) denom += std::exp(s - mx);
  double entropy = 0.0;
  for (double s : scores) {
    const double p = std::exp(s - mx) / denom;
    entropy -= p * std::log(p);
  }
  return entropy;
}

LossBundle total_loss(double intra, double inter, double global, double gap,
                      const LossConfig& cfg) {
  cfg.validate();
  LossBundle b;
  b.intra = intra;
  b.inter = inter;
  b.global = global;
  b.gap = gap;
  b.total = cfg.lambda_intra * intra + cfg.lambda_inter * inter +
            cfg.lambda_global * global + cfg.lambda_gap * gap;
  return b;
}

namespace {

// max(0, margin - pos + neg) on the tape.
ad::Var hinge(ad::Var pos, ad::Var neg, double margin) {
  return ad::relu(ad::shift(ad::sub(neg, pos), margin));
}

}  // namespace

ad::Var intra_loss(ad::Tape& tape, ad::Var k_en, ad::Var k_sp, double margin) {
  (void)tape;
  return hinge(k_en, k_sp, margin);
}

ad::Var inter_loss(ad::Tape& tape, ad::Var k_en, ad::Var k_neg_sentence,
                   ad::Var k_neg_video, double margin) {
  (void)tape;
  return ad::add(hinge(k_en, k_neg_sentence, margin),
                 hinge(k_en, k_neg_video, margin));
}

ad::Var global_loss(ad::Tape& tape, ad::Var valid_scores) {
  (void)tape;
  return ad::mean_all(valid_scores);
}

ad::Var gap_loss(ad::Tape& tape, ad::Var selected_scores) {
  (void)tape;
  ad::Var p = ad::softmax_rows(ad::transpose(selected_scores));  // 1 x T
  return ad::neg(ad::sum_all(ad::cmul(p, ad::log(p))));
}

ad::Var total_loss(ad::Tape& tape, ad::Var intra, ad::Var inter,
                   ad::Var global, ad::Var gap, const LossConfig& cfg) {
  (void)tape;
  cfg.validate();
  return ad::add(ad::add(ad::scale(intra, cfg.lambda_intra),
                         ad::scale(inter, cfg.lambda_inter)),
                 ad::add(ad::scale(global, cfg.lambda_global),
                         ad::scale(gap, cfg.lambda_gap)));
}

std::vector<NegativeChoice> sample_negatives(
    const std::vector<std::size_t>& batch_items, const CorpusManifest& manifest,
    std::mt19937_64& rng) {
  const std::size_t n = manifest.entries.size();
  if (n < 2) {
    throw ConfigError(
        "sample_negatives: corpus must contain at least two videos");
  }
  std::vector<NegativeChoice> out;
  out.reserve(batch_items.size());
  for (std::size_t item : batch_items) {
    if (item >= n) {
      throw std::invalid_argument("sample_negatives: batch index out of range");
    }
    NegativeChoice choice;

    // Mismatched video: uniform over the other entries.
    std::uniform_int_distribution<std::size_t> vid_dist(0, n - 2);
    std::size_t v = vid_dist(rng);
    if (v >= item) ++v;
    choice.video_index = v;

    // Mismatched sentence: uniform over all sentences of the other entries.
    std::size_t total_sentences = 0;
    for (std::size_t e = 0; e < n; ++e) {
      if (e == item) continue;
      total_sentences += manifest.entries[e].sentences.size();
    }
    std::uniform_int_distribution<std::size_t> sent_dist(0, total_sentences - 1);
    std::size_t pick = sent_dist(rng);
    for (std::size_t e = 0; e < n; ++e) {
      if (e == item) continue;
      const std::size_t count = manifest.entries[e].sentences.size();
      if (pick < count) {
        choice.sentence_video = e;
        choice.sentence_index = pick;
        break;
      }
      pick -= count;
    }
    out.push_back(choice);
  }
  return out;
}

}  // namespace rtbpn
