/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_TRAINER_HPP
#define RTBPN_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rtbpn/evaluation.hpp"
#include "rtbpn/model.hpp"

namespace rtbpn {

// Named gradient slots aligned with ModelParams::visit order.
struct GradientSet {
  std::vector<std::string> names;
  std::vector<Matrix> grads;

  static GradientSet zeros_like(ModelParams& params);
  // Adds the tape gradients of every bound tensor (zeros for untouched ones).
  void accumulate(const ad::Tape& tape, ModelParams& params);
  void scale(double factor);
};

// Adaptive-moment optimizer state, one slot pair per parameter tensor.
struct AdamState {
  std::vector<std::string> names;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;

  static AdamState zeros_like(ModelParams& params);
};

// One first/second-moment update; decay rates 0.9/0.999, epsilon 1e-8.
void adam_update(ModelParams& params, const GradientSet& grads,
                 AdamState& state, double lr);

// One weakly-supervised training sample: a video paired with one of its
// sentences.
struct TrainItem {
  std::size_t video = 0;
  std::size_t sentence = 0;
};

// Pooled frames for every corpus entry, computed once per run.
struct TrainContext {
  const CorpusManifest* manifest = nullptr;
  std::vector<Matrix> frames;            // pooled features per entry
  std::vector<double> seconds_per_index; // per entry, after pooling

  static TrainContext build(const Corpus& corpus, const RunConfig& cfg);
  std::vector<TrainItem> all_items() const;
};

// One optimizer step on the batch-mean loss with explicit mismatches
// (negatives[i] pairs with items[i]). Returns the mean unweighted terms.
LossBundle train_step(const TrainContext& ctx,
                      const std::vector<TrainItem>& items,
                      const std::vector<NegativeChoice>& negatives,
                      ModelParams& params, AdamState& adam,
                      const RunConfig& cfg);

// Convenience overload that samples the mismatched pairs from `rng`.
LossBundle train_step(const TrainContext& ctx,
                      const std::vector<TrainItem>& items, ModelParams& params,
                      AdamState& adam, const RunConfig& cfg,
                      std::mt19937_64& rng);

// Ranked predictions plus the recall table for every sample of a labeled
// split (requires ground-truth annotations).
std::pair<EvalReport, std::vector<PredictionRecord>> evaluate_split(
    const Corpus& corpus, ModelParams& params, const RunConfig& cfg);

// Self-describing parameter snapshot; refuses to load when the stored
// config hash disagrees with the embedded config unless forced.
struct Checkpoint {
  RunConfig cfg;
  std::uint64_t cfg_hash = 0;
  int vocab_size = 0;
  int epoch = 0;
  std::string rng_state;
  ModelParams params;
  AdamState adam;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           bool force = false);

struct EpochStats {
  int epoch = 0;
  LossBundle train_loss;  // mean over items
  EvalReport val;
};

struct FitResult {
  Checkpoint best;
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

// Full training loop: per-epoch validation, best checkpoint kept by
// R@1,IoU=0.5. The train corpus must carry the train split (ground truth is
// untouchable there); the validation corpus must be labeled.
FitResult fit(const Corpus& train, const Corpus& val, const RunConfig& cfg);

}  // namespace rtbpn

#endif  // RTBPN_TRAINER_HPP
