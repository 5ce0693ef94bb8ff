/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_DATA_SYNTH_HPP
#define RTBPN_DATA_SYNTH_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rtbpn/types.hpp"

namespace rtbpn {

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct SentenceAnnotation {
  std::vector<int> token_ids;
  // Present on val/test for metric computation; never written for train
  // manifests (weak supervision).
  std::optional<SecondsSpan> gt_span_seconds;
};

struct CorpusEntry {
  std::string video_id;
  std::string feature_path;  // relative to the manifest directory
  std::vector<SentenceAnnotation> sentences;
};

struct CorpusManifest {
  std::vector<CorpusEntry> entries;
  int vocab_size = 0;
  int feature_dim = 0;
  double seconds_per_frame = 1.0;
  Split split = Split::train;

  // Guarded ground-truth access: throws ContractError on the train split and
  // IngestError when the annotation is missing.
  const SecondsSpan& gt_span(std::size_t entry, std::size_t sentence) const;

  void validate() const;
};

// In-memory corpus: features parallel to manifest.entries.
struct Corpus {
  CorpusManifest manifest;
  std::vector<FrameSequence> features;

  std::size_t size() const { return manifest.entries.size(); }
};

struct SynthesisConfig {
  int num_videos = 100;
  std::pair<int, int> raw_frames_range{48, 96};
  int vocab_size = 30;
  std::pair<int, int> sentence_len_range{3, 8};
  std::pair<double, double> moment_frac_range{0.15, 0.45};
  double signal_strength = 1.0;
  double noise_std = 1.0;
  int feature_dim = 16;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// One fixed prototype vector per vocabulary item, drawn from a standard
// normal stream derived from cfg.seed only (shared by all splits).
Matrix token_prototypes(const SynthesisConfig& cfg);

// Weakly-aligned synthetic corpus: each video holds one sentence and one
// planted moment whose frames carry the sentence prototype scaled by
// signal_strength; all frames carry independent noise_std Gaussian noise.
// Deterministic given (cfg.seed, split).
Corpus synthesize_corpus(const SynthesisConfig& cfg, Split split = Split::train);

// Temporal mean pooling: output row j averages input rows
// [j*stride, min((j+1)*stride, n_v)); seconds_per_index scales by stride.
FrameSequence mean_pool(const FrameSequence& seq, int stride);

// On-disk format: manifest.json plus one CSV per video (one frame per row).
CorpusManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);

FrameSequence load_features(const std::filesystem::path& path,
                            double seconds_per_index = 1.0);
void write_features(const FrameSequence& seq, const std::filesystem::path& path);

// Directory layout: dir/manifest.json, dir/features/<video_id>.csv.
Corpus load_corpus(const std::filesystem::path& dir);
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

}  // namespace rtbpn

#endif  // RTBPN_DATA_SYNTH_HPP
