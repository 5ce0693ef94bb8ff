/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace rtbpn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// splitmix64 finalizer: decorrelates the per-purpose RNG streams derived
// from one user-facing seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kTagPrototypes = 0;

std::uint64_t split_tag(Split s) {
  switch (s) {
    case Split::train: return 1;
    case Split::val: return 2;
    case Split::test: return 3;
  }
  throw std::invalid_argument("split_tag: unknown split");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw IngestError(message);
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw std::invalid_argument("split_name: unknown split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("split_from_name: unknown split '" + name + "'");
}

const SecondsSpan& CorpusManifest::gt_span(std::size_t entry,
                                           std::size_t sentence) const {
  if (split == Split::train) {
    throw ContractError(
        "CorpusManifest::gt_span: ground truth is unavailable on the train "
        "split (weak supervision)");
  }
  if (entry >= entries.size()) {
    throw std::out_of_range("CorpusManifest::gt_span: entry index out of range");
  }
  const CorpusEntry& e = entries[entry];
  if (sentence >= e.sentences.size()) {
    throw std::out_of_range(
        "CorpusManifest::gt_span: sentence index out of range");
  }
  const auto& span = e.sentences[sentence].gt_span_seconds;
  if (!span.has_value()) {
    throw IngestError("CorpusManifest::gt_span: video '" + e.video_id +
                      "' sentence " + std::to_string(sentence) +
                      " has no ground-truth span");
  }
  return *span;
}

void CorpusManifest::validate() const {
  require(vocab_size > 0, "manifest: vocab_size must be positive");
  require(feature_dim > 0, "manifest: feature_dim must be positive");
  require(seconds_per_frame > 0.0, "manifest: seconds_per_frame must be > 0");
  std::unordered_set<std::string> ids;
  for (const CorpusEntry& e : entries) {
    require(!e.video_id.empty(), "manifest: entry with empty video_id");
    require(ids.insert(e.video_id).second,
            "manifest: duplicate video_id '" + e.video_id + "'");
    require(!e.feature_path.empty(),
            "manifest: video '" + e.video_id + "' has empty feature_path");
    require(!e.sentences.empty(),
            "manifest: video '" + e.video_id + "' has no sentences");
    for (std::size_t si = 0; si < e.sentences.size(); ++si) {
      const SentenceAnnotation& s = e.sentences[si];
      require(!s.token_ids.empty(), "manifest: video '" + e.video_id +
                                        "' sentence " + std::to_string(si) +
                                        " has no tokens");
      for (int tok : s.token_ids) {
        require(tok >= 0 && tok < vocab_size,
                "manifest: video '" + e.video_id + "' sentence " +
                    std::to_string(si) + " has token id " +
                    std::to_string(tok) + " outside [0, " +
                    std::to_string(vocab_size) + ")");
      }
      if (s.gt_span_seconds.has_value()) {
        const SecondsSpan& span = *s.gt_span_seconds;
        require(span.start >= 0.0 && span.start < span.end,
                "manifest: video '" + e.video_id + "' sentence " +
                    std::to_string(si) + " has invalid span [" +
                    format_double(span.start) + ", " +
                    format_double(span.end) + ")");
      }
    }
  }
}

void SynthesisConfig::validate() const {
  if (num_videos < 1) throw ConfigError("synthesis: num_videos must be >= 1");
  if (raw_frames_range.first < 1 ||
      raw_frames_range.second < raw_frames_range.first) {
    throw ConfigError("synthesis: raw_frames_range must satisfy 1 <= lo <= hi");
  }
  if (vocab_size < 1) throw ConfigError("synthesis: vocab_size must be >= 1");
  if (sentence_len_range.first < 1 ||
      sentence_len_range.second < sentence_len_range.first) {
    throw ConfigError("synthesis: sentence_len_range must satisfy 1 <= lo <= hi");
  }
  if (!(moment_frac_range.first > 0.0) ||
      !(moment_frac_range.second >= moment_frac_range.first) ||
      !(moment_frac_range.second <= 1.0)) {
    throw ConfigError(
        "synthesis: moment_frac_range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(signal_strength >= 0.0)) {
    throw ConfigError("synthesis: signal_strength must be >= 0");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("synthesis: noise_std must be >= 0");
  if (feature_dim < 1) throw ConfigError("synthesis: feature_dim must be >= 1");
}

Matrix token_prototypes(const SynthesisConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(cfg.seed, kTagPrototypes));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix protos(cfg.vocab_size, cfg.feature_dim);
  for (Eigen::Index r = 0; r < protos.rows(); ++r) {
    for (Eigen::Index c = 0; c < protos.cols(); ++c) {
      protos(r, c) = gauss(rng);
    }
  }
  return protos;
}

Corpus synthesize_corpus(const SynthesisConfig& cfg, Split split) {
  cfg.validate();
  const Matrix protos = token_prototypes(cfg);
  std::mt19937_64 rng(mix_seed(cfg.seed, split_tag(split)));
  std::uniform_int_distribution<int> frames_dist(cfg.raw_frames_range.first,
                                                 cfg.raw_frames_range.second);
  std::uniform_int_distribution<int> len_dist(cfg.sentence_len_range.first,
                                              cfg.sentence_len_range.second);
  std::uniform_int_distribution<int> token_dist(0, cfg.vocab_size - 1);
  std::uniform_real_distribution<double> frac_dist(cfg.moment_frac_range.first,
                                                   cfg.moment_frac_range.second);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Corpus corpus;
  corpus.manifest.vocab_size = cfg.vocab_size;
  corpus.manifest.feature_dim = cfg.feature_dim;
  corpus.manifest.seconds_per_frame = 1.0;
  corpus.manifest.split = split;

  for (int vi = 0; vi < cfg.num_videos; ++vi) {
    const int n_raw = frames_dist(rng);
    const int sent_len = len_dist(rng);
    SentenceAnnotation sent;
    sent.token_ids.reserve(static_cast<std::size_t>(sent_len));
    for (int ti = 0; ti < sent_len; ++ti) {
      sent.token_ids.push_back(token_dist(rng));
    }
    const double frac = frac_dist(rng);
    const int moment_len = std::clamp(
        static_cast<int>(std::lround(frac * n_raw)), 1, n_raw);
    std::uniform_int_distribution<int> start_dist(0, n_raw - moment_len);
    const int start = start_dist(rng);

    Vector signal = Vector::Zero(cfg.feature_dim);
    for (int tok : sent.token_ids) {
      signal += protos.row(tok).transpose();
    }
    signal *= cfg.signal_strength / static_cast<double>(sent_len);

    FrameSequence seq;
    seq.features.resize(n_raw, cfg.feature_dim);
    seq.seconds_per_index = 1.0;
    for (int r = 0; r < n_raw; ++r) {
      for (int c = 0; c < cfg.feature_dim; ++c) {
        seq.features(r, c) = cfg.noise_std * gauss(rng);
      }
      if (r >= start && r < start + moment_len) {
        seq.features.row(r) += signal.transpose();
      }
    }

    sent.gt_span_seconds = SecondsSpan{
        static_cast<double>(start), static_cast<double>(start + moment_len)};

    char id[32];
    std::snprintf(id, sizeof(id), "%s_%04d", split_name(split), vi);
    CorpusEntry entry;
    entry.video_id = id;
    entry.feature_path = std::string("features/") + id + ".csv";
    entry.sentences.push_back(std::move(sent));
    corpus.manifest.entries.push_back(std::move(entry));
    corpus.features.push_back(std::move(seq));
  }
  return corpus;
}

FrameSequence mean_pool(const FrameSequence& seq, int stride) {
  if (stride < 1) throw std::invalid_argument("mean_pool: stride must be >= 1");
  seq.validate();
  const Eigen::Index n = seq.features.rows();
  const Eigen::Index n_out = (n + stride - 1) / stride;
  FrameSequence out;
  out.features.resize(n_out, seq.features.cols());
  out.seconds_per_index = seq.seconds_per_index * stride;
  for (Eigen::Index j = 0; j < n_out; ++j) {
    const Eigen::Index lo = j * stride;
    const Eigen::Index hi = std::min<Eigen::Index>(lo + stride, n);
    out.features.row(j) =
        seq.features.middleRows(lo, hi - lo).colwise().mean();
  }
  return out;
}

CorpusManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), "manifest: cannot open '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IngestError("manifest: '" + path.string() + "' is not valid JSON: " +
                      e.what());
  }
  CorpusManifest m;
  try {
    m.split = split_from_name(j.at("split").get<std::string>());
    m.vocab_size = j.at("vocab_size").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.seconds_per_frame = j.value("seconds_per_frame", 1.0);
    for (const json& je : j.at("entries")) {
      CorpusEntry e;
      e.video_id = je.at("video_id").get<std::string>();
      e.feature_path = je.at("feature_path").get<std::string>();
      for (const json& js : je.at("sentences")) {
        SentenceAnnotation s;
        s.token_ids = js.at("token_ids").get<std::vector<int>>();
        if (js.contains("gt_span_seconds")) {
          const json& jg = js.at("gt_span_seconds");
          require(jg.is_array() && jg.size() == 2,
                  "manifest: video '" + e.video_id +
                      "' gt_span_seconds must be a [start, end) pair");
          s.gt_span_seconds =
              SecondsSpan{jg[0].get<double>(), jg[1].get<double>()};
        }
        e.sentences.push_back(std::move(s));
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw IngestError("manifest: '" + path.string() + "' is malformed: " +
                      e.what());
  }
  if (m.split == Split::train) {
    for (const CorpusEntry& e : m.entries) {
      for (const SentenceAnnotation& s : e.sentences) {
        require(!s.gt_span_seconds.has_value(),
                "manifest: train split video '" + e.video_id +
                    "' carries a ground-truth span; train manifests must be "
                    "weakly supervised");
      }
    }
  }
  m.validate();
  return m;
}

void write_manifest(const CorpusManifest& manifest, const fs::path& path) {
  manifest.validate();
  json j;
  j["split"] = split_name(manifest.split);
  j["vocab_size"] = manifest.vocab_size;
  j["feature_dim"] = manifest.feature_dim;
  j["seconds_per_frame"] = manifest.seconds_per_frame;
  j["entries"] = json::array();
  for (const CorpusEntry& e : manifest.entries) {
    json je;
    je["video_id"] = e.video_id;
    je["feature_path"] = e.feature_path;
    je["sentences"] = json::array();
    for (const SentenceAnnotation& s : e.sentences) {
      json js;
      js["token_ids"] = s.token_ids;
      if (s.gt_span_seconds.has_value() && manifest.split != Split::train) {
        js["gt_span_seconds"] = {s.gt_span_seconds->start,
                                 s.gt_span_seconds->end};
      }
      je["sentences"].push_back(std::move(js));
    }
    j["entries"].push_back(std::move(je));
  }
  std::ofstream out(path);
  if (!out.good()) {
    throw IngestError("manifest: cannot write '" + path.string() + "'");
  }
  out << j.dump(2) << '\n';
}

FrameSequence load_features(const fs::path& path, double seconds_per_index) {
  std::ifstream in(path);
  require(in.good(), "features: cannot open '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = line.find(',', pos);
      const std::string cell =
          line.substr(pos, comma == std::string::npos ? std::string::npos
                                                      : comma - pos);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      require(end != cell.c_str() && *end == '\0',
              "features: '" + path.string() + "' line " +
                  std::to_string(lineno) + ": cannot parse '" + cell + "'");
      row.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IngestError("features: '" + path.string() + "' line " +
                        std::to_string(lineno) + ": expected " +
                        std::to_string(rows.front().size()) +
                        " columns, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "features: '" + path.string() + "' has no frames");
  FrameSequence seq;
  seq.features.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      seq.features(static_cast<Eigen::Index>(r),
                   static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  seq.seconds_per_index = seconds_per_index;
  seq.validate();
  return seq;
}

void write_features(const FrameSequence& seq, const fs::path& path) {
  seq.validate();
  std::ofstream out(path);
  if (!out.good()) {
    throw IngestError("features: cannot write '" + path.string() + "'");
  }
  for (Eigen::Index r = 0; r < seq.features.rows(); ++r) {
    for (Eigen::Index c = 0; c < seq.features.cols(); ++c) {
      if (c > 0) out << ',';
      out << format_double(seq.features(r, c));
    }
    out << '\n';
  }
}

Corpus load_corpus(const fs::path& dir) {
  Corpus corpus;
  corpus.manifest = load_manifest(dir / "manifest.json");
  corpus.features.reserve(corpus.manifest.entries.size());
  for (const CorpusEntry& e : corpus.manifest.entries) {
    FrameSequence seq =
        load_features(dir / e.feature_path, corpus.manifest.seconds_per_frame);
    if (seq.features.cols() != corpus.manifest.feature_dim) {
      throw IngestError("corpus: video '" + e.video_id + "' has " +
                        std::to_string(seq.features.cols()) +
                        " feature columns, manifest declares " +
                        std::to_string(corpus.manifest.feature_dim));
    }
    corpus.features.push_back(std::move(seq));
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const fs::path& dir) {
  if (corpus.features.size() != corpus.manifest.entries.size()) {
    throw ContractError(
        "write_corpus: features and manifest entries are not parallel");
  }
  for (std::size_t i = 0; i < corpus.features.size(); ++i) {
    const fs::path target = dir / corpus.manifest.entries[i].feature_path;
    fs::create_directories(target.parent_path());
    write_features(corpus.features[i], target);
  }
  write_manifest(corpus.manifest, dir / "manifest.json");
}

}  // namespace rtbpn
