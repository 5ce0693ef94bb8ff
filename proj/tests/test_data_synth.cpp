/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "rtbpn/data_synth.hpp"

using namespace rtbpn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    std::mt19937_64 rng(std::random_device{}());
    path = fs::temp_directory_path() /
           ("rtbpn_" + tag + "_" + std::to_string(rng()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthesisConfig small_config() {
  SynthesisConfig cfg;
  cfg.num_videos = 6;
  cfg.raw_frames_range = {16, 32};
  cfg.vocab_size = 12;
  cfg.sentence_len_range = {2, 5};
  cfg.moment_frac_range = {0.2, 0.5};
  cfg.signal_strength = 1.5;
  cfg.noise_std = 1.0;
  cfg.feature_dim = 5;
  cfg.seed = 7;
  return cfg;
}

bool manifests_equal(const CorpusManifest& a, const CorpusManifest& b) {
  if (a.vocab_size != b.vocab_size || a.feature_dim != b.feature_dim ||
      a.seconds_per_frame != b.seconds_per_frame || a.split != b.split ||
      a.entries.size() != b.entries.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const CorpusEntry& ea = a.entries[i];
    const CorpusEntry& eb = b.entries[i];
    if (ea.video_id != eb.video_id || ea.feature_path != eb.feature_path ||
        ea.sentences.size() != eb.sentences.size()) {
      return false;
    }
    for (std::size_t s = 0; s < ea.sentences.size(); ++s) {
      const SentenceAnnotation& sa = ea.sentences[s];
      const SentenceAnnotation& sb = eb.sentences[s];
      if (sa.token_ids != sb.token_ids) return false;
      if (sa.gt_span_seconds.has_value() != sb.gt_span_seconds.has_value()) {
        return false;
      }
      if (sa.gt_span_seconds.has_value() &&
          (sa.gt_span_seconds->start != sb.gt_span_seconds->start ||
           sa.gt_span_seconds->end != sb.gt_span_seconds->end)) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("mean_pool averages fixed-stride windows") {
  FrameSequence seq;
  seq.features.resize(4, 1);
  seq.features << 1, 3, 5, 7;
  seq.seconds_per_index = 1.0;
  FrameSequence out = mean_pool(seq, 2);
  REQUIRE(out.features.rows() == 2);
  CHECK(out.features(0, 0) == doctest::Approx(2.0));
  CHECK(out.features(1, 0) == doctest::Approx(6.0));
  CHECK(out.seconds_per_index == doctest::Approx(2.0));
}

TEST_CASE("mean_pool with stride 1 is the identity") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss;
  FrameSequence seq;
  seq.features.resize(7, 3);
  for (Eigen::Index r = 0; r < 7; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) seq.features(r, c) = gauss(rng);
  seq.seconds_per_index = 0.5;
  FrameSequence out = mean_pool(seq, 1);
  CHECK(out.features == seq.features);
  CHECK(out.seconds_per_index == seq.seconds_per_index);
}

TEST_CASE("mean_pool ragged tail matches an explicit window oracle") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> gauss;
  FrameSequence seq;
  seq.features.resize(5, 2);
  for (Eigen::Index r = 0; r < 5; ++r)
    for (Eigen::Index c = 0; c < 2; ++c) seq.features(r, c) = gauss(rng);
  seq.seconds_per_index = 1.0;

  const int stride = 4;
  FrameSequence out = mean_pool(seq, stride);
  REQUIRE(out.features.rows() == 2);

  // Oracle: iterate the window definition directly.
  Matrix expect(2, 2);
  for (int j = 0; j < 2; ++j) {
    const int lo = j * stride;
    const int hi = std::min(lo + stride, 5);
    Vector acc = Vector::Zero(2);
    for (int r = lo; r < hi; ++r) acc += seq.features.row(r).transpose();
    expect.row(j) = (acc / (hi - lo)).transpose();
  }
  CHECK((out.features - expect).cwiseAbs().maxCoeff() < 1e-15);
  // Second output row covers row 4 alone.
  CHECK(out.features.row(1) == seq.features.row(4));
}

TEST_CASE("mean_pool commutes with row-wise scaling") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss;
  FrameSequence seq;
  seq.features.resize(9, 4);
  for (Eigen::Index r = 0; r < 9; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) seq.features(r, c) = gauss(rng);
  seq.seconds_per_index = 1.0;

  const double scale = 2.75;
  FrameSequence scaled = seq;
  scaled.features *= scale;

  FrameSequence a = mean_pool(scaled, 4);
  FrameSequence b = mean_pool(seq, 4);
  b.features *= scale;
  CHECK((a.features - b.features).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mean_pool rejects stride below one") {
  FrameSequence seq;
  seq.features = Matrix::Ones(2, 2);
  CHECK_THROWS_AS(mean_pool(seq, 0), std::invalid_argument);
}

TEST_CASE("synthesis config validation rejects bad ranges") {
  SynthesisConfig cfg = small_config();
  cfg.num_videos = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.raw_frames_range = {8, 4};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.moment_frac_range = {0.0, 0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.moment_frac_range = {0.2, 1.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.noise_std = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.feature_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("same seed synthesizes byte-identical corpora on disk") {
  const SynthesisConfig cfg = small_config();
  Corpus a = synthesize_corpus(cfg, Split::val);
  Corpus b = synthesize_corpus(cfg, Split::val);

  TempDir da("synth_a"), db("synth_b");
  write_corpus(a, da.path);
  write_corpus(b, db.path);

  CHECK(slurp(da.path / "manifest.json") == slurp(db.path / "manifest.json"));
  for (const CorpusEntry& e : a.manifest.entries) {
    CHECK(slurp(da.path / e.feature_path) == slurp(db.path / e.feature_path));
  }
}

TEST_CASE("different seeds and splits give different corpora") {
  SynthesisConfig cfg = small_config();
  Corpus train = synthesize_corpus(cfg, Split::train);
  Corpus val = synthesize_corpus(cfg, Split::val);
  CHECK(train.features[0].features != val.features[0].features);

  cfg.seed = 8;
  Corpus other = synthesize_corpus(cfg, Split::train);
  CHECK(train.features[0].features != other.features[0].features);
}

TEST_CASE("token prototypes are shared across splits and seeded") {
  const SynthesisConfig cfg = small_config();
  Matrix p1 = token_prototypes(cfg);
  Matrix p2 = token_prototypes(cfg);
  REQUIRE(p1.rows() == cfg.vocab_size);
  REQUIRE(p1.cols() == cfg.feature_dim);
  CHECK(p1 == p2);

  SynthesisConfig other = cfg;
  other.seed = 99;
  CHECK(token_prototypes(other) != p1);
}

TEST_CASE("planted moments carry the sentence prototype mean") {
  SynthesisConfig cfg = small_config();
  cfg.noise_std = 0.0;  // isolate the planted signal
  cfg.signal_strength = 2.0;
  Corpus corpus = synthesize_corpus(cfg, Split::val);
  const Matrix protos = token_prototypes(cfg);

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const CorpusEntry& e = corpus.manifest.entries[i];
    const SentenceAnnotation& s = e.sentences[0];
    const SecondsSpan& span = corpus.manifest.gt_span(i, 0);
    Vector mean = Vector::Zero(cfg.feature_dim);
    for (int tok : s.token_ids) mean += protos.row(tok).transpose();
    mean *= cfg.signal_strength / static_cast<double>(s.token_ids.size());

    const Matrix& f = corpus.features[i].features;
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
      const bool in_span = r >= static_cast<Eigen::Index>(span.start) &&
                           r < static_cast<Eigen::Index>(span.end);
      if (in_span) {
        CHECK((f.row(r).transpose() - mean).cwiseAbs().maxCoeff() < 1e-12);
      } else {
        CHECK(f.row(r).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("zero signal erases the in-span / out-of-span distinction") {
  SynthesisConfig cfg = small_config();
  cfg.num_videos = 40;
  cfg.signal_strength = 0.0;
  Corpus corpus = synthesize_corpus(cfg, Split::val);

  double in_sum = 0.0, out_sum = 0.0;
  long in_n = 0, out_n = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const SecondsSpan& span = corpus.manifest.gt_span(i, 0);
    const Matrix& f = corpus.features[i].features;
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
      const bool in_span = r >= static_cast<Eigen::Index>(span.start) &&
                           r < static_cast<Eigen::Index>(span.end);
      const double row_mean = f.row(r).mean();
      if (in_span) {
        in_sum += row_mean;
        ++in_n;
      } else {
        out_sum += row_mean;
        ++out_n;
      }
    }
  }
  REQUIRE(in_n > 100);
  REQUIRE(out_n > 100);
  // Both populations are pure noise with mean 0; their averages agree.
  CHECK(std::abs(in_sum / in_n) < 0.1);
  CHECK(std::abs(out_sum / out_n) < 0.1);
}

TEST_CASE("ground-truth access is forbidden on the train split") {
  Corpus train = synthesize_corpus(small_config(), Split::train);
  CHECK_THROWS_AS(train.manifest.gt_span(0, 0), ContractError);

  Corpus val = synthesize_corpus(small_config(), Split::val);
  const SecondsSpan& span = val.manifest.gt_span(0, 0);
  CHECK(span.start < span.end);
}

TEST_CASE("corpus round-trip through disk is lossless") {
  Corpus corpus = synthesize_corpus(small_config(), Split::test);
  TempDir dir("roundtrip");
  write_corpus(corpus, dir.path);
  Corpus loaded = load_corpus(dir.path);

  CHECK(manifests_equal(corpus.manifest, loaded.manifest));
  REQUIRE(loaded.features.size() == corpus.features.size());
  for (std::size_t i = 0; i < corpus.features.size(); ++i) {
    CHECK(loaded.features[i].features == corpus.features[i].features);
    CHECK(loaded.features[i].seconds_per_index ==
          corpus.features[i].seconds_per_index);
  }
}

TEST_CASE("train manifests are written without ground truth") {
  Corpus corpus = synthesize_corpus(small_config(), Split::train);
  TempDir dir("train_strip");
  write_corpus(corpus, dir.path);
  CorpusManifest loaded = load_manifest(dir.path / "manifest.json");
  for (const CorpusEntry& e : loaded.entries) {
    for (const SentenceAnnotation& s : e.sentences) {
      CHECK(!s.gt_span_seconds.has_value());
    }
  }
}

TEST_CASE("train manifests carrying ground truth are rejected at load") {
  Corpus corpus = synthesize_corpus(small_config(), Split::val);
  corpus.manifest.split = Split::train;  // forge an annotated train manifest
  TempDir dir("train_guard");
  fs::create_directories(dir.path);
  // write_manifest strips spans for train, so assemble the JSON directly.
  std::ofstream out(dir.path / "manifest.json");
  out << R"({"split":"train","vocab_size":4,"feature_dim":1,)"
      << R"("entries":[{"video_id":"x","feature_path":"x.csv",)"
      << R"("sentences":[{"token_ids":[0],"gt_span_seconds":[0.0,1.0]}]}]})";
  out.close();
  CHECK_THROWS_AS(load_manifest(dir.path / "manifest.json"), IngestError);
}

TEST_CASE("feature width mismatch names the offending video") {
  Corpus corpus = synthesize_corpus(small_config(), Split::val);
  TempDir dir("mismatch");
  write_corpus(corpus, dir.path);
  // Rewrite the third video with one column fewer than the manifest declares.
  const CorpusEntry& victim = corpus.manifest.entries[2];
  FrameSequence narrow;
  narrow.features = Matrix::Ones(4, small_config().feature_dim - 1);
  write_features(narrow, dir.path / victim.feature_path);

  try {
    load_corpus(dir.path);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find(victim.video_id) != std::string::npos);
  }
}

TEST_CASE("hand-written CSV parses to the literal matrix") {
  TempDir dir("csv");
  const fs::path p = dir.path / "tiny.csv";
  std::ofstream out(p);
  out << "1.0,2.0\n3.0,4.0\n";
  out.close();
  FrameSequence seq = load_features(p);
  REQUIRE(seq.features.rows() == 2);
  REQUIRE(seq.features.cols() == 2);
  CHECK(seq.features(0, 0) == 1.0);
  CHECK(seq.features(0, 1) == 2.0);
  CHECK(seq.features(1, 0) == 3.0);
  CHECK(seq.features(1, 1) == 4.0);
}

TEST_CASE("malformed CSV cells raise ingestion errors naming the line") {
  TempDir dir("badcsv");
  const fs::path p = dir.path / "bad.csv";
  std::ofstream out(p);
  out << "1.0,2.0\n3.0,oops\n";
  out.close();
  try {
    load_features(p);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("oops") != std::string::npos);
  }
}

TEST_CASE("ragged CSV rows raise ingestion errors") {
  TempDir dir("ragged");
  const fs::path p = dir.path / "ragged.csv";
  std::ofstream out(p);
  out << "1.0,2.0\n3.0\n";
  out.close();
  CHECK_THROWS_AS(load_features(p), IngestError);
}

TEST_CASE("missing files raise ingestion errors") {
  TempDir dir("missing");
  CHECK_THROWS_AS(load_features(dir.path / "nope.csv"), IngestError);
  CHECK_THROWS_AS(load_manifest(dir.path / "nope.json"), IngestError);
}

TEST_CASE("feature round-trip preserves doubles exactly") {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> gauss;
  FrameSequence seq;
  seq.features.resize(6, 3);
  for (Eigen::Index r = 0; r < 6; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) seq.features(r, c) = gauss(rng) * 1e-7;
  seq.features(0, 0) = 1.0 / 3.0;
  seq.features(1, 1) = -2.2250738585072014e-308;  // smallest normal double
  TempDir dir("exact");
  const fs::path p = dir.path / "exact.csv";
  write_features(seq, p);
  FrameSequence back = load_features(p);
  CHECK(back.features == seq.features);
}

TEST_CASE("gt spans respect video duration") {
  Corpus corpus = synthesize_corpus(small_config(), Split::test);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const SecondsSpan& span = corpus.manifest.gt_span(i, 0);
    CHECK(span.start >= 0.0);
    CHECK(span.end <= corpus.features[i].duration_seconds());
    CHECK(span.start < span.end);
  }
}
