/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rtbpn/data_synth.hpp"
#include "rtbpn/evaluation.hpp"
#include "rtbpn/model.hpp"
#include "rtbpn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace rtbpn;

// Per-split video counts around one shared synthesis configuration.
struct SynthJob {
  SynthesisConfig base;  // num_videos = train count
  int val_videos = 0;
  int test_videos = 0;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

template <typename T>
void take(const json& j, std::vector<std::string>& seen, const char* key,
          T& out) {
  if (!j.contains(key)) return;
  seen.push_back(key);
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("synth config: key '") + key +
                      "' has the wrong type");
  }
}

template <typename T>
void take_pair(const json& j, std::vector<std::string>& seen, const char* key,
               std::pair<T, T>& out) {
  if (!j.contains(key)) return;
  seen.push_back(key);
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2) {
    throw ConfigError(std::string("synth config: key '") + key +
                      "' must be a [lo, hi] pair");
  }
  try {
    out = {v.at(0).get<T>(), v.at(1).get<T>()};
  } catch (const json::exception&) {
    throw ConfigError(std::string("synth config: key '") + key +
                      "' has the wrong type");
  }
}

SynthJob parse_synth_job(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("synth config: top level must be an object");
  }
  SynthJob job;
  std::vector<std::string> seen;
  take(j, seen, "num_videos", job.base.num_videos);
  take(j, seen, "val_videos", job.val_videos);
  take(j, seen, "test_videos", job.test_videos);
  take_pair(j, seen, "raw_frames_range", job.base.raw_frames_range);
  take(j, seen, "vocab_size", job.base.vocab_size);
  take_pair(j, seen, "sentence_len_range", job.base.sentence_len_range);
  take_pair(j, seen, "moment_frac_range", job.base.moment_frac_range);
  take(j, seen, "signal_strength", job.base.signal_strength);
  take(j, seen, "noise_std", job.base.noise_std);
  take(j, seen, "feature_dim", job.base.feature_dim);
  take(j, seen, "seed", job.base.seed);
  for (const auto& [key, value] : j.items()) {
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
      throw ConfigError("synth config: unknown key '" + key + "'");
    }
  }
  if (job.val_videos < 0 || job.test_videos < 0) {
    throw ConfigError("synth config: split sizes must be non-negative");
  }
  job.base.validate();
  return job;
}

// RTBPN_SEED wins over any configured seed when set.
std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("RTBPN_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long value = std::strtoull(raw, &end, 10);
  if (errno != 0 || end == raw || *end != '\0') {
    throw ConfigError(std::string("RTBPN_SEED must be a non-negative "
                                  "integer, got '") +
                      raw + "'");
  }
  return static_cast<std::uint64_t>(value);
}

void apply_ablations(RunConfig& cfg, const std::vector<std::string>& flags) {
  for (const std::string& flag : flags) {
    if (flag == "no_filter") {
      cfg.ablate.no_filter = true;
    } else if (flag == "no_param_sharing") {
      cfg.ablate.no_param_sharing = true;
    } else if (flag == "visual_only") {
      cfg.ablate.visual_only = true;
    } else if (flag == "selector=topk") {
      cfg.ablate.selector = SelectorKind::topk;
    } else if (flag == "selector=all") {
      cfg.ablate.selector = SelectorKind::all;
    } else if (flag == "selector=center") {
      cfg.ablate.selector = SelectorKind::center;
    } else {
      throw ConfigError(
          "unknown ablation '" + flag +
          "' (expected no_filter, no_param_sharing, visual_only, "
          "selector=center, selector=topk, or selector=all)");
    }
  }
}

std::vector<int> parse_tokens(const std::string& text) {
  std::vector<int> tokens;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    try {
      std::size_t used = 0;
      const int id = std::stoi(word, &used);
      if (used != word.size() || id < 0) throw std::invalid_argument(word);
      tokens.push_back(id);
    } catch (const std::exception&) {
      throw ConfigError("tokens must be non-negative integers, got '" + word +
                        "'");
    }
  }
  if (tokens.empty()) throw ConfigError("no tokens given");
  return tokens;
}

int run_synth(const fs::path& config_path, const fs::path& out_dir) {
  SynthJob job = parse_synth_job(slurp(config_path));
  if (auto seed = env_seed()) job.base.seed = *seed;

  fs::create_directories(out_dir);
  SynthesisConfig cfg = job.base;
  Corpus train = synthesize_corpus(cfg, Split::train);
  write_corpus(train, out_dir / "train");
  std::cout << "train: " << train.size() << " videos\n";
  if (job.val_videos > 0) {
    cfg.num_videos = job.val_videos;
    Corpus val = synthesize_corpus(cfg, Split::val);
    write_corpus(val, out_dir / "val");
    std::cout << "val: " << val.size() << " videos\n";
  }
  if (job.test_videos > 0) {
    cfg.num_videos = job.test_videos;
    Corpus test = synthesize_corpus(cfg, Split::test);
    write_corpus(test, out_dir / "test");
    std::cout << "test: " << test.size() << " videos\n";
  }
  return 0;
}

json bundle_to_json(const LossBundle& b) {
  json j;
  j["gap"] = b.gap;
  j["global"] = b.global;
  j["inter"] = b.inter;
  j["intra"] = b.intra;
  j["total"] = b.total;
  return j;
}

int run_train(const fs::path& config_path, const fs::path& data_dir,
              const fs::path& out_dir,
              const std::vector<std::string>& ablations) {
  RunConfig cfg = run_config_from_json(slurp(config_path));
  apply_ablations(cfg, ablations);
  if (auto seed = env_seed()) cfg.seed = *seed;
  cfg.validate();

  Corpus train = load_corpus(data_dir / "train");
  Corpus val = load_corpus(data_dir / "val");
  FitResult result = fit(train, val, cfg);

  fs::create_directories(out_dir);
  save_checkpoint(out_dir / "checkpoint.json", result.best);

  json history = json::array();
  for (const EpochStats& stats : result.history) {
    json e;
    e["epoch"] = stats.epoch;
    e["train_loss"] = bundle_to_json(stats.train_loss);
    e["val"] = json::parse(report_to_json(stats.val));
    history.push_back(std::move(e));
  }
  json summary;
  summary["best_epoch"] = result.best_epoch;
  summary["history"] = std::move(history);
  std::ofstream hist_out(out_dir / "history.json");
  if (!hist_out) {
    throw IngestError("cannot open '" + (out_dir / "history.json").string() +
                      "' for write");
  }
  hist_out << summary.dump(2) << '\n';

  std::cout << "best epoch: " << result.best_epoch << "\n";
  if (!result.history.empty()) {
    const EpochStats& best =
        result.history[static_cast<std::size_t>(result.best_epoch - 1)];
    std::cout << format_report_table(best.val);
  }
  std::cout << "checkpoint: " << (out_dir / "checkpoint.json").string()
            << "\n";
  return 0;
}

int run_eval(const fs::path& checkpoint_path, const fs::path& data_dir,
             const std::string& split_name_text, const fs::path& report_path,
             const fs::path& predictions_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Split split = split_from_name(split_name_text);
  if (split == Split::train) {
    throw ContractError(
        "the train split carries no ground truth; evaluate val or test");
  }
  Corpus corpus = load_corpus(data_dir / split_name_text);
  auto [report, predictions] = evaluate_split(corpus, ckpt.params, ckpt.cfg);
  write_report(report_path, report);
  if (!predictions_path.empty()) {
    write_predictions(predictions_path, predictions);
  }
  std::cout << format_report_table(report);
  return 0;
}

int run_predict(const fs::path& checkpoint_path, const fs::path& data_dir,
                const std::string& video_id, const std::string& token_text,
                int topn) {
  if (topn < 1) throw ConfigError("topn must be at least 1");
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const std::vector<int> tokens = parse_tokens(token_text);
  for (int id : tokens) {
    if (id >= ckpt.vocab_size) {
      throw ConfigError("token " + std::to_string(id) +
                        " is outside the model vocabulary of " +
                        std::to_string(ckpt.vocab_size));
    }
  }

  // The video may live in any split directory under the data root.
  for (const char* split : {"train", "val", "test"}) {
    const fs::path dir = data_dir / split;
    if (!fs::exists(dir / "manifest.json")) continue;
    Corpus corpus = load_corpus(dir);
    for (std::size_t v = 0; v < corpus.size(); ++v) {
      if (corpus.manifest.entries[v].video_id != video_id) continue;
      FrameSequence pooled = pooled_frames(corpus.features[v], ckpt.cfg);
      ProposalSet set =
          predict_proposals(pooled.features, tokens, ckpt.params, ckpt.cfg);
      PredictionRecord rec =
          spans_from_proposals(set, pooled.seconds_per_index, video_id);
      if (topn > 1) rec.spans = nms(rec.spans, 0.55);
      if (static_cast<int>(rec.spans.size()) > topn) {
        rec.spans.resize(static_cast<std::size_t>(topn));
      }
      json out;
      out["spans"] = json::array();
      for (const ScoredSpan& s : rec.spans) {
        out["spans"].push_back(
            json::array({s.span.start, s.span.end, s.score}));
      }
      out["video_id"] = rec.video_id;
      std::cout << out.dump() << "\n";
      return 0;
    }
  }
  throw IngestError("video '" + video_id + "' not found under '" +
                    data_dir.string() + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-branch proposal network for temporal moment retrieval"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint_path;
  std::string split = "test", report_path, predictions_path;
  std::string video_id, token_text;
  std::vector<std::string> ablations;
  int topn = 5;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--config", config_path, "synthesis config JSON")
      ->required();
  synth->add_option("--out", out_dir, "output corpus directory")->required();

  CLI::App* train = app.add_subcommand("train", "train on a corpus");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--data", data_dir, "corpus root directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--ablate", ablations,
                    "ablation switch (repeatable): no_filter, "
                    "no_param_sharing, visual_only, selector=center, "
                    "selector=topk, selector=all");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")
      ->required();
  eval_cmd->add_option("--data", data_dir, "corpus root directory")
      ->required();
  eval_cmd->add_option("--split", split, "val or test (default test)");
  eval_cmd->add_option("--report", report_path, "report JSON destination")
      ->required();
  eval_cmd->add_option("--predictions", predictions_path,
                       "optional predictions JSONL destination");

  CLI::App* predict = app.add_subcommand("predict", "rank moments for a query");
  predict->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")
      ->required();
  predict->add_option("--data", data_dir, "corpus root directory")->required();
  predict->add_option("--video", video_id, "video identifier")->required();
  predict->add_option("--tokens", token_text,
                      "space-separated token ids, e.g. \"3 17 4\"")
      ->required();
  predict->add_option("--topn", topn, "number of moments to keep (default 5)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(config_path, out_dir);
    if (train->parsed()) {
      return run_train(config_path, data_dir, out_dir, ablations);
    }
    if (eval_cmd->parsed()) {
      return run_eval(checkpoint_path, data_dir, split, report_path,
                      predictions_path);
    }
    if (predict->parsed()) {
      return run_predict(checkpoint_path, data_dir, video_id, token_text,
                         topn);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
