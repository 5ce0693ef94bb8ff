/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace rtbpn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// splitmix64 finalizer decorrelating the per-purpose streams of one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kTagInit = 16;
constexpr std::uint64_t kTagOrder = 17;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array()) {
    throw IngestError("checkpoint: tensor '" + name + "' is not an array");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw IngestError("checkpoint: tensor '" + name +
                        "' has ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

void assign_named(ModelParams& params, const json& tensors,
                  const std::string& scope) {
  std::size_t used = 0;
  params.visit([&](const char* name, Matrix& mat) {
    if (!tensors.contains(name)) {
      throw IngestError("checkpoint: missing tensor '" + scope + name + "'");
    }
    Matrix loaded = matrix_from_json(tensors.at(name), name);
    if (loaded.rows() != mat.rows() || loaded.cols() != mat.cols()) {
      throw IngestError("checkpoint: tensor '" + scope + name +
                        "' has shape " + std::to_string(loaded.rows()) + "x" +
                        std::to_string(loaded.cols()) + ", expected " +
                        std::to_string(mat.rows()) + "x" +
                        std::to_string(mat.cols()));
    }
    mat = std::move(loaded);
    ++used;
  });
  if (used != tensors.size()) {
    throw IngestError("checkpoint: " +
                      std::to_string(tensors.size() - used) +
                      " unrecognized tensors under '" + scope + "'");
  }
}

const std::vector<int>& item_tokens(const CorpusManifest& manifest,
                                    const TrainItem& item) {
  return manifest.entries[item.video].sentences[item.sentence].token_ids;
}

}  // namespace

GradientSet GradientSet::zeros_like(ModelParams& params) {
  GradientSet g;
  params.visit([&](const char* name, Matrix& mat) {
    g.names.emplace_back(name);
    g.grads.push_back(Matrix::Zero(mat.rows(), mat.cols()));
  });
  return g;
}

void GradientSet::accumulate(const ad::Tape& tape, ModelParams& params) {
  std::size_t i = 0;
  params.visit([&](const char* name, Matrix& mat) {
    if (i >= grads.size() || names[i] != name) {
      throw ContractError("gradient slots do not match the parameter set");
    }
    grads[i] += tape.grad_of(mat);
    ++i;
  });
}

void GradientSet::scale(double factor) {
  for (Matrix& g : grads) g *= factor;
}

AdamState AdamState::zeros_like(ModelParams& params) {
  AdamState st;
  params.visit([&](const char* name, Matrix& mat) {
    st.names.emplace_back(name);
    st.m.push_back(Matrix::Zero(mat.rows(), mat.cols()));
    st.v.push_back(Matrix::Zero(mat.rows(), mat.cols()));
  });
  return st;
}

void adam_update(ModelParams& params, const GradientSet& grads,
                 AdamState& state, double lr) {
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  ++state.step;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  std::size_t i = 0;
  params.visit([&](const char* name, Matrix& w) {
    if (i >= grads.grads.size() || grads.names[i] != name ||
        i >= state.m.size() || state.names[i] != name) {
      throw ContractError("optimizer slots do not match the parameter set");
    }
    const Matrix& g = grads.grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i].array() =
        b2 * state.v[i].array() + (1.0 - b2) * g.array().square();
    const auto m_hat = state.m[i].array() / corr1;
    const auto v_hat = state.v[i].array() / corr2;
    w.array() -= lr * m_hat / (v_hat.sqrt() + eps);
    ++i;
  });
}

TrainContext TrainContext::build(const Corpus& corpus, const RunConfig& cfg) {
  if (corpus.size() == 0) throw ConfigError("corpus has no videos");
  if (corpus.manifest.feature_dim != cfg.feature_dim) {
    throw ConfigError("config feature_dim " + std::to_string(cfg.feature_dim) +
                      " does not match the corpus feature dim " +
                      std::to_string(corpus.manifest.feature_dim));
  }
  TrainContext ctx;
  ctx.manifest = &corpus.manifest;
  ctx.frames.reserve(corpus.size());
  ctx.seconds_per_index.reserve(corpus.size());
  for (const FrameSequence& raw : corpus.features) {
    FrameSequence pooled = pooled_frames(raw, cfg);
    ctx.frames.push_back(std::move(pooled.features));
    ctx.seconds_per_index.push_back(pooled.seconds_per_index);
  }
  return ctx;
}

std::vector<TrainItem> TrainContext::all_items() const {
  std::vector<TrainItem> items;
  for (std::size_t v = 0; v < manifest->entries.size(); ++v) {
    for (std::size_t s = 0; s < manifest->entries[v].sentences.size(); ++s) {
      items.push_back(TrainItem{v, s});
    }
  }
  return items;
}

LossBundle train_step(const TrainContext& ctx,
                      const std::vector<TrainItem>& items,
                      const std::vector<NegativeChoice>& negatives,
                      ModelParams& params, AdamState& adam,
                      const RunConfig& cfg) {
  if (items.empty()) throw std::invalid_argument("train_step: empty batch");
  if (items.size() != negatives.size()) {
    throw std::invalid_argument(
        "train_step: one mismatched pair is required per item");
  }
  GradientSet grads = GradientSet::zeros_like(params);
  LossBundle mean;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const TrainItem& item = items[i];
    const NegativeChoice& neg = negatives[i];
    ad::Tape tape;
    LossBundle values;
    ad::Var total = item_loss(
        tape, ctx.frames[item.video], item_tokens(*ctx.manifest, item),
        ctx.frames[neg.video_index],
        ctx.manifest->entries[neg.sentence_video]
            .sentences[neg.sentence_index]
            .token_ids,
        params, cfg, &values);
    tape.backward(total);
    grads.accumulate(tape, params);
    mean.intra += values.intra;
    mean.inter += values.inter;
    mean.global += values.global;
    mean.gap += values.gap;
    mean.total += values.total;
  }
  const double inv = 1.0 / static_cast<double>(items.size());
  grads.scale(inv);
  mean.intra *= inv;
  mean.inter *= inv;
  mean.global *= inv;
  mean.gap *= inv;
  mean.total *= inv;
  adam_update(params, grads, adam, cfg.lr);
  return mean;
}

LossBundle train_step(const TrainContext& ctx,
                      const std::vector<TrainItem>& items, ModelParams& params,
                      AdamState& adam, const RunConfig& cfg,
                      std::mt19937_64& rng) {
  std::vector<std::size_t> videos;
  videos.reserve(items.size());
  for (const TrainItem& item : items) videos.push_back(item.video);
  const std::vector<NegativeChoice> negatives =
      sample_negatives(videos, *ctx.manifest, rng);
  return train_step(ctx, items, negatives, params, adam, cfg);
}

std::pair<EvalReport, std::vector<PredictionRecord>> evaluate_split(
    const Corpus& corpus, ModelParams& params, const RunConfig& cfg) {
  TrainContext ctx = TrainContext::build(corpus, cfg);
  std::vector<PredictionRecord> predictions;
  std::vector<SecondsSpan> ground_truth;
  for (std::size_t v = 0; v < corpus.manifest.entries.size(); ++v) {
    const CorpusEntry& entry = corpus.manifest.entries[v];
    for (std::size_t s = 0; s < entry.sentences.size(); ++s) {
      ProposalSet set = predict_proposals(
          ctx.frames[v], entry.sentences[s].token_ids, params, cfg);
      predictions.push_back(spans_from_proposals(
          set, ctx.seconds_per_index[v], entry.video_id));
      ground_truth.push_back(corpus.manifest.gt_span(v, s));
    }
  }
  EvalReport report = evaluate(predictions, ground_truth);
  return {std::move(report), std::move(predictions)};
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  json j;
  j["adam"]["step"] = ckpt.adam.step;
  for (std::size_t i = 0; i < ckpt.adam.names.size(); ++i) {
    j["adam"]["m"][ckpt.adam.names[i]] = matrix_to_json(ckpt.adam.m[i]);
    j["adam"]["v"][ckpt.adam.names[i]] = matrix_to_json(ckpt.adam.v[i]);
  }
  j["config"] = json::parse(run_config_to_json(ckpt.cfg));
  j["config_hash"] = ckpt.cfg_hash;
  j["epoch"] = ckpt.epoch;
  // visit() needs a mutable receiver; serialization does not modify.
  ModelParams& mutable_params = const_cast<ModelParams&>(ckpt.params);
  mutable_params.visit([&](const char* name, Matrix& mat) {
    j["params"][name] = matrix_to_json(mat);
  });
  j["rng_state"] = ckpt.rng_state;
  j["vocab_size"] = ckpt.vocab_size;
  std::ofstream out(path);
  if (!out) throw IngestError("cannot open '" + path.string() + "' for write");
  out << j.dump(1) << '\n';
  if (!out) throw IngestError("short write to '" + path.string() + "'");
}

Checkpoint load_checkpoint(const fs::path& path, bool force) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IngestError("checkpoint '" + path.string() + "': invalid JSON: " +
                      e.what());
  }
  try {
    Checkpoint ckpt;
    ckpt.cfg = run_config_from_json(j.at("config").dump());
    ckpt.cfg_hash = j.at("config_hash").get<std::uint64_t>();
    const std::uint64_t expected = config_hash(ckpt.cfg);
    if (ckpt.cfg_hash != expected && !force) {
      throw IngestError(
          "checkpoint '" + path.string() +
          "': config hash mismatch (stored " + std::to_string(ckpt.cfg_hash) +
          ", recomputed " + std::to_string(expected) +
          "); pass force to load anyway");
    }
    ckpt.vocab_size = j.at("vocab_size").get<int>();
    ckpt.epoch = j.at("epoch").get<int>();
    ckpt.rng_state = j.at("rng_state").get<std::string>();
    std::mt19937_64 dummy(0);
    ckpt.params = ModelParams::init(ckpt.cfg, ckpt.vocab_size, dummy);
    assign_named(ckpt.params, j.at("params"), "params.");
    ckpt.adam = AdamState::zeros_like(ckpt.params);
    ckpt.adam.step = j.at("adam").at("step").get<long>();
    const json& am = j.at("adam").at("m");
    const json& av = j.at("adam").at("v");
    for (std::size_t i = 0; i < ckpt.adam.names.size(); ++i) {
      const std::string& name = ckpt.adam.names[i];
      if (!am.contains(name) || !av.contains(name)) {
        throw IngestError("checkpoint: missing optimizer slot '" + name + "'");
      }
      Matrix m = matrix_from_json(am.at(name), name);
      Matrix v = matrix_from_json(av.at(name), name);
      if (m.rows() != ckpt.adam.m[i].rows() ||
          m.cols() != ckpt.adam.m[i].cols() ||
          v.rows() != ckpt.adam.v[i].rows() ||
          v.cols() != ckpt.adam.v[i].cols()) {
        throw IngestError("checkpoint: optimizer slot '" + name +
                          "' has the wrong shape");
      }
      ckpt.adam.m[i] = std::move(m);
      ckpt.adam.v[i] = std::move(v);
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw IngestError("checkpoint '" + path.string() +
                      "': missing or mistyped field: " + e.what());
  }
}

FitResult fit(const Corpus& train, const Corpus& val, const RunConfig& cfg) {
  cfg.validate();
  if (train.manifest.split != Split::train) {
    throw ContractError("fit: the training corpus must carry the train split");
  }
  if (train.manifest.vocab_size != val.manifest.vocab_size) {
    throw ConfigError("fit: train and validation vocabularies differ");
  }
  TrainContext ctx = TrainContext::build(train, cfg);
  std::mt19937_64 init_rng(mix_seed(cfg.seed, kTagInit));
  std::mt19937_64 order_rng(mix_seed(cfg.seed, kTagOrder));
  ModelParams params =
      ModelParams::init(cfg, train.manifest.vocab_size, init_rng);
  AdamState adam = AdamState::zeros_like(params);

  auto snapshot = [&](int epoch) {
    Checkpoint ckpt;
    ckpt.cfg = cfg;
    ckpt.cfg_hash = config_hash(cfg);
    ckpt.vocab_size = train.manifest.vocab_size;
    ckpt.epoch = epoch;
    std::ostringstream state;
    state << order_rng;
    ckpt.rng_state = state.str();
    ckpt.params = params;
    ckpt.adam = adam;
    return ckpt;
  };

  FitResult result;
  double best_r1 = -1.0;
  const std::vector<TrainItem> base_items = ctx.all_items();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<TrainItem> order = base_items;
    std::shuffle(order.begin(), order.end(), order_rng);
    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                              order.size());
    LossBundle epoch_mean;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < order.size(); at += batch) {
      const std::size_t take = std::min(batch, order.size() - at);
      std::vector<TrainItem> slice(order.begin() + static_cast<long>(at),
                                   order.begin() +
                                       static_cast<long>(at + take));
      LossBundle step = train_step(ctx, slice, params, adam, cfg, order_rng);
      epoch_mean.intra += step.intra * static_cast<double>(take);
      epoch_mean.inter += step.inter * static_cast<double>(take);
      epoch_mean.global += step.global * static_cast<double>(take);
      epoch_mean.gap += step.gap * static_cast<double>(take);
      epoch_mean.total += step.total * static_cast<double>(take);
      seen += take;
    }
    const double inv = 1.0 / static_cast<double>(seen);
    epoch_mean.intra *= inv;
    epoch_mean.inter *= inv;
    epoch_mean.global *= inv;
    epoch_mean.gap *= inv;
    epoch_mean.total *= inv;

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_mean;
    stats.val = evaluate_split(val, params, cfg).first;
    const double r1 = stats.val.recall_value(1, 0.5);
    result.history.push_back(std::move(stats));
    if (r1 > best_r1) {
      best_r1 = r1;
      result.best = snapshot(epoch);
      result.best_epoch = epoch;
    }
  }
  if (result.history.empty()) {
    result.best = snapshot(0);
    result.best_epoch = 0;
  }
  return result;
}

}  // namespace rtbpn
