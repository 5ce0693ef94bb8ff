/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

#include <json.hpp>

namespace rtbpn {

using nlohmann::json;

namespace {

void require_cfg(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

// Consumes one key from `seen` so leftovers can be reported as unknown.
template <typename T>
void take(const json& j, std::vector<std::string>& seen, const char* key,
          T& out) {
  if (!j.contains(key)) return;
  seen.push_back(key);
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key '") + key +
                      "' has the wrong type");
  }
}

void reject_unknown(const json& j, const std::vector<std::string>& seen,
                    const std::string& scope) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
      throw ConfigError("config: unknown key '" + scope + key + "'");
    }
  }
}

// Builds the language-aware relevance column and gates the two streams.
// Returns (enhanced, suppressed, normalized relevance).
struct StreamSplit {
  ad::Var enhanced;
  ad::Var suppressed;
  ad::Var relevance;
};

StreamSplit split_by_relevance(ad::Tape& tape, ad::Var V, ad::Var Q,
                               ModelParams& params, const RunConfig& cfg) {
  ad::Var normalized;
  if (cfg.ablate.visual_only) {
    ad::Var per_frame = visual_only_score(tape, V, params.filter.visual);
    normalized = max_min_normalize(tape, per_frame);
  } else {
    ad::Var U = netvlad_aggregate(tape, Q, params.filter.bank);
    ad::Var raw = score_frames(tape, V, U, params.filter.scorer);
    auto [per_frame, norm] = reduce_and_normalize(tape, raw);
    normalized = norm;
  }
  auto [enhanced, suppressed] = split_streams(tape, V, normalized);
  return StreamSplit{enhanced, suppressed, normalized};
}

void check_frames(const Matrix& frames, const RunConfig& cfg) {
  if (frames.rows() < 1) {
    throw std::invalid_argument("forward: empty frame sequence");
  }
  if (frames.cols() != cfg.feature_dim) {
    throw std::invalid_argument(
        "forward: frame feature width " + std::to_string(frames.cols()) +
        " does not match the configured " + std::to_string(cfg.feature_dim));
  }
}

}  // namespace

SamplingRule RunConfig::rule_for(int n_v) const {
  switch (sampling) {
    case SamplingRule::Kind::all_pairs:
      return SamplingRule::all_pairs(n_v);
    case SamplingRule::Kind::parity:
      return SamplingRule::parity(sampling_modulus, n_v);
    case SamplingRule::Kind::stride_multiple:
      return SamplingRule::stride_multiple(sampling_modulus, n_v);
  }
  throw ConfigError("config: unknown sampling rule");
}

void RunConfig::validate() const {
  require_cfg(feature_dim >= 1, "config: feature_dim must be positive");
  require_cfg(hidden_dim >= 1, "config: hidden_dim must be positive");
  require_cfg(embed_dim >= 1, "config: embed_dim must be positive");
  require_cfg(encoder_hidden >= 1, "config: encoder_hidden must be positive");
  require_cfg(num_centers >= 1, "config: num_centers must be positive");
  require_cfg(T >= 1, "config: T must be positive");
  require_cfg(kernel == 3 || kernel == 9, "config: kernel must be 3 or 9");
  require_cfg(sampling_modulus >= 1,
              "config: sampling_modulus must be positive");
  require_cfg(pooling_stride >= 1, "config: pooling_stride must be positive");
  require_cfg(lr > 0.0, "config: lr must be positive");
  require_cfg(batch_size >= 1, "config: batch_size must be positive");
  require_cfg(epochs >= 0, "config: epochs must be non-negative");
  loss.validate();
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["T"] = cfg.T;
  j["ablate"]["no_filter"] = cfg.ablate.no_filter;
  j["ablate"]["no_param_sharing"] = cfg.ablate.no_param_sharing;
  j["ablate"]["selector"] = to_string(cfg.ablate.selector);
  j["ablate"]["visual_only"] = cfg.ablate.visual_only;
  j["batch_size"] = cfg.batch_size;
  j["embed_dim"] = cfg.embed_dim;
  j["encoder_hidden"] = cfg.encoder_hidden;
  j["epochs"] = cfg.epochs;
  j["feature_dim"] = cfg.feature_dim;
  j["freeze_embedding"] = cfg.freeze_embedding;
  j["hidden_dim"] = cfg.hidden_dim;
  j["kernel"] = cfg.kernel;
  j["loss"]["lambda_gap"] = cfg.loss.lambda_gap;
  j["loss"]["lambda_global"] = cfg.loss.lambda_global;
  j["loss"]["lambda_inter"] = cfg.loss.lambda_inter;
  j["loss"]["lambda_intra"] = cfg.loss.lambda_intra;
  j["loss"]["margin_inter"] = cfg.loss.margin_inter;
  j["loss"]["margin_intra"] = cfg.loss.margin_intra;
  j["lr"] = cfg.lr;
  j["num_centers"] = cfg.num_centers;
  j["pooling_stride"] = cfg.pooling_stride;
  j["sampling"] = to_string(cfg.sampling);
  j["sampling_modulus"] = cfg.sampling_modulus;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig cfg;
  std::vector<std::string> seen;
  take(j, seen, "T", cfg.T);
  take(j, seen, "batch_size", cfg.batch_size);
  take(j, seen, "embed_dim", cfg.embed_dim);
  take(j, seen, "encoder_hidden", cfg.encoder_hidden);
  take(j, seen, "epochs", cfg.epochs);
  take(j, seen, "feature_dim", cfg.feature_dim);
  take(j, seen, "freeze_embedding", cfg.freeze_embedding);
  take(j, seen, "hidden_dim", cfg.hidden_dim);
  take(j, seen, "kernel", cfg.kernel);
  take(j, seen, "lr", cfg.lr);
  take(j, seen, "num_centers", cfg.num_centers);
  take(j, seen, "pooling_stride", cfg.pooling_stride);
  take(j, seen, "sampling_modulus", cfg.sampling_modulus);
  take(j, seen, "seed", cfg.seed);
  if (j.contains("sampling")) {
    seen.push_back("sampling");
    cfg.sampling = sampling_kind_from_name(j.at("sampling").get<std::string>());
  }
  if (j.contains("loss")) {
    seen.push_back("loss");
    const json& l = j.at("loss");
    std::vector<std::string> lseen;
    take(l, lseen, "lambda_gap", cfg.loss.lambda_gap);
    take(l, lseen, "lambda_global", cfg.loss.lambda_global);
    take(l, lseen, "lambda_inter", cfg.loss.lambda_inter);
    take(l, lseen, "lambda_intra", cfg.loss.lambda_intra);
    take(l, lseen, "margin_inter", cfg.loss.margin_inter);
    take(l, lseen, "margin_intra", cfg.loss.margin_intra);
    reject_unknown(l, lseen, "loss.");
  }
  if (j.contains("ablate")) {
    seen.push_back("ablate");
    const json& a = j.at("ablate");
    std::vector<std::string> aseen;
    take(a, aseen, "no_filter", cfg.ablate.no_filter);
    take(a, aseen, "no_param_sharing", cfg.ablate.no_param_sharing);
    take(a, aseen, "visual_only", cfg.ablate.visual_only);
    if (a.contains("selector")) {
      aseen.push_back("selector");
      cfg.ablate.selector =
          selector_from_name(a.at("selector").get<std::string>());
    }
    reject_unknown(a, aseen, "ablate.");
  }
  reject_unknown(j, seen, "");
  cfg.validate();
  return cfg;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string canon = run_config_to_json(cfg);
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ModelParams ModelParams::init(const RunConfig& cfg, int vocab_size,
                              std::mt19937_64& rng) {
  cfg.validate();
  require_cfg(vocab_size >= 1, "config: vocabulary must be non-empty");
  ModelParams p;
  p.encoder = TextEncoderParams::init(vocab_size, cfg.embed_dim,
                                      cfg.encoder_hidden, rng);
  p.encoder.freeze_embedding = cfg.freeze_embedding;
  const int d_q = p.encoder.query_dim();
  p.filter =
      FilterParams::init(cfg.num_centers, cfg.hidden_dim, cfg.feature_dim,
                         d_q, rng);
  p.branch = BranchParams::init(cfg.feature_dim, d_q, cfg.hidden_dim,
                                cfg.hidden_dim, cfg.hidden_dim, cfg.kernel,
                                rng);
  if (cfg.ablate.no_param_sharing) p.branch_b = p.branch;
  return p;
}

ForwardResult forward_pair(ad::Tape& tape, const Matrix& frames,
                           const std::vector<int>& tokens, ModelParams& params,
                           const RunConfig& cfg) {
  check_frames(frames, cfg);
  ForwardResult result;
  result.Q = encode_query(tape, tokens, params.encoder);
  ad::Var V = tape.constant(frames);
  const SamplingRule rule = cfg.rule_for(static_cast<int>(frames.rows()));
  if (cfg.ablate.no_filter) {
    result.enhanced = run_branch(tape, V, result.Q, params.branch, rule, cfg.T,
                                 cfg.ablate.selector, BranchTag::enhanced);
    return result;
  }
  StreamSplit split = split_by_relevance(tape, V, result.Q, params, cfg);
  result.relevance = split.relevance;
  result.enhanced =
      run_branch(tape, split.enhanced, result.Q, params.branch, rule, cfg.T,
                 cfg.ablate.selector, BranchTag::enhanced);
  BranchParams& suppressed_params =
      params.branch_b ? *params.branch_b : params.branch;
  result.suppressed =
      run_branch(tape, split.suppressed, result.Q, suppressed_params, rule,
                 cfg.T, cfg.ablate.selector, BranchTag::suppressed);
  return result;
}

ad::Var enhanced_sum(ad::Tape& tape, const Matrix& frames,
                     const std::vector<int>& tokens, ModelParams& params,
                     const RunConfig& cfg) {
  check_frames(frames, cfg);
  ad::Var Q = encode_query(tape, tokens, params.encoder);
  ad::Var V = tape.constant(frames);
  const SamplingRule rule = cfg.rule_for(static_cast<int>(frames.rows()));
  ad::Var stream = V;
  if (!cfg.ablate.no_filter) {
    stream = split_by_relevance(tape, V, Q, params, cfg).enhanced;
  }
  BranchResult en = run_branch(tape, stream, Q, params.branch, rule, cfg.T,
                               cfg.ablate.selector, BranchTag::enhanced);
  return en.k_sum;
}

ad::Var item_loss(ad::Tape& tape, const Matrix& pos_frames,
                  const std::vector<int>& pos_tokens,
                  const Matrix& neg_video_frames,
                  const std::vector<int>& neg_sentence_tokens,
                  ModelParams& params, const RunConfig& cfg, LossBundle* out) {
  ForwardResult pos = forward_pair(tape, pos_frames, pos_tokens, params, cfg);
  ad::Var k_en = pos.enhanced.k_sum;
  // The single-branch ablation removes the intra-sample ranking term.
  ad::Var intra = cfg.ablate.no_filter
                      ? tape.scalar(0.0)
                      : intra_loss(tape, k_en, pos.suppressed->k_sum,
                                   cfg.loss.margin_intra);
  ad::Var k_neg_sentence =
      enhanced_sum(tape, pos_frames, neg_sentence_tokens, params, cfg);
  ad::Var k_neg_video =
      enhanced_sum(tape, neg_video_frames, pos_tokens, params, cfg);
  ad::Var inter = inter_loss(tape, k_en, k_neg_sentence, k_neg_video,
                             cfg.loss.margin_inter);
  ad::Var global = global_loss(tape, pos.enhanced.valid_scores);
  ad::Var gap = gap_loss(tape, pos.enhanced.selected_scores);
  ad::Var total = total_loss(tape, intra, inter, global, gap, cfg.loss);
  if (out) {
    out->intra = intra.val()(0, 0);
    out->inter = inter.val()(0, 0);
    out->global = global.val()(0, 0);
    out->gap = gap.val()(0, 0);
    out->total = total.val()(0, 0);
  }
  return total;
}

ProposalSet predict_proposals(const Matrix& frames,
                              const std::vector<int>& tokens,
                              ModelParams& params, const RunConfig& cfg) {
  ad::Tape tape;
  check_frames(frames, cfg);
  ad::Var Q = encode_query(tape, tokens, params.encoder);
  ad::Var V = tape.constant(frames);
  const SamplingRule rule = cfg.rule_for(static_cast<int>(frames.rows()));
  ad::Var stream = V;
  if (!cfg.ablate.no_filter) {
    stream = split_by_relevance(tape, V, Q, params, cfg).enhanced;
  }
  BranchResult en = run_branch(tape, stream, Q, params.branch, rule, cfg.T,
                               cfg.ablate.selector, BranchTag::enhanced);
  return en.proposals;
}

FrameSequence pooled_frames(const FrameSequence& raw, const RunConfig& cfg) {
  return mean_pool(raw, cfg.pooling_stride);
}

}  // namespace rtbpn
