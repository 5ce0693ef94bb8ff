/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_EVALUATION_HPP
#define RTBPN_EVALUATION_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "rtbpn/proposal_branch.hpp"
#include "rtbpn/types.hpp"

namespace rtbpn {

// One predicted moment in seconds with its confidence.
struct ScoredSpan {
  SecondsSpan span;
  double score = 0.0;
};

// Ranked predictions for a single (video, sentence) sample.
struct PredictionRecord {
  std::string video_id;
  std::vector<ScoredSpan> spans;  // descending score, ties keep rank order

  void validate() const;  // throws std::invalid_argument on order/shape issues
};

// Recall table over (top-n, IoU threshold) pairs plus the mean top-1 IoU.
struct EvalReport {
  std::vector<int> top_ns;          // row labels, e.g. {1, 5}
  std::vector<double> thresholds;   // column labels, e.g. {0.3, 0.5, 0.7}
  Matrix recall;                    // percentages, top_ns.size() x thresholds.size()
  double miou = 0.0;
  int num_samples = 0;

  // Looks up the percentage for an exact (n, m) label pair.
  double recall_value(int n, double m) const;
};

// Intersection-over-union of two second spans. Disjoint or merely touching
// spans score 0; two identical zero-length points score 1.
double temporal_iou(const SecondsSpan& a, const SecondsSpan& b);

// Greedy non-maximum suppression: keep the head, drop any later span whose
// IoU with a kept span exceeds the threshold. Input must be ranked.
std::vector<ScoredSpan> nms(const std::vector<ScoredSpan>& ranked,
                            double threshold);

// Percentage of samples where one of the first n predictions (after NMS for
// n > 1) overlaps ground truth with IoU strictly above m.
double recall_at(const std::vector<PredictionRecord>& predictions,
                 const std::vector<SecondsSpan>& ground_truth, int n, double m,
                 double nms_threshold = 0.55);

// Arithmetic mean of the top-1 IoU over all samples (no NMS).
double mean_iou(const std::vector<PredictionRecord>& predictions,
                const std::vector<SecondsSpan>& ground_truth);

// Converts inclusive frame-index proposals into half-open second spans,
// re-ranked by descending score (stable for ties).
PredictionRecord spans_from_proposals(const ProposalSet& proposals,
                                      double seconds_per_index,
                                      std::string video_id = {});

// Full recall table + mIoU in one pass.
EvalReport evaluate(const std::vector<PredictionRecord>& predictions,
                    const std::vector<SecondsSpan>& ground_truth,
                    const std::vector<int>& top_ns = {1, 5},
                    const std::vector<double>& thresholds = {0.3, 0.5, 0.7},
                    double nms_threshold = 0.55);

// Aligned text rendering of the report (criteria columns, one row per n).
std::string format_report_table(const EvalReport& report);

// JSON serialization of the report (deterministic key order).
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport load_report(const std::filesystem::path& path);

// One JSON object per line: {"video_id": ..., "spans": [[start,end,score],...]}.
void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> load_predictions(
    const std::filesystem::path& path);

}  // namespace rtbpn

#endif  // RTBPN_EVALUATION_HPP
