/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#include "rtbpn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace rtbpn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_arg(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

std::string criterion_label(int n, double m) {
  std::ostringstream os;
  os << "R@" << n << ",IoU=" << m;
  return os.str();
}

}  // namespace

void PredictionRecord::validate() const {
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const ScoredSpan& s = spans[i];
    require_arg(std::isfinite(s.span.start) && std::isfinite(s.span.end) &&
                    std::isfinite(s.score),
                "prediction record '" + video_id + "': non-finite entry");
    require_arg(s.span.end >= s.span.start,
                "prediction record '" + video_id + "': negative-length span");
    if (i > 0) {
      require_arg(spans[i - 1].score >= s.score,
                  "prediction record '" + video_id +
                      "': spans not ranked by descending score");
    }
  }
}

double EvalReport::recall_value(int n, double m) const {
  for (std::size_t r = 0; r < top_ns.size(); ++r) {
    if (top_ns[r] != n) continue;
    for (std::size_t c = 0; c < thresholds.size(); ++c) {
      if (thresholds[c] == m) {
        return recall(static_cast<Eigen::Index>(r),
                      static_cast<Eigen::Index>(c));
      }
    }
  }
  throw std::invalid_argument("report has no entry for " +
                              criterion_label(n, m));
}

double temporal_iou(const SecondsSpan& a, const SecondsSpan& b) {
  require_arg(a.end >= a.start && b.end >= b.start,
              "temporal_iou: spans must have non-negative length");
  const double la = a.length();
  const double lb = b.length();
  if (la == 0.0 && lb == 0.0) {
    return (a.start == b.start) ? 1.0 : 0.0;
  }
  const double inter =
      std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = la + lb - inter;
  return inter / uni;
}

std::vector<ScoredSpan> nms(const std::vector<ScoredSpan>& ranked,
                            double threshold) {
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    require_arg(ranked[i - 1].score >= ranked[i].score,
                "nms: input must be ranked by descending score");
  }
  std::vector<ScoredSpan> kept;
  kept.reserve(ranked.size());
  for (const ScoredSpan& cand : ranked) {
    bool suppressed = false;
    for (const ScoredSpan& k : kept) {
      if (temporal_iou(cand.span, k.span) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

double recall_at(const std::vector<PredictionRecord>& predictions,
                 const std::vector<SecondsSpan>& ground_truth, int n, double m,
                 double nms_threshold) {
  require_arg(n >= 1, "recall_at: n must be at least 1");
  require_arg(predictions.size() == ground_truth.size(),
              "recall_at: predictions and ground truth differ in length");
  require_arg(!predictions.empty(), "recall_at: no samples");
  int hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    // Multi-moment criteria deduplicate via NMS; top-1 uses the raw ranking.
    const std::vector<ScoredSpan>& ranked = predictions[i].spans;
    const std::vector<ScoredSpan> cand =
        (n > 1) ? nms(ranked, nms_threshold) : ranked;
    const std::size_t limit =
        std::min(cand.size(), static_cast<std::size_t>(n));
    for (std::size_t j = 0; j < limit; ++j) {
      if (temporal_iou(cand[j].span, ground_truth[i]) > m) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) /
         static_cast<double>(predictions.size());
}

double mean_iou(const std::vector<PredictionRecord>& predictions,
                const std::vector<SecondsSpan>& ground_truth) {
  require_arg(predictions.size() == ground_truth.size(),
              "mean_iou: predictions and ground truth differ in length");
  require_arg(!predictions.empty(), "mean_iou: no samples");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].spans.empty()) continue;  // counts as zero overlap
    sum += temporal_iou(predictions[i].spans.front().span, ground_truth[i]);
  }
  return sum / static_cast<double>(predictions.size());
}

PredictionRecord spans_from_proposals(const ProposalSet& proposals,
                                      double seconds_per_index,
                                      std::string video_id) {
  require_arg(seconds_per_index > 0.0,
              "spans_from_proposals: seconds_per_index must be positive");
  require_arg(proposals.boundaries.size() == proposals.scores.size(),
              "spans_from_proposals: boundary/score length mismatch");
  PredictionRecord rec;
  rec.video_id = std::move(video_id);
  rec.spans.reserve(proposals.boundaries.size());
  for (std::size_t i = 0; i < proposals.boundaries.size(); ++i) {
    const auto [s, e] = proposals.boundaries[i];
    require_arg(s >= 0 && e >= s,
                "spans_from_proposals: malformed boundary pair");
    ScoredSpan out;
    out.span.start = static_cast<double>(s) * seconds_per_index;
    out.span.end = static_cast<double>(e + 1) * seconds_per_index;
    out.score = proposals.scores[i];
    rec.spans.push_back(out);
  }
  std::stable_sort(rec.spans.begin(), rec.spans.end(),
                   [](const ScoredSpan& a, const ScoredSpan& b) {
                     return a.score > b.score;
                   });
  return rec;
}

EvalReport evaluate(const std::vector<PredictionRecord>& predictions,
                    const std::vector<SecondsSpan>& ground_truth,
                    const std::vector<int>& top_ns,
                    const std::vector<double>& thresholds,
                    double nms_threshold) {
  require_arg(!top_ns.empty() && !thresholds.empty(),
              "evaluate: empty criteria axes");
  EvalReport report;
  report.top_ns = top_ns;
  report.thresholds = thresholds;
  report.recall = Matrix::Zero(static_cast<Eigen::Index>(top_ns.size()),
                               static_cast<Eigen::Index>(thresholds.size()));
  for (std::size_t r = 0; r < top_ns.size(); ++r) {
    for (std::size_t c = 0; c < thresholds.size(); ++c) {
      report.recall(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          recall_at(predictions, ground_truth, top_ns[r], thresholds[c],
                    nms_threshold);
    }
  }
  report.miou = mean_iou(predictions, ground_truth);
  report.num_samples = static_cast<int>(predictions.size());
  return report;
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  const int label_w = 8;
  const int col_w = 10;
  os << std::left << std::setw(label_w) << "";
  for (double m : report.thresholds) {
    std::ostringstream head;
    head << "IoU=" << m;
    os << std::right << std::setw(col_w) << head.str();
  }
  os << '\n';
  for (std::size_t r = 0; r < report.top_ns.size(); ++r) {
    std::ostringstream row_label;
    row_label << "R@" << report.top_ns[r];
    os << std::left << std::setw(label_w) << row_label.str();
    for (std::size_t c = 0; c < report.thresholds.size(); ++c) {
      os << std::right << std::setw(col_w)
         << report.recall(static_cast<Eigen::Index>(r),
                          static_cast<Eigen::Index>(c));
    }
    os << '\n';
  }
  os << std::left << std::setw(label_w) << "mIoU" << std::right
     << std::setw(col_w) << (100.0 * report.miou) << '\n';
  os << std::left << std::setw(label_w) << "samples" << std::right
     << std::setw(col_w) << report.num_samples << '\n';
  return os.str();
}

std::string report_to_json(const EvalReport& report) {
  json j;
  j["miou"] = report.miou;
  j["num_samples"] = report.num_samples;
  j["recall"] = json::array();
  for (std::size_t r = 0; r < report.top_ns.size(); ++r) {
    for (std::size_t c = 0; c < report.thresholds.size(); ++c) {
      json row;
      row["iou"] = report.thresholds[c];
      row["n"] = report.top_ns[r];
      row["percent"] = report.recall(static_cast<Eigen::Index>(r),
                                     static_cast<Eigen::Index>(c));
      j["recall"].push_back(std::move(row));
    }
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IngestError(std::string("report: invalid JSON: ") + e.what());
  }
  try {
    EvalReport report;
    report.miou = j.at("miou").get<double>();
    report.num_samples = j.at("num_samples").get<int>();
    // Rebuild the axes in first-appearance order, then fill the matrix.
    std::vector<std::tuple<int, double, double>> rows;
    for (const json& row : j.at("recall")) {
      const int n = row.at("n").get<int>();
      const double m = row.at("iou").get<double>();
      const double pct = row.at("percent").get<double>();
      rows.emplace_back(n, m, pct);
      if (std::find(report.top_ns.begin(), report.top_ns.end(), n) ==
          report.top_ns.end()) {
        report.top_ns.push_back(n);
      }
      if (std::find(report.thresholds.begin(), report.thresholds.end(), m) ==
          report.thresholds.end()) {
        report.thresholds.push_back(m);
      }
    }
    report.recall =
        Matrix::Zero(static_cast<Eigen::Index>(report.top_ns.size()),
                     static_cast<Eigen::Index>(report.thresholds.size()));
    for (const auto& [n, m, pct] : rows) {
      const auto r = std::find(report.top_ns.begin(), report.top_ns.end(), n) -
                     report.top_ns.begin();
      const auto c = std::find(report.thresholds.begin(),
                               report.thresholds.end(), m) -
                     report.thresholds.begin();
      report.recall(static_cast<Eigen::Index>(r),
                    static_cast<Eigen::Index>(c)) = pct;
    }
    return report;
  } catch (const json::exception& e) {
    throw IngestError(std::string("report: missing or mistyped field: ") +
                      e.what());
  }
}

void write_report(const fs::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot open '" + path.string() + "' for write");
  out << report_to_json(report);
  if (!out) throw IngestError("short write to '" + path.string() + "'");
}

EvalReport load_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return report_from_json(buf.str());
}

void write_predictions(const fs::path& path,
                       const std::vector<PredictionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot open '" + path.string() + "' for write");
  for (const PredictionRecord& rec : records) {
    json j;
    j["spans"] = json::array();
    for (const ScoredSpan& s : rec.spans) {
      j["spans"].push_back(json::array({s.span.start, s.span.end, s.score}));
    }
    j["video_id"] = rec.video_id;
    out << j.dump() << '\n';
  }
  if (!out) throw IngestError("short write to '" + path.string() + "'");
}

std::vector<PredictionRecord> load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IngestError("predictions '" + path.string() + "' line " +
                        std::to_string(line_no) + ": invalid JSON: " +
                        e.what());
    }
    try {
      PredictionRecord rec;
      rec.video_id = j.at("video_id").get<std::string>();
      for (const json& triple : j.at("spans")) {
        if (!triple.is_array() || triple.size() != 3) {
          throw IngestError("predictions '" + path.string() + "' line " +
                            std::to_string(line_no) +
                            ": span entry is not a [start,end,score] triple");
        }
        ScoredSpan s;
        s.span.start = triple[0].get<double>();
        s.span.end = triple[1].get<double>();
        s.score = triple[2].get<double>();
        rec.spans.push_back(s);
      }
      rec.validate();
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw IngestError("predictions '" + path.string() + "' line " +
                        std::to_string(line_no) +
                        ": missing or mistyped field: " + e.what());
    } catch (const std::invalid_argument& e) {
      throw IngestError("predictions '" + path.string() + "' line " +
                        std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace rtbpn
