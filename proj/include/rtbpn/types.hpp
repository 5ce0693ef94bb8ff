/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_TYPES_HPP
#define RTBPN_TYPES_HPP

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace rtbpn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Invalid run/synthesis configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Broken or inconsistent on-disk data; messages name the offending entry.
struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller violated an API contract (e.g. reading ground truth on the
// train split).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Per-video visual feature matrix, one frame per row, plus the scale that
// converts a row index into seconds.
struct FrameSequence {
  Matrix features;              // n_v x d
  double seconds_per_index = 1.0;

  Eigen::Index num_frames() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  double duration_seconds() const {
    return static_cast<double>(features.rows()) * seconds_per_index;
  }

  void validate() const {
    if (features.rows() < 1) {
      throw std::invalid_argument("FrameSequence: needs at least one frame");
    }
    if (!(seconds_per_index > 0.0)) {
      throw std::invalid_argument("FrameSequence: seconds_per_index must be > 0");
    }
    if (!features.allFinite()) {
      throw std::invalid_argument("FrameSequence: features must be finite");
    }
  }
};

// Half-open [start, end) span in seconds.
struct SecondsSpan {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
};

}  // namespace rtbpn

#endif  // RTBPN_TYPES_HPP
