/*
 * Copyright 2026 the rtbpn authors
 * Licensed under the terms of the Apache 2.0 License.
 * See the LICENSE file in the project root for terms.
 */
#ifndef RTBPN_INITIALIZERS_HPP
#define RTBPN_INITIALIZERS_HPP

#include <cmath>
#include <random>

#include "rtbpn/types.hpp"

namespace rtbpn {

inline Matrix uniform_matrix(int rows, int cols, double bound,
                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline Matrix normal_matrix(int rows, int cols, double stddev,
                            std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

// Fan-in scaled uniform init: bound 1/sqrt(fan_in).
inline Matrix fanin_matrix(int rows, int cols, int fan_in,
                           std::mt19937_64& rng) {
  return uniform_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(fan_in)),
                        rng);
}

}  // namespace rtbpn

#endif  // RTBPN_INITIALIZERS_HPP
