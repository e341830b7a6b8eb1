// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace karn::detail {

inline Eigen::MatrixXd uniform(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = dist(rng);
  return out;
}

/// Bound sqrt(6 / (fan_in + fan_out)); a (rows x cols) weight maps cols -> rows.
inline Eigen::MatrixXd xavier_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  return uniform(rows, cols, std::sqrt(6.0 / static_cast<double>(rows + cols)), rng);
}

}  // namespace karn::detail
