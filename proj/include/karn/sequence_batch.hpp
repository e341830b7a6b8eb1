// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace karn {

/// Windowed model input (samples x features x window) with aligned targets.
/// `inputs` stores one sample per row; column t * features + f holds feature f
/// at window step t.
struct SequenceBatch {
  int features = 0;
  int window = 0;
  int horizon = 0;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;                // samples x horizon, scaled load
  std::vector<std::int64_t> target_index;  // series index of each sample's first target hour

  Eigen::Index samples() const { return inputs.rows(); }
  bool empty() const { return inputs.rows() == 0; }

  /// Inputs at window step t as a (features x samples) matrix.
  Eigen::MatrixXd step(int t) const;
  Eigen::MatrixXd step(int t, std::span<const Eigen::Index> rows) const;
  /// All window steps, time-major.
  std::vector<Eigen::MatrixXd> time_major() const;
  std::vector<Eigen::MatrixXd> time_major(std::span<const Eigen::Index> rows) const;
  /// Targets as (horizon x samples).
  Eigen::MatrixXd targets_by_column(std::span<const Eigen::Index> rows) const;
  SequenceBatch select(std::span<const Eigen::Index> rows) const;
};

}  // namespace karn
