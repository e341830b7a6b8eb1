// SPDX-License-Identifier: Apache-2.0
#include "karn/sequence_batch.hpp"

#include <stdexcept>

namespace karn {

Eigen::MatrixXd SequenceBatch::step(int t) const {
  if (t < 0 || t >= window) throw std::out_of_range("window step out of range");
  return inputs.middleCols(static_cast<Eigen::Index>(t) * features, features).transpose();
}

Eigen::MatrixXd SequenceBatch::step(int t, std::span<const Eigen::Index> rows) const {
  if (t < 0 || t >= window) throw std::out_of_range("window step out of range");
  Eigen::MatrixXd out(features, static_cast<Eigen::Index>(rows.size()));
  const Eigen::Index offset = static_cast<Eigen::Index>(t) * features;
  for (std::size_t b = 0; b < rows.size(); ++b)
    out.col(static_cast<Eigen::Index>(b)) = inputs.row(rows[b]).segment(offset, features).transpose();
  return out;
}

std::vector<Eigen::MatrixXd> SequenceBatch::time_major() const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(window));
  for (int t = 0; t < window; ++t) out.push_back(step(t));
  return out;
}

std::vector<Eigen::MatrixXd> SequenceBatch::time_major(std::span<const Eigen::Index> rows) const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(window));
  for (int t = 0; t < window; ++t) out.push_back(step(t, rows));
  return out;
}

Eigen::MatrixXd SequenceBatch::targets_by_column(std::span<const Eigen::Index> rows) const {
  Eigen::MatrixXd out(horizon, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t b = 0; b < rows.size(); ++b)
    out.col(static_cast<Eigen::Index>(b)) = targets.row(rows[b]).transpose();
  return out;
}

SequenceBatch SequenceBatch::select(std::span<const Eigen::Index> rows) const {
  SequenceBatch out;
  out.features = features;
  out.window = window;
  out.horizon = horizon;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  out.targets.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    out.inputs.row(static_cast<Eigen::Index>(b)) = inputs.row(rows[b]);
    out.targets.row(static_cast<Eigen::Index>(b)) = targets.row(rows[b]);
    if (!target_index.empty()) out.target_index.push_back(target_index[static_cast<std::size_t>(rows[b])]);
  }
  return out;
}

}  // namespace karn
