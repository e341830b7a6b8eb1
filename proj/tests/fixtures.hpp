// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "karn/sequence_batch.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace karn::test {

/// Random scaled-range batch: inputs and targets uniform in [lo, hi].
inline SequenceBatch random_batch(int samples, int features, int window, int horizon, std::uint64_t seed,
                                  double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  SequenceBatch b;
  b.features = features;
  b.window = window;
  b.horizon = horizon;
  b.inputs.resize(samples, window * features);
  b.targets.resize(samples, horizon);
  for (Eigen::Index i = 0; i < b.inputs.size(); ++i) b.inputs.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < b.targets.size(); ++i) b.targets.data()[i] = u(rng);
  for (int s = 0; s < samples; ++s) b.target_index.push_back(window + s);
  return b;
}

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu_ref(double x) { return x / (1.0 + std::exp(-x)); }

}  // namespace karn::test
