// SPDX-License-Identifier: Apache-2.0
//
// Kolmogorov–Arnold recurrent network.
//
// One layer maps (x_t, h_{t-1}) to
//   h_t = W_h h_{t-1} + b_t + S_t + bias
// with the SiLU residual branch b_t[k] = sum_j w_b[k,j] silu(x_t[j]) and the
// spline branch S_t[k] = sum_j w_s[k,j] sum_i c[k,j,i] B_i(x_t[j]). No
// nonlinearity follows the sum. Layers stack on hidden sequences; a linear
// head reads the final hidden state of the last layer.

#pragma once

#include "karn/autodiff.hpp"
#include "karn/parameters.hpp"
#include "karn/sequence_batch.hpp"
#include "karn/spline.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

namespace karn {

enum class HeadMode {
  last_state,  // W_hy h_n + b_y emits the whole horizon at once
  per_step,    // W_hy h_t + b_y per step; the last `horizon` steps form the forecast
};

struct KarnConfig {
  int input_dim = 5;
  std::vector<int> hidden_sizes{64};
  int horizon = 24;
  int degree = 2;
  int grid_points = 5;
  double range_lo = -1.0;
  double range_hi = 1.0;
  HeadMode head_mode = HeadMode::last_state;
};

/// Read-only view of one layer's tensors. spline_coeffs is d_h x (d_in * K)
/// with edge (k, j) owning columns [j*K, (j+1)*K) of row k.
struct KarnLayerParams {
  int index;
  const KnotGridd& grid;
  Eigen::Ref<const Eigen::MatrixXd> spline_coeffs;
  Eigen::Ref<const Eigen::MatrixXd> spline_weight;
  Eigen::Ref<const Eigen::MatrixXd> basis_weight;
  Eigen::Ref<const Eigen::MatrixXd> recurrent_weight;
  Eigen::Ref<const Eigen::VectorXd> bias;

  int input_dim() const { return static_cast<int>(basis_weight.cols()); }
  int hidden_dim() const { return static_cast<int>(basis_weight.rows()); }
};

struct KarnOutputHead {
  Eigen::Ref<const Eigen::MatrixXd> weight;
  Eigen::Ref<const Eigen::VectorXd> bias;
  int horizon;
};

struct KarnLayerLayout {
  int input_dim = 0;
  int hidden_dim = 0;
  KnotGridd grid;
  std::size_t spline_coeffs = 0;
  std::size_t spline_weight = 0;
  std::size_t basis_weight = 0;
  std::size_t recurrent_weight = 0;
  std::size_t bias = 0;
};

using Edge = std::pair<int, int>;  // (output k, input j)

struct LockGroup {
  int id = 0;
  int layer = 0;
  std::vector<Edge> edges;
};

class KarnNetwork {
 public:
  /// Xavier-uniform basis, recurrent and head weights; spline weights 1;
  /// spline coefficients uniform in [-0.1, 0.1]; biases 0.
  KarnNetwork(const KarnConfig& config, std::uint64_t seed);

  const KarnConfig& config() const { return config_; }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  int input_dim() const { return config_.input_dim; }
  int horizon() const { return config_.horizon; }
  HeadMode head_mode() const { return config_.head_mode; }

  const KarnLayerLayout& layout(int layer) const { return layers_.at(static_cast<std::size_t>(layer)); }
  KarnLayerParams layer(int layer) const;
  KarnOutputHead head() const;
  std::size_t head_weight_entry() const { return head_weight_; }
  std::size_t head_bias_entry() const { return head_bias_; }

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const std::vector<LockGroup>& lock_groups() const { return locks_; }

  /// Flat coordinates of edge (k, j)'s coefficient vector inside the layer's
  /// spline_coeffs entry.
  std::vector<Eigen::Index> edge_coords(int layer, Edge edge) const;

  // Used by lock_edges / extend_network_grid.
  int add_lock_group(int layer, std::vector<Edge> edges);
  void replace_grid(int layer, KnotGridd grid, Eigen::MatrixXd coeffs);

 private:
  void rebuild_share_groups(int layer);

  KarnConfig config_;
  ParameterSet params_;
  std::vector<KarnLayerLayout> layers_;
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
  std::vector<LockGroup> locks_;
  int next_lock_id_ = 0;
};

// Single-sample and batched (columns = samples) evaluation without a tape.

Eigen::VectorXd basis_branch(const KarnLayerParams& layer, const Eigen::VectorXd& x);
Eigen::MatrixXd basis_branch(const KarnLayerParams& layer, const Eigen::MatrixXd& x);
Eigen::VectorXd spline_branch(const KarnLayerParams& layer, const Eigen::VectorXd& x);
Eigen::MatrixXd spline_branch(const KarnLayerParams& layer, const Eigen::MatrixXd& x);
Eigen::VectorXd step(const KarnLayerParams& layer, const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev);
Eigen::MatrixXd step(const KarnLayerParams& layer, const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev);

/// Forecasts as (samples x horizon).
Eigen::MatrixXd forward(const KarnNetwork& net, const SequenceBatch& batch);

/// Input sequence seen by every layer: result[l][t] is (d_in(l) x samples).
std::vector<std::vector<Eigen::MatrixXd>> layer_inputs(const KarnNetwork& net,
                                                       const std::vector<Eigen::MatrixXd>& steps);

/// Taped forward; `bound` comes from bind(tape, net.parameters()). Returns
/// (horizon x samples).
ad::Var forward(ad::Tape& tape, const KarnNetwork& net, const std::vector<ad::Var>& bound,
                const std::vector<Eigen::MatrixXd>& steps);

/// Averages the listed edges' coefficient vectors once and aliases them for
/// the rest of training. Returns the lock group id.
int lock_edges(KarnNetwork& net, int layer_index, const std::vector<Edge>& edges);

struct GridExtensionReport {
  int layer = 0;
  int old_interior_count = 0;
  int new_interior_count = 0;
  double max_deviation = 0.0;     // spline-branch output change on the probe batch
  int fallback_inputs = 0;        // inputs refitted on uniform probes
  bool rank_deficient = false;
  Eigen::Index added_parameters = 0;
};

/// Refits one layer's spline coefficients onto a finer grid using the
/// layer inputs captured from `probe`. Other parameters are untouched.
GridExtensionReport extend_network_grid(KarnNetwork& net, int layer_index, int new_interior_count,
                                        const SequenceBatch& probe);

}  // namespace karn
