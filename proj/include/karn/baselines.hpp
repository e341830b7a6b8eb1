// SPDX-License-Identifier: Apache-2.0
//
// Vanilla RNN, GRU and LSTM baselines with the same last-state linear head
// as KARN.
//
//   vanilla: h' = tanh(W_x x + W_h h + b)
//   gru:     r = sig(W_xr x + W_hr h + b_r), z = sig(W_xz x + W_hz h + b_z)
//            n = tanh(W_xn x + r * (W_hn h) + b_n), h' = (1 - z) * n + z * h
//   lstm:    i, f, o = sig(...), g = tanh(...)
//            c' = f * c + i * g, h' = o * tanh(c')

#pragma once

#include "karn/autodiff.hpp"
#include "karn/parameters.hpp"
#include "karn/sequence_batch.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace karn {

enum class CellKind { vanilla, gru, lstm };

std::string to_string(CellKind kind);
CellKind parse_cell_kind(const std::string& name);
int gate_count(CellKind kind);

struct BaselineConfig {
  CellKind cell = CellKind::vanilla;
  int input_dim = 5;
  std::vector<int> hidden_sizes{64};
  int horizon = 24;
};

/// Entry indices of one gate: input weight (d_h x d_in), recurrent weight
/// (d_h x d_h), bias (d_h x 1).
struct GateLayout {
  std::size_t input_weight = 0;
  std::size_t recurrent_weight = 0;
  std::size_t bias = 0;
};

struct BaselineLayerLayout {
  int input_dim = 0;
  int hidden_dim = 0;
  std::vector<GateLayout> gates;  // vanilla: {h}; gru: {r, z, n}; lstm: {i, f, g, o}
};

struct RecurrentState {
  Eigen::MatrixXd h;
  Eigen::MatrixXd c;  // LSTM only
};

class RecurrentBaseline {
 public:
  /// Xavier-uniform weights, zero biases.
  RecurrentBaseline(const BaselineConfig& config, std::uint64_t seed);

  const BaselineConfig& config() const { return config_; }
  CellKind cell() const { return config_.cell; }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  int input_dim() const { return config_.input_dim; }
  int horizon() const { return config_.horizon; }
  const BaselineLayerLayout& layout(int layer) const { return layers_.at(static_cast<std::size_t>(layer)); }
  std::size_t head_weight_entry() const { return head_weight_; }
  std::size_t head_bias_entry() const { return head_bias_; }

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

 private:
  BaselineConfig config_;
  ParameterSet params_;
  std::vector<BaselineLayerLayout> layers_;
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
};

RecurrentState initial_state(const RecurrentBaseline& net, int layer, Eigen::Index samples);

/// One cell update for `layer`; x is (d_in x samples).
RecurrentState baseline_step(const RecurrentBaseline& net, int layer, const Eigen::MatrixXd& x,
                             const RecurrentState& state);

/// Forecasts as (samples x horizon).
Eigen::MatrixXd baseline_forward(const RecurrentBaseline& net, const SequenceBatch& batch);

/// Taped forward; returns (horizon x samples).
ad::Var baseline_forward(ad::Tape& tape, const RecurrentBaseline& net, const std::vector<ad::Var>& bound,
                         const std::vector<Eigen::MatrixXd>& steps);

}  // namespace karn
