// SPDX-License-Identifier: Apache-2.0
//
// Losses, evaluation metrics, optimizers, the plateau / early-stopping
// monitor, the epoch loop and grid search.

#pragma once

#include "karn/data.hpp"
#include "karn/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace karn {

template <typename A, typename B>
typename A::Scalar loss_mse(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& target) {
  if (pred.size() == 0) throw std::invalid_argument("loss_mse: empty input");
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("loss_mse: shape mismatch");
  return (pred - target).squaredNorm() / static_cast<typename A::Scalar>(pred.size());
}

template <typename A, typename B>
typename A::Scalar loss_mae(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& target) {
  if (pred.size() == 0) throw std::invalid_argument("loss_mae: empty input");
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("loss_mae: shape mismatch");
  return (pred - target).cwiseAbs().sum() / static_cast<typename A::Scalar>(pred.size());
}

template <typename Scalar>
struct Metrics {
  Scalar mae = 0;
  Scalar rmse = 0;
  Scalar smape = 0;  // percent
};

/// MAE, RMSE and SMAPE over every element. A SMAPE term with |y| + |yhat| = 0
/// contributes 0.
template <typename A, typename B>
Metrics<typename A::Scalar> metric_suite(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& target) {
  using S = typename A::Scalar;
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("metric_suite: shape mismatch");
  Metrics<S> m;
  if (pred.size() == 0) return m;
  S abs_sum = 0, sq_sum = 0, sym_sum = 0;
  for (Eigen::Index c = 0; c < pred.cols(); ++c) {
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
      const S y = target(r, c), yhat = pred(r, c);
      const S e = std::abs(y - yhat);
      abs_sum += e;
      sq_sum += e * e;
      const S denom = std::abs(y) + std::abs(yhat);
      if (denom > 0) sym_sum += 2 * e / denom;
    }
  }
  const S n = static_cast<S>(pred.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.smape = 100 * sym_sum / n;
  return m;
}

using Metricsd = Metrics<double>;

enum class OptimizerKind { sgd, adam, adamw };
enum class Objective { mse, mae };

std::string to_string(OptimizerKind k);
std::string to_string(Objective o);
OptimizerKind parse_optimizer(const std::string& name);
Objective parse_objective(const std::string& name);

struct TrainConfig {
  ModelKind model = ModelKind::karn;
  int hidden_size = 64;
  int num_layers = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  Objective objective = Objective::mse;
  int spline_degree = 2;        // KARN only
  int grid_points = 5;          // KARN only
  int initial_grid_points = 5;  // KARN only: larger grids start here and are extended
  int grid_extend_epoch = 50;   // KARN only
  HeadMode head_mode = HeadMode::last_state;
  double grid_lo = -1.0;
  double grid_hi = 1.0;
  double learning_rate = 1e-3;
  int max_epochs = 300;
  int early_stop_patience = 5;
  double lr_plateau_factor = 0.5;
  int lr_plateau_patience = 3;
  double min_learning_rate = 1e-6;
  int batch_size = 32;
  double weight_decay = 1e-2;  // AdamW only
  std::uint64_t seed = 0;

  bool is_karn() const { return model == ModelKind::karn; }
  /// Throws ConfigError on invalid values. With `search_domains` the
  /// architecture must also lie inside the grid-search ranges (hidden size
  /// 64/128/256, 1-3 layers, degree 1-3, grid 2-14).
  void validate(bool search_domains = true) const;
  /// Stable key=value text of every field that affects training.
  std::string canonical() const;
  std::uint64_t hash() const;
  std::string hash_hex() const;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Untrained model for the config. Larger KARN grids start at
/// initial_grid_points.
ForecastModel build_model(const TrainConfig& config, int input_dim, int horizon);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double weight_decay = 1e-2);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  /// Updates every trainable entry. Moments are keyed by entry name and reset
  /// when the entry's shape changes. Aliased coordinates receive identical
  /// updates and are re-synchronised afterwards.
  void step(ParameterSet& params, const GradientSet& grads);

 private:
  struct Slot {
    Eigen::MatrixXd m;
    Eigen::MatrixXd v;
    long t = 0;
  };
  OptimizerKind kind_;
  double lr_;
  double weight_decay_;
  std::unordered_map<std::string, Slot> slots_;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// Plateau and early-stopping counters. Each counts epochs since the last
/// strict improvement of the validation loss; the plateau counter restarts
/// after every reduction.
class TrainingMonitor {
 public:
  struct Decision {
    bool improved = false;
    bool reduce_lr = false;
    bool stop = false;
  };

  TrainingMonitor(int plateau_patience, int stop_patience);
  Decision observe(double val_loss);

  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }  // 1-based; 0 before any observation
  int epochs() const { return epoch_; }

 private:
  int plateau_patience_;
  int stop_patience_;
  double best_;
  int best_epoch_ = 0;
  int epoch_ = 0;
  int since_best_ = 0;
  int since_reduce_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double learning_rate = 0;
};

struct FitResult {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
  double wall_time = 0;  // seconds
  std::vector<EpochRecord> curve;
  std::vector<GridExtensionReport> extensions;
};

struct FitOptions {
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Objective value of the model on a whole batch (scaled units).
double objective_loss(const ForecastModel& model, const SequenceBatch& batch, Objective objective);

/// Evenly spaced rows of `batch`, at most `limit`. Grid extension probes use
/// at most kGridProbeWindows training windows.
SequenceBatch probe_subset(const SequenceBatch& batch, Eigen::Index limit);
inline constexpr Eigen::Index kGridProbeWindows = 512;

/// Mini-batch training with per-epoch shuffling, plateau LR reduction, early
/// stopping and best-validation restore. Throws NumericalError when the
/// validation loss stops being finite.
FitResult fit(ForecastModel& model, const SequenceBatch& train, const SequenceBatch& val,
              const TrainConfig& config, const FitOptions& options = {});

/// Metrics on unscaled load.
Metricsd evaluate(const ForecastModel& model, const SequenceBatch& batch, const PreparedDataset& data);

struct MetricsReport {
  std::string model_id;
  std::string dataset_id;
  std::string config_hash;
  TrainConfig config;
  Metricsd metrics;          // test split, unscaled
  double val_loss = 0;       // best validation objective, scaled
  int epochs_run = 0;
  int best_epoch = 0;
  double wall_time = 0;
  std::vector<EpochRecord> curve;
};

// Grid search

struct SearchSpace {
  std::vector<int> hidden_sizes{64, 128, 256};
  std::vector<int> num_layers{1, 2, 3};
  std::vector<OptimizerKind> optimizers{OptimizerKind::adam, OptimizerKind::sgd, OptimizerKind::adamw};
  std::vector<Objective> objectives{Objective::mae, Objective::mse};
  std::vector<int> spline_degrees{1, 2, 3};
  std::vector<int> grid_points{2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
};

/// Cartesian product over the space; KARN also varies degree and grid.
std::vector<TrainConfig> enumerate(const SearchSpace& space, const TrainConfig& base);

/// Seeded subset of `budget` indices out of [0, total), in ascending order.
std::vector<std::size_t> budget_subset(std::size_t total, std::size_t budget, std::uint64_t seed);

struct TrialResult {
  std::size_t index = 0;  // position in the candidate list
  TrainConfig config;
  bool ok = false;
  std::string error;
  double val_loss = 0;
  FitResult fit;
};

struct SearchOptions {
  int workers = 1;
  /// Returns a finished trial (and its model) to skip re-running it.
  std::function<std::optional<std::pair<TrialResult, ForecastModel>>(const TrainConfig&)> completed;
  /// Called once per freshly run trial, serialised through one writer.
  std::function<void(const TrialResult&, const ForecastModel*)> on_trial;
};

struct SearchResult {
  std::vector<TrialResult> ranking;  // successful trials by validation loss, then failures
  std::optional<ForecastModel> winner;
  std::optional<MetricsReport> winner_report;
};

SearchResult grid_search(const std::vector<TrainConfig>& candidates, const PreparedDataset& data,
                         const SearchOptions& options = {});

}  // namespace karn
