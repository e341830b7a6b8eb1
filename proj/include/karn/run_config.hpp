// SPDX-License-Identifier: Apache-2.0
//
// Flat key = value run configuration. One setting per line, '#' starts a
// comment, blank lines are ignored. Command-line settings are applied on top
// with the same keys.
//
//   data                 CSV path
//   schema.timestamp     column names and delimiter of the CSV
//   schema.load
//   schema.temperature
//   schema.delimiter
//   features             comma separated feature names, must include load
//   out                  output directory
//   seed
//   model hidden_size num_layers optimizer objective spline_degree
//   grid_points initial_grid_points grid_extend_epoch head_mode grid_lo
//   grid_hi learning_rate max_epochs early_stop_patience lr_plateau_factor
//   lr_plateau_patience min_learning_rate batch_size weight_decay
//                        training settings
//   search.budget        number of sampled trials, 0 runs the full grid
//   search.workers       concurrent trials
//   search.hidden_sizes search.num_layers search.optimizers
//   search.objectives search.spline_degrees search.grid_points
//                        comma separated search axes

#pragma once

#include "karn/data.hpp"
#include "karn/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace karn {

struct RunConfig {
  std::string data;
  CsvSchema schema;
  std::vector<Feature> features = default_features();
  bool features_set = false;  // features given explicitly rather than defaulted
  TrainConfig train;
  std::string out;
  SearchSpace search;
  int search_budget = 0;
  int search_workers = 1;

  /// Throws ConfigError naming unknown keys and malformed values.
  void set(const std::string& key, const std::string& value);
  /// Training values must lie in the search domains; search axes too.
  void validate() const;
  /// Every key with its current value, in schema order.
  std::string to_text() const;
};

/// Parses the file format above onto `base`. Duplicate keys are errors.
void apply_config_text(RunConfig& config, std::istream& in, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Splits "key=value"; throws ConfigError without '='.
std::pair<std::string, std::string> split_setting(const std::string& text);

}  // namespace karn
