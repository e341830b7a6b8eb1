// SPDX-License-Identifier: Apache-2.0
//
// Hourly load ingestion, calendar features, min-max scaling fitted on the
// training split, chronological 60/20/20 split and 24 -> 24 windowing.

#pragma once

#include "karn/sequence_batch.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace karn {

using HourPoint = std::chrono::sys_time<std::chrono::hours>;

/// Parses "YYYY-MM-DDTHH:MM[:SS]" (a space may replace 'T'). Minutes and
/// seconds must be zero. Throws DataError.
HourPoint parse_timestamp(const std::string& text);
std::string format_timestamp(HourPoint t);

struct CsvSchema {
  std::string timestamp = "timestamp";
  std::string load = "load_kwh";
  std::string temperature = "temperature_c";
  char delimiter = ',';
};

struct LoadSeries {
  std::string source;
  std::vector<HourPoint> timestamps;  // strictly increasing, hourly, gap-free after ingestion
  std::vector<double> load;
  std::vector<double> temperature;
  std::vector<bool> interpolated;     // rows filled in for missing hours

  std::size_t size() const { return timestamps.size(); }
  std::size_t missing_hours() const;
};

/// Largest fraction of missing hours that is interpolated instead of rejected.
inline constexpr double kMaxMissingFraction = 0.05;

LoadSeries parse_csv(std::istream& in, const CsvSchema& schema, const std::string& source);
LoadSeries ingest_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void write_csv(std::ostream& out, const LoadSeries& series, const CsvSchema& schema = {});

enum class Feature { load, temperature, hour_of_day, day_of_week, day_of_month, day_of_year };

std::string to_string(Feature f);
Feature parse_feature(const std::string& name);
/// Comma-separated names; load must be present.
std::vector<Feature> parse_feature_set(const std::string& list);
std::string feature_set_string(const std::vector<Feature>& features);
std::vector<Feature> default_features();

struct CalendarFields {
  int hour = 0;          // 0..23
  int day_of_week = 0;   // Monday = 0
  int day_of_month = 1;  // 1..31
  int day_of_year = 1;   // 1..366
};
CalendarFields calendar_fields(HourPoint t);

/// Raw feature matrix, (features x T).
Eigen::MatrixXd derive_features(const LoadSeries& series, const std::vector<Feature>& features);

/// Per-feature min and max. Features with max == min scale to 0.
struct ScalerParams {
  Eigen::VectorXd min;
  Eigen::VectorXd max;

  Eigen::Index size() const { return min.size(); }
  bool is_constant(Eigen::Index f) const { return !(max(f) > min(f)); }
};

/// Statistics over columns [0, train_end) only.
ScalerParams fit_scaler(const Eigen::MatrixXd& features, Eigen::Index train_end);
Eigen::MatrixXd apply_scaler(const ScalerParams& s, const Eigen::MatrixXd& features);
/// Inverse of one feature's scaling, elementwise.
Eigen::MatrixXd inverse_scale(const ScalerParams& s, Eigen::Index feature, const Eigen::MatrixXd& scaled);

struct SplitBounds {
  std::int64_t train_end = 0;  // floor(0.6 T)
  std::int64_t val_end = 0;    // train_end + floor(0.2 T)
  std::int64_t total = 0;
};
SplitBounds chronological_split(std::int64_t length);

struct WindowSpec {
  int window = 24;
  int horizon = 24;
  int stride = 1;
};

/// Windows fully inside [begin, end); samples whose target hours include an
/// excluded index are skipped.
SequenceBatch make_windows(const Eigen::MatrixXd& scaled, int load_row, std::int64_t begin, std::int64_t end,
                           const WindowSpec& spec, const std::vector<bool>& excluded_targets = {});

struct DatasetSplits {
  SequenceBatch train;
  SequenceBatch val;
  SequenceBatch test;
};

/// Throws DataError naming the split when it is shorter than window + horizon.
DatasetSplits split_and_window(const Eigen::MatrixXd& scaled, int load_row, const SplitBounds& bounds,
                               const WindowSpec& spec, const std::vector<bool>& excluded_targets = {});

struct PreparedDataset {
  std::string source;
  std::vector<Feature> features;
  int load_row = 0;
  WindowSpec spec;
  std::vector<HourPoint> timestamps;
  std::vector<bool> interpolated;
  Eigen::MatrixXd raw;     // features x T
  ScalerParams scaler;
  SplitBounds bounds;
  DatasetSplits splits;

  /// Unscaled load for a (samples x horizon) block of scaled values.
  Eigen::MatrixXd unscale_load(const Eigen::MatrixXd& scaled) const;
};

PreparedDataset prepare_dataset(const LoadSeries& series, const std::vector<Feature>& features,
                                const WindowSpec& spec = {});

/// Repeats the last `horizon` observed loads of each input window, scaled.
Eigen::MatrixXd persistence_forecast(const SequenceBatch& batch, int load_row);

}  // namespace karn
