// SPDX-License-Identifier: Apache-2.0
//
// Versioned container: a text manifest followed by raw little-endian float64
// payloads.
//
//   KARNLF-CHECKPOINT
//   format_version 1
//   <key> <value>            (any number, order preserved)
//   tensor <name> <rows> <cols> <byte offset>
//   end
//   <payload bytes, column-major>
//
// Model checkpoints and prepared-data caches share the container.

#pragma once

#include "karn/data.hpp"
#include "karn/model.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace karn {

inline constexpr const char* kContainerMagic = "KARNLF-CHECKPOINT";
inline constexpr int kFormatVersion = 1;

struct TensorArchive {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  /// Throws DataError naming the key when absent.
  const std::string& get(const std::string& key) const;
  void add_tensor(const std::string& name, Eigen::MatrixXd value);
  const Eigen::MatrixXd& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

void write_archive(std::ostream& out, const TensorArchive& archive);
TensorArchive read_archive(std::istream& in, const std::string& source = "archive");
void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

/// Everything needed to forecast from raw data without outside context.
struct Checkpoint {
  ForecastModel model;
  ScalerParams scaler;
  std::vector<Feature> features;
  WindowSpec spec;
  std::string config_hash;
  std::string config_text;  // TrainConfig::canonical() of the run
  std::string dataset_id;
};

TensorArchive to_archive(const Checkpoint& cp);
Checkpoint checkpoint_from_archive(const TensorArchive& archive);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Prepared-data cache: raw features, flags and the fitted scaler. Loading
/// re-derives the windows deterministically.
TensorArchive dataset_to_archive(const PreparedDataset& data);
PreparedDataset dataset_from_archive(const TensorArchive& archive);

/// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace karn
