// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "karn/autodiff.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace karn {

struct ParameterEntry {
  std::string name;
  Eigen::MatrixXd value;
  bool trainable = true;
};

/// One alias site of a share group: flat (column-major) coordinates inside
/// one entry. All sites of a group have the same length and position p of
/// every site aliases the same underlying value.
struct ShareSite {
  std::size_t entry = 0;
  std::vector<Eigen::Index> coords;
};

struct ShareGroup {
  int id = 0;
  std::vector<ShareSite> sites;
};

/// Named tensors mirroring a ParameterSet's entries.
struct GradientSet {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> tensors;

  std::size_t size() const { return tensors.size(); }
  const Eigen::MatrixXd& operator[](std::size_t i) const { return tensors[i]; }
  Eigen::MatrixXd& operator[](std::size_t i) { return tensors[i]; }
  const Eigen::MatrixXd& at(std::string_view name) const;
};

class ParameterSet {
 public:
  /// Names must be unique; returns the entry index.
  std::size_t add(std::string name, Eigen::MatrixXd value, bool trainable = true);

  std::size_t size() const { return entries_.size(); }
  ParameterEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParameterEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Replaces an entry's value, possibly with a new shape. Share groups on
  /// that entry are dropped; callers re-create them.
  void replace(std::size_t entry, Eigen::MatrixXd value);
  void set_trainable(std::size_t entry, bool trainable) { entries_[entry].trainable = trainable; }

  /// Averages the sites once, then aliases them. Rejects sites that overlap
  /// an existing group or have unequal lengths.
  int add_share_group(std::vector<ShareSite> sites);
  void clear_share_groups(std::size_t entry);
  const std::vector<ShareGroup>& share_groups() const { return groups_; }

  /// Writes v at (entry, coord) and at every alias of that coordinate.
  void set_value(std::size_t entry, Eigen::Index coord, double v);
  /// Copies each group's first site onto the other sites.
  void sync_shared();
  /// Replaces each aliased coordinate's gradient by the sum over its aliases.
  void tie(GradientSet& grads) const;

  Eigen::Index scalar_count() const;
  GradientSet zeros_like() const;

 private:
  const ShareGroup* group_of(std::size_t entry, Eigen::Index coord, std::size_t* site,
                             std::size_t* position) const;

  std::vector<ParameterEntry> entries_;
  std::vector<ShareGroup> groups_;
  int next_group_id_ = 0;
};

/// Leaves for every entry on `tape`: variables for trainable entries,
/// constants for frozen ones. Index i corresponds to params[i].
std::vector<ad::Var> bind(ad::Tape& tape, const ParameterSet& params);

using LossFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>& bound)>;

struct LossAndGradients {
  double loss = 0.0;
  GradientSet grads;
};

/// Reverse-mode gradients of `loss_fn` for every entry, unrolled through the
/// whole recorded graph. Frozen entries get zero tensors; shared coordinates
/// get the sum over their aliases. Throws NumericalError on non-finite values.
LossAndGradients backward(const ParameterSet& params, const LossFn& loss_fn);

/// Loss value only.
double evaluate_loss(const ParameterSet& params, const LossFn& loss_fn);

struct TensorCheck {
  std::string name;
  double max_relative_error = 0.0;
  Eigen::Index worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Eigen::Index checked = 0;
};

struct GradientCheckReport {
  std::vector<TensorCheck> tensors;
  double tolerance = 1e-4;

  double max_relative_error() const;
  bool passed() const { return max_relative_error() < tolerance; }
};

/// Central differences (L(+h) - L(-h)) / 2h against backward() for every
/// coordinate of every trainable entry. Shared coordinates are perturbed
/// through all their aliases at once. Relative error uses
/// |a - n| / (|a| + |n| + 1e-12).
GradientCheckReport check_gradients(ParameterSet& params, const LossFn& loss_fn,
                                    double tolerance = 1e-4, double step = 1e-5);

double relative_error(double analytic, double numeric);

}  // namespace karn
