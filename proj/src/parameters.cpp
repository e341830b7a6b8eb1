// SPDX-License-Identifier: Apache-2.0
#include "karn/parameters.hpp"

#include "karn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>

namespace karn {

const Eigen::MatrixXd& GradientSet::at(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  throw std::out_of_range("no gradient named '" + std::string(name) + "'");
}

std::size_t ParameterSet::add(std::string name, Eigen::MatrixXd value, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  entries_.push_back(ParameterEntry{std::move(name), std::move(value), trainable});
  return entries_.size() - 1;
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const ParameterEntry& e) { return e.name == name; });
}

void ParameterSet::replace(std::size_t entry, Eigen::MatrixXd value) {
  clear_share_groups(entry);
  entries_.at(entry).value = std::move(value);
}

int ParameterSet::add_share_group(std::vector<ShareSite> sites) {
  if (sites.empty()) throw std::invalid_argument("share group needs at least one site");
  const std::size_t length = sites.front().coords.size();
  std::set<std::pair<std::size_t, Eigen::Index>> seen;
  for (const ShareSite& site : sites) {
    if (site.entry >= entries_.size()) throw std::out_of_range("share site entry out of range");
    if (site.coords.size() != length)
      throw std::invalid_argument("share sites must have equal lengths");
    for (Eigen::Index c : site.coords) {
      if (c < 0 || c >= entries_[site.entry].value.size())
        throw std::out_of_range("share site coordinate out of range");
      if (!seen.emplace(site.entry, c).second)
        throw std::invalid_argument("share sites overlap each other");
      if (group_of(site.entry, c, nullptr, nullptr) != nullptr)
        throw std::invalid_argument("coordinate already belongs to a share group");
    }
  }

  const double n = static_cast<double>(sites.size());
  for (std::size_t pos = 0; pos < length; ++pos) {
    double total = 0.0;
    for (const ShareSite& site : sites) total += entries_[site.entry].value(site.coords[pos]);
    const double mean = total / n;
    for (const ShareSite& site : sites) entries_[site.entry].value(site.coords[pos]) = mean;
  }
  groups_.push_back(ShareGroup{next_group_id_, std::move(sites)});
  return next_group_id_++;
}

void ParameterSet::clear_share_groups(std::size_t entry) {
  std::erase_if(groups_, [entry](const ShareGroup& g) {
    return std::any_of(g.sites.begin(), g.sites.end(),
                       [entry](const ShareSite& s) { return s.entry == entry; });
  });
}

const ShareGroup* ParameterSet::group_of(std::size_t entry, Eigen::Index coord, std::size_t* site,
                                         std::size_t* position) const {
  for (const ShareGroup& g : groups_) {
    for (std::size_t s = 0; s < g.sites.size(); ++s) {
      if (g.sites[s].entry != entry) continue;
      const auto& coords = g.sites[s].coords;
      const auto it = std::find(coords.begin(), coords.end(), coord);
      if (it != coords.end()) {
        if (site) *site = s;
        if (position) *position = static_cast<std::size_t>(it - coords.begin());
        return &g;
      }
    }
  }
  return nullptr;
}

void ParameterSet::set_value(std::size_t entry, Eigen::Index coord, double v) {
  std::size_t position = 0;
  if (const ShareGroup* g = group_of(entry, coord, nullptr, &position)) {
    for (const ShareSite& s : g->sites) entries_[s.entry].value(s.coords[position]) = v;
  } else {
    entries_.at(entry).value(coord) = v;
  }
}

void ParameterSet::sync_shared() {
  for (const ShareGroup& g : groups_) {
    const ShareSite& primary = g.sites.front();
    for (std::size_t s = 1; s < g.sites.size(); ++s)
      for (std::size_t pos = 0; pos < primary.coords.size(); ++pos)
        entries_[g.sites[s].entry].value(g.sites[s].coords[pos]) =
            entries_[primary.entry].value(primary.coords[pos]);
  }
}

void ParameterSet::tie(GradientSet& grads) const {
  for (const ShareGroup& g : groups_) {
    const std::size_t length = g.sites.front().coords.size();
    for (std::size_t pos = 0; pos < length; ++pos) {
      double total = 0.0;
      for (const ShareSite& s : g.sites) total += grads[s.entry](s.coords[pos]);
      for (const ShareSite& s : g.sites) grads[s.entry](s.coords[pos]) = total;
    }
  }
}

Eigen::Index ParameterSet::scalar_count() const {
  Eigen::Index n = 0;
  for (const ParameterEntry& e : entries_) n += e.value.size();
  return n;
}

GradientSet ParameterSet::zeros_like() const {
  GradientSet g;
  for (const ParameterEntry& e : entries_) {
    g.names.push_back(e.name);
    g.tensors.push_back(Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols()));
  }
  return g;
}

std::vector<ad::Var> bind(ad::Tape& tape, const ParameterSet& params) {
  std::vector<ad::Var> bound;
  bound.reserve(params.size());
  for (const ParameterEntry& e : params)
    bound.push_back(e.trainable ? tape.variable(e.value, e.name) : tape.constant(e.value));
  return bound;
}

LossAndGradients backward(const ParameterSet& params, const LossFn& loss_fn) {
  ad::Tape tape;
  const std::vector<ad::Var> bound = bind(tape, params);
  const ad::Var loss = loss_fn(tape, bound);
  tape.backward(loss);

  LossAndGradients out;
  out.loss = loss.value()(0, 0);
  out.grads = params.zeros_like();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    out.grads[i] = tape.grad(bound[i]);
    if (!out.grads[i].allFinite())
      throw NumericalError("non-finite gradient for parameter '" + params[i].name + "'");
  }
  params.tie(out.grads);
  return out;
}

double evaluate_loss(const ParameterSet& params, const LossFn& loss_fn) {
  ad::Tape tape;
  const std::vector<ad::Var> bound = bind(tape, params);
  return loss_fn(tape, bound).value()(0, 0);
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

double GradientCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const TensorCheck& t : tensors) worst = std::max(worst, t.max_relative_error);
  return worst;
}

GradientCheckReport check_gradients(ParameterSet& params, const LossFn& loss_fn, double tolerance,
                                    double step) {
  const GradientSet analytic = backward(params, loss_fn).grads;
  GradientCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    TensorCheck check;
    check.name = params[i].name;
    for (Eigen::Index c = 0; c < params[i].value.size(); ++c) {
      const double original = params[i].value(c);
      params.set_value(i, c, original + step);
      const double plus = evaluate_loss(params, loss_fn);
      params.set_value(i, c, original - step);
      const double minus = evaluate_loss(params, loss_fn);
      params.set_value(i, c, original);
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[i](c);
      const double err = relative_error(a, numeric);
      if (err > check.max_relative_error || check.worst_coord < 0) {
        check.max_relative_error = err;
        check.worst_coord = c;
        check.analytic = a;
        check.numeric = numeric;
      }
      ++check.checked;
    }
    report.tensors.push_back(std::move(check));
  }
  return report;
}

}  // namespace karn
