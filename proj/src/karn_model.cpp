// SPDX-License-Identifier: Apache-2.0
#include "karn/karn_model.hpp"

#include "init.hpp"
#include "karn/activations.hpp"
#include "karn/errors.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace karn {

namespace {

std::string layer_name(int l, const char* tensor) {
  return "karn.layer" + std::to_string(l) + "." + tensor;
}

void require_finite(const Eigen::MatrixXd& h, int layer) {
  if (!h.allFinite())
    throw NumericalError("KARN layer " + std::to_string(layer) + " produced a non-finite hidden state");
}

}  // namespace

KarnNetwork::KarnNetwork(const KarnConfig& config, std::uint64_t seed) : config_(config) {
  if (config.input_dim < 1) throw std::invalid_argument("KARN input dimension must be positive");
  if (config.hidden_sizes.empty()) throw std::invalid_argument("KARN needs at least one layer");
  if (config.horizon < 1) throw std::invalid_argument("forecast horizon must be positive");

  std::mt19937_64 rng(seed);
  int d_in = config.input_dim;
  for (int l = 0; l < static_cast<int>(config.hidden_sizes.size()); ++l) {
    const int d_h = config.hidden_sizes[static_cast<std::size_t>(l)];
    if (d_h < 1) throw std::invalid_argument("KARN hidden size must be positive");
    KarnLayerLayout layout;
    layout.input_dim = d_in;
    layout.hidden_dim = d_h;
    layout.grid = make_grid(config.degree, config.grid_points, config.range_lo, config.range_hi);
    const int k = layout.grid.basis_count();
    layout.spline_coeffs =
        params_.add(layer_name(l, "spline_coeffs"), detail::uniform(d_h, d_in * k, 0.1, rng));
    layout.spline_weight =
        params_.add(layer_name(l, "spline_weight"), Eigen::MatrixXd::Ones(d_h, d_in));
    layout.basis_weight =
        params_.add(layer_name(l, "basis_weight"), detail::xavier_uniform(d_h, d_in, rng));
    layout.recurrent_weight =
        params_.add(layer_name(l, "recurrent_weight"), detail::xavier_uniform(d_h, d_h, rng));
    layout.bias = params_.add(layer_name(l, "bias"), Eigen::MatrixXd::Zero(d_h, 1));
    layers_.push_back(std::move(layout));
    d_in = d_h;
  }
  const int out_rows = config.head_mode == HeadMode::last_state ? config.horizon : 1;
  head_weight_ = params_.add("karn.head.weight", detail::xavier_uniform(out_rows, d_in, rng));
  head_bias_ = params_.add("karn.head.bias", Eigen::MatrixXd::Zero(out_rows, 1));
}

KarnLayerParams KarnNetwork::layer(int l) const {
  const KarnLayerLayout& lay = layout(l);
  return KarnLayerParams{l,
                         lay.grid,
                         params_[lay.spline_coeffs].value,
                         params_[lay.spline_weight].value,
                         params_[lay.basis_weight].value,
                         params_[lay.recurrent_weight].value,
                         params_[lay.bias].value.col(0)};
}

KarnOutputHead KarnNetwork::head() const {
  return KarnOutputHead{params_[head_weight_].value, params_[head_bias_].value.col(0), config_.horizon};
}

std::vector<Eigen::Index> KarnNetwork::edge_coords(int l, Edge edge) const {
  const KarnLayerLayout& lay = layout(l);
  const auto [k, j] = edge;
  if (k < 0 || k >= lay.hidden_dim || j < 0 || j >= lay.input_dim)
    throw std::out_of_range("edge (" + std::to_string(k) + ", " + std::to_string(j) +
                            ") does not exist in layer " + std::to_string(l));
  const int basis = lay.grid.basis_count();
  std::vector<Eigen::Index> coords;
  coords.reserve(static_cast<std::size_t>(basis));
  for (int i = 0; i < basis; ++i)
    coords.push_back(static_cast<Eigen::Index>(j * basis + i) * lay.hidden_dim + k);
  return coords;
}

int KarnNetwork::add_lock_group(int l, std::vector<Edge> edges) {
  if (edges.empty()) throw std::invalid_argument("lock group needs at least one edge");
  std::set<Edge> unique(edges.begin(), edges.end());
  if (unique.size() != edges.size()) throw std::invalid_argument("lock group lists an edge twice");
  for (const LockGroup& g : locks_) {
    if (g.layer != l) continue;
    for (const Edge& e : g.edges)
      if (unique.count(e))
        throw std::invalid_argument("edge (" + std::to_string(e.first) + ", " +
                                    std::to_string(e.second) + ") already belongs to lock group " +
                                    std::to_string(g.id));
  }
  std::vector<ShareSite> sites;
  for (const Edge& e : edges) sites.push_back(ShareSite{layout(l).spline_coeffs, edge_coords(l, e)});
  params_.add_share_group(std::move(sites));
  locks_.push_back(LockGroup{next_lock_id_, l, std::move(edges)});
  return next_lock_id_++;
}

void KarnNetwork::rebuild_share_groups(int l) {
  const std::size_t entry = layout(l).spline_coeffs;
  params_.clear_share_groups(entry);
  for (const LockGroup& g : locks_) {
    if (g.layer != l) continue;
    std::vector<ShareSite> sites;
    for (const Edge& e : g.edges) sites.push_back(ShareSite{entry, edge_coords(l, e)});
    params_.add_share_group(std::move(sites));
  }
}

void KarnNetwork::replace_grid(int l, KnotGridd grid, Eigen::MatrixXd coeffs) {
  KarnLayerLayout& lay = layers_.at(static_cast<std::size_t>(l));
  if (grid.degree != lay.grid.degree) throw std::invalid_argument("grid degree cannot change");
  if (coeffs.rows() != lay.hidden_dim || coeffs.cols() != lay.input_dim * grid.basis_count())
    throw std::invalid_argument("replacement coefficients have the wrong shape");
  lay.grid = std::move(grid);
  params_.replace(lay.spline_coeffs, std::move(coeffs));
  rebuild_share_groups(l);
}

Eigen::MatrixXd basis_branch(const KarnLayerParams& layer, const Eigen::MatrixXd& x) {
  if (x.rows() != layer.input_dim())
    throw std::invalid_argument("basis_branch: input has " + std::to_string(x.rows()) +
                                " features, layer expects " + std::to_string(layer.input_dim()));
  return layer.basis_weight * x.unaryExpr([](double v) { return silu(v); });
}

Eigen::VectorXd basis_branch(const KarnLayerParams& layer, const Eigen::VectorXd& x) {
  return basis_branch(layer, Eigen::MatrixXd(x)).col(0);
}

Eigen::MatrixXd spline_branch(const KarnLayerParams& layer, const Eigen::MatrixXd& x) {
  const int d_in = layer.input_dim();
  const int k = layer.grid.basis_count();
  if (x.rows() != d_in)
    throw std::invalid_argument("spline_branch: input has " + std::to_string(x.rows()) +
                                " features, layer expects " + std::to_string(d_in));
  if (layer.spline_coeffs.cols() != d_in * k || layer.spline_coeffs.rows() != layer.hidden_dim())
    throw std::invalid_argument("spline_branch: coefficient block shape mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(layer.hidden_dim(), x.cols());
  Eigen::VectorXd phi(layer.hidden_dim());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    for (int j = 0; j < d_in; ++j) {
      const LocalBasis<double> lb = eval_basis_local(layer.grid, x(j, b));
      const Eigen::Index base = static_cast<Eigen::Index>(j) * k + lb.first;
      phi = layer.spline_coeffs.col(base) * lb.values[0];
      for (int r = 1; r < lb.count; ++r) phi += layer.spline_coeffs.col(base + r) * lb.values[r];
      out.col(b) += layer.spline_weight.col(j).cwiseProduct(phi);
    }
  }
  return out;
}

Eigen::VectorXd spline_branch(const KarnLayerParams& layer, const Eigen::VectorXd& x) {
  return spline_branch(layer, Eigen::MatrixXd(x)).col(0);
}

Eigen::MatrixXd step(const KarnLayerParams& layer, const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev) {
  if (h_prev.rows() != layer.hidden_dim() || h_prev.cols() != x.cols())
    throw std::invalid_argument("step: hidden state shape mismatch");
  Eigen::MatrixXd h = layer.recurrent_weight * h_prev + basis_branch(layer, x) + spline_branch(layer, x);
  h.colwise() += layer.bias;
  require_finite(h, layer.index);
  return h;
}

Eigen::VectorXd step(const KarnLayerParams& layer, const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev) {
  return step(layer, Eigen::MatrixXd(x), Eigen::MatrixXd(h_prev)).col(0);
}

namespace {

std::vector<Eigen::MatrixXd> run_layer(const KarnLayerParams& layer, const std::vector<Eigen::MatrixXd>& steps) {
  std::vector<Eigen::MatrixXd> hidden;
  hidden.reserve(steps.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(layer.hidden_dim(), steps.front().cols());
  for (const Eigen::MatrixXd& x : steps) {
    h = step(layer, x, h);
    hidden.push_back(h);
  }
  return hidden;
}

void check_steps(const KarnNetwork& net, const std::vector<Eigen::MatrixXd>& steps) {
  if (steps.empty()) throw std::invalid_argument("window length must be positive");
  if (steps.front().rows() != net.input_dim())
    throw std::invalid_argument("batch has " + std::to_string(steps.front().rows()) +
                                " features, network expects " + std::to_string(net.input_dim()));
  if (net.head_mode() == HeadMode::per_step && static_cast<int>(steps.size()) < net.horizon())
    throw std::invalid_argument("per-step head needs a window at least as long as the horizon");
}

}  // namespace

std::vector<std::vector<Eigen::MatrixXd>> layer_inputs(const KarnNetwork& net,
                                                       const std::vector<Eigen::MatrixXd>& steps) {
  check_steps(net, steps);
  std::vector<std::vector<Eigen::MatrixXd>> out;
  out.push_back(steps);
  for (int l = 0; l + 1 < net.layer_count(); ++l) out.push_back(run_layer(net.layer(l), out.back()));
  return out;
}

Eigen::MatrixXd forward(const KarnNetwork& net, const SequenceBatch& batch) {
  const std::vector<Eigen::MatrixXd> steps = batch.time_major();
  check_steps(net, steps);
  std::vector<Eigen::MatrixXd> seq = steps;
  for (int l = 0; l < net.layer_count(); ++l) seq = run_layer(net.layer(l), seq);

  const KarnOutputHead head = net.head();
  Eigen::MatrixXd out(net.horizon(), batch.samples());
  if (net.head_mode() == HeadMode::last_state) {
    out = head.weight * seq.back();
    out.colwise() += head.bias;
  } else {
    const int first = static_cast<int>(seq.size()) - net.horizon();
    for (int s = 0; s < net.horizon(); ++s)
      out.row(s) = (head.weight * seq[static_cast<std::size_t>(first + s)]).row(0).array() + head.bias(0);
  }
  return out.transpose();
}

ad::Var forward(ad::Tape& tape, const KarnNetwork& net, const std::vector<ad::Var>& bound,
                const std::vector<Eigen::MatrixXd>& steps) {
  check_steps(net, steps);
  if (bound.size() != net.parameters().size())
    throw std::invalid_argument("bound parameters do not match the network");
  const Eigen::Index batch = steps.front().cols();

  std::vector<ad::Var> seq;
  seq.reserve(steps.size());
  for (const Eigen::MatrixXd& x : steps) seq.push_back(tape.constant(x));

  for (int l = 0; l < net.layer_count(); ++l) {
    const KarnLayerLayout& lay = net.layout(l);
    const ad::Var coeffs = bound[lay.spline_coeffs];
    const ad::Var spline_weight = bound[lay.spline_weight];
    const ad::Var basis_weight = bound[lay.basis_weight];
    const ad::Var recurrent = bound[lay.recurrent_weight];
    const ad::Var bias = bound[lay.bias];
    std::vector<ad::Var> hidden;
    hidden.reserve(seq.size());
    ad::Var h = tape.constant(Eigen::MatrixXd::Zero(lay.hidden_dim, batch));
    for (const ad::Var& x : seq) {
      const ad::Var branches =
          ad::spline_edges(x, coeffs, spline_weight, lay.grid) + ad::matmul(basis_weight, ad::silu(x));
      h = ad::add_bias(ad::matmul(recurrent, h) + branches, bias);
      require_finite(h.value(), l);
      hidden.push_back(h);
    }
    seq = std::move(hidden);
  }

  const ad::Var weight = bound[net.head_weight_entry()];
  const ad::Var bias = bound[net.head_bias_entry()];
  if (net.head_mode() == HeadMode::last_state) return ad::add_bias(ad::matmul(weight, seq.back()), bias);

  std::vector<ad::Var> rows;
  const std::size_t first = seq.size() - static_cast<std::size_t>(net.horizon());
  for (std::size_t t = first; t < seq.size(); ++t) rows.push_back(ad::add_bias(ad::matmul(weight, seq[t]), bias));
  return ad::vstack(rows);
}

int lock_edges(KarnNetwork& net, int layer_index, const std::vector<Edge>& edges) {
  if (layer_index < 0 || layer_index >= net.layer_count())
    throw std::out_of_range("layer index out of range");
  return net.add_lock_group(layer_index, edges);
}

GridExtensionReport extend_network_grid(KarnNetwork& net, int layer_index, int new_interior_count,
                                        const SequenceBatch& probe) {
  if (layer_index < 0 || layer_index >= net.layer_count())
    throw std::out_of_range("layer index out of range");
  if (probe.empty()) throw std::invalid_argument("grid extension needs a non-empty probe batch");

  const KarnLayerLayout& lay = net.layout(layer_index);
  const KnotGridd old_grid = lay.grid;
  if (new_interior_count <= old_grid.interior_count)
    throw std::invalid_argument("new grid interval count " + std::to_string(new_interior_count) +
                                " must exceed current " + std::to_string(old_grid.interior_count));

  const std::vector<Eigen::MatrixXd> inputs =
      layer_inputs(net, probe.time_major())[static_cast<std::size_t>(layer_index)];
  const int d_in = lay.input_dim;
  const int d_h = lay.hidden_dim;
  const int k_old = old_grid.basis_count();
  const Eigen::Index per_step = inputs.front().cols();
  const Eigen::Index total = per_step * static_cast<Eigen::Index>(inputs.size());

  // Flattened inputs: (d_in x total).
  Eigen::MatrixXd flat(d_in, total);
  for (std::size_t t = 0; t < inputs.size(); ++t)
    flat.middleCols(static_cast<Eigen::Index>(t) * per_step, per_step) = inputs[t];
  const Eigen::MatrixXd before = spline_branch(net.layer(layer_index), flat);

  const KnotGridd fine_grid =
      make_grid(old_grid.degree, new_interior_count, old_grid.range_lo, old_grid.range_hi);
  const int k_new = fine_grid.basis_count();

  GridExtensionReport report;
  report.layer = layer_index;
  report.old_interior_count = old_grid.interior_count;
  report.new_interior_count = new_interior_count;

  auto clamped_samples = [&](const std::vector<int>& js) {
    Eigen::VectorXd samples(static_cast<Eigen::Index>(js.size()) * total);
    Eigen::Index n = 0;
    for (int j : js)
      for (Eigen::Index c = 0; c < total; ++c) samples(n++) = old_grid.clamp(flat(j, c));
    std::vector<double> sorted(samples.data(), samples.data() + samples.size());
    std::sort(sorted.begin(), sorted.end());
    const auto distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
    if (distinct < k_new) {
      ++report.fallback_inputs;
      return Eigen::VectorXd(uniform_probes(old_grid));
    }
    return samples;
  };

  const Eigen::MatrixXd& old_coeffs = net.parameters()[lay.spline_coeffs].value;
  Eigen::MatrixXd new_coeffs(d_h, d_in * k_new);

  std::set<Edge> locked;
  for (const LockGroup& g : net.lock_groups())
    if (g.layer == layer_index) locked.insert(g.edges.begin(), g.edges.end());

  for (int j = 0; j < d_in; ++j) {
    const Eigen::VectorXd samples = clamped_samples({j});
    // Columns: one coarse spline per output k.
    Eigen::MatrixXd coarse(k_old, d_h);
    for (int k = 0; k < d_h; ++k)
      coarse.col(k) = old_coeffs.row(k).segment(static_cast<Eigen::Index>(j) * k_old, k_old).transpose();
    const GridExtension<double> ext = extend_grid_many(old_grid, coarse, new_interior_count, samples);
    report.rank_deficient = report.rank_deficient || ext.rank_deficient;
    for (int k = 0; k < d_h; ++k)
      if (!locked.count({k, j}))
        new_coeffs.row(k).segment(static_cast<Eigen::Index>(j) * k_new, k_new) = ext.coeffs.col(k).transpose();
  }

  // Each lock group is refitted once on the union of its members' inputs.
  for (const LockGroup& g : net.lock_groups()) {
    if (g.layer != layer_index) continue;
    std::vector<int> js;
    for (const Edge& e : g.edges) js.push_back(e.second);
    std::sort(js.begin(), js.end());
    js.erase(std::unique(js.begin(), js.end()), js.end());
    const Eigen::VectorXd samples = clamped_samples(js);
    const auto [k0, j0] = g.edges.front();
    const Eigen::VectorXd coarse =
        old_coeffs.row(k0).segment(static_cast<Eigen::Index>(j0) * k_old, k_old).transpose();
    const GridExtension<double> ext = extend_grid(old_grid, coarse, new_interior_count, samples);
    report.rank_deficient = report.rank_deficient || ext.rank_deficient;
    for (const auto& [k, j] : g.edges)
      new_coeffs.row(k).segment(static_cast<Eigen::Index>(j) * k_new, k_new) = ext.coeffs.col(0).transpose();
  }

  const Eigen::Index old_count = net.parameters().scalar_count();
  net.replace_grid(layer_index, fine_grid, std::move(new_coeffs));
  report.added_parameters = net.parameters().scalar_count() - old_count;

  const Eigen::MatrixXd after = spline_branch(net.layer(layer_index), flat);
  report.max_deviation = (after - before).cwiseAbs().maxCoeff();
  return report;
}

}  // namespace karn
