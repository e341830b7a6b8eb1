// SPDX-License-Identifier: Apache-2.0
#include "karn/baselines.hpp"

#include "init.hpp"
#include "karn/activations.hpp"
#include "karn/errors.hpp"

#include <random>
#include <stdexcept>

namespace karn {

std::string to_string(CellKind kind) {
  switch (kind) {
    case CellKind::vanilla: return "rnn";
    case CellKind::gru: return "gru";
    case CellKind::lstm: return "lstm";
  }
  return "unknown";
}

CellKind parse_cell_kind(const std::string& name) {
  if (name == "rnn" || name == "vanilla") return CellKind::vanilla;
  if (name == "gru") return CellKind::gru;
  if (name == "lstm") return CellKind::lstm;
  throw std::invalid_argument("unknown recurrent cell '" + name + "'");
}

int gate_count(CellKind kind) {
  switch (kind) {
    case CellKind::vanilla: return 1;
    case CellKind::gru: return 3;
    case CellKind::lstm: return 4;
  }
  return 0;
}

namespace {

const char* gate_name(CellKind kind, int g) {
  static constexpr std::array<const char*, 1> vanilla{"h"};
  static constexpr std::array<const char*, 3> gru{"r", "z", "n"};
  static constexpr std::array<const char*, 4> lstm{"i", "f", "g", "o"};
  switch (kind) {
    case CellKind::vanilla: return vanilla[static_cast<std::size_t>(g)];
    case CellKind::gru: return gru[static_cast<std::size_t>(g)];
    case CellKind::lstm: return lstm[static_cast<std::size_t>(g)];
  }
  return "?";
}

Eigen::MatrixXd sigmoid_of(const Eigen::MatrixXd& a) {
  return a.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace

RecurrentBaseline::RecurrentBaseline(const BaselineConfig& config, std::uint64_t seed) : config_(config) {
  if (config.input_dim < 1) throw std::invalid_argument("input dimension must be positive");
  if (config.hidden_sizes.empty()) throw std::invalid_argument("baseline needs at least one layer");
  if (config.horizon < 1) throw std::invalid_argument("forecast horizon must be positive");

  std::mt19937_64 rng(seed);
  const std::string cell = to_string(config.cell);
  int d_in = config.input_dim;
  for (int l = 0; l < static_cast<int>(config.hidden_sizes.size()); ++l) {
    const int d_h = config.hidden_sizes[static_cast<std::size_t>(l)];
    if (d_h < 1) throw std::invalid_argument("hidden size must be positive");
    BaselineLayerLayout layout{d_in, d_h, {}};
    const std::string prefix = cell + ".layer" + std::to_string(l) + ".";
    for (int g = 0; g < gate_count(config.cell); ++g) {
      const std::string gate = gate_name(config.cell, g);
      GateLayout gl;
      gl.input_weight = params_.add(prefix + "W_x" + gate, detail::xavier_uniform(d_h, d_in, rng));
      gl.recurrent_weight = params_.add(prefix + "W_h" + gate, detail::xavier_uniform(d_h, d_h, rng));
      gl.bias = params_.add(prefix + "b_" + gate, Eigen::MatrixXd::Zero(d_h, 1));
      layout.gates.push_back(gl);
    }
    layers_.push_back(std::move(layout));
    d_in = d_h;
  }
  head_weight_ = params_.add(cell + ".head.weight", detail::xavier_uniform(config.horizon, d_in, rng));
  head_bias_ = params_.add(cell + ".head.bias", Eigen::MatrixXd::Zero(config.horizon, 1));
}

RecurrentState initial_state(const RecurrentBaseline& net, int layer, Eigen::Index samples) {
  const int d_h = net.layout(layer).hidden_dim;
  RecurrentState s;
  s.h = Eigen::MatrixXd::Zero(d_h, samples);
  if (net.cell() == CellKind::lstm) s.c = Eigen::MatrixXd::Zero(d_h, samples);
  return s;
}

RecurrentState baseline_step(const RecurrentBaseline& net, int layer, const Eigen::MatrixXd& x,
                             const RecurrentState& state) {
  const BaselineLayerLayout& lay = net.layout(layer);
  const ParameterSet& p = net.parameters();
  if (x.rows() != lay.input_dim) throw std::invalid_argument("baseline_step: input feature mismatch");
  if (state.h.rows() != lay.hidden_dim || state.h.cols() != x.cols())
    throw std::invalid_argument("baseline_step: state shape mismatch");

  auto pre = [&](int g, const Eigen::MatrixXd& h) {
    const GateLayout& gl = lay.gates[static_cast<std::size_t>(g)];
    Eigen::MatrixXd a = p[gl.input_weight].value * x + p[gl.recurrent_weight].value * h;
    a.colwise() += p[gl.bias].value.col(0);
    return a;
  };

  RecurrentState next;
  switch (net.cell()) {
    case CellKind::vanilla:
      next.h = pre(0, state.h).array().tanh().matrix();
      break;
    case CellKind::gru: {
      const Eigen::MatrixXd r = sigmoid_of(pre(0, state.h));
      const Eigen::MatrixXd z = sigmoid_of(pre(1, state.h));
      const GateLayout& gn = lay.gates[2];
      Eigen::MatrixXd a = p[gn.input_weight].value * x + r.cwiseProduct(p[gn.recurrent_weight].value * state.h);
      a.colwise() += p[gn.bias].value.col(0);
      const Eigen::MatrixXd n = a.array().tanh().matrix();
      next.h = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(state.h);
      break;
    }
    case CellKind::lstm: {
      const Eigen::MatrixXd i = sigmoid_of(pre(0, state.h));
      const Eigen::MatrixXd f = sigmoid_of(pre(1, state.h));
      const Eigen::MatrixXd g = pre(2, state.h).array().tanh().matrix();
      const Eigen::MatrixXd o = sigmoid_of(pre(3, state.h));
      next.c = f.cwiseProduct(state.c) + i.cwiseProduct(g);
      next.h = o.cwiseProduct(next.c.array().tanh().matrix());
      break;
    }
  }
  if (!next.h.allFinite() || (next.c.size() && !next.c.allFinite()))
    throw NumericalError(to_string(net.cell()) + " layer " + std::to_string(layer) +
                         " produced a non-finite state");
  return next;
}

Eigen::MatrixXd baseline_forward(const RecurrentBaseline& net, const SequenceBatch& batch) {
  std::vector<Eigen::MatrixXd> seq = batch.time_major();
  if (seq.empty()) throw std::invalid_argument("window length must be positive");
  if (seq.front().rows() != net.input_dim())
    throw std::invalid_argument("batch feature count does not match the network");
  for (int l = 0; l < net.layer_count(); ++l) {
    RecurrentState s = initial_state(net, l, batch.samples());
    for (Eigen::MatrixXd& x : seq) {
      s = baseline_step(net, l, x, s);
      x = s.h;
    }
  }
  Eigen::MatrixXd out = net.parameters()[net.head_weight_entry()].value * seq.back();
  out.colwise() += net.parameters()[net.head_bias_entry()].value.col(0);
  return out.transpose();
}

ad::Var baseline_forward(ad::Tape& tape, const RecurrentBaseline& net, const std::vector<ad::Var>& bound,
                         const std::vector<Eigen::MatrixXd>& steps) {
  if (steps.empty()) throw std::invalid_argument("window length must be positive");
  if (steps.front().rows() != net.input_dim())
    throw std::invalid_argument("batch feature count does not match the network");
  if (bound.size() != net.parameters().size())
    throw std::invalid_argument("bound parameters do not match the network");
  const Eigen::Index batch = steps.front().cols();

  std::vector<ad::Var> seq;
  for (const Eigen::MatrixXd& x : steps) seq.push_back(tape.constant(x));

  for (int l = 0; l < net.layer_count(); ++l) {
    const BaselineLayerLayout& lay = net.layout(l);
    auto pre = [&](int g, ad::Var x, ad::Var h) {
      const GateLayout& gl = lay.gates[static_cast<std::size_t>(g)];
      return ad::add_bias(ad::matmul(bound[gl.input_weight], x) + ad::matmul(bound[gl.recurrent_weight], h),
                          bound[gl.bias]);
    };
    ad::Var h = tape.constant(Eigen::MatrixXd::Zero(lay.hidden_dim, batch));
    ad::Var c = tape.constant(Eigen::MatrixXd::Zero(lay.hidden_dim, batch));
    std::vector<ad::Var> hidden;
    for (const ad::Var& x : seq) {
      switch (net.cell()) {
        case CellKind::vanilla:
          h = ad::tanh(pre(0, x, h));
          break;
        case CellKind::gru: {
          const ad::Var r = ad::sigmoid(pre(0, x, h));
          const ad::Var z = ad::sigmoid(pre(1, x, h));
          const GateLayout& gn = lay.gates[2];
          const ad::Var n = ad::tanh(ad::add_bias(
              ad::matmul(bound[gn.input_weight], x) + ad::hadamard(r, ad::matmul(bound[gn.recurrent_weight], h)),
              bound[gn.bias]));
          h = ad::hadamard(ad::one_minus(z), n) + ad::hadamard(z, h);
          break;
        }
        case CellKind::lstm: {
          const ad::Var i = ad::sigmoid(pre(0, x, h));
          const ad::Var f = ad::sigmoid(pre(1, x, h));
          const ad::Var g = ad::tanh(pre(2, x, h));
          const ad::Var o = ad::sigmoid(pre(3, x, h));
          c = ad::hadamard(f, c) + ad::hadamard(i, g);
          h = ad::hadamard(o, ad::tanh(c));
          break;
        }
      }
      if (!h.value().allFinite())
        throw NumericalError(to_string(net.cell()) + " layer " + std::to_string(l) +
                             " produced a non-finite state");
      hidden.push_back(h);
    }
    seq = std::move(hidden);
  }
  return ad::add_bias(ad::matmul(bound[net.head_weight_entry()], seq.back()), bound[net.head_bias_entry()]);
}

}  // namespace karn
