// SPDX-License-Identifier: Apache-2.0
#include "karn/baselines.hpp"
#include "karn/errors.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

namespace karn {
namespace {

BaselineConfig tiny(CellKind cell, std::vector<int> hidden = {3, 2}) {
  BaselineConfig c;
  c.cell = cell;
  c.input_dim = 3;
  c.hidden_sizes = std::move(hidden);
  c.horizon = 2;
  return c;
}

Eigen::VectorXd sig(const Eigen::VectorXd& v) { return v.unaryExpr(&test::sigmoid_ref); }
Eigen::VectorXd th(const Eigen::VectorXd& v) { return v.array().tanh().matrix(); }

// Reference cell straight from the gate equations, reading entries by name.
void reference_cell(const RecurrentBaseline& net, int l, const Eigen::VectorXd& x, Eigen::VectorXd& h,
                    Eigen::VectorXd& c) {
  const ParameterSet& p = net.parameters();
  const std::string pre = to_string(net.cell()) + ".layer" + std::to_string(l) + ".";
  auto W = [&](const std::string& n) -> const Eigen::MatrixXd& { return p[p.index_of(pre + n)].value; };
  auto a = [&](const std::string& g) -> Eigen::VectorXd { return W("W_x" + g) * x + W("W_h" + g) * h + W("b_" + g); };
  switch (net.cell()) {
    case CellKind::vanilla: h = th(a("h")); break;
    case CellKind::gru: {
      const Eigen::VectorXd r = sig(a("r")), z = sig(a("z"));
      const Eigen::VectorXd n = th(W("W_xn") * x + r.cwiseProduct(W("W_hn") * h) + W("b_n"));
      h = (Eigen::VectorXd::Ones(h.size()) - z).cwiseProduct(n) + z.cwiseProduct(h);
      break;
    }
    case CellKind::lstm: {
      const Eigen::VectorXd i = sig(a("i")), f = sig(a("f")), g = th(a("g")), o = sig(a("o"));
      c = f.cwiseProduct(c) + i.cwiseProduct(g);
      h = o.cwiseProduct(th(c));
      break;
    }
  }
}

class BaselineCells : public ::testing::TestWithParam<CellKind> {};

TEST_P(BaselineCells, EntriesFollowGateNaming) {
  const RecurrentBaseline net(tiny(GetParam()), 1);
  const std::string cell = to_string(GetParam());
  EXPECT_EQ(net.parameters().size(), static_cast<std::size_t>(2 * 3 * gate_count(GetParam()) + 2));
  EXPECT_TRUE(net.parameters().contains(cell + ".head.weight"));
  for (const auto& e : net.parameters())
    if (e.name.find(".b_") != std::string::npos) EXPECT_EQ(e.value.norm(), 0.0) << e.name;
}

TEST_P(BaselineCells, ForwardMatchesReferenceCell) {
  RecurrentBaseline net(tiny(GetParam()), 7);
  // Non-zero biases so the reference also exercises them.
  for (std::size_t e = 0; e < net.parameters().size(); ++e)
    if (net.parameters()[e].name.find(".b_") != std::string::npos)
      net.parameters()[e].value = Eigen::VectorXd::LinSpaced(net.parameters()[e].value.size(), -0.3, 0.4);
  const SequenceBatch batch = test::random_batch(3, 3, 5, 2, 11);
  const Eigen::MatrixXd y = baseline_forward(net, batch);
  for (int s = 0; s < 3; ++s) {
    Eigen::VectorXd h0 = Eigen::VectorXd::Zero(3), c0 = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd h1 = Eigen::VectorXd::Zero(2), c1 = Eigen::VectorXd::Zero(2);
    for (int t = 0; t < 5; ++t) {
      reference_cell(net, 0, batch.inputs.row(s).segment(t * 3, 3).transpose(), h0, c0);
      reference_cell(net, 1, h0, h1, c1);
    }
    const ParameterSet& p = net.parameters();
    const Eigen::VectorXd out = p[net.head_weight_entry()].value * h1 + p[net.head_bias_entry()].value;
    EXPECT_LT((y.row(s).transpose() - out).cwiseAbs().maxCoeff(), 1e-13);
  }

  ad::Tape tape;
  const ad::Var taped = baseline_forward(tape, net, bind(tape, net.parameters()), batch.time_major());
  EXPECT_LT((taped.value().transpose() - y).cwiseAbs().maxCoeff(), 1e-13);
}

TEST_P(BaselineCells, GradientsMatchFiniteDifferencesAcrossSeeds) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    RecurrentBaseline net(tiny(GetParam()), seed);
    const SequenceBatch batch = test::random_batch(4, 3, 4, 2, seed + 50);
    const auto steps = batch.time_major();
    const Eigen::MatrixXd target = batch.targets.transpose();
    const LossFn fn = [&](ad::Tape& tape, const std::vector<ad::Var>& bound) {
      return ad::mse_loss(baseline_forward(tape, net, bound, steps), target);
    };
    const GradientCheckReport r = check_gradients(net.parameters(), fn);
    for (const TensorCheck& t : r.tensors) EXPECT_LT(t.max_relative_error, 1e-4) << seed << " " << t.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Cells, BaselineCells, ::testing::Values(CellKind::vanilla, CellKind::gru, CellKind::lstm),
                         [](const auto& info) { return to_string(info.param); });

TEST(Baselines, NonFiniteStateRaises) {
  RecurrentBaseline net(tiny(CellKind::vanilla, {2}), 1);
  net.parameters()[net.parameters().index_of("rnn.layer0.b_h")].value(0, 0) = std::nan("");
  EXPECT_THROW(baseline_forward(net, test::random_batch(1, 3, 2, 2, 0)), NumericalError);
}

TEST(Baselines, ParseCellKind) {
  EXPECT_EQ(parse_cell_kind("gru"), CellKind::gru);
  EXPECT_THROW(parse_cell_kind("tcn"), std::invalid_argument);
}

}  // namespace
}  // namespace karn
