// SPDX-License-Identifier: Apache-2.0
#include "karn/autodiff.hpp"
#include "karn/errors.hpp"
#include "karn/parameters.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <random>

namespace karn {
namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Central differences written out here so the checker itself is not the oracle.
Eigen::MatrixXd numeric_gradient(ParameterSet& params, std::size_t entry, const LossFn& fn, double h = 1e-6) {
  Eigen::MatrixXd g(params[entry].value.rows(), params[entry].value.cols());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double orig = params[entry].value.data()[i];
    params[entry].value.data()[i] = orig + h;
    const double up = evaluate_loss(params, fn);
    params[entry].value.data()[i] = orig - h;
    const double down = evaluate_loss(params, fn);
    params[entry].value.data()[i] = orig;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

TEST(Tape, HandDerivedProductGradient) {
  ad::Tape tape;
  const Eigen::MatrixXd av = (Eigen::MatrixXd(2, 2) << 1, 2, 3, 4).finished();
  const Eigen::MatrixXd bv = (Eigen::MatrixXd(2, 2) << -1, 0.5, 2, 3).finished();
  ad::Var a = tape.variable(av);
  ad::Var b = tape.variable(bv);
  ad::Var loss = ad::sum(ad::hadamard(a, b));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(a), bv);
  EXPECT_EQ(tape.grad(b), av);
}

TEST(Tape, MatmulGradientIsOuterProductForm) {
  ad::Tape tape;
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd av = random_matrix(3, 4, rng);
  const Eigen::MatrixXd bv = random_matrix(4, 2, rng);
  ad::Var a = tape.variable(av);
  ad::Var b = tape.variable(bv);
  tape.backward(ad::sum(ad::matmul(a, b)));
  // d sum(AB) / dA = 1 B^T, d / dB = A^T 1
  EXPECT_TRUE(tape.grad(a).isApprox(Eigen::MatrixXd::Ones(3, 2) * bv.transpose(), 1e-14));
  EXPECT_TRUE(tape.grad(b).isApprox(av.transpose() * Eigen::MatrixXd::Ones(3, 2), 1e-14));
}

TEST(Tape, SharedNodeAccumulates) {
  ad::Tape tape;
  ad::Var x = tape.variable(Eigen::MatrixXd::Constant(1, 1, 3.0));
  tape.backward(ad::sum(ad::hadamard(x, x) + x));  // x^2 + x
  EXPECT_DOUBLE_EQ(tape.grad(x)(0, 0), 7.0);
}

TEST(Tape, ConstantsGetNoGradient) {
  ad::Tape tape;
  ad::Var c = tape.constant(Eigen::MatrixXd::Ones(2, 2));
  ad::Var x = tape.variable(Eigen::MatrixXd::Ones(2, 2));
  tape.backward(ad::sum(ad::hadamard(c, x)));
  EXPECT_FALSE(tape.needs_grad(c));
  EXPECT_EQ(tape.grad(c), Eigen::MatrixXd::Zero(2, 2));
}

TEST(Tape, RejectsNonScalarAndNonFiniteRoots) {
  ad::Tape tape;
  ad::Var x = tape.variable(Eigen::MatrixXd::Ones(2, 1));
  EXPECT_THROW(tape.backward(x), std::invalid_argument);
  ad::Tape t2;
  ad::Var y = t2.variable(Eigen::MatrixXd::Constant(1, 1, std::numeric_limits<double>::infinity()));
  EXPECT_THROW(t2.backward(ad::sum(y)), NumericalError);
}

TEST(Tape, NonFiniteGradientNamesTheNode) {
  ad::Tape tape;
  // Finite loss 1e300 whose gradient with respect to x is 1e600.
  ad::Var x = tape.variable(Eigen::MatrixXd::Constant(1, 1, 1e-300), "huge");
  ad::Var big = tape.constant(Eigen::MatrixXd::Constant(1, 1, 1e300));
  try {
    tape.backward(ad::sum(ad::hadamard(ad::scale(x, 1e300), big)));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("huge"), std::string::npos) << e.what();
  }
}

TEST(Ops, EveryOpMatchesCentralDifferences) {
  std::mt19937_64 rng(42);
  ParameterSet p;
  const std::size_t a = p.add("a", random_matrix(3, 4, rng));
  const std::size_t b = p.add("b", random_matrix(4, 5, rng));
  const std::size_t bias = p.add("bias", random_matrix(3, 1, rng));
  const std::size_t c = p.add("c", random_matrix(2, 5, rng));
  const Eigen::MatrixXd target = random_matrix(5, 5, rng);
  const LossFn fn = [&](ad::Tape&, const std::vector<ad::Var>& v) {
    ad::Var m = ad::add_bias(ad::matmul(v[a], v[b]), v[bias]);  // 3 x 5
    ad::Var top = ad::rows(m, 0, 2);
    ad::Var mixed = ad::hadamard(ad::sigmoid(top), ad::tanh(v[c])) - ad::scale(ad::silu(v[c]), 0.3);
    ad::Var stacked = ad::vstack({mixed, ad::one_minus(ad::rows(m, 1, 2)), ad::rows(m, 2, 1)});
    return ad::mse_loss(stacked, target) + ad::scale(ad::sum_squares(v[c]), 0.1) +
           ad::mae_loss(ad::rows(m, 0, 1), Eigen::MatrixXd::Constant(1, 5, 10.0));
  };
  const LossAndGradients lg = backward(p, fn);
  for (std::size_t e = 0; e < p.size(); ++e) {
    const Eigen::MatrixXd num = numeric_gradient(p, e, fn);
    for (Eigen::Index i = 0; i < num.size(); ++i)
      EXPECT_LT(relative_error(lg.grads[e].data()[i], num.data()[i]), 1e-6) << p[e].name << " " << i;
  }
}

TEST(Ops, MaeGradientAtZeroResidualIsZero) {
  ad::Tape tape;
  ad::Var x = tape.variable((Eigen::MatrixXd(1, 3) << 1.0, 2.0, 3.0).finished());
  tape.backward(ad::mae_loss(x, (Eigen::MatrixXd(1, 3) << 1.0, 1.0, 4.0).finished()));
  const Eigen::MatrixXd expected = (Eigen::MatrixXd(1, 3) << 0.0, 1.0 / 3, -1.0 / 3).finished();
  EXPECT_TRUE(tape.grad(x).isApprox(expected, 1e-15));
}

TEST(Ops, SiluValue) {
  ad::Tape tape;
  ad::Var x = tape.constant(Eigen::MatrixXd::Ones(1, 1));
  EXPECT_NEAR(ad::silu(x).value()(0, 0), 0.7310585786300049, 1e-15);
}

TEST(Parameters, NamesAreUniqueAndLookupWorks) {
  ParameterSet p;
  p.add("w", Eigen::MatrixXd::Zero(2, 2));
  EXPECT_THROW(p.add("w", Eigen::MatrixXd::Zero(1, 1)), std::invalid_argument);
  EXPECT_EQ(p.index_of("w"), 0u);
  EXPECT_FALSE(p.contains("v"));
  EXPECT_EQ(p.scalar_count(), 4);
}

TEST(Parameters, FrozenEntriesGetZeroGradients) {
  ParameterSet p;
  const std::size_t w = p.add("w", Eigen::MatrixXd::Constant(2, 1, 2.0));
  const std::size_t f = p.add("f", Eigen::MatrixXd::Constant(2, 1, 3.0), false);
  const LossFn fn = [&](ad::Tape&, const std::vector<ad::Var>& v) { return ad::sum(ad::hadamard(v[w], v[f])); };
  const LossAndGradients lg = backward(p, fn);
  EXPECT_EQ(lg.grads[w], Eigen::MatrixXd::Constant(2, 1, 3.0));
  EXPECT_EQ(lg.grads[f], Eigen::MatrixXd::Zero(2, 1));
  EXPECT_DOUBLE_EQ(lg.loss, 12.0);
}

TEST(Parameters, ShareGroupAveragesOnceAndSumsGradients) {
  ParameterSet p;
  const std::size_t w = p.add("w", (Eigen::MatrixXd(4, 1) << 1, 3, 10, 20).finished());
  p.add_share_group({ShareSite{w, {0, 1}}, ShareSite{w, {2, 3}}});
  // Averaged: (1+10)/2, (3+20)/2 at both sites.
  EXPECT_EQ(p[w].value, (Eigen::MatrixXd(4, 1) << 5.5, 11.5, 5.5, 11.5).finished());

  const Eigen::MatrixXd weights = (Eigen::MatrixXd(4, 1) << 1, 2, 3, 4).finished();
  const LossFn fn = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    return ad::sum(ad::hadamard(v[w], t.constant(weights)));
  };
  const LossAndGradients lg = backward(p, fn);
  EXPECT_EQ(lg.grads[w], (Eigen::MatrixXd(4, 1) << 4, 6, 4, 6).finished());

  p.set_value(w, 1, -2.0);
  EXPECT_EQ(p[w].value(3, 0), -2.0);
  p[w].value(0, 0) = 100.0;
  p.sync_shared();
  EXPECT_EQ(p[w].value(2, 0), 100.0);

  EXPECT_THROW(p.add_share_group({ShareSite{w, {0}}, ShareSite{w, {1}}}), std::invalid_argument);
  const GradientCheckReport r = check_gradients(p, fn);
  EXPECT_TRUE(r.passed()) << r.max_relative_error();
}

TEST(Parameters, NonFiniteGradientNamesTheParameter) {
  ParameterSet p;
  const std::size_t w = p.add("layer.weight", Eigen::MatrixXd::Constant(1, 1, 1e-300));
  const LossFn fn = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    return ad::sum(ad::hadamard(ad::scale(v[w], 1e300), t.constant(Eigen::MatrixXd::Constant(1, 1, 1e300))));
  };
  try {
    backward(p, fn);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos) << e.what();
  }
}

TEST(GradientCheck, DetectsAWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  ParameterSet p;
  const std::size_t w = p.add("w", Eigen::MatrixXd::Constant(2, 1, 0.7));
  const LossFn fn = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    ad::Var x = v[w];
    ad::Var sq = t.record(x.value().array().square().matrix(), {x}, [x](ad::Tape& tp, std::size_t self) {
      tp.accumulate(x.index(), (3.0 * tp.value(x).array() * tp.grad_of(self).array()).matrix());
    });
    return ad::sum(sq);
  };
  const GradientCheckReport r = check_gradients(p, fn);
  EXPECT_FALSE(r.passed());
  EXPECT_NEAR(r.max_relative_error(), 0.2, 1e-6);  // |3-2| / (3+2)
}

}  // namespace
}  // namespace karn
