// SPDX-License-Identifier: Apache-2.0
#include "karn/errors.hpp"
#include "karn/training.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace karn {
namespace {

TEST(Losses, HandArithmetic) {
  const Eigen::RowVector2d pred(0, 0), target(1, 3);
  EXPECT_DOUBLE_EQ(loss_mse(pred, target), 5.0);
  EXPECT_DOUBLE_EQ(loss_mae(pred, target), 2.0);
  EXPECT_EQ(loss_mse(target, target), 0.0);
  EXPECT_EQ(loss_mae(target, target), 0.0);
  EXPECT_DOUBLE_EQ(loss_mse(Eigen::RowVector2d(pred * 3), Eigen::RowVector2d(target * 3)), 45.0);
  EXPECT_DOUBLE_EQ(loss_mae(Eigen::RowVector2d(2 * target - pred), target), 2.0);  // sign flip
  EXPECT_THROW(loss_mse(Eigen::MatrixXd(0, 0), Eigen::MatrixXd(0, 0)), std::invalid_argument);
  EXPECT_NEAR(loss_mse(Eigen::RowVector2f(0, 0), Eigen::RowVector2f(1, 3)), 5.0f, 1e-6f);
}

TEST(Metrics, HandComputedFixtures) {
  const Metricsd m = metric_suite(Eigen::Matrix<double, 1, 1>(80), Eigen::Matrix<double, 1, 1>(100));
  EXPECT_NEAR(m.mae, 20.0, 1e-12);
  EXPECT_NEAR(m.rmse, 20.0, 1e-12);
  EXPECT_NEAR(m.smape, 100.0 * 40.0 / 180.0, 1e-12);
  const Metricsd z = metric_suite(Eigen::Matrix<double, 1, 1>(0), Eigen::Matrix<double, 1, 1>(0));
  EXPECT_EQ(z.smape, 0.0);
  const Eigen::RowVector3d y(3, 3, 3);
  const Metricsd same = metric_suite(y, y);
  EXPECT_EQ(same.mae, 0.0);
  EXPECT_EQ(same.rmse, 0.0);
  EXPECT_EQ(same.smape, 0.0);
}

TEST(Metrics, MaeNeverExceedsRmseAndSmapeBounded) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd a(17), b(17);
    for (int i = 0; i < 17; ++i) {
      a(i) = u(rng);
      b(i) = u(rng);
    }
    const Metricsd m = metric_suite(a, b);
    EXPECT_LE(m.mae, m.rmse + 1e-15);
    EXPECT_GE(m.smape, 0.0);
    EXPECT_LE(m.smape, 200.0);
  }
}

TEST(Optimizer, SgdStep) {
  ParameterSet p;
  p.add("w", Eigen::MatrixXd::Constant(1, 1, 1.0));
  GradientSet g = p.zeros_like();
  g[0](0, 0) = 2.0;
  Optimizer(OptimizerKind::sgd, 0.1).step(p, g);
  EXPECT_NEAR(p[0].value(0, 0), 0.8, 1e-15);
}

TEST(Optimizer, AdamFirstStepIsSignStep) {
  for (double grad : {3.0, -0.02, 1e-3}) {
    ParameterSet p;
    p.add("w", Eigen::MatrixXd::Constant(1, 1, 0.5));
    GradientSet g = p.zeros_like();
    g[0](0, 0) = grad;
    Optimizer(OptimizerKind::adam, 1e-2).step(p, g);
    // m_hat = g, v_hat = g^2 on the first step.
    EXPECT_NEAR(p[0].value(0, 0), 0.5 - 1e-2 * grad / (std::abs(grad) + 1e-8), 1e-15);
  }
}

TEST(Optimizer, ZeroGradientLeavesAdamParametersUnchanged) {
  ParameterSet p;
  p.add("w", Eigen::MatrixXd::Constant(2, 1, 0.5));
  Optimizer opt(OptimizerKind::adam, 1e-2);
  opt.step(p, p.zeros_like());
  EXPECT_EQ(p[0].value, Eigen::MatrixXd::Constant(2, 1, 0.5));
}

TEST(Optimizer, AdamWDecaysWeights) {
  ParameterSet p;
  p.add("w", Eigen::MatrixXd::Constant(1, 1, 2.0));
  Optimizer(OptimizerKind::adamw, 0.1, 1e-2).step(p, p.zeros_like());
  EXPECT_NEAR(p[0].value(0, 0), 2.0 * (1 - 0.1 * 1e-2), 1e-15);
}

TEST(Optimizer, ResetsMomentsOnShapeChangeAndRejectsNan) {
  ParameterSet p;
  p.add("w", Eigen::MatrixXd::Constant(1, 1, 0.0));
  Optimizer opt(OptimizerKind::adam, 0.1);
  GradientSet g = p.zeros_like();
  g[0](0, 0) = 1.0;
  opt.step(p, g);
  p.replace(0, Eigen::MatrixXd::Zero(2, 1));
  GradientSet g2 = p.zeros_like();
  g2[0].setConstant(-4.0);
  opt.step(p, g2);  // fresh moments: a plain first step
  EXPECT_NEAR(p[0].value(1, 0), 0.1, 1e-9);
  g2[0](0, 0) = std::nan("");
  try {
    opt.step(p, g2);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
}

TEST(Optimizer, SharedCoordinatesStayEqual) {
  ParameterSet p;
  p.add("w", (Eigen::MatrixXd(2, 1) << 1.0, 3.0).finished());
  p.add_share_group({ShareSite{0, {0}}, ShareSite{0, {1}}});
  GradientSet g = p.zeros_like();
  g[0] << 0.7, 0.7;  // tied gradients are identical by construction
  Optimizer opt(OptimizerKind::adam, 0.05);
  for (int i = 0; i < 5; ++i) opt.step(p, g);
  EXPECT_EQ(p[0].value(0, 0), p[0].value(1, 0));
}

TEST(Monitor, RiggedSequenceStopsAfterSeventhEpochWithOneHalving) {
  TrainingMonitor m(3, 5);
  const std::vector<double> losses{5, 4, 4, 4, 4, 4, 4};
  int reductions = 0, reduced_at = 0, stopped_at = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const auto d = m.observe(losses[i]);
    if (d.reduce_lr) {
      ++reductions;
      reduced_at = static_cast<int>(i) + 1;
    }
    if (d.stop) {
      stopped_at = static_cast<int>(i) + 1;
      break;
    }
  }
  EXPECT_EQ(stopped_at, 7);
  EXPECT_EQ(reductions, 1);
  EXPECT_EQ(reduced_at, 5);
  EXPECT_EQ(m.best_epoch(), 2);
  EXPECT_EQ(m.best(), 4.0);
}

TEST(Monitor, PlateauWithoutStopping) {
  TrainingMonitor m(3, 100);
  std::vector<int> reductions;
  const std::vector<double> losses{1, 2, 2, 2, 0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6};
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (m.observe(losses[i]).reduce_lr) reductions.push_back(static_cast<int>(i) + 1);
  EXPECT_EQ(reductions, (std::vector<int>{4, 8, 11}));
}

TrainConfig small_config(ModelKind kind) {
  TrainConfig c;
  c.model = kind;
  c.hidden_size = 6;
  c.num_layers = 1;
  c.grid_points = 4;
  c.max_epochs = 40;
  c.batch_size = 8;
  c.learning_rate = 1e-2;
  c.seed = 3;
  return c;
}

TEST(Fit, RestoresBestValidationParameters) {
  // Training pulls outputs towards 0.9 while validation wants 0.1, so the
  // validation loss bottoms out early and early stopping fires.
  SequenceBatch train = test::random_batch(32, 3, 6, 2, 1);
  train.targets.setConstant(0.9);
  SequenceBatch val = test::random_batch(16, 3, 6, 2, 2);
  val.targets.setConstant(0.1);
  for (ModelKind kind : {ModelKind::karn, ModelKind::rnn}) {
    TrainConfig cfg = small_config(kind);
    ForecastModel model = build_model(cfg, 3, 2);
    const FitResult r = fit(model, train, val, cfg);
    EXPECT_TRUE(r.stopped_early);
    EXPECT_EQ(r.epochs_run, r.best_epoch + cfg.early_stop_patience);
    double min_val = std::numeric_limits<double>::infinity();
    for (const auto& e : r.curve) min_val = std::min(min_val, e.val_loss);
    EXPECT_EQ(r.best_val_loss, min_val);
    EXPECT_DOUBLE_EQ(objective_loss(model, val, cfg.objective), min_val);
  }
}

TEST(Fit, SameSeedSameResult) {
  const SequenceBatch train = test::random_batch(40, 3, 5, 2, 5);
  const SequenceBatch val = test::random_batch(10, 3, 5, 2, 6);
  TrainConfig cfg = small_config(ModelKind::karn);
  cfg.max_epochs = 5;
  ForecastModel a = build_model(cfg, 3, 2), b = build_model(cfg, 3, 2);
  const FitResult ra = fit(a, train, val, cfg), rb = fit(b, train, val, cfg);
  ASSERT_EQ(ra.curve.size(), rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i) EXPECT_EQ(ra.curve[i].val_loss, rb.curve[i].val_loss);
  EXPECT_EQ(predict(a, val), predict(b, val));
}

TEST(Fit, ExtendsGridAtConfiguredEpoch) {
  const SequenceBatch train = test::random_batch(40, 3, 5, 2, 5);
  const SequenceBatch val = test::random_batch(10, 3, 5, 2, 6);
  TrainConfig cfg = small_config(ModelKind::karn);
  cfg.grid_points = 10;
  cfg.initial_grid_points = 5;
  cfg.grid_extend_epoch = 2;
  cfg.max_epochs = 3;
  cfg.early_stop_patience = 10;
  ForecastModel m = build_model(cfg, 3, 2);
  EXPECT_EQ(std::get<KarnNetwork>(m).layout(0).grid.interior_count, 5);
  const FitResult r = fit(m, train, val, cfg);
  ASSERT_EQ(r.extensions.size(), 1u);
  EXPECT_LT(r.extensions[0].max_deviation, 1e-6);
}

TEST(Fit, DivergenceReportsEpoch) {
  const SequenceBatch train = test::random_batch(16, 3, 4, 2, 5);
  const SequenceBatch val = test::random_batch(8, 3, 4, 2, 6);
  TrainConfig cfg = small_config(ModelKind::rnn);
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 1e200;
  ForecastModel m = build_model(cfg, 3, 2);
  try {
    fit(m, train, val, cfg);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(Config, ValidationAndHash) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  TrainConfig bad = c;
  bad.hidden_size = 100;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_NO_THROW(bad.validate(false));
  bad = c;
  bad.grid_points = 15;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.max_epochs = 301;
  EXPECT_THROW(bad.validate(), ConfigError);
  TrainConfig other = c;
  other.learning_rate = 2e-3;
  EXPECT_NE(c.hash(), other.hash());
  EXPECT_EQ(c.hash_hex().size(), 16u);
  // Baseline hashes ignore spline settings.
  TrainConfig r1 = c, r2 = c;
  r1.model = r2.model = ModelKind::gru;
  r2.grid_points = 9;
  EXPECT_EQ(r1.hash(), r2.hash());
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Search, CartesianCounts) {
  TrainConfig base;
  base.model = ModelKind::lstm;
  EXPECT_EQ(enumerate(SearchSpace{}, base).size(), 54u);
  base.model = ModelKind::karn;
  const auto karn = enumerate(SearchSpace{}, base);
  EXPECT_EQ(karn.size(), 2106u);
  std::set<std::uint64_t> hashes;
  for (const auto& c : karn) hashes.insert(c.hash());
  EXPECT_EQ(hashes.size(), 2106u);
}

TEST(Search, BudgetSubsetIsSeeded) {
  const auto a = budget_subset(2106, 10, 42), b = budget_subset(2106, 10, 42), c = budget_subset(2106, 10, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(budget_subset(5, 10, 1).size(), 5u);
}

PreparedDataset tiny_dataset(std::uint64_t seed) {
  LoadSeries s;
  s.source = "tiny";
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 0.1);
  const HourPoint start = parse_timestamp("2022-01-03T00:00");
  for (int h = 0; h < 300; ++h) {
    s.timestamps.push_back(start + std::chrono::hours{h});
    s.load.push_back(2 + std::sin(h * 2 * 3.14159265358979 / 24) + n(rng));
    s.temperature.push_back(5 + n(rng));
    s.interpolated.push_back(false);
  }
  return prepare_dataset(s, default_features(), WindowSpec{12, 4, 1});
}

TEST(Search, SelectsByValidationOnlyAndRecordsFailures) {
  PreparedDataset data = tiny_dataset(1);
  TrainConfig base = small_config(ModelKind::karn);
  base.max_epochs = 4;
  std::vector<TrainConfig> cands;
  for (double lr : {1e-3, 1e-2, 5e-2}) {
    TrainConfig c = base;
    c.learning_rate = lr;
    cands.push_back(c);
  }
  TrainConfig broken = base;
  broken.batch_size = 0;
  cands.push_back(broken);

  int reported = 0;
  SearchOptions opts;
  opts.on_trial = [&](const TrialResult&, const ForecastModel*) { ++reported; };
  const SearchResult r = grid_search(cands, data, opts);
  EXPECT_EQ(reported, 4);
  ASSERT_EQ(r.ranking.size(), 4u);
  EXPECT_FALSE(r.ranking.back().ok);
  EXPECT_FALSE(r.ranking.back().error.empty());
  for (std::size_t i = 0; i + 2 < r.ranking.size(); ++i) EXPECT_LE(r.ranking[i].val_loss, r.ranking[i + 1].val_loss);
  ASSERT_TRUE(r.winner_report.has_value());
  EXPECT_EQ(r.winner_report->val_loss, r.ranking.front().val_loss);

  // Corrupting the test targets cannot change the winner.
  PreparedDataset corrupted = data;
  corrupted.splits.test.targets.setConstant(1e6);
  const SearchResult rc = grid_search(cands, corrupted);
  EXPECT_EQ(rc.ranking.front().index, r.ranking.front().index);
  EXPECT_EQ(rc.winner_report->config_hash, r.winner_report->config_hash);
  EXPECT_NE(rc.winner_report->metrics.mae, r.winner_report->metrics.mae);

  // Parallel workers give the same ranking.
  SearchOptions par;
  par.workers = 3;
  const SearchResult rp = grid_search(cands, data, par);
  for (std::size_t i = 0; i < r.ranking.size(); ++i) EXPECT_EQ(rp.ranking[i].index, r.ranking[i].index);
}

}  // namespace
}  // namespace karn
