// SPDX-License-Identifier: Apache-2.0
#include "karn/training.hpp"

#include "karn/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace karn {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "unknown";
}

std::string to_string(Objective o) { return o == Objective::mse ? "mse" : "mae"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam, sgd or adamw)");
}

Objective parse_objective(const std::string& name) {
  if (name == "mse") return Objective::mse;
  if (name == "mae") return Objective::mae;
  throw ConfigError("unknown objective '" + name + "' (expected mae or mse)");
}

void TrainConfig::validate(bool search_domains) const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (search_domains) {
    if (hidden_size != 64 && hidden_size != 128 && hidden_size != 256)
      fail("hidden_size must be one of 64, 128, 256 (got " + std::to_string(hidden_size) + ")");
    if (num_layers < 1 || num_layers > 3) fail("num_layers must be 1, 2 or 3 (got " + std::to_string(num_layers) + ")");
  } else {
    if (hidden_size < 1) fail("hidden_size must be positive");
    if (num_layers < 1) fail("num_layers must be positive");
  }
  if (is_karn()) {
    if (spline_degree < 1 || spline_degree > 3)
      fail("spline_degree must be 1, 2 or 3 (got " + std::to_string(spline_degree) + ")");
    if (grid_points < (search_domains ? 2 : 1) || (search_domains && grid_points > 14))
      fail("grid_points must lie in [2, 14] (got " + std::to_string(grid_points) + ")");
    if (initial_grid_points < 1) fail("initial_grid_points must be positive");
    if (grid_extend_epoch < 1) fail("grid_extend_epoch must be positive");
    if (!(grid_lo < grid_hi)) fail("grid range must satisfy grid_lo < grid_hi");
  }
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (max_epochs < 1 || max_epochs > 300) fail("max_epochs must lie in [1, 300] (got " + std::to_string(max_epochs) + ")");
  if (early_stop_patience < 1) fail("early_stop_patience must be positive");
  if (lr_plateau_patience < 1) fail("lr_plateau_patience must be positive");
  if (!(lr_plateau_factor > 0 && lr_plateau_factor < 1)) fail("lr_plateau_factor must lie in (0, 1)");
  if (!(min_learning_rate >= 0)) fail("min_learning_rate must be non-negative");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
}

namespace {

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string TrainConfig::canonical() const {
  std::ostringstream s;
  s << "model=" << to_string(model) << "\n"
    << "hidden_size=" << hidden_size << "\n"
    << "num_layers=" << num_layers << "\n"
    << "optimizer=" << to_string(optimizer) << "\n"
    << "objective=" << to_string(objective) << "\n";
  if (is_karn()) {
    s << "spline_degree=" << spline_degree << "\n"
      << "grid_points=" << grid_points << "\n"
      << "initial_grid_points=" << initial_grid_points << "\n"
      << "grid_extend_epoch=" << grid_extend_epoch << "\n"
      << "head_mode=" << (head_mode == HeadMode::last_state ? "last_state" : "per_step") << "\n"
      << "grid_lo=" << real(grid_lo) << "\n"
      << "grid_hi=" << real(grid_hi) << "\n";
  }
  s << "learning_rate=" << real(learning_rate) << "\n"
    << "max_epochs=" << max_epochs << "\n"
    << "early_stop_patience=" << early_stop_patience << "\n"
    << "lr_plateau_factor=" << real(lr_plateau_factor) << "\n"
    << "lr_plateau_patience=" << lr_plateau_patience << "\n"
    << "min_learning_rate=" << real(min_learning_rate) << "\n"
    << "batch_size=" << batch_size << "\n"
    << "weight_decay=" << real(weight_decay) << "\n"
    << "seed=" << seed << "\n";
  return s.str();
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(canonical()); }

std::string TrainConfig::hash_hex() const {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

ForecastModel build_model(const TrainConfig& config, int input_dim, int horizon) {
  const std::vector<int> hidden(static_cast<std::size_t>(config.num_layers), config.hidden_size);
  if (config.is_karn()) {
    KarnConfig k;
    k.input_dim = input_dim;
    k.hidden_sizes = hidden;
    k.horizon = horizon;
    k.degree = config.spline_degree;
    k.grid_points = std::min(config.grid_points, config.initial_grid_points);
    k.range_lo = config.grid_lo;
    k.range_hi = config.grid_hi;
    k.head_mode = config.head_mode;
    return KarnNetwork(k, config.seed);
  }
  BaselineConfig b;
  b.cell = cell_of(config.model);
  b.input_dim = input_dim;
  b.hidden_sizes = hidden;
  b.horizon = horizon;
  return RecurrentBaseline(b, config.seed);
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double weight_decay)
    : kind_(kind), lr_(learning_rate), weight_decay_(weight_decay) {}

void Optimizer::step(ParameterSet& params, const GradientSet& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("gradient set does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParameterEntry& e = params[i];
    if (!e.trainable) continue;
    const Eigen::MatrixXd& g = grads[i];
    if (g.rows() != e.value.rows() || g.cols() != e.value.cols())
      throw std::invalid_argument("gradient for '" + e.name + "' has the wrong shape");
    if (!g.allFinite()) throw NumericalError("non-finite gradient for parameter '" + e.name + "'");
    if (kind_ == OptimizerKind::sgd) {
      e.value -= lr_ * g;
      continue;
    }
    Slot& s = slots_[e.name];
    if (s.m.rows() != g.rows() || s.m.cols() != g.cols()) {
      s.m = Eigen::MatrixXd::Zero(g.rows(), g.cols());
      s.v = Eigen::MatrixXd::Zero(g.rows(), g.cols());
      s.t = 0;
    }
    ++s.t;
    s.m = kAdamBeta1 * s.m + (1 - kAdamBeta1) * g;
    s.v = kAdamBeta2 * s.v + (1 - kAdamBeta2) * g.cwiseAbs2();
    const double c1 = 1 - std::pow(kAdamBeta1, static_cast<double>(s.t));
    const double c2 = 1 - std::pow(kAdamBeta2, static_cast<double>(s.t));
    if (kind_ == OptimizerKind::adamw) e.value *= 1 - lr_ * weight_decay_;
    e.value.array() -= lr_ * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + kAdamEpsilon);
  }
  params.sync_shared();
}

TrainingMonitor::TrainingMonitor(int plateau_patience, int stop_patience)
    : plateau_patience_(plateau_patience),
      stop_patience_(stop_patience),
      best_(std::numeric_limits<double>::infinity()) {}

TrainingMonitor::Decision TrainingMonitor::observe(double val_loss) {
  ++epoch_;
  Decision d;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    since_best_ = 0;
    since_reduce_ = 0;
    d.improved = true;
    return d;
  }
  ++since_best_;
  ++since_reduce_;
  if (since_reduce_ >= plateau_patience_) {
    d.reduce_lr = true;
    since_reduce_ = 0;
  }
  d.stop = since_best_ >= stop_patience_;
  return d;
}

double objective_loss(const ForecastModel& model, const SequenceBatch& batch, Objective objective) {
  const Eigen::MatrixXd pred = predict(model, batch);
  return objective == Objective::mse ? loss_mse(pred, batch.targets) : loss_mae(pred, batch.targets);
}

SequenceBatch probe_subset(const SequenceBatch& batch, Eigen::Index limit) {
  const Eigen::Index n = batch.samples();
  if (n <= limit) return batch;
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < limit; ++i) rows.push_back(i * n / limit);
  return batch.select(rows);
}

FitResult fit(ForecastModel& model, const SequenceBatch& train, const SequenceBatch& val, const TrainConfig& config,
              const FitOptions& options) {
  config.validate(false);
  if (train.empty() || val.empty()) throw DataError("training and validation batches must be non-empty");
  const auto started = std::chrono::steady_clock::now();

  Optimizer opt(config.optimizer, config.learning_rate, config.weight_decay);
  TrainingMonitor monitor(config.lr_plateau_patience, config.early_stop_patience);
  std::mt19937_64 rng(config.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train.samples()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  ForecastModel best = model;
  FitResult result;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
        const std::span<const Eigen::Index> rows(order.data() + b, end - b);
        const std::vector<Eigen::MatrixXd> steps = train.time_major(rows);
        const Eigen::MatrixXd target = train.targets_by_column(rows);
        const LossFn fn = [&](ad::Tape& tape, const std::vector<ad::Var>& bound) {
          const ad::Var y = forward(tape, model, bound, steps);
          return config.objective == Objective::mse ? ad::mse_loss(y, target) : ad::mae_loss(y, target);
        };
        const LossAndGradients lg = backward(parameters(model), fn);
        opt.step(parameters(model), lg.grads);
        loss_sum += lg.loss * static_cast<double>(rows.size());
      }
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) + ": " + e.what());
    }

    auto* karn = std::get_if<KarnNetwork>(&model);
    if (karn && epoch == config.grid_extend_epoch &&
        karn->layout(0).grid.interior_count < config.grid_points) {
      const SequenceBatch probe = probe_subset(train, kGridProbeWindows);
      for (int l = 0; l < karn->layer_count(); ++l)
        result.extensions.push_back(extend_network_grid(*karn, l, config.grid_points, probe));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.learning_rate = opt.learning_rate();
    try {
      rec.val_loss = objective_loss(model, val, config.objective);
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(rec.val_loss))
      throw NumericalError("validation loss is not finite at epoch " + std::to_string(epoch));
    result.curve.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    const TrainingMonitor::Decision d = monitor.observe(rec.val_loss);
    if (d.improved) best = model;
    if (d.reduce_lr)
      opt.set_learning_rate(std::max(opt.learning_rate() * config.lr_plateau_factor, config.min_learning_rate));
    result.epochs_run = epoch;
    if (d.stop) {
      result.stopped_early = true;
      break;
    }
  }
  model = std::move(best);
  result.best_epoch = monitor.best_epoch();
  result.best_val_loss = monitor.best();
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

Metricsd evaluate(const ForecastModel& model, const SequenceBatch& batch, const PreparedDataset& data) {
  const Eigen::MatrixXd pred = data.unscale_load(predict(model, batch));
  const Eigen::MatrixXd actual = data.unscale_load(batch.targets);
  return metric_suite(pred, actual);
}

std::vector<TrainConfig> enumerate(const SearchSpace& space, const TrainConfig& base) {
  std::vector<TrainConfig> out;
  const std::vector<int> no_variation{0};
  const auto& degrees = base.is_karn() ? space.spline_degrees : no_variation;
  const auto& grids = base.is_karn() ? space.grid_points : no_variation;
  for (int h : space.hidden_sizes)
    for (int l : space.num_layers)
      for (OptimizerKind o : space.optimizers)
        for (Objective obj : space.objectives)
          for (int p : degrees)
            for (int g : grids) {
              TrainConfig c = base;
              c.hidden_size = h;
              c.num_layers = l;
              c.optimizer = o;
              c.objective = obj;
              if (base.is_karn()) {
                c.spline_degree = p;
                c.grid_points = g;
              }
              out.push_back(c);
            }
  return out;
}

std::vector<std::size_t> budget_subset(std::size_t total, std::size_t budget, std::uint64_t seed) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (budget >= total) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  return idx;
}

SearchResult grid_search(const std::vector<TrainConfig>& candidates, const PreparedDataset& data,
                         const SearchOptions& options) {
  if (candidates.empty()) throw ConfigError("search space is empty");
  const DatasetSplits& s = data.splits;
  const int features = static_cast<int>(data.features.size());

  std::vector<TrialResult> results(candidates.size());
  std::mutex mu;
  std::optional<ForecastModel> best_model;
  std::size_t best_index = 0;
  double best_val = std::numeric_limits<double>::infinity();
  auto consider = [&](const TrialResult& r, ForecastModel&& m) {
    if (r.ok && (r.val_loss < best_val || (r.val_loss == best_val && r.index < best_index) || !best_model)) {
      best_val = r.val_loss;
      best_index = r.index;
      best_model = std::move(m);
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < candidates.size(); i = next++) {
      const TrainConfig& cfg = candidates[i];
      if (options.completed) {
        if (auto done = options.completed(cfg)) {
          done->first.index = i;
          std::lock_guard<std::mutex> lock(mu);
          results[i] = done->first;
          if (done->first.ok) consider(done->first, std::move(done->second));
          continue;
        }
      }
      TrialResult r;
      r.index = i;
      r.config = cfg;
      std::optional<ForecastModel> model;
      try {
        model = build_model(cfg, features, data.spec.horizon);
        r.fit = fit(*model, s.train, s.val, cfg);
        r.val_loss = r.fit.best_val_loss;
        r.ok = true;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
      std::lock_guard<std::mutex> lock(mu);
      results[i] = r;
      if (options.on_trial) options.on_trial(r, r.ok ? &*model : nullptr);
      if (r.ok) consider(r, std::move(*model));
    }
  };
  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(candidates.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  SearchResult out;
  out.ranking = results;
  std::stable_sort(out.ranking.begin(), out.ranking.end(), [](const TrialResult& a, const TrialResult& b) {
    if (a.ok != b.ok) return a.ok;
    if (a.ok && a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
    return a.index < b.index;
  });
  if (best_model) {
    const TrialResult& w = results[best_index];
    MetricsReport rep;
    rep.model_id = to_string(w.config.model);
    rep.dataset_id = data.source;
    rep.config_hash = w.config.hash_hex();
    rep.config = w.config;
    rep.metrics = evaluate(*best_model, s.test, data);
    rep.val_loss = w.val_loss;
    rep.epochs_run = w.fit.epochs_run;
    rep.best_epoch = w.fit.best_epoch;
    rep.wall_time = w.fit.wall_time;
    rep.curve = w.fit.curve;
    out.winner_report = rep;
    out.winner = std::move(best_model);
  }
  return out;
}

}  // namespace karn
