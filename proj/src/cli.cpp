// SPDX-License-Identifier: Apache-2.0
#include "karn/cli.hpp"

#include "karn/checkpoint.hpp"
#include "karn/errors.hpp"
#include "karn/run_config.hpp"
#include "karn/synthetic.hpp"
#include "karn/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

namespace karn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  RunConfig config;
  fs::path root;
  std::ostream& out;
};

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

json metrics_json(const Metricsd& m) { return {{"mae", m.mae}, {"rmse", m.rmse}, {"smape", m.smape}}; }

json config_json(const std::string& canonical) {
  json j = json::object();
  std::istringstream in(canonical);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

std::string canonical_value(const std::string& canonical, const std::string& key) {
  const json j = config_json(canonical);
  return j.contains(key) ? j[key].get<std::string>() : std::string();
}

std::string curve_csv(const std::vector<EpochRecord>& curve) {
  std::string s = "epoch,train_loss,val_loss,learning_rate\n";
  for (const EpochRecord& r : curve)
    s += std::to_string(r.epoch) + "," + real(r.train_loss) + "," + real(r.val_loss) + "," + real(r.learning_rate) + "\n";
  return s;
}

std::vector<EpochRecord> read_curve(const fs::path& path) {
  std::vector<EpochRecord> curve;
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  while (std::getline(f, line)) {
    EpochRecord r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &r.epoch, &r.train_loss, &r.val_loss, &r.learning_rate) == 4)
      curve.push_back(r);
  }
  return curve;
}

// Dataset handling

fs::path cache_path(const Context& ctx) { return ctx.root / "dataset.cache"; }

std::string schema_string(const CsvSchema& s) {
  return s.timestamp + "|" + s.load + "|" + s.temperature + "|" + std::string(1, s.delimiter);
}

json feature_stats(const PreparedDataset& d) {
  json stats = json::array();
  for (std::size_t f = 0; f < d.features.size(); ++f) {
    const auto row = d.raw.row(static_cast<Eigen::Index>(f));
    stats.push_back({{"name", to_string(d.features[f])},
                     {"min", row.minCoeff()},
                     {"max", row.maxCoeff()},
                     {"mean", row.mean()},
                     {"scaler_min", d.scaler.min(static_cast<Eigen::Index>(f))},
                     {"scaler_max", d.scaler.max(static_cast<Eigen::Index>(f))}});
  }
  return stats;
}

struct Dataset {
  PreparedDataset data;
  std::string id;
};

Dataset prepare_from_csv(const Context& ctx, std::size_t* missing_hours = nullptr) {
  const RunConfig& rc = ctx.config;
  const LoadSeries series = ingest_csv(rc.data, rc.schema);
  if (missing_hours) *missing_hours = series.missing_hours();
  Dataset d{prepare_dataset(series, rc.features), file_digest(rc.data)};
  TensorArchive a = dataset_to_archive(d.data);
  a.set("dataset_id", d.id);
  a.set("schema", schema_string(rc.schema));
  a.set("missing_hours", std::to_string(series.missing_hours()));
  save_archive(cache_path(ctx), a);
  return d;
}

/// The cached windows when they match the configured CSV, else a fresh
/// preparation that also refreshes the cache.
Dataset obtain_dataset(const Context& ctx) {
  const RunConfig& rc = ctx.config;
  const fs::path cache = cache_path(ctx);
  if (fs::exists(cache)) {
    const TensorArchive a = load_archive(cache);
    const bool same_features = a.get("features") == feature_set_string(rc.features);
    if (rc.data.empty()) {
      if (rc.features_set && !same_features)
        throw ConfigError("cached dataset has features [" + a.get("features") + "], requested [" +
                          feature_set_string(rc.features) + "]; set data=<csv> to prepare again");
      return Dataset{dataset_from_archive(a), a.has("dataset_id") ? a.get("dataset_id") : "-"};
    }
    if (same_features && a.has("dataset_id") && a.get("dataset_id") == file_digest(rc.data) && a.has("schema") &&
        a.get("schema") == schema_string(rc.schema))
      return Dataset{dataset_from_archive(a), a.get("dataset_id")};
  }
  if (rc.data.empty()) throw ConfigError("no dataset: set data=<csv> or run 'prepare' first");
  return prepare_from_csv(ctx);
}

/// Re-windows `d` with a checkpoint's scaler when it differs from the fitted one.
void adopt_scaler(PreparedDataset& d, const ScalerParams& scaler) {
  if (d.scaler.min == scaler.min && d.scaler.max == scaler.max) return;
  d.scaler = scaler;
  d.splits = split_and_window(apply_scaler(scaler, d.raw), d.load_row, d.bounds, d.spec, d.interpolated);
}

const SequenceBatch& split_named(const PreparedDataset& d, const std::string& name) {
  if (name == "train") return d.splits.train;
  if (name == "val") return d.splits.val;
  if (name == "test") return d.splits.test;
  throw ConfigError("split must be train, val or test (got '" + name + "')");
}

Checkpoint make_checkpoint(const ForecastModel& model, const PreparedDataset& d, const TrainConfig& c,
                           const std::string& dataset_id) {
  return Checkpoint{model, d.scaler, d.features, d.spec, c.hash_hex(), c.canonical(), dataset_id};
}

json report_json(const std::string& model_id, const std::string& dataset_id, const std::string& config_hash,
                 const std::string& canonical, const std::string& split, const Metricsd& metrics,
                 const Metricsd& persistence, double val_loss, int epochs_run, int best_epoch, double wall_time,
                 Eigen::Index forecast_hours) {
  return {{"model_id", model_id},
          {"dataset_id", dataset_id},
          {"config_hash", config_hash},
          {"config", config_json(canonical)},
          {"split", split},
          {"metrics", metrics_json(metrics)},
          {"persistence", metrics_json(persistence)},
          {"val_loss", val_loss},
          {"epochs_run", epochs_run},
          {"best_epoch", best_epoch},
          {"wall_time", wall_time},
          {"forecast_hours", forecast_hours}};
}

Metricsd persistence_metrics(const PreparedDataset& d, const SequenceBatch& b) {
  return metric_suite(d.unscale_load(persistence_forecast(b, d.load_row)), d.unscale_load(b.targets));
}

void print_metrics(std::ostream& out, const std::string& label, const Metricsd& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: MAE %.6g  RMSE %.6g  SMAPE %.4f%%\n", label.c_str(), m.mae, m.rmse, m.smape);
  out << buf;
}

// Commands

int cmd_prepare(const Context& ctx) {
  if (ctx.config.data.empty()) throw ConfigError("prepare needs data=<csv>");
  std::size_t missing = 0;
  const Dataset d = prepare_from_csv(ctx, &missing);
  const PreparedDataset& p = d.data;
  const auto train_h = p.bounds.train_end, val_h = p.bounds.val_end - p.bounds.train_end,
             test_h = p.bounds.total - p.bounds.val_end;
  const json summary = {
      {"source", p.source},
      {"dataset_id", d.id},
      {"rows", p.bounds.total},
      {"missing_hours", missing},
      {"features", feature_set_string(p.features)},
      {"split_hours", {{"train", train_h}, {"val", val_h}, {"test", test_h}}},
      {"windows",
       {{"train", p.splits.train.samples()}, {"val", p.splits.val.samples()}, {"test", p.splits.test.samples()}}},
      {"feature_stats", feature_stats(p)},
      {"cache", cache_path(ctx).string()},
      {"cache_digest", file_digest(cache_path(ctx))}};
  write_json(ctx.root / "summary.json", summary);
  ctx.out << "prepared " << p.bounds.total << " hours (" << missing << " interpolated); split hours " << train_h << "/"
          << val_h << "/" << test_h << "; windows " << p.splits.train.samples() << "/" << p.splits.val.samples() << "/"
          << p.splits.test.samples() << "\n"
          << "cache " << cache_path(ctx).string() << " digest " << summary["cache_digest"].get<std::string>() << "\n";
  return kOk;
}

int cmd_train(const Context& ctx, bool verbose) {
  const TrainConfig& cfg = ctx.config.train;
  const Dataset ds = obtain_dataset(ctx);
  const PreparedDataset& d = ds.data;
  ForecastModel model = build_model(cfg, static_cast<int>(d.features.size()), d.spec.horizon);
  FitOptions options;
  if (verbose)
    options.on_epoch = [&](const EpochRecord& r) {
      char buf[120];
      std::snprintf(buf, sizeof buf, "epoch %3d  train %.6g  val %.6g  lr %.3g\n", r.epoch, r.train_loss, r.val_loss,
                    r.learning_rate);
      ctx.out << buf << std::flush;
    };
  const FitResult fit_result = fit(model, d.splits.train, d.splits.val, cfg, options);
  const Metricsd metrics = evaluate(model, d.splits.test, d);
  const Metricsd persistence = persistence_metrics(d, d.splits.test);

  save_checkpoint(ctx.root / "model.ckpt", make_checkpoint(model, d, cfg, ds.id));
  write_text(ctx.root / "loss_curve.csv", curve_csv(fit_result.curve));
  write_json(ctx.root / "report.json",
             report_json(to_string(cfg.model), ds.id, cfg.hash_hex(), cfg.canonical(), "test", metrics, persistence,
                         fit_result.best_val_loss, fit_result.epochs_run, fit_result.best_epoch, fit_result.wall_time,
                         d.splits.test.targets.size()));
  ctx.out << "trained " << to_string(cfg.model) << " [" << cfg.hash_hex() << "] for " << fit_result.epochs_run
          << " epochs (best " << fit_result.best_epoch << ", val loss " << real(fit_result.best_val_loss) << ")\n";
  for (const GridExtensionReport& e : fit_result.extensions)
    ctx.out << "  grid extension layer " << e.layer << ": " << e.old_interior_count << " -> " << e.new_interior_count
            << ", max deviation " << e.max_deviation << "\n";
  print_metrics(ctx.out, "test", metrics);
  print_metrics(ctx.out, "persistence", persistence);
  return kOk;
}

void write_svg(const fs::path& path, const std::vector<double>& actual, const std::vector<double>& forecast) {
  const double w = 960, h = 320, pad = 30;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : actual) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : forecast) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1;
  const double n = std::max<double>(1, static_cast<double>(actual.size()) - 1);
  auto line = [&](const std::vector<double>& v, const char* color) {
    std::string pts;
    for (std::size_t i = 0; i < v.size(); ++i) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", pad + (w - 2 * pad) * static_cast<double>(i) / n,
                    h - pad - (h - 2 * pad) * (v[i] - lo) / (hi - lo));
      pts += buf;
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
  };
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"320\">\n"
                    "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += line(actual, "black") + line(forecast, "crimson");
  svg += "<text x=\"30\" y=\"20\" font-size=\"12\">actual (black) vs forecast (red), kWh</text>\n</svg>\n";
  write_text(path, svg);
}

int cmd_evaluate(const Context& ctx, const std::string& checkpoint_arg, const std::string& split, bool svg) {
  const fs::path ckpt = checkpoint_arg.empty() ? ctx.root / "model.ckpt" : fs::path(checkpoint_arg);
  const Checkpoint cp = load_checkpoint(ckpt);
  Dataset ds = obtain_dataset(ctx);
  PreparedDataset& d = ds.data;
  if (d.features != cp.features)
    throw DataError("feature mismatch: checkpoint has [" + feature_set_string(cp.features) + "], dataset has [" +
                    feature_set_string(d.features) + "]");
  if (d.spec.window != cp.spec.window || d.spec.horizon != cp.spec.horizon)
    throw DataError("window mismatch between checkpoint and dataset");
  adopt_scaler(d, cp.scaler);

  const SequenceBatch& batch = split_named(d, split);
  if (batch.empty()) throw DataError("split '" + split + "' has no windows");
  const Eigen::MatrixXd forecast = d.unscale_load(predict(cp.model, batch));
  const Eigen::MatrixXd actual = d.unscale_load(batch.targets);
  const Metricsd metrics = metric_suite(forecast, actual);
  const Metricsd persistence = persistence_metrics(d, batch);
  const std::string objective = canonical_value(cp.config_text, "objective");
  const double val_loss =
      d.splits.val.empty() ? 0.0
                           : objective_loss(cp.model, d.splits.val, objective.empty() ? Objective::mse : parse_objective(objective));

  std::string csv = "window,timestamp,step,actual,forecast\n";
  for (Eigen::Index i = 0; i < forecast.rows(); ++i)
    for (Eigen::Index s = 0; s < forecast.cols(); ++s) {
      const auto t = static_cast<std::size_t>(batch.target_index[static_cast<std::size_t>(i)] + s);
      csv += std::to_string(i) + "," + format_timestamp(d.timestamps[t]) + "," + std::to_string(s + 1) + "," +
             real(actual(i, s)) + "," + real(forecast(i, s)) + "\n";
    }
  write_text(ctx.root / "forecast.csv", csv);
  write_json(ctx.root / "eval_report.json",
             report_json(to_string(kind_of(cp.model)), ds.id, cp.config_hash, cp.config_text, split, metrics,
                         persistence, val_loss, 0, 0, 0.0, forecast.size()));
  if (svg) {
    // Non-overlapping windows, up to two weeks.
    std::vector<double> a, f;
    for (Eigen::Index i = 0; i < forecast.rows() && a.size() < 336; i += forecast.cols())
      for (Eigen::Index s = 0; s < forecast.cols(); ++s) a.push_back(actual(i, s)), f.push_back(forecast(i, s));
    write_svg(ctx.root / "forecast.svg", a, f);
  }
  ctx.out << "evaluated " << ckpt.string() << " on " << split << " (" << forecast.size() << " forecast hours)\n";
  print_metrics(ctx.out, split, metrics);
  print_metrics(ctx.out, "persistence", persistence);
  return kOk;
}

json trial_json(const TrialResult& r, const std::string& dataset_id) {
  return {{"model_id", to_string(r.config.model)},
          {"dataset_id", dataset_id},
          {"config_hash", r.config.hash_hex()},
          {"config", config_json(r.config.canonical())},
          {"status", r.ok ? "ok" : "failed"},
          {"error", r.error},
          {"val_loss", r.ok ? json(r.val_loss) : json(nullptr)},
          {"epochs_run", r.fit.epochs_run},
          {"best_epoch", r.fit.best_epoch},
          {"wall_time", r.fit.wall_time}};
}

int cmd_search(const Context& ctx) {
  const RunConfig& rc = ctx.config;
  const Dataset ds = obtain_dataset(ctx);
  const PreparedDataset& d = ds.data;
  std::vector<TrainConfig> all = enumerate(rc.search, rc.train);
  std::vector<TrainConfig> candidates;
  if (rc.search_budget > 0 && static_cast<std::size_t>(rc.search_budget) < all.size()) {
    for (std::size_t i : budget_subset(all.size(), static_cast<std::size_t>(rc.search_budget), rc.train.seed))
      candidates.push_back(all[i]);
  } else {
    candidates = all;
  }
  const fs::path trials = ctx.root / "trials";
  std::atomic<int> skipped{0};
  int ran = 0;

  SearchOptions options;
  options.workers = rc.search_workers;
  options.completed = [&](const TrainConfig& cfg) -> std::optional<std::pair<TrialResult, ForecastModel>> {
    const fs::path dir = trials / cfg.hash_hex();
    if (!fs::exists(dir / "report.json") || !fs::exists(dir / "model.ckpt")) return std::nullopt;
    const json rep = read_json(dir / "report.json");
    if (rep.value("status", "") != "ok" || rep.value("config_hash", "") != cfg.hash_hex()) return std::nullopt;
    Checkpoint cp = load_checkpoint(dir / "model.ckpt");
    if (cp.features != d.features || cp.scaler.min != d.scaler.min || cp.scaler.max != d.scaler.max)
      return std::nullopt;
    TrialResult r;
    r.config = cfg;
    r.ok = true;
    r.val_loss = rep["val_loss"].get<double>();
    r.fit.best_val_loss = r.val_loss;
    r.fit.epochs_run = rep["epochs_run"].get<int>();
    r.fit.best_epoch = rep["best_epoch"].get<int>();
    r.fit.wall_time = rep["wall_time"].get<double>();
    r.fit.curve = read_curve(dir / "loss_curve.csv");
    ++skipped;
    return std::make_pair(std::move(r), std::move(cp.model));
  };
  options.on_trial = [&](const TrialResult& r, const ForecastModel* model) {
    ++ran;
    const fs::path dir = trials / r.config.hash_hex();
    fs::create_directories(dir);
    if (model) {
      save_checkpoint(dir / "model.ckpt", make_checkpoint(*model, d, r.config, ds.id));
      write_text(dir / "loss_curve.csv", curve_csv(r.fit.curve));
    }
    write_json(dir / "report.json", trial_json(r, ds.id));
    ctx.out << "trial " << r.config.hash_hex() << " " << to_string(r.config.model) << " "
            << (r.ok ? "val loss " + real(r.val_loss) : "failed: " + r.error) << "\n"
            << std::flush;
  };
  const SearchResult result = grid_search(candidates, d, options);

  std::string csv =
      "rank,config_hash,model,hidden_size,num_layers,optimizer,objective,spline_degree,grid_points,val_loss,epochs_run,"
      "status,error\n";
  int rank = 0;
  for (const TrialResult& r : result.ranking) {
    const TrainConfig& c = r.config;
    std::string error = r.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    csv += std::to_string(++rank) + "," + c.hash_hex() + "," + to_string(c.model) + "," + std::to_string(c.hidden_size) +
           "," + std::to_string(c.num_layers) + "," + to_string(c.optimizer) + "," + to_string(c.objective) + "," +
           (c.is_karn() ? std::to_string(c.spline_degree) : "") + "," + (c.is_karn() ? std::to_string(c.grid_points) : "") +
           "," + (r.ok ? real(r.val_loss) : "") + "," + std::to_string(r.fit.epochs_run) + "," + (r.ok ? "ok" : "failed") +
           "," + error + "\n";
  }
  write_text(ctx.root / "ranking.csv", csv);

  json summary = {{"candidates", candidates.size()},
                  {"grid_size", all.size()},
                  {"ran", ran},
                  {"skipped", skipped.load()},
                  {"failed", std::count_if(result.ranking.begin(), result.ranking.end(),
                                           [](const TrialResult& r) { return !r.ok; })}};
  if (!result.winner) {
    write_json(ctx.root / "search.json", summary);
    throw NumericalError("every search trial failed");
  }
  const MetricsReport& w = *result.winner_report;
  const Metricsd persistence = persistence_metrics(d, d.splits.test);
  save_checkpoint(ctx.root / "best" / "model.ckpt", make_checkpoint(*result.winner, d, w.config, ds.id));
  write_text(ctx.root / "best" / "loss_curve.csv", curve_csv(w.curve));
  write_json(ctx.root / "best" / "report.json",
             report_json(w.model_id, ds.id, w.config_hash, w.config.canonical(), "test", w.metrics, persistence,
                         w.val_loss, w.epochs_run, w.best_epoch, w.wall_time, d.splits.test.targets.size()));
  summary["winner"] = w.config_hash;
  summary["winner_val_loss"] = w.val_loss;
  summary["winner_test_metrics"] = metrics_json(w.metrics);
  write_json(ctx.root / "search.json", summary);
  ctx.out << "search: " << candidates.size() << " trials (" << ran << " run, " << skipped.load()
          << " resumed), winner " << w.config_hash << " " << w.model_id << " val loss " << real(w.val_loss) << "\n";
  print_metrics(ctx.out, "winner test", w.metrics);
  return kOk;
}

int cmd_extend_grid(const Context& ctx, const std::string& checkpoint_arg, int grid_points, const std::string& output) {
  const fs::path ckpt = checkpoint_arg.empty() ? ctx.root / "model.ckpt" : fs::path(checkpoint_arg);
  Checkpoint cp = load_checkpoint(ckpt);
  auto* net = std::get_if<KarnNetwork>(&cp.model);
  if (!net) throw ConfigError("extend-grid needs a KARN checkpoint, got " + to_string(kind_of(cp.model)));
  Dataset ds = obtain_dataset(ctx);
  if (ds.data.features != cp.features)
    throw DataError("feature mismatch: checkpoint has [" + feature_set_string(cp.features) + "], dataset has [" +
                    feature_set_string(ds.data.features) + "]");
  adopt_scaler(ds.data, cp.scaler);
  const SequenceBatch probe = probe_subset(ds.data.splits.train, kGridProbeWindows);
  const Eigen::Index before = parameters(cp.model).scalar_count();
  json layers = json::array();
  for (int l = 0; l < net->layer_count(); ++l) {
    GridExtensionReport r;
    try {
      r = extend_network_grid(*net, l, grid_points, probe);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("cannot extend grid: ") + e.what());
    }
    layers.push_back({{"layer", r.layer},
                      {"old_grid_points", r.old_interior_count},
                      {"new_grid_points", r.new_interior_count},
                      {"max_deviation", r.max_deviation},
                      {"fallback_inputs", r.fallback_inputs},
                      {"rank_deficient", r.rank_deficient},
                      {"added_parameters", r.added_parameters}});
    ctx.out << "layer " << r.layer << ": grid " << r.old_interior_count << " -> " << r.new_interior_count
            << ", max deviation " << real(r.max_deviation) << ", +" << r.added_parameters << " parameters\n";
  }
  const Eigen::Index after = parameters(cp.model).scalar_count();
  const fs::path target = output.empty() ? ctx.root / "extended.ckpt" : fs::path(output);
  save_checkpoint(target, cp);
  write_json(ctx.root / "extend_report.json", {{"checkpoint", target.string()},
                                               {"parameters_before", before},
                                               {"parameters_after", after},
                                               {"layers", layers}});
  ctx.out << "wrote " << target.string() << " (" << before << " -> " << after << " parameters)\n";
  return kOk;
}

struct SyntheticArgs {
  std::string profile;
  std::size_t length = 4392;
  std::string output;
  std::string start;
  std::optional<double> spike_rate;
  std::optional<double> noise;
  std::optional<bool> level_shifts;
};

int cmd_gen_synthetic(const Context& ctx, const SyntheticArgs& a) {
  SyntheticOptions o = synthetic_defaults(parse_profile(a.profile), a.length, ctx.config.train.seed);
  if (!a.start.empty()) o.start = a.start;
  if (a.spike_rate) o.spike_rate_per_day = *a.spike_rate;
  if (a.noise) o.noise = *a.noise;
  if (a.level_shifts) o.level_shifts = *a.level_shifts;
  if (o.spike_rate_per_day > 0 && o.spike_hours == 0) {
    o.spike_hours = 2;
    o.spike_power = 4.0;
  }
  if (o.level_shifts && o.level_shift_rate_per_day == 0) o.level_shift_rate_per_day = 1.0 / 30.0;
  const SyntheticSeries s = generate_synthetic(o);
  const fs::path target = a.output.empty() ? ctx.root / ("synthetic-" + a.profile + ".csv") : fs::path(a.output);
  std::ostringstream csv;
  write_csv(csv, s.series);
  write_text(target, csv.str());
  ctx.out << "wrote " << target.string() << ": " << s.series.size() << " hours, " << s.spike_starts.size() << " spikes, "
          << s.level_shifts.size() << " level shifts\n";
  return kOk;
}

struct GradientArgs {
  std::string checkpoint;
  int samples = 2;
  int window = 6;
  int horizon = 4;
  int hidden = 8;
  double tolerance = 1e-4;
};

int cmd_check_gradients(const Context& ctx, const GradientArgs& a) {
  if (a.samples < 1 || a.window < 1 || a.horizon < 1 || a.hidden < 1)
    throw ConfigError("samples, window, horizon and hidden must be positive");
  std::optional<ForecastModel> model;
  int features = static_cast<int>(ctx.config.features.size());
  int horizon = a.horizon;
  Objective objective = ctx.config.train.objective;
  if (!a.checkpoint.empty()) {
    Checkpoint cp = load_checkpoint(a.checkpoint);
    features = input_dim_of(cp.model);
    horizon = horizon_of(cp.model);
    model = std::move(cp.model);
  } else {
    TrainConfig small = ctx.config.train;
    small.hidden_size = a.hidden;
    model = build_model(small, features, horizon);
  }
  std::mt19937_64 rng(ctx.config.train.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::MatrixXd> steps;
  for (int t = 0; t < a.window; ++t)
    steps.push_back(Eigen::MatrixXd::NullaryExpr(features, a.samples, [&] { return unit(rng); }));
  const Eigen::MatrixXd targets = Eigen::MatrixXd::NullaryExpr(horizon, a.samples, [&] { return unit(rng); });

  const ForecastModel& m = *model;
  const LossFn loss = [&](ad::Tape& tape, const std::vector<ad::Var>& bound) {
    const ad::Var pred = forward(tape, m, bound, steps);
    return objective == Objective::mse ? ad::mse_loss(pred, targets) : ad::mae_loss(pred, targets);
  };
  const GradientCheckReport rep = check_gradients(parameters(*model), loss, a.tolerance);
  for (const TensorCheck& t : rep.tensors)
    ctx.out << t.name << ": max relative error " << real(t.max_relative_error) << " over " << t.checked
            << " coordinates\n";
  ctx.out << "gradient check " << (rep.passed() ? "passed" : "FAILED") << ": max relative error "
          << real(rep.max_relative_error()) << " (tolerance " << real(a.tolerance) << ")\n";
  return rep.passed() ? kOk : kNumericalError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kolmogorov-Arnold recurrent network load forecasting", "karnlf"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, data, model, features;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "Run configuration file (key = value)");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("-s,--set", sets, "Override one setting, key=value (repeatable)");
  app.add_option("--data", data, "Input CSV");
  app.add_option("--model", model, "karn, rnn, gru or lstm");
  app.add_option("--features", features, "Comma separated feature names");

  auto* prepare = app.add_subcommand("prepare", "Ingest a CSV and cache the windowed splits");
  auto* train = app.add_subcommand("train", "Train one model and report test metrics");
  bool verbose = false;
  train->add_flag("-v,--verbose", verbose, "Print every epoch");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Forecast a split with a checkpoint");
  std::string checkpoint, split = "test";
  bool svg = false;
  evaluate_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/model.ckpt)");
  evaluate_cmd->add_option("--split", split, "train, val or test");
  evaluate_cmd->add_flag("--svg", svg, "Also write forecast.svg");
  auto* search = app.add_subcommand("search", "Grid search over the configured space");
  auto* extend = app.add_subcommand("extend-grid", "Refit every KARN layer onto a finer grid");
  int grid_points = 0;
  std::string output;
  extend->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/model.ckpt)");
  extend->add_option("--grid-points", grid_points, "New number of grid intervals")->required();
  extend->add_option("--output", output, "Extended checkpoint (default <out>/extended.ckpt)");
  auto* gen = app.add_subcommand("gen-synthetic", "Write a deterministic synthetic load CSV");
  SyntheticArgs syn;
  gen->add_option("--profile", syn.profile, "smooth, clinic, spiky, ev or house")->required();
  gen->add_option("--length", syn.length, "Hours");
  gen->add_option("--output", syn.output, "CSV path (default <out>/synthetic-<profile>.csv)");
  gen->add_option("--start", syn.start, "First timestamp");
  gen->add_option("--spike-rate", syn.spike_rate, "Spikes per day");
  gen->add_option("--noise", syn.noise, "Relative noise level");
  gen->add_option("--level-shifts", syn.level_shifts, "true or false");
  auto* grads = app.add_subcommand("check-gradients", "Compare backpropagated and finite-difference gradients");
  GradientArgs ga;
  grads->add_option("--checkpoint", ga.checkpoint, "Check a saved model instead of a fresh one");
  grads->add_option("--samples", ga.samples, "Random samples");
  grads->add_option("--window", ga.window, "Input steps");
  grads->add_option("--horizon", ga.horizon, "Forecast steps for a fresh model");
  grads->add_option("--hidden", ga.hidden, "Hidden size of a fresh model");
  grads->add_option("--tolerance", ga.tolerance, "Relative error bound");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    RunConfig rc;
    if (!config_path.empty()) rc = load_run_config(config_path);
    for (const std::string& s : sets) {
      const auto [k, v] = split_setting(s);
      rc.set(k, v);
    }
    if (!data.empty()) rc.set("data", data);
    if (!model.empty()) rc.set("model", model);
    if (!features.empty()) rc.set("features", features);
    if (seed) rc.train.seed = *seed;
    if (!out_dir.empty()) rc.out = out_dir;
    if (rc.out.empty()) {
      const char* env = std::getenv(kOutputRootEnv);
      rc.out = env && *env ? env : "karnlf-out";
    }
    rc.validate();
    Context ctx{rc, fs::path(rc.out), out};
    fs::create_directories(ctx.root);

    if (*prepare) return cmd_prepare(ctx);
    if (*train) return cmd_train(ctx, verbose);
    if (*evaluate_cmd) return cmd_evaluate(ctx, checkpoint, split, svg);
    if (*search) return cmd_search(ctx);
    if (*extend) return cmd_extend_grid(ctx, checkpoint, grid_points, output);
    if (*gen) return cmd_gen_synthetic(ctx, syn);
    if (*grads) return cmd_check_gradients(ctx, ga);
    return kOtherError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOtherError;
  }
}

}  // namespace karn::cli
