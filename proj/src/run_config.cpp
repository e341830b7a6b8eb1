// SPDX-License-Identifier: Apache-2.0
#include "karn/run_config.hpp"

#include "karn/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace karn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("setting '" + key + "' expects a number, got '" + value + "'");
  return out;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& value, Parse parse) {
  std::vector<T> out;
  for (const std::string& item : split_list(value)) out.push_back(parse(item));
  if (out.empty()) throw ConfigError("setting '" + key + "' needs at least one value");
  return out;
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& v, Fmt fmt) {
  std::string out;
  for (const T& x : v) out += (out.empty() ? "" : ",") + fmt(x);
  return out;
}

HeadMode parse_head_mode(const std::string& v) {
  if (v == "last_state") return HeadMode::last_state;
  if (v == "per_step") return HeadMode::per_step;
  throw ConfigError("head_mode must be last_state or per_step, got '" + v + "'");
}

ModelKind parse_model(const std::string& v) {
  try {
    return parse_model_kind(v);
  } catch (const std::invalid_argument&) {
    throw ConfigError("unknown model '" + v + "' (expected karn, rnn, gru or lstm)");
  }
}

}  // namespace

std::pair<std::string, std::string> split_setting(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("setting '" + text + "' must have the form key=value");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

void RunConfig::set(const std::string& key, const std::string& value) {
  TrainConfig& t = train;
  auto as_int = [&] { return parse_number<int>(key, value); };
  auto as_real = [&] { return parse_number<double>(key, value); };
  auto ints = [&] { return parse_list<int>(key, value, [&](const std::string& s) { return parse_number<int>(key, s); }); };

  if (key == "data") data = value;
  else if (key == "schema.timestamp") schema.timestamp = value;
  else if (key == "schema.load") schema.load = value;
  else if (key == "schema.temperature") schema.temperature = value;
  else if (key == "schema.delimiter") {
    if (value.size() != 1) throw ConfigError("schema.delimiter must be a single character");
    schema.delimiter = value[0];
  } else if (key == "features") {
    features = parse_feature_set(value);
    features_set = true;
  }
  else if (key == "out") out = value;
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "model") t.model = parse_model(value);
  else if (key == "hidden_size") t.hidden_size = as_int();
  else if (key == "num_layers") t.num_layers = as_int();
  else if (key == "optimizer") t.optimizer = parse_optimizer(value);
  else if (key == "objective") t.objective = parse_objective(value);
  else if (key == "spline_degree") t.spline_degree = as_int();
  else if (key == "grid_points") t.grid_points = as_int();
  else if (key == "initial_grid_points") t.initial_grid_points = as_int();
  else if (key == "grid_extend_epoch") t.grid_extend_epoch = as_int();
  else if (key == "head_mode") t.head_mode = parse_head_mode(value);
  else if (key == "grid_lo") t.grid_lo = as_real();
  else if (key == "grid_hi") t.grid_hi = as_real();
  else if (key == "learning_rate") t.learning_rate = as_real();
  else if (key == "max_epochs") t.max_epochs = as_int();
  else if (key == "early_stop_patience") t.early_stop_patience = as_int();
  else if (key == "lr_plateau_factor") t.lr_plateau_factor = as_real();
  else if (key == "lr_plateau_patience") t.lr_plateau_patience = as_int();
  else if (key == "min_learning_rate") t.min_learning_rate = as_real();
  else if (key == "batch_size") t.batch_size = as_int();
  else if (key == "weight_decay") t.weight_decay = as_real();
  else if (key == "search.budget") search_budget = as_int();
  else if (key == "search.workers") search_workers = as_int();
  else if (key == "search.hidden_sizes") search.hidden_sizes = ints();
  else if (key == "search.num_layers") search.num_layers = ints();
  else if (key == "search.spline_degrees") search.spline_degrees = ints();
  else if (key == "search.grid_points") search.grid_points = ints();
  else if (key == "search.optimizers") search.optimizers = parse_list<OptimizerKind>(key, value, parse_optimizer);
  else if (key == "search.objectives") search.objectives = parse_list<Objective>(key, value, parse_objective);
  else throw ConfigError("unknown setting '" + key + "'");
}

void RunConfig::validate() const {
  train.validate(true);
  if (search_budget < 0) throw ConfigError("search.budget must be non-negative");
  if (search_workers < 1) throw ConfigError("search.workers must be positive");
  auto within = [](const std::vector<int>& v, const std::set<int>& allowed, const std::string& key) {
    for (int x : v)
      if (!allowed.count(x)) throw ConfigError(key + " value " + std::to_string(x) + " lies outside the search domain");
  };
  within(search.hidden_sizes, {64, 128, 256}, "search.hidden_sizes");
  within(search.num_layers, {1, 2, 3}, "search.num_layers");
  within(search.spline_degrees, {1, 2, 3}, "search.spline_degrees");
  within(search.grid_points, {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14}, "search.grid_points");
}

std::string RunConfig::to_text() const {
  std::ostringstream s;
  const TrainConfig& t = train;
  auto num = [](int x) { return std::to_string(x); };
  s << "data = " << data << "\n"
    << "schema.timestamp = " << schema.timestamp << "\n"
    << "schema.load = " << schema.load << "\n"
    << "schema.temperature = " << schema.temperature << "\n"
    << "schema.delimiter = " << schema.delimiter << "\n"
    << "features = " << feature_set_string(features) << "\n"
    << "out = " << out << "\n"
    << "seed = " << t.seed << "\n"
    << "model = " << to_string(t.model) << "\n"
    << "hidden_size = " << t.hidden_size << "\n"
    << "num_layers = " << t.num_layers << "\n"
    << "optimizer = " << to_string(t.optimizer) << "\n"
    << "objective = " << to_string(t.objective) << "\n"
    << "spline_degree = " << t.spline_degree << "\n"
    << "grid_points = " << t.grid_points << "\n"
    << "initial_grid_points = " << t.initial_grid_points << "\n"
    << "grid_extend_epoch = " << t.grid_extend_epoch << "\n"
    << "head_mode = " << (t.head_mode == HeadMode::last_state ? "last_state" : "per_step") << "\n"
    << "grid_lo = " << real(t.grid_lo) << "\n"
    << "grid_hi = " << real(t.grid_hi) << "\n"
    << "learning_rate = " << real(t.learning_rate) << "\n"
    << "max_epochs = " << t.max_epochs << "\n"
    << "early_stop_patience = " << t.early_stop_patience << "\n"
    << "lr_plateau_factor = " << real(t.lr_plateau_factor) << "\n"
    << "lr_plateau_patience = " << t.lr_plateau_patience << "\n"
    << "min_learning_rate = " << real(t.min_learning_rate) << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "weight_decay = " << real(t.weight_decay) << "\n"
    << "search.budget = " << search_budget << "\n"
    << "search.workers = " << search_workers << "\n"
    << "search.hidden_sizes = " << join(search.hidden_sizes, num) << "\n"
    << "search.num_layers = " << join(search.num_layers, num) << "\n"
    << "search.optimizers = " << join(search.optimizers, [](OptimizerKind k) { return to_string(k); }) << "\n"
    << "search.objectives = " << join(search.objectives, [](Objective o) { return to_string(o); }) << "\n"
    << "search.spline_degrees = " << join(search.spline_degrees, num) << "\n"
    << "search.grid_points = " << join(search.grid_points, num) << "\n";
  return s.str();
}

void apply_config_text(RunConfig& config, std::istream& in, const std::string& source) {
  std::set<std::string> seen;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(number) + ": ";
    try {
      const auto [key, value] = split_setting(line);
      if (!seen.insert(key).second) throw ConfigError("duplicate setting '" + key + "'");
      config.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  apply_config_text(base, in, path.string());
  return base;
}

}  // namespace karn
