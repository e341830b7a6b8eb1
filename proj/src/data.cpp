// SPDX-License-Identifier: Apache-2.0
#include "karn/data.hpp"

#include "karn/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace karn {

namespace {

using std::chrono::days;
using std::chrono::hours;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\"");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\"");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_int(std::string_view s, int& v) {
  if (s.empty()) return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(v);
}

struct Row {
  HourPoint t;
  double load;
  double temperature;
  std::size_t line;
};

}  // namespace

HourPoint parse_timestamp(const std::string& text) {
  const std::string s = trim(text);
  // YYYY-MM-DD?HH:MM[:SS]
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  const bool shape = s.size() >= 16 && s[4] == '-' && s[7] == '-' && (s[10] == 'T' || s[10] == ' ') &&
                     s[13] == ':' && (s.size() == 16 || (s.size() == 19 && s[16] == ':'));
  const std::string_view v(s);
  if (!shape || !parse_int(v.substr(0, 4), y) || !parse_int(v.substr(5, 2), mo) || !parse_int(v.substr(8, 2), d) ||
      !parse_int(v.substr(11, 2), h) || !parse_int(v.substr(14, 2), mi) ||
      (s.size() == 19 && !parse_int(v.substr(17, 2), sec)))
    throw DataError("unparsable timestamp '" + s + "'");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23) throw DataError("invalid calendar timestamp '" + s + "'");
  if (mi != 0 || sec != 0) throw DataError("timestamp '" + s + "' is not on the hour");
  return HourPoint{std::chrono::sys_days{ymd}} + hours{h};
}

std::string format_timestamp(HourPoint t) {
  const auto day = std::chrono::floor<days>(t);
  const std::chrono::year_month_day ymd{day};
  const auto h = (t - day).count();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(h));
  return buf;
}

std::size_t LoadSeries::missing_hours() const {
  return static_cast<std::size_t>(std::count(interpolated.begin(), interpolated.end(), true));
}

LoadSeries parse_csv(std::istream& in, const CsvSchema& schema, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(line, schema.delimiter);
      break;
    }
  }
  if (header.empty()) throw DataError(source + ": empty file, expected a header row");
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0] = header[0].substr(3);

  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(source + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ct = column(schema.timestamp);
  const std::size_t cl = column(schema.load);
  const std::size_t cx = column(schema.temperature);
  const std::size_t needed = std::max({ct, cl, cx}) + 1;

  std::vector<Row> rows;
  std::vector<std::size_t> bad;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_fields(line, schema.delimiter);
    Row r{};
    r.line = line_no;
    bool ok = f.size() >= needed && parse_double(f[cl], r.load) && parse_double(f[cx], r.temperature);
    if (ok) {
      try {
        r.t = parse_timestamp(f[ct]);
      } catch (const DataError&) {
        ok = false;
      }
    }
    if (ok)
      rows.push_back(r);
    else
      bad.push_back(line_no);
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << source << ": " << bad.size() << " unparsable row(s) at line(s) ";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 20); ++i) msg << (i ? ", " : "") << bad[i];
    if (bad.size() > 20) msg << ", ...";
    throw DataError(msg.str());
  }
  if (rows.empty()) throw DataError(source + ": no data rows");

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].t == rows[i - 1].t)
      throw DataError(source + ": duplicate timestamp " + format_timestamp(rows[i].t) + " (lines " +
                      std::to_string(rows[i - 1].line) + " and " + std::to_string(rows[i].line) + ")");

  const auto span = (rows.back().t - rows.front().t).count() + 1;
  const auto missing = span - static_cast<std::int64_t>(rows.size());
  if (static_cast<double>(missing) > kMaxMissingFraction * static_cast<double>(span)) {
    std::ostringstream msg;
    msg << source << ": " << missing << " of " << span << " hours are missing (more than "
        << kMaxMissingFraction * 100 << "%)";
    throw DataError(msg.str());
  }

  LoadSeries s;
  s.source = source;
  s.timestamps.reserve(static_cast<std::size_t>(span));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) {
      const auto gap = (rows[i].t - rows[i - 1].t).count();
      for (std::int64_t g = 1; g < gap; ++g) {
        const double w = static_cast<double>(g) / static_cast<double>(gap);
        s.timestamps.push_back(rows[i - 1].t + hours{g});
        s.load.push_back((1 - w) * rows[i - 1].load + w * rows[i].load);
        s.temperature.push_back((1 - w) * rows[i - 1].temperature + w * rows[i].temperature);
        s.interpolated.push_back(true);
      }
    }
    s.timestamps.push_back(rows[i].t);
    s.load.push_back(rows[i].load);
    s.temperature.push_back(rows[i].temperature);
    s.interpolated.push_back(false);
  }
  return s;
}

LoadSeries ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_csv(in, schema, path.string());
}

void write_csv(std::ostream& out, const LoadSeries& series, const CsvSchema& schema) {
  const char d = schema.delimiter;
  out << schema.timestamp << d << schema.load << d << schema.temperature << '\n';
  char buf[64];
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%c%.6f%c%.6f\n", d, series.load[i], d, series.temperature[i]);
    out << format_timestamp(series.timestamps[i]) << buf;
  }
}

std::string to_string(Feature f) {
  switch (f) {
    case Feature::load: return "load";
    case Feature::temperature: return "temperature";
    case Feature::hour_of_day: return "hour_of_day";
    case Feature::day_of_week: return "day_of_week";
    case Feature::day_of_month: return "day_of_month";
    case Feature::day_of_year: return "day_of_year";
  }
  return "unknown";
}

Feature parse_feature(const std::string& name) {
  for (Feature f : {Feature::load, Feature::temperature, Feature::hour_of_day, Feature::day_of_week,
                    Feature::day_of_month, Feature::day_of_year})
    if (to_string(f) == name) return f;
  throw ConfigError("unknown feature '" + name +
                    "' (expected load, temperature, hour_of_day, day_of_week, day_of_month, day_of_year)");
}

std::vector<Feature> parse_feature_set(const std::string& list) {
  std::vector<Feature> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string name = trim(item);
    if (name.empty()) continue;
    const Feature f = parse_feature(name);
    if (std::find(out.begin(), out.end(), f) != out.end()) throw ConfigError("feature '" + name + "' listed twice");
    out.push_back(f);
  }
  if (std::find(out.begin(), out.end(), Feature::load) == out.end())
    throw ConfigError("feature set must include load");
  return out;
}

std::string feature_set_string(const std::vector<Feature>& features) {
  std::string out;
  for (Feature f : features) out += (out.empty() ? "" : ",") + to_string(f);
  return out;
}

std::vector<Feature> default_features() {
  return {Feature::load, Feature::temperature, Feature::hour_of_day, Feature::day_of_week, Feature::day_of_year};
}

CalendarFields calendar_fields(HourPoint t) {
  const std::chrono::sys_days day = std::chrono::floor<days>(t);
  const std::chrono::year_month_day ymd{day};
  CalendarFields c;
  c.hour = static_cast<int>((t - day).count());
  c.day_of_week = static_cast<int>(std::chrono::weekday{day}.iso_encoding()) - 1;
  c.day_of_month = static_cast<int>(static_cast<unsigned>(ymd.day()));
  c.day_of_year =
      static_cast<int>((day - std::chrono::sys_days{ymd.year() / std::chrono::January / 1}).count()) + 1;
  return c;
}

Eigen::MatrixXd derive_features(const LoadSeries& series, const std::vector<Feature>& features) {
  const auto n = static_cast<Eigen::Index>(series.size());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(features.size()), n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const CalendarFields c = calendar_fields(series.timestamps[i]);
    for (std::size_t f = 0; f < features.size(); ++f) {
      double v = 0.0;
      switch (features[f]) {
        case Feature::load: v = series.load[i]; break;
        case Feature::temperature: v = series.temperature[i]; break;
        case Feature::hour_of_day: v = c.hour; break;
        case Feature::day_of_week: v = c.day_of_week; break;
        case Feature::day_of_month: v = c.day_of_month; break;
        case Feature::day_of_year: v = c.day_of_year; break;
      }
      out(static_cast<Eigen::Index>(f), t) = v;
    }
  }
  return out;
}

ScalerParams fit_scaler(const Eigen::MatrixXd& features, Eigen::Index train_end) {
  if (train_end <= 0 || train_end > features.cols()) throw DataError("scaler needs a non-empty training split");
  const auto train = features.leftCols(train_end);
  return ScalerParams{train.rowwise().minCoeff(), train.rowwise().maxCoeff()};
}

Eigen::MatrixXd apply_scaler(const ScalerParams& s, const Eigen::MatrixXd& features) {
  if (features.rows() != s.size()) throw std::invalid_argument("scaler feature count mismatch");
  Eigen::MatrixXd out(features.rows(), features.cols());
  for (Eigen::Index f = 0; f < features.rows(); ++f) {
    if (s.is_constant(f))
      out.row(f).setZero();
    else
      out.row(f) = (features.row(f).array() - s.min(f)) / (s.max(f) - s.min(f));
  }
  return out;
}

Eigen::MatrixXd inverse_scale(const ScalerParams& s, Eigen::Index feature, const Eigen::MatrixXd& scaled) {
  if (s.is_constant(feature)) return Eigen::MatrixXd::Constant(scaled.rows(), scaled.cols(), s.min(feature));
  return (scaled.array() * (s.max(feature) - s.min(feature)) + s.min(feature)).matrix();
}

SplitBounds chronological_split(std::int64_t length) {
  SplitBounds b;
  b.total = length;
  b.train_end = length * 6 / 10;
  b.val_end = b.train_end + length * 2 / 10;
  return b;
}

SequenceBatch make_windows(const Eigen::MatrixXd& scaled, int load_row, std::int64_t begin, std::int64_t end,
                           const WindowSpec& spec, const std::vector<bool>& excluded_targets) {
  if (spec.window < 1 || spec.horizon < 1 || spec.stride < 1)
    throw std::invalid_argument("window, horizon and stride must be positive");
  const int f = static_cast<int>(scaled.rows());
  const std::int64_t span = spec.window + spec.horizon;
  std::vector<std::int64_t> starts;
  for (std::int64_t s = begin; s + span <= end; s += spec.stride) {
    bool skip = false;
    if (!excluded_targets.empty())
      for (std::int64_t t = s + spec.window; t < s + span && !skip; ++t)
        skip = excluded_targets[static_cast<std::size_t>(t)];
    if (!skip) starts.push_back(s);
  }
  SequenceBatch b;
  b.features = f;
  b.window = spec.window;
  b.horizon = spec.horizon;
  const auto n = static_cast<Eigen::Index>(starts.size());
  b.inputs.resize(n, static_cast<Eigen::Index>(spec.window) * f);
  b.targets.resize(n, spec.horizon);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::int64_t s = starts[static_cast<std::size_t>(i)];
    for (int t = 0; t < spec.window; ++t) b.inputs.row(i).segment(t * f, f) = scaled.col(s + t).transpose();
    b.targets.row(i) = scaled.row(load_row).segment(s + spec.window, spec.horizon);
    b.target_index.push_back(s + spec.window);
  }
  return b;
}

DatasetSplits split_and_window(const Eigen::MatrixXd& scaled, int load_row, const SplitBounds& bounds,
                               const WindowSpec& spec, const std::vector<bool>& excluded_targets) {
  const std::int64_t minimum = spec.window + spec.horizon;
  auto one = [&](const char* name, std::int64_t begin, std::int64_t end) {
    if (end - begin < minimum)
      throw DataError(std::string(name) + " split has " + std::to_string(end - begin) + " hours; at least " +
                      std::to_string(minimum) + " are required (series needs about " +
                      std::to_string(minimum * 5) + " hours)");
    SequenceBatch b = make_windows(scaled, load_row, begin, end, spec, excluded_targets);
    if (b.empty()) throw DataError(std::string(name) + " split has no windows with observed targets");
    return b;
  };
  DatasetSplits out;
  out.train = one("training", 0, bounds.train_end);
  out.val = one("validation", bounds.train_end, bounds.val_end);
  out.test = one("test", bounds.val_end, bounds.total);
  return out;
}

Eigen::MatrixXd PreparedDataset::unscale_load(const Eigen::MatrixXd& scaled) const {
  return inverse_scale(scaler, load_row, scaled);
}

PreparedDataset prepare_dataset(const LoadSeries& series, const std::vector<Feature>& features,
                                const WindowSpec& spec) {
  const auto load_it = std::find(features.begin(), features.end(), Feature::load);
  if (load_it == features.end()) throw ConfigError("feature set must include load");
  PreparedDataset d;
  d.source = series.source;
  d.features = features;
  d.load_row = static_cast<int>(load_it - features.begin());
  d.spec = spec;
  d.timestamps = series.timestamps;
  d.interpolated = series.interpolated;
  d.raw = derive_features(series, features);
  d.bounds = chronological_split(static_cast<std::int64_t>(series.size()));
  if (d.bounds.train_end == 0) throw DataError(series.source + ": series too short to split");
  d.scaler = fit_scaler(d.raw, d.bounds.train_end);
  d.splits = split_and_window(apply_scaler(d.scaler, d.raw), d.load_row, d.bounds, spec, series.interpolated);
  return d;
}

Eigen::MatrixXd persistence_forecast(const SequenceBatch& batch, int load_row) {
  if (batch.window < batch.horizon)
    throw std::invalid_argument("persistence needs a window at least as long as the horizon");
  Eigen::MatrixXd out(batch.samples(), batch.horizon);
  const int first = batch.window - batch.horizon;
  for (int s = 0; s < batch.horizon; ++s) out.col(s) = batch.inputs.col((first + s) * batch.features + load_row);
  return out;
}

}  // namespace karn
