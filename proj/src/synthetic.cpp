// SPDX-License-Identifier: Apache-2.0
#include "karn/synthetic.hpp"

#include "karn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace karn {

std::string to_string(Profile p) {
  switch (p) {
    case Profile::smooth: return "smooth";
    case Profile::clinic: return "clinic";
    case Profile::spiky: return "spiky";
    case Profile::ev: return "ev";
    case Profile::house: return "house";
  }
  return "?";
}

Profile parse_profile(const std::string& name) {
  for (Profile p : {Profile::smooth, Profile::clinic, Profile::spiky, Profile::ev, Profile::house})
    if (to_string(p) == name) return p;
  throw ConfigError("unknown synthetic profile '" + name + "' (expected smooth, clinic, spiky, ev or house)");
}

SyntheticOptions synthetic_defaults(Profile profile, std::size_t length, std::uint64_t seed) {
  SyntheticOptions o;
  o.profile = profile;
  o.length = length;
  o.seed = seed;
  switch (profile) {
    case Profile::smooth:
      break;
    case Profile::clinic:
      o.noise = 0.03;
      break;
    case Profile::spiky:
      o.noise = 0.05;
      o.spike_rate_per_day = 1.0;
      o.spike_power = 4.0;
      o.spike_hours = 2;
      o.random_spike_power = true;
      break;
    case Profile::ev:
      o.noise = 0.05;
      o.spike_rate_per_day = 0.4;
      o.spike_power = 7.0;
      o.spike_hours = 3;
      break;
    case Profile::house:
      o.noise = 0.08;
      o.level_shifts = true;
      o.level_shift_rate_per_day = 1.0 / 30.0;
      o.drift_per_day = 0.002;
      break;
  }
  return o;
}

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

double smooth_load(int hour, int dow) {
  const double daily = 0.8 * std::sin(kTwoPi * (hour - 8) / 24.0) + 0.9 * std::exp(-0.5 * std::pow((hour - 19) / 2.0, 2));
  const double weekly = dow < 5 ? 1.0 : (dow == 5 ? 0.75 : 0.6);
  return 2.0 + weekly * (2.0 + daily);
}

double clinic_load(int hour, int dow, int doy) {
  const bool open = dow < 5 && hour >= 8 && hour < 18;
  const double season = 1.0 + 0.25 * std::cos(kTwoPi * (doy - 200) / 365.0);
  return season * (open ? 6.0 + 0.5 * std::sin(kTwoPi * (hour - 8) / 20.0) : (dow < 5 ? 2.0 : 1.6));
}

double household_load(int hour, int dow) {
  const double evening = 1.2 * std::exp(-0.5 * std::pow((hour - 19) / 2.0, 2));
  const double morning = 0.5 * std::exp(-0.5 * std::pow((hour - 7) / 1.5, 2));
  return (dow < 5 ? 0.5 : 0.65) + evening + morning;
}

double temperature(int hour, int doy) {
  return 10.0 + 9.0 * std::sin(kTwoPi * (doy - 110) / 365.0) + 4.0 * std::sin(kTwoPi * (hour - 9) / 24.0);
}

}  // namespace

SyntheticSeries generate_synthetic(const SyntheticOptions& o) {
  if (o.length == 0) throw ConfigError("synthetic length must be positive");
  if (o.noise < 0 || o.spike_rate_per_day < 0 || o.level_shift_rate_per_day < 0)
    throw ConfigError("synthetic rates and noise must be non-negative");
  if (o.spike_rate_per_day > 0 && o.spike_hours < 1) throw ConfigError("spike_hours must be at least 1");

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = o.length;

  SyntheticSeries out;
  LoadSeries& s = out.series;
  s.source = "synthetic-" + to_string(o.profile);
  const HourPoint start = parse_timestamp(o.start);

  std::vector<double> level(n, 1.0);
  if (o.level_shifts && o.level_shift_rate_per_day > 0) {
    std::exponential_distribution<double> gap(o.level_shift_rate_per_day / 24.0);
    double t = gap(rng), factor = 1.0;
    std::size_t from = 0;
    while (static_cast<std::size_t>(t) < n) {
      const auto at = static_cast<std::size_t>(t);
      std::fill(level.begin() + static_cast<std::ptrdiff_t>(from), level.begin() + static_cast<std::ptrdiff_t>(at), factor);
      factor = std::clamp(factor * (0.6 + 0.9 * unit(rng)), 0.4, 2.5);
      out.level_shifts.push_back(at);
      from = at;
      t += gap(rng);
    }
    std::fill(level.begin() + static_cast<std::ptrdiff_t>(from), level.end(), factor);
  }

  std::vector<double> extra(n, 0.0);
  if (o.spike_rate_per_day > 0) {
    std::exponential_distribution<double> gap(o.spike_rate_per_day / 24.0);
    double t = 0;
    for (;;) {
      const double begin = std::ceil(t + gap(rng));
      if (begin + o.spike_hours > static_cast<double>(n)) break;
      const auto at = static_cast<std::size_t>(begin);
      const double power = o.spike_power * (o.random_spike_power ? 0.5 + unit(rng) : 1.0);
      for (int k = 0; k < o.spike_hours; ++k) extra[at + static_cast<std::size_t>(k)] = power;
      out.spike_starts.push_back(at);
      t = begin + o.spike_hours + 1;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const HourPoint ts = start + std::chrono::hours{static_cast<long>(i)};
    const CalendarFields c = calendar_fields(ts);
    double base = 0;
    switch (o.profile) {
      case Profile::smooth:
      case Profile::spiky:
        base = smooth_load(c.hour, c.day_of_week);
        break;
      case Profile::clinic:
        base = clinic_load(c.hour, c.day_of_week, c.day_of_year);
        break;
      case Profile::ev:
      case Profile::house:
        base = household_load(c.hour, c.day_of_week);
        break;
    }
    base *= level[i] * (1.0 + o.drift_per_day * static_cast<double>(i) / 24.0);
    if (o.noise > 0) base *= std::clamp(1.0 + o.noise * gauss(rng), 0.5, 1.5);
    s.timestamps.push_back(ts);
    s.load.push_back(base + extra[i]);
    s.temperature.push_back(temperature(c.hour, c.day_of_year));
    s.interpolated.push_back(false);
  }
  return out;
}

}  // namespace karn
