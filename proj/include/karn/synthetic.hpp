// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic hourly load in the standard CSV schema.
//
//   smooth  pure function of hour of day and day of week, no noise
//   clinic  weekday business-hours block, seasonal base, mild noise
//   spiky   daily cycle, noise and short random spikes
//   ev      household base plus fixed-power charging sessions
//   house   household base with level shifts and slow drift

#pragma once

#include "karn/data.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace karn {

enum class Profile { smooth, clinic, spiky, ev, house };

std::string to_string(Profile p);
/// Throws ConfigError for unknown names.
Profile parse_profile(const std::string& name);

struct SyntheticOptions {
  Profile profile = Profile::smooth;
  std::size_t length = 4392;  // 183 days
  std::uint64_t seed = 0;
  std::string start = "2021-01-01T00:00";
  double noise = 0;              // relative standard deviation
  double spike_rate_per_day = 0; // Poisson rate over hours not inside a spike
  double spike_power = 0;        // kWh added per spike hour
  int spike_hours = 0;
  bool random_spike_power = false;  // scale each spike by U(0.5, 1.5)
  bool level_shifts = false;
  double level_shift_rate_per_day = 0;
  double drift_per_day = 0;      // relative change of the base level per day
};

/// Profile defaults for the given length and seed.
SyntheticOptions synthetic_defaults(Profile profile, std::size_t length = 4392, std::uint64_t seed = 0);

struct SyntheticSeries {
  LoadSeries series;
  std::vector<std::size_t> spike_starts;  // hour index of every spike, ascending
  std::vector<std::size_t> level_shifts;  // hour index of every level change
};

/// Spikes never overlap and are separated by at least one ordinary hour.
SyntheticSeries generate_synthetic(const SyntheticOptions& options);

}  // namespace karn
