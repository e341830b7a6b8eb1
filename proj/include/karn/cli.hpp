// SPDX-License-Identifier: Apache-2.0
//
// The karnlf command line. Output files land under the output root:
// --out, else the config's `out`, else $KARNLF_OUTPUT_ROOT, else ./karnlf-out.
//
//   prepare          dataset.cache, summary.json
//   train            model.ckpt, report.json, loss_curve.csv
//   evaluate         eval_report.json, forecast.csv, forecast.svg (--svg)
//   search           trials/<hash>/..., ranking.csv, search.json, best/...
//   extend-grid      extended.ckpt, extend_report.json
//   gen-synthetic    synthetic-<profile>.csv
//   check-gradients  report on stdout

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace karn::cli {

enum ExitCode : int { kOk = 0, kOtherError = 1, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

inline constexpr const char* kOutputRootEnv = "KARNLF_OUTPUT_ROOT";

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace karn::cli
