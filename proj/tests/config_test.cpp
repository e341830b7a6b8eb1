// SPDX-License-Identifier: Apache-2.0
#include "karn/errors.hpp"
#include "karn/run_config.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace karn {
namespace {

RunConfig parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  apply_config_text(c, in, "run.cfg");
  return c;
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(RunConfig, ParsesCommentsWhitespaceAndLists) {
  const RunConfig c = parse(
      "# experiment\n"
      "data = loads/site.csv\n"
      "\n"
      "model=gru   # baseline\n"
      "  hidden_size = 128\n"
      "learning_rate = 5e-4\n"
      "features = load, temperature, hour_of_day\n"
      "schema.delimiter = ;\n"
      "search.optimizers = adam,adamw\n"
      "search.grid_points = 3, 7\n");
  EXPECT_EQ(c.data, "loads/site.csv");
  EXPECT_EQ(c.train.model, ModelKind::gru);
  EXPECT_EQ(c.train.hidden_size, 128);
  EXPECT_EQ(c.train.learning_rate, 5e-4);
  ASSERT_EQ(c.features.size(), 3u);
  EXPECT_EQ(c.features[2], Feature::hour_of_day);
  EXPECT_TRUE(c.features_set);
  EXPECT_EQ(c.schema.delimiter, ';');
  EXPECT_EQ(c.search.optimizers, (std::vector<OptimizerKind>{OptimizerKind::adam, OptimizerKind::adamw}));
  EXPECT_EQ(c.search.grid_points, (std::vector<int>{3, 7}));
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, ErrorsNameTheKeyAndLine) {
  EXPECT_NE(error_of("model = karn\nlearnin_rate = 1\n").find("run.cfg:2"), std::string::npos);
  EXPECT_NE(error_of("learnin_rate = 1\n").find("learnin_rate"), std::string::npos);
  EXPECT_NE(error_of("hidden_size = 64\nhidden_size = 128\n").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("hidden_size = lots\n").find("hidden_size"), std::string::npos);
  EXPECT_NE(error_of("max_epochs = 3.5\n").find("max_epochs"), std::string::npos);
  EXPECT_NE(error_of("just words\n").find("key=value"), std::string::npos);
  EXPECT_NE(error_of("model = transformer\n").find("transformer"), std::string::npos);
  EXPECT_NE(error_of("features = temperature,hour_of_day\n"), "");
  EXPECT_NE(error_of("schema.delimiter = ab\n"), "");
  EXPECT_NE(error_of("search.hidden_sizes = \n"), "");
}

TEST(RunConfig, ValidateEnforcesSearchDomains) {
  auto rejects = [](const std::string& key, const std::string& value) {
    RunConfig c;
    c.set(key, value);
    EXPECT_THROW(c.validate(), ConfigError) << key << "=" << value;
  };
  rejects("hidden_size", "100");
  rejects("num_layers", "4");
  rejects("spline_degree", "4");
  rejects("grid_points", "15");
  rejects("max_epochs", "301");
  rejects("learning_rate", "0");
  rejects("search.hidden_sizes", "64,512");
  rejects("search.grid_points", "1");
  rejects("search.workers", "0");
  RunConfig ok;
  ok.set("model", "lstm");
  ok.set("spline_degree", "9");  // ignored for baselines
  EXPECT_NO_THROW(ok.validate());
}

TEST(RunConfig, TextRoundTripsEverySetting) {
  RunConfig c = parse(
      "data = a.csv\nmodel = rnn\nseed = 17\nmax_epochs = 12\ngrid_lo = -1.5\nhead_mode = per_step\n"
      "search.budget = 4\nsearch.objectives = mae\nout = runs/x\n");
  const std::string text = c.to_text();
  RunConfig back;
  std::istringstream in(text);
  apply_config_text(back, in, "dump");
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.train.hash(), c.train.hash());
  EXPECT_EQ(back.train.seed, 17u);
  EXPECT_EQ(back.search_budget, 4);
  EXPECT_EQ(back.out, "runs/x");
}

TEST(RunConfig, LaterSettingsOverrideFileValues) {
  RunConfig c = parse("max_epochs = 20\n");
  const auto [k, v] = split_setting(" max_epochs = 2 ");
  c.set(k, v);
  EXPECT_EQ(c.train.max_epochs, 2);
  EXPECT_THROW(split_setting("max_epochs"), ConfigError);
}

TEST(RunConfig, MissingFileIsAConfigError) {
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), ConfigError);
}

}  // namespace
}  // namespace karn
