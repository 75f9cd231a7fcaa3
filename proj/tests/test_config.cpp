#include <gtest/gtest.h>

#include "jkoflow/config.hpp"

using namespace jko;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  const RunConfig c = parse_run_config("{}");
  EXPECT_EQ(c.dataset.name, "checkerboard");
  EXPECT_EQ(c.arch.input_dim, 2);
  EXPECT_EQ(c.arch.hidden_widths, (std::vector<int>{128, 128}));
  EXPECT_EQ(c.arch.beta, 20.0);
  EXPECT_EQ(c.train.h0, 0.75);
  EXPECT_EQ(c.train.rho, 1.2);
  EXPECT_EQ(c.train.h_max, 5.0);
  EXPECT_EQ(c.train.epsilon, 0.01);
  EXPECT_EQ(c.train.batch_size, 500u);
  EXPECT_EQ(c.train.learning_rate, 5e-3);
  EXPECT_EQ(c.train.adam.beta2, 0.999);
  EXPECT_EQ(c.train.integrator.substeps, 3);
  EXPECT_EQ(c.trajectory.eta, 0.5);
  EXPECT_EQ(c.trajectory.cv_tol, 0.1);
  EXPECT_EQ(c.eval.mmd.factor, 0.1);
  EXPECT_EQ(c.eval.mmd.n_bootstrap, 1000);
  EXPECT_EQ(c.eval.n_test, 8000u);
  EXPECT_EQ(c.hash.size(), 16u);
}

TEST(Config, UnknownKeyNamesKeyAndLine) {
  const std::string msg = error_of("{\n  \"train\": {\n    \"h0\": 0.5,\n    \"hmax\": 3\n  }\n}\n");
  EXPECT_NE(msg.find("'train.hmax'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown key"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
  EXPECT_NE(error_of("{\"colour\": 1}").find("'colour'"), std::string::npos);
}

TEST(Config, TypeAndRangeErrors) {
  EXPECT_NE(error_of("{\"train\": {\"h0\": \"big\"}}").find("wrong type"), std::string::npos);
  EXPECT_NE(error_of("{\"train\": {\"h0\": 9}}").find("h0"), std::string::npos);
  EXPECT_NE(error_of("{\"schema_version\": 2}").find("schema_version"), std::string::npos);
  EXPECT_NE(error_of("{\"dataset\": {\"name\": \"spiral\"}}").find("spiral"), std::string::npos);
  EXPECT_NE(error_of("{\"eval\": {\"metrics\": [\"fid\"]}}").find("fid"), std::string::npos);
  EXPECT_NE(error_of("{\"potential\": {\"kind\": \"mixture\"}}").find("labeled"), std::string::npos);
  EXPECT_NE(error_of("{\"seed\": 1,}").find("syntax error"), std::string::npos);
}

TEST(Config, ValuesAreRead) {
  const RunConfig c = parse_run_config(R"({
    "seed": 9,
    "dataset": {"name": "two_moons", "labeled": true, "n_samples": 300, "fixed": true},
    "arch": {"hidden_widths": [16, 8], "beta": 5},
    "train": {"L_max": 3, "adam": {"beta1": 0.8}, "use_free_block": true},
    "integrator": {"substeps": 5, "divergence": "hutchinson_fd"},
    "potential": {"kind": "mixture", "variance": 0.5},
    "trajectory": {"refine": true, "retrain_epochs": 7},
    "eval": {"bandwidth_rule": "median", "n_bootstrap": 10}
  })");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_TRUE(c.fixed_data);
  EXPECT_TRUE(c.dataset.labeled);
  EXPECT_EQ(c.arch.hidden_widths, (std::vector<int>{16, 8}));
  EXPECT_EQ(c.train.adam.beta1, 0.8);
  EXPECT_TRUE(c.train.use_free_block);
  EXPECT_EQ(c.train.integrator.divergence, DivergenceMode::hutchinson_fd);
  EXPECT_TRUE(c.potential.conditional());
  EXPECT_EQ(c.potential.variance, 0.5);
  EXPECT_EQ(c.potential.means.size(), 2u);
  EXPECT_EQ(c.trajectory.retrain_epochs, 7);
  EXPECT_EQ(c.eval.mmd.rule, BandwidthRule::median);
}

TEST(Config, HashTracksResolvedValues) {
  const RunConfig a = parse_run_config("{}");
  const RunConfig b = parse_run_config("{\"train\": {\"h0\": 0.75}}");
  const RunConfig c = parse_run_config("{\"train\": {\"h0\": 0.5}}");
  EXPECT_EQ(a.hash, b.hash);
  EXPECT_NE(a.hash, c.hash);
  EXPECT_EQ(parse_run_config(run_config_to_json(c).dump()).hash, c.hash);
}

TEST(Config, HighDimensionalDataDefaultsToHutchinson) {
  const RunConfig c = parse_run_config("{\"dataset\": {\"name\": \"gaussian\", \"dim\": 20}}");
  EXPECT_EQ(c.arch.input_dim, 20);
  EXPECT_EQ(c.train.integrator.divergence, DivergenceMode::hutchinson_fd);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), IoError);
}
