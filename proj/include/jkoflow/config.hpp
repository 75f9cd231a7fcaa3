#pragma once

// Run configuration: a JSON document with a fixed schema. Unknown keys and
// type mismatches are rejected with the offending key path and line.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jkoflow/checkpoint.hpp"
#include "jkoflow/mmd.hpp"
#include "jkoflow/trainer.hpp"
#include "jkoflow/trajectory.hpp"

namespace jko {

inline constexpr int kConfigSchemaVersion = 1;

struct EvalSettings {
  std::vector<std::string> metrics{"nll", "mmd", "inversion"};
  std::size_t n_test = 8000;
  std::size_t n_inversion = 1000;
  MmdConfig mmd;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  DatasetSpec dataset;
  bool fixed_data = false;  ///< draw n_samples once instead of re-sampling each epoch
  ArchSpec arch;
  TrainConfig train;
  Potential potential;
  TrajectoryConfig trajectory;
  EvalSettings eval;
  std::string hash;  ///< of the resolved configuration
};

namespace detail {

using nlohmann::json;

inline int line_of(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

/// Line of the first occurrence of "key" in the source text, or 0.
inline int line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  return pos == std::string::npos ? 0 : line_of(text, pos);
}

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "must be an object");
  }

  /// Rejects keys outside `allowed`.
  void only(std::initializer_list<const char*> allowed) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) fail(qualified(it.key()), "unknown key");
    }
  }

  template <class T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(qualified(key), "has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  ObjectReader child(const char* key) const { return ObjectReader(j_.at(key), qualified(key), text_); }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const auto dot = key.rfind('.');
    const int line = line_of_key(text_, dot == std::string::npos ? key : key.substr(dot + 1));
    throw ConfigError("config: key '" + key + "' " + msg + (line ? " (line " + std::to_string(line) + ")" : ""));
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  const std::string& text_;
};

}  // namespace detail

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  const DatasetSpec& d = c.dataset;
  j["dataset"] = {{"name", d.name},         {"n_samples", d.n_samples},          {"labeled", d.labeled},
                  {"path", d.path},         {"delimiter", std::string(1, d.delimiter)}, {"has_header", d.has_header},
                  {"dim", d.dim},           {"mean", d.mean},                    {"std", d.std},
                  {"fixed", c.fixed_data}};
  j["dataset"]["noise"] = d.noise ? nlohmann::json(*d.noise) : nlohmann::json(nullptr);
  j["arch"] = {{"hidden_widths", c.arch.hidden_widths}, {"beta", c.arch.beta}};
  const TrainConfig& t = c.train;
  j["train"] = {{"h0", t.h0},
                {"rho", t.rho},
                {"h_max", t.h_max},
                {"epsilon", t.epsilon},
                {"L_max", t.L_max},
                {"epochs_per_block", t.epochs_per_block},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
                {"use_free_block", t.use_free_block},
                {"standardize", t.standardize},
                {"samples_per_epoch", t.samples_per_epoch}};
  j["integrator"] = integrator_to_json(t.integrator);
  j["potential"] = potential_to_json(c.potential);
  const TrajectoryConfig& r = c.trajectory;
  j["trajectory"] = {{"eta", r.eta},
                     {"reparam_iters", r.reparam_iters},
                     {"cv_tol", r.cv_tol},
                     {"refine", r.refine},
                     {"post_refine_iters", r.post_refine_iters},
                     {"retrain_epochs", r.retrain_epochs},
                     {"movement_batch", r.movement_batch}};
  const EvalSettings& e = c.eval;
  j["eval"] = {{"metrics", e.metrics},
               {"n_test", e.n_test},
               {"n_inversion", e.n_inversion},
               {"bandwidth_rule", to_string(e.mmd.rule)},
               {"factor", e.mmd.factor},
               {"constant_h", e.mmd.constant_h},
               {"n_bootstrap", e.mmd.n_bootstrap},
               {"alpha", e.mmd.alpha},
               {"n_generated", e.mmd.n_generated},
               {"median_cap", e.mmd.median_cap}};
  return j;
}

/// Parses and validates a configuration document. Omitted keys keep their
/// defaults.
inline RunConfig parse_run_config(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: syntax error at line " + std::to_string(detail::line_of(text, e.byte)) + ": " +
                      e.what());
  }
  RunConfig c;
  detail::ObjectReader root(j, "", text);
  root.only({"schema_version", "seed", "output_dir", "dataset", "arch", "train", "integrator", "potential",
             "trajectory", "eval"});
  int version = kConfigSchemaVersion;
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    root.fail("schema_version", "is " + std::to_string(version) + ", expected " + std::to_string(kConfigSchemaVersion));
  }
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  c.train.seed = c.seed;
  c.dataset.seed = c.seed;

  if (root.has("dataset")) {
    auto d = root.child("dataset");
    d.only({"name", "n_samples", "seed", "noise", "labeled", "path", "delimiter", "has_header", "dim", "mean", "std",
            "fixed"});
    d.get("name", c.dataset.name);
    d.get("n_samples", c.dataset.n_samples);
    d.get("seed", c.dataset.seed);
    if (d.has("noise") && !d.at("noise").is_null()) {
      double noise = 0.0;
      d.get("noise", noise);
      c.dataset.noise = noise;
    }
    d.get("labeled", c.dataset.labeled);
    d.get("path", c.dataset.path);
    std::string delim(1, c.dataset.delimiter);
    d.get("delimiter", delim);
    if (delim.size() != 1) d.fail("dataset.delimiter", "must be a single character");
    c.dataset.delimiter = delim[0];
    d.get("has_header", c.dataset.has_header);
    d.get("dim", c.dataset.dim);
    d.get("mean", c.dataset.mean);
    d.get("std", c.dataset.std);
    d.get("fixed", c.fixed_data);
  }
  if (root.has("arch")) {
    auto a = root.child("arch");
    a.only({"hidden_widths", "beta"});
    a.get("hidden_widths", c.arch.hidden_widths);
    a.get("beta", c.arch.beta);
  }
  if (root.has("train")) {
    auto t = root.child("train");
    t.only({"h0", "rho", "h_max", "epsilon", "L_max", "epochs_per_block", "batch_size", "learning_rate", "adam",
            "use_free_block", "standardize", "samples_per_epoch"});
    t.get("h0", c.train.h0);
    t.get("rho", c.train.rho);
    t.get("h_max", c.train.h_max);
    t.get("epsilon", c.train.epsilon);
    t.get("L_max", c.train.L_max);
    t.get("epochs_per_block", c.train.epochs_per_block);
    t.get("batch_size", c.train.batch_size);
    t.get("learning_rate", c.train.learning_rate);
    if (t.has("adam")) {
      auto ad = t.child("adam");
      ad.only({"beta1", "beta2", "eps"});
      ad.get("beta1", c.train.adam.beta1);
      ad.get("beta2", c.train.adam.beta2);
      ad.get("eps", c.train.adam.eps);
    }
    t.get("use_free_block", c.train.use_free_block);
    t.get("standardize", c.train.standardize);
    t.get("samples_per_epoch", c.train.samples_per_epoch);
  }
  try {
    c.dataset.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.arch.input_dim = c.dataset.data_dim();
  c.train.integrator = IntegratorConfig::defaults_for(c.arch.input_dim);
  if (root.has("integrator")) {
    auto ic = root.child("integrator");
    ic.only({"substeps", "divergence", "n_probes", "sigma0"});
    ic.get("substeps", c.train.integrator.substeps);
    std::string mode = to_string(c.train.integrator.divergence);
    ic.get("divergence", mode);
    c.train.integrator.divergence = divergence_mode_from_string(mode);
    ic.get("n_probes", c.train.integrator.n_probes);
    ic.get("sigma0", c.train.integrator.sigma0);
  }
  if (root.has("potential")) {
    auto p = root.child("potential");
    p.only({"kind", "means", "variance"});
    std::string kind = "standard";
    p.get("kind", kind);
    if (kind == "mixture") {
      std::vector<std::vector<double>> means{{2.0, 0.0}, {-2.0, 0.0}};
      double variance = 1.0;
      p.get("means", means);
      p.get("variance", variance);
      std::vector<Vector> mv;
      for (const auto& m : means) mv.push_back(Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size())));
      c.potential = Potential::mixture(std::move(mv), variance);
    } else if (kind != "standard") {
      p.fail("potential.kind", "must be standard or mixture");
    }
  }
  if (root.has("trajectory")) {
    auto r = root.child("trajectory");
    r.only({"eta", "reparam_iters", "cv_tol", "refine", "post_refine_iters", "retrain_epochs", "movement_batch"});
    r.get("eta", c.trajectory.eta);
    r.get("reparam_iters", c.trajectory.reparam_iters);
    r.get("cv_tol", c.trajectory.cv_tol);
    r.get("refine", c.trajectory.refine);
    r.get("post_refine_iters", c.trajectory.post_refine_iters);
    r.get("retrain_epochs", c.trajectory.retrain_epochs);
    r.get("movement_batch", c.trajectory.movement_batch);
  }
  c.eval.mmd.seed = c.seed;
  if (root.has("eval")) {
    auto e = root.child("eval");
    e.only({"metrics", "n_test", "n_inversion", "bandwidth_rule", "factor", "constant_h", "n_bootstrap", "alpha",
            "n_generated", "median_cap"});
    e.get("metrics", c.eval.metrics);
    for (const auto& m : c.eval.metrics) {
      if (m != "nll" && m != "mmd" && m != "inversion") e.fail("eval.metrics", "contains unknown metric '" + m + "'");
    }
    e.get("n_test", c.eval.n_test);
    e.get("n_inversion", c.eval.n_inversion);
    std::string rule = to_string(c.eval.mmd.rule);
    e.get("bandwidth_rule", rule);
    c.eval.mmd.rule = bandwidth_rule_from_string(rule);
    e.get("factor", c.eval.mmd.factor);
    e.get("constant_h", c.eval.mmd.constant_h);
    e.get("n_bootstrap", c.eval.mmd.n_bootstrap);
    e.get("alpha", c.eval.mmd.alpha);
    e.get("n_generated", c.eval.mmd.n_generated);
    e.get("median_cap", c.eval.mmd.median_cap);
  }
  try {
    c.arch.validate();
    c.train.validate();
    c.potential.validate();
    c.trajectory.validate();
    c.eval.mmd.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.potential.conditional() && !c.dataset.labeled) {
    throw ConfigError("config: a mixture potential requires dataset.labeled = true");
  }
  const std::string canonical = run_config_to_json(c).dump();
  c.hash = hex64(fnv1a(canonical, canonical.size()));
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace jko
