#pragma once

// End-to-end run from a resolved configuration: block-wise training, the
// reparameterization rounds, and the optional refinement stage.

#include <functional>
#include <random>

#include "jkoflow/config.hpp"
#include "jkoflow/trajectory.hpp"

namespace jko {

inline DataSource make_source(const RunConfig& cfg) {
  if (cfg.fixed_data || cfg.dataset.name == "csv") return DataSource::fixed(generate(cfg.dataset));
  return DataSource::generator(cfg.dataset);
}

/// Held-out draw of eval.n_test samples (the file itself for csv data).
inline Dataset test_data(const RunConfig& cfg) {
  if (cfg.dataset.name == "csv") return generate(cfg.dataset);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x74657374ULL));
  return generate(cfg.dataset, cfg.eval.n_test, rng);
}

struct PipelineHooks {
  EpochCallback on_epoch;
  std::function<void(const TrainResult&)> on_trained;
  /// stage 0: reparameterization, 1: after refinement
  std::function<void(int stage, const TrajectoryStats&)> on_iter;
};

struct PipelineResult {
  FlowNetwork flow;
  std::vector<BlockTrainReport> initial_reports;
  bool terminated = false;
  std::vector<TrajectoryStats> reparam_history;
  std::vector<TrajectoryStats> refine_history;
};

inline PipelineResult run_pipeline(const RunConfig& cfg, const DataSource& source, const PipelineHooks& hooks = {}) {
  PipelineResult out;
  TrainResult trained = train_flow(source, cfg.arch, cfg.train, cfg.potential, hooks.on_epoch);
  if (hooks.on_trained) hooks.on_trained(trained);
  out.flow = std::move(trained.flow);
  out.flow.meta.config_hash = cfg.hash;
  out.initial_reports = std::move(trained.reports);
  out.terminated = trained.terminated;
  auto stage_cb = [&](int stage) -> IterationCallback {
    if (!hooks.on_iter) return {};
    return [&hooks, stage](const TrajectoryStats& st) { hooks.on_iter(stage, st); };
  };
  if (cfg.trajectory.reparam_iters > 0) {
    out.reparam_history = reparameterize_flow(out.flow, source, cfg.train, cfg.trajectory, cfg.trajectory.reparam_iters,
                                              1, false, stage_cb(0), hooks.on_epoch)
                              .history;
  }
  if (cfg.trajectory.refine) {
    out.refine_history = refine_flow(out.flow, source, cfg.train, cfg.trajectory, 1000, stage_cb(1), hooks.on_epoch).history;
  }
  return out;
}

}  // namespace jko
