#pragma once

// Block-wise training: each block minimizes its own JKO loss on samples that
// earlier blocks have already transported. Earlier blocks are never touched.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "jkoflow/datasets.hpp"
#include "jkoflow/flow.hpp"
#include "jkoflow/objective.hpp"
#include "jkoflow/rng.hpp"

namespace jko {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  double h0 = 0.75;
  double rho = 1.2;
  double h_max = 5.0;
  double epsilon = 0.01;
  int L_max = 9;
  int epochs_per_block = 100;
  std::size_t batch_size = 500;
  double learning_rate = 5e-3;
  AdamConfig adam;
  bool use_free_block = false;
  bool standardize = true;
  std::size_t samples_per_epoch = 10000;  ///< resampling sources only
  IntegratorConfig integrator;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(h0 > 0.0)) throw ConfigError("train: h0 must be > 0");
    if (!(rho >= 1.0)) throw ConfigError("train: rho must be >= 1");
    if (!(h0 <= h_max)) throw ConfigError("train: h0 must be <= h_max");
    if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
    if (L_max < 1) throw ConfigError("train: L_max must be >= 1");
    if (epochs_per_block < 1) throw ConfigError("train: epochs_per_block must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
      throw ConfigError("train: invalid Adam constants");
    }
    if (samples_per_epoch < 1) throw ConfigError("train: samples_per_epoch must be >= 1");
    integrator.validate();
  }
};

/// h_k = min(rho^k h0, h_max).
inline double step_schedule(const TrainConfig& cfg, int k) {
  if (k < 0) throw ConfigError("step_schedule: negative block index");
  return std::min(std::pow(cfg.rho, k) * cfg.h0, cfg.h_max);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
};

/// One bias-corrected Adam step, in place.
inline void adam_update(AdamState& state, ParamVector& params, const ParamVector& grads, double lr,
                        const AdamConfig& c = {}) {
  if (grads.size() != params.size()) throw ConfigError("adam_update: gradient shape mismatch");
  if (!grads.all_finite()) throw NumericFault("adam_update: non-finite gradient");
  if (state.m.size() == 0) {
    state.m = Vector::Zero(params.values.size());
    state.v = Vector::Zero(params.values.size());
  }
  ++state.step;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads.values;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grads.values.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.values.array() -= lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
}

// ---------------------------------------------------------------------------
// Data sources

/// Either a fixed training set or a generator re-sampled every epoch.
class DataSource {
 public:
  static DataSource fixed(Dataset data) {
    if (data.size() == 0) throw ConfigError("DataSource: empty dataset");
    DataSource s;
    s.data_ = std::move(data);
    return s;
  }

  static DataSource generator(DatasetSpec spec) {
    spec.validate();
    if (spec.name == "csv") return fixed(jko::generate(spec));
    DataSource s;
    s.spec_ = std::move(spec);
    s.resamples_ = true;
    return s;
  }

  bool resamples() const { return resamples_; }
  int dim() const { return resamples_ ? spec_.data_dim() : static_cast<int>(data_.dim()); }
  bool labeled() const { return resamples_ ? spec_.labeled : data_.labeled(); }
  const Dataset& data() const { return data_; }
  const DatasetSpec& spec() const { return spec_; }

  /// Fresh draw for a resampling source; the fixed set otherwise.
  Dataset draw(std::size_t n, std::uint64_t seed) const {
    if (!resamples_) return data_;
    std::mt19937_64 rng(seed);
    return jko::generate(spec_, n, rng);
  }

  /// Up to n samples for statistics (standardizer fit, movement batch).
  Dataset reference(std::size_t n, std::uint64_t seed) const {
    if (resamples_) return draw(n, seed);
    if (static_cast<std::size_t>(data_.size()) <= n) return data_;
    Dataset d;
    d.x = data_.x.topRows(static_cast<Eigen::Index>(n));
    if (data_.labeled()) d.labels.assign(data_.labels.begin(), data_.labels.begin() + static_cast<long>(n));
    d.columns = data_.columns;
    return d;
  }

 private:
  Dataset data_;
  DatasetSpec spec_;
  bool resamples_ = false;
};

// ---------------------------------------------------------------------------
// Reports

struct EpochLog {
  int block = 0;
  int epoch = 0;
  double kl_term = 0.0;
  double w2_term = 0.0;
  double total = 0.0;
  double ratio = 0.0;
};

struct BlockTrainReport {
  int block = 0;
  bool free_block = false;
  BlockLossBreakdown final_loss;
  double termination_ratio = 0.0;
  double wall_seconds = 0.0;
  int epochs_run = 0;
  double h = 0.0;
  std::vector<EpochLog> epochs;
};

/// Training diverged. Carries the block state from before the failing step.
class TrainingFault : public NumericFault {
 public:
  TrainingFault(const std::string& what, ResidualVectorField last_finite, BlockTrainReport report)
      : NumericFault(what), last_finite_(std::move(last_finite)), report_(std::move(report)) {}
  const ResidualVectorField& last_finite() const { return last_finite_; }
  const BlockTrainReport& report() const { return report_; }

 private:
  ResidualVectorField last_finite_;
  BlockTrainReport report_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// E|x - T(x)|^2 / E|T(x)|^2 from a batch and its image.
inline double termination_ratio(const Matrix& x, const Matrix& tx) {
  if (x.rows() == 0) throw ConfigError("termination_ratio: empty batch");
  const double num = (x - tx).rowwise().squaredNorm().mean();
  const double den = tx.rowwise().squaredNorm().mean();
  if (!(den > 0.0)) throw NumericFault("termination_ratio: pushed batch collapsed to the origin");
  return num / den;
}

inline double termination_ratio(const ResidualVectorField& block, const Matrix& batch, const IntegratorConfig& cfg) {
  return termination_ratio(batch, push_block(block, batch, cfg));
}

// ---------------------------------------------------------------------------
// Training

/// Standardized samples already transported by earlier blocks. Holds plain
/// numbers only, so no gradient can reach those blocks.
struct PushedCache {
  Matrix x;
  std::vector<int> labels;
};

/// Standardizes and pushes a data draw through every block of `prefix`.
inline PushedCache push_through(const FlowNetwork& prefix, const Dataset& d) {
  PushedCache c{prefix.standardizer.apply(d.x), d.labels};
  for (std::size_t k = 0; k < prefix.blocks.size(); ++k) {
    c.x = push_block(prefix.blocks[k], c.x, prefix.integrator, static_cast<int>(k));
  }
  return c;
}

struct BlockJob {
  int k = 0;
  BlockInterval interval;
  bool free_block = false;
  std::uint64_t round = 0;  ///< distinguishes retraining passes in seed streams
  int epochs = 0;           ///< 0: cfg.epochs_per_block
};

/// Trains block k from `init` for the configured epochs. `prefix` holds the
/// trained blocks 0..k-1. For a fixed source `cache` must already hold the
/// data pushed through `prefix`; resampling sources push fresh draws each
/// epoch and leave `cache` alone.
inline std::pair<ResidualVectorField, BlockTrainReport> train_block(const DataSource& source,
                                                                    const FlowNetwork& prefix,
                                                                    const PushedCache& cache, const BlockJob& job,
                                                                    const ParamVector& init, const TrainConfig& cfg,
                                                                    const EpochCallback& on_epoch = {}) {
  cfg.validate();
  job.interval.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ResidualVectorField block{prefix.arch, init, job.interval};
  BlockTrainReport report;
  report.block = job.k;
  report.free_block = job.free_block;
  report.h = job.interval.length();
  const int epochs = job.epochs > 0 ? job.epochs : cfg.epochs_per_block;
  AdamState adam;
  const std::uint64_t block_stream = hash_key({static_cast<std::uint64_t>(job.k), job.round});

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::uint64_t epoch_seed = hash_key({cfg.seed, block_stream, static_cast<std::uint64_t>(epoch)});
    PushedCache fresh;
    if (source.resamples()) {
      fresh = push_through(prefix, source.draw(cfg.samples_per_epoch, derive_seed(epoch_seed, 1)));
    }
    const PushedCache& pool = source.resamples() ? fresh : cache;
    const Eigen::Index n = pool.x.rows();
    if (n == 0) throw ConfigError("train_block: no training samples");
    if (prefix.potential.conditional() && static_cast<Eigen::Index>(pool.labels.size()) != n) {
      throw ConfigError("train_block: mixture potential requires labeled data");
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::mt19937_64 shuffle_rng(derive_seed(epoch_seed, 2));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog log{job.k, epoch, 0, 0, 0, 0};
    double ratio_num = 0.0;
    double ratio_den = 0.0;
    const auto bs = static_cast<Eigen::Index>(cfg.batch_size);
    for (Eigen::Index b0 = 0; b0 < n; b0 += bs) {
      const Eigen::Index rows = std::min(bs, n - b0);
      Matrix x0(rows, pool.x.cols());
      std::vector<int> labels;
      for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index src = order[static_cast<std::size_t>(b0 + r)];
        x0.row(r) = pool.x.row(src);
        if (!pool.labels.empty()) labels.push_back(pool.labels[static_cast<std::size_t>(src)]);
      }
      const ProbeStream probes{derive_seed(epoch_seed, 3), static_cast<std::uint64_t>(b0)};
      const ResidualVectorField before = block;
      LossGrad lg = block_loss_and_grad(block, x0, labels, prefix.potential, prefix.integrator, probes, job.k,
                                        !job.free_block);
      if (!std::isfinite(lg.loss.total) || !lg.grad.all_finite()) {
        report.epochs_run = epoch;
        throw TrainingFault("training diverged in block " + std::to_string(job.k) + ", epoch " +
                                std::to_string(epoch) + " (non-finite loss)",
                            before, report);
      }
      adam_update(adam, block.params, lg.grad, cfg.learning_rate, cfg.adam);
      if (!block.params.all_finite()) {
        report.epochs_run = epoch;
        throw TrainingFault("training diverged in block " + std::to_string(job.k) + ", epoch " +
                                std::to_string(epoch) + " (non-finite parameters)",
                            before, report);
      }
      const double w = static_cast<double>(rows) / static_cast<double>(n);
      log.kl_term += w * lg.loss.kl_term;
      log.w2_term += w * lg.loss.w2_term;
      log.total += w * lg.loss.total;
      ratio_num += (lg.x1 - x0).rowwise().squaredNorm().sum();
      ratio_den += lg.x1.rowwise().squaredNorm().sum();
    }
    if (!(ratio_den > 0.0)) throw NumericFault("train_block: pushed batch collapsed to the origin");
    log.ratio = ratio_num / ratio_den;
    report.epochs.push_back(log);
    report.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(log);
  }
  report.final_loss = {report.epochs.back().kl_term, report.epochs.back().w2_term, report.epochs.back().total};
  report.termination_ratio = report.epochs.back().ratio;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(block), std::move(report)};
}

struct TrainResult {
  FlowNetwork flow;
  std::vector<BlockTrainReport> reports;
  bool terminated = false;
};

/// Fitted on the whole fixed set, or on one n_samples draw of a generator.
inline Standardizer fit_for(const DataSource& source, const TrainConfig& cfg) {
  if (!cfg.standardize) return Standardizer::identity(source.dim());
  const std::size_t n = source.resamples() ? source.spec().n_samples : static_cast<std::size_t>(source.data().size());
  return fit_standardizer(source.reference(n, derive_seed(cfg.seed, 0x737464ULL)).x);
}

/// Trains the free block after the current last JKO block of `flow`.
inline BlockTrainReport train_free_block(FlowNetwork& flow, const DataSource& source, const TrainConfig& cfg,
                                         std::uint64_t round, int epochs, const ParamVector* warm,
                                         const EpochCallback& on_epoch = {}) {
  if (flow.has_free_block) {
    flow.blocks.pop_back();
    flow.has_free_block = false;
  }
  const int k = static_cast<int>(flow.blocks.size());
  const double t = flow.horizon();
  const BlockInterval interval{t, t + step_schedule(cfg, k)};
  PushedCache cache;
  if (!source.resamples()) cache = push_through(flow, source.data());
  const ParamVector init = warm ? *warm : init_params(flow.arch, derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
  auto [block, report] = train_block(source, flow, cache, {k, interval, true, round, epochs}, init, cfg, on_epoch);
  flow.blocks.push_back(std::move(block));
  flow.has_free_block = true;
  return report;
}

/// Block-wise training until the termination ratio drops below epsilon or
/// L_max blocks exist, then the optional free block.
inline TrainResult train_flow(const DataSource& source, const ArchSpec& arch, const TrainConfig& cfg,
                              const Potential& potential = Potential::standard(),
                              const EpochCallback& on_epoch = {}) {
  cfg.validate();
  arch.validate();
  if (source.dim() != arch.input_dim) {
    throw ConfigError("train_flow: data dimension " + std::to_string(source.dim()) +
                      " does not match arch.input_dim " + std::to_string(arch.input_dim));
  }
  TrainResult out;
  out.flow = empty_flow(arch, fit_for(source, cfg), potential, cfg.integrator);
  out.flow.meta.seed = cfg.seed;

  PushedCache cache;
  if (!source.resamples()) cache = push_through(out.flow, source.data());
  double t = 0.0;
  for (int k = 0; k < cfg.L_max; ++k) {
    const BlockInterval interval{t, t + step_schedule(cfg, k)};
    auto [block, report] = train_block(source, out.flow, cache, {k, interval, false, 0, 0},
                                       init_params(arch, derive_seed(cfg.seed, static_cast<std::uint64_t>(k))), cfg,
                                       on_epoch);
    if (!source.resamples()) cache.x = push_block(block, cache.x, cfg.integrator, k);
    out.flow.blocks.push_back(std::move(block));
    const bool stop = report.termination_ratio < cfg.epsilon;
    out.reports.push_back(std::move(report));
    t = interval.t_end;
    if (stop) {
      out.terminated = true;
      break;
    }
  }
  out.flow.meta.terminated = out.terminated;
  if (cfg.use_free_block) {
    out.reports.push_back(train_free_block(out.flow, source, cfg, 0, 0, nullptr, on_epoch));
  }
  return out;
}

/// Retrains every block of `flow` in order, warm-started from its current
/// parameters, with the JKO blocks re-timed to `steps`. The free block, if
/// present, is retrained last on the new horizon.
inline std::vector<BlockTrainReport> retrain_flow(FlowNetwork& flow, const DataSource& source,
                                                  const TrainConfig& cfg, const std::vector<double>& steps,
                                                  std::uint64_t round, int epochs,
                                                  const EpochCallback& on_epoch = {}) {
  const std::size_t L = flow.jko_block_count();
  if (steps.size() != L) throw ConfigError("retrain_flow: one step size per JKO block required");
  std::vector<BlockTrainReport> reports;
  std::optional<ParamVector> free_params;
  if (flow.has_free_block) free_params = flow.blocks.back().params;
  std::vector<ResidualVectorField> old = std::move(flow.blocks);
  flow.blocks.clear();
  flow.has_free_block = false;
  PushedCache cache;
  if (!source.resamples()) cache = push_through(flow, source.data());
  double t = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    const BlockInterval interval{t, t + steps[k]};
    auto [block, report] = train_block(source, flow, cache, {static_cast<int>(k), interval, false, round, epochs},
                                       old[k].params, cfg, on_epoch);
    if (!source.resamples()) cache.x = push_block(block, cache.x, flow.integrator, static_cast<int>(k));
    flow.blocks.push_back(std::move(block));
    reports.push_back(std::move(report));
    t = interval.t_end;
  }
  if (free_params) {
    reports.push_back(train_free_block(flow, source, cfg, round, epochs, &*free_params, on_epoch));
  }
  return reports;
}

}  // namespace jko
