#pragma once

// Step-size control for a discretized gradient-descent trajectory: equalize
// the per-step movements (reparameterization) and split every step in two
// (refinement). Works on trained flows, where a step's movement is the RMS
// displacement of its block, and on points in R^d through a proximal lab.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "jkoflow/flow.hpp"
#include "jkoflow/trainer.hpp"

namespace jko {

struct TrajectoryStats {
  int iteration = 0;
  std::vector<double> S;  ///< per-block movement
  std::vector<double> h;  ///< per-block step size
};

/// Population coefficient of variation std / mean.
inline double coefficient_of_variation(const std::vector<double>& s) {
  if (s.empty()) throw ConfigError("coefficient_of_variation: empty list");
  const double n = static_cast<double>(s.size());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  if (!(mean > 0.0)) throw NumericFault("coefficient_of_variation: zero mean");
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  return std::sqrt(var / n) / mean;
}

/// RMS displacement (E|x - T(x)|^2)^{1/2} of one block on an already-pushed
/// batch.
inline double block_movement(const ResidualVectorField& block, const Matrix& batch, const IntegratorConfig& cfg) {
  if (batch.rows() == 0) throw ConfigError("block_movement: empty batch");
  return std::sqrt((push_block(block, batch, cfg) - batch).rowwise().squaredNorm().mean());
}

/// Movements of all JKO blocks on a standardized batch, pushing as it goes.
inline std::vector<double> block_movements(const FlowNetwork& flow, const Matrix& standardized_batch) {
  std::vector<double> S;
  Matrix x = standardized_batch;
  for (std::size_t k = 0; k < flow.jko_block_count(); ++k) {
    const Matrix y = push_block(flow.blocks[k], x, flow.integrator, static_cast<int>(k));
    S.push_back(std::sqrt((y - x).rowwise().squaredNorm().mean()));
    x = y;
  }
  return S;
}

/// h'_k = min(h_k + eta (mean(S) h_k / S_k - h_k), h_max).
inline std::vector<double> reparameterize_steps(const std::vector<double>& S, const std::vector<double>& h,
                                                double eta, double h_max) {
  if (S.size() != h.size() || S.empty()) throw ConfigError("reparameterize_steps: S and h must be equal-length");
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("reparameterize_steps: eta must lie in (0, 1)");
  for (std::size_t k = 0; k < S.size(); ++k) {
    if (!(S[k] > 0.0)) {
      throw NumericFault("reparameterize_steps: block " + std::to_string(k) + " has zero movement");
    }
  }
  // Mean as an offset from S[0] so that equal movements give mean == S[k]
  // bit for bit and the update leaves h unchanged.
  double dev = 0.0;
  for (double s : S) dev += s - S[0];
  const double mean = S[0] + dev / static_cast<double>(S.size());
  std::vector<double> out(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    out[k] = std::min(h[k] + eta * (h[k] * (mean / S[k]) - h[k]), h_max);
  }
  return out;
}

/// Halves every step and duplicates it.
inline std::vector<double> refine_steps(const std::vector<double>& h) {
  if (h.empty()) throw ConfigError("refine_steps: empty step list");
  std::vector<double> out;
  out.reserve(2 * h.size());
  for (double v : h) {
    out.push_back(v / 2.0);
    out.push_back(v / 2.0);
  }
  return out;
}

struct TrajectoryConfig {
  double eta = 0.5;
  int reparam_iters = 4;
  double cv_tol = 0.1;
  bool refine = false;
  int post_refine_iters = 1;
  int retrain_epochs = 0;  ///< 0: epochs_per_block
  std::size_t movement_batch = 10000;

  void validate() const {
    if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("trajectory: eta must lie in (0, 1)");
    if (reparam_iters < 0 || post_refine_iters < 0) throw ConfigError("trajectory: iteration counts must be >= 0");
    if (!(cv_tol >= 0.0)) throw ConfigError("trajectory: cv_tol must be >= 0");
    if (retrain_epochs < 0) throw ConfigError("trajectory: retrain_epochs must be >= 0");
    if (movement_batch < 1) throw ConfigError("trajectory: movement_batch must be >= 1");
  }
};

/// Fixed held-out batch, standardized, on which movements are measured.
inline Matrix movement_batch(const FlowNetwork& flow, const DataSource& source, const TrainConfig& cfg,
                             const TrajectoryConfig& tc) {
  return flow.standardizer.apply(source.reference(tc.movement_batch, derive_seed(cfg.seed, 0x6d6f7665ULL)).x);
}

struct ReparamResult {
  std::vector<TrajectoryStats> history;
  std::vector<BlockTrainReport> reports;
};

using IterationCallback = std::function<void(const TrajectoryStats&)>;

/// Measure S, update h, retrain everything warm-started; at most `n_iters`
/// rounds, stopping early once CV(S) < cv_tol. With `force_first`, the first
/// round retrains regardless of CV. The history ends with the movements of
/// the returned flow.
inline ReparamResult reparameterize_flow(FlowNetwork& flow, const DataSource& source, const TrainConfig& cfg,
                                         const TrajectoryConfig& tc, int n_iters, std::uint64_t round_base = 1,
                                         bool force_first = false, const IterationCallback& on_iter = {},
                                         const EpochCallback& on_epoch = {}) {
  tc.validate();
  ReparamResult out;
  const Matrix batch = movement_batch(flow, source, cfg, tc);
  for (int j = 0;; ++j) {
    TrajectoryStats st{j, block_movements(flow, batch), flow.step_sizes()};
    out.history.push_back(st);
    if (on_iter) on_iter(st);
    if (j >= n_iters) break;
    if (coefficient_of_variation(st.S) < tc.cv_tol && !(force_first && j == 0)) break;
    const auto h = reparameterize_steps(st.S, st.h, tc.eta, cfg.h_max);
    auto reports = retrain_flow(flow, source, cfg, h, round_base + static_cast<std::uint64_t>(j), tc.retrain_epochs,
                                on_epoch);
    out.reports.insert(out.reports.end(), reports.begin(), reports.end());
  }
  return out;
}

/// Each JKO block becomes two children on the halves of its interval, both
/// carrying the parent's parameters. The free block is kept as is.
inline FlowNetwork split_blocks(const FlowNetwork& flow) {
  FlowNetwork out = flow;
  out.blocks.clear();
  for (std::size_t k = 0; k < flow.jko_block_count(); ++k) {
    const ResidualVectorField& b = flow.blocks[k];
    const double mid = b.interval.t_start + b.interval.length() / 2.0;
    out.blocks.push_back({b.arch, b.params, {b.interval.t_start, mid}});
    out.blocks.push_back({b.arch, b.params, {mid, b.interval.t_end}});
  }
  if (flow.has_free_block) out.blocks.push_back(flow.blocks.back());
  return out;
}

/// Split, then reparameterize at the fine level (first round always retrains).
inline ReparamResult refine_flow(FlowNetwork& flow, const DataSource& source, const TrainConfig& cfg,
                                 const TrajectoryConfig& tc, std::uint64_t round_base = 1000,
                                 const IterationCallback& on_iter = {}, const EpochCallback& on_epoch = {}) {
  flow = split_blocks(flow);
  return reparameterize_flow(flow, source, cfg, tc, std::max(tc.post_refine_iters, 1), round_base, true, on_iter,
                             on_epoch);
}

// ---------------------------------------------------------------------------
// Proximal trajectory lab in R^d

struct ScalarPotential {
  std::string id;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
};

inline ScalarPotential quadratic_potential() {
  return {"quadratic", [](const Vector& x) { return 0.5 * x.squaredNorm(); }, [](const Vector& x) { return x; }};
}

/// Mueller-Brown: sum_i A_i exp(a_i dx^2 + b_i dx dy + c_i dy^2), with
/// dx = x - x0_i, dy = y - y0_i.
struct MuellerBrown {
  static constexpr double A[4] = {-200.0, -100.0, -170.0, 15.0};
  static constexpr double a[4] = {-1.0, -1.0, -6.5, 0.7};
  static constexpr double b[4] = {0.0, 0.0, 11.0, 0.6};
  static constexpr double c[4] = {-10.0, -10.0, -6.5, 0.7};
  static constexpr double x0[4] = {1.0, 0.0, -0.5, -1.0};
  static constexpr double y0[4] = {0.0, 0.5, 1.5, 1.0};

  static double value(const Vector& p) {
    double v = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double dx = p[0] - x0[i];
      const double dy = p[1] - y0[i];
      v += A[i] * std::exp(a[i] * dx * dx + b[i] * dx * dy + c[i] * dy * dy);
    }
    return v;
  }

  static Vector grad(const Vector& p) {
    Vector g = Vector::Zero(2);
    for (int i = 0; i < 4; ++i) {
      const double dx = p[0] - x0[i];
      const double dy = p[1] - y0[i];
      const double e = A[i] * std::exp(a[i] * dx * dx + b[i] * dx * dy + c[i] * dy * dy);
      g[0] += e * (2.0 * a[i] * dx + b[i] * dy);
      g[1] += e * (b[i] * dx + 2.0 * c[i] * dy);
    }
    return g;
  }
};

inline ScalarPotential mueller_brown_potential() {
  return {"mueller_brown", [](const Vector& x) { return MuellerBrown::value(x); },
          [](const Vector& x) { return MuellerBrown::grad(x); }};
}

inline ScalarPotential potential_by_id(const std::string& id) {
  if (id == "quadratic") return quadratic_potential();
  if (id == "mueller_brown" || id == "muller" || id == "mueller") return mueller_brown_potential();
  throw ConfigError("unknown lab potential '" + id + "' (expected quadratic or mueller_brown)");
}

struct InnerSolver {
  double lr = 1e-3;
  long max_iters = 200000;
  double tol = 1e-6;
};

struct ProxResult {
  Vector x;
  bool converged = false;
  long iters = 0;
  double grad_norm = 0.0;
};

/// argmin F(x) + |x - x_k|^2 / (2h) by gradient descent from `start`
/// (default x_k). h = infinity minimizes F alone. The step is halved whenever
/// the objective would increase.
inline ProxResult prox_step(const ScalarPotential& F, const Vector& xk, double h, const InnerSolver& inner = {},
                            const std::optional<Vector>& start = std::nullopt) {
  if (!(h > 0.0)) throw ConfigError("prox_step: h must be > 0");
  const double inv_h = std::isinf(h) ? 0.0 : 1.0 / h;
  auto objective = [&](const Vector& x) { return F.value(x) + 0.5 * inv_h * (x - xk).squaredNorm(); };
  auto gradient = [&](const Vector& x) -> Vector { return F.grad(x) + inv_h * (x - xk); };
  ProxResult r;
  r.x = start.value_or(xk);
  double lr = std::min(inner.lr, std::isinf(h) ? inner.lr : h);
  double f = objective(r.x);
  Vector g = gradient(r.x);
  ProxResult best = r;
  best.grad_norm = g.norm();
  for (r.iters = 0; r.iters < inner.max_iters; ++r.iters) {
    r.grad_norm = g.norm();
    if (r.grad_norm < best.grad_norm) best = r;
    if (r.grad_norm < inner.tol) {
      r.converged = true;
      return r;
    }
    Vector next = r.x - lr * g;
    double fn = objective(next);
    // Differences below rounding noise of F count as no increase.
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * (std::abs(f) + 1.0);
    while (!(fn <= f + slack) && lr > 1e-300) {
      lr *= 0.5;
      next = r.x - lr * g;
      fn = objective(next);
    }
    r.x = std::move(next);
    f = fn;
    g = gradient(r.x);
  }
  r.grad_norm = g.norm();
  if (r.grad_norm < best.grad_norm) best = r;
  best.iters = inner.max_iters;
  best.converged = false;
  return best;
}

struct LabConfig {
  std::string potential = "mueller_brown";
  Vector x0;
  int L = 8;
  double h0 = 0.002;
  double rho = 1.2;
  double h_max = 0.05;
  double eta = 0.3;
  int reparam_iters = 12;
  bool refine = true;
  int post_refine_iters = 10;
  InnerSolver inner;

  void validate() const {
    if (L < 1) throw ConfigError("lab: L must be >= 1");
    if (!(h0 > 0.0) || !(rho >= 1.0) || !(h0 <= h_max)) throw ConfigError("lab: need 0 < h0 <= h_max, rho >= 1");
    if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("lab: eta must lie in (0, 1)");
    if (reparam_iters < 0 || post_refine_iters < 0) throw ConfigError("lab: iteration counts must be >= 0");
  }
};

struct LabIteration {
  int iteration = 0;
  bool refined = false;
  std::vector<Vector> points;  ///< x_0..x_L
  std::vector<double> S;
  std::vector<double> h;
};

struct ProxTrajectory {
  std::string potential;
  std::vector<Vector> points;  ///< x_0..x_L
  std::vector<double> h;
  Vector free_endpoint;        ///< x_{L+1}
  std::vector<LabIteration> history;
  bool all_converged = true;
};

inline std::vector<double> arclengths(const std::vector<Vector>& pts) {
  std::vector<double> S;
  for (std::size_t k = 1; k < pts.size(); ++k) S.push_back((pts[k] - pts[k - 1]).norm());
  return S;
}

/// Solves the chain of proximal steps for the schedule h, warm-starting each
/// point from `warm` when given.
inline std::vector<Vector> solve_chain(const ScalarPotential& F, const Vector& x0, const std::vector<double>& h,
                                       const InnerSolver& inner, const std::vector<Vector>* warm, bool& converged) {
  std::vector<Vector> pts{x0};
  for (std::size_t k = 0; k < h.size(); ++k) {
    std::optional<Vector> start;
    if (warm) start = (*warm)[k + 1];
    ProxResult r = prox_step(F, pts.back(), h[k], inner, start);
    converged = converged && r.converged;
    pts.push_back(r.x);
  }
  return pts;
}

/// Iter-0 on the geometric schedule, `reparam_iters` reparameterization
/// rounds, an optional refinement followed by `post_refine_iters` rounds,
/// then the free endpoint minimizing F from x_L.
inline ProxTrajectory prox_trajectory_lab(const LabConfig& cfg) {
  cfg.validate();
  const ScalarPotential F = potential_by_id(cfg.potential);
  const Vector x0 = cfg.x0.size() ? cfg.x0 : (cfg.potential == "quadratic" ? Vector(Vector::Constant(2, 2.0)) : Vector((Vector(2) << 0.5, 1.5).finished()));
  ProxTrajectory out;
  out.potential = F.id;
  std::vector<double> h;
  for (int k = 0; k < cfg.L; ++k) h.push_back(std::min(std::pow(cfg.rho, k) * cfg.h0, cfg.h_max));
  bool converged = true;
  std::vector<Vector> pts = solve_chain(F, x0, h, cfg.inner, nullptr, converged);

  int iteration = 0;
  bool refined = false;
  auto record = [&] { out.history.push_back({iteration, refined, pts, arclengths(pts), h}); };
  auto run_rounds = [&](int n) {
    for (int j = 0; j < n; ++j) {
      h = reparameterize_steps(arclengths(pts), h, cfg.eta, cfg.h_max);
      pts = solve_chain(F, x0, h, cfg.inner, &pts, converged);
      ++iteration;
      record();
    }
  };
  record();
  run_rounds(cfg.reparam_iters);
  if (cfg.refine) {
    h = refine_steps(h);
    std::vector<Vector> warm{pts[0]};
    for (std::size_t k = 1; k < pts.size(); ++k) {
      warm.push_back((pts[k] + pts[k - 1]) / 2.0);
      warm.push_back(pts[k]);
    }
    refined = true;
    iteration = 0;
    pts = solve_chain(F, x0, h, cfg.inner, &warm, converged);
    record();
    run_rounds(cfg.post_refine_iters);
  }
  ProxResult end = prox_step(F, pts.back(), std::numeric_limits<double>::infinity(), cfg.inner);
  out.points = std::move(pts);
  out.h = std::move(h);
  out.free_endpoint = end.x;
  out.all_converged = converged && end.converged;
  return out;
}

}  // namespace jko
