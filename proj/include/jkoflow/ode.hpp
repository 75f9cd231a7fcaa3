#pragma once

// Fixed-step RK4 integration of one residual block on the augmented state
// (x, ell) with dx/dt = f(x, t) and d(ell)/dt = div f(x, t), plus the exact
// and finite-difference Hutchinson divergence estimators and time-reversed
// inversion.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jkoflow/autodiff.hpp"
#include "jkoflow/errors.hpp"
#include "jkoflow/net.hpp"
#include "jkoflow/rng.hpp"

namespace jko {

enum class DivergenceMode { exact, hutchinson_fd };

inline const char* to_string(DivergenceMode m) { return m == DivergenceMode::exact ? "exact" : "hutchinson_fd"; }

inline DivergenceMode divergence_mode_from_string(const std::string& s) {
  if (s == "exact") return DivergenceMode::exact;
  if (s == "hutchinson_fd" || s == "hutchinson") return DivergenceMode::hutchinson_fd;
  throw ConfigError("unknown divergence mode '" + s + "' (expected exact or hutchinson_fd)");
}

struct IntegratorConfig {
  int substeps = 3;
  DivergenceMode divergence = DivergenceMode::exact;
  int n_probes = 1;
  double sigma0 = 0.02;

  void validate() const {
    if (substeps < 1) throw ConfigError("IntegratorConfig: substeps must be >= 1");
    if (n_probes < 1) throw ConfigError("IntegratorConfig: n_probes must be >= 1");
    if (!(sigma0 > 0.0)) throw ConfigError("IntegratorConfig: sigma0 must be > 0");
  }

  /// Exact traces up to d = 8, finite-difference Hutchinson above.
  static IntegratorConfig defaults_for(int dim) {
    IntegratorConfig c;
    c.divergence = dim <= 8 ? DivergenceMode::exact : DivergenceMode::hutchinson_fd;
    return c;
  }

  bool operator==(const IntegratorConfig&) const = default;
};

struct BlockInterval {
  double t_start = 0.0;
  double t_end = 1.0;

  double length() const { return t_end - t_start; }

  void validate() const {
    if (!std::isfinite(t_start) || !std::isfinite(t_end) || !(t_end > t_start)) {
      throw ConfigError("BlockInterval: require finite t_start < t_end");
    }
  }

  bool operator==(const BlockInterval&) const = default;
};

/// One trained JKO block.
struct ResidualVectorField {
  ArchSpec arch;
  ParamVector params;
  BlockInterval interval;
};

template <class Ops>
struct AugmentedState {
  typename Ops::Tensor x;
  typename Ops::Tensor ell;  ///< batch x 1 accumulated integral of div f
};

struct EagerState {
  Matrix x;
  Vector ell;
};

namespace detail {

inline std::vector<Matrix> basis_directions(Eigen::Index rows, Eigen::Index dim) {
  std::vector<Matrix> dirs;
  dirs.reserve(static_cast<std::size_t>(dim));
  for (Eigen::Index i = 0; i < dim; ++i) {
    Matrix e = Matrix::Zero(rows, dim);
    e.col(i).setOnes();
    dirs.push_back(std::move(e));
  }
  return dirs;
}

inline Matrix rademacher(const ProbeStream& probes, Eigen::Index rows, Eigen::Index dim, std::uint64_t step,
                         std::uint64_t probe) {
  Matrix eps(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      eps(r, c) = probes.sign(static_cast<std::uint64_t>(r), step, probe, static_cast<std::uint64_t>(c));
    }
  }
  return eps;
}

inline std::uint64_t step_key(int block_index, int substep) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(block_index)) << 32) |
         static_cast<std::uint32_t>(substep);
}

}  // namespace detail

/// Field value and divergence at (x, t).
template <class Ops>
struct FieldAndDivergence {
  typename Ops::Tensor f;
  typename Ops::Tensor div;  ///< batch x 1
};

/// Evaluates f and div f at one point of the RK4 scheme. Exact mode sums the
/// diagonal of the Jacobian from d Jacobian-vector products; Hutchinson mode
/// averages eps^T (f(x + sigma eps) - f(x)) / sigma over Rademacher probes,
/// with sigma = sigma0 / sqrt(d). Probes are drawn per (sample, step).
template <class Ops, class Field>
FieldAndDivergence<Ops> field_and_divergence(Ops& ops, const Field& field, const typename Ops::Tensor& x, double t,
                                             const IntegratorConfig& cfg, const ProbeStream& probes,
                                             std::uint64_t step) {
  const Matrix& xv = ops.value(x);
  const Eigen::Index rows = xv.rows();
  const Eigen::Index dim = xv.cols();
  if (cfg.divergence == DivergenceMode::exact) {
    const std::vector<Matrix> dirs = detail::basis_directions(rows, dim);
    auto ev = field(ops, x, t, std::span<const Matrix>(dirs));
    typename Ops::Tensor div = ops.col(ev.jvps[0], 0);
    for (Eigen::Index i = 1; i < dim; ++i) {
      div = ops.add(div, ops.col(ev.jvps[static_cast<std::size_t>(i)], i));
    }
    return {ev.value, div};
  }
  const double sigma = cfg.sigma0 / std::sqrt(static_cast<double>(dim));
  auto f0 = field(ops, x, t).value;
  typename Ops::Tensor acc{};
  for (int j = 0; j < cfg.n_probes; ++j) {
    const Matrix eps = detail::rademacher(probes, rows, dim, step, static_cast<std::uint64_t>(j));
    auto shifted = ops.add(x, ops.constant(sigma * eps));
    auto fp = field(ops, shifted, t).value;
    auto est = ops.row_sum(ops.mul(ops.sub(fp, f0), ops.constant(eps)));
    acc = j == 0 ? est : ops.add(acc, est);
  }
  return {f0, ops.scale(acc, 1.0 / (sigma * cfg.n_probes))};
}

namespace detail {

template <class Ops>
void check_finite(const Ops& ops, const typename Ops::Tensor& v, int block_index, int substep) {
  if (!ops.value(v).allFinite()) {
    throw NumericFault("non-finite state in block " + std::to_string(block_index) + " at substep " +
                       std::to_string(substep));
  }
}

}  // namespace detail

/// Classical RK4 with `cfg.substeps` equal steps over the interval. When
/// `track_divergence` is false, ell stays zero and no divergence is computed.
template <class Ops, class Field>
AugmentedState<Ops> integrate(Ops& ops, const Field& field, const BlockInterval& interval,
                              const typename Ops::Tensor& x0, const IntegratorConfig& cfg,
                              const ProbeStream& probes = {}, int block_index = 0, bool track_divergence = true) {
  interval.validate();
  cfg.validate();
  using T = typename Ops::Tensor;
  const int n = cfg.substeps;
  const double h = interval.length() / n;
  T x = x0;
  T ell = ops.constant(Matrix::Zero(ops.value(x0).rows(), 1));
  detail::check_finite(ops, x, block_index, 0);
  for (int s = 0; s < n; ++s) {
    const double t = interval.t_start + interval.length() * s / n;
    const std::uint64_t key = detail::step_key(block_index, s);
    if (track_divergence) {
      auto s1 = field_and_divergence(ops, field, x, t, cfg, probes, key);
      auto s2 = field_and_divergence(ops, field, ops.axpy(x, 0.5 * h, s1.f), t + 0.5 * h, cfg, probes, key);
      auto s3 = field_and_divergence(ops, field, ops.axpy(x, 0.5 * h, s2.f), t + 0.5 * h, cfg, probes, key);
      auto s4 = field_and_divergence(ops, field, ops.axpy(x, h, s3.f), t + h, cfg, probes, key);
      x = ops.axpy(x, h / 6.0, ops.axpy(ops.add(s1.f, s4.f), 2.0, ops.add(s2.f, s3.f)));
      ell = ops.axpy(ell, h / 6.0, ops.axpy(ops.add(s1.div, s4.div), 2.0, ops.add(s2.div, s3.div)));
      detail::check_finite(ops, ell, block_index, s);
    } else {
      T k1 = field(ops, x, t).value;
      T k2 = field(ops, ops.axpy(x, 0.5 * h, k1), t + 0.5 * h).value;
      T k3 = field(ops, ops.axpy(x, 0.5 * h, k2), t + 0.5 * h).value;
      T k4 = field(ops, ops.axpy(x, h, k3), t + h).value;
      x = ops.axpy(x, h / 6.0, ops.axpy(ops.add(k1, k4), 2.0, ops.add(k2, k3)));
    }
    detail::check_finite(ops, x, block_index, s);
  }
  return {x, ell};
}

/// Integrates the time-reversed ODE dx/ds = -f(x, t_end - s) with the same
/// number of RK4 substeps, mapping a block output back to its input.
template <class Ops, class Field>
typename Ops::Tensor integrate_reverse(Ops& ops, const Field& field, const BlockInterval& interval,
                                       const typename Ops::Tensor& y, const IntegratorConfig& cfg,
                                       int block_index = 0) {
  interval.validate();
  cfg.validate();
  using T = typename Ops::Tensor;
  const int n = cfg.substeps;
  const double h = -interval.length() / n;
  T x = y;
  detail::check_finite(ops, x, block_index, 0);
  for (int s = 0; s < n; ++s) {
    const double t = interval.t_end - interval.length() * s / n;
    T k1 = field(ops, x, t).value;
    T k2 = field(ops, ops.axpy(x, 0.5 * h, k1), t + 0.5 * h).value;
    T k3 = field(ops, ops.axpy(x, 0.5 * h, k2), t + 0.5 * h).value;
    T k4 = field(ops, ops.axpy(x, h, k3), t + h).value;
    x = ops.axpy(x, h / 6.0, ops.axpy(ops.add(k1, k4), 2.0, ops.add(k2, k3)));
    detail::check_finite(ops, x, block_index, s);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Eager conveniences over arbitrary fields and over trained blocks.

/// Tr(d f / d x) per row, from d Jacobian-vector products.
template <class Field>
Vector divergence_exact(const Field& field, const Matrix& x, double t) {
  ad::EagerOps ops;
  IntegratorConfig cfg;
  cfg.divergence = DivergenceMode::exact;
  return field_and_divergence(ops, field, x, t, cfg, ProbeStream{}, 0).div.col(0);
}

/// Finite-difference Hutchinson estimate per row.
template <class Field>
Vector divergence_hutchinson_fd(const Field& field, const Matrix& x, double t, const IntegratorConfig& cfg,
                                const ProbeStream& probes, std::uint64_t step = 0) {
  ad::EagerOps ops;
  IntegratorConfig c = cfg;
  c.divergence = DivergenceMode::hutchinson_fd;
  return field_and_divergence(ops, field, x, t, c, probes, step).div.col(0);
}

template <class Field>
EagerState integrate_field(const Field& field, const BlockInterval& interval, const Matrix& x0,
                           const IntegratorConfig& cfg, const ProbeStream& probes = {}, int block_index = 0,
                           bool track_divergence = true) {
  ad::EagerOps ops;
  auto st = integrate(ops, field, interval, x0, cfg, probes, block_index, track_divergence);
  return {std::move(st.x), st.ell.col(0)};
}

inline EagerState integrate_block(const ResidualVectorField& block, const Matrix& x0, const IntegratorConfig& cfg,
                                  const ProbeStream& probes = {}, int block_index = 0,
                                  bool track_divergence = true) {
  return integrate_field(eager_field(block.arch, block.params), block.interval, x0, cfg, probes, block_index,
                         track_divergence);
}

template <class Field>
Matrix invert_field(const Field& field, const BlockInterval& interval, const Matrix& y, const IntegratorConfig& cfg,
                    int block_index = 0) {
  ad::EagerOps ops;
  return integrate_reverse(ops, field, interval, y, cfg, block_index);
}

inline Matrix invert_block(const ResidualVectorField& block, const Matrix& y, const IntegratorConfig& cfg,
                           int block_index = 0) {
  return invert_field(eager_field(block.arch, block.params), block.interval, y, cfg, block_index);
}

/// Pushes points through a block without tracking the divergence.
inline Matrix push_block(const ResidualVectorField& block, const Matrix& x0, const IntegratorConfig& cfg,
                         int block_index = 0) {
  return integrate_block(block, x0, cfg, {}, block_index, false).x;
}

}  // namespace jko
