#pragma once

// Gaussian-kernel MMD two-sample statistic (biased V-statistic, diagonal
// terms included) with a permutation-bootstrap rejection threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "jkoflow/flow.hpp"

namespace jko {

enum class BandwidthRule { constant, median, custom };

inline const char* to_string(BandwidthRule r) {
  switch (r) {
    case BandwidthRule::constant: return "constant";
    case BandwidthRule::median: return "median";
    case BandwidthRule::custom: return "custom";
  }
  return "?";
}

inline BandwidthRule bandwidth_rule_from_string(const std::string& s) {
  if (s == "constant") return BandwidthRule::constant;
  if (s == "median") return BandwidthRule::median;
  if (s == "custom") return BandwidthRule::custom;
  throw ConfigError("unknown bandwidth rule '" + s + "' (expected constant, median or custom)");
}

struct MmdConfig {
  BandwidthRule rule = BandwidthRule::custom;
  double factor = 0.1;      ///< custom: h = factor * median
  double constant_h = 1.0;  ///< constant: h
  int n_bootstrap = 1000;
  double alpha = 0.05;
  std::size_t median_cap = 4096;  ///< 0: all points
  std::size_t n_generated = 10000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(factor > 0.0)) throw ConfigError("mmd: factor must be > 0");
    if (!(constant_h > 0.0)) throw ConfigError("mmd: constant bandwidth must be > 0");
    if (n_bootstrap < 1) throw ConfigError("mmd: n_bootstrap must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("mmd: alpha must lie in (0, 1)");
  }
};

struct MmdReport {
  double mmd2 = 0.0;
  double bandwidth = 0.0;
  double tau = 0.0;
  bool reject = false;
  std::size_t N = 0;
  std::size_t M = 0;
  BandwidthRule rule = BandwidthRule::custom;
};

/// Median of the pairwise distances over distinct pairs; above `cap` points a
/// uniform subsample of `cap` points is used.
inline double median_bandwidth(const Matrix& X, std::size_t cap = 4096, std::uint64_t seed = 0) {
  if (X.rows() < 2) throw ConfigError("median_bandwidth: need at least 2 points");
  Matrix P = X;
  if (cap >= 2 && static_cast<std::size_t>(X.rows()) > cap) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(X.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    P.resize(static_cast<Eigen::Index>(cap), X.cols());
    for (std::size_t i = 0; i < cap; ++i) P.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  }
  const Eigen::Index n = P.rows();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((P.row(i) - P.row(j)).norm());
  }
  const std::size_t m = d.size();
  std::nth_element(d.begin(), d.begin() + static_cast<long>(m / 2), d.end());
  double med = d[m / 2];
  if (m % 2 == 0) {
    med = 0.5 * (med + *std::max_element(d.begin(), d.begin() + static_cast<long>(m / 2)));
  }
  if (!(med > 0.0)) throw NumericFault("median_bandwidth: all points coincide");
  return med;
}

namespace detail {

constexpr Eigen::Index kKernelRows = 256;

/// exp(-|a_i - b_j|^2 / (2 h^2)) for a row block of a against all of b.
inline Matrix gaussian_kernel(const Matrix& a, const Matrix& b, const Vector& b_sq, double h) {
  Matrix d2 = (-2.0 * a * b.transpose()).colwise() + a.rowwise().squaredNorm();
  d2.rowwise() += b_sq.transpose();
  return (-d2.array().max(0.0) / (2.0 * h * h)).exp().matrix();
}

inline double kernel_sum(const Matrix& a, const Matrix& b, double h) {
  const Vector b_sq = b.rowwise().squaredNorm();
  double total = 0.0;
  for (Eigen::Index r0 = 0; r0 < a.rows(); r0 += kKernelRows) {
    const Eigen::Index rows = std::min(kKernelRows, a.rows() - r0);
    total += gaussian_kernel(a.middleRows(r0, rows), b, b_sq, h).sum();
  }
  return total;
}

/// Strict weak order on point sets, so cross sums run in one canonical
/// direction.
inline bool set_less(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace detail

/// (1/N^2) sum k(x,x') + (1/M^2) sum k(y,y') - (2/NM) sum k(x,y).
inline double mmd2(const Matrix& X, const Matrix& Y, double h) {
  if (X.rows() == 0 || Y.rows() == 0) throw ConfigError("mmd2: empty sample set");
  if (X.cols() != Y.cols()) throw ConfigError("mmd2: dimension mismatch");
  if (!(h > 0.0)) throw ConfigError("mmd2: bandwidth must be > 0");
  const double n = static_cast<double>(X.rows());
  const double m = static_cast<double>(Y.rows());
  const double kxx = detail::kernel_sum(X, X, h) / (n * n);
  const double kyy = detail::kernel_sum(Y, Y, h) / (m * m);
  const double kxy = (detail::set_less(Y, X) ? detail::kernel_sum(Y, X, h) : detail::kernel_sum(X, Y, h)) / (n * m);
  return kxx + kyy - 2.0 * kxy;
}

/// Simulated null distribution of mmd2 under random relabelings of the pool
/// X u Y, sorted ascending.
inline std::vector<double> bootstrap_null(const Matrix& X, const Matrix& Y, double h, int rounds, std::mt19937_64& rng) {
  const Eigen::Index N = X.rows();
  const Eigen::Index M = Y.rows();
  const Eigen::Index n = N + M;
  Matrix pool(n, X.cols());
  pool << X, Y;
  // Column b holds +1/N on the pseudo-X members of round b, -1/M elsewhere,
  // so round b's statistic is w_b' K w_b.
  Matrix W(n, rounds);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (int b = 0; b < rounds; ++b) {
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Eigen::Index i = 0; i < n; ++i) {
      W(perm[static_cast<std::size_t>(i)], b) = i < N ? 1.0 / static_cast<double>(N) : -1.0 / static_cast<double>(M);
    }
  }
  const Vector sq = pool.rowwise().squaredNorm();
  Vector stats = Vector::Zero(rounds);
  for (Eigen::Index r0 = 0; r0 < n; r0 += detail::kKernelRows) {
    const Eigen::Index rows = std::min(detail::kKernelRows, n - r0);
    const Matrix KW = detail::gaussian_kernel(pool.middleRows(r0, rows), pool, sq, h) * W;
    stats += (W.middleRows(r0, rows).array() * KW.array()).colwise().sum().matrix().transpose();
  }
  std::vector<double> out(stats.data(), stats.data() + stats.size());
  std::sort(out.begin(), out.end());
  return out;
}

/// Empirical (1 - alpha)-quantile of the permutation null: the
/// ceil((1 - alpha) B)-th smallest of B simulated values.
inline double bootstrap_threshold(const Matrix& X, const Matrix& Y, double h, const MmdConfig& cfg,
                                  std::mt19937_64& rng) {
  cfg.validate();
  const auto null = bootstrap_null(X, Y, h, cfg.n_bootstrap, rng);
  const auto B = static_cast<double>(null.size());
  const auto idx = static_cast<std::size_t>(std::max(1.0, std::ceil((1.0 - cfg.alpha) * B - 1e-9)) - 1.0);
  return null[std::min(idx, null.size() - 1)];
}

/// Bandwidth per rule; medians are taken over the reference set X.
inline double select_bandwidth(const Matrix& X, const MmdConfig& cfg) {
  switch (cfg.rule) {
    case BandwidthRule::constant: return cfg.constant_h;
    case BandwidthRule::median: return median_bandwidth(X, cfg.median_cap, derive_seed(cfg.seed, 0x6d6564ULL));
    case BandwidthRule::custom:
      return cfg.factor * median_bandwidth(X, cfg.median_cap, derive_seed(cfg.seed, 0x6d6564ULL));
  }
  return cfg.constant_h;
}

/// Full two-sample test of X (reference) against Y.
inline MmdReport mmd_test(const Matrix& X, const Matrix& Y, const MmdConfig& cfg) {
  cfg.validate();
  MmdReport r;
  r.rule = cfg.rule;
  r.N = static_cast<std::size_t>(X.rows());
  r.M = static_cast<std::size_t>(Y.rows());
  r.bandwidth = select_bandwidth(X, cfg);
  r.mmd2 = mmd2(X, Y, r.bandwidth);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x626f6f74ULL));
  r.tau = bootstrap_threshold(X, Y, r.bandwidth, cfg, rng);
  r.reject = r.mmd2 > r.tau;
  return r;
}

/// Draws cfg.n_generated samples from the flow and tests them against the
/// test set. Conditional flows generate with the test labels, cycled.
inline MmdReport evaluate_generation(const FlowNetwork& flow, const Dataset& test, const MmdConfig& cfg) {
  const auto M = static_cast<Eigen::Index>(cfg.n_generated);
  std::vector<int> labels;
  if (flow.potential.conditional()) {
    if (!test.labeled()) throw ConfigError("evaluate_generation: conditional flow needs labeled test data");
    for (Eigen::Index i = 0; i < M; ++i) labels.push_back(test.labels[static_cast<std::size_t>(i % test.size())]);
  }
  const Matrix Y = sample(flow, M, derive_seed(cfg.seed, 0x67656eULL), labels);
  return mmd_test(test.x, Y, cfg);
}

}  // namespace jko
