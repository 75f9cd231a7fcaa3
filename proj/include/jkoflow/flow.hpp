#pragma once

// A trained flow: standardization followed by the chain of residual blocks.
// encode runs data to codes, decode integrates back in reverse time.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jkoflow/datasets.hpp"
#include "jkoflow/objective.hpp"
#include "jkoflow/ode.hpp"
#include "jkoflow/rng.hpp"

namespace jko {

struct FlowMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
  bool terminated = true;
};

struct FlowNetwork {
  ArchSpec arch;
  std::vector<ResidualVectorField> blocks;
  bool has_free_block = false;  ///< last entry of `blocks` is the free block
  Standardizer standardizer;
  Potential potential;
  IntegratorConfig integrator;
  FlowMetadata meta;

  int dim() const { return arch.input_dim; }
  std::size_t jko_block_count() const { return blocks.size() - (has_free_block ? 1 : 0); }
  double horizon() const { return blocks.empty() ? 0.0 : blocks.back().interval.t_end; }

  /// Step sizes of the JKO blocks (free block excluded).
  std::vector<double> step_sizes() const {
    std::vector<double> h;
    for (std::size_t k = 0; k < jko_block_count(); ++k) h.push_back(blocks[k].interval.length());
    return h;
  }

  void validate() const {
    arch.validate();
    integrator.validate();
    potential.validate();
    if (standardizer.dim() != arch.input_dim) {
      throw ConfigError("FlowNetwork: standardizer dimension does not match the architecture");
    }
    if (has_free_block && blocks.empty()) throw ConfigError("FlowNetwork: free block flag without blocks");
    const std::size_t n = param_count(arch);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      blocks[k].interval.validate();
      if (!(blocks[k].arch == arch) || blocks[k].params.size() != n) {
        throw ConfigError("FlowNetwork: block " + std::to_string(k) + " does not match the architecture");
      }
      if (k > 0 && blocks[k].interval.t_start != blocks[k - 1].interval.t_end) {
        throw ConfigError("FlowNetwork: intervals of blocks " + std::to_string(k - 1) + " and " +
                          std::to_string(k) + " are not contiguous");
      }
    }
  }
};

inline FlowNetwork empty_flow(const ArchSpec& arch, const Standardizer& standardizer,
                              const Potential& potential = Potential::standard(),
                              const IntegratorConfig& integrator = {}) {
  FlowNetwork f;
  f.arch = arch;
  f.standardizer = standardizer;
  f.potential = potential;
  f.integrator = integrator;
  return f;
}

/// Re-times the blocks to consecutive intervals of the given lengths from 0.
inline void set_intervals(FlowNetwork& flow, const std::vector<double>& lengths) {
  if (lengths.size() != flow.blocks.size()) throw ConfigError("set_intervals: length count mismatch");
  double t = 0.0;
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    flow.blocks[k].interval = {t, t + lengths[k]};
    t += lengths[k];
  }
}

struct Encoded {
  Matrix z;    ///< codes in model space
  Vector ell;  ///< accumulated integral of div f per sample
};

namespace detail {

constexpr Eigen::Index kChunkRows = 2048;

inline ProbeStream flow_probes(const FlowNetwork& flow, std::uint64_t first_sample) {
  return {derive_seed(flow.meta.seed, 0x656e636f6465ULL), first_sample};
}

}  // namespace detail

/// Forward integration of already-standardized points through all blocks.
inline Encoded encode_model(const FlowNetwork& flow, const Matrix& z0, bool track_divergence = true) {
  Encoded out{z0, Vector::Zero(z0.rows())};
  for (Eigen::Index r0 = 0; r0 < z0.rows(); r0 += detail::kChunkRows) {
    const Eigen::Index rows = std::min(detail::kChunkRows, z0.rows() - r0);
    Matrix x = z0.middleRows(r0, rows);
    Vector ell = Vector::Zero(rows);
    for (std::size_t k = 0; k < flow.blocks.size(); ++k) {
      EagerState st = integrate_block(flow.blocks[k], x, flow.integrator,
                                      detail::flow_probes(flow, static_cast<std::uint64_t>(r0)),
                                      static_cast<int>(k), track_divergence);
      x = std::move(st.x);
      if (track_divergence) ell += st.ell;
    }
    out.z.middleRows(r0, rows) = x;
    out.ell.segment(r0, rows) = ell;
  }
  return out;
}

/// Reverse-time integration through the blocks in reverse order (model space).
inline Matrix decode_model(const FlowNetwork& flow, const Matrix& z) {
  Matrix out = z;
  for (Eigen::Index r0 = 0; r0 < z.rows(); r0 += detail::kChunkRows) {
    const Eigen::Index rows = std::min(detail::kChunkRows, z.rows() - r0);
    Matrix x = z.middleRows(r0, rows);
    for (std::size_t k = flow.blocks.size(); k-- > 0;) {
      x = invert_block(flow.blocks[k], x, flow.integrator, static_cast<int>(k));
    }
    out.middleRows(r0, rows) = x;
  }
  return out;
}

inline void check_dim(const FlowNetwork& flow, const Matrix& x, const char* who) {
  if (x.cols() != flow.dim()) {
    throw ConfigError(std::string(who) + ": input has " + std::to_string(x.cols()) + " columns, flow expects " +
                      std::to_string(flow.dim()));
  }
}

/// Data-space x to codes; standardization applied first.
inline Encoded encode(const FlowNetwork& flow, const Matrix& x) {
  check_dim(flow, x, "encode");
  return encode_model(flow, flow.standardizer.apply(x));
}

inline Matrix decode(const FlowNetwork& flow, const Matrix& z) {
  check_dim(flow, z, "decode");
  return flow.standardizer.invert(decode_model(flow, z));
}

/// Draws codes from p_Z (per-label component for a mixture potential).
inline Matrix sample_codes(const Potential& pot, Eigen::Index n, int dim, std::uint64_t seed,
                           std::span<const int> labels = {}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix z(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) z(i, j) = g(rng);
  }
  if (pot.conditional()) {
    z = std::sqrt(pot.variance) * z + pot.center_rows(n, dim, labels);
  }
  return z;
}

inline Matrix sample(const FlowNetwork& flow, Eigen::Index n, std::uint64_t seed, std::span<const int> labels = {}) {
  if (n == 0) return Matrix(0, flow.dim());
  return decode(flow, sample_codes(flow.potential, n, flow.dim(), seed, labels));
}

/// log p_Z(z) per row.
inline Vector log_prior(const Potential& pot, const Matrix& z, std::span<const int> labels = {}) {
  const double d = static_cast<double>(z.cols());
  const double s2 = pot.scale();
  const Matrix c = z - pot.center_rows(z.rows(), z.cols(), labels);
  return (-0.5 * c.rowwise().squaredNorm().array() / s2 - 0.5 * d * std::log(2.0 * std::numbers::pi * s2)).matrix();
}

struct Likelihoods {
  Vector data;   ///< nats in original data units
  Vector model;  ///< nats in standardized space
};

inline Likelihoods log_likelihoods(const FlowNetwork& flow, const Matrix& x, std::span<const int> labels = {}) {
  const Encoded e = encode(flow, x);
  Likelihoods out;
  out.model = log_prior(flow.potential, e.z, labels) + e.ell;
  out.data = out.model.array() + flow.standardizer.log_det();
  return out;
}

inline Vector log_likelihood(const FlowNetwork& flow, const Matrix& x, std::span<const int> labels = {}) {
  return log_likelihoods(flow, x, labels).data;
}

inline double nll_mean(const FlowNetwork& flow, const Matrix& x, std::span<const int> labels = {}) {
  if (x.rows() == 0) throw ConfigError("nll_mean: empty dataset");
  return -log_likelihood(flow, x, labels).mean();
}

inline double nll_mean(const FlowNetwork& flow, const Dataset& data) {
  return nll_mean(flow, data.x, data.labels);
}

/// Mean squared round-trip error E|T^{-1}(T(x)) - x|^2 in standardized space.
inline double inversion_error(const FlowNetwork& flow, const Matrix& x) {
  if (x.rows() == 0) return 0.0;
  const Matrix z0 = flow.standardizer.apply(x);
  const Matrix back = decode_model(flow, encode_model(flow, z0, false).z);
  return (back - z0).rowwise().squaredNorm().mean();
}

}  // namespace jko
