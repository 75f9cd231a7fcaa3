#pragma once

// Target potentials and the per-block JKO loss
//   mean_i [ V(x1_i) - ell_i ] + mean_i |x1_i - x0_i|^2 / (2h),
// where (x1, ell) integrates the block from the pushed samples x0.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jkoflow/autodiff.hpp"
#include "jkoflow/errors.hpp"
#include "jkoflow/ode.hpp"

namespace jko {

enum class PotentialKind { standard_gaussian, gaussian_mixture };

/// Equilibrium p_Z ~ exp(-V). For a mixture, sample i is attracted to the
/// component of its label: V_k(x) = |x - mu_k|^2 / (2 s^2).
struct Potential {
  PotentialKind kind = PotentialKind::standard_gaussian;
  std::vector<Vector> means;
  double variance = 1.0;
  double shift = 0.0;  ///< additive constant; gradient-irrelevant

  static Potential standard() { return {}; }

  static Potential mixture(std::vector<Vector> means, double variance = 1.0) {
    Potential p;
    p.kind = PotentialKind::gaussian_mixture;
    p.means = std::move(means);
    p.variance = variance;
    p.validate();
    return p;
  }

  bool conditional() const { return kind == PotentialKind::gaussian_mixture; }

  void validate() const {
    if (kind == PotentialKind::gaussian_mixture) {
      if (means.empty()) throw ConfigError("Potential: mixture needs at least one component");
      for (const Vector& m : means) {
        if (m.size() != means.front().size()) throw ConfigError("Potential: component means differ in dimension");
      }
    }
    if (!(variance > 0.0)) throw ConfigError("Potential: variance must be > 0");
  }

  /// Row i holds the mean attracting sample i (zeros for the standard case).
  Matrix center_rows(Eigen::Index rows, Eigen::Index dim, std::span<const int> labels) const {
    Matrix c = Matrix::Zero(rows, dim);
    if (kind == PotentialKind::standard_gaussian) {
      return c;
    }
    if (static_cast<Eigen::Index>(labels.size()) != rows) {
      throw ConfigError("Potential: mixture potential requires one label per sample");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int k = labels[static_cast<std::size_t>(r)];
      if (k < 0 || k >= static_cast<int>(means.size())) {
        throw ConfigError("Potential: label " + std::to_string(k) + " has no mixture component");
      }
      if (means[static_cast<std::size_t>(k)].size() != dim) {
        throw ConfigError("Potential: component mean dimension does not match data");
      }
      c.row(r) = means[static_cast<std::size_t>(k)].transpose();
    }
    return c;
  }

  double scale() const { return kind == PotentialKind::standard_gaussian ? 1.0 : variance; }
};

/// V(x) for one point; `label` is required iff the potential is a mixture.
inline double potential_value(const Potential& pot, const Vector& x, std::optional<int> label = std::nullopt) {
  if (pot.conditional() && !label) {
    throw ConfigError("potential_value: mixture potential requires a label");
  }
  if (!pot.conditional()) {
    return 0.5 * x.squaredNorm() + pot.shift;
  }
  const int k = *label;
  if (k < 0 || k >= static_cast<int>(pot.means.size())) {
    throw ConfigError("potential_value: label out of range");
  }
  return (x - pot.means[static_cast<std::size_t>(k)]).squaredNorm() / (2.0 * pot.variance) + pot.shift;
}

/// Batched V on a backend, as a batch x 1 tensor.
template <class Ops>
typename Ops::Tensor potential_rows(Ops& ops, const Potential& pot, const typename Ops::Tensor& x,
                                    std::span<const int> labels) {
  const Matrix& xv = ops.value(x);
  typename Ops::Tensor centered = x;
  if (pot.conditional()) {
    centered = ops.sub(x, ops.constant(pot.center_rows(xv.rows(), xv.cols(), labels)));
  }
  auto v = ops.scale(ops.sq_norm_rows(centered), 1.0 / (2.0 * pot.scale()));
  return pot.shift != 0.0 ? ops.add_scalar(v, pot.shift) : v;
}

template <class Ops>
struct LossTerms {
  typename Ops::Tensor kl;     ///< 1x1 mean of V(x1) - ell
  typename Ops::Tensor w2;     ///< 1x1 mean |x1 - x0|^2 / (2h)
  typename Ops::Tensor total;  ///< kl + w2 (or kl alone for a free block)
  typename Ops::Tensor x1;     ///< pushed batch
};

/// Builds the block loss on a backend. `x0` holds already-pushed samples and
/// is treated as a constant.
template <class Ops, class Field>
LossTerms<Ops> block_loss_terms(Ops& ops, const Field& field, const BlockInterval& interval, const Matrix& x0,
                                std::span<const int> labels, const Potential& pot, const IntegratorConfig& cfg,
                                const ProbeStream& probes, int block_index, bool with_w2 = true) {
  if (x0.rows() == 0) {
    throw ConfigError("block_loss: empty batch");
  }
  auto start = ops.constant(x0);
  auto st = integrate(ops, field, interval, start, cfg, probes, block_index, true);
  auto kl = ops.mean(ops.sub(potential_rows(ops, pot, st.x, labels), st.ell));
  auto w2 = ops.scale(ops.mean(ops.sq_norm_rows(ops.sub(st.x, start))), 1.0 / (2.0 * interval.length()));
  auto total = with_w2 ? ops.add(kl, w2) : kl;
  return {kl, w2, total, st.x};
}

struct BlockLossBreakdown {
  double kl_term = 0.0;
  double w2_term = 0.0;
  double total = 0.0;
};

template <class Field>
BlockLossBreakdown block_loss(const Field& field, const BlockInterval& interval, const Matrix& x0,
                              std::span<const int> labels, const Potential& pot, const IntegratorConfig& cfg,
                              const ProbeStream& probes = {}, int block_index = 0) {
  ad::EagerOps ops;
  auto terms = block_loss_terms(ops, field, interval, x0, labels, pot, cfg, probes, block_index);
  return {terms.kl(0, 0), terms.w2(0, 0), terms.total(0, 0)};
}

inline BlockLossBreakdown block_loss(const ResidualVectorField& block, const Matrix& x0, std::span<const int> labels,
                                     const Potential& pot, const IntegratorConfig& cfg, const ProbeStream& probes = {},
                                     int block_index = 0) {
  return block_loss(eager_field(block.arch, block.params), block.interval, x0, labels, pot, cfg, probes,
                    block_index);
}

/// The KL part only: the objective of the final, unregularized block.
template <class Field>
double free_block_loss(const Field& field, const BlockInterval& interval, const Matrix& x0,
                       std::span<const int> labels, const Potential& pot, const IntegratorConfig& cfg,
                       const ProbeStream& probes = {}, int block_index = 0) {
  ad::EagerOps ops;
  auto terms = block_loss_terms(ops, field, interval, x0, labels, pot, cfg, probes, block_index, false);
  return terms.total(0, 0);
}

inline double free_block_loss(const ResidualVectorField& block, const Matrix& x0, std::span<const int> labels,
                              const Potential& pot, const IntegratorConfig& cfg, const ProbeStream& probes = {},
                              int block_index = 0) {
  return free_block_loss(eager_field(block.arch, block.params), block.interval, x0, labels, pot, cfg, probes,
                         block_index);
}

/// Value and parameter gradient of the (free-)block loss for one mini-batch.
struct LossGrad {
  BlockLossBreakdown loss;
  ParamVector grad;
  Matrix x1;
};

inline LossGrad block_loss_and_grad(const ResidualVectorField& block, const Matrix& x0, std::span<const int> labels,
                                    const Potential& pot, const IntegratorConfig& cfg, const ProbeStream& probes,
                                    int block_index, bool with_w2 = true) {
  LossGrad out;
  auto [value, grad] = value_and_grad(block.arch, block.params, [&](ad::TapeOps& ops, const auto& bound) {
    MlpField<ad::TapeOps> field(block.arch, bound);
    auto terms = block_loss_terms(ops, field, block.interval, x0, labels, pot, cfg, probes, block_index, with_w2);
    out.loss.kl_term = ops.value(terms.kl)(0, 0);
    out.loss.w2_term = ops.value(terms.w2)(0, 0);
    out.x1 = ops.value(terms.x1);
    return terms.total;
  });
  out.loss.total = value;
  out.grad = std::move(grad);
  return out;
}

}  // namespace jko
