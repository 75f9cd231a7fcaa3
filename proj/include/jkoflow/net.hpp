#pragma once

// Residual vector field f_theta(x, t): a softplus MLP whose input is the
// point x with the scalar time t appended, and whose output has the
// dimension of x.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jkoflow/autodiff.hpp"
#include "jkoflow/errors.hpp"

namespace jko {

using ad::Matrix;
using Vector = Eigen::VectorXd;

struct ArchSpec {
  int input_dim = 2;
  std::vector<int> hidden_widths{128, 128};
  double beta = 20.0;  ///< softplus sharpness
  bool time_input = true;

  int output_dim() const { return input_dim; }
  int first_layer_inputs() const { return input_dim + (time_input ? 1 : 0); }

  void validate() const {
    if (input_dim < 1) {
      throw ConfigError("ArchSpec: input_dim must be positive");
    }
    if (hidden_widths.empty()) {
      throw ConfigError("ArchSpec: at least one hidden layer is required");
    }
    for (int w : hidden_widths) {
      if (w < 1) {
        throw ConfigError("ArchSpec: hidden widths must be positive");
      }
    }
    if (!(beta > 0.0) || !std::isfinite(beta)) {
      throw ConfigError("ArchSpec: softplus beta must be positive");
    }
  }

  bool operator==(const ArchSpec&) const = default;
};

/// Shape of one affine layer and its position inside the flat parameter
/// array. Weights are stored row-major (out x in), followed by the bias.
struct LayerShape {
  int out = 0;
  int in = 0;
  std::size_t offset = 0;

  std::size_t weight_count() const { return static_cast<std::size_t>(out) * in; }
  std::size_t count() const { return weight_count() + static_cast<std::size_t>(out); }
};

inline std::vector<LayerShape> param_layout(const ArchSpec& arch) {
  arch.validate();
  std::vector<LayerShape> layers;
  int in = arch.first_layer_inputs();
  std::size_t offset = 0;
  auto push = [&](int out) {
    layers.push_back(LayerShape{out, in, offset});
    offset += layers.back().count();
    in = out;
  };
  for (int w : arch.hidden_widths) {
    push(w);
  }
  push(arch.output_dim());
  return layers;
}

inline std::size_t param_count(const ArchSpec& arch) {
  const auto layers = param_layout(arch);
  return layers.back().offset + layers.back().count();
}

/// Flat weights and biases of one block.
struct ParamVector {
  Vector values;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  bool all_finite() const { return values.allFinite(); }

  bool operator==(const ParamVector& other) const {
    return values.size() == other.values.size() && values == other.values;
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for hidden layers; the output
/// layer is zero so a fresh block is the identity transport (f == 0).
inline ParamVector init_params(const ArchSpec& arch, std::uint64_t seed) {
  const auto layers = param_layout(arch);
  ParamVector p;
  p.values = Vector::Zero(static_cast<Eigen::Index>(param_count(arch)));
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const LayerShape& s = layers[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < s.count(); ++i) {
      p.values[static_cast<Eigen::Index>(s.offset + i)] = u(rng);
    }
  }
  return p;
}

/// Parameters realizing f(x, t) = A x exactly, using
/// softplus(z) - softplus(-z) = z to carry +-x through every hidden layer.
/// Needs every hidden width >= 2 d.
inline ParamVector implant_linear_field(const ArchSpec& arch, const Matrix& a) {
  const auto layers = param_layout(arch);
  const int d = arch.input_dim;
  if (a.rows() != d || a.cols() != d) {
    throw ConfigError("implant_linear_field: matrix must be d x d");
  }
  for (int w : arch.hidden_widths) {
    if (w < 2 * d) throw ConfigError("implant_linear_field: hidden widths must be >= 2 d");
  }
  ParamVector p;
  p.values = Vector::Zero(static_cast<Eigen::Index>(param_count(arch)));
  auto set_w = [&](const LayerShape& s, int r, int c, double v) {
    p.values[static_cast<Eigen::Index>(s.offset + static_cast<std::size_t>(r) * s.in + c)] = v;
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerShape& s = layers[l];
    for (int i = 0; i < d; ++i) {
      if (l == 0) {
        set_w(s, i, i, 1.0);
        set_w(s, d + i, i, -1.0);
      } else if (l + 1 < layers.size()) {
        set_w(s, i, i, 1.0);
        set_w(s, i, d + i, -1.0);
        set_w(s, d + i, i, -1.0);
        set_w(s, d + i, d + i, 1.0);
      } else {
        for (int j = 0; j < d; ++j) {
          set_w(s, i, j, a(i, j));
          set_w(s, i, d + j, -a(i, j));
        }
      }
    }
  }
  return p;
}

/// Per-layer weight (out x in) and bias (1 x out) tensors on some backend.
template <class Ops>
struct LayerParams {
  std::vector<typename Ops::Tensor> weights;
  std::vector<typename Ops::Tensor> biases;
};

inline Matrix weight_matrix(const ParamVector& p, const LayerShape& s) {
  Matrix w(s.out, s.in);
  for (int r = 0; r < s.out; ++r) {
    for (int c = 0; c < s.in; ++c) {
      w(r, c) = p.values[static_cast<Eigen::Index>(s.offset + static_cast<std::size_t>(r) * s.in + c)];
    }
  }
  return w;
}

inline Matrix bias_matrix(const ParamVector& p, const LayerShape& s) {
  return p.values.segment(static_cast<Eigen::Index>(s.offset + s.weight_count()), s.out).transpose();
}

/// Loads a flat parameter vector onto a backend. On TapeOps the tensors are
/// gradient-carrying leaves.
template <class Ops>
LayerParams<Ops> bind_params(Ops& ops, const std::vector<LayerShape>& layers, const ParamVector& p) {
  LayerParams<Ops> out;
  for (const LayerShape& s : layers) {
    out.weights.push_back(ops.parameter(weight_matrix(p, s)));
    out.biases.push_back(ops.parameter(bias_matrix(p, s)));
  }
  return out;
}

/// Flattens leaf gradients back into the parameter layout.
inline ParamVector gather_grad(const ad::Tape& tape, const std::vector<LayerShape>& layers,
                               const LayerParams<ad::TapeOps>& bound) {
  ParamVector g;
  g.values = Vector::Zero(static_cast<Eigen::Index>(layers.back().offset + layers.back().count()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerShape& s = layers[l];
    const Matrix& gw = tape.grad(bound.weights[l]);
    const Matrix& gb = tape.grad(bound.biases[l]);
    if (gw.size() != 0) {
      for (int r = 0; r < s.out; ++r) {
        for (int c = 0; c < s.in; ++c) {
          g.values[static_cast<Eigen::Index>(s.offset + static_cast<std::size_t>(r) * s.in + c)] = gw(r, c);
        }
      }
    }
    if (gb.size() != 0) {
      g.values.segment(static_cast<Eigen::Index>(s.offset + s.weight_count()), s.out) = gb.row(0).transpose();
    }
  }
  return g;
}

/// Field value plus directional derivatives (d f / d x) v for each requested
/// direction v.
template <class Ops>
struct FieldEval {
  typename Ops::Tensor value;
  std::vector<typename Ops::Tensor> jvps;
};

/// An MLP block bound to a backend. Callable as a vector field:
/// field(ops, x, t, directions) with x of shape batch x d and each direction
/// a constant batch x d matrix.
template <class Ops>
class MlpField {
 public:
  MlpField(const ArchSpec& arch, LayerParams<Ops> params) : arch_(arch), params_(std::move(params)) {}

  const ArchSpec& arch() const { return arch_; }
  const LayerParams<Ops>& params() const { return params_; }

  FieldEval<Ops> operator()(Ops& ops, const typename Ops::Tensor& x, double t,
                            std::span<const Matrix> directions = {}) const {
    using T = typename Ops::Tensor;
    const std::size_t n_hidden = arch_.hidden_widths.size();
    T a = arch_.time_input ? ops.append_col(x, t) : x;
    std::vector<T> tangents;
    tangents.reserve(directions.size());
    for (const Matrix& v : directions) {
      tangents.push_back(ops.constant(arch_.time_input ? ad::kernel::append_col(v, 0.0) : v));
    }
    for (std::size_t l = 0; l < n_hidden; ++l) {
      T z = ops.linear(a, params_.weights[l], params_.biases[l]);
      if (tangents.empty() && !Ops::records) {
        a = ops.softplus(z, arch_.beta);
        continue;
      }
      auto [act, slope] = ops.softplus_slope(z, arch_.beta);
      for (T& v : tangents) {
        v = ops.mul(ops.matmul_t(v, params_.weights[l]), slope);
      }
      a = act;
    }
    FieldEval<Ops> out{ops.linear(a, params_.weights[n_hidden], params_.biases[n_hidden]), {}};
    for (T& v : tangents) {
      out.jvps.push_back(ops.matmul_t(v, params_.weights[n_hidden]));
    }
    return out;
  }

 private:
  ArchSpec arch_;
  LayerParams<Ops> params_;
};

inline MlpField<ad::EagerOps> eager_field(const ArchSpec& arch, const ParamVector& p) {
  ad::EagerOps ops;
  return MlpField<ad::EagerOps>(arch, bind_params(ops, param_layout(arch), p));
}

/// f_theta(x, t) for a batch of points (rows of x).
inline Matrix forward(const ParamVector& p, const ArchSpec& arch, const Matrix& x, double t) {
  if (x.cols() != arch.input_dim) {
    throw ConfigError("forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                      std::to_string(arch.input_dim));
  }
  ad::EagerOps ops;
  Matrix out = eager_field(arch, p)(ops, x, t).value;
  if (!out.allFinite()) {
    throw NumericFault("forward: non-finite field value (parameter blow-up)");
  }
  return out;
}

/// (d f / d x) eps at each row of x; one direction per row of eps.
inline Matrix jvp(const ParamVector& p, const ArchSpec& arch, const Matrix& x, double t, const Matrix& eps) {
  ad::EagerOps ops;
  const Matrix dirs[1] = {eps};
  return eager_field(arch, p)(ops, x, t, dirs).jvps.front();
}

/// Value and gradient of a scalar objective of the block parameters.
/// `objective(ops, bound_params)` must return a 1x1 tensor built only from
/// TapeOps operations.
template <class Objective>
std::pair<double, ParamVector> value_and_grad(const ArchSpec& arch, const ParamVector& p, Objective&& objective) {
  const auto layers = param_layout(arch);
  if (p.size() != layers.back().offset + layers.back().count()) {
    throw ConfigError("value_and_grad: parameter vector length does not match the architecture");
  }
  ad::Tape tape;
  ad::TapeOps ops(tape);
  const LayerParams<ad::TapeOps> bound = bind_params(ops, layers, p);
  const ad::Var out = objective(ops, static_cast<const LayerParams<ad::TapeOps>&>(bound));
  const Matrix& v = tape.value(out);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ConfigError("value_and_grad: objective must produce a 1x1 scalar");
  }
  tape.backward(out);
  return {v(0, 0), gather_grad(tape, layers, bound)};
}

}  // namespace jko
