#pragma once

// Batched reverse-mode differentiation over dense matrices.
//
// Every tensor is an Eigen matrix whose rows index samples of a mini-batch.
// Two backends expose the same operation set:
//   EagerOps  evaluates immediately and records nothing;
//   TapeOps   records each operation on a Tape so that the gradient of a
//             1x1 output can be propagated back to every parameter leaf.
// Algorithms written against the common interface (see mlp / ode / loss
// code) run unchanged on either backend, and both backends share the value
// kernels below, so a taped forward pass is bit-identical to the eager one.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "jkoflow/errors.hpp"

namespace jko::ad {

using Matrix = Eigen::MatrixXd;

namespace kernel {

/// softplus(z) = log(1 + exp(beta z)) / beta, written so it never overflows.
inline double softplus(double z, double beta) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(beta * z))) / beta;
}

inline double logistic(double u) {
  if (u >= 0.0) {
    return 1.0 / (1.0 + std::exp(-u));
  }
  const double e = std::exp(u);
  return e / (1.0 + e);
}

/// log1p for arguments in [0, 1], vectorized: log(u) * e / (u - 1) with
/// u = 1 + e recovers the bits lost when forming u. Arguments below 2^-53
/// (where u rounds to 1) return 0, an absolute error under 1.2e-16.
inline Eigen::ArrayXXd log1p_unit(const Eigen::ArrayXXd& e) {
  const Eigen::ArrayXXd u = 1.0 + e;
  return u.log() * (e / (u - 1.0).max(1e-300));
}

inline Matrix softplus(const Matrix& z, double beta) {
  return z.array().max(0.0) + log1p_unit((-beta * z.array().abs()).exp()) / beta;
}

/// logistic(beta z): the derivative of softplus with sharpness beta. exp may
/// overflow to +inf for very negative z, which still yields the limit 0.
inline Matrix sigmoid(const Matrix& z, double beta) { return 1.0 / (1.0 + (-beta * z.array()).exp()); }

inline std::pair<Matrix, Matrix> softplus_slope(const Matrix& z, double beta) {
  return {softplus(z, beta), sigmoid(z, beta)};
}

inline Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out = x * w.transpose();
  out.rowwise() += b.row(0);
  return out;
}

inline Matrix matmul_t(const Matrix& x, const Matrix& w) { return x * w.transpose(); }

inline Matrix append_col(const Matrix& a, double v) {
  Matrix out(a.rows(), a.cols() + 1);
  out.leftCols(a.cols()) = a;
  out.col(a.cols()).setConstant(v);
  return out;
}

inline Matrix sq_norm_rows(const Matrix& a) { return a.rowwise().squaredNorm(); }

inline Matrix row_sum(const Matrix& a) { return a.rowwise().sum(); }

inline Matrix mean(const Matrix& a) {
  Matrix out(1, 1);
  out(0, 0) = a.mean();
  return out;
}

inline Matrix sum(const Matrix& a) {
  Matrix out(1, 1);
  out(0, 0) = a.sum();
  return out;
}

}  // namespace kernel

/// Immediate evaluation; tensors are plain matrices.
struct EagerOps {
  using Tensor = Matrix;

  static constexpr bool records = false;

  const Matrix& value(const Matrix& t) const { return t; }
  Matrix constant(Matrix m) const { return m; }
  Matrix parameter(Matrix m) const { return m; }

  Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) const {
    return kernel::linear(x, w, b);
  }
  Matrix matmul_t(const Matrix& x, const Matrix& w) const { return kernel::matmul_t(x, w); }
  Matrix add(const Matrix& a, const Matrix& b) const { return a + b; }
  Matrix sub(const Matrix& a, const Matrix& b) const { return a - b; }
  Matrix axpy(const Matrix& a, double c, const Matrix& b) const { return a + c * b; }
  Matrix scale(const Matrix& a, double c) const { return c * a; }
  Matrix add_scalar(const Matrix& a, double c) const { return a.array() + c; }
  Matrix mul(const Matrix& a, const Matrix& b) const { return a.cwiseProduct(b); }
  Matrix softplus(const Matrix& z, double beta) const { return kernel::softplus(z, beta); }
  Matrix sigmoid(const Matrix& z, double beta) const { return kernel::sigmoid(z, beta); }
  std::pair<Matrix, Matrix> softplus_slope(const Matrix& z, double beta) const {
    return kernel::softplus_slope(z, beta);
  }
  Matrix append_col(const Matrix& a, double v) const { return kernel::append_col(a, v); }
  Matrix col(const Matrix& a, Eigen::Index j) const { return a.col(j); }
  Matrix row_sum(const Matrix& a) const { return kernel::row_sum(a); }
  Matrix sq_norm_rows(const Matrix& a) const { return kernel::sq_norm_rows(a); }
  Matrix mean(const Matrix& a) const { return kernel::mean(a); }
  Matrix sum(const Matrix& a) const { return kernel::sum(a); }
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Linear record of a computation. Nodes are appended in evaluation order,
/// so reverse iteration is a valid topological order for back-propagation.
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self, const Matrix& grad)>;

  Var push(Matrix value, bool requires_grad, Backward backward = {}) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), requires_grad});
    return Var{nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulated at v; an empty matrix if nothing reached it.
  const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }

  template <class Expr>
  void accumulate(Var v, const Eigen::MatrixBase<Expr>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) {
      return;
    }
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Zero-initialized gradient buffer of v, for partial (block) updates.
  Matrix& grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }

  /// Seeds d(output)/d(output) = 1 and propagates to every recorded input.
  void backward(Var output) {
    Node& out = nodes_.at(output.id);
    if (out.value.rows() != 1 || out.value.cols() != 1) {
      throw ConfigError("Tape::backward: output must be a 1x1 scalar");
    }
    if (!out.requires_grad) {
      return;
    }
    out.grad = Matrix::Ones(1, 1);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward && n.grad.size() != 0) {
        n.backward(*this, Var{i}, n.grad);
      }
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

/// Recording backend. Every op appends one node to the tape; nodes that do
/// not depend on a parameter carry no backward closure.
class TapeOps {
 public:
  using Tensor = Var;

  static constexpr bool records = true;

  explicit TapeOps(Tape& tape) : tape_(&tape) {}

  Tape& tape() const { return *tape_; }
  const Matrix& value(Var v) const { return tape_->value(v); }

  Var constant(Matrix m) const { return tape_->push(std::move(m), false); }
  Var parameter(Matrix m) const { return tape_->push(std::move(m), true); }

  Var linear(Var x, Var w, Var b) const {
    return make(kernel::linear(value(x), value(w), value(b)), {x, w, b},
                [x, w, b](Tape& t, Var, const Matrix& g) {
                  if (t.requires_grad(x)) t.accumulate(x, g * t.value(w));
                  if (t.requires_grad(w)) t.accumulate(w, g.transpose() * t.value(x));
                  if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
                });
  }

  Var matmul_t(Var x, Var w) const {
    return make(kernel::matmul_t(value(x), value(w)), {x, w}, [x, w](Tape& t, Var, const Matrix& g) {
      if (t.requires_grad(x)) t.accumulate(x, g * t.value(w));
      if (t.requires_grad(w)) t.accumulate(w, g.transpose() * t.value(x));
    });
  }

  Var add(Var a, Var b) const {
    return make(value(a) + value(b), {a, b}, [a, b](Tape& t, Var, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) const {
    return make(value(a) - value(b), {a, b}, [a, b](Tape& t, Var, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, -g);
    });
  }

  Var axpy(Var a, double c, Var b) const {
    return make(value(a) + c * value(b), {a, b}, [a, c, b](Tape& t, Var, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, c * g);
    });
  }

  Var scale(Var a, double c) const {
    return make(c * value(a), {a}, [a, c](Tape& t, Var, const Matrix& g) { t.accumulate(a, c * g); });
  }

  Var add_scalar(Var a, double c) const {
    return make(value(a).array() + c, {a}, [a](Tape& t, Var, const Matrix& g) { t.accumulate(a, g); });
  }

  Var mul(Var a, Var b) const {
    return make(value(a).cwiseProduct(value(b)), {a, b}, [a, b](Tape& t, Var, const Matrix& g) {
      if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
      if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
    });
  }

  Var softplus(Var z, double beta) const {
    return make(kernel::softplus(value(z), beta), {z}, [z, beta](Tape& t, Var, const Matrix& g) {
      t.accumulate(z, g.cwiseProduct(kernel::sigmoid(t.value(z), beta)));
    });
  }

  /// softplus(z) and logistic(beta z); the softplus backward pass reuses the
  /// slope node instead of recomputing it.
  std::pair<Var, Var> softplus_slope(Var z, double beta) const {
    auto [value, slope] = kernel::softplus_slope(this->value(z), beta);
    if (!tape_->requires_grad(z)) {
      return {tape_->push(std::move(value), false), tape_->push(std::move(slope), false)};
    }
    const Var s = tape_->push(std::move(slope), true, [z, beta](Tape& t, Var self, const Matrix& g) {
      const Matrix& sv = t.value(self);
      t.accumulate(z, beta * g.cwiseProduct(sv.cwiseProduct((1.0 - sv.array()).matrix())));
    });
    const Var a = tape_->push(std::move(value), true, [z, s](Tape& t, Var, const Matrix& g) {
      t.accumulate(z, g.cwiseProduct(t.value(s)));
    });
    return {a, s};
  }

  Var sigmoid(Var z, double beta) const {
    return make(kernel::sigmoid(value(z), beta), {z}, [z, beta](Tape& t, Var self, const Matrix& g) {
      const Matrix& s = t.value(self);
      t.accumulate(z, beta * g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
    });
  }

  Var append_col(Var a, double v) const {
    return make(kernel::append_col(value(a), v), {a}, [a](Tape& t, Var, const Matrix& g) {
      t.accumulate(a, g.leftCols(t.value(a).cols()));
    });
  }

  Var col(Var a, Eigen::Index j) const {
    return make(value(a).col(j), {a}, [a, j](Tape& t, Var, const Matrix& g) {
      if (t.requires_grad(a)) t.grad_buffer(a).col(j) += g;
    });
  }

  Var row_sum(Var a) const {
    return make(kernel::row_sum(value(a)), {a}, [a](Tape& t, Var, const Matrix& g) {
      t.accumulate(a, g.replicate(1, t.value(a).cols()));
    });
  }

  Var sq_norm_rows(Var a) const {
    return make(kernel::sq_norm_rows(value(a)), {a}, [a](Tape& t, Var, const Matrix& g) {
      const Matrix& av = t.value(a);
      t.accumulate(a, 2.0 * av.cwiseProduct(g.replicate(1, av.cols())));
    });
  }

  Var mean(Var a) const {
    return make(kernel::mean(value(a)), {a}, [a](Tape& t, Var, const Matrix& g) {
      const Matrix& av = t.value(a);
      t.accumulate(a, Matrix::Constant(av.rows(), av.cols(), g(0, 0) / static_cast<double>(av.size())));
    });
  }

  Var sum(Var a) const {
    return make(kernel::sum(value(a)), {a}, [a](Tape& t, Var, const Matrix& g) {
      const Matrix& av = t.value(a);
      t.accumulate(a, Matrix::Constant(av.rows(), av.cols(), g(0, 0)));
    });
  }

 private:
  Var make(Matrix v, std::initializer_list<Var> inputs, Tape::Backward backward) const {
    bool needs = false;
    for (Var in : inputs) {
      needs = needs || tape_->requires_grad(in);
    }
    if (!needs) {
      return tape_->push(std::move(v), false);
    }
    return tape_->push(std::move(v), true, std::move(backward));
  }

  Tape* tape_;
};

}  // namespace jko::ad
