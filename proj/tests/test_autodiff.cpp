#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "jkoflow/autodiff.hpp"

using jko::ad::Matrix;
using jko::ad::Tape;
using jko::ad::TapeOps;
using jko::ad::Var;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

// Scalar function of one parameter matrix, built on a fresh tape.
using Builder = std::function<Var(TapeOps&, Var)>;

double eval(const Builder& f, const Matrix& p) {
  Tape tape;
  TapeOps ops(tape);
  return tape.value(f(ops, ops.parameter(p)))(0, 0);
}

void expect_grad_matches_fd(const Builder& f, const Matrix& p, double tol = 1e-6) {
  Tape tape;
  TapeOps ops(tape);
  const Var x = ops.parameter(p);
  const Var out = f(ops, x);
  tape.backward(out);
  const Matrix& g = tape.grad(x);
  ASSERT_EQ(g.rows(), p.rows());
  ASSERT_EQ(g.cols(), p.cols());
  const double eps = 1e-6;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Matrix lo = p, hi = p;
    lo.data()[i] -= eps;
    hi.data()[i] += eps;
    const double fd = (eval(f, hi) - eval(f, lo)) / (2 * eps);
    EXPECT_NEAR(g.data()[i], fd, tol * (1.0 + std::abs(fd))) << "entry " << i;
  }
}

}  // namespace

TEST(Autodiff, LinearGradientsAllInputs) {
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(5, 3, rng), w = random_matrix(4, 3, rng), b = random_matrix(1, 4, rng);
  const Matrix probe = random_matrix(5, 4, rng);
  auto loss = [&](TapeOps& ops, Var y) { return ops.sum(ops.mul(y, ops.constant(probe))); };
  expect_grad_matches_fd([&](TapeOps& o, Var p) { return loss(o, o.linear(p, o.constant(w), o.constant(b))); }, x);
  expect_grad_matches_fd([&](TapeOps& o, Var p) { return loss(o, o.linear(o.constant(x), p, o.constant(b))); }, w);
  expect_grad_matches_fd([&](TapeOps& o, Var p) { return loss(o, o.linear(o.constant(x), o.constant(w), p)); }, b);
}

TEST(Autodiff, ElementwiseAndReductions) {
  std::mt19937_64 rng(2);
  const Matrix p = random_matrix(6, 3, rng, 0.3);
  const Matrix q = random_matrix(6, 3, rng);
  expect_grad_matches_fd([&](TapeOps& o, Var x) { return o.mean(o.softplus(x, 20.0)); }, p);
  expect_grad_matches_fd([&](TapeOps& o, Var x) { return o.sum(o.mul(o.sigmoid(x, 20.0), o.constant(q))); }, p);
  expect_grad_matches_fd(
      [&](TapeOps& o, Var x) {
        auto [a, s] = o.softplus_slope(x, 20.0);
        return o.sum(o.add(o.mul(a, o.constant(q)), o.mul(s, s)));
      },
      p);
  expect_grad_matches_fd([&](TapeOps& o, Var x) { return o.mean(o.sq_norm_rows(o.axpy(x, -0.7, o.constant(q)))); }, p);
  expect_grad_matches_fd([&](TapeOps& o, Var x) { return o.sum(o.row_sum(o.add_scalar(o.scale(o.mul(x, x), 3.0), 1.0))); },
                         p);
  expect_grad_matches_fd([&](TapeOps& o, Var x) { return o.sum(o.mul(o.col(x, 1), o.col(x, 2))); }, p);
  expect_grad_matches_fd([&](TapeOps& o, Var x) { return o.sum(o.sq_norm_rows(o.append_col(x, 0.5))); }, p);
  expect_grad_matches_fd([&](TapeOps& o, Var x) { return o.sum(o.sub(o.matmul_t(x, o.constant(q)), o.constant(Matrix::Ones(6, 6)))); },
                         p);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  std::mt19937_64 rng(3);
  const Matrix p = random_matrix(3, 2, rng);
  expect_grad_matches_fd(
      [&](TapeOps& o, Var x) {
        Var y = o.softplus(x, 5.0);
        return o.sum(o.mul(y, o.add(y, x)));
      },
      p);
}

TEST(Autodiff, TapeValuesMatchEagerBitwise) {
  std::mt19937_64 rng(4);
  const Matrix z = random_matrix(7, 5, rng, 0.2);
  jko::ad::EagerOps eager;
  Tape tape;
  TapeOps ops(tape);
  const Var v = ops.parameter(z);
  EXPECT_EQ(tape.value(ops.softplus(v, 20.0)), eager.softplus(z, 20.0));
  EXPECT_EQ(tape.value(ops.sigmoid(v, 20.0)), eager.sigmoid(z, 20.0));
  auto [a, s] = ops.softplus_slope(v, 20.0);
  EXPECT_EQ(tape.value(a), eager.softplus(z, 20.0));
  EXPECT_EQ(tape.value(s), eager.sigmoid(z, 20.0));
}

TEST(Autodiff, SoftplusKernelMatchesScalarReference) {
  // log1p-based reference, evaluated one entry at a time.
  Matrix z(1, 9);
  z << -50, -3, -0.2, -1e-8, 0, 1e-8, 0.2, 3, 50;
  for (double beta : {1.0, 20.0}) {
    const Matrix sp = jko::ad::kernel::softplus(z, beta);
    const Matrix sg = jko::ad::kernel::sigmoid(z, beta);
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double x = beta * z(0, j);
      const double ref = (std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)))) / beta;
      EXPECT_NEAR(sp(0, j), ref, 1e-15 * (1 + std::abs(ref)));
      EXPECT_NEAR(sg(0, j), 1.0 / (1.0 + std::exp(-x)), 1e-15);
    }
  }
}

TEST(Autodiff, SoftplusOddPartIsIdentity) {
  std::mt19937_64 rng(5);
  const Matrix z = random_matrix(4, 4, rng, 2.0);
  const Matrix d = jko::ad::kernel::softplus(z, 20.0) - jko::ad::kernel::softplus(-z, 20.0);
  EXPECT_LT((d - z).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Autodiff, BackwardRequiresScalar) {
  Tape tape;
  TapeOps ops(tape);
  Var v = ops.parameter(Matrix::Ones(2, 2));
  EXPECT_THROW(tape.backward(v), jko::ConfigError);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape tape;
  TapeOps ops(tape);
  Var c = ops.constant(Matrix::Ones(2, 2));
  Var p = ops.parameter(Matrix::Ones(2, 2));
  tape.backward(ops.sum(ops.mul(c, p)));
  EXPECT_EQ(tape.grad(c).size(), 0);
  EXPECT_EQ(tape.grad(p), Matrix::Ones(2, 2));
}
