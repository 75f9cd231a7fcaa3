#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "jkoflow/flow.hpp"

using namespace jko;

namespace {

ParamVector random_params(const ArchSpec& arch, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  ParamVector p;
  p.values = Vector(static_cast<Eigen::Index>(param_count(arch)));
  for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values[i] = g(rng);
  return p;
}

FlowNetwork linear_flow_1d(double rate, int substeps) {
  const ArchSpec arch{1, {4, 4}, 20.0, true};
  IntegratorConfig ic;
  ic.substeps = substeps;
  FlowNetwork flow = empty_flow(arch, Standardizer::identity(1), Potential::standard(), ic);
  flow.blocks.push_back({arch, implant_linear_field(arch, -rate * Matrix::Identity(1, 1)), {0, 1}});
  return flow;
}

FlowNetwork random_flow(std::uint64_t seed, double scale, int blocks) {
  const ArchSpec arch{2, {16, 16}, 20.0, true};
  Standardizer st{(Vector(2) << 0.5, -1.0).finished(), (Vector(2) << 2.0, 0.5).finished(), 100};
  FlowNetwork flow = empty_flow(arch, st);
  double t = 0.0;
  for (int k = 0; k < blocks; ++k) {
    flow.blocks.push_back({arch, random_params(arch, seed + static_cast<std::uint64_t>(k), scale), {t, t + 0.8}});
    t += 0.8;
  }
  flow.meta.seed = seed;
  return flow;
}

}  // namespace

TEST(Flow, EmptyFlowIsStandardization) {
  Standardizer st{(Vector(2) << 1.0, 2.0).finished(), (Vector(2) << 2.0, 4.0).finished(), 10};
  const FlowNetwork flow = empty_flow(ArchSpec{}, st);
  Matrix x(1, 2);
  x << 3.0, 6.0;
  const Encoded e = encode(flow, x);
  EXPECT_EQ(e.z, (Matrix(1, 2) << 1.0, 1.0).finished());
  EXPECT_EQ(e.ell[0], 0.0);
  EXPECT_EQ(decode(flow, e.z), x);
  EXPECT_EQ(flow.horizon(), 0.0);
}

TEST(Flow, LinearBlockEncodesAnalytically) {
  const FlowNetwork flow = linear_flow_1d(1.0, 20);
  const Encoded e = encode(flow, Matrix::Ones(1, 1));
  const double z = -1.0 / 20;
  EXPECT_NEAR(e.z(0, 0), std::pow(1 + z + z * z / 2 + z * z * z / 6 + z * z * z * z / 24, 20), 1e-15);
  EXPECT_NEAR(e.z(0, 0), std::exp(-1.0), 1e-7);
  EXPECT_NEAR(e.ell[0], -1.0, 1e-14);
}

TEST(Flow, StandardNormalLogDensityAtOrigin) {
  const FlowNetwork flow = empty_flow(ArchSpec{}, Standardizer::identity(2));
  EXPECT_NEAR(log_likelihood(flow, Matrix::Zero(1, 2))[0], -std::log(2 * std::numbers::pi), 1e-15);
}

TEST(Flow, HalvingMapMatchesChangeOfVariables) {
  // z = x / 2, so log p(x) = log phi(x / 2) - log 2; at x = 2 that is
  // log phi(1) - log 2.
  const FlowNetwork flow = linear_flow_1d(std::log(2.0), 40);
  const double want = -0.5 - 0.5 * std::log(2 * std::numbers::pi) - std::log(2.0);
  EXPECT_NEAR(want, -2.112086, 1e-6);
  EXPECT_NEAR(log_likelihood(flow, Matrix::Constant(1, 1, 2.0))[0], want, 1e-5);
}

TEST(Flow, StandardizerJacobianEntersDataLikelihood) {
  FlowNetwork flow = random_flow(3, 0.3, 2);
  const Matrix x = Matrix::Random(10, 2);
  const Likelihoods ll = log_likelihoods(flow, x);
  const double log_det = -std::log(2.0) - std::log(0.5);
  EXPECT_LT((ll.data.array() - ll.model.array() - log_det).abs().maxCoeff(), 1e-14);
  EXPECT_NEAR(nll_mean(flow, x), -ll.data.mean(), 1e-14);
}

TEST(Flow, RoundTripInverts) {
  const FlowNetwork flow = random_flow(7, 0.3, 3);
  const Matrix x = 2.0 * Matrix::Random(300, 2);
  const Matrix back = decode(flow, encode(flow, x).z);
  EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT(inversion_error(flow, x), 1e-8);
  EXPECT_EQ(inversion_error(flow, Matrix(0, 2)), 0.0);
}

TEST(Flow, LikelihoodIntegratesToOne) {
  FlowNetwork flow = random_flow(11, 0.3, 2);
  flow.standardizer = Standardizer::identity(2);
  const int n = 161;
  const double lo = -8.0, step = 16.0 / (n - 1);
  Matrix grid(n * n, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) grid.row(i * n + j) << lo + i * step, lo + j * step;
  }
  const Vector p = log_likelihood(flow, grid).array().exp();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      const double wj = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      total += wi * wj * p[i * n + j];
    }
  }
  EXPECT_NEAR(total * step * step, 1.0, 0.02);
}

TEST(Flow, EncodingIsChunkInvariant) {
  FlowNetwork flow = random_flow(13, 0.3, 2);
  flow.integrator.divergence = DivergenceMode::hutchinson_fd;
  const Matrix x = Matrix::Random(5000, 2);
  const Encoded all = encode(flow, x);
  const Encoded head = encode(flow, x.topRows(2048));
  EXPECT_EQ(all.ell.head(2048), head.ell);
}

TEST(Flow, SamplingIsSeeded) {
  const FlowNetwork flow = random_flow(5, 0.3, 1);
  EXPECT_EQ(sample(flow, 20, 3), sample(flow, 20, 3));
  EXPECT_NE(sample(flow, 20, 3), sample(flow, 20, 4));
  EXPECT_EQ(sample(flow, 0, 3).rows(), 0);
}

TEST(Flow, MixturePriorUsesLabels) {
  const Potential pot = Potential::mixture({(Vector(2) << 2, 0).finished(), (Vector(2) << -2, 0).finished()});
  Matrix z(2, 2);
  z << 2, 0, -2, 0;
  const std::vector<int> labels{0, 1};
  const Vector lp = log_prior(pot, z, labels);
  EXPECT_NEAR(lp[0], -std::log(2 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(lp[1], -std::log(2 * std::numbers::pi), 1e-15);
  const Matrix codes = sample_codes(pot, 4000, 2, 1, std::vector<int>(4000, 1));
  EXPECT_NEAR(codes.col(0).mean(), -2.0, 0.1);
}

TEST(Flow, DimensionMismatchRejected) {
  const FlowNetwork flow = random_flow(1, 0.3, 1);
  EXPECT_THROW(encode(flow, Matrix::Zero(2, 3)), ConfigError);
  EXPECT_THROW(nll_mean(flow, Matrix(0, 2)), ConfigError);
}

TEST(Flow, ValidateDetectsGaps) {
  FlowNetwork flow = random_flow(1, 0.3, 2);
  EXPECT_NO_THROW(flow.validate());
  flow.blocks[1].interval.t_start += 0.1;
  EXPECT_THROW(flow.validate(), ConfigError);
  set_intervals(flow, {0.5, 0.25});
  EXPECT_NO_THROW(flow.validate());
  EXPECT_DOUBLE_EQ(flow.horizon(), 0.75);
}
