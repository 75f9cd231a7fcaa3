// Acceptance checks, one per criterion: `acceptance --criterion N`.
// Prints a single "C<N> PASS|FAIL <name>: <details>" line and exits 0 on pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "jkoflow/jkoflow.hpp"

using namespace jko;

namespace {

struct Outcome {
  bool pass = false;
  std::string details;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

RunConfig quick_config(const std::string& json) { return parse_run_config(json); }

FlowNetwork quick_flow(const RunConfig& cfg) { return run_pipeline(cfg, make_source(cfg)).flow; }

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

ParamVector random_params(const ArchSpec& arch, std::mt19937_64& rng, double sd) {
  return ParamVector{random_matrix(static_cast<Eigen::Index>(param_count(arch)), 1, rng, sd).col(0)};
}

double rms(const Matrix& a, const Matrix& b) { return std::sqrt((a - b).rowwise().squaredNorm().mean()); }

// ---------------------------------------------------------------------------

Outcome c1_checkerboard() {
  const RunConfig cfg = load_run_config(std::string(JKOFLOW_CONFIGS) + "/checkerboard.json");
  Stopwatch clock;
  const PipelineResult run = run_pipeline(cfg, make_source(cfg));
  const double train_s = clock.seconds();
  const Dataset test = test_data(cfg);
  const double nll = -log_likelihoods(run.flow, test.x).data.mean();
  const MmdReport mmd = evaluate_generation(run.flow, test, cfg.eval.mmd);
  std::ostringstream s;
  s << "blocks=" << run.flow.jko_block_count() << " mmd2=" << mmd.mmd2 << " tau=" << mmd.tau
    << " ratio=" << mmd.mmd2 / mmd.tau << " (<= 2) nll=" << nll << " (<= 3.75) train_s=" << train_s
    << " total_s=" << clock.seconds();
  return {mmd.mmd2 <= 2.0 * mmd.tau && nll <= 3.75, s.str()};
}

Outcome c2_inversion() {
  bool pass = true;
  std::ostringstream s;
  for (const char* name : {"checkerboard", "two_moons", "two_circles", "rose", "olympic_rings", "fractal_tree"}) {
    const RunConfig cfg = quick_config(std::string(R"({"seed": 3, "dataset": {"name": ")") + name +
                                       R"("}, "arch": {"hidden_widths": [64, 64]},
        "train": {"L_max": 3, "epsilon": 1e-9, "epochs_per_block": 4, "samples_per_epoch": 2000},
        "trajectory": {"reparam_iters": 0}, "eval": {"n_test": 2000}})");
    FlowNetwork flow = quick_flow(cfg);
    const Matrix x = test_data(cfg).x;
    const double err3 = inversion_error(flow, x);
    flow.integrator.substeps = 5;
    const double err5 = inversion_error(flow, x);
    pass = pass && err3 < 1e-4;
    s << name << "=" << err3 << "/" << err5 << (err5 < 5e-5 ? "" : "(5-substep target missed)") << " ";
  }
  s << "(3/5 substeps, < 1e-4)";
  return {pass, s.str()};
}

Outcome c3_mueller_lab() {
  Stopwatch clock;
  const ProxTrajectory t = prox_trajectory_lab(LabConfig{});
  const double secs = clock.seconds();
  const Vector target = (Vector(2) << -1.911, 0.105).finished();
  const double dist = (t.free_endpoint - target).norm();
  std::ostringstream s;
  s << "endpoint=(" << t.free_endpoint[0] << ", " << t.free_endpoint[1] << ") distance=" << dist
    << " (< 0.05) seconds=" << secs << " (< 60) converged=" << t.all_converged;
  return {dist < 0.05 && secs < 60.0, s.str()};
}

Outcome c4_equalization() {
  LabConfig lab;
  lab.potential = "quadratic";
  lab.L = 8;
  lab.h0 = 0.2;
  lab.rho = 1.0;
  lab.h_max = 5.0;
  lab.refine = false;
  lab.reparam_iters = 20;
  lab.inner.lr = 0.05;
  lab.inner.tol = 1e-10;
  const ProxTrajectory t = prox_trajectory_lab(lab);
  const double lab_before = coefficient_of_variation(t.history.front().S);
  const double lab_after = coefficient_of_variation(t.history.back().S);

  const RunConfig cfg = quick_config(R"({"seed": 5,
      "dataset": {"name": "gaussian", "mean": [2.0], "std": 0.5, "n_samples": 5000},
      "arch": {"hidden_widths": [32, 32]},
      "train": {"h0": 0.5, "rho": 1, "h_max": 5, "epsilon": 1e-9, "L_max": 4, "epochs_per_block": 10,
                "samples_per_epoch": 5000, "standardize": false},
      "trajectory": {"eta": 0.5, "reparam_iters": 10, "cv_tol": 0.1, "retrain_epochs": 5, "movement_batch": 5000}})");
  const PipelineResult run = run_pipeline(cfg, make_source(cfg));
  const double flow_before = coefficient_of_variation(run.reparam_history.front().S);
  const double flow_after = coefficient_of_variation(run.reparam_history.back().S);

  std::ostringstream s;
  s << "lab CV " << lab_before << " -> " << lab_after << "; flow CV " << flow_before << " -> " << flow_after
    << " after " << run.reparam_history.size() - 1 << " rounds (< 0.1 and decreasing)";
  const bool pass = lab_after < 0.1 && lab_after < lab_before && flow_after < 0.1 && flow_after < flow_before;
  return {pass, s.str()};
}

Outcome c5_ou_oracle() {
  // Pushforward variance after one step of size 0.1 from N(0, 4).
  const RunConfig var_cfg = quick_config(R"({"seed": 11,
      "dataset": {"name": "gaussian", "dim": 1, "std": 2.0},
      "arch": {"hidden_widths": [64, 64]},
      "train": {"h0": 0.1, "rho": 1, "h_max": 0.1, "L_max": 1, "epochs_per_block": 60, "samples_per_epoch": 5000,
                "standardize": false},
      "trajectory": {"reparam_iters": 0}})");
  const FlowNetwork flow = quick_flow(var_cfg);
  std::mt19937_64 rng(derive_seed(11, 1));
  const Matrix x = random_matrix(40000, 1, rng, 2.0);
  const Matrix z = encode(flow, x).z;
  const double mean = z.mean();
  const double var = (z.array() - mean).square().mean();
  const double target = 1.0 + 3.0 * std::exp(-0.2);
  const bool var_ok = std::abs(var / target - 1.0) <= 0.05;

  // Score-difference check: the block's mean velocity (T(x) - x) / h against
  // s_q - s_p for p = N(1, 4). The loss sees only the endpoint map T, so
  // this is the identified quantity.
  const RunConfig score_cfg = quick_config(R"({"seed": 12,
      "dataset": {"name": "gaussian", "dim": 1, "mean": [1.0], "std": 2.0, "n_samples": 5000},
      "arch": {"hidden_widths": [64, 64]},
      "train": {"h0": 0.05, "rho": 1, "h_max": 0.05, "L_max": 1, "epochs_per_block": 300, "samples_per_epoch": 5000,
                "batch_size": 1000, "learning_rate": 0.0003, "standardize": false},
      "trajectory": {"reparam_iters": 0}})");
  const FlowNetwork sflow = quick_flow(score_cfg);
  const ResidualVectorField& b = sflow.blocks.front();
  std::mt19937_64 batch_rng(derive_seed(12, 1));
  const Matrix xs = generate(score_cfg.dataset, 5000, batch_rng).x;
  const double h = b.interval.length();
  const Matrix f = (push_block(b, xs, sflow.integrator) - xs) / h;
  const Matrix want = -xs.array() + (xs.array() - 1.0) / 4.0;
  const double mae = (f - want).cwiseAbs().mean();
  // Reference: the exact JKO step maps N(1, 4) to N(1 / (1 + h), s^2) with
  // s (1 + 1 / h) - 1 / s = 2 / h.
  const double c = 1.0 + 1.0 / h;
  const double s1 = (2.0 / h + std::sqrt(4.0 / (h * h) + 4.0 * c)) / (2.0 * c);
  const Matrix t_exact = (1.0 / (1.0 + h)) + (s1 / 2.0) * (xs.array() - 1.0);
  const double mae_exact = ((t_exact - xs) / h - want).cwiseAbs().mean();

  std::ostringstream s;
  s << "variance=" << var << " target=" << target << " rel=" << var / target - 1.0 << " (|rel| <= 0.05); score MAE="
    << mae << " (< 0.1; exact JKO step gives " << mae_exact << ")";
  return {var_ok && mae < 0.1, s.str()};
}

double max_rel_grad_error(int trial, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim_d(1, 3), width_d(3, 8), layers_d(1, 2), rows_d(3, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ArchSpec arch;
  arch.input_dim = dim_d(rng);
  arch.hidden_widths.assign(static_cast<std::size_t>(layers_d(rng)), 0);
  for (int& w : arch.hidden_widths) w = width_d(rng);
  arch.beta = 1.0 + 19.0 * u(rng);
  arch.time_input = u(rng) < 0.8;
  const double t0 = 2.0 * u(rng);
  ResidualVectorField block{arch, random_params(arch, rng, 0.4), {t0, t0 + 0.1 + u(rng)}};

  IntegratorConfig ic;
  ic.substeps = 1 + trial % 4;
  ic.divergence = u(rng) < 0.5 ? DivergenceMode::exact : DivergenceMode::hutchinson_fd;
  ic.n_probes = 1 + trial % 2;
  const bool with_w2 = u(rng) < 0.7;
  const Matrix x0 = random_matrix(rows_d(rng), arch.input_dim, rng);
  Potential pot = Potential::standard();
  std::vector<int> labels;
  if (arch.input_dim == 2 && u(rng) < 0.5) {
    pot = Potential::mixture({(Vector(2) << 2, 0).finished(), (Vector(2) << -2, 0).finished()});
    for (Eigen::Index i = 0; i < x0.rows(); ++i) labels.push_back(static_cast<int>(i % 2));
  }
  const ProbeStream probes{static_cast<std::uint64_t>(trial), 17};

  auto loss = [&](const ParamVector& p) {
    ResidualVectorField b = block;
    b.params = p;
    return with_w2 ? block_loss(b, x0, labels, pot, ic, probes, trial % 3).total
                   : free_block_loss(b, x0, labels, pot, ic, probes, trial % 3);
  };
  const Vector g = block_loss_and_grad(block, x0, labels, pot, ic, probes, trial % 3, with_w2).grad.values;
  Vector fd(g.size());
  const double step = 1e-5;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    ParamVector plus = block.params, minus = block.params;
    plus.values[i] += step;
    minus.values[i] -= step;
    fd[i] = (loss(plus) - loss(minus)) / (2.0 * step);
  }
  return (g - fd).norm() / std::max({g.norm(), fd.norm(), 1e-12});
}

Outcome c6_gradients() {
  std::mt19937_64 rng(2024);
  int grad_ok = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double err = max_rel_grad_error(trial, rng);
    worst = std::max(worst, err);
    if (err < 1e-4) ++grad_ok;
  }

  // Hutchinson against the exact trace: per-row mean of 10^4 single-probe
  // estimates within 3 standard errors.
  int rows_ok = 0, rows = 0;
  double worst_z = 0.0;
  for (int net = 0; net < 3; ++net) {
    const ArchSpec arch{3 + net, {16, 16}, 5.0, true};
    const ParamVector p = random_params(arch, rng, 0.6);
    const auto field = eager_field(arch, p);
    const Matrix x = random_matrix(4, arch.input_dim, rng);
    const Vector exact = divergence_exact(field, x, 0.3);
    IntegratorConfig ic;
    ic.n_probes = 1;
    const int n = 10000;
    Matrix est(x.rows(), n);
    for (int j = 0; j < n; ++j) {
      est.col(j) = divergence_hutchinson_fd(field, x, 0.3, ic, ProbeStream{derive_seed(net, j), 0});
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = est.row(r).mean();
      const double sd = std::sqrt((est.row(r).array() - mean).square().sum() / (n - 1));
      const double z = std::abs(mean - exact[r]) / (sd / std::sqrt(static_cast<double>(n)));
      worst_z = std::max(worst_z, z);
      ++rows;
      if (z <= 3.0) ++rows_ok;
    }
  }

  // Diagonal linear field: every single probe returns the trace.
  const ArchSpec lin{3, {6, 6}, 20.0, true};
  const Matrix a = Vector((Vector(3) << 0.5, -1.25, 2.0).finished()).asDiagonal();
  const auto lfield = eager_field(lin, implant_linear_field(lin, a));
  const Matrix xl = random_matrix(8, 3, rng);
  double diag_err = 0.0;
  for (int j = 0; j < 50; ++j) {
    const Vector d = divergence_hutchinson_fd(lfield, xl, 0.0, IntegratorConfig{}, ProbeStream{77, 8ULL * j});
    diag_err = std::max(diag_err, (d.array() - a.trace()).abs().maxCoeff());
  }

  std::ostringstream s;
  s << "fd " << grad_ok << "/50 (worst rel " << worst << ", < 1e-4); hutchinson " << rows_ok << "/" << rows
    << " rows within 3 SE (worst z " << worst_z << "); diagonal per-probe err " << diag_err << " (< 1e-8)";
  return {grad_ok == 50 && rows_ok == rows && diag_err < 1e-8, s.str()};
}

Outcome c7_normalization() {
  const RunConfig cfg = quick_config(R"({"seed": 4, "dataset": {"name": "two_moons"},
      "arch": {"hidden_widths": [64, 64]},
      "train": {"L_max": 2, "epsilon": 1e-9, "epochs_per_block": 5, "samples_per_epoch": 4000},
      "trajectory": {"reparam_iters": 0}})");
  const FlowNetwork flow = quick_flow(cfg);
  const int n = 241;
  const double lo_x = -5.0, lo_y = -5.0, span = 11.0, dx = span / (n - 1);
  Matrix grid(n * n, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) grid.row(i * n + j) << lo_x + i * dx, lo_y + j * dx;
  }
  const Vector p = log_likelihood(flow, grid).array().exp();
  double integral = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    for (int j = 0; j < n; ++j) {
      const double wj = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      integral += wi * wj * p[i * n + j];
    }
  }
  integral *= dx * dx;

  // x -> x / 2: a 1-D block carrying f(x) = -ln2 x over unit time.
  const ArchSpec arch{1, {4}, 20.0, true};
  IntegratorConfig ic;
  ic.substeps = 40;
  FlowNetwork half = empty_flow(arch, Standardizer::identity(1), Potential::standard(), ic);
  half.blocks.push_back({arch, implant_linear_field(arch, Matrix::Constant(1, 1, -std::log(2.0))), {0.0, 1.0}});
  const double got = log_likelihood(half, Matrix::Constant(1, 1, 2.0))[0];
  const double want = -0.5 - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(2.0);

  std::ostringstream s;
  s << "grid integral=" << integral << " (1 +- 0.02); halving map " << got << " vs " << want << " err "
    << std::abs(got - want) << " (< 1e-5)";
  return {std::abs(integral - 1.0) <= 0.02 && std::abs(got - want) < 1e-5, s.str()};
}

Outcome c8_mmd() {
  std::mt19937_64 rng(8);
  double min_mmd = 1e300, max_asym = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Matrix X = random_matrix(30 + k, 2, rng);
    const Matrix Y = random_matrix(25 + 2 * k, 2, rng, 1.0 + 0.05 * k);
    const double h = 0.2 + 0.1 * k;
    const double xy = mmd2(X, Y, h), yx = mmd2(Y, X, h);
    min_mmd = std::min(min_mmd, xy);
    max_asym = std::max(max_asym, std::abs(xy - yx));
  }

  MmdConfig cfg;
  cfg.n_bootstrap = 1000;
  cfg.alpha = 0.05;
  const int trials = 200;
  int rejections = 0;
  for (int t = 0; t < trials; ++t) {
    cfg.seed = derive_seed(0x6e756c6cULL, static_cast<std::uint64_t>(t));
    const Matrix X = random_matrix(200, 2, rng);
    const Matrix Y = random_matrix(200, 2, rng);
    if (mmd_test(X, Y, cfg).reject) ++rejections;
  }
  const double rate = static_cast<double>(rejections) / trials;
  std::ostringstream s;
  s << "min mmd2=" << min_mmd << " (>= 0) max |mmd2(X,Y)-mmd2(Y,X)|=" << max_asym << "; null rejection rate "
    << rate << " over " << trials << " trials (in [0.03, 0.07])";
  return {min_mmd >= 0.0 && max_asym <= 1e-12 && rate >= 0.03 && rate <= 0.07, s.str()};
}

Outcome c9_termination() {
  int ok = 0;
  std::ostringstream s;
  s << "blocks per seed:";
  for (int seed = 1; seed <= 10; ++seed) {
    const RunConfig cfg = quick_config(R"({"seed": )" + std::to_string(seed) + R"(,
        "dataset": {"name": "gaussian", "dim": 2},
        "train": {"epochs_per_block": 10, "samples_per_epoch": 5000},
        "trajectory": {"reparam_iters": 0}})");
    const TrainResult r = train_flow(make_source(cfg), cfg.arch, cfg.train, cfg.potential);
    const std::size_t L = r.flow.jko_block_count();
    s << " " << L << (r.terminated ? "" : "*");
    if (r.terminated && L <= 2) ++ok;
  }
  s << " (" << ok << "/10 with L <= 2; need >= 9)";
  return {ok >= 9, s.str()};
}

Outcome c10_refinement() {
  const RunConfig cfg = quick_config(R"({"seed": 6, "dataset": {"name": "two_moons"},
      "arch": {"hidden_widths": [64, 64]},
      "train": {"L_max": 3, "epsilon": 1e-9, "epochs_per_block": 4, "samples_per_epoch": 3000, "use_free_block": true},
      "trajectory": {"reparam_iters": 0}, "eval": {"n_test": 3000}})");
  const FlowNetwork flow = quick_flow(cfg);
  const FlowNetwork fine = split_blocks(flow);
  const Matrix x = flow.standardizer.apply(test_data(cfg).x);
  const double err = rms(encode_model(flow, x, false).z, encode_model(fine, x, false).z);

  const std::vector<double> h = flow.step_sizes();
  const std::vector<double> hf = refine_steps(h);
  bool pairs_exact = hf.size() == 2 * h.size();
  for (std::size_t k = 0; pairs_exact && k < h.size(); ++k) pairs_exact = hf[2 * k] + hf[2 * k + 1] == h[k];
  const bool horizon_exact = fine.horizon() == flow.horizon();
  const bool free_kept = fine.has_free_block && fine.blocks.back().params == flow.blocks.back().params;

  std::ostringstream s;
  s << "blocks " << flow.jko_block_count() << " -> " << fine.jko_block_count() << "; pushforward RMS=" << err
    << " (< 1e-3); pairwise sums exact=" << pairs_exact << " horizon exact=" << horizon_exact
    << " free block kept=" << free_kept;
  return {err < 1e-3 && pairs_exact && horizon_exact && free_kept, s.str()};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

const Criterion kCriteria[] = {
    {"checkerboard generation", c1_checkerboard},  {"inversion error", c2_inversion},
    {"Mueller lab endpoint", c3_mueller_lab},      {"arclength equalization", c4_equalization},
    {"OU oracle", c5_ou_oracle},                   {"gradient suite", c6_gradients},
    {"likelihood normalization", c7_normalization}, {"MMD machinery", c8_mmd},
    {"termination behavior", c9_termination},      {"refinement consistency", c10_refinement},
};

}  // namespace

int main(int argc, char** argv) {
  int first = 1, last = 10;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--criterion" && i + 1 < argc) first = last = std::atoi(argv[++i]);
  }
  if (first < 1 || last > 10) {
    std::cerr << "usage: acceptance [--criterion 1..10]\n";
    return 2;
  }
  bool all = true;
  for (int c = first; c <= last; ++c) {
    const Criterion& k = kCriteria[c - 1];
    Outcome o;
    try {
      o = k.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << "C" << c << " " << (o.pass ? "PASS" : "FAIL") << " " << k.name << ": " << o.details << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
