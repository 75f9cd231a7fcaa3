// jkoflow command-line tool: train, sample, eval, vlab, inspect.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "jkoflow/jkoflow.hpp"

namespace {

using namespace jko;

enum ExitCode { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4 };

int log_level() {
  const char* v = std::getenv("JKOFLOW_LOG_LEVEL");
  if (!v) return 1;
  const std::string s(v);
  if (s == "quiet") return 0;
  if (s == "debug") return 2;
  return 1;
}

std::string resolve_output(const std::string& dir) {
  const char* root = std::getenv("JKOFLOW_OUTPUT_ROOT");
  if (!root || std::filesystem::path(dir).is_absolute()) return dir;
  return (std::filesystem::path(root) / dir).string();
}

std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

std::vector<int> conditional_labels(const FlowNetwork& flow, Eigen::Index n, int fixed_label) {
  std::vector<int> labels;
  if (!flow.potential.conditional()) return labels;
  const int K = static_cast<int>(flow.potential.means.size());
  for (Eigen::Index i = 0; i < n; ++i) labels.push_back(fixed_label >= 0 ? fixed_label : static_cast<int>(i % K));
  return labels;
}

// ---------------------------------------------------------------------------
// train

struct TrainLogs {
  std::string dir;
  std::string loss = "round,block,epoch,kl_term,w2_term,total,ratio\n";
  std::string traj = "stage,iter,k,S_k,h_k\n";
  int round = 0;

  void flush() const {
    write_file_atomic(join(dir, "loss.csv"), loss);
    write_file_atomic(join(dir, "trajectory.csv"), traj);
  }
};

int cmd_train(const std::string& config_path, const std::string& output_override) {
  const RunConfig cfg = load_run_config(config_path);
  TrainLogs logs;
  logs.dir = resolve_output(output_override.empty() ? cfg.output_dir : output_override);
  std::filesystem::create_directories(logs.dir);
  write_file_atomic(join(logs.dir, "config.json"), run_config_to_json(cfg).dump(2) + "\n");
  const int verbosity = log_level();

  const DataSource source = make_source(cfg);
  auto on_epoch = [&](const EpochLog& e) {
    logs.loss += std::to_string(logs.round) + "," + std::to_string(e.block) + "," + std::to_string(e.epoch) + "," +
                 format_double(e.kl_term) + "," + format_double(e.w2_term) + "," + format_double(e.total) + "," +
                 format_double(e.ratio) + "\n";
    if (verbosity >= 2) {
      std::cerr << "round " << logs.round << " block " << e.block << " epoch " << e.epoch << " loss " << e.total
                << " ratio " << e.ratio << "\n";
    }
  };
  auto on_iter = [&](int stage, const TrajectoryStats& st) {
    for (std::size_t k = 0; k < st.S.size(); ++k) {
      logs.traj += std::to_string(stage) + "," + std::to_string(st.iteration) + "," + std::to_string(k) + "," +
                   format_double(st.S[k]) + "," + format_double(st.h[k]) + "\n";
    }
    if (verbosity >= 1) {
      std::cerr << "trajectory stage " << stage << " iter " << st.iteration << ": CV(S) = "
                << coefficient_of_variation(st.S) << "\n";
    }
    ++logs.round;
  };
  auto on_trained = [&](const TrainResult& result) {
    if (verbosity >= 1) {
      for (const auto& r : result.reports) {
        std::cerr << (r.free_block ? "free block " : "block ") << r.block << ": h = " << r.h
                  << ", loss = " << r.final_loss.total << ", ratio = " << r.termination_ratio << ", "
                  << r.wall_seconds << " s\n";
      }
      std::cerr << (result.terminated ? "terminated" : "unterminated") << " with "
                << result.flow.jko_block_count() << " blocks\n";
    }
    logs.round = 1;
  };

  FlowNetwork flow;
  try {
    flow = run_pipeline(cfg, source, {on_epoch, on_trained, on_iter}).flow;
  } catch (const NumericFault&) {
    logs.flush();
    throw;
  }
  logs.flush();
  save_checkpoint(flow, join(logs.dir, "flow.ckpt"));
  std::ostringstream summary;
  summary << "blocks = " << flow.jko_block_count() << "\n"
          << "free_block = " << (flow.has_free_block ? 1 : 0) << "\n"
          << "terminated = " << (flow.meta.terminated ? 1 : 0) << "\n"
          << "horizon = " << format_double(flow.horizon()) << "\n"
          << "config_hash = " << cfg.hash << "\n";
  write_file_atomic(join(logs.dir, "summary.txt"), summary.str());
  std::cout << summary.str() << "checkpoint = " << join(logs.dir, "flow.ckpt") << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// sample

int cmd_sample(const std::string& ckpt, long n, std::uint64_t seed, const std::string& out, const std::string& svg,
               int label) {
  if (n < 0) throw ConfigError("sample: --n must be >= 0");
  const FlowNetwork flow = load_checkpoint(ckpt);
  const auto labels = conditional_labels(flow, n, label);
  const Matrix x = sample(flow, n, seed, labels);
  write_samples_csv(out, x, labels);
  if (!svg.empty()) write_scatter_svg(svg, x, labels);
  std::cout << "samples = " << n << "\nout = " << out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& ckpt, const std::string& config_path, const std::string& data_path,
             std::vector<std::string> metrics, const std::string& out) {
  const FlowNetwork flow = load_checkpoint(ckpt);
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_run_config(config_path);
  if (metrics.empty()) metrics = cfg.eval.metrics;
  Dataset test;
  if (!data_path.empty()) {
    test = load_dataset_csv(data_path);
  } else if (!config_path.empty()) {
    test = test_data(cfg);
  } else {
    throw ConfigError("eval: provide --config or --data for the test set");
  }
  // metric ids: 1 nll (data units), 2 nll (standardized space), 3 mmd, 4 inversion
  std::string csv = "metric,value,threshold,pass\n";
  std::ostringstream text;
  for (const std::string& m : metrics) {
    if (m == "nll") {
      const Likelihoods ll = log_likelihoods(flow, test.x, test.labels);
      const double nll = -ll.data.mean();
      const double nll_model = -ll.model.mean();
      csv += "1," + format_double(nll) + ",nan,1\n";
      csv += "2," + format_double(nll_model) + ",nan,1\n";
      text << "nll = " << nll << "\nnll_model = " << nll_model << "\n";
    } else if (m == "mmd") {
      const MmdReport r = evaluate_generation(flow, test, cfg.eval.mmd);
      csv += "3," + format_double(r.mmd2) + "," + format_double(r.tau) + "," + (r.reject ? "0" : "1") + "\n";
      text << "mmd2 = " << r.mmd2 << "\nmmd_tau = " << r.tau << "\nmmd_bandwidth = " << r.bandwidth
           << "\nmmd_rule = " << to_string(r.rule) << "\nmmd_reject = " << (r.reject ? 1 : 0) << "\nmmd_N = " << r.N
           << "\nmmd_M = " << r.M << "\n";
    } else if (m == "inversion") {
      const Eigen::Index n = std::min<Eigen::Index>(test.size(), static_cast<Eigen::Index>(cfg.eval.n_inversion));
      const double err = inversion_error(flow, test.x.topRows(n));
      csv += "4," + format_double(err) + ",0.0001," + (err < 1e-4 ? "1" : "0") + "\n";
      text << "inversion_error = " << err << "\n";
    } else {
      throw ConfigError("eval: unknown metric '" + m + "' (expected nll, mmd or inversion)");
    }
  }
  if (!out.empty()) write_file_atomic(out, csv);
  std::cout << text.str();
  return kOk;
}

// ---------------------------------------------------------------------------
// vlab

int cmd_vlab(LabConfig lab, const std::vector<double>& x0, const std::string& out, const std::string& svg) {
  if (!x0.empty()) lab.x0 = Eigen::Map<const Vector>(x0.data(), static_cast<Eigen::Index>(x0.size()));
  const ProxTrajectory traj = prox_trajectory_lab(lab);
  std::string csv = "stage,iter,k,x1,x2,S_k,h_k\n";
  for (const LabIteration& it : traj.history) {
    for (std::size_t k = 0; k < it.points.size(); ++k) {
      csv += std::to_string(it.refined ? 1 : 0) + "," + std::to_string(it.iteration) + "," + std::to_string(k) + "," +
             format_double(it.points[k][0]) + "," + format_double(it.points[k].size() > 1 ? it.points[k][1] : 0.0) +
             "," + format_double(k ? it.S[k - 1] : 0.0) + "," + format_double(k ? it.h[k - 1] : 0.0) + "\n";
    }
  }
  const auto& e = traj.free_endpoint;
  csv += "2,0," + std::to_string(traj.points.size()) + "," + format_double(e[0]) + "," +
         format_double(e.size() > 1 ? e[1] : 0.0) + ",0,0\n";
  write_file_atomic(out, csv);
  if (!svg.empty()) {
    std::vector<Vector> path = traj.points;
    path.push_back(traj.free_endpoint);
    write_file_atomic(svg, scatter_svg(Matrix(0, 2), {}, path));
  }
  std::cout << "potential = " << traj.potential << "\npoints = " << traj.points.size()
            << "\nfree_endpoint = " << e.transpose() << "\nconverged = " << (traj.all_converged ? 1 : 0) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// inspect

int cmd_inspect(const std::string& ckpt) {
  const FlowNetwork flow = load_checkpoint(ckpt);
  std::cout << flow_metadata_json(flow).dump(2) << "\n";
  for (std::size_t k = 0; k < flow.blocks.size(); ++k) {
    const auto& b = flow.blocks[k];
    std::cout << "block " << k << (flow.has_free_block && k + 1 == flow.blocks.size() ? " (free)" : "") << ": ["
              << b.interval.t_start << ", " << b.interval.t_end << ")\n";
  }
  std::cout << "standardizer mean = " << flow.standardizer.mean.transpose()
            << "\nstandardizer scale = " << flow.standardizer.scale.transpose() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  jko::tune_allocator();
  CLI::App app{"Block-wise JKO normalizing flows"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train a flow from a JSON run configuration");
  std::string config_path, output_dir;
  train->add_option("--config,-c", config_path, "Run configuration file")->required()->check(CLI::ExistingFile);
  train->add_option("--output-dir,-o", output_dir, "Override output_dir from the configuration");

  auto* samp = app.add_subcommand("sample", "Generate samples from a checkpoint");
  std::string ckpt, out, svg;
  long n = 1000;
  std::uint64_t seed = 0;
  int label = -1;
  samp->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  samp->add_option("--n", n, "Number of samples");
  samp->add_option("--seed", seed, "Sampling seed");
  samp->add_option("--out", out, "Output CSV")->required();
  samp->add_option("--svg", svg, "Optional scatter plot");
  samp->add_option("--label", label, "Class for conditional flows (default: cycle through classes)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on test data");
  std::string data_path;
  std::vector<std::string> metrics;
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("--config", config_path, "Run configuration (test data and evaluation settings)");
  eval->add_option("--data", data_path, "Test data CSV (overrides the configuration's dataset)");
  eval->add_option("--metrics", metrics, "Subset of nll, mmd, inversion")->delimiter(',');
  eval->add_option("--out", out, "Report CSV");

  auto* vlab = app.add_subcommand("vlab", "Proximal-trajectory lab in R^d");
  LabConfig lab;
  std::vector<double> x0;
  bool refine_on = false, no_refine = false;
  vlab->add_option("--potential", lab.potential, "quadratic or mueller_brown")->required();
  vlab->add_option("--x0", x0, "Start point, comma separated")->delimiter(',');
  vlab->add_option("--L", lab.L, "Number of steps");
  vlab->add_option("--h0", lab.h0, "Initial step size");
  vlab->add_option("--rho", lab.rho, "Step growth factor");
  vlab->add_option("--hmax", lab.h_max, "Step size cap");
  vlab->add_option("--eta", lab.eta, "Reparameterization rate");
  vlab->add_option("--iters", lab.reparam_iters, "Reparameterization iterations before refinement");
  vlab->add_flag("--refine", refine_on, "Run the refinement stage (default for mueller_brown)");
  vlab->add_flag("--no-refine", no_refine, "Skip the refinement stage (default for quadratic)");
  vlab->add_option("--post-iters", lab.post_refine_iters, "Iterations after refinement");
  vlab->add_option("--lr", lab.inner.lr, "Inner gradient-descent step");
  vlab->add_option("--tol", lab.inner.tol, "Inner gradient-norm tolerance");
  vlab->add_option("--max-iters", lab.inner.max_iters, "Inner iteration cap");
  vlab->add_option("--out", out, "Trajectory CSV")->required();
  vlab->add_option("--svg", svg, "Optional trajectory plot");

  auto* inspect = app.add_subcommand("inspect", "Print checkpoint metadata");
  inspect->add_option("checkpoint", ckpt, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, output_dir);
    if (samp->parsed()) return cmd_sample(ckpt, n, seed, out, svg, label);
    if (eval->parsed()) return cmd_eval(ckpt, config_path, data_path, metrics, out);
    if (vlab->parsed()) {
      lab.refine = refine_on || (!no_refine && lab.potential != "quadratic");
      return cmd_vlab(lab, x0, out, svg);
    }
    if (inspect->parsed()) return cmd_inspect(ckpt);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
