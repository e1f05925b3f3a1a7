#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>

#include "pbam/errors.hpp"
#include "pbam/harness.hpp"

namespace pbam {

namespace {

namespace fs = std::filesystem;

// Input paths inside a config file resolve relative to the file's directory;
// output paths resolve relative to the working directory.
std::string resolve_near(const std::string& config_path, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(config_path).parent_path() / p).string();
}

void resolve_target_paths(const std::string& config_path, TargetSpec& t) {
  t.counts_file = resolve_near(config_path, t.counts_file);
  t.events_file = resolve_near(config_path, t.events_file);
}

LowRankGaussian dense_to_lowrank(const DenseGaussian& g) {
  const Index d = g.mu.size();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g.sigma);
  if (es.info() != Eigen::Success)
    throw numeric_error("inspect/save: eigendecomposition of dense covariance failed");
  const double floor = LowRankGaussian::psi_floor;
  const VectorXd w = (es.eigenvalues().array() - floor).max(0.0).sqrt();
  return LowRankGaussian(g.mu, es.eigenvectors() * w.asDiagonal(),
                         VectorXd::Constant(d, floor));
}

int cmd_fit(const std::string& config_path) {
  const KvConfig kv = KvConfig::parse_file(config_path);
  RunConfig rc = RunConfig::from_config(kv);
  resolve_target_paths(config_path, rc.target);
  if (rc.output_dir.empty())
    throw config_error("fit: [run] output_dir is required");
  const TargetBundle bundle = make_target(rc.target);

  fs::create_directories(rc.output_dir);
  const std::string trace_path = (fs::path(rc.output_dir) / "trace.csv").string();
  CsvTraceSink sink(trace_path);
  const FitOutcome out = run_fit(rc, bundle, &sink);

  const std::string params_path = (fs::path(rc.output_dir) / "params.bin").string();
  if (out.q) {
    save(*out.q, params_path);
  } else if (out.q_dense) {
    save(dense_to_lowrank(*out.q_dense), params_path);
  }

  std::cout << "wrote " << trace_path << " and " << params_path << "\n";
  if (!out.trace.records.empty()) {
    const TraceRecord& last = out.trace.records.back();
    std::cout << "final " << last.metric_name << " = " << last.metric_value
              << " after " << last.grad_evals << " gradient evaluations ("
              << last.wall_seconds << " s)";
    if (out.trace.diverged) std::cout << " [diverged]";
    std::cout << "\n";
  }
  return 0;
}

int cmd_scale(const std::string& config_path) {
  const KvConfig kv = KvConfig::parse_file(config_path);
  const auto to_index = [](const std::vector<long>& v) {
    return std::vector<Index>(v.begin(), v.end());
  };
  const auto dims = to_index(kv.get_long_list("scale", "dims"));
  const auto ranks = to_index(kv.get_long_list("scale", "ranks"));
  const auto batches = to_index(kv.get_long_list("scale", "batches"));
  const int reps = static_cast<int>(kv.get_long_or("scale", "reps", 5));
  const std::uint64_t seed = kv.has("scale", "seed") ? kv.get_u64("scale", "seed") : 0;
  const std::string out = kv.get_string("scale", "output");

  const ScaleTable table = scaling_benchmark(dims, ranks, batches, reps, seed);
  const std::string slopes_out =
      kv.get_string_or("scale", "slopes_output", out + ".slopes.csv");
  if (!fs::path(out).parent_path().empty())
    fs::create_directories(fs::path(out).parent_path());
  write_scale_csv(table, out, slopes_out);

  for (const SlopeFit& s : table.slopes)
    std::printf("%-4s vs %-6s log-log slope %.3f\n", s.step.c_str(),
                s.axis.c_str(), s.slope);
  std::cout << "wrote " << out << " and " << slopes_out << "\n";
  return 0;
}

int cmd_compare(const std::string& config_path) {
  const KvConfig kv = KvConfig::parse_file(config_path);
  const std::vector<std::string> names = kv.get_string_list("compare", "runs");
  if (names.empty()) throw config_error("compare: runs list is empty");
  const std::uint64_t master = kv.get_u64("compare", "seed");
  const std::string out_path = kv.get_string("compare", "output");

  if (!fs::path(out_path).parent_path().empty())
    fs::create_directories(fs::path(out_path).parent_path());
  std::ofstream os(out_path);
  if (!os) throw config_error("cannot open: " + out_path);
  os << "run," << trace_csv_header() << '\n';

  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string section = "run " + names[i];
    const std::string sub_path =
        resolve_near(config_path, kv.get_string(section, "config"));
    const KvConfig sub = KvConfig::parse_file(sub_path);
    RunConfig rc = RunConfig::from_config(sub);
    resolve_target_paths(sub_path, rc.target);
    rc.seed = derive_seed(master, i);  // documented child-seed rule
    const TargetBundle bundle = make_target(rc.target);
    const FitOutcome res = run_fit(rc, bundle, nullptr);
    for (const TraceRecord& r : res.trace.records)
      os << names[i] << ',' << trace_csv_row(r) << '\n';
    os.flush();
    std::cout << names[i] << ": " << res.trace.records.size() << " records";
    if (!res.trace.records.empty())
      std::cout << ", final " << res.trace.records.back().metric_name << " = "
                << res.trace.records.back().metric_value;
    std::cout << "\n";
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_inspect(const std::string& params_path) {
  const LowRankGaussian q = load(params_path);
  std::printf("D = %ld\n", static_cast<long>(q.dim()));
  std::printf("K = %ld\n", static_cast<long>(q.rank()));
  std::printf("mu:     mean % .6g  min % .6g  max % .6g\n", q.mu().mean(),
              q.mu().minCoeff(), q.mu().maxCoeff());
  std::printf("psi:    mean % .6g  min % .6g  max % .6g\n", q.psi().mean(),
              q.psi().minCoeff(), q.psi().maxCoeff());
  std::printf("lambda: frobenius %.6g\n", q.lambda().norm());
  std::printf("logdet(Sigma) = %.6g\n", logdet(q));
  std::printf("entropy = %.6g\n", entropy(q));
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"score-based variational inference with low-rank plus diagonal "
               "Gaussians"};
  app.require_subcommand(1);

  std::string fit_cfg, scale_cfg, compare_cfg, inspect_path;
  CLI::App* fit = app.add_subcommand("fit", "run one experiment from a config");
  fit->add_option("config", fit_cfg, "config file")->required();
  CLI::App* scale = app.add_subcommand("scale", "run the step-timing benchmark");
  scale->add_option("config", scale_cfg, "config file")->required();
  CLI::App* compare =
      app.add_subcommand("compare", "run a list of configs and merge traces");
  compare->add_option("config", compare_cfg, "config file")->required();
  CLI::App* inspect =
      app.add_subcommand("inspect", "print a summary of a parameter file");
  inspect->add_option("params", inspect_path, "params.bin file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (fit->parsed()) return cmd_fit(fit_cfg);
    if (scale->parsed()) return cmd_scale(scale_cfg);
    if (compare->parsed()) return cmd_compare(compare_cfg);
    if (inspect->parsed()) return cmd_inspect(inspect_path);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const numeric_error& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace pbam
