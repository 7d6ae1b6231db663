// corrostop: simulate a corroding structure, quantize its jump chain,
// solve the finite-horizon stopping problem and evaluate the resulting
// maintenance rule.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdmp/config.hpp"
#include "pdmp/errors.hpp"
#include "pdmp/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> runs;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "configuration file (key = value)");
  cmd->add_option("--seed", flags.seed, "master seed override");
  cmd->add_option("--out", flags.out_dir, "output directory override");
  cmd->add_option("--k", flags.k, "quantization grid size override");
  cmd->add_option("--runs", flags.runs, "run count override");
  cmd->add_flag("--quiet", flags.quiet, "suppress progress output");
}

pdmp::RunConfig make_config(const CommonFlags& flags) {
  pdmp::RunConfig cfg;
  if (!flags.config_path.empty()) cfg = pdmp::load_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out_dir) cfg.output_dir = *flags.out_dir;
  if (flags.k) cfg.grid_points = *flags.k;
  if (flags.runs) cfg.evaluate_runs = *flags.runs;
  cfg.quiet = flags.quiet;
  cfg.validate();
  return cfg;
}

void progress(const pdmp::RunConfig& cfg, const std::string& line) {
  if (!cfg.quiet) std::cout << line << "\n";
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    ks.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (ks.empty()) throw pdmp::ConfigError("pipeline: --k-list is empty");
  return ks;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"corrostop: quasi-optimal maintenance times for a corroding structure"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string k_list_text;

  CLI::App* simulate = app.add_subcommand(
      "simulate", "simulate trajectories and report the threshold-exceedance fraction");
  CLI::App* scales = app.add_subcommand(
      "scales", "estimate per-coordinate scales of the embedded chain from a pilot run");
  CLI::App* train =
      app.add_subcommand("train", "train quantization grids for the embedded chain");
  CLI::App* solve =
      app.add_subcommand("solve", "run the backward recursion on the trained grids");
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Monte Carlo evaluation of the maintenance rule; writes outcomes and summary");
  CLI::App* report =
      app.add_subcommand("report", "emit histogram, quantile, exceedance and path data files");
  CLI::App* pipeline = app.add_subcommand(
      "pipeline", "train/solve/evaluate over a ladder of grid sizes and tabulate convergence");
  for (CLI::App* cmd : {simulate, scales, train, solve, evaluate, report, pipeline})
    add_common(cmd, flags);
  pipeline->add_option("--k-list", k_list_text, "comma-separated grid sizes (default ladder)");

  CLI11_PARSE(app, argc, argv);

  if (simulate->parsed()) {
    pdmp::RunConfig cfg = make_config(flags);
    const std::uint64_t runs = flags.runs ? *flags.runs : 10000;
    progress(cfg, "simulating " + std::to_string(runs) + " trajectories");
    const auto stats = pdmp::run_simulate(cfg, runs);
    std::printf("runs: %llu\nreached %.4g mm within %zu jumps: %llu (fraction %.4f)\n",
                static_cast<unsigned long long>(stats.runs), cfg.threshold_mm, cfg.horizon,
                static_cast<unsigned long long>(stats.reached_threshold),
                stats.exceedance_fraction);
    return 0;
  }
  if (scales->parsed()) {
    pdmp::RunConfig cfg = make_config(flags);
    progress(cfg, "estimating scales from " + std::to_string(cfg.pilot_runs) + " pilot runs");
    const auto norm = pdmp::run_scales(cfg);
    std::printf("scales:");
    for (std::size_t c = 0; c < norm.dim(); ++c)
      std::printf(" %s=%.6g", pdmp::kChainCoordNames[c], norm.scales()[c]);
    std::printf("\n");
    return 0;
  }
  if (train->parsed()) {
    pdmp::RunConfig cfg = make_config(flags);
    const auto norm = pdmp::load_scales(cfg);
    progress(cfg, "training K=" + std::to_string(cfg.grid_points) + " grids on " +
                      std::to_string(cfg.effective_train_runs()) + " runs");
    const auto chain = pdmp::run_train(cfg, norm);
    double total = 0.0;
    for (double d : chain.meta.stage_distortion) total += d * d;
    std::printf("trained %zu grids of %zu points; rms distortion %.6g\n", chain.grids.size(),
                chain.points_per_grid,
                std::sqrt(total / static_cast<double>(chain.grids.size())));
    return 0;
  }
  if (solve->parsed()) {
    pdmp::RunConfig cfg = make_config(flags);
    const auto chain = pdmp::load_chain_checked(cfg);
    progress(cfg, "solving backward over " + std::to_string(chain.horizon) + " stages");
    const auto result = pdmp::run_solve(cfg, chain);
    std::printf("v0 = %.6f (time step %.4g h, min boundary %.4g h, flagged rows %llu)\n",
                result.v0, result.step, result.diagnostics.min_boundary_time,
                static_cast<unsigned long long>(result.diagnostics.flagged_rows));
    return 0;
  }
  if (evaluate->parsed()) {
    pdmp::RunConfig cfg = make_config(flags);
    const auto chain = pdmp::load_chain_checked(cfg);
    const auto solve_result = pdmp::load_solve_checked(cfg);
    progress(cfg, "evaluating the rule over " + std::to_string(cfg.evaluate_runs) + " runs");
    const auto [summary, outcomes] = pdmp::run_evaluate(cfg, chain, solve_result);
    std::printf("mean reward %.6f +- %.6f (se), stops: planned %llu, forced %llu, boundary %llu\n",
                summary.mean_reward, summary.reward_se,
                static_cast<unsigned long long>(summary.stops_planned),
                static_cast<unsigned long long>(summary.stops_forced),
                static_cast<unsigned long long>(summary.stops_boundary));
    return 0;
  }
  if (report->parsed()) {
    pdmp::RunConfig cfg = make_config(flags);
    pdmp::run_report(cfg);
    std::printf("report files written to %s\n", cfg.output_dir.c_str());
    return 0;
  }
  if (pipeline->parsed()) {
    pdmp::RunConfig cfg = make_config(flags);
    std::vector<std::size_t> ks;
    if (!k_list_text.empty()) ks = parse_k_list(k_list_text);
    else if (flags.k) ks = {*flags.k};
    else ks = {10, 50, 100, 200, 500, 1000};
    const auto report_result = pdmp::run_pipeline(
        cfg, ks, [&](const std::string& line) { progress(cfg, line); });
    std::printf("%s", pdmp::convergence_to_table(report_result).c_str());
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const pdmp::ArtifactMismatchError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return 3;
  } catch (const pdmp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pdmp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
