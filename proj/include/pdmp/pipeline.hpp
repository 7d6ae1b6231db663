#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdmp/config.hpp"
#include "pdmp/corrosion.hpp"
#include "pdmp/errors.hpp"
#include "pdmp/io.hpp"
#include "pdmp/policy.hpp"
#include "pdmp/process.hpp"
#include "pdmp/quantizer.hpp"
#include "pdmp/solver.hpp"

namespace pdmp {

struct ArtifactPaths {
  std::filesystem::path dir;

  explicit ArtifactPaths(const std::filesystem::path& d) : dir(d) {}
  std::filesystem::path scales() const { return dir / "scales.json"; }
  std::filesystem::path chain() const { return dir / "grids.bin"; }
  std::filesystem::path chain_json() const { return dir / "grids.json"; }
  std::filesystem::path solve() const { return dir / "solve.bin"; }
  std::filesystem::path outcomes() const { return dir / "outcomes.csv"; }
  std::filesystem::path summary() const { return dir / "summary.json"; }
  std::filesystem::path trajectories() const { return dir / "trajectories.json"; }
  std::filesystem::path simulate_summary() const { return dir / "simulate_summary.json"; }
  std::filesystem::path histogram_csv() const { return dir / "histogram.csv"; }
  std::filesystem::path quantiles_csv() const { return dir / "quantiles.csv"; }
  std::filesystem::path exceedance_csv() const { return dir / "exceedance.csv"; }
  std::filesystem::path stopped_paths() const { return dir / "stopped_paths.json"; }
  std::filesystem::path convergence_csv() const { return dir / "convergence.csv"; }
  std::filesystem::path convergence_table() const { return dir / "convergence.txt"; }
};

inline void ensure_output_dir(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.output_dir + ": " + ec.message());
}

inline void require_artifact(const std::filesystem::path& path, const std::string& command) {
  if (!std::filesystem::exists(path))
    throw ConfigError("missing artifact " + path.string() + "; run the '" + command +
                      "' command first");
}

// ---------------------------------------------------------------------------
// simulate: trajectory samples plus the threshold-exceedance fraction.
// ---------------------------------------------------------------------------

struct SimulateStats {
  std::uint64_t runs = 0;
  std::uint64_t reached_threshold = 0;
  double exceedance_fraction = 0.0;
};

inline SimulateStats run_simulate(const RunConfig& cfg, std::uint64_t runs, bool write = true) {
  cfg.validate();
  if (runs < 1) throw ConfigError("simulate: need at least one run");
  const corrosion::CorrosionModel model(cfg.corrosion_params());
  const std::uint64_t seed = stage_seed(cfg, kSimulateStream);

  const std::uint64_t chunk = 1024;
  const std::uint64_t n_chunks = (runs + chunk - 1) / chunk;
  std::vector<std::uint64_t> reached_partial(n_chunks, 0);
  for_each_chunk(runs, chunk, cfg.threads,
                 [&](std::uint64_t c, std::uint64_t begin, std::uint64_t end) {
                   for (std::uint64_t run = begin; run < end; ++run) {
                     Rng rng(child_seed(seed, run));
                     const auto z0 = model.sample_initial(rng);
                     const auto traj = simulate(model, z0, cfg.horizon, rng);
                     const bool reached =
                         !traj.jumps.empty() &&
                         traj.jumps.back().post_jump.mode == corrosion::kFailedMode;
                     if (reached) ++reached_partial[c];
                   }
                 });
  SimulateStats stats;
  stats.runs = runs;
  for (std::uint64_t c = 0; c < n_chunks; ++c) stats.reached_threshold += reached_partial[c];
  stats.exceedance_fraction =
      static_cast<double>(stats.reached_threshold) / static_cast<double>(runs);

  if (write) {
    ensure_output_dir(cfg);
    const ArtifactPaths paths(cfg.output_dir);
    nlohmann::json jtrajs = nlohmann::json::array();
    const std::uint64_t n_save = std::min<std::uint64_t>(cfg.report_paths, runs);
    for (std::uint64_t run = 0; run < n_save; ++run) {
      Rng rng(child_seed(seed, run));
      const auto z0 = model.sample_initial(rng);
      const auto traj = simulate(model, z0, cfg.horizon, rng);
      nlohmann::json jt = trajectory_to_json(traj);
      auto& samples = jt["thickness_path"] = nlohmann::json::array();
      const double t_end = traj.last_jump_time();
      const int n_samples = 400;
      for (int k = 0; k <= n_samples; ++k) {
        const double t = t_end * (static_cast<double>(k) / n_samples);
        samples.push_back({t, state_at(model, traj, t).thickness});
      }
      jtrajs.push_back(std::move(jt));
    }
    write_text_file(paths.trajectories(), jtrajs.dump(1));
    nlohmann::json jsum = {{"config_hash", cfg.artifact_hash()},
                           {"runs", stats.runs},
                           {"horizon", cfg.horizon},
                           {"threshold_mm", cfg.threshold_mm},
                           {"reached_threshold", stats.reached_threshold},
                           {"exceedance_fraction", stats.exceedance_fraction},
                           {"seed", cfg.seed}};
    write_text_file(paths.simulate_summary(), jsum.dump(1));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// scales: pilot simulation and the weighted norm.
// ---------------------------------------------------------------------------

inline const std::array<const char*, corrosion::kChainDim> kChainCoordNames = {
    "mode", "thickness_mm", "protection_clock_hours", "rate_mm_per_hour", "inter_jump_hours"};

inline WeightedNorm compute_scales(const RunConfig& cfg) {
  const corrosion::CorrosionModel model(cfg.corrosion_params());
  const corrosion::CorrosionChainSource source(model, cfg.horizon,
                                               stage_seed(cfg, kPilotStream));
  const std::size_t stages = cfg.horizon + 1;
  std::vector<SampleMatrix> pilot(stages);
  for (auto& m : pilot) {
    m.dim = corrosion::kChainDim;
    m.data.reserve(cfg.pilot_runs * corrosion::kChainDim);
  }
  std::vector<double> buf(stages * corrosion::kChainDim);
  for (std::uint64_t run = 0; run < cfg.pilot_runs; ++run) {
    source(run, buf);
    for (std::size_t n = 0; n < stages; ++n)
      pilot[n].push_row(std::span<const double>(buf).subspan(n * corrosion::kChainDim,
                                                             corrosion::kChainDim));
  }
  WeightedNorm estimated = estimate_scales(pilot);
  // The mode is a label, not a magnitude: pin its scale so that any mode
  // difference dominates the Euclidean part and grids partition by mode.
  std::vector<double> scales = estimated.scales();
  scales[0] = cfg.mode_scale;
  return WeightedNorm(std::move(scales));
}

inline WeightedNorm run_scales(const RunConfig& cfg, bool write = true) {
  cfg.validate();
  WeightedNorm norm = compute_scales(cfg);
  if (write) {
    ensure_output_dir(cfg);
    nlohmann::json j = {{"format", "scales"},
                        {"config_hash", cfg.artifact_hash()},
                        {"pilot_runs", cfg.pilot_runs},
                        {"seed", cfg.seed},
                        {"coords", kChainCoordNames},
                        {"scales", norm.scales()}};
    write_text_file(ArtifactPaths(cfg.output_dir).scales(), j.dump(1));
  }
  return norm;
}

inline WeightedNorm load_scales(const RunConfig& cfg) {
  const ArtifactPaths paths(cfg.output_dir);
  require_artifact(paths.scales(), "scales");
  const auto j = nlohmann::json::parse(read_text_file(paths.scales()));
  if (j.value("format", "") != std::string("scales"))
    throw ArtifactMismatchError(paths.scales().string() + ": not a scales artifact");
  if (j.at("config_hash").get<std::uint64_t>() != cfg.artifact_hash())
    throw ArtifactMismatchError(paths.scales().string() +
                                ": config hash does not match the active configuration");
  return WeightedNorm(j.at("scales").get<std::vector<double>>());
}

// ---------------------------------------------------------------------------
// train / solve / evaluate / report.
// ---------------------------------------------------------------------------

inline QuantizedChain run_train(const RunConfig& cfg, const WeightedNorm& norm,
                                bool write = true) {
  cfg.validate();
  const corrosion::CorrosionModel model(cfg.corrosion_params());
  const corrosion::CorrosionChainSource source(model, cfg.horizon, stage_seed(cfg, kTrainStream));
  TrainOptions options;
  options.runs = cfg.effective_train_runs();
  options.step_a = cfg.step_a;
  options.step_b = cfg.step_b;
  options.threads = cfg.threads;
  options.seed = cfg.seed;
  QuantizedChain chain =
      train(source, cfg.grid_points, cfg.horizon, corrosion::kChainDim, norm, options);
  chain.config_hash = cfg.artifact_hash();
  if (write) {
    ensure_output_dir(cfg);
    save_chain(chain, ArtifactPaths(cfg.output_dir).chain());
  }
  return chain;
}

inline QuantizedChain load_chain_checked(const RunConfig& cfg) {
  const ArtifactPaths paths(cfg.output_dir);
  require_artifact(paths.chain(), "train");
  QuantizedChain chain = load_chain(paths.chain());
  if (chain.config_hash != cfg.artifact_hash())
    throw ArtifactMismatchError(paths.chain().string() +
                                ": config hash does not match the active configuration");
  return chain;
}

inline SolveResult run_solve(const RunConfig& cfg, const QuantizedChain& chain,
                             bool write = true) {
  cfg.validate();
  const corrosion::CorrosionModel model(cfg.corrosion_params());
  const RewardFunction reward = cfg.reward_function();
  const corrosion::CorrosionDynamics dynamics(model, reward);
  const double step = choose_time_step(chain, dynamics, cfg.time_target_points);
  SolveResult result = backward_solve(chain, dynamics, step, cfg.threads);
  if (write) {
    ensure_output_dir(cfg);
    save_solve(result, ArtifactPaths(cfg.output_dir).solve());
  }
  return result;
}

inline SolveResult load_solve_checked(const RunConfig& cfg) {
  const ArtifactPaths paths(cfg.output_dir);
  require_artifact(paths.solve(), "solve");
  SolveResult result = load_solve(paths.solve());
  if (result.config_hash != cfg.artifact_hash())
    throw ArtifactMismatchError(paths.solve().string() +
                                ": config hash does not match the active configuration");
  return result;
}

inline std::pair<PolicySummary, std::vector<PolicyOutcome>> run_evaluate(
    const RunConfig& cfg, const QuantizedChain& chain, const SolveResult& solve,
    bool write = true) {
  cfg.validate();
  const corrosion::CorrosionModel model(cfg.corrosion_params());
  const RewardFunction reward = cfg.reward_function();
  EvaluateOptions options;
  options.histogram_bin_hours = cfg.histogram_bin_years * 8760.0;
  options.threads = cfg.threads;
  auto [summary, outcomes] = evaluate_policy(model, reward, cfg.horizon, solve, chain,
                                             cfg.evaluate_runs,
                                             stage_seed(cfg, kEvaluateStream), options);
  if (write) {
    ensure_output_dir(cfg);
    const ArtifactPaths paths(cfg.output_dir);
    write_text_file(paths.outcomes(), outcomes_to_csv(outcomes));
    write_text_file(paths.summary(), summary_to_json(summary, cfg.artifact_hash()).dump(1));
  }
  return {std::move(summary), std::move(outcomes)};
}

inline void run_report(const RunConfig& cfg) {
  cfg.validate();
  const ArtifactPaths paths(cfg.output_dir);
  require_artifact(paths.outcomes(), "evaluate");
  require_artifact(paths.summary(), "evaluate");
  const auto jsummary = nlohmann::json::parse(read_text_file(paths.summary()));
  if (jsummary.at("config_hash").get<std::uint64_t>() != cfg.artifact_hash())
    throw ArtifactMismatchError(paths.summary().string() +
                                ": config hash does not match the active configuration");
  const auto outcomes = outcomes_from_csv(read_text_file(paths.outcomes()));
  if (outcomes.empty()) throw ConfigError("report: no outcomes recorded");

  std::vector<double> taus(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) taus[i] = outcomes[i].stop_time;
  const double bin_hours = cfg.histogram_bin_years * 8760.0;
  const Histogram hist = make_histogram(taus, bin_hours);
  std::string csv = "bin_start_years,bin_end_years,count\n";
  char line[160];
  for (std::size_t b = 0; b < hist.counts.size(); ++b) {
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%zu\n",
                  bin_hours * static_cast<double>(b) / 8760.0,
                  bin_hours * static_cast<double>(b + 1) / 8760.0, hist.counts[b]);
    csv += line;
  }
  write_text_file(paths.histogram_csv(), csv);

  std::sort(taus.begin(), taus.end());
  csv = "p,tau_hours,tau_years\n";
  for (double p : {0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99}) {
    const double q = quantile_sorted(taus, p);
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g\n", p, q, q / 8760.0);
    csv += line;
  }
  write_text_file(paths.quantiles_csv(), csv);

  csv = "t_hours,t_years,p_maintenance_by_t,p_no_maintenance_before_t\n";
  for (int year = 1; year <= 40; ++year) {
    const double t = 8760.0 * year;
    const auto le = std::upper_bound(taus.begin(), taus.end(), t) - taus.begin();
    const double p = static_cast<double>(le) / static_cast<double>(taus.size());
    std::snprintf(line, sizeof(line), "%.17g,%d,%.17g,%.17g\n", t, year, p, 1.0 - p);
    csv += line;
  }
  write_text_file(paths.exceedance_csv(), csv);

  // Per-trajectory stopped paths: replay the first evaluation runs with
  // their original seeds so stop markers agree with outcomes.csv.
  const QuantizedChain chain = load_chain_checked(cfg);
  const SolveResult solve = load_solve_checked(cfg);
  const corrosion::CorrosionModel model(cfg.corrosion_params());
  const RewardFunction reward = cfg.reward_function();
  const std::uint64_t eval_seed = stage_seed(cfg, kEvaluateStream);
  nlohmann::json jpaths = nlohmann::json::array();
  const std::uint64_t n_paths = std::min<std::uint64_t>(cfg.report_paths, outcomes.size());
  for (std::uint64_t run = 0; run < n_paths; ++run) {
    const std::uint64_t run_seed = child_seed(eval_seed, run);
    Rng rng(run_seed);
    const auto z0 = model.sample_initial(rng);
    const PolicyOutcome outcome = run_policy(model, reward, z0, cfg.horizon, solve, chain, rng);
    // Rebuild the path up to the stop with a fresh stream of the same seed.
    Rng replay(run_seed);
    const auto z0_replay = model.sample_initial(replay);
    auto traj = simulate(model, z0_replay, cfg.horizon, replay);
    nlohmann::json jp;
    jp["run"] = run;
    jp["seed"] = run_seed;
    jp["stop"] = {{"tau_hours", outcome.stop_time},
                  {"tau_years", outcome.stop_time / 8760.0},
                  {"thickness_mm", outcome.thickness_at_stop},
                  {"reward", outcome.reward},
                  {"reason", to_string(outcome.reason)},
                  {"jumps", outcome.jumps_at_stop}};
    auto& jumps = jp["jumps"] = nlohmann::json::array();
    for (const auto& rec : traj.jumps) {
      if (rec.jump_time > outcome.stop_time) break;
      jumps.push_back({{"t_hours", rec.jump_time}, {"thickness_mm", rec.post_jump.thickness}});
    }
    auto& samples = jp["thickness_path"] = nlohmann::json::array();
    const int n_samples = 400;
    for (int k = 0; k <= n_samples; ++k) {
      const double t = outcome.stop_time * (static_cast<double>(k) / n_samples);
      samples.push_back({t, state_at(model, traj, t).thickness});
    }
    jpaths.push_back(std::move(jp));
  }
  write_text_file(paths.stopped_paths(), jpaths.dump(1));
}

// ---------------------------------------------------------------------------
// pipeline: the convergence study over a ladder of grid sizes.
// ---------------------------------------------------------------------------

struct ConvergenceRow {
  std::size_t grid_points = 0;
  double v0_direct = 0.0;
  double mc_mean = 0.0;
  double mc_se = 0.0;
  double train_seconds = 0.0;
  double solve_seconds = 0.0;
  double evaluate_seconds = 0.0;
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
};

inline std::string convergence_to_csv(const ConvergenceReport& report) {
  std::string csv = "k,v0_direct,mc_mean,mc_se,train_seconds,solve_seconds,evaluate_seconds\n";
  char line[224];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.3f,%.3f,%.3f\n", r.grid_points,
                  r.v0_direct, r.mc_mean, r.mc_se, r.train_seconds, r.solve_seconds,
                  r.evaluate_seconds);
    csv += line;
  }
  return csv;
}

inline std::string convergence_to_table(const ConvergenceReport& report) {
  std::string table =
      "    K     direct v0     MC mean     MC se\n"
      "  -----   ---------    --------    ------\n";
  char line[128];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof(line), "  %5zu   %9.4f    %8.4f    %6.4f\n", r.grid_points,
                  r.v0_direct, r.mc_mean, r.mc_se);
    table += line;
  }
  return table;
}

/// Runs train -> solve -> evaluate for each grid size, collecting one row
/// per K. Artifacts land in <output_dir>/K<k>/. A failing stage aborts with
/// the stage named, after persisting the rows finished so far.
inline ConvergenceReport run_pipeline(const RunConfig& base_cfg, std::vector<std::size_t> k_list,
                                      const std::function<void(const std::string&)>& log = {}) {
  base_cfg.validate();
  if (k_list.empty()) throw ConfigError("pipeline: empty K list");
  std::sort(k_list.begin(), k_list.end());
  ensure_output_dir(base_cfg);
  const ArtifactPaths base_paths(base_cfg.output_dir);

  ConvergenceReport report;
  auto persist = [&] {
    write_text_file(base_paths.convergence_csv(), convergence_to_csv(report));
    write_text_file(base_paths.convergence_table(), convergence_to_table(report));
  };

  for (const std::size_t k : k_list) {
    RunConfig cfg = base_cfg;
    cfg.grid_points = k;
    char sub[32];
    std::snprintf(sub, sizeof(sub), "K%05zu", k);
    cfg.output_dir = (std::filesystem::path(base_cfg.output_dir) / sub).string();

    std::string stage_name;
    try {
      using clock = std::chrono::steady_clock;
      ConvergenceRow row;
      row.grid_points = k;

      stage_name = "scales";
      if (log) log("[pipeline] K=" + std::to_string(k) + ": scales");
      const WeightedNorm norm = run_scales(cfg);

      stage_name = "train";
      if (log) log("[pipeline] K=" + std::to_string(k) + ": train (" +
                   std::to_string(cfg.effective_train_runs()) + " runs)");
      auto t0 = clock::now();
      const QuantizedChain chain = run_train(cfg, norm);
      row.train_seconds = std::chrono::duration<double>(clock::now() - t0).count();

      stage_name = "solve";
      if (log) log("[pipeline] K=" + std::to_string(k) + ": solve");
      t0 = clock::now();
      const SolveResult solve = run_solve(cfg, chain);
      row.solve_seconds = std::chrono::duration<double>(clock::now() - t0).count();
      row.v0_direct = solve.v0;

      stage_name = "evaluate";
      if (log) log("[pipeline] K=" + std::to_string(k) + ": evaluate (" +
                   std::to_string(cfg.evaluate_runs) + " runs)");
      t0 = clock::now();
      const auto [summary, outcomes] = run_evaluate(cfg, chain, solve);
      row.evaluate_seconds = std::chrono::duration<double>(clock::now() - t0).count();
      row.mc_mean = summary.mean_reward;
      row.mc_se = summary.reward_se;

      report.rows.push_back(row);
      persist();
    } catch (const ArtifactMismatchError& e) {
      persist();
      throw ArtifactMismatchError("pipeline stage '" + stage_name + "' (K=" + std::to_string(k) +
                                  "): " + e.what());
    } catch (const ConfigError& e) {
      persist();
      throw ConfigError("pipeline stage '" + stage_name + "' (K=" + std::to_string(k) +
                        "): " + e.what());
    } catch (const NumericalError& e) {
      persist();
      throw NumericalError("pipeline stage '" + stage_name + "' (K=" + std::to_string(k) +
                           "): " + e.what());
    } catch (const std::exception& e) {
      persist();
      throw IoError("pipeline stage '" + stage_name + "' (K=" + std::to_string(k) +
                    "): " + e.what());
    }
  }
  return report;
}

}  // namespace pdmp
