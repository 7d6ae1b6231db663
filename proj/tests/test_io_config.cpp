#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pdmp/config.hpp"
#include "pdmp/corrosion.hpp"
#include "pdmp/io.hpp"
#include "pdmp/pipeline.hpp"
#include "pdmp/process.hpp"

using namespace pdmp;

namespace {

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "pdmp_io_test";
  std::filesystem::create_directories(dir);
  return dir;
}

QuantizedChain small_chain() {
  RunConfig cfg;
  cfg.grid_points = 6;
  cfg.pilot_runs = 300;
  cfg.train_runs = 500;
  cfg.horizon = 4;
  cfg.seed = 8;
  const WeightedNorm norm = compute_scales(cfg);
  QuantizedChain chain = run_train(cfg, norm, false);
  chain.config_hash = cfg.artifact_hash();
  return chain;
}

bool bytes_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return !sa.empty() && sa == sb;
}

}  // namespace

TEST_CASE("config: defaults validate and reproduce the standard study") {
  RunConfig cfg;
  cfg.validate();
  const auto params = cfg.corrosion_params();
  CHECK(params.envs[0].mean_sojourn_hours == 17520.0);
  CHECK(params.envs[1].mean_sojourn_hours == 131400.0);
  CHECK(params.envs[2].mean_sojourn_hours == 8760.0);
  CHECK(params.envs[0].transition_hours == 30000.0);
  CHECK(params.envs[1].transition_hours == 200000.0);
  CHECK(params.envs[2].transition_hours == 40000.0);
  CHECK(params.weibull_shape == 2.5);
  CHECK(params.weibull_scale_hours == 11800.0);
  CHECK(params.failure_threshold_mm == 0.2);
  CHECK(cfg.horizon == 25);
  CHECK(cfg.reward_function()(0.18) == 4.0);
  CHECK(cfg.effective_train_runs() == 1000000);
  RunConfig small = cfg;
  small.grid_points = 100;
  CHECK(small.effective_train_runs() == 100000);
}

TEST_CASE("config: file parsing, overrides, unknown keys, inverse units") {
  const auto dir = temp_dir();
  const auto path = dir / "config.txt";
  write_text_file(path,
                  "# comment line\n"
                  "model.env1.sojourn = 20000   # trailing comment\n"
                  "reward.knots = 0:0, 0.1:2, 0.2:0\n"
                  "quantizer.points = 55\n"
                  "seed = 99\n"
                  "\n"
                  "horizon = 10\n");
  const RunConfig cfg = load_config(path);
  CHECK(cfg.sojourn[0] == 20000.0);
  CHECK(cfg.grid_points == 55);
  CHECK(cfg.seed == 99);
  CHECK(cfg.horizon == 10);
  CHECK(cfg.reward_knots.size() == 3);
  CHECK(cfg.reward_function()(0.1) == 2.0);

  write_text_file(path, "model.envX.sojourn = 1\n");
  CHECK_THROWS_AS(load_config(path), ConfigError);
  write_text_file(path, "no_such_key = 1\n");
  CHECK_THROWS_AS(load_config(path), ConfigError);
  write_text_file(path, "horizon 25\n");
  CHECK_THROWS_AS(load_config(path), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "absent.txt"), ConfigError);

  // Paper-literal reading: the same numbers as rates per hour.
  RunConfig inv;
  apply_config_entry(inv, "model.lambda_beta_units", "inverse-hours");
  const auto params = inv.corrosion_params();
  CHECK_THAT(params.envs[0].mean_sojourn_hours,
             Catch::Matchers::WithinRel(1.0 / 17520.0, 1e-12));
  CHECK_THAT(params.weibull_scale_hours, Catch::Matchers::WithinRel(1.0 / 11800.0, 1e-12));
  CHECK_THROWS_AS(apply_config_entry(inv, "model.lambda_beta_units", "fortnights"), ConfigError);
}

TEST_CASE("config: validation rejects nonsense") {
  RunConfig cfg;
  cfg.rate_low[0] = 2e-5;  // above rate_high
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  RunConfig zero_points;
  zero_points.grid_points = 0;
  CHECK_THROWS_AS(zero_points.validate(), ConfigError);
  RunConfig bad_knots;
  bad_knots.reward_knots = {{0.1, 1.0}, {0.1, 2.0}};
  CHECK_THROWS_AS(bad_knots.validate(), ConfigError);
}

TEST_CASE("config: the artifact hash tracks artifact-shaping settings only") {
  RunConfig cfg;
  const auto h = cfg.artifact_hash();
  RunConfig same = cfg;
  same.evaluate_runs = 7;        // evaluation scale is not part of the artifacts
  same.output_dir = "elsewhere";
  same.threads = 3;
  CHECK(same.artifact_hash() == h);

  RunConfig other = cfg;
  other.grid_points = 999;
  CHECK(other.artifact_hash() != h);
  RunConfig reseeded = cfg;
  reseeded.seed = cfg.seed + 1;
  CHECK(reseeded.artifact_hash() != h);
  RunConfig rek = cfg;
  rek.reward_knots[2].second = 3.9;
  CHECK(rek.artifact_hash() != h);
}

TEST_CASE("chain artifact: binary round trip is bit-exact") {
  const auto dir = temp_dir();
  const QuantizedChain chain = small_chain();
  const auto p1 = dir / "grids_a.bin";
  const auto p2 = dir / "grids_b.bin";
  save_chain(chain, p1);
  const QuantizedChain loaded = load_chain(p1);
  save_chain(loaded, p2);
  CHECK(bytes_equal(p1, p2));

  CHECK(loaded.horizon == chain.horizon);
  CHECK(loaded.points_per_grid == chain.points_per_grid);
  CHECK(loaded.config_hash == chain.config_hash);
  CHECK(loaded.norm.scales() == chain.norm.scales());
  for (std::size_t n = 0; n <= chain.horizon; ++n) {
    CHECK(loaded.grids[n].points == chain.grids[n].points);
    CHECK(loaded.grids[n].weights == chain.grids[n].weights);
  }
  CHECK(loaded.transitions == chain.transitions);
  CHECK(loaded.flagged_rows == chain.flagged_rows);
  CHECK(loaded.meta.stage_distortion == chain.meta.stage_distortion);
}

TEST_CASE("chain artifact: lossless JSON export") {
  const QuantizedChain chain = small_chain();
  const auto j = chain_to_json(chain);
  const QuantizedChain back = chain_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.norm.scales() == chain.norm.scales());
  for (std::size_t n = 0; n <= chain.horizon; ++n) {
    CHECK(back.grids[n].points == chain.grids[n].points);
    CHECK(back.grids[n].weights == chain.grids[n].weights);
  }
  CHECK(back.transitions == chain.transitions);
}

TEST_CASE("solve artifact: binary round trip is bit-exact, including absent best times") {
  const auto dir = temp_dir();
  RunConfig cfg;
  cfg.grid_points = 6;
  cfg.pilot_runs = 300;
  cfg.train_runs = 500;
  cfg.horizon = 4;
  cfg.seed = 8;
  const QuantizedChain chain = small_chain();
  const SolveResult solve = run_solve(cfg, chain, false);
  const auto p1 = dir / "solve_a.bin";
  const auto p2 = dir / "solve_b.bin";
  save_solve(solve, p1);
  const SolveResult loaded = load_solve(p1);
  save_solve(loaded, p2);
  CHECK(bytes_equal(p1, p2));
  CHECK(loaded.v0 == solve.v0);
  CHECK(loaded.step == solve.step);
  CHECK(loaded.config_hash == solve.config_hash);
  REQUIRE(loaded.stages.size() == solve.stages.size());
  bool saw_nan = false;
  for (std::size_t n = 1; n <= solve.horizon; ++n)
    for (std::size_t i = 0; i < solve.points_per_grid; ++i) {
      const auto& a = solve.stage(n).points[i];
      const auto& b = loaded.stage(n).points[i];
      CHECK(a.value == b.value);
      CHECK(a.continue_value == b.continue_value);
      CHECK(a.stopped == b.stopped);
      if (std::isnan(a.best_time)) {
        saw_nan = true;
        CHECK(std::isnan(b.best_time));
      } else {
        CHECK(a.best_time == b.best_time);
      }
    }
  CHECK(saw_nan);  // continue branches exist and survive the round trip
}

TEST_CASE("artifacts: corrupted or mismatched files are rejected") {
  const auto dir = temp_dir();
  const QuantizedChain chain = small_chain();
  const auto path = dir / "grids.bin";
  save_chain(chain, path);

  // Wrong magic.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXXXXXX", 8);
  }
  CHECK_THROWS_AS(load_chain(path), ArtifactMismatchError);
  save_chain(chain, path);
  // Truncation.
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  CHECK_THROWS_AS(load_chain(path), IoError);
  // Solve loader refuses chain files.
  save_chain(chain, path);
  CHECK_THROWS_AS(load_solve(path), ArtifactMismatchError);
}

TEST_CASE("trajectory JSON: documented shape") {
  const corrosion::CorrosionModel model(corrosion::CorrosionParams::defaults());
  Rng rng(4);
  const auto z0 = model.sample_initial(rng);
  const auto traj = simulate(model, z0, 6, rng);
  const auto j = trajectory_to_json(traj);
  CHECK(j.at("initial").at("mode") == 1);
  CHECK(j.at("initial").at("position").size() == 3);
  CHECK(j.at("horizon") == 6);
  REQUIRE(j.at("jumps").size() == traj.jumps.size());
  const auto& first = j.at("jumps")[0];
  CHECK(first.at("n") == 1);
  CHECK(first.at("time").get<double>() == traj.jumps[0].jump_time);
  CHECK((first.at("cause") == "random" || first.at("cause") == "boundary"));
}

TEST_CASE("outcome CSV: round trip preserves every field") {
  std::vector<PolicyOutcome> outcomes;
  outcomes.push_back({123456.75, StopReason::kPlanned, 0.1789, 3.9, 7, 11});
  outcomes.push_back({9.5e5, StopReason::kForcedAtHorizon, 0.15, 1.0, 25, 12});
  outcomes.push_back({1.25e6, StopReason::kBoundary, 0.2, 1.0, 13, 13});
  const std::string csv = outcomes_to_csv(outcomes);
  const auto back = outcomes_from_csv(csv);
  REQUIRE(back.size() == outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) CHECK(back[i] == outcomes[i]);
  CHECK_THROWS_AS(outcomes_from_csv("seed\n1,2,notenoughfields\n"), IoError);
}
