#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "pdmp/process.hpp"
#include "pdmp/quantizer.hpp"
#include "pdmp/solver.hpp"
#include "solve_oracle.hpp"
#include "toy_chain.hpp"

using namespace pdmp;
using toys::LineDynamics;
using toys::make_chain;


TEST_CASE("time grids: the configured rule and its exact-division edge") {
  // floor(1000 / 10) - 1 = 99 would put the last point at t* - step, which
  // the strict inequality forbids; the count drops to 98.
  const TimeGrid exact = make_time_grid(1000.0, 10.0);
  CHECK(exact.count == 98);
  CHECK(exact.time(exact.count) == 980.0);

  const TimeGrid plain = make_time_grid(995.0, 10.0);
  CHECK(plain.count == 98);

  const TimeGrid tiny = make_time_grid(1.0, 10.0);
  CHECK(tiny.count == 0);

  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double t_star = rng.uniform(1.0, 1e6);
    const double step = rng.uniform(1e-3, t_star);
    const TimeGrid g = make_time_grid(t_star, step);
    if (g.count >= 1) CHECK(g.time(g.count) < t_star - step);
  }
}

TEST_CASE("time step choice: minimum boundary over all grids, guaranteed nonempty") {
  // Two-stage chain whose points have boundary times 100-x.
  auto chain = make_chain(1, 2,
                          {{0.0, 0.0, 0.5, 0.1}, {0.9, 0.2, 0.75, 0.3}},
                          {{0.25, 0.75, 0.4, 0.6}});
  LineDynamics dyn{1.0, 100.0, RewardFunction({{0.0, 0.0}, {100.0, 1.0}}, 0.0)};
  const double step = choose_time_step(chain, dyn, 8);
  CHECK_THAT(step, Catch::Matchers::WithinRel(99.1 / 10.0, 1e-12));
  for (std::size_t n = 0; n <= 1; ++n)
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(make_time_grid(dyn.boundary_time(chain.grid(n).point(i)), step).count >= 1);

  CHECK_THROWS_AS(choose_time_step(chain, dyn, 0), std::invalid_argument);
}

TEST_CASE("time step choice: infinite boundary time demands a bounded domain") {
  auto chain = make_chain(1, 1, {{0.0, 0.0}, {0.1, 0.2}}, {{1.0}});
  struct Unbounded {
    double boundary_time(std::span<const double>) const { return kInfiniteTime; }
    bool absorbing(std::span<const double>) const { return false; }
    double stop_reward(std::span<const double>, double) const { return 0.0; }
    void monotone_breaks(std::span<const double>, double, std::vector<double>&) const {}
  } dyn;
  CHECK_THROWS_AS(choose_time_step(chain, dyn, 5), ConfigError);
}

TEST_CASE("quantized expectation: weighted sums over a transition row") {
  auto chain = make_chain(1, 3,
                          {{0.0, 0.0, 0.1, 0.0, 0.2, 0.0}, {0.3, 0.1, 0.4, 0.2, 0.5, 0.3}},
                          {{0.2, 0.3, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0}});
  const std::vector<double> values = {1.0, 2.0, 3.0};
  CHECK_THAT(quantized_expectation(chain, 1, values, 0), Catch::Matchers::WithinAbs(2.3, 1e-15));
  CHECK(quantized_expectation(chain, 1, values, 1) == 1.0);
  CHECK(quantized_expectation(chain, 1, values, 2) == 3.0);
  const std::vector<double> constant = {7.5, 7.5, 7.5};
  CHECK_THAT(quantized_expectation(chain, 1, constant, 0), Catch::Matchers::WithinAbs(7.5, 1e-12));
  CHECK_THROWS_AS(quantized_expectation(chain, 1, std::vector<double>{1.0}, 0),
                  std::invalid_argument);
}

TEST_CASE("operator: constant reward and values tie, resolved to the continue branch") {
  auto chain = make_chain(1, 2,
                          {{0.0, 0.0, 0.2, 0.0}, {0.3, 0.4, 0.5, 0.6}},
                          {{0.5, 0.5, 0.5, 0.5}});
  const double c = 2.5;
  LineDynamics dyn{1.0, 1.0, RewardFunction({{0.0, c}}, c)};
  const std::vector<double> w = {c, c};
  const OperatorResult r = apply_operator(chain, dyn, 1, w, 0, 0.05);
  CHECK(r.value == c);
  CHECK_FALSE(r.stopped);
  CHECK(std::isnan(r.best_time));
}

TEST_CASE("operator: worthless stopping always continues") {
  auto chain = make_chain(1, 2,
                          {{0.0, 0.0, 0.2, 0.0}, {0.3, 0.4, 0.5, 0.6}},
                          {{0.7, 0.3, 0.2, 0.8}});
  LineDynamics dyn{1.0, 1.0, RewardFunction({{0.0, 0.0}}, 0.0)};  // g == 0
  const std::vector<double> w = {1.25, 0.5};
  const OperatorResult r = apply_operator(chain, dyn, 1, w, 0, 0.05);
  CHECK_THAT(r.value, Catch::Matchers::WithinAbs(0.7 * 1.25 + 0.3 * 0.5, 1e-15));
  CHECK_FALSE(r.stopped);
}

TEST_CASE("operator: two-point row matches exhaustive hand evaluation") {
  // Row 0 of a 2-point stage: P = (0.6, 0.4), atoms s = (0.3, 0.9).
  auto chain = make_chain(1, 2,
                          {{0.1, 0.0, 0.4, 0.0}, {0.5, 0.3, 0.7, 0.9}},
                          {{0.6, 0.4, 0.1, 0.9}});
  LineDynamics dyn{1.0, 1.0, RewardFunction({{0.0, 0.0}, {0.6, 3.0}, {1.0, 0.0}}, 0.0)};
  const std::vector<double> w = {1.0, 2.0};
  const double step = 0.2;  // t* = 0.9: count = floor(4.5) - 1 = 3
  const OperatorResult r = apply_operator(chain, dyn, 1, w, 0, step);

  const double cont = 0.6 * 1.0 + 0.4 * 2.0;
  double best = -1e300;
  double best_u = 0.0;
  for (int iu = 1; iu <= 3; ++iu) {
    const double u = step * iu;
    double j = 0.0;
    j += 0.6 * (0.3 < u ? 1.0 : dyn.stop_reward(chain.grid(0).point(0), u));
    j += 0.4 * (0.9 < u ? 2.0 : dyn.stop_reward(chain.grid(0).point(0), u));
    if (j > best) {
      best = j;
      best_u = u;
    }
  }
  REQUIRE(best > cont);
  CHECK(r.stopped);
  CHECK_THAT(r.value, Catch::Matchers::WithinRel(best, 1e-14));
  CHECK(r.best_time == best_u);
  CHECK_THAT(r.continue_value, Catch::Matchers::WithinRel(cont, 1e-14));
}

TEST_CASE("operator: stage bounds and value-vector sizes are validated") {
  auto chain = make_chain(1, 2,
                          {{0.0, 0.0, 0.2, 0.0}, {0.3, 0.4, 0.5, 0.6}},
                          {{0.5, 0.5, 0.5, 0.5}});
  LineDynamics dyn{1.0, 1.0, RewardFunction({{0.0, 1.0}}, 0.0)};
  const std::vector<double> w = {1.0, 1.0};
  CHECK_THROWS_AS(apply_operator(chain, dyn, 0, w, 0, 0.1), std::out_of_range);
  CHECK_THROWS_AS(apply_operator(chain, dyn, 2, w, 0, 0.1), std::out_of_range);
  CHECK_THROWS_AS(apply_operator(chain, dyn, 1, std::vector<double>{1.0}, 0, 0.1),
                  std::invalid_argument);
}

TEST_CASE("backward solve: N=1, K=1 equals one hand-computed operator application") {
  auto chain = make_chain(1, 1, {{0.2, 0.0}, {0.6, 0.35}}, {{1.0}});
  LineDynamics dyn{1.0, 1.0, RewardFunction({{0.0, 0.0}, {0.5, 2.0}, {1.0, 0.0}}, 0.0)};
  const double step = 0.1;
  const SolveResult result = backward_solve(chain, dyn, step);

  const double w_terminal = dyn.g(0.6);
  const double t_star = 0.8;  // 1.0 - 0.2
  const std::int64_t count = oracle::brute_grid_count(t_star, step);
  double best = -1e300;
  for (std::int64_t iu = 1; iu <= count; ++iu) {
    const double u = step * static_cast<double>(iu);
    const double j = 0.35 < u ? w_terminal : dyn.g(0.2 + u);
    if (j > best) best = j;
  }
  const double expected = std::max(best, w_terminal);
  CHECK_THAT(result.v0, Catch::Matchers::WithinRel(expected, 1e-14));
  CHECK(result.stages.size() == 1);
  CHECK(result.terminal_values[0] == w_terminal);
}

TEST_CASE("backward solve: matches the brute-force enumerator on random toys") {
  Rng rng(2025);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = toys::random_instance(rng);
    const double step = choose_time_step(inst.chain, inst.dynamics, 3);
    const SolveResult fast = backward_solve(inst.chain, inst.dynamics, step);
    const oracle::BruteSolve brute = oracle::brute_solve(inst.chain, inst.dynamics, step);
    REQUIRE(oracle::close_rel(fast.v0, brute.v0));
    for (std::size_t n = 1; n <= inst.chain.horizon; ++n)
      for (std::size_t i = 0; i < inst.chain.points_per_grid; ++i)
        REQUIRE(oracle::close_rel(fast.stage(n).points[i].value, brute.stage_values[n - 1][i]));
  }
}

TEST_CASE("backward solve: segment decomposition agrees with enumeration on huge grids") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = toys::random_instance(rng, 3, 2);
    // Step small enough that every time grid exceeds the enumeration
    // threshold, forcing the segment path.
    double min_t = 1e300;
    for (const auto& grid : inst.chain.grids)
      for (std::size_t i = 0; i < grid.count(); ++i)
        min_t = std::min(min_t, inst.dynamics.boundary_time(grid.point(i)));
    const double step = min_t / 3000.0;
    const SolveResult fast = backward_solve(inst.chain, inst.dynamics, step);
    const oracle::BruteSolve brute = oracle::brute_solve(inst.chain, inst.dynamics, step);
    REQUIRE(oracle::close_rel(fast.v0, brute.v0));
    for (std::size_t n = 1; n <= inst.chain.horizon; ++n)
      for (std::size_t i = 0; i < inst.chain.points_per_grid; ++i)
        REQUIRE(oracle::close_rel(fast.stage(n).points[i].value, brute.stage_values[n - 1][i]));
  }
}

TEST_CASE("backward solve: values stay within the reward bounds and dominate continuation") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = toys::random_instance(rng);
    const double step = choose_time_step(inst.chain, inst.dynamics, 4);
    const SolveResult result = backward_solve(inst.chain, inst.dynamics, step);
    const double lo = inst.dynamics.g.min_value();
    const double hi = inst.dynamics.g.max_value();
    CHECK(result.v0 <= hi);
    CHECK(result.v0 >= lo);
    for (const auto& stage : result.stages)
      for (const auto& p : stage.points) {
        CHECK(p.value >= lo);
        CHECK(p.value <= hi);
        CHECK(p.value >= p.continue_value);  // the maximum with continuation, exactly
        if (p.stopped) CHECK(p.value > p.continue_value);
        else CHECK(p.value == p.continue_value);
      }
  }
}

TEST_CASE("operator: monotone in the next-stage values") {
  Rng rng(57);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = toys::random_instance(rng);
    const std::size_t K = inst.chain.points_per_grid;
    const double step = choose_time_step(inst.chain, inst.dynamics, 4);
    std::vector<double> w(K), w_up(K);
    for (std::size_t j = 0; j < K; ++j) {
      w[j] = rng.uniform(0.0, 2.0);
      w_up[j] = w[j] + rng.uniform(0.0, 1.0);
    }
    for (std::size_t i = 0; i < K; ++i) {
      const auto lo = apply_operator(inst.chain, inst.dynamics, 1, w, i, step);
      const auto hi = apply_operator(inst.chain, inst.dynamics, 1, w_up, i, step);
      CHECK(lo.value <= hi.value);
    }
  }
}

TEST_CASE("backward solve: flagged transition rows surface in the diagnostics") {
  auto chain = make_chain(1, 2,
                          {{0.0, 0.0, 0.2, 0.0}, {0.3, 0.4, 0.5, 0.6}},
                          {{0.5, 0.5, 0.5, 0.5}});
  chain.flagged_rows[0][1] = 1;
  LineDynamics dyn{1.0, 1.0, RewardFunction({{0.0, 0.0}, {0.5, 1.0}, {1.0, 0.0}}, 0.0)};
  const SolveResult result = backward_solve(chain, dyn, 0.05);
  CHECK(result.diagnostics.flagged_rows == 1);
  CHECK(result.stage(1).points[1].low_confidence == 1);
  CHECK(result.stage(1).points[0].low_confidence == 0);
}
