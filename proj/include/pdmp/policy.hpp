#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pdmp/corrosion.hpp"
#include "pdmp/errors.hpp"
#include "pdmp/parallel.hpp"
#include "pdmp/process.hpp"
#include "pdmp/quantizer.hpp"
#include "pdmp/reward.hpp"
#include "pdmp/rng.hpp"
#include "pdmp/solver.hpp"
#include "pdmp/stats.hpp"

namespace pdmp {

/// The decision issued at a jump: intervene after `delay` hours unless
/// another jump occurs first, or (continue branch) let the segment run.
/// A pure function of the jump index, the observed pair and the solve
/// artifacts, which is exactly the stopping-time property.
struct InterventionPlan {
  std::size_t issued_at_jump = 0;
  std::optional<double> delay;  // nullopt: no intervention this segment
  std::size_t basis_index = 0;  // grid point the observation projected to
  bool stop_branch = false;
};

inline InterventionPlan plan(std::size_t n, std::span<const double> observed,
                             const SolveResult& solve, const QuantizedChain& chain) {
  if (solve.horizon != chain.horizon || solve.points_per_grid != chain.points_per_grid)
    throw ConfigError("plan: solve result and quantized chain disagree on horizon or grid size");
  if (n >= solve.horizon)
    throw std::out_of_range("plan: jump index must be below the horizon");
  const std::size_t i = nearest(chain.grid(n), observed, chain.norm);
  const PointRecord& rec = solve.stage(n + 1).points[i];
  InterventionPlan p;
  p.issued_at_jump = n;
  p.basis_index = i;
  p.stop_branch = rec.stopped != 0;
  if (rec.stopped != 0) p.delay = rec.best_time;
  return p;
}

/// Per-stage data reused by every refined plan: sorted inter-jump atoms of
/// the next grid and the next stage's values. Immutable once built, safe
/// to share across evaluation threads.
struct PlanContext {
  const SolveResult* solve = nullptr;
  const QuantizedChain* chain = nullptr;
  std::vector<detail::StageAtoms> atoms;            // index n: atoms of grid n+1
  std::vector<std::vector<double>> next_values;     // index n: values on grid n+1

  static PlanContext build(const SolveResult& solve, const QuantizedChain& chain) {
    if (solve.horizon != chain.horizon || solve.points_per_grid != chain.points_per_grid)
      throw ConfigError("plan: solve result and quantized chain disagree on horizon or grid size");
    PlanContext ctx;
    ctx.solve = &solve;
    ctx.chain = &chain;
    const std::size_t N = solve.horizon;
    const std::size_t K = solve.points_per_grid;
    ctx.atoms.reserve(N);
    ctx.next_values.reserve(N);
    for (std::size_t n = 0; n < N; ++n) {
      ctx.atoms.push_back(detail::StageAtoms::build(chain.grid(n + 1)));
      std::vector<double> values(K);
      for (std::size_t j = 0; j < K; ++j)
        values[j] = n + 2 <= N ? solve.stage(n + 2).points[j].value : solve.terminal_values[j];
      ctx.next_values.push_back(std::move(values));
    }
    return ctx;
  }
};

/// Like plan(), but the maximizing date is recomputed at the observed pair
/// itself: the projected cell only supplies the quantized continuation
/// (its transition row and the next stage's values), while the stopping
/// side evaluates the reward along the flow from the true state. The cell
/// point is a centroid, so its frozen date can miss the reward peak of the
/// actual structure by the full cell spread; re-maximizing removes that
/// error at no extra solve cost. Still a pure function of
/// (n, observation, artifacts).
template <OperatorDynamics D>
InterventionPlan plan_refined(std::size_t n, std::span<const double> observed,
                              const PlanContext& ctx, const D& dynamics,
                              detail::RowScratch& scratch) {
  const SolveResult& solve = *ctx.solve;
  const QuantizedChain& chain = *ctx.chain;
  if (n >= solve.horizon)
    throw std::out_of_range("plan: jump index must be below the horizon");
  const std::size_t K = chain.points_per_grid;
  const std::size_t i = nearest(chain.grid(n), observed, chain.norm);
  const double* row = chain.transition(n + 1).data() + i * K;
  const OperatorResult result =
      detail::apply_operator_at(chain, dynamics, ctx.atoms[n], n + 1, ctx.next_values[n],
                                observed, row, chain.row_flagged(n + 1, i), solve.step, scratch);
  InterventionPlan p;
  p.issued_at_jump = n;
  p.basis_index = i;
  p.stop_branch = result.stopped;
  if (result.stopped) p.delay = result.best_time;
  return p;
}

template <OperatorDynamics D>
InterventionPlan plan_refined(std::size_t n, std::span<const double> observed,
                              const SolveResult& solve, const QuantizedChain& chain,
                              const D& dynamics) {
  const PlanContext ctx = PlanContext::build(solve, chain);
  detail::RowScratch scratch;
  return plan_refined(n, observed, ctx, dynamics, scratch);
}

enum class StopReason : std::uint8_t { kPlanned = 0, kForcedAtHorizon = 1, kBoundary = 2 };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::kPlanned: return "planned";
    case StopReason::kForcedAtHorizon: return "forced-at-horizon";
    default: return "boundary";
  }
}

struct PolicyOutcome {
  double stop_time = 0.0;          // tau, hours
  StopReason reason = StopReason::kPlanned;
  double thickness_at_stop = 0.0;  // mm
  double reward = 0.0;
  std::size_t jumps_at_stop = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const PolicyOutcome&, const PolicyOutcome&) = default;
};

namespace detail {

inline PolicyOutcome run_policy_impl(const corrosion::CorrosionModel& model,
                                     const RewardFunction& g,
                                     const corrosion::CorrosionState& z0, std::size_t horizon,
                                     const PlanContext& ctx, Rng& rng, RowScratch& scratch) {
  const corrosion::CorrosionDynamics dynamics(model, g);
  corrosion::CorrosionState state = z0;
  double now = 0.0;
  double last_inter_jump = 0.0;  // S_0 = 0
  std::size_t n = 0;
  std::array<double, corrosion::kChainDim> observed;

  for (;;) {
    if (model.is_absorbing(state)) {
      PolicyOutcome out{now, StopReason::kBoundary, state.thickness, g(state.thickness), n, 0};
      return out;
    }
    if (n == horizon) {
      PolicyOutcome out{now, StopReason::kForcedAtHorizon, state.thickness, g(state.thickness), n, 0};
      return out;
    }
    corrosion::encode_chain_entry(model.params(), state, last_inter_jump, observed);
    const InterventionPlan p = plan_refined(n, observed, ctx, dynamics, scratch);
    const auto [inter, cause] = sample_inter_jump_time(model, state, rng);
    if (p.delay && *p.delay <= inter) {
      const corrosion::CorrosionState stopped = model.flow(state, *p.delay);
      PolicyOutcome out{now + *p.delay, StopReason::kPlanned, stopped.thickness,
                        g(stopped.thickness), n, 0};
      return out;
    }
    if (!std::isfinite(inter))
      throw NumericalError("run_policy: open-ended segment with no planned intervention");
    const corrosion::CorrosionState at_jump = model.flow(state, inter);
    state = model.kernel(at_jump, rng);
    now += inter;
    last_inter_jump = inter;
    ++n;
  }
}

}  // namespace detail

inline void check_policy_artifacts(const SolveResult& solve, const QuantizedChain& chain,
                                   std::size_t horizon) {
  if (chain.horizon != horizon || solve.horizon != horizon)
    throw ConfigError("run_policy: artifacts were built for a different horizon");
  if (chain.points_per_grid != solve.points_per_grid)
    throw ConfigError("run_policy: artifacts disagree on the grid size");
  if (chain.config_hash != 0 && solve.config_hash != 0 && chain.config_hash != solve.config_hash)
    throw ArtifactMismatchError(
        "run_policy: chain and solve artifacts carry different config hashes");
}

/// Runs the maintenance rule on one fresh trajectory: at each observed
/// jump n < N, project (Z_n, S_n), recompute the maximizing date at the
/// observation with the projected cell's continuation, and either schedule
/// the intervention or wait. A jump before the scheduled time resets the
/// plan; entering the failed mode stops on the spot; the N-th jump forces
/// the intervention.
inline PolicyOutcome run_policy(const corrosion::CorrosionModel& model, const RewardFunction& g,
                                const corrosion::CorrosionState& z0, std::size_t horizon,
                                const SolveResult& solve, const QuantizedChain& chain, Rng& rng) {
  check_policy_artifacts(solve, chain, horizon);
  const PlanContext ctx = PlanContext::build(solve, chain);
  detail::RowScratch scratch;
  return detail::run_policy_impl(model, g, z0, horizon, ctx, rng, scratch);
}

struct EvaluateOptions {
  double histogram_bin_hours = 8760.0;           // one year
  std::vector<double> exceedance_dates_hours;    // empty: years 1..40
  unsigned threads = 0;
};

struct PolicySummary {
  std::uint64_t runs = 0;
  double mean_reward = 0.0;
  double reward_se = 0.0;
  std::vector<std::pair<double, double>> tau_quantiles;  // (probability, tau hours)
  Histogram tau_histogram;
  std::vector<std::pair<double, double>> exceedance;  // (t hours, P(tau <= t))
  std::uint64_t stops_planned = 0;
  std::uint64_t stops_forced = 0;
  std::uint64_t stops_boundary = 0;
};

/// Monte Carlo evaluation of the rule over independent runs, each with its
/// own child stream and a fresh initial state. Outcomes land in run order,
/// so results do not depend on the thread count.
inline std::pair<PolicySummary, std::vector<PolicyOutcome>> evaluate_policy(
    const corrosion::CorrosionModel& model, const RewardFunction& g, std::size_t horizon,
    const SolveResult& solve, const QuantizedChain& chain, std::uint64_t runs, std::uint64_t seed,
    const EvaluateOptions& options = {}) {
  if (runs < 1) throw std::invalid_argument("evaluate_policy: need at least one run");
  check_policy_artifacts(solve, chain, horizon);
  const PlanContext ctx = PlanContext::build(solve, chain);
  std::vector<PolicyOutcome> outcomes(runs);
  for_each_chunk(runs, 1024, options.threads,
                 [&](std::uint64_t, std::uint64_t begin, std::uint64_t end) {
                   detail::RowScratch scratch;
                   for (std::uint64_t run = begin; run < end; ++run) {
                     const std::uint64_t run_seed = child_seed(seed, run);
                     Rng rng(run_seed);
                     const auto z0 = model.sample_initial(rng);
                     outcomes[run] =
                         detail::run_policy_impl(model, g, z0, horizon, ctx, rng, scratch);
                     outcomes[run].seed = run_seed;
                   }
                 });

  PolicySummary summary;
  summary.runs = runs;
  std::vector<double> rewards(runs), taus(runs);
  for (std::uint64_t r = 0; r < runs; ++r) {
    rewards[r] = outcomes[r].reward;
    taus[r] = outcomes[r].stop_time;
    switch (outcomes[r].reason) {
      case StopReason::kPlanned: ++summary.stops_planned; break;
      case StopReason::kForcedAtHorizon: ++summary.stops_forced; break;
      case StopReason::kBoundary: ++summary.stops_boundary; break;
    }
  }
  summary.mean_reward = mean(rewards);
  summary.reward_se = standard_error(rewards);
  summary.tau_histogram = make_histogram(taus, options.histogram_bin_hours);

  std::sort(taus.begin(), taus.end());
  for (double p : {0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99})
    summary.tau_quantiles.emplace_back(p, quantile_sorted(taus, p));

  std::vector<double> dates = options.exceedance_dates_hours;
  if (dates.empty())
    for (int year = 1; year <= 40; ++year) dates.push_back(8760.0 * year);
  for (double t : dates) {
    const auto le = std::upper_bound(taus.begin(), taus.end(), t) - taus.begin();
    summary.exceedance.emplace_back(t, static_cast<double>(le) / static_cast<double>(runs));
  }
  return {std::move(summary), std::move(outcomes)};
}

}  // namespace pdmp
