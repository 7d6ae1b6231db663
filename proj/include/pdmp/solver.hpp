#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdmp/errors.hpp"
#include "pdmp/parallel.hpp"
#include "pdmp/quantizer.hpp"

namespace pdmp {

/// What the solver needs to know about the process behind the grid points.
/// Points are raw quantization coordinates with the inter-jump time as the
/// last coordinate; the state part is everything before it.
///
/// stop_reward(p, t) is the reward collected when stopping t hours after
/// the jump that produced p. monotone_breaks(p, t_max, out) must append
/// every time in (0, t_max) at which t -> stop_reward(p, t) may change
/// monotonicity direction; between consecutive breaks the reward must be
/// monotone. It is consulted only for time grids too large to enumerate.
template <typename D>
concept OperatorDynamics = requires(const D& d, std::span<const double> p, double t,
                                    std::vector<double>& breaks) {
  { d.boundary_time(p) } -> std::convertible_to<double>;
  { d.absorbing(p) } -> std::convertible_to<bool>;
  { d.stop_reward(p, t) } -> std::convertible_to<double>;
  { d.monotone_breaks(p, t, breaks) };
};

/// Candidate stopping times t_i = i * step for 1 <= i <= count. count is
/// floor(t*/step) - 1, one less when t*/step divides exactly, so the
/// largest candidate stays strictly below t* - step.
struct TimeGrid {
  double step = 0.0;
  std::int64_t count = 0;

  double time(std::int64_t i) const { return static_cast<double>(i) * step; }
};

inline TimeGrid make_time_grid(double t_star, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("make_time_grid: step must be positive");
  if (!std::isfinite(t_star)) throw std::invalid_argument("make_time_grid: infinite boundary time");
  const double q = t_star / step;
  if (q >= 9.0e18) throw NumericalError("make_time_grid: time grid overflows the index range");
  std::int64_t n = static_cast<std::int64_t>(std::floor(q)) - 1;
  if (std::floor(q) == q) --n;
  while (n >= 1 && !(static_cast<double>(n) * step < t_star - step)) --n;
  if (n < 0) n = 0;
  return {step, n};
}

/// One step size for every time grid, from the smallest boundary time over
/// all grid points: step = min t* / (target_points + 2), which keeps every
/// grid nonempty. Absorbing points carry no time grid and are skipped.
template <OperatorDynamics D>
double choose_time_step(const QuantizedChain& chain, const D& dynamics,
                        std::int64_t target_points) {
  if (target_points < 1) throw std::invalid_argument("choose_time_step: need target_points >= 1");
  double min_t = std::numeric_limits<double>::infinity();
  bool found = false;
  for (const auto& grid : chain.grids) {
    for (std::size_t i = 0; i < grid.count(); ++i) {
      const auto p = grid.point(i);
      if (dynamics.absorbing(p)) continue;
      const double t = dynamics.boundary_time(p);
      if (!std::isfinite(t))
        throw ConfigError("choose_time_step: infinite boundary time at stage " +
                          std::to_string(grid.stage) + ", point " + std::to_string(i) +
                          "; time grids require a model with a bounded domain");
      if (t <= 0.0) continue;
      min_t = std::min(min_t, t);
      found = true;
    }
  }
  if (!found)
    throw ConfigError("choose_time_step: no grid point admits a time grid");
  return min_t / static_cast<double>(target_points + 2);
}

/// Conditional expectation of stage-n values given point i of grid n-1:
/// a plain weighted sum over transition row i.
inline double quantized_expectation(const QuantizedChain& chain, std::size_t n,
                                    std::span<const double> values_next, std::size_t i) {
  const auto& matrix = chain.transition(n);
  const std::size_t K = chain.points_per_grid;
  if (values_next.size() != K)
    throw std::invalid_argument("quantized_expectation: value vector size mismatch");
  const double* row = matrix.data() + i * K;
  double acc = 0.0;
  for (std::size_t j = 0; j < K; ++j) acc += row[j] * values_next[j];
  return acc;
}

struct OperatorResult {
  double value = 0.0;
  double continue_value = 0.0;
  double best_time = std::numeric_limits<double>::quiet_NaN();
  bool stopped = false;
  bool low_confidence = false;
};

namespace detail {

/// Atoms of the inter-jump coordinate of one grid, sorted ascending with
/// the original index carried along. Shared by every row of a stage.
struct StageAtoms {
  std::vector<std::uint32_t> order;
  std::vector<double> svals;  // sorted

  static StageAtoms build(const Grid& grid) {
    const std::size_t K = grid.count();
    const std::size_t s_coord = grid.dim - 1;
    StageAtoms ctx;
    ctx.order.resize(K);
    for (std::size_t j = 0; j < K; ++j) ctx.order[j] = static_cast<std::uint32_t>(j);
    std::sort(ctx.order.begin(), ctx.order.end(), [&](std::uint32_t a, std::uint32_t b) {
      const double sa = grid.points[a * grid.dim + s_coord];
      const double sb = grid.points[b * grid.dim + s_coord];
      return sa != sb ? sa < sb : a < b;
    });
    ctx.svals.resize(K);
    for (std::size_t r = 0; r < K; ++r)
      ctx.svals[r] = grid.points[ctx.order[r] * grid.dim + s_coord];
    return ctx;
  }
};

/// Scratch shared by consecutive rows of one stage.
struct RowScratch {
  std::vector<double> prefix_value;  // A_r = sum of P[i][j] w_j over the r smallest atoms
  std::vector<double> prefix_mass;   // B_r = corresponding probability mass
  std::vector<double> breaks;
  std::vector<std::int64_t> candidates;
};

// Above kEnumerateMax candidate times, rows switch from enumerating the
// whole time grid to evaluating only segment ends and monotonicity breaks.
inline constexpr std::int64_t kEnumerateMax = 2048;

inline std::int64_t first_grid_index_above(double v, double step, std::int64_t count) {
  if (!(v >= 0.0)) return 1;  // segment opens at -inf
  std::int64_t i = static_cast<std::int64_t>(v / step);
  i = std::max<std::int64_t>(1, i - 1);
  while (i <= count && !(v < static_cast<double>(i) * step)) ++i;
  return i;  // count + 1 when no grid time exceeds v
}

/// Core of one operator application: conditioning state z, transition row
/// `row` over the stage-n grid, stage-n values w. z need not be a grid
/// point; the stopping rule re-maximizes at the true observed state with
/// the projected cell's row.
template <OperatorDynamics D>
OperatorResult apply_operator_at(const QuantizedChain& chain, const D& dynamics,
                                 const StageAtoms& atoms, std::size_t n,
                                 std::span<const double> w, std::span<const double> z,
                                 const double* row, bool flagged, double step,
                                 RowScratch& scratch) {
  const std::size_t K = chain.points_per_grid;

  OperatorResult out;
  out.low_confidence = flagged;

  // Prefix sums in atom order; the full sums give the continue branch.
  scratch.prefix_value.resize(K + 1);
  scratch.prefix_mass.resize(K + 1);
  scratch.prefix_value[0] = 0.0;
  scratch.prefix_mass[0] = 0.0;
  for (std::size_t r = 0; r < K; ++r) {
    const double p = row[atoms.order[r]];
    scratch.prefix_value[r + 1] = scratch.prefix_value[r] + p * w[atoms.order[r]];
    scratch.prefix_mass[r + 1] = scratch.prefix_mass[r] + p;
  }
  out.continue_value = scratch.prefix_value[K];

  // The operator at an absorbing point degenerates: the state is frozen,
  // so both branches equal the immediate reward.
  if (dynamics.absorbing(z)) {
    out.value = dynamics.stop_reward(z, 0.0);
    out.continue_value = out.value;
    return out;
  }

  const double t_star = dynamics.boundary_time(z);
  if (!std::isfinite(t_star))
    throw ConfigError("apply_operator: infinite boundary time at a non-absorbing point");
  const TimeGrid grid = make_time_grid(t_star, step);

  double best = -std::numeric_limits<double>::infinity();
  double best_u = std::numeric_limits<double>::quiet_NaN();
  const auto& A = scratch.prefix_value;
  const auto& B = scratch.prefix_mass;

  // J(u) = E[ w(next) 1{S < u} + g(flow(z, u)) 1{S >= u} ]
  //      = A_r(u) + stop_reward(z, u) * (1 - B_r(u)),
  // with r(u) the number of atoms strictly below u. Ties S == u take the
  // reward branch, hence the strict comparison.
  auto consider = [&](double u, std::size_t r) {
    const double j = A[r] + dynamics.stop_reward(z, u) * (1.0 - B[r]);
    if (j > best) {
      best = j;
      best_u = u;
    }
  };

  if (grid.count >= 1 && grid.count <= kEnumerateMax) {
    std::size_t r = 0;
    for (std::int64_t iu = 1; iu <= grid.count; ++iu) {
      const double u = grid.time(iu);
      while (r < K && atoms.svals[r] < u) ++r;
      consider(u, r);
    }
  } else if (grid.count > kEnumerateMax) {
    // Segment decomposition. Between consecutive distinct atom values the
    // prefix split (A, B) is frozen, so J is a monotone transformation of
    // the stop reward; between the dynamics' breakpoints that reward is
    // monotone in u. The maximum over grid times inside a segment is
    // therefore attained at a grid time adjacent to a segment end or a
    // breakpoint, and only those candidates need evaluating. Candidates
    // are visited in ascending u with strict improvement, which preserves
    // the lowest-u tie rule of full enumeration.
    scratch.breaks.clear();
    dynamics.monotone_breaks(z, grid.time(grid.count), scratch.breaks);
    std::sort(scratch.breaks.begin(), scratch.breaks.end());
    std::size_t next_break = 0;

    auto& candidates = scratch.candidates;
    double prev_v = -std::numeric_limits<double>::infinity();
    std::size_t r_cum = 0;
    std::size_t a = 0;  // position in sorted atoms
    while (true) {
      // Current segment is (prev_v, seg_hi], with r_cum atoms strictly below.
      const bool last_segment = a >= K;
      const double seg_hi = last_segment ? std::numeric_limits<double>::infinity()
                                         : atoms.svals[a];
      const std::int64_t lo_i = first_grid_index_above(prev_v, step, grid.count);
      std::int64_t hi_i;
      if (last_segment || !(seg_hi < grid.time(grid.count))) {
        hi_i = grid.count;
      } else {
        hi_i = first_grid_index_above(seg_hi, step, grid.count) - 1;
      }
      if (lo_i <= hi_i) {
        candidates.clear();
        candidates.push_back(lo_i);
        while (next_break < scratch.breaks.size() &&
               (last_segment || !(seg_hi < scratch.breaks[next_break]))) {
          const double b = scratch.breaks[next_break++];
          if (!(b > prev_v)) continue;
          const std::int64_t after = first_grid_index_above(b, step, grid.count);
          if (after - 1 >= lo_i && after - 1 <= hi_i) candidates.push_back(after - 1);
          if (after >= lo_i && after <= hi_i) candidates.push_back(after);
        }
        candidates.push_back(hi_i);
        std::sort(candidates.begin(), candidates.end());
        for (std::size_t c = 0; c < candidates.size(); ++c) {
          if (c > 0 && candidates[c] == candidates[c - 1]) continue;
          consider(grid.time(candidates[c]), r_cum);
        }
      } else {
        // No grid times in this segment; still consume its breakpoints.
        while (next_break < scratch.breaks.size() &&
               (last_segment || !(seg_hi < scratch.breaks[next_break])))
          ++next_break;
      }
      if (last_segment) break;
      // Absorb the atom group at seg_hi and move on.
      prev_v = seg_hi;
      while (a < K && atoms.svals[a] == seg_hi) {
        ++a;
        ++r_cum;
      }
      if (lo_i > grid.count) break;  // no grid times remain to the right
    }
  }

  if (best > out.continue_value) {
    out.value = best;
    out.best_time = best_u;
    out.stopped = true;
  } else {
    out.value = out.continue_value;
  }
  return out;
}

template <OperatorDynamics D>
OperatorResult apply_operator_row(const QuantizedChain& chain, const D& dynamics,
                                  const StageAtoms& atoms, std::size_t n,
                                  std::span<const double> w, std::size_t i, double step,
                                  RowScratch& scratch) {
  const Grid& from = chain.grid(n - 1);
  const double* row = chain.transition(n).data() + i * chain.points_per_grid;
  return apply_operator_at(chain, dynamics, atoms, n, w, from.point(i), row,
                           chain.row_flagged(n, i), step, scratch);
}

}  // namespace detail

/// One application of the discretized dynamic-programming operator at
/// point i of grid n-1, given the stage-n values w. Exposed for tests;
/// backward_solve shares this row computation.
template <OperatorDynamics D>
OperatorResult apply_operator(const QuantizedChain& chain, const D& dynamics, std::size_t n,
                              std::span<const double> w, std::size_t i, double step) {
  if (n < 1 || n > chain.horizon) throw std::out_of_range("apply_operator: stage out of range");
  if (w.size() != chain.points_per_grid)
    throw std::invalid_argument("apply_operator: value vector size mismatch");
  const auto atoms = detail::StageAtoms::build(chain.grid(n));
  detail::RowScratch scratch;
  return detail::apply_operator_row(chain, dynamics, atoms, n, w, i, step, scratch);
}

/// Values and maximizer records of one backward stage: stage n holds the
/// approximate value function v_{n-1} on grid n-1, together with the
/// stopping time that realized the maximum (when the stop branch won).
struct PointRecord {
  double value = 0.0;
  double continue_value = 0.0;
  double best_time = std::numeric_limits<double>::quiet_NaN();
  std::uint8_t stopped = 0;
  std::uint8_t low_confidence = 0;
};

struct ValueStage {
  std::size_t stage = 0;  // n in 1..N; records live on grid n-1
  std::vector<PointRecord> points;
};

struct SolveDiagnostics {
  double step = 0.0;
  double min_boundary_time = 0.0;
  std::uint64_t flagged_rows = 0;      // flagged transition rows encountered
  std::uint64_t absorbing_points = 0;  // grid points valued as absorbing
};

struct SolveResult {
  std::size_t horizon = 0;
  std::size_t points_per_grid = 0;
  double step = 0.0;
  std::vector<double> terminal_values;   // v_N on grid N
  std::vector<ValueStage> stages;        // stages[k] is stage k+1, on grid k
  double v0 = 0.0;
  SolveDiagnostics diagnostics;
  std::uint64_t config_hash = 0;

  const ValueStage& stage(std::size_t n) const { return stages.at(n - 1); }
};

/// Backward dynamic programming over the quantized chain: v_N = g on the
/// terminal grid, then one operator application per stage down to stage 1.
/// v0 is the stage-0 value averaged under the trained stage-0 weights,
/// approximating the expected value over the (random) initial state.
template <OperatorDynamics D>
SolveResult backward_solve(const QuantizedChain& chain, const D& dynamics, double step,
                           unsigned threads = 0) {
  const std::size_t N = chain.horizon;
  const std::size_t K = chain.points_per_grid;
  if (N < 1) throw std::invalid_argument("backward_solve: horizon must be >= 1");
  if (chain.grids.size() != N + 1)
    throw std::invalid_argument("backward_solve: grid count does not match the horizon");
  if (!(step > 0.0)) throw std::invalid_argument("backward_solve: step must be positive");

  SolveResult result;
  result.horizon = N;
  result.points_per_grid = K;
  result.step = step;
  result.config_hash = chain.config_hash;
  result.diagnostics.step = step;

  double min_boundary = std::numeric_limits<double>::infinity();
  std::uint64_t absorbing = 0;
  for (const auto& grid : chain.grids)
    for (std::size_t i = 0; i < grid.count(); ++i) {
      const auto p = grid.point(i);
      if (dynamics.absorbing(p)) {
        ++absorbing;
        continue;
      }
      min_boundary = std::min(min_boundary, dynamics.boundary_time(p));
    }
  result.diagnostics.min_boundary_time = min_boundary;
  result.diagnostics.absorbing_points = absorbing;

  result.terminal_values.resize(K);
  for (std::size_t j = 0; j < K; ++j)
    result.terminal_values[j] = dynamics.stop_reward(chain.grid(N).point(j), 0.0);

  result.stages.resize(N);
  std::vector<double> w = result.terminal_values;
  std::vector<double> w_next(K);
  for (std::size_t n = N; n >= 1; --n) {
    const auto atoms = detail::StageAtoms::build(chain.grid(n));
    ValueStage& stage = result.stages[n - 1];
    stage.stage = n;
    stage.points.resize(K);
    for_each_chunk(K, 64, threads, [&](std::uint64_t, std::uint64_t begin, std::uint64_t end) {
      detail::RowScratch scratch;
      for (std::uint64_t i = begin; i < end; ++i) {
        const OperatorResult r =
            detail::apply_operator_row(chain, dynamics, atoms, n, w, i, step, scratch);
        stage.points[i] =
            PointRecord{r.value, r.continue_value, r.best_time,
                        static_cast<std::uint8_t>(r.stopped ? 1 : 0),
                        static_cast<std::uint8_t>(r.low_confidence ? 1 : 0)};
        w_next[i] = r.value;
      }
    });
    for (std::size_t i = 0; i < K; ++i)
      if (stage.points[i].low_confidence) ++result.diagnostics.flagged_rows;
    w = w_next;
  }

  const auto& weights0 = chain.grid(0).weights;
  double v0 = 0.0;
  for (std::size_t i = 0; i < K; ++i) v0 += weights0[i] * result.stages[0].points[i].value;
  result.v0 = v0;
  return result;
}

}  // namespace pdmp
