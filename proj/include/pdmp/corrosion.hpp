#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdmp/process.hpp"
#include "pdmp/reward.hpp"
#include "pdmp/rng.hpp"

namespace pdmp::corrosion {

/// Absorbing mode entered when the thickness loss reaches the failure
/// threshold. Encoded as coordinate 0 in quantization space.
inline constexpr int kFailedMode = 0;

struct EnvironmentParams {
  double mean_sojourn_hours = 0.0;  // mean of the exponential sojourn
  double transition_hours = 0.0;    // corrosion ramp-in period eta
  double rate_low = 0.0;            // corrosion rate range, mm/hour
  double rate_high = 0.0;
};

struct CorrosionParams {
  std::array<EnvironmentParams, 3> envs{};
  double weibull_shape = 0.0;       // alpha
  double weibull_scale_hours = 0.0; // beta
  double failure_threshold_mm = 0.0;

  /// Workshop / submarine in operation / dry-dock, with the initial
  /// protection lasting Weibull(2.5, 11800 h) and failure at 0.2 mm.
  static CorrosionParams defaults() {
    CorrosionParams p;
    p.envs[0] = {17520.0, 30000.0, 1e-6, 1e-5};
    p.envs[1] = {131400.0, 200000.0, 1e-7, 1e-6};
    p.envs[2] = {8760.0, 40000.0, 1e-6, 1e-5};
    p.weibull_shape = 2.5;
    p.weibull_scale_hours = 11800.0;
    p.failure_threshold_mm = 0.2;
    return p;
  }

  void validate() const {
    for (std::size_t i = 0; i < envs.size(); ++i) {
      const auto& e = envs[i];
      if (!(e.mean_sojourn_hours > 0.0) || !(e.transition_hours > 0.0))
        throw std::invalid_argument("environment " + std::to_string(i + 1) +
                                    ": sojourn and transition periods must be positive");
      if (!(e.rate_low > 0.0) || !(e.rate_low < e.rate_high))
        throw std::invalid_argument("environment " + std::to_string(i + 1) +
                                    ": need 0 < rate_low < rate_high");
    }
    if (!(weibull_shape > 0.0) || !(weibull_scale_hours > 0.0))
      throw std::invalid_argument("Weibull parameters must be positive");
    if (!(failure_threshold_mm > 0.0))
      throw std::invalid_argument("failure threshold must be positive");
  }
};

/// State of the corroding structure. `protection` is a signed clock that
/// depletes at unit rate in every environment: the nonnegative part is the
/// remaining life of the initial anti-corrosion treatment, and once it
/// runs out the clock keeps counting (negative) how long ago it expired.
/// The clock is carried through jumps untouched, so the corrosion ramp
/// matures once and for all instead of restarting at each environment
/// change; that memory is also what makes the flow a semigroup. The
/// observable remainder is protection_remaining().
struct CorrosionState {
  int mode = 1;            // 1..3 operating, kFailedMode absorbing
  double thickness = 0.0;  // accumulated loss d, mm
  double protection = 0.0; // signed protection clock, hours
  double rate = 0.0;       // current corrosion rate rho, mm/hour

  double protection_remaining() const { return protection > 0.0 ? protection : 0.0; }

  friend bool operator==(const CorrosionState&, const CorrosionState&) = default;
};

/// Thickness lost after t hours in an environment with ramp period eta,
/// starting with gamma hours of protection left:
///   0                                          if t <= gamma,
///   rate * (t - (gamma+eta) + eta*e^{-(t-gamma)/eta})   otherwise.
/// Continuous and nondecreasing in t; the corrosion rate ramps from 0 to
/// `rate` with time constant eta once the protection is gone.
inline double thickness_increment(double rate, double gamma, double eta, double t) {
  if (rate <= 0.0 || eta <= 0.0 || gamma < 0.0 || t < 0.0)
    throw std::domain_error("thickness_increment: arguments out of domain");
  if (t <= gamma) return 0.0;
  const double tau = t - gamma;
  return rate * (tau + eta * std::expm1(-tau / eta));
}

namespace detail {

/// Increment for a signed protection clock. For clock < 0 the ramp has
/// been running for -clock hours already, so the rate starts at
/// rate * (1 - e^{clock/eta}) instead of zero. Additive along the flow by
/// construction (it is the integral of the ramped rate), which is exactly
/// the semigroup property.
inline double increment_from_clock(double rate, double clock, double eta, double t) {
  if (clock >= 0.0) {
    if (t <= clock) return 0.0;
    const double tau = t - clock;
    return rate * (tau + eta * std::expm1(-tau / eta));
  }
  return rate * (t + eta * std::exp(clock / eta) * std::expm1(-t / eta));
}

/// Smallest t with increment_from_clock(t) >= target, by bisection that
/// keeps increment(lo) < target <= increment(hi) and returns hi. Rounding
/// up guarantees that flowing for the returned duration really reaches the
/// target in the same floating-point arithmetic.
inline double increment_inverse(double rate, double clock, double eta, double target) {
  if (target <= 0.0) return 0.0;
  double lo = clock > 0.0 ? clock : 0.0;
  double hi = lo + target / rate + eta;
  while (increment_from_clock(rate, clock, eta, hi) < target) hi += target / rate + eta;
  while (hi - lo > 1e-6) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (increment_from_clock(rate, clock, eta, mid) < target ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace detail

/// The corrosion process: three environments visited cyclically with
/// exponential sojourns, a fresh uniformly drawn corrosion rate per visit,
/// and deterministic thickness growth between jumps. Reaching the failure
/// threshold is a boundary jump into the absorbing failed mode.
class CorrosionModel {
 public:
  using State = CorrosionState;

  explicit CorrosionModel(CorrosionParams params) : params_(params) { params_.validate(); }

  const CorrosionParams& params() const { return params_; }
  double failure_threshold() const { return params_.failure_threshold_mm; }

  const EnvironmentParams& environment(int mode) const {
    if (mode < 1 || mode > 3) throw std::domain_error("environment: mode must be 1..3");
    return params_.envs[static_cast<std::size_t>(mode - 1)];
  }

  State flow(const State& z, double t) const {
    if (t < 0.0) throw std::domain_error("flow: negative duration");
    if (z.mode == kFailedMode || t == 0.0) return z;
    const double eta = environment(z.mode).transition_hours;
    State out = z;
    out.protection = z.protection - t;
    out.thickness = z.thickness + detail::increment_from_clock(z.rate, z.protection, eta, t);
    return out;
  }

  /// Constant per mode: 1 / mean sojourn. Zero in the failed mode.
  double intensity(const State& z) const {
    if (z.mode == kFailedMode) return 0.0;
    return 1.0 / environment(z.mode).mean_sojourn_hours;
  }

  /// Applied to the flow endpoint at the jump time. An environment change
  /// cycles 1 -> 2 -> 3 -> 1 and redraws the corrosion rate; thickness and
  /// the protection clock carry over continuously. If the threshold has
  /// been reached, the jump enters the absorbing failed mode instead.
  State kernel(const State& at_jump, Rng& rng) const {
    if (at_jump.mode == kFailedMode) return at_jump;
    State out;
    if (at_jump.thickness >= params_.failure_threshold_mm) {
      out.mode = kFailedMode;
      out.thickness = params_.failure_threshold_mm;
      out.protection = at_jump.protection;
      out.rate = at_jump.rate;  // frozen
      return out;
    }
    out.mode = at_jump.mode == 3 ? 1 : at_jump.mode + 1;
    out.thickness = at_jump.thickness;
    out.protection = at_jump.protection;
    const auto& env = environment(out.mode);
    out.rate = rng.uniform(env.rate_low, env.rate_high);
    return out;
  }

  /// Time for the thickness loss to reach the failure threshold; +inf in
  /// the failed mode (the domain there is unbounded, nothing flows).
  double boundary_time(const State& z) const {
    if (z.mode == kFailedMode) return kInfiniteTime;
    const double remaining = params_.failure_threshold_mm - z.thickness;
    if (remaining <= 0.0) return 0.0;
    return detail::increment_inverse(z.rate, z.protection, environment(z.mode).transition_hours,
                                     remaining);
  }

  /// Cheap test used on every simulated jump: one increment evaluation
  /// decides whether the boundary is hit within t; only an actual hit pays
  /// for the bisection.
  std::optional<double> boundary_hit_within(const State& z, double t) const {
    if (z.mode == kFailedMode) return std::nullopt;
    const double eta = environment(z.mode).transition_hours;
    const double remaining = params_.failure_threshold_mm - z.thickness;
    if (detail::increment_from_clock(z.rate, z.protection, eta, t) < remaining)
      return std::nullopt;
    return detail::increment_inverse(z.rate, z.protection, eta, remaining);
  }

  /// Time for the thickness to reach `level` mm along the flow from z
  /// (used to locate reward knots on a time grid); +inf if never reached.
  double time_to_thickness(const State& z, double level) const {
    if (level <= z.thickness) return 0.0;
    if (z.mode == kFailedMode) return kInfiniteTime;
    return detail::increment_inverse(z.rate, z.protection, environment(z.mode).transition_hours,
                                     level - z.thickness);
  }

  bool is_absorbing(const State& z) const { return z.mode == kFailedMode; }

  bool finite(const State& z) const {
    return (z.mode == kFailedMode || (z.mode >= 1 && z.mode <= 3)) && std::isfinite(z.thickness) &&
           std::isfinite(z.protection) && std::isfinite(z.rate);
  }

  bool constant_intensity_along_flow() const { return true; }

  /// Fresh structure in the workshop: no loss yet, protection drawn from
  /// Weibull(shape, scale), rate uniform in the workshop range. Draw order
  /// is protection first, then rate.
  State sample_initial(Rng& rng) const {
    State z;
    z.mode = 1;
    z.thickness = 0.0;
    z.protection = rng.weibull(params_.weibull_shape, params_.weibull_scale_hours);
    z.rate = rng.uniform(params_.envs[0].rate_low, params_.envs[0].rate_high);
    return z;
  }

 private:
  CorrosionParams params_;
};

static_assert(PdmpModel<CorrosionModel>);

/// Quantization coordinates of one embedded-chain entry:
/// [mode, thickness, protection clock, rate, inter-jump time]. The clock
/// is the signed value, so the post-jump pair stays a Markov chain: how
/// long ago the protection expired still shapes the corrosion ramp.
inline constexpr std::size_t kChainDim = 5;

/// Expired protection clocks are encoded through a bounded exponential
/// chart: once the ramp has matured (clock << -eta) states are dynamically
/// indistinguishable, so the chart maps them near a single point instead
/// of letting an unbounded coordinate eat the quantizer's resolution.
inline constexpr double kClockChartHours = 200000.0;

inline double compress_clock(double clock) {
  if (clock >= 0.0) return clock;
  return kClockChartHours * std::expm1(clock / kClockChartHours);
}

inline double expand_clock(double coord) {
  if (coord >= 0.0) return coord;
  const double floor = -kClockChartHours * (1.0 - 1e-12);
  return kClockChartHours * std::log1p(std::max(coord, floor) / kClockChartHours);
}

/// The corrosion rate is encoded relative to its mode's declared range,
/// so a slow environment's rates are resolved as finely as a fast one's;
/// the raw ranges differ by a factor of ten and a single pooled scale
/// would starve the slow mode of resolution.
inline double encode_rate(const CorrosionParams& params, int mode, double rate) {
  if (mode == kFailedMode) return 0.0;  // frozen, dynamically irrelevant
  const auto& env = params.envs[static_cast<std::size_t>(mode - 1)];
  return (rate - env.rate_low) / (env.rate_high - env.rate_low);
}

inline double decode_rate(const CorrosionParams& params, int mode, double coord) {
  if (mode == kFailedMode) return params.envs[0].rate_low;
  const auto& env = params.envs[static_cast<std::size_t>(mode - 1)];
  return std::clamp(env.rate_low + coord * (env.rate_high - env.rate_low), env.rate_low,
                    env.rate_high);
}

inline void encode_chain_entry(const CorrosionParams& params, const CorrosionState& z,
                               double inter_jump, std::span<double> out) {
  out[0] = static_cast<double>(z.mode == kFailedMode ? kFailedMode : z.mode);
  out[1] = z.thickness;
  out[2] = compress_clock(z.protection);
  out[3] = encode_rate(params, z.mode, z.rate);
  out[4] = inter_jump;
}

/// Streams independent embedded-chain realizations (Z_n, S_n), n = 0..N,
/// as rows of a (N+1) x kChainDim matrix. Runs absorbed before the horizon
/// are extended by repeating the absorbed state with zero inter-jump time,
/// so every stage always has a sample. Each run uses its own child stream
/// of `seed`, making the stream order-free and reproducible.
class CorrosionChainSource {
 public:
  CorrosionChainSource(const CorrosionModel& model, std::size_t horizon, std::uint64_t seed)
      : model_(&model), horizon_(horizon), seed_(seed) {}

  std::size_t horizon() const { return horizon_; }
  std::size_t dim() const { return kChainDim; }

  void operator()(std::uint64_t run, std::span<double> out) const {
    Rng rng(child_seed(seed_, run));
    CorrosionState state = model_->sample_initial(rng);
    const CorrosionParams& params = model_->params();
    encode_chain_entry(params, state, 0.0, out.subspan(0, kChainDim));
    std::size_t next_stage = 1;
    walk_jumps(*model_, state, horizon_, rng, [&](const JumpRecord<CorrosionState>& r) {
      encode_chain_entry(params, r.post_jump, r.inter_jump,
                         out.subspan(next_stage * kChainDim, kChainDim));
      state = r.post_jump;
      ++next_stage;
      return true;
    });
    for (; next_stage <= horizon_; ++next_stage)
      encode_chain_entry(params, state, 0.0, out.subspan(next_stage * kChainDim, kChainDim));
  }

 private:
  const CorrosionModel* model_;
  std::size_t horizon_;
  std::uint64_t seed_;
};

/// Reconstructs a CorrosionState from quantization coordinates. Trained
/// grid points are centroids, so the mode coordinate is rounded back to a
/// label and the Euclidean part is clamped into the state's valid ranges.
inline CorrosionState state_from_coords(const CorrosionModel& model, std::span<const double> c) {
  CorrosionState z;
  const double m = std::round(c[0]);
  z.mode = m <= 0.0 ? kFailedMode : (m >= 3.0 ? 3 : static_cast<int>(m));
  z.thickness = std::clamp(c[1], 0.0, model.failure_threshold());
  z.protection = expand_clock(c[2]);
  z.rate = decode_rate(model.params(), z.mode, c[3]);
  if (z.mode == kFailedMode) z.thickness = model.failure_threshold();
  return z;
}

/// Solver-facing view of the corrosion model: boundary times, the reward
/// collected by stopping t hours after a jump, and the times at which that
/// reward can change monotonicity (the end of the protection, plus the
/// crossing time of every reward knot — thickness grows monotonically, so
/// the reward is monotone between those).
class CorrosionDynamics {
 public:
  CorrosionDynamics(const CorrosionModel& model, const RewardFunction& reward)
      : model_(&model), reward_(&reward) {}

  double boundary_time(std::span<const double> point) const {
    return model_->boundary_time(state_from_coords(*model_, point));
  }

  bool absorbing(std::span<const double> point) const {
    return std::round(point[0]) <= static_cast<double>(kFailedMode);
  }

  double stop_reward(std::span<const double> point, double t) const {
    const CorrosionState z = state_from_coords(*model_, point);
    return (*reward_)(model_->flow(z, t).thickness);
  }

  void monotone_breaks(std::span<const double> point, double t_max,
                       std::vector<double>& out) const {
    const CorrosionState z = state_from_coords(*model_, point);
    if (z.protection > 0.0 && z.protection < t_max) out.push_back(z.protection);
    for (const auto& knot : reward_->knots()) {
      if (knot.first <= z.thickness) continue;
      const double t = model_->time_to_thickness(z, knot.first);
      if (t > 0.0 && t < t_max) out.push_back(t);
    }
  }

  const CorrosionModel& model() const { return *model_; }
  const RewardFunction& reward() const { return *reward_; }

 private:
  const CorrosionModel* model_;
  const RewardFunction* reward_;
};

}  // namespace pdmp::corrosion
