#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pdmp/errors.hpp"
#include "pdmp/rng.hpp"

namespace pdmp {

inline constexpr double kInfiniteTime = std::numeric_limits<double>::infinity();

/// A hybrid state: discrete mode plus Euclidean coordinates. Models with
/// richer semantics (named fields) can use their own state type; the
/// process machinery only touches states through the model interface.
template <std::size_t Dim>
struct HybridState {
  int mode = 0;
  std::array<double, Dim> position{};

  friend bool operator==(const HybridState&, const HybridState&) = default;
};

/// The local characteristics of a piecewise-deterministic process:
/// deterministic flow between jumps, jump intensity along the flow, the
/// post-jump transition kernel and the time to the domain boundary.
///
/// `boundary_hit_within(z, t)` must return the boundary time when it is
/// <= t and nullopt otherwise; models with an expensive exact boundary
/// solve can make the miss case cheap. `constant_intensity_along_flow()`
/// declares that intensity(flow(z, s)) == intensity(z) for all s, which
/// switches the integrated intensity and its inversion to closed forms.
template <typename M>
concept PdmpModel = requires(const M& m, const typename M::State& z, double t, Rng& rng) {
  typename M::State;
  { m.flow(z, t) } -> std::same_as<typename M::State>;
  { m.intensity(z) } -> std::convertible_to<double>;
  { m.kernel(z, rng) } -> std::same_as<typename M::State>;
  { m.boundary_time(z) } -> std::convertible_to<double>;
  { m.boundary_hit_within(z, t) } -> std::convertible_to<std::optional<double>>;
  { m.is_absorbing(z) } -> std::convertible_to<bool>;
  { m.finite(z) } -> std::convertible_to<bool>;
  { m.constant_intensity_along_flow() } -> std::convertible_to<bool>;
};

enum class JumpCause : std::uint8_t { kRandom = 0, kBoundary = 1 };

inline const char* to_string(JumpCause c) {
  return c == JumpCause::kRandom ? "random" : "boundary";
}

template <typename State>
struct JumpRecord {
  std::size_t index = 0;     // n >= 1
  double jump_time = 0.0;    // T_n
  State post_jump{};         // Z_n
  double inter_jump = 0.0;   // S_n
  JumpCause cause = JumpCause::kRandom;
};

/// A simulated path up to its horizon: the initial state plus the jump
/// records. The state between jumps is reconstructed by flowing from the
/// last post-jump state, so this is a complete description of the path.
template <typename State>
struct Trajectory {
  State initial{};
  std::size_t horizon = 0;
  std::vector<JumpRecord<State>> jumps;

  double last_jump_time() const { return jumps.empty() ? 0.0 : jumps.back().jump_time; }
};

namespace detail {

/// Adaptive trapezoid refinement; exact for integrands that are linear in s.
template <typename F>
double adaptive_trapezoid(F&& f, double a, double b, double fa, double fb, double coarse,
                          double rel_tol, int depth) {
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  const double left = 0.5 * (m - a) * (fa + fm);
  const double right = 0.5 * (b - m) * (fm + fb);
  const double fine = left + right;
  if (depth <= 0 || std::abs(fine - coarse) <= rel_tol * std::abs(fine) + 1e-300) return fine;
  return adaptive_trapezoid(f, a, m, fa, fm, left, rel_tol, depth - 1) +
         adaptive_trapezoid(f, m, b, fm, fb, right, rel_tol, depth - 1);
}

}  // namespace detail

/// Integrated jump intensity along the flow from z over [0, t].
/// Closed form lambda * t when the model declares constant intensity along
/// flows; otherwise adaptive trapezoid quadrature to relative 1e-8.
template <PdmpModel M>
double cumulative_intensity(const M& model, const typename M::State& z, double t) {
  if (t < 0.0) throw std::domain_error("cumulative_intensity: negative duration");
  if (t > model.boundary_time(z))
    throw std::domain_error("cumulative_intensity: duration exceeds the boundary time");
  if (t == 0.0) return 0.0;
  if (model.constant_intensity_along_flow()) return model.intensity(z) * t;
  auto f = [&](double s) { return model.intensity(model.flow(z, s)); };
  const double fa = f(0.0);
  const double fb = f(t);
  return detail::adaptive_trapezoid(f, 0.0, t, fa, fb, 0.5 * t * (fa + fb), 1e-8, 48);
}

/// Draws the next inter-jump time from z. The survival law is
/// exp(-Lambda(z, t)) below the boundary time; all remaining mass sits on
/// the boundary time itself, triggering a deterministic jump. Implemented
/// by comparing a unit exponential variate E against the integrated
/// intensity: boundary hit iff Lambda(z, t*) <= E.
template <PdmpModel M>
std::pair<double, JumpCause> sample_inter_jump_time(const M& model, const typename M::State& z,
                                                    Rng& rng) {
  const double e = rng.exponential_unit();
  if (model.constant_intensity_along_flow()) {
    const double rate = model.intensity(z);
    if (rate <= 0.0) {
      const double t_star = model.boundary_time(z);
      return {t_star, JumpCause::kBoundary};  // no random jumps at all
    }
    const double candidate = e / rate;
    if (auto hit = model.boundary_hit_within(z, candidate))
      return {*hit, JumpCause::kBoundary};
    return {candidate, JumpCause::kRandom};
  }

  const double t_star = model.boundary_time(z);
  if (std::isfinite(t_star) && cumulative_intensity(model, z, t_star) <= e)
    return {t_star, JumpCause::kBoundary};

  // Invert Lambda(z, t) = e for monotone Lambda by bisection.
  double hi = std::isfinite(t_star) ? t_star : 1.0;
  if (!std::isfinite(t_star)) {
    int doublings = 0;
    while (cumulative_intensity(model, z, hi) < e) {
      hi *= 2.0;
      if (++doublings > 300) return {kInfiniteTime, JumpCause::kRandom};  // jump unreachable
    }
  }
  double lo = 0.0;
  const double tol = 1e-6 * hi;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (cumulative_intensity(model, z, mid) < e ? lo : hi) = mid;
  }
  return {0.5 * (lo + hi), JumpCause::kRandom};
}

/// Core jump loop shared by the trajectory simulator and the training
/// sample streams. Calls on_jump(record) after every jump; stops at
/// max_jumps, at an absorbing state, or when on_jump returns false.
template <PdmpModel M, typename OnJump>
void walk_jumps(const M& model, const typename M::State& z0, std::size_t max_jumps, Rng& rng,
                OnJump&& on_jump) {
  typename M::State state = z0;
  double now = 0.0;
  for (std::size_t n = 1; n <= max_jumps; ++n) {
    if (model.is_absorbing(state)) return;
    const auto [inter, cause] = sample_inter_jump_time(model, state, rng);
    if (!std::isfinite(inter)) return;  // no further jump can occur
    const typename M::State at_jump = model.flow(state, inter);
    typename M::State next = model.kernel(at_jump, rng);
    now += inter;
    if (!model.finite(next))
      throw NumericalError("simulate: non-finite state at jump " + std::to_string(n));
    JumpRecord<typename M::State> record{n, now, next, inter, cause};
    if (!on_jump(record)) return;
    state = std::move(next);
  }
}

/// Simulates the process from z0 until the horizon-th jump (fewer only if
/// an absorbing state is reached). The (Z_n, S_n) list inside the result
/// is the embedded chain of the process. Deterministic given (z0, seed).
template <PdmpModel M>
Trajectory<typename M::State> simulate(const M& model, const typename M::State& z0,
                                       std::size_t horizon, Rng& rng) {
  if (horizon < 1) throw std::invalid_argument("simulate: horizon must be >= 1");
  if (!model.finite(z0)) throw std::invalid_argument("simulate: non-finite initial state");
  Trajectory<typename M::State> traj;
  traj.initial = z0;
  traj.horizon = horizon;
  traj.jumps.reserve(horizon);
  walk_jumps(model, z0, horizon, rng, [&](const JumpRecord<typename M::State>& r) {
    traj.jumps.push_back(r);
    return true;
  });
  return traj;
}

/// State at absolute time t, reconstructed by flowing from the last
/// post-jump state at or before t. Right-continuous at jump times.
template <PdmpModel M>
typename M::State state_at(const M& model, const Trajectory<typename M::State>& traj, double t) {
  if (t < 0.0 || t > traj.last_jump_time())
    throw std::out_of_range("state_at: time outside the simulated horizon");
  const typename M::State* base = &traj.initial;
  double base_time = 0.0;
  for (const auto& jump : traj.jumps) {
    if (jump.jump_time > t) break;
    base = &jump.post_jump;
    base_time = jump.jump_time;
  }
  return model.flow(*base, t - base_time);
}

}  // namespace pdmp
