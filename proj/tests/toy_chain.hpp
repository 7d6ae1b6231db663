#pragma once

// Hand-buildable quantized chains and a one-dimensional dynamics for
// solver and policy tests. Points are [x, s] with the inter-jump time
// in the last coordinate; the state x grows linearly at unit speed.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pdmp/quantizer.hpp"
#include "pdmp/reward.hpp"
#include "pdmp/rng.hpp"

namespace toys {

/// Deterministic growth x(t) = x + speed * t on [0, limit]; the reward of
/// stopping at t is g(x + speed * t). The boundary is the time x reaches
/// the limit.
struct LineDynamics {
  double speed = 1.0;
  double limit = 1.0;
  pdmp::RewardFunction g;

  double boundary_time(std::span<const double> p) const {
    const double x = p[0];
    return x >= limit ? 0.0 : (limit - x) / speed;
  }
  bool absorbing(std::span<const double>) const { return false; }
  double stop_reward(std::span<const double> p, double t) const { return g(p[0] + speed * t); }
  void monotone_breaks(std::span<const double> p, double t_max, std::vector<double>& out) const {
    for (const auto& knot : g.knots()) {
      if (knot.first <= p[0]) continue;
      const double t = (knot.first - p[0]) / speed;
      if (t > 0.0 && t < t_max) out.push_back(t);
    }
  }
};

inline pdmp::QuantizedChain make_chain(std::size_t N, std::size_t K,
                                       std::vector<std::vector<double>> stage_points,
                                       std::vector<std::vector<double>> transitions,
                                       std::vector<double> weights0 = {}) {
  pdmp::QuantizedChain chain;
  chain.horizon = N;
  chain.points_per_grid = K;
  chain.dim = 2;
  chain.norm = pdmp::WeightedNorm({1.0, 1.0});
  chain.grids.resize(N + 1);
  for (std::size_t n = 0; n <= N; ++n) {
    chain.grids[n].stage = n;
    chain.grids[n].dim = 2;
    chain.grids[n].points = stage_points.at(n);
    chain.grids[n].weights.assign(K, 1.0 / static_cast<double>(K));
  }
  if (!weights0.empty()) chain.grids[0].weights = std::move(weights0);
  chain.transitions = std::move(transitions);
  chain.flagged_rows.assign(N, std::vector<std::uint8_t>(K, 0));
  chain.meta.sample_count = 1;
  chain.meta.stage_distortion.assign(N + 1, 0.0);
  return chain;
}

/// Random toy instance: K points per grid with x in [0, x_max], s in
/// [0, s_max], random row-stochastic transitions, random hill-shaped
/// reward.
struct ToyInstance {
  pdmp::QuantizedChain chain;
  LineDynamics dynamics;
};

inline ToyInstance random_instance(pdmp::Rng& rng, std::size_t max_k = 3, std::size_t max_n = 3) {
  const std::size_t K = 1 + static_cast<std::size_t>(rng.uniform01() * static_cast<double>(max_k));
  const std::size_t N = 1 + static_cast<std::size_t>(rng.uniform01() * static_cast<double>(max_n));
  std::vector<std::vector<double>> points(N + 1);
  for (auto& pts : points)
    for (std::size_t i = 0; i < K; ++i) {
      pts.push_back(rng.uniform(0.0, 0.8));   // x
      pts.push_back(rng.uniform(0.0, 2.0));   // s
    }
  std::vector<std::vector<double>> transitions(N, std::vector<double>(K * K, 0.0));
  for (auto& matrix : transitions)
    for (std::size_t i = 0; i < K; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        matrix[i * K + j] = rng.uniform(0.01, 1.0);
        sum += matrix[i * K + j];
      }
      for (std::size_t j = 0; j < K; ++j) matrix[i * K + j] /= sum;
    }
  std::vector<double> w0(K, 0.0);
  double w_sum = 0.0;
  for (auto& w : w0) {
    w = rng.uniform(0.1, 1.0);
    w_sum += w;
  }
  for (auto& w : w0) w /= w_sum;

  ToyInstance inst;
  inst.chain = make_chain(N, K, std::move(points), std::move(transitions), std::move(w0));
  const double peak = rng.uniform(0.3, 0.9);
  const double top = rng.uniform(1.0, 5.0);
  inst.dynamics = LineDynamics{1.0, 1.0,
                               pdmp::RewardFunction({{0.0, rng.uniform(0.0, 0.5)},
                                                     {peak, top},
                                                     {1.0, rng.uniform(0.0, 0.8)}},
                                                    0.0)};
  return inst;
}

}  // namespace toys
