#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdmp/parallel.hpp"

namespace pdmp {

/// Per-coordinate scaling of the Euclidean norm:
/// dist(x, y)^2 = sum_i ((x_i - y_i) / scale_i)^2. Distances are computed
/// with precomputed reciprocals so every caller sees identical rounding.
class WeightedNorm {
 public:
  WeightedNorm() = default;
  explicit WeightedNorm(std::vector<double> scales) : scale_(std::move(scales)) {
    inv_.reserve(scale_.size());
    for (double s : scale_) {
      if (!(s > 0.0) || !std::isfinite(s))
        throw std::invalid_argument("WeightedNorm: scales must be positive and finite");
      inv_.push_back(1.0 / s);
    }
  }

  std::size_t dim() const { return scale_.size(); }
  const std::vector<double>& scales() const { return scale_; }
  std::span<const double> inverse_scales() const { return inv_; }

  double squared_distance(std::span<const double> a, std::span<const double> b) const {
    double acc = 0.0;
    for (std::size_t c = 0; c < scale_.size(); ++c) {
      const double d = (a[c] - b[c]) * inv_[c];
      acc += d * d;
    }
    return acc;
  }

 private:
  std::vector<double> scale_;
  std::vector<double> inv_;
};

/// Row-major matrix of samples, one row per observation.
struct SampleMatrix {
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  void push_row(std::span<const double> r) { data.insert(data.end(), r.begin(), r.end()); }
};

/// Pooled per-coordinate standard deviation across all pilot stages,
/// floored at 1e-12 so degenerate coordinates cannot blow up the norm.
inline WeightedNorm estimate_scales(std::span<const SampleMatrix> stages) {
  std::size_t total = 0;
  std::size_t dim = 0;
  for (const auto& s : stages) {
    if (s.rows() == 0) continue;
    if (dim == 0) dim = s.dim;
    if (s.dim != dim) throw std::invalid_argument("estimate_scales: inconsistent dimensions");
    total += s.rows();
  }
  if (total == 0) throw std::invalid_argument("estimate_scales: empty pilot sample set");
  std::vector<double> mean(dim, 0.0);
  for (const auto& s : stages)
    for (std::size_t r = 0; r < s.rows(); ++r) {
      const auto row = s.row(r);
      for (std::size_t c = 0; c < dim; ++c) mean[c] += row[c];
    }
  for (double& m : mean) m /= static_cast<double>(total);
  std::vector<double> var(dim, 0.0);
  for (const auto& s : stages)
    for (std::size_t r = 0; r < s.rows(); ++r) {
      const auto row = s.row(r);
      for (std::size_t c = 0; c < dim; ++c) {
        const double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
  std::vector<double> scale(dim);
  for (std::size_t c = 0; c < dim; ++c)
    scale[c] = std::max(std::sqrt(var[c] / static_cast<double>(total)), 1e-12);
  return WeightedNorm(std::move(scale));
}

namespace detail {

template <std::size_t Dim>
std::size_t nearest_fixed(const double* points, std::size_t count, const double* x,
                          const double* inv, double* best_out) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  const double* p = points;
  for (std::size_t i = 0; i < count; ++i, p += Dim) {
    double acc = 0.0;
    for (std::size_t c = 0; c < Dim; ++c) {
      const double d = (x[c] - p[c]) * inv[c];
      acc += d * d;
    }
    if (acc < best) {
      best = acc;
      best_i = i;
    }
  }
  if (best_out) *best_out = best;
  return best_i;
}

inline std::size_t nearest_index(const double* points, std::size_t count, std::size_t dim,
                                 const double* x, const double* inv, double* best_out = nullptr) {
  switch (dim) {
    case 1: return nearest_fixed<1>(points, count, x, inv, best_out);
    case 2: return nearest_fixed<2>(points, count, x, inv, best_out);
    case 3: return nearest_fixed<3>(points, count, x, inv, best_out);
    case 4: return nearest_fixed<4>(points, count, x, inv, best_out);
    case 5: return nearest_fixed<5>(points, count, x, inv, best_out);
    case 6: return nearest_fixed<6>(points, count, x, inv, best_out);
    default: break;
  }
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  const double* p = points;
  for (std::size_t i = 0; i < count; ++i, p += dim) {
    double acc = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = (x[c] - p[c]) * inv[c];
      acc += d * d;
    }
    if (acc < best) {
      best = acc;
      best_i = i;
    }
  }
  if (best_out) *best_out = best;
  return best_i;
}

}  // namespace detail

/// One quantization grid: K points of dimension `dim` for one stage of the
/// embedded chain, plus the empirical probability of each point.
struct Grid {
  std::size_t stage = 0;
  std::size_t dim = 0;
  std::vector<double> points;   // K x dim, row-major
  std::vector<double> weights;  // K, sums to 1

  std::size_t count() const { return dim == 0 ? 0 : points.size() / dim; }
  std::span<const double> point(std::size_t i) const { return {points.data() + i * dim, dim}; }
};

/// Index of the grid point nearest to `point` under the weighted norm.
/// Ties resolve to the lowest index.
inline std::size_t nearest(const Grid& grid, std::span<const double> point,
                           const WeightedNorm& norm) {
  if (point.size() != grid.dim) throw std::invalid_argument("nearest: dimension mismatch");
  if (grid.count() == 0) throw std::invalid_argument("nearest: empty grid");
  return detail::nearest_index(grid.points.data(), grid.count(), grid.dim, point.data(),
                               norm.inverse_scales().data());
}

/// Root mean squared weighted distance from samples to their projections.
inline double distortion(const Grid& grid, const WeightedNorm& norm, const SampleMatrix& samples) {
  if (samples.rows() == 0) throw std::invalid_argument("distortion: no samples");
  double acc = 0.0;
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    double best = 0.0;
    detail::nearest_index(grid.points.data(), grid.count(), grid.dim, samples.row(r).data(),
                          norm.inverse_scales().data(), &best);
    acc += best;
  }
  return std::sqrt(acc / static_cast<double>(samples.rows()));
}

struct TrainingMeta {
  std::uint64_t sample_count = 0;
  std::uint64_t seed = 0;
  double step_a = 1.0;
  double step_b = 0.0;
  std::vector<double> stage_distortion;  // N+1 entries
};

/// Quantized embedded chain: one grid per stage 0..N, and for every stage
/// n >= 1 the empirical row-stochastic transition matrix between the points
/// of consecutive grids. transition(n)[i*K + j] estimates
/// P(projected pair at stage n = point j | projected pair at n-1 = point i).
struct QuantizedChain {
  std::size_t horizon = 0;         // N
  std::size_t points_per_grid = 0; // K
  std::size_t dim = 0;
  WeightedNorm norm;
  std::vector<Grid> grids;                       // N+1
  std::vector<std::vector<double>> transitions;  // N matrices, K x K
  std::vector<std::vector<std::uint8_t>> flagged_rows;  // N vectors of K flags
  TrainingMeta meta;
  std::uint64_t config_hash = 0;

  const Grid& grid(std::size_t stage) const { return grids.at(stage); }
  /// Matrix P_n from grid n-1 to grid n, for 1 <= n <= N.
  const std::vector<double>& transition(std::size_t n) const { return transitions.at(n - 1); }
  bool row_flagged(std::size_t n, std::size_t i) const { return flagged_rows.at(n - 1)[i] != 0; }
};

struct TrainOptions {
  std::uint64_t runs = 0;      // number of chain realizations to stream
  double step_a = 0.0;         // step size a / (b + k); 0 selects a = K
  double step_b = 0.0;         // 0 selects the default 10 * K
  unsigned threads = 0;        // counting pass only; 0 = hardware
  std::uint64_t seed = 0;      // recorded in metadata; the source owns randomness
};

/// Trains quantization grids for the chain streamed by `source`.
///
/// source(run, out) must fill out with (N+1) x dim coordinates for one
/// independent realization and be a pure function of `run`.
///
/// Competitive-learning pass: the first K distinct samples of each stage
/// become the initial points, every later sample pulls its nearest point
/// toward it by a / (b + k) in unscaled coordinates (nearest is taken
/// under the weighted norm). A second pass over the same stream freezes
/// the grids and counts marginal weights and stage-to-stage transition
/// frequencies. Rows never visited get a uniform distribution and a flag.
template <typename Source>
QuantizedChain train(Source&& source, std::size_t K, std::size_t N, std::size_t dim,
                     WeightedNorm norm, const TrainOptions& options) {
  if (K < 1) throw std::invalid_argument("train: K must be >= 1");
  if (dim == 0 || norm.dim() != dim) throw std::invalid_argument("train: dimension mismatch");
  if (options.runs == 0) throw std::invalid_argument("train: need at least one training run");
  // Auto defaults: a = K, b = 10 K gives an initial step of about 0.1 and
  // a per-point learning mass that grows like log(runs / K), so points
  // actually converge toward their cell means at any grid size.
  const double step_a = options.step_a > 0.0 ? options.step_a : static_cast<double>(K);
  const double step_b = options.step_b > 0.0 ? options.step_b : 10.0 * static_cast<double>(K);
  const std::size_t stages = N + 1;
  const std::uint64_t runs = options.runs;
  const double* inv = norm.inverse_scales().data();

  std::vector<std::vector<double>> points(stages, std::vector<double>(K * dim, 0.0));
  std::vector<std::size_t> filled(stages, 0);
  std::vector<std::uint64_t> updates(stages, 0);

  // Pass 1: competitive learning, strictly sequential in sample order.
  {
    std::vector<double> buf(stages * dim);
    for (std::uint64_t run = 0; run < runs; ++run) {
      source(run, std::span<double>(buf));
      for (std::size_t n = 0; n < stages; ++n) {
        const double* x = buf.data() + n * dim;
        auto& pts = points[n];
        if (filled[n] < K) {
          bool duplicate = false;
          for (std::size_t i = 0; i < filled[n] && !duplicate; ++i) {
            duplicate = std::equal(x, x + dim, pts.data() + i * dim);
          }
          if (!duplicate) {
            std::copy(x, x + dim, pts.data() + filled[n] * dim);
            ++filled[n];
          }
          continue;
        }
        const std::size_t i = detail::nearest_index(pts.data(), K, dim, x, inv);
        const double step = step_a / (step_b + static_cast<double>(++updates[n]));
        double* y = pts.data() + i * dim;
        for (std::size_t c = 0; c < dim; ++c) y[c] += step * (x[c] - y[c]);
      }
    }
    for (std::size_t n = 0; n < stages; ++n)
      if (filled[n] < K)
        throw std::invalid_argument("train: stage " + std::to_string(n) + " produced only " +
                                    std::to_string(filled[n]) + " distinct samples, need " +
                                    std::to_string(K));
  }

  // Pass 2: freeze the grids, project every run and count. Projection is
  // chunked for parallelism; counting itself is a cheap sequential sweep,
  // so the result does not depend on the thread count.
  std::vector<std::uint32_t> index(runs * stages);
  const std::uint64_t chunk = 4096;
  const std::uint64_t n_chunks = (runs + chunk - 1) / chunk;
  std::vector<double> sq_partial(n_chunks * stages, 0.0);
  for_each_chunk(runs, chunk, options.threads,
                 [&](std::uint64_t c, std::uint64_t begin, std::uint64_t end) {
                   std::vector<double> buf(stages * dim);
                   double* sq = sq_partial.data() + c * stages;
                   for (std::uint64_t run = begin; run < end; ++run) {
                     source(run, std::span<double>(buf));
                     for (std::size_t n = 0; n < stages; ++n) {
                       double best = 0.0;
                       index[run * stages + n] = static_cast<std::uint32_t>(detail::nearest_index(
                           points[n].data(), K, dim, buf.data() + n * dim, inv, &best));
                       sq[n] += best;
                     }
                   }
                 });

  QuantizedChain chain;
  chain.horizon = N;
  chain.points_per_grid = K;
  chain.dim = dim;
  chain.norm = std::move(norm);
  chain.meta.sample_count = runs;
  chain.meta.seed = options.seed;
  chain.meta.step_a = step_a;
  chain.meta.step_b = step_b;
  chain.meta.stage_distortion.assign(stages, 0.0);
  for (std::uint64_t c = 0; c < n_chunks; ++c)
    for (std::size_t n = 0; n < stages; ++n)
      chain.meta.stage_distortion[n] += sq_partial[c * stages + n];
  for (std::size_t n = 0; n < stages; ++n)
    chain.meta.stage_distortion[n] =
        std::sqrt(chain.meta.stage_distortion[n] / static_cast<double>(runs));

  std::vector<std::vector<std::uint64_t>> visits(stages, std::vector<std::uint64_t>(K, 0));
  chain.transitions.assign(N, std::vector<double>(K * K, 0.0));
  for (std::uint64_t run = 0; run < runs; ++run) {
    const std::uint32_t* idx = index.data() + run * stages;
    ++visits[0][idx[0]];
    for (std::size_t n = 1; n < stages; ++n) {
      ++visits[n][idx[n]];
      chain.transitions[n - 1][static_cast<std::size_t>(idx[n - 1]) * K + idx[n]] += 1.0;
    }
  }

  chain.grids.resize(stages);
  for (std::size_t n = 0; n < stages; ++n) {
    chain.grids[n].stage = n;
    chain.grids[n].dim = dim;
    chain.grids[n].points = std::move(points[n]);
    chain.grids[n].weights.resize(K);
    for (std::size_t i = 0; i < K; ++i)
      chain.grids[n].weights[i] =
          static_cast<double>(visits[n][i]) / static_cast<double>(runs);
  }

  chain.flagged_rows.assign(N, std::vector<std::uint8_t>(K, 0));
  for (std::size_t n = 0; n < N; ++n) {
    auto& matrix = chain.transitions[n];
    for (std::size_t i = 0; i < K; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < K; ++j) row_sum += matrix[i * K + j];
      if (row_sum <= 0.0) {
        const double u = 1.0 / static_cast<double>(K);
        for (std::size_t j = 0; j < K; ++j) matrix[i * K + j] = u;
        chain.flagged_rows[n][i] = 1;
      } else {
        for (std::size_t j = 0; j < K; ++j) matrix[i * K + j] /= row_sum;
      }
    }
  }
  return chain;
}

}  // namespace pdmp
