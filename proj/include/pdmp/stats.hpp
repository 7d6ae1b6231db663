#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace pdmp {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty input");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Unbiased sample standard deviation.
inline double sample_stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

inline double standard_error(std::span<const double> xs) {
  return sample_stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
}

/// Quantile with linear interpolation between order statistics
/// (the common "type 7" rule). `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty input");
  if (p <= 0.0) return sorted.front();
  if (p >= 1.0) return sorted.back();
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return quantile_sorted(xs, 0.5);
}

struct Histogram {
  double bin_width = 0.0;
  std::vector<std::size_t> counts;  // bin i covers [i*w, (i+1)*w)
};

inline Histogram make_histogram(std::span<const double> xs, double bin_width) {
  if (bin_width <= 0.0) throw std::invalid_argument("histogram: bin width must be positive");
  Histogram h;
  h.bin_width = bin_width;
  for (double x : xs) {
    const auto bin = static_cast<std::size_t>(std::max(0.0, x) / bin_width);
    if (bin >= h.counts.size()) h.counts.resize(bin + 1, 0);
    ++h.counts[bin];
  }
  return h;
}

}  // namespace pdmp
