#pragma once

#include <algorithm>
#include <stdexcept>
#include <utility>
#include <vector>

namespace pdmp {

/// Continuous piecewise-affine function of the thickness loss, defined by
/// (abscissa, value) knots with strictly increasing abscissae. Left of the
/// first knot the first value extends flat; right of the last knot the
/// configured tail value applies.
class RewardFunction {
 public:
  RewardFunction() = default;
  RewardFunction(std::vector<std::pair<double, double>> knots, double tail_value)
      : knots_(std::move(knots)), tail_(tail_value) {
    validate();
  }

  /// The reward used throughout the corrosion study: worthless while the
  /// structure is nearly intact, peaking at 4 just before the 0.2 mm
  /// failure threshold, worthless again once past it.
  static RewardFunction corrosion_default() {
    return RewardFunction({{0.0, 0.0}, {0.15, 1.0}, {0.18, 4.0}, {0.20, 1.0}, {0.25, 0.0}}, 0.0);
  }

  double operator()(double x) const {
    if (knots_.empty()) return tail_;
    if (x <= knots_.front().first) return knots_.front().second;
    if (x > knots_.back().first) return tail_;
    auto hi = std::upper_bound(knots_.begin(), knots_.end(), x,
                               [](double v, const auto& k) { return v < k.first; });
    const auto& b = *hi;
    const auto& a = *(hi - 1);
    const double t = (x - a.first) / (b.first - a.first);
    return a.second + t * (b.second - a.second);
  }

  const std::vector<std::pair<double, double>>& knots() const { return knots_; }
  double tail_value() const { return tail_; }

  double max_value() const {
    double m = tail_;
    for (const auto& k : knots_) m = std::max(m, k.second);
    return m;
  }

  double min_value() const {
    double m = tail_;
    for (const auto& k : knots_) m = std::min(m, k.second);
    return m;
  }

 private:
  void validate() const {
    for (std::size_t i = 1; i < knots_.size(); ++i)
      if (!(knots_[i - 1].first < knots_[i].first))
        throw std::invalid_argument("RewardFunction: knot abscissae must be strictly increasing");
  }

  std::vector<std::pair<double, double>> knots_;
  double tail_ = 0.0;
};

}  // namespace pdmp
