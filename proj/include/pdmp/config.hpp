#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pdmp/corrosion.hpp"
#include "pdmp/errors.hpp"
#include "pdmp/reward.hpp"
#include "pdmp/rng.hpp"

namespace pdmp {

/// How the configured sojourn and Weibull-scale numbers are read.
/// kMeanHours (default): sojourn values are mean sojourn times in hours
/// and the Weibull scale is in hours. kInverseHours: the same numbers are
/// rates per hour, so the means are their reciprocals.
enum class RateUnits { kMeanHours, kInverseHours };

/// Everything a pipeline run depends on. Loaded from a key = value file;
/// every artifact embeds artifact_hash() so later stages can refuse inputs
/// built from a different configuration.
struct RunConfig {
  // Corrosion model, in the configured units.
  std::array<double, 3> sojourn{17520.0, 131400.0, 8760.0};
  std::array<double, 3> transition_hours{30000.0, 200000.0, 40000.0};
  std::array<double, 3> rate_low{1e-6, 1e-7, 1e-6};
  std::array<double, 3> rate_high{1e-5, 1e-6, 1e-5};
  double weibull_shape = 2.5;
  double weibull_scale = 11800.0;
  RateUnits units = RateUnits::kMeanHours;
  double threshold_mm = 0.2;

  std::vector<std::pair<double, double>> reward_knots = {
      {0.0, 0.0}, {0.15, 1.0}, {0.18, 4.0}, {0.20, 1.0}, {0.25, 0.0}};
  double reward_tail = 0.0;

  std::size_t horizon = 25;       // N, jumps
  std::size_t grid_points = 1000; // K

  std::uint64_t train_runs = 0;   // 0: auto (1e6 when K >= 1000, else 1e5)
  std::uint64_t pilot_runs = 10000;
  double step_a = 0.0;            // 0: auto (K)
  double step_b = 0.0;            // 0: auto (10 * K)
  double mode_scale = 1e-3;       // norm scale of the mode coordinate

  std::int64_t time_target_points = 50;

  std::uint64_t evaluate_runs = 100000;
  double histogram_bin_years = 1.0;
  std::size_t report_paths = 5;

  std::uint64_t seed = 20260809;
  std::string output_dir = "out";
  unsigned threads = 0;
  bool quiet = false;

  std::uint64_t effective_train_runs() const {
    if (train_runs != 0) return train_runs;
    return grid_points >= 1000 ? 1000000ull : 100000ull;
  }

  corrosion::CorrosionParams corrosion_params() const {
    corrosion::CorrosionParams p;
    for (std::size_t i = 0; i < 3; ++i) {
      const double mean = units == RateUnits::kMeanHours ? sojourn[i] : 1.0 / sojourn[i];
      p.envs[i] = {mean, transition_hours[i], rate_low[i], rate_high[i]};
    }
    p.weibull_shape = weibull_shape;
    p.weibull_scale_hours =
        units == RateUnits::kMeanHours ? weibull_scale : 1.0 / weibull_scale;
    p.failure_threshold_mm = threshold_mm;
    return p;
  }

  RewardFunction reward_function() const { return RewardFunction(reward_knots, reward_tail); }

  void validate() const {
    try {
      corrosion_params().validate();
      reward_function();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
    if (horizon < 1) throw ConfigError("invalid configuration: horizon must be >= 1");
    if (grid_points < 1) throw ConfigError("invalid configuration: quantizer.points must be >= 1");
    if (pilot_runs < 1) throw ConfigError("invalid configuration: quantizer.pilot_runs must be >= 1");
    if (step_a < 0.0) throw ConfigError("invalid configuration: quantizer.step_a must be >= 0");
    if (step_b < 0.0) throw ConfigError("invalid configuration: quantizer.step_b must be >= 0");
    if (!(mode_scale > 0.0)) throw ConfigError("invalid configuration: quantizer.mode_scale must be > 0");
    if (time_target_points < 1)
      throw ConfigError("invalid configuration: solver.time_target_points must be >= 1");
    if (evaluate_runs < 1) throw ConfigError("invalid configuration: evaluate.runs must be >= 1");
    if (!(histogram_bin_years > 0.0))
      throw ConfigError("invalid configuration: report.histogram_bin_years must be > 0");
  }

  /// Canonical serialization of everything that shapes the artifacts
  /// (model, reward, horizon, quantizer, solver, seed). Evaluation and
  /// report settings are excluded: they do not change grids or values.
  std::string canonical_artifact_string() const {
    const corrosion::CorrosionParams p = corrosion_params();
    std::ostringstream s;
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      s << buf;
    };
    for (std::size_t i = 0; i < 3; ++i) {
      s << "env" << (i + 1) << "=";
      num(p.envs[i].mean_sojourn_hours);
      s << ",";
      num(p.envs[i].transition_hours);
      s << ",";
      num(p.envs[i].rate_low);
      s << ",";
      num(p.envs[i].rate_high);
      s << ";";
    }
    s << "weibull=";
    num(p.weibull_shape);
    s << ",";
    num(p.weibull_scale_hours);
    s << ";threshold=";
    num(p.failure_threshold_mm);
    s << ";reward=";
    for (const auto& [x, v] : reward_knots) {
      num(x);
      s << ":";
      num(v);
      s << ",";
    }
    num(reward_tail);
    s << ";horizon=" << horizon;
    s << ";K=" << grid_points;
    s << ";train_runs=" << effective_train_runs();
    s << ";pilot_runs=" << pilot_runs;
    s << ";step=";
    num(step_a > 0.0 ? step_a : static_cast<double>(grid_points));
    s << ",";
    num(step_b > 0.0 ? step_b : 10.0 * static_cast<double>(grid_points));
    s << ";mode_scale=";
    num(mode_scale);
    s << ";target_points=" << time_target_points;
    s << ";seed=" << seed;
    return s.str();
  }

  std::uint64_t artifact_hash() const {
    // FNV-1a, 64-bit.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical_artifact_string()) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number '" + value + "'");
  }
}

inline std::uint64_t parse_count(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer '" + value + "'");
  }
}

inline std::vector<std::pair<double, double>> parse_knots(const std::string& key,
                                                          const std::string& value) {
  std::vector<std::pair<double, double>> knots;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("config key '" + key + "': knot '" + item + "' is not thickness:value");
    knots.emplace_back(parse_number(key, trim(item.substr(0, colon))),
                       parse_number(key, trim(item.substr(colon + 1))));
  }
  if (knots.empty()) throw ConfigError("config key '" + key + "': no knots given");
  return knots;
}

}  // namespace detail

/// Applies one key = value setting. Shared by the file loader and tests.
inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_count;
  using detail::parse_number;
  auto env_index = [&](char c) -> std::size_t {
    if (c < '1' || c > '3') throw ConfigError("config: unknown environment in key '" + key + "'");
    return static_cast<std::size_t>(c - '1');
  };
  if (key.rfind("model.env", 0) == 0 && key.size() > 10) {
    const std::size_t i = env_index(key[9]);
    const std::string field = key.substr(11);
    if (key[10] != '.') throw ConfigError("config: unknown key '" + key + "'");
    if (field == "sojourn") cfg.sojourn[i] = parse_number(key, value);
    else if (field == "transition_hours") cfg.transition_hours[i] = parse_number(key, value);
    else if (field == "rate_low") cfg.rate_low[i] = parse_number(key, value);
    else if (field == "rate_high") cfg.rate_high[i] = parse_number(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
  } else if (key == "model.threshold_mm") {
    cfg.threshold_mm = parse_number(key, value);
  } else if (key == "model.weibull.shape") {
    cfg.weibull_shape = parse_number(key, value);
  } else if (key == "model.weibull.scale") {
    cfg.weibull_scale = parse_number(key, value);
  } else if (key == "model.lambda_beta_units") {
    if (value == "hours") cfg.units = RateUnits::kMeanHours;
    else if (value == "inverse-hours") cfg.units = RateUnits::kInverseHours;
    else throw ConfigError("config: model.lambda_beta_units must be 'hours' or 'inverse-hours'");
  } else if (key == "reward.knots") {
    cfg.reward_knots = detail::parse_knots(key, value);
  } else if (key == "reward.tail") {
    cfg.reward_tail = parse_number(key, value);
  } else if (key == "horizon") {
    cfg.horizon = parse_count(key, value);
  } else if (key == "quantizer.points") {
    cfg.grid_points = parse_count(key, value);
  } else if (key == "quantizer.train_runs") {
    cfg.train_runs = parse_count(key, value);
  } else if (key == "quantizer.pilot_runs") {
    cfg.pilot_runs = parse_count(key, value);
  } else if (key == "quantizer.step_a") {
    cfg.step_a = parse_number(key, value);
  } else if (key == "quantizer.step_b") {
    cfg.step_b = parse_number(key, value);
  } else if (key == "quantizer.mode_scale") {
    cfg.mode_scale = parse_number(key, value);
  } else if (key == "solver.time_target_points") {
    cfg.time_target_points = static_cast<std::int64_t>(parse_count(key, value));
  } else if (key == "evaluate.runs") {
    cfg.evaluate_runs = parse_count(key, value);
  } else if (key == "report.histogram_bin_years") {
    cfg.histogram_bin_years = parse_number(key, value);
  } else if (key == "report.paths") {
    cfg.report_paths = parse_count(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_count(key, value);
  } else if (key == "output_dir") {
    cfg.output_dir = value;
  } else if (key == "threads") {
    cfg.threads = static_cast<unsigned>(parse_count(key, value));
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

/// Parses a config file: one `key = value` per line, '#' starts a comment,
/// blank lines ignored, unknown keys rejected. Defaults reproduce the
/// standard corrosion study.
inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

// Substream identifiers of the master seed, one per pipeline stage.
inline constexpr std::uint64_t kPilotStream = 1;
inline constexpr std::uint64_t kTrainStream = 2;
inline constexpr std::uint64_t kEvaluateStream = 3;
inline constexpr std::uint64_t kSimulateStream = 4;
inline constexpr std::uint64_t kReportStream = 5;

inline std::uint64_t stage_seed(const RunConfig& cfg, std::uint64_t stream) {
  return child_seed(cfg.seed, stream);
}

}  // namespace pdmp
