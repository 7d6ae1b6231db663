#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdmp/corrosion.hpp"
#include "pdmp/errors.hpp"
#include "pdmp/policy.hpp"
#include "pdmp/process.hpp"
#include "pdmp/quantizer.hpp"
#include "pdmp/solver.hpp"

namespace pdmp {

namespace detail {

// Little-endian byte encoding, independent of the host order.

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

struct ByteReader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
  std::string context;

  void need(std::size_t n) {
    if (pos + n > data.size()) throw IoError(context + ": truncated file");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }
  void bytes(std::span<std::uint8_t> out) {
    need(out.size());
    std::memcpy(out.data(), data.data() + pos, out.size());
    pos += out.size();
  }
};

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline constexpr char kChainMagic[8] = {'P', 'D', 'Q', 'G', 'R', 'I', 'D', '1'};
inline constexpr char kSolveMagic[8] = {'P', 'D', 'Q', 'S', 'O', 'L', 'V', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

}  // namespace detail

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Quantized chain: versioned binary (bit-exact round trip) + lossless JSON.
// Layout: magic, version, N, K, dim, config hash, training metadata, norm
// scales, then per stage the points, weights and distortion, then per
// transition the row-stochastic matrix and the unvisited-row flags. All
// floats are little-endian IEEE 64-bit.
// ---------------------------------------------------------------------------

inline void save_chain(const QuantizedChain& chain, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(detail::kChainMagic), std::end(detail::kChainMagic));
  detail::put_u32(out, detail::kFormatVersion);
  detail::put_u64(out, chain.horizon);
  detail::put_u64(out, chain.points_per_grid);
  detail::put_u64(out, chain.dim);
  detail::put_u64(out, chain.config_hash);
  detail::put_u64(out, chain.meta.sample_count);
  detail::put_u64(out, chain.meta.seed);
  detail::put_f64(out, chain.meta.step_a);
  detail::put_f64(out, chain.meta.step_b);
  for (double s : chain.norm.scales()) detail::put_f64(out, s);
  for (const auto& grid : chain.grids) {
    for (double v : grid.points) detail::put_f64(out, v);
    for (double v : grid.weights) detail::put_f64(out, v);
    detail::put_f64(out, chain.meta.stage_distortion[grid.stage]);
  }
  for (std::size_t n = 0; n < chain.horizon; ++n) {
    for (double v : chain.transitions[n]) detail::put_f64(out, v);
    for (std::uint8_t f : chain.flagged_rows[n]) detail::put_u8(out, f);
  }
  detail::write_file(path, out);
}

inline QuantizedChain load_chain(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r{bytes, 0, "chain artifact " + path.string()};
  char magic[8];
  r.bytes(std::span<std::uint8_t>(reinterpret_cast<std::uint8_t*>(magic), 8));
  if (std::memcmp(magic, detail::kChainMagic, 8) != 0)
    throw ArtifactMismatchError(path.string() + ": not a quantized chain artifact");
  const std::uint32_t version = r.u32();
  if (version != detail::kFormatVersion)
    throw ArtifactMismatchError(path.string() + ": unsupported artifact version " +
                                std::to_string(version));
  QuantizedChain chain;
  chain.horizon = r.u64();
  chain.points_per_grid = r.u64();
  chain.dim = r.u64();
  chain.config_hash = r.u64();
  chain.meta.sample_count = r.u64();
  chain.meta.seed = r.u64();
  chain.meta.step_a = r.f64();
  chain.meta.step_b = r.f64();
  std::vector<double> scales(chain.dim);
  for (double& s : scales) s = r.f64();
  chain.norm = WeightedNorm(std::move(scales));
  const std::size_t K = chain.points_per_grid;
  chain.grids.resize(chain.horizon + 1);
  chain.meta.stage_distortion.resize(chain.horizon + 1);
  for (std::size_t n = 0; n <= chain.horizon; ++n) {
    Grid& g = chain.grids[n];
    g.stage = n;
    g.dim = chain.dim;
    g.points.resize(K * chain.dim);
    for (double& v : g.points) v = r.f64();
    g.weights.resize(K);
    for (double& v : g.weights) v = r.f64();
    chain.meta.stage_distortion[n] = r.f64();
  }
  chain.transitions.assign(chain.horizon, std::vector<double>(K * K));
  chain.flagged_rows.assign(chain.horizon, std::vector<std::uint8_t>(K));
  for (std::size_t n = 0; n < chain.horizon; ++n) {
    for (double& v : chain.transitions[n]) v = r.f64();
    for (std::uint8_t& f : chain.flagged_rows[n]) f = r.u8();
  }
  if (r.pos != bytes.size()) throw IoError(path.string() + ": trailing bytes");
  return chain;
}

inline nlohmann::json chain_to_json(const QuantizedChain& chain) {
  nlohmann::json j;
  j["format"] = "quantized-chain";
  j["version"] = detail::kFormatVersion;
  j["horizon"] = chain.horizon;
  j["points_per_grid"] = chain.points_per_grid;
  j["dim"] = chain.dim;
  j["config_hash"] = chain.config_hash;
  j["meta"] = {{"sample_count", chain.meta.sample_count},
               {"seed", chain.meta.seed},
               {"step_a", chain.meta.step_a},
               {"step_b", chain.meta.step_b}};
  j["scales"] = chain.norm.scales();
  auto& grids = j["grids"] = nlohmann::json::array();
  for (const auto& g : chain.grids) {
    nlohmann::json jg;
    jg["stage"] = g.stage;
    jg["points"] = g.points;
    jg["weights"] = g.weights;
    jg["distortion"] = chain.meta.stage_distortion[g.stage];
    grids.push_back(std::move(jg));
  }
  j["transitions"] = chain.transitions;
  j["flagged_rows"] = chain.flagged_rows;
  return j;
}

inline QuantizedChain chain_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != std::string("quantized-chain"))
    throw ArtifactMismatchError("chain JSON: wrong format tag");
  QuantizedChain chain;
  chain.horizon = j.at("horizon").get<std::size_t>();
  chain.points_per_grid = j.at("points_per_grid").get<std::size_t>();
  chain.dim = j.at("dim").get<std::size_t>();
  chain.config_hash = j.at("config_hash").get<std::uint64_t>();
  chain.meta.sample_count = j.at("meta").at("sample_count").get<std::uint64_t>();
  chain.meta.seed = j.at("meta").at("seed").get<std::uint64_t>();
  chain.meta.step_a = j.at("meta").at("step_a").get<double>();
  chain.meta.step_b = j.at("meta").at("step_b").get<double>();
  chain.norm = WeightedNorm(j.at("scales").get<std::vector<double>>());
  chain.meta.stage_distortion.resize(chain.horizon + 1);
  chain.grids.resize(chain.horizon + 1);
  for (const auto& jg : j.at("grids")) {
    const auto stage = jg.at("stage").get<std::size_t>();
    Grid& g = chain.grids.at(stage);
    g.stage = stage;
    g.dim = chain.dim;
    g.points = jg.at("points").get<std::vector<double>>();
    g.weights = jg.at("weights").get<std::vector<double>>();
    chain.meta.stage_distortion[stage] = jg.at("distortion").get<double>();
  }
  chain.transitions = j.at("transitions").get<std::vector<std::vector<double>>>();
  chain.flagged_rows = j.at("flagged_rows").get<std::vector<std::vector<std::uint8_t>>>();
  return chain;
}

// ---------------------------------------------------------------------------
// Solve artifact.
// ---------------------------------------------------------------------------

inline void save_solve(const SolveResult& result, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(detail::kSolveMagic), std::end(detail::kSolveMagic));
  detail::put_u32(out, detail::kFormatVersion);
  detail::put_u64(out, result.horizon);
  detail::put_u64(out, result.points_per_grid);
  detail::put_u64(out, result.config_hash);
  detail::put_f64(out, result.step);
  detail::put_f64(out, result.v0);
  detail::put_f64(out, result.diagnostics.min_boundary_time);
  detail::put_u64(out, result.diagnostics.flagged_rows);
  detail::put_u64(out, result.diagnostics.absorbing_points);
  for (double v : result.terminal_values) detail::put_f64(out, v);
  for (const auto& stage : result.stages) {
    detail::put_u64(out, stage.stage);
    for (const auto& p : stage.points) {
      detail::put_f64(out, p.value);
      detail::put_f64(out, p.continue_value);
      detail::put_f64(out, p.best_time);
      detail::put_u8(out, p.stopped);
      detail::put_u8(out, p.low_confidence);
    }
  }
  detail::write_file(path, out);
}

inline SolveResult load_solve(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r{bytes, 0, "solve artifact " + path.string()};
  char magic[8];
  r.bytes(std::span<std::uint8_t>(reinterpret_cast<std::uint8_t*>(magic), 8));
  if (std::memcmp(magic, detail::kSolveMagic, 8) != 0)
    throw ArtifactMismatchError(path.string() + ": not a solve artifact");
  const std::uint32_t version = r.u32();
  if (version != detail::kFormatVersion)
    throw ArtifactMismatchError(path.string() + ": unsupported artifact version " +
                                std::to_string(version));
  SolveResult result;
  result.horizon = r.u64();
  result.points_per_grid = r.u64();
  result.config_hash = r.u64();
  result.step = r.f64();
  result.diagnostics.step = result.step;
  result.v0 = r.f64();
  result.diagnostics.min_boundary_time = r.f64();
  result.diagnostics.flagged_rows = r.u64();
  result.diagnostics.absorbing_points = r.u64();
  result.terminal_values.resize(result.points_per_grid);
  for (double& v : result.terminal_values) v = r.f64();
  result.stages.resize(result.horizon);
  for (auto& stage : result.stages) {
    stage.stage = r.u64();
    stage.points.resize(result.points_per_grid);
    for (auto& p : stage.points) {
      p.value = r.f64();
      p.continue_value = r.f64();
      p.best_time = r.f64();
      p.stopped = r.u8();
      p.low_confidence = r.u8();
    }
  }
  if (r.pos != bytes.size()) throw IoError(path.string() + ": trailing bytes");
  return result;
}

// ---------------------------------------------------------------------------
// Corrosion trajectories (debug JSON), policy outcomes (CSV) and summary.
// ---------------------------------------------------------------------------

inline nlohmann::json state_to_json(const corrosion::CorrosionState& z) {
  return {{"mode", z.mode},
          {"position", {z.thickness, z.protection_remaining(), z.rate}}};
}

inline nlohmann::json trajectory_to_json(const Trajectory<corrosion::CorrosionState>& traj) {
  nlohmann::json j;
  j["initial"] = state_to_json(traj.initial);
  j["horizon"] = traj.horizon;
  auto& jumps = j["jumps"] = nlohmann::json::array();
  for (const auto& rec : traj.jumps) {
    jumps.push_back({{"n", rec.index},
                     {"time", rec.jump_time},
                     {"inter_jump", rec.inter_jump},
                     {"cause", to_string(rec.cause)},
                     {"state", state_to_json(rec.post_jump)}});
  }
  return j;
}

inline std::string outcomes_to_csv(std::span<const PolicyOutcome> outcomes) {
  std::string csv = "seed,tau_hours,reason,thickness_mm,reward,jumps\n";
  char line[192];
  for (const auto& o : outcomes) {
    std::snprintf(line, sizeof(line), "%llu,%.17g,%s,%.17g,%.17g,%zu\n",
                  static_cast<unsigned long long>(o.seed), o.stop_time, to_string(o.reason),
                  o.thickness_at_stop, o.reward, o.jumps_at_stop);
    csv += line;
  }
  return csv;
}

inline std::vector<PolicyOutcome> outcomes_from_csv(const std::string& csv) {
  std::vector<PolicyOutcome> out;
  std::size_t pos = csv.find('\n');
  if (pos == std::string::npos) throw IoError("outcomes CSV: missing header");
  ++pos;
  while (pos < csv.size()) {
    std::size_t eol = csv.find('\n', pos);
    if (eol == std::string::npos) eol = csv.size();
    const std::string line = csv.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    PolicyOutcome o;
    char reason[64] = {0};
    unsigned long long seed = 0;
    std::size_t jumps = 0;
    if (std::sscanf(line.c_str(), "%llu,%lg,%63[^,],%lg,%lg,%zu", &seed, &o.stop_time, reason,
                    &o.thickness_at_stop, &o.reward, &jumps) != 6)
      throw IoError("outcomes CSV: malformed line: " + line);
    o.seed = seed;
    o.jumps_at_stop = jumps;
    const std::string r = reason;
    if (r == "planned") o.reason = StopReason::kPlanned;
    else if (r == "forced-at-horizon") o.reason = StopReason::kForcedAtHorizon;
    else if (r == "boundary") o.reason = StopReason::kBoundary;
    else throw IoError("outcomes CSV: unknown stop reason: " + r);
    out.push_back(o);
  }
  return out;
}

inline nlohmann::json summary_to_json(const PolicySummary& s, std::uint64_t config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["runs"] = s.runs;
  j["mean_reward"] = s.mean_reward;
  j["reward_se"] = s.reward_se;
  auto& q = j["tau_quantiles"] = nlohmann::json::array();
  for (const auto& [p, tau] : s.tau_quantiles)
    q.push_back({{"p", p}, {"tau_hours", tau}, {"tau_years", tau / 8760.0}});
  j["histogram"] = {{"bin_hours", s.tau_histogram.bin_width}, {"counts", s.tau_histogram.counts}};
  auto& e = j["exceedance"] = nlohmann::json::array();
  for (const auto& [t, p] : s.exceedance)
    e.push_back({{"t_hours", t},
                 {"t_years", t / 8760.0},
                 {"p_maintenance_by_t", p},
                 {"p_no_maintenance_before_t", 1.0 - p}});
  j["stop_reasons"] = {{"planned", s.stops_planned},
                       {"forced_at_horizon", s.stops_forced},
                       {"boundary", s.stops_boundary}};
  return j;
}

}  // namespace pdmp
