#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "lvlab/dual.hpp"
#include "lvlab/dynamics.hpp"
#include "lvlab/graph.hpp"
#include "lvlab/graphical.hpp"
#include "lvlab/lazy_tree.hpp"
#include "lvlab/mixing.hpp"
#include "lvlab/reaction.hpp"
#include "lvlab/rng.hpp"

namespace lvlab {

inline constexpr const char* kVersion = "lvlab 0.1.0";

// ---------------------------------------------------------------------------
// Configuration files: strict line-oriented "key = value" format. Unknown
// keys are errors; every scenario declares exactly which keys it accepts.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string scenario;
  std::string degree_dist_text = "3:1.0";
  int n = 1000;
  std::uint64_t seed = 1;
  ModelKind kind = ModelKind::site;
  double lambda = 100.0;
  bool voter = false;  // run the lambda = infinity voter model instead
  double u0 = 0.5;
  double horizon = 5.0;
  double grid_step = 0.25;
  int replicates = 1;
  std::uint64_t max_events = 1000000000ULL;
  double epsilon = 0.03;
  int band_required = -1;  // persistence: required in-band count; -1 = 90%
  double tol_supgap = 0.1;
  int d_cut = 40;
  double time_cap = 1e4;
  long cp_replicates = 20000;
  std::string s_values_text = "1,2,4";
  std::string times_text = "0.25,0.5,1,2,4";
  double drift_epsilon = 0.1;
  double drift_fraction = 0.05;

  DegreeDistribution degree_dist() const {
    return parse_degree_dist(degree_dist_text);
  }

  std::vector<double> s_values() const { return parse_double_list(s_values_text, "s_values"); }
  std::vector<double> times() const { return parse_double_list(times_text, "times"); }

  static DegreeDistribution parse_degree_dist(const std::string& text) {
    DegreeDistribution d;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto colon = item.find(':');
      if (colon == std::string::npos)
        throw std::invalid_argument("degree_dist: expected degree:prob pairs, got '" +
                                    item + "'");
      int k = std::stoi(item.substr(0, colon));
      double p = std::stod(item.substr(colon + 1));
      d.probs[k] = p;
    }
    d.validate();
    return d;
  }

  static std::vector<double> parse_double_list(const std::string& text,
                                               const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw std::invalid_argument(key + ": bad number '" + item + "'");
      }
    }
    if (out.empty()) throw std::invalid_argument(key + ": empty list");
    return out;
  }
};

namespace detail {

struct KeySpec {
  const char* name;
  const char* help;
};

inline const std::vector<KeySpec>& config_key_specs() {
  static const std::vector<KeySpec> specs = {
      {"scenario", "scenario name; must match the subcommand when both given"},
      {"degree_dist", "degree law as degree:prob pairs, e.g. 3:0.5,4:0.5 (default 3:1.0)"},
      {"n", "number of nodes (default 1000)"},
      {"seed", "master seed; all streams derive from it (default 1)"},
      {"kind", "site | edge (default site)"},
      {"lambda", "latency recovery rate, > 0 (default 100)"},
      {"voter", "true/false: run the lambda=infinity voter model (default false)"},
      {"u0", "initial density of opinion 1 in [0,1] (default 0.5)"},
      {"horizon",
       "time horizon: rescaled t = s/lambda for latent dynamics, unrescaled when "
       "voter=true and for duality-check records (default 5)"},
      {"grid_step", "record grid spacing (default 0.25)"},
      {"replicates", "independent replicates (default 1)"},
      {"max_events", "per-replicate event budget (default 1e9)"},
      {"epsilon", "persistence band parameter; band is 1/2 +- 5 epsilon (default 0.03)"},
      {"band_required", "persistence: replicates required in band; -1 = 90% (default -1)"},
      {"tol_supgap", "ode-limit: pass threshold on the median sup gap (default 0.1)"},
      {"d_cut", "tree walks: separation declaring never-coalescence (default 40)"},
      {"time_cap", "tree walks: time cap per replicate (default 1e4)"},
      {"cp_replicates", "triple-walk replicates per root degree (default 20000)"},
      {"s_values", "crw-stats: comma list of durations (default 1,2,4)"},
      {"times", "mixing-report: comma list of times (default 0.25,0.5,1,2,4)"},
      {"drift_epsilon", "drift-gap: gap threshold (default 0.1)"},
      {"drift_fraction", "drift-gap: allowed fraction of samples over threshold (default 0.05)"},
  };
  return specs;
}

inline const std::map<std::string, std::set<std::string>>& scenario_keys() {
  static const std::map<std::string, std::set<std::string>> table = {
      {"generate", {"degree_dist", "n", "seed"}},
      {"simulate",
       {"degree_dist", "n", "seed", "kind", "lambda", "voter", "u0", "horizon",
        "grid_step", "replicates", "max_events"}},
      {"ode-limit",
       {"degree_dist", "n", "seed", "kind", "lambda", "u0", "horizon", "grid_step",
        "replicates", "max_events", "d_cut", "time_cap", "cp_replicates",
        "tol_supgap"}},
      {"persistence",
       {"degree_dist", "n", "seed", "kind", "lambda", "u0", "horizon", "grid_step",
        "replicates", "max_events", "epsilon", "band_required", "d_cut", "time_cap",
        "cp_replicates"}},
      {"crw-stats", {"degree_dist", "n", "seed", "kind", "s_values", "replicates"}},
      {"estimate-cp", {"degree_dist", "seed", "kind", "d_cut", "time_cap", "cp_replicates"}},
      {"duality-check",
       {"degree_dist", "n", "seed", "kind", "lambda", "voter", "u0", "horizon",
        "replicates"}},
      {"mixing-report", {"degree_dist", "n", "seed", "kind", "times"}},
      {"drift-gap",
       {"degree_dist", "n", "seed", "kind", "lambda", "u0", "horizon", "grid_step",
        "replicates", "max_events", "d_cut", "time_cap", "cp_replicates",
        "drift_epsilon", "drift_fraction"}},
  };
  return table;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    if constexpr (std::is_same_v<T, double>) {
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return x;
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      unsigned long long x = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return static_cast<std::uint64_t>(x);
    } else {
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
        throw std::invalid_argument("");
      return static_cast<T>(x);
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': bad value '" + v + "'");
  }
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  if (key == "scenario") cfg.scenario = value;
  else if (key == "degree_dist") cfg.degree_dist_text = value;
  else if (key == "n") cfg.n = parse_number<int>(value, key);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, key);
  else if (key == "kind") cfg.kind = parse_model_kind(value);
  else if (key == "lambda") cfg.lambda = parse_number<double>(value, key);
  else if (key == "voter") cfg.voter = parse_bool(value, key);
  else if (key == "u0") cfg.u0 = parse_number<double>(value, key);
  else if (key == "horizon") cfg.horizon = parse_number<double>(value, key);
  else if (key == "grid_step") cfg.grid_step = parse_number<double>(value, key);
  else if (key == "replicates") cfg.replicates = parse_number<int>(value, key);
  else if (key == "max_events") cfg.max_events = parse_number<std::uint64_t>(value, key);
  else if (key == "epsilon") cfg.epsilon = parse_number<double>(value, key);
  else if (key == "band_required") cfg.band_required = parse_number<int>(value, key);
  else if (key == "tol_supgap") cfg.tol_supgap = parse_number<double>(value, key);
  else if (key == "d_cut") cfg.d_cut = parse_number<int>(value, key);
  else if (key == "time_cap") cfg.time_cap = parse_number<double>(value, key);
  else if (key == "cp_replicates") cfg.cp_replicates = parse_number<long>(value, key);
  else if (key == "s_values") cfg.s_values_text = value;
  else if (key == "times") cfg.times_text = value;
  else if (key == "drift_epsilon") cfg.drift_epsilon = parse_number<double>(value, key);
  else if (key == "drift_fraction") cfg.drift_fraction = parse_number<double>(value, key);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

inline void validate_config(const ExperimentConfig& cfg) {
  const auto& table = detail::scenario_keys();
  if (!table.count(cfg.scenario))
    throw std::invalid_argument("unknown scenario '" + cfg.scenario + "'");
  if (cfg.n < 2) throw std::invalid_argument("config key 'n': must be >= 2");
  if (!(cfg.lambda > 0)) throw std::invalid_argument("config key 'lambda': must be > 0");
  if (cfg.u0 < 0 || cfg.u0 > 1)
    throw std::invalid_argument("config key 'u0': must lie in [0,1]");
  if (cfg.horizon < 0) throw std::invalid_argument("config key 'horizon': must be >= 0");
  if (!(cfg.grid_step > 0))
    throw std::invalid_argument("config key 'grid_step': must be > 0");
  if (cfg.replicates < 1)
    throw std::invalid_argument("config key 'replicates': must be >= 1");
  if (!(cfg.epsilon > 0)) throw std::invalid_argument("config key 'epsilon': must be > 0");
  if (cfg.d_cut < 2) throw std::invalid_argument("config key 'd_cut': must be >= 2");
  if (!(cfg.time_cap > 0))
    throw std::invalid_argument("config key 'time_cap': must be > 0");
  if (cfg.cp_replicates < 1)
    throw std::invalid_argument("config key 'cp_replicates': must be >= 1");
  if (!(cfg.tol_supgap > 0))
    throw std::invalid_argument("config key 'tol_supgap': must be > 0");
  if (!(cfg.drift_epsilon > 0))
    throw std::invalid_argument("config key 'drift_epsilon': must be > 0");
  if (cfg.drift_fraction < 0 || cfg.drift_fraction > 1)
    throw std::invalid_argument("config key 'drift_fraction': must lie in [0,1]");
  cfg.degree_dist();  // validates the law
  cfg.s_values();
  cfg.times();
}

// Parse a config file. scenario_override comes from the CLI subcommand; a
// scenario key inside the file must agree with it.
inline ExperimentConfig parse_config(const std::string& path,
                                     const std::string& scenario_override = "") {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config file not found: " + path);
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (seen.count(key))
      throw std::invalid_argument("config key '" + key + "' given twice");
    seen.insert(key);
    apply_config_entry(cfg, key, value);
  }
  if (!scenario_override.empty()) {
    if (!cfg.scenario.empty() && cfg.scenario != scenario_override)
      throw std::invalid_argument("config key 'scenario': file says '" + cfg.scenario +
                                  "' but the subcommand is '" + scenario_override + "'");
    cfg.scenario = scenario_override;
  }
  if (cfg.scenario.empty())
    throw std::invalid_argument("config key 'scenario': missing");
  const auto& allowed = detail::scenario_keys().at(cfg.scenario);
  for (const auto& key : seen)
    if (key != "scenario" && !allowed.count(key))
      throw std::invalid_argument("config key '" + key + "' is not accepted by scenario '" +
                                  cfg.scenario + "'");
  validate_config(cfg);
  return cfg;
}

// Canonical echo of the resolved config: the scenario's accepted keys with
// their final values, sorted, one per line. Reparsing reproduces the config.
inline std::string emit_resolved_config(const ExperimentConfig& cfg) {
  using detail::format_double;
  std::map<std::string, std::string> kv;
  kv["scenario"] = cfg.scenario;
  const auto& allowed = detail::scenario_keys().at(cfg.scenario);
  auto put = [&](const char* key, const std::string& value) {
    if (allowed.count(key)) kv[key] = value;
  };
  put("degree_dist", cfg.degree_dist_text);
  put("n", std::to_string(cfg.n));
  put("seed", std::to_string(cfg.seed));
  put("kind", to_string(cfg.kind));
  put("lambda", format_double(cfg.lambda));
  put("voter", cfg.voter ? "true" : "false");
  put("u0", format_double(cfg.u0));
  put("horizon", format_double(cfg.horizon));
  put("grid_step", format_double(cfg.grid_step));
  put("replicates", std::to_string(cfg.replicates));
  put("max_events", std::to_string(cfg.max_events));
  put("epsilon", format_double(cfg.epsilon));
  put("band_required", std::to_string(cfg.band_required));
  put("tol_supgap", format_double(cfg.tol_supgap));
  put("d_cut", std::to_string(cfg.d_cut));
  put("time_cap", format_double(cfg.time_cap));
  put("cp_replicates", std::to_string(cfg.cp_replicates));
  put("s_values", cfg.s_values_text);
  put("times", cfg.times_text);
  put("drift_epsilon", format_double(cfg.drift_epsilon));
  put("drift_fraction", format_double(cfg.drift_fraction));
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline std::string config_help_text() {
  std::string s = "Config file keys (line-oriented 'key = value'; '#' comments):\n";
  for (const auto& spec : detail::config_key_specs()) {
    s += "  ";
    s += spec.name;
    s += ": ";
    s += spec.help;
    s += "\n";
  }
  s += "\nScenarios and their accepted keys:\n";
  for (const auto& [name, keys] : detail::scenario_keys()) {
    s += "  " + name + ":";
    for (const auto& k : keys) s += " " + k;
    s += "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Scenario runner.
// ---------------------------------------------------------------------------

struct RunManifest {
  std::string scenario;
  std::string config_echo;
  std::vector<std::uint64_t> replicate_seeds;
  std::vector<std::string> outputs;
  double wall_clock_seconds = 0.0;
  std::string version = kVersion;
  bool all_invariants_pass = false;
};

namespace detail {

// Fixed stream purposes hanging off the master seed.
inline constexpr std::uint64_t kGraphPurpose = 0x47;     // 'G'
inline constexpr std::uint64_t kCpPurpose = 0x43;        // 'C'
inline constexpr std::uint64_t kInitPurpose = 0x49;      // 'I'
inline constexpr std::uint64_t kDynamicsPurpose = 0x44;  // 'D'
inline constexpr std::uint64_t kRecordPurpose = 0x52;    // 'R'

// Run fn(0..count-1) on a small thread pool. Work items write only to their
// own result slots, so the outputs are identical for any worker count.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  workers = std::max(1, workers);
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t pool_size = std::min<std::size_t>(workers, count);
  for (std::size_t w = 0; w < pool_size; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::string fmt9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

class OutputWriter {
 public:
  OutputWriter(std::filesystem::path dir, RunManifest& manifest)
      : dir_(std::move(dir)), manifest_(manifest) {
    std::filesystem::create_directories(dir_);
  }

  std::ofstream open(const std::string& name) {
    std::ofstream os(dir_ / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir_ / name).string());
    manifest_.outputs.push_back(name);
    return os;
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  RunManifest& manifest_;
};

inline Graph scenario_graph(const ExperimentConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kGraphPurpose));
  return sample_configuration_graph(cfg.degree_dist(), cfg.n, rng,
                                    /*require_connected=*/true);
}

inline double effective_lambda(const ExperimentConfig& cfg) {
  return cfg.voter ? std::numeric_limits<double>::infinity() : cfg.lambda;
}

}  // namespace detail

using InvariantFlags = std::map<std::string, bool>;

namespace detail {

struct ReplicateTrajectory {
  Trajectory traj;
  bool caches_consistent = true;
};

inline std::vector<ReplicateTrajectory> run_replicates(
    const ExperimentConfig& cfg, const Graph& g, int workers,
    std::optional<double> band_center = std::nullopt, double band_halfwidth = 0.0,
    double band_start = 0.0) {
  std::vector<ReplicateTrajectory> results(cfg.replicates);
  parallel_for(cfg.replicates, workers, [&](std::size_t r) {
    Rng init_rng(derive_seed(cfg.seed, kInitPurpose, r));
    Configuration init = Configuration::bernoulli(g, cfg.kind, cfg.u0, init_rng);
    SimParams p;
    p.lambda = effective_lambda(cfg);
    p.kind = cfg.kind;
    p.horizon = cfg.horizon;
    p.grid = uniform_grid(cfg.horizon, cfg.grid_step);
    p.seed = derive_seed(cfg.seed, kDynamicsPurpose, r);
    p.max_events = cfg.max_events;
    p.band_center = band_center;
    p.band_halfwidth = band_halfwidth;
    p.band_start = band_start;
    Configuration final_config;
    results[r].traj = simulate(g, p, init, &final_config);
    try {
      final_config.verify_caches(g, cfg.kind);
    } catch (const std::logic_error&) {
      results[r].caches_consistent = false;
    }
  });
  return results;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Individual scenarios. Each writes its CSVs through the OutputWriter and
// returns summary JSON plus pass/fail invariant flags.
// ---------------------------------------------------------------------------

namespace scenarios {

inline nlohmann::json run_generate(const ExperimentConfig& cfg, detail::OutputWriter& out,
                                   int /*workers*/, InvariantFlags& flags) {
  Graph g = detail::scenario_graph(cfg);
  {
    auto os = out.open("graph.txt");
    write_graph_file(g, os);
  }
  long handshake = 0;
  std::map<int, long> hist;
  for (int v = 0; v < g.n(); ++v) {
    handshake += g.degree(v);
    ++hist[g.degree(v)];
  }
  flags["simple_graph"] = true;  // enforced by construction (rejection)
  flags["handshake_identity"] = handshake == 2 * g.edge_count();
  flags["connected"] = g.is_connected();
  nlohmann::json j;
  j["n"] = g.n();
  j["edges"] = g.edge_count();
  j["max_degree"] = g.max_degree();
  nlohmann::json h = nlohmann::json::object();
  for (auto& [k, c] : hist) h[std::to_string(k)] = c;
  j["degree_histogram"] = h;
  return j;
}

inline nlohmann::json run_simulate(const ExperimentConfig& cfg, detail::OutputWriter& out,
                                   int workers, InvariantFlags& flags) {
  Graph g = detail::scenario_graph(cfg);
  auto results = detail::run_replicates(cfg, g, workers);

  bool in_range = true, caches = true;
  std::uint64_t events_total = 0, flips_total = 0;
  double final_mean = 0.0;
  for (int r = 0; r < cfg.replicates; ++r) {
    const auto& rt = results[r];
    char name[64];
    std::snprintf(name, sizeof(name), "traj_%04d.csv", r);
    auto os = out.open(name);
    os << "t,density,latent_frac\n";
    for (std::size_t i = 0; i < rt.traj.times.size(); ++i) {
      os << detail::fmt9(rt.traj.times[i]) << ',' << detail::fmt9(rt.traj.densities[i])
         << ',' << detail::fmt9(rt.traj.latent_fraction[i]) << '\n';
      if (rt.traj.densities[i] < 0 || rt.traj.densities[i] > 1) in_range = false;
    }
    caches = caches && rt.caches_consistent;
    events_total += rt.traj.event_count;
    flips_total += rt.traj.flip_count;
    final_mean += rt.traj.densities.empty() ? 0.0 : rt.traj.densities.back();
  }
  final_mean /= cfg.replicates;

  {
    auto os = out.open("batch_summary.txt");
    os << "replicates = " << cfg.replicates << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "events_total = " << events_total << "\n";
    os << "flips_total = " << flips_total << "\n";
    os << "mean_final_density = " << detail::fmt9(final_mean) << "\n";
  }

  flags["densities_in_range"] = in_range;
  flags["caches_consistent"] = caches;
  nlohmann::json j;
  j["events_total"] = events_total;
  j["flips_total"] = flips_total;
  j["mean_final_density"] = final_mean;
  return j;
}

inline nlohmann::json run_ode_limit(const ExperimentConfig& cfg, detail::OutputWriter& out,
                                    int workers, InvariantFlags& flags) {
  Graph g = detail::scenario_graph(cfg);
  CpSettings cps{cfg.d_cut, cfg.time_cap, cfg.cp_replicates,
                 derive_seed(cfg.seed, detail::kCpPurpose)};
  CpEstimate cp = estimate_cp(cfg.degree_dist(), cfg.kind, cps);

  std::vector<double> grid = uniform_grid(cfg.horizon, cfg.grid_step);
  OdeSolution ode = solve_ode(cp.cp, cfg.u0, grid);
  auto results = detail::run_replicates(cfg, g, workers);

  std::vector<double> supgap(cfg.replicates, 0.0);
  std::vector<double> mean_density(grid.size(), 0.0);
  for (int r = 0; r < cfg.replicates; ++r) {
    const auto& traj = results[r].traj;
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
      supgap[r] = std::max(supgap[r], std::abs(traj.densities[i] - ode.values[i]));
      mean_density[i] += traj.densities[i];
    }
  }
  for (auto& m : mean_density) m /= cfg.replicates;

  {
    auto os = out.open("ode_gap.csv");
    os << "t,mean_density,ode_u,abs_gap\n";
    for (std::size_t i = 0; i < grid.size(); ++i)
      os << detail::fmt9(grid[i]) << ',' << detail::fmt9(mean_density[i]) << ','
         << detail::fmt9(ode.values[i]) << ','
         << detail::fmt9(std::abs(mean_density[i] - ode.values[i])) << '\n';
  }

  std::vector<double> sorted = supgap;
  std::sort(sorted.begin(), sorted.end());
  double median = sorted[sorted.size() / 2];
  if (sorted.size() % 2 == 0)
    median = 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);

  flags["median_supgap_within_tol"] = median <= cfg.tol_supgap;
  nlohmann::json j;
  j["c_p"] = cp.cp;
  j["c_p_se"] = cp.se;
  j["supgap_per_replicate"] = supgap;
  j["median_supgap"] = median;
  j["tol_supgap"] = cfg.tol_supgap;
  return j;
}

inline nlohmann::json run_persistence(const ExperimentConfig& cfg,
                                      detail::OutputWriter& out, int workers,
                                      InvariantFlags& flags) {
  Graph g = detail::scenario_graph(cfg);
  CpSettings cps{cfg.d_cut, cfg.time_cap, cfg.cp_replicates,
                 derive_seed(cfg.seed, detail::kCpPurpose)};
  CpEstimate cp = estimate_cp(cfg.degree_dist(), cfg.kind, cps);
  double t0 = ode_band_entry_time(cp.cp, cfg.u0, cfg.epsilon, cfg.horizon);
  if (!std::isfinite(t0))
    throw std::invalid_argument(
        "persistence: the ODE never enters the epsilon band before the horizon; "
        "increase 'horizon' or 'epsilon'");

  auto results =
      detail::run_replicates(cfg, g, workers, 0.5, 5.0 * cfg.epsilon, t0);

  int in_band = 0;
  bool any_truncated = false;
  {
    auto os = out.open("persistence.csv");
    os << "replicate,first_exit,sup_dev,in_band\n";
    for (int r = 0; r < cfg.replicates; ++r) {
      const auto& traj = results[r].traj;
      double sup_dev = 0.0;
      for (std::size_t i = 0; i < traj.times.size(); ++i)
        if (traj.times[i] >= t0)
          sup_dev = std::max(sup_dev, std::abs(traj.densities[i] - 0.5));
      bool ok = !traj.first_band_exit.has_value();
      in_band += ok;
      any_truncated = any_truncated || traj.truncated;
      os << r << ','
         << (traj.first_band_exit ? detail::fmt9(*traj.first_band_exit) : "none") << ','
         << detail::fmt9(sup_dev) << ',' << (ok ? 1 : 0) << '\n';
    }
  }

  int required = cfg.band_required >= 0
                     ? cfg.band_required
                     : static_cast<int>(std::ceil(0.9 * cfg.replicates));
  flags["stays_in_band"] = in_band >= required;
  nlohmann::json j;
  j["c_p"] = cp.cp;
  j["t0"] = t0;
  j["band_halfwidth"] = 5.0 * cfg.epsilon;
  j["in_band_count"] = in_band;
  j["required"] = required;
  j["event_budget_truncated"] = any_truncated;
  return j;
}

inline nlohmann::json run_crw_stats(const ExperimentConfig& cfg, detail::OutputWriter& out,
                                    int workers, InvariantFlags& flags) {
  Graph g = detail::scenario_graph(cfg);
  auto svals = cfg.s_values();
  const int R = cfg.replicates;
  const int M = cfg.degree_dist().max_degree();

  struct Row {
    double mean1 = 0.0, fact2 = 0.0;
    long nmax = 0;
  };
  std::vector<Row> rows(svals.size() * R);
  detail::parallel_for(svals.size() * R, workers, [&](std::size_t idx) {
    std::size_t si = idx / R;
    std::size_t r = idx % R;
    ClusterStats cs = crw_all_sites(g, cfg.kind, svals[si],
                                    derive_seed(cfg.seed, 0x1000 + si, r));
    rows[idx] = {cs.mean_minus1(), cs.factorial2(), cs.n_max};
  });

  bool meanc_ok = true, m2c_ok = true, nmax_ok = true;
  double sqrt_n = std::sqrt(static_cast<double>(g.n()));
  nlohmann::json per_s = nlohmann::json::array();
  {
    auto os = out.open("crw.csv");
    os << "s,mean_size_minus1,fact2,Nmax,n\n";
    for (std::size_t si = 0; si < svals.size(); ++si) {
      double m1 = 0.0, m2 = 0.0, m1sq = 0.0, m2sq = 0.0;
      long nmax_all = 0;
      for (int r = 0; r < R; ++r) {
        const Row& row = rows[si * R + r];
        os << detail::fmt9(svals[si]) << ',' << detail::fmt9(row.mean1) << ','
           << detail::fmt9(row.fact2) << ',' << row.nmax << ',' << g.n() << '\n';
        m1 += row.mean1;
        m2 += row.fact2;
        m1sq += row.mean1 * row.mean1;
        m2sq += row.fact2 * row.fact2;
        nmax_all = std::max(nmax_all, row.nmax);
        if (row.nmax > sqrt_n) nmax_ok = false;
      }
      m1 /= R;
      m2 /= R;
      double se1 = R > 1 ? std::sqrt(std::max(0.0, m1sq / R - m1 * m1) / (R - 1)) : 0.0;
      double se2 = R > 1 ? std::sqrt(std::max(0.0, m2sq / R - m2 * m2) / (R - 1)) : 0.0;
      double bound1 = 4.0 * M * std::exp(1.0) * svals[si];
      double bound2 = 3.0 * bound1 * bound1;
      if (cfg.kind == ModelKind::edge) {
        if (m1 > bound1 + 3 * se1) meanc_ok = false;
        if (m2 > bound2 + 3 * se2) m2c_ok = false;
      }
      per_s.push_back({{"s", svals[si]},
                       {"mean_size_minus1", m1},
                       {"se", se1},
                       {"bound", bound1},
                       {"fact2", m2},
                       {"fact2_se", se2},
                       {"fact2_bound", bound2},
                       {"nmax", nmax_all}});
    }
  }

  if (cfg.kind == ModelKind::edge) {
    flags["mean_cluster_bound"] = meanc_ok;
    flags["second_factorial_bound"] = m2c_ok;
  }
  flags["nmax_below_sqrt_n"] = nmax_ok;
  nlohmann::json j;
  j["per_s"] = per_s;
  j["sqrt_n"] = sqrt_n;
  return j;
}

inline nlohmann::json run_estimate_cp(const ExperimentConfig& cfg,
                                      detail::OutputWriter& out, int /*workers*/,
                                      InvariantFlags& flags) {
  CpSettings cps{cfg.d_cut, cfg.time_cap, cfg.cp_replicates,
                 derive_seed(cfg.seed, detail::kCpPurpose)};
  std::map<int, std::vector<TripleRunResult>> logs;
  CpEstimate cp = estimate_cp(cfg.degree_dist(), cfg.kind, cps, &logs);
  {
    auto os = out.open("cp.txt");
    os << format_cp_estimate(cp);
  }
  for (const auto& [k, rows] : logs) {
    auto os = out.open("triples_k" + std::to_string(k) + ".csv");
    os << "replicate,outcome,elapsed\n";
    for (std::size_t r = 0; r < rows.size(); ++r)
      os << r << ','
         << (rows[r].timed_out ? "timed_out" : to_string(rows[r].cls)) << ','
         << detail::fmt9(rows[r].elapsed) << '\n';
  }
  long timeouts = 0, reps = 0;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : cp.rows) {
    timeouts += r.timed_out;
    reps += r.replicates;
    rows.push_back({{"k", r.k},
                    {"weight", r.weight},
                    {"P_hat", r.p_hat},
                    {"SE", r.se},
                    {"replicates", r.replicates},
                    {"timed_out", r.timed_out}});
  }
  flags["cp_in_unit_interval"] = cp.cp > 0.0 && cp.cp < 1.0;
  flags["timeout_fraction_ok"] = timeouts * 100 <= reps;
  nlohmann::json j;
  j["rows"] = rows;
  j["c_p"] = cp.cp;
  j["c_p_se"] = cp.se;
  // separation-cut declaration bias: a pair at distance d_cut returns with
  // probability <= 2^-d_cut on these trees, three pairs per replicate
  j["never_hit_bias_bound"] = 3.0 * std::pow(2.0, -cfg.d_cut);
  return j;
}

inline nlohmann::json run_duality_check(const ExperimentConfig& cfg,
                                        detail::OutputWriter& out, int workers,
                                        InvariantFlags& flags) {
  Graph g = detail::scenario_graph(cfg);
  const double lambda = detail::effective_lambda(cfg);
  std::vector<int> mismatches(cfg.replicates, 0);
  detail::parallel_for(cfg.replicates, workers, [&](std::size_t r) {
    GraphicalRecord rec =
        sample_graphical(g, cfg.kind, lambda, cfg.horizon,
                         derive_seed(cfg.seed, detail::kRecordPurpose, r));
    Rng init_rng(derive_seed(cfg.seed, detail::kInitPurpose, r));
    Configuration init = Configuration::bernoulli(g, cfg.kind, cfg.u0, init_rng);
    Configuration fwd = evolve_forward(rec, g, init);
    int bad = 0;
    for (int x = 0; x < g.n(); ++x)
      if (compute_state_via_dual(rec, g, init, x) != opinion(fwd.state(x))) ++bad;
    mismatches[r] = bad;
  });

  int all_match = 0;
  {
    auto os = out.open("duality.csv");
    os << "record,mismatches,all_match\n";
    for (int r = 0; r < cfg.replicates; ++r) {
      os << r << ',' << mismatches[r] << ',' << (mismatches[r] == 0 ? 1 : 0) << '\n';
      all_match += mismatches[r] == 0;
    }
  }
  nlohmann::json j;
  j["dual_exact"] = cfg.voter;
  j["records"] = cfg.replicates;
  j["all_match_count"] = all_match;
  j["match_fraction"] =
      static_cast<double>(all_match) / std::max(1, cfg.replicates);
  if (cfg.voter)
    flags["all_match"] = all_match == cfg.replicates;
  return j;
}

inline nlohmann::json run_mixing_report(const ExperimentConfig& cfg,
                                        detail::OutputWriter& out, int /*workers*/,
                                        InvariantFlags& flags) {
  Graph g = detail::scenario_graph(cfg);
  MixingReport rep = mixing_report(g, cfg.kind, cfg.times());
  {
    auto os = out.open("mixing.csv");
    os << "t,delta\n";
    for (std::size_t i = 0; i < rep.times.size(); ++i)
      os << detail::fmt9(rep.times[i]) << ',' << detail::fmt9(rep.delta[i]) << '\n';
  }
  {
    auto os = out.open("mixing_summary.txt");
    os << "gap,h,pi_min,n,kind\n";
    os << detail::fmt9(rep.gap) << ',' << detail::fmt9(rep.h) << ','
       << detail::fmt9(rep.pi_min) << ',' << rep.n << ',' << to_string(rep.kind) << '\n';
  }

  bool monotone = true, bounded = true;
  for (std::size_t i = 0; i < rep.delta.size(); ++i) {
    if (i > 0 && rep.delta[i] > rep.delta[i - 1] + 1e-12) monotone = false;
    double bound = std::exp(-rep.gap * rep.times[i]) / rep.pi_min;
    if (rep.delta[i] > bound + 1e-9) bounded = false;
  }
  flags["delta_monotone"] = monotone;
  flags["delta_below_gap_bound"] = bounded;
  if (!std::isnan(rep.h)) {
    flags["cheeger_sandwich"] =
        rep.h * rep.h / 2.0 <= rep.gap + 1e-9 && rep.gap <= 2.0 * rep.h + 1e-9;
    flags["conductance_positive"] = rep.h > 0.0;
  }

  nlohmann::json j;
  j["gap"] = rep.gap;
  j["pi_min"] = rep.pi_min;
  if (!std::isnan(rep.h)) j["h"] = rep.h;
  return j;
}

inline nlohmann::json run_drift_gap(const ExperimentConfig& cfg, detail::OutputWriter& out,
                                    int workers, InvariantFlags& flags) {
  Graph g = detail::scenario_graph(cfg);
  CpSettings cps{cfg.d_cut, cfg.time_cap, cfg.cp_replicates,
                 derive_seed(cfg.seed, detail::kCpPurpose)};
  CpEstimate cp = estimate_cp(cfg.degree_dist(), cfg.kind, cps);

  std::vector<double> grid = uniform_grid(cfg.horizon, cfg.grid_step);
  struct Sample {
    double t, x, b, lit, norm, gen;
  };
  std::vector<std::vector<Sample>> all(cfg.replicates);
  detail::parallel_for(cfg.replicates, workers, [&](std::size_t r) {
    Rng init_rng(derive_seed(cfg.seed, detail::kInitPurpose, r));
    Configuration init = Configuration::bernoulli(g, cfg.kind, cfg.u0, init_rng);
    SimParams p;
    p.lambda = cfg.lambda;
    p.kind = cfg.kind;
    p.horizon = cfg.horizon;
    p.seed = derive_seed(cfg.seed, detail::kDynamicsPurpose, r);
    p.max_events = cfg.max_events;
    SimulationEngine engine(g, p, init);
    for (double tg : grid) {
      if (!engine.advance_to(tg)) break;
      const Configuration& c = engine.config();
      double x = c.density();
      all[r].push_back({tg, x, cp.cp * x * (1 - x) * (1 - 2 * x),
                        drift_perturbation(c, g), drift_perturbation_normalized(c, g),
                        generator_drift(c, g, cfg.kind, cfg.lambda)});
    }
  });

  long over = 0, total = 0;
  {
    auto os = out.open("drift.csv");
    os << "replicate,t,X,b,beta_literal,beta_normalized,generator_drift\n";
    for (int r = 0; r < cfg.replicates; ++r)
      for (const auto& s : all[r]) {
        os << r << ',' << detail::fmt9(s.t) << ',' << detail::fmt9(s.x) << ','
           << detail::fmt9(s.b) << ',' << detail::fmt9(s.lit) << ','
           << detail::fmt9(s.norm) << ',' << detail::fmt9(s.gen) << '\n';
        over += std::abs(s.norm - s.b) >= cfg.drift_epsilon;
        ++total;
      }
  }
  double frac = total > 0 ? static_cast<double>(over) / total : 0.0;
  flags["normalized_gap_fraction_ok"] = frac <= cfg.drift_fraction;
  nlohmann::json j;
  j["c_p"] = cp.cp;
  j["samples"] = total;
  j["fraction_over_epsilon"] = frac;
  j["drift_epsilon"] = cfg.drift_epsilon;
  return j;
}

}  // namespace scenarios

// Run a scenario, writing CSVs, summary.json and manifest.json under out_dir.
// Data outputs (CSVs and summary.json) are byte-deterministic functions of
// the config; manifest.json additionally carries the wall clock.
inline RunManifest run_scenario(const ExperimentConfig& cfg, const std::string& out_dir,
                                int workers = 1) {
  validate_config(cfg);
  auto start = std::chrono::steady_clock::now();

  RunManifest manifest;
  manifest.scenario = cfg.scenario;
  manifest.config_echo = emit_resolved_config(cfg);
  for (int r = 0; r < cfg.replicates; ++r)
    manifest.replicate_seeds.push_back(derive_seed(cfg.seed, detail::kDynamicsPurpose, r));

  detail::OutputWriter out(out_dir, manifest);
  InvariantFlags flags;
  nlohmann::json body;
  if (cfg.scenario == "generate")
    body = scenarios::run_generate(cfg, out, workers, flags);
  else if (cfg.scenario == "simulate")
    body = scenarios::run_simulate(cfg, out, workers, flags);
  else if (cfg.scenario == "ode-limit")
    body = scenarios::run_ode_limit(cfg, out, workers, flags);
  else if (cfg.scenario == "persistence")
    body = scenarios::run_persistence(cfg, out, workers, flags);
  else if (cfg.scenario == "crw-stats")
    body = scenarios::run_crw_stats(cfg, out, workers, flags);
  else if (cfg.scenario == "estimate-cp")
    body = scenarios::run_estimate_cp(cfg, out, workers, flags);
  else if (cfg.scenario == "duality-check")
    body = scenarios::run_duality_check(cfg, out, workers, flags);
  else if (cfg.scenario == "mixing-report")
    body = scenarios::run_mixing_report(cfg, out, workers, flags);
  else if (cfg.scenario == "drift-gap")
    body = scenarios::run_drift_gap(cfg, out, workers, flags);
  else
    throw std::invalid_argument("unknown scenario '" + cfg.scenario + "'");

  bool all_pass = true;
  nlohmann::json jflags = nlohmann::json::object();
  for (const auto& [name, ok] : flags) {
    jflags[name] = ok;
    all_pass = all_pass && ok;
  }
  manifest.all_invariants_pass = all_pass;

  {
    nlohmann::json summary;
    summary["scenario"] = cfg.scenario;
    summary["seed"] = cfg.seed;
    summary["invariants"] = jflags;
    summary["pass"] = all_pass;
    summary["data"] = body;
    auto os = out.open("summary.json");
    os << summary.dump(2) << '\n';
  }

  manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  {
    nlohmann::json jm;
    jm["version"] = manifest.version;
    jm["scenario"] = manifest.scenario;
    jm["config"] = manifest.config_echo;
    jm["replicate_seeds"] = manifest.replicate_seeds;
    jm["outputs"] = manifest.outputs;
    jm["workers"] = workers;
    jm["wall_clock_seconds"] = manifest.wall_clock_seconds;
    jm["pass"] = all_pass;
    std::ofstream os(std::filesystem::path(out_dir) / "manifest.json", std::ios::binary);
    os << jm.dump(2) << '\n';
  }
  return manifest;
}

}  // namespace lvlab
