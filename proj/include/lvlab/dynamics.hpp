#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lvlab/graph.hpp"
#include "lvlab/rng.hpp"

namespace lvlab {

// Node states: opinion 1 or 2, active or latent. A node that has just changed
// its opinion sits in the latent state for an exponential(lambda) time during
// which it ignores influence; a wake-up returns it to the active state.
enum class NodeState : std::uint8_t { Active1 = 0, Active2 = 1, Latent1 = 2, Latent2 = 3 };

inline int opinion(NodeState s) {
  return (s == NodeState::Active1 || s == NodeState::Latent1) ? 1 : 2;
}

inline bool is_active(NodeState s) {
  return s == NodeState::Active1 || s == NodeState::Active2;
}

inline NodeState make_state(int op, bool latent) {
  if (op != 1 && op != 2) throw std::invalid_argument("opinion must be 1 or 2");
  if (latent) return op == 1 ? NodeState::Latent1 : NodeState::Latent2;
  return op == 1 ? NodeState::Active1 : NodeState::Active2;
}

inline NodeState swap_opinion(NodeState s) {
  switch (s) {
    case NodeState::Active1: return NodeState::Active2;
    case NodeState::Active2: return NodeState::Active1;
    case NodeState::Latent1: return NodeState::Latent2;
    default: return NodeState::Latent1;
  }
}

class Configuration;

inline double flip_rate(const Configuration& config, const Graph& g, int x, ModelKind kind);

// Full state of the particle system plus cached per-node flip rates and
// opinion counters. The caches are maintained incrementally by the simulator;
// verify_caches recomputes everything from scratch and throws on mismatch.
class Configuration {
 public:
  Configuration() = default;

  static Configuration from_states(const Graph& g, ModelKind kind,
                                   std::vector<NodeState> states) {
    if (static_cast<int>(states.size()) != g.n())
      throw std::invalid_argument("configuration: state vector size != n");
    Configuration c;
    c.states_ = std::move(states);
    c.rebuild_caches(g, kind);
    return c;
  }

  static Configuration all_active(const Graph& g, ModelKind kind, int op) {
    return from_states(g, kind, std::vector<NodeState>(g.n(), make_state(op, false)));
  }

  // Product Bernoulli(u) opinions, everyone active.
  static Configuration bernoulli(const Graph& g, ModelKind kind, double u, Rng& rng) {
    std::vector<NodeState> s(g.n());
    for (int v = 0; v < g.n(); ++v)
      s[v] = rng.bernoulli(u) ? NodeState::Active1 : NodeState::Active2;
    return from_states(g, kind, std::move(s));
  }

  static Configuration single_dissenter(const Graph& g, ModelKind kind, int node,
                                        int dissent_opinion = 1) {
    std::vector<NodeState> s(g.n(), make_state(dissent_opinion == 1 ? 2 : 1, false));
    s[node] = make_state(dissent_opinion, false);
    return from_states(g, kind, std::move(s));
  }

  const std::vector<NodeState>& states() const { return states_; }
  NodeState state(int v) const { return states_[v]; }
  int n() const { return static_cast<int>(states_.size()); }

  long opinion1_count() const { return opinion1_count_; }
  long latent_count() const { return latent_count_; }
  double density() const { return static_cast<double>(opinion1_count_) / n(); }
  double latent_fraction() const { return static_cast<double>(latent_count_) / n(); }

  double cached_rate(int v) const { return rate_cache_[v]; }
  double total_flip_rate() const { return total_flip_rate_; }
  int opinion1_neighbors(int v) const { return cnt1_[v]; }

  Configuration swapped(const Graph& g, ModelKind kind) const {
    std::vector<NodeState> s(states_);
    for (auto& st : s) st = swap_opinion(st);
    return from_states(g, kind, std::move(s));
  }

  void verify_caches(const Graph& g, ModelKind kind) const {
    long op1 = 0, lat = 0;
    double total = 0.0;
    for (int v = 0; v < g.n(); ++v) {
      if (opinion(states_[v]) == 1) ++op1;
      if (!is_active(states_[v])) ++lat;
      int c1 = 0;
      for (int u : g.neighbors(v))
        if (opinion(states_[u]) == 1) ++c1;
      if (c1 != cnt1_[v]) throw std::logic_error("configuration cache: neighbor count mismatch");
      double r = flip_rate(*this, g, v, kind);
      if (r != rate_cache_[v]) throw std::logic_error("configuration cache: rate mismatch");
      total += r;
    }
    if (op1 != opinion1_count_) throw std::logic_error("configuration cache: opinion count mismatch");
    if (lat != latent_count_) throw std::logic_error("configuration cache: latent count mismatch");
    (void)total;
  }

 private:
  friend class SimulationEngine;
  friend double flip_rate(const Configuration&, const Graph&, int, ModelKind);

  void rebuild_caches(const Graph& g, ModelKind kind) {
    const int n = g.n();
    cnt1_.assign(n, 0);
    rate_cache_.assign(n, 0.0);
    opinion1_count_ = 0;
    latent_count_ = 0;
    total_flip_rate_ = 0.0;
    for (int v = 0; v < n; ++v) {
      if (opinion(states_[v]) == 1) ++opinion1_count_;
      if (!is_active(states_[v])) ++latent_count_;
    }
    for (int v = 0; v < n; ++v) {
      int c1 = 0;
      for (int u : g.neighbors(v))
        if (opinion(states_[u]) == 1) ++c1;
      cnt1_[v] = c1;
    }
    for (int v = 0; v < n; ++v) {
      rate_cache_[v] = flip_rate(*this, g, v, kind);
      total_flip_rate_ += rate_cache_[v];
    }
  }

  std::vector<NodeState> states_;
  std::vector<int> cnt1_;          // neighbors holding opinion 1 (active or latent)
  std::vector<double> rate_cache_; // flip rate; 0 for latent nodes
  long opinion1_count_ = 0;
  long latent_count_ = 0;
  double total_flip_rate_ = 0.0;
};

// Rate of an opinion flip at x. Latent nodes never flip (their wake-up rate is
// handled separately). An active node of opinion i flips toward the opposite
// latent state at rate n_j(x)/d(x) in the site version and n_j(x) in the edge
// version, where n_j counts opposite-opinion neighbors, latent included.
inline double flip_rate(const Configuration& config, const Graph& g, int x, ModelKind kind) {
  NodeState s = config.state(x);
  if (!is_active(s)) return 0.0;
  int n_opp = opinion(s) == 1 ? g.degree(x) - config.cnt1_[x] : config.cnt1_[x];
  if (kind == ModelKind::edge) return static_cast<double>(n_opp);
  return static_cast<double>(n_opp) / g.degree(x);
}

// Indexed partial-sum tree over per-node event rates: O(log n) update and
// O(log n) selection proportional to rate. Internal sums are always
// recomputed from children so repeated updates cannot drift.
class RateTree {
 public:
  explicit RateTree(std::size_t n)
      : leaves_(std::bit_ceil(std::max<std::size_t>(n, 1))),
        tree_(2 * leaves_, 0.0) {}

  void set(std::size_t i, double v) {
    std::size_t node = leaves_ + i;
    tree_[node] = v;
    for (node >>= 1; node >= 1; node >>= 1) {
      tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
      if (node == 1) break;
    }
  }

  double get(std::size_t i) const { return tree_[leaves_ + i]; }
  double total() const { return tree_[1]; }

  // Index whose cumulative-rate interval contains target in [0, total()).
  // target is clamped strictly below the total so the descent can never fall
  // onto a zero-rate leaf (u * total may round up to total exactly).
  std::size_t sample(double target) const {
    if (target >= tree_[1]) target = std::nextafter(tree_[1], 0.0);
    if (target < 0.0) target = 0.0;
    std::size_t node = 1;
    while (node < leaves_) {
      double left = tree_[2 * node];
      if (target < left) {
        node = 2 * node;
      } else {
        target -= left;
        node = 2 * node + 1;
      }
    }
    return node - leaves_;
  }

 private:
  std::size_t leaves_;
  std::vector<double> tree_;
};

// lambda == +infinity selects the pure voter model: no latent states, flips
// go directly 1 <-> 2, and horizon/grid are in unrescaled time. Otherwise the
// horizon and grid are rescaled times t = s / lambda.
struct SimParams {
  double lambda = 100.0;
  ModelKind kind = ModelKind::site;
  double horizon = 1.0;
  std::vector<double> grid;
  std::uint64_t seed = 1;
  std::uint64_t max_events = std::numeric_limits<std::uint64_t>::max();
  // Optional band watch: record the first (rescaled) time >= band_start at
  // which |density - center| exceeds halfwidth. Checked at every event, not
  // just on the grid.
  std::optional<double> band_center;
  double band_halfwidth = 0.0;
  double band_start = 0.0;

  bool voter_mode() const { return !std::isfinite(lambda); }

  void validate() const {
    if (!(lambda > 0)) throw std::invalid_argument("lambda must be > 0");
    if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i] < 0 || grid[i] > horizon + 1e-12)
        throw std::invalid_argument("grid times must lie in [0, horizon]");
      if (i > 0 && grid[i] < grid[i - 1])
        throw std::invalid_argument("grid times must be ascending");
    }
  }
};

struct Trajectory {
  std::vector<double> times;            // rescaled (voter mode: unrescaled)
  std::vector<double> densities;        // fraction of opinion 1, latent included
  std::vector<double> latent_fraction;
  std::uint64_t event_count = 0;
  std::uint64_t flip_count = 0;
  bool truncated = false;               // event budget hit before horizon
  std::optional<double> first_band_exit;
};

inline std::vector<double> uniform_grid(double horizon, double step) {
  if (!(step > 0)) throw std::invalid_argument("uniform_grid: step must be > 0");
  std::vector<double> g;
  long count = static_cast<long>(std::floor(horizon / step * (1.0 + 1e-12)));
  for (long i = 0; i <= count; ++i) g.push_back(std::min(i * step, horizon));
  if (horizon - g.back() > 1e-9 * step) g.push_back(horizon);
  return g;
}

// Exact event-driven simulation of the latent voter model (and of the pure
// voter model when lambda = inf). One partial-sum tree holds every node's
// total event rate: flip rate for active nodes, lambda for latent ones.
class SimulationEngine {
 public:
  SimulationEngine(const Graph& g, const SimParams& params, Configuration config)
      : g_(g),
        params_(params),
        config_(std::move(config)),
        tree_(g.n()),
        rng_(params.seed) {
    params_.validate();
    if (config_.n() != g.n())
      throw std::invalid_argument("simulate: configuration does not match graph");
    // the caller may have built the configuration under a different kind
    config_.rebuild_caches(g_, params_.kind);
    for (int v = 0; v < g_.n(); ++v) tree_.set(v, node_rate(v));
  }

  // Advance the chain to rescaled time t (applying every event at or before
  // it). Returns false if the event budget was exhausted first.
  bool advance_to(double t_rescaled) {
    const bool voter = params_.voter_mode();
    const double scale = voter ? 1.0 : params_.lambda;
    const double target = t_rescaled * scale;
    check_band(now_ / scale);
    for (;;) {
      if (!next_event_time_) {
        double total = tree_.total();
        next_event_time_ = total > 0.0 ? now_ + rng_.exponential(total)
                                       : std::numeric_limits<double>::infinity();
      }
      if (*next_event_time_ > target) return true;
      if (event_count_ >= params_.max_events) {
        truncated_ = true;
        return false;
      }
      now_ = *next_event_time_;
      next_event_time_.reset();
      double total = tree_.total();
      std::size_t x = tree_.sample(rng_.uniform01() * total);
      apply_event(static_cast<int>(x), voter);
      ++event_count_;
      check_band(now_ / scale);
    }
  }

  Trajectory run() {
    Trajectory traj;
    for (double tg : params_.grid) {
      if (!advance_to(tg)) break;
      traj.times.push_back(tg);
      traj.densities.push_back(config_.density());
      traj.latent_fraction.push_back(config_.latent_fraction());
    }
    if (!truncated_) advance_to(params_.horizon);
    traj.event_count = event_count_;
    traj.truncated = truncated_;
    traj.first_band_exit = first_band_exit_;
    return traj;
  }

  const Configuration& config() const { return config_; }
  Configuration take_config() { return std::move(config_); }
  std::uint64_t event_count() const { return event_count_; }
  bool truncated() const { return truncated_; }
  std::optional<double> first_band_exit() const { return first_band_exit_; }

 private:
  double node_rate(int v) const {
    if (!is_active(config_.state(v))) return params_.lambda;  // wake-up rate
    return config_.rate_cache_[v];
  }

  void check_band(double t_rescaled) {
    if (!params_.band_center || first_band_exit_) return;
    if (t_rescaled < params_.band_start) return;
    if (std::abs(config_.density() - *params_.band_center) > params_.band_halfwidth)
      first_band_exit_ = t_rescaled;
  }

  void apply_event(int x, bool voter) {
    NodeState s = config_.state(x);
    if (!is_active(s)) {
      // wake-up: latent -> active, opinion unchanged, neighbors unaffected
      config_.states_[x] = make_state(opinion(s), false);
      --config_.latent_count_;
      double r = flip_rate(config_, g_, x, params_.kind);
      config_.rate_cache_[x] = r;
      config_.total_flip_rate_ += r;
      tree_.set(x, r);
      return;
    }
    // flip: adopt the opposite opinion; latent in the latent model, active in
    // the voter model
    int new_op = opinion(s) == 1 ? 2 : 1;
    config_.states_[x] = make_state(new_op, !voter);
    config_.opinion1_count_ += (new_op == 1) ? 1 : -1;
    const int dcnt = (new_op == 1) ? 1 : -1;
    for (int u : g_.neighbors(x)) {
      config_.cnt1_[u] += dcnt;
      if (is_active(config_.state(u))) {
        double r = flip_rate(config_, g_, u, params_.kind);
        config_.total_flip_rate_ += r - config_.rate_cache_[u];
        config_.rate_cache_[u] = r;
        tree_.set(u, r);
      }
    }
    config_.total_flip_rate_ -= config_.rate_cache_[x];
    if (voter) {
      double r = flip_rate(config_, g_, x, params_.kind);
      config_.rate_cache_[x] = r;
      config_.total_flip_rate_ += r;
      tree_.set(x, r);
    } else {
      ++config_.latent_count_;
      config_.rate_cache_[x] = 0.0;
      tree_.set(x, params_.lambda);
    }
  }

  const Graph& g_;
  SimParams params_;
  Configuration config_;
  RateTree tree_;
  Rng rng_;
  double now_ = 0.0;
  std::optional<double> next_event_time_;
  std::uint64_t event_count_ = 0;
  bool truncated_ = false;
  std::optional<double> first_band_exit_;
};

inline Trajectory simulate(const Graph& g, const SimParams& params,
                           const Configuration& init,
                           Configuration* final_config = nullptr) {
  SimulationEngine engine(g, params, init);
  Trajectory traj = engine.run();
  traj.flip_count = traj.event_count;  // adjusted below for latent runs
  if (!params.voter_mode()) {
    // every flip is matched by exactly one later wake-up unless still latent
    long latent_end = engine.config().latent_count();
    long latent_start = 0;
    for (auto s : init.states())
      if (!is_active(s)) ++latent_start;
    traj.flip_count =
        (traj.event_count + static_cast<std::uint64_t>(latent_end - latent_start)) / 2;
  }
  if (final_config) *final_config = engine.take_config();
  return traj;
}

// lambda = infinity degenerate case: the plain voter model, unrescaled time.
inline Trajectory simulate_voter(const Graph& g, ModelKind kind, double horizon,
                                 std::vector<double> grid, const Configuration& init,
                                 std::uint64_t seed,
                                 Configuration* final_config = nullptr) {
  SimParams p;
  p.lambda = std::numeric_limits<double>::infinity();
  p.kind = kind;
  p.horizon = horizon;
  p.grid = std::move(grid);
  p.seed = seed;
  return simulate(g, p, init, final_config);
}

// Literal perturbation functional: (1/n) sum over ordered neighbor pairs
// (y, z), z != y, of [1{op(x)=2, op(y)=1 or op(z)=1} - 1{op(x)=1, op(y)=2 or
// op(z)=2}], latency ignored. Antisymmetric under global opinion swap.
inline double drift_perturbation(const Configuration& config, const Graph& g) {
  double total = 0.0;
  for (int x = 0; x < g.n(); ++x) {
    int op_x = opinion(config.state(x));
    int d = g.degree(x);
    int n1 = config.opinion1_neighbors(x);
    int n2 = d - n1;
    // ordered pairs (y,z) with op(y)=j or op(z)=j: d(d-1) - (pairs with
    // neither) = d(d-1) - (d-n_j)(d-n_j-1)
    if (op_x == 2) {
      total += d * (d - 1) - static_cast<double>(d - n1) * (d - n1 - 1);
    } else {
      total -= d * (d - 1) - static_cast<double>(d - n2) * (d - n2 - 1);
    }
  }
  return total / g.n();
}

// Same functional with the site-version normalization 2/d(x)^2 applied to the
// unordered-pair sum (equivalently 1/d(x)^2 on ordered pairs).
inline double drift_perturbation_normalized(const Configuration& config, const Graph& g) {
  double total = 0.0;
  for (int x = 0; x < g.n(); ++x) {
    int op_x = opinion(config.state(x));
    int d = g.degree(x);
    int n1 = config.opinion1_neighbors(x);
    int n2 = d - n1;
    double denom = static_cast<double>(d) * d;
    if (op_x == 2) {
      total += (d * (d - 1) - static_cast<double>(d - n1) * (d - n1 - 1)) / denom;
    } else {
      total -= (d * (d - 1) - static_cast<double>(d - n2) * (d - n2 - 1)) / denom;
    }
  }
  return total / g.n();
}

// Exact instantaneous expected density change in rescaled time:
// lambda * (1/n) * [sum of flip rates over Active2 - sum over Active1].
inline double generator_drift(const Configuration& config, const Graph& g,
                              ModelKind kind, double lambda) {
  double up = 0.0, down = 0.0;
  for (int x = 0; x < g.n(); ++x) {
    NodeState s = config.state(x);
    if (!is_active(s)) continue;
    if (opinion(s) == 2)
      up += flip_rate(config, g, x, kind);
    else
      down += flip_rate(config, g, x, kind);
  }
  return lambda * (up - down) / g.n();
}

}  // namespace lvlab
