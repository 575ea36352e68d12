#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <queue>
#include <stdexcept>
#include <vector>

#include "lvlab/dynamics.hpp"
#include "lvlab/graph.hpp"
#include "lvlab/graphical.hpp"
#include "lvlab/rng.hpp"

namespace lvlab {

// Coalescence partition of a set of tagged walkers. Two origins share a
// cluster iff their walks have met; surviving clusters carry a position.
struct ParticlePartition {
  std::vector<int> origins;
  std::vector<int> cluster_of;       // per origin, compact ids 0..k-1
  std::vector<int> cluster_position; // per cluster id
  double elapsed = 0.0;

  int cluster_count() const { return static_cast<int>(cluster_position.size()); }

  bool same_cluster(int i, int j) const { return cluster_of[i] == cluster_of[j]; }

  std::vector<long> cluster_sizes() const {
    std::vector<long> sizes(cluster_position.size(), 0);
    for (int c : cluster_of) ++sizes[c];
    return sizes;
  }
};

namespace detail {

struct CrwState {
  // one slot per initial cluster; merged slots become inactive
  std::vector<int> parent;    // union-find over slots
  std::vector<int> position;  // per live root slot
  std::vector<char> alive;

  int find(int i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
};

}  // namespace detail

// Continuous-time coalescing random walks started from the given nodes.
// Site version: every cluster jumps at total rate 1 to a uniform neighbor.
// Edge version: total rate d(position). Clusters merge on first co-location.
inline ParticlePartition run_crw(const Graph& g, ModelKind kind,
                                 const std::vector<int>& starts, double duration,
                                 std::uint64_t seed) {
  if (starts.empty()) throw std::invalid_argument("run_crw: no start nodes");
  if (duration < 0) throw std::invalid_argument("run_crw: negative duration");

  const int k0 = static_cast<int>(starts.size());
  detail::CrwState st;
  st.parent.resize(k0);
  st.position.resize(k0);
  st.alive.assign(k0, 0);
  std::vector<int> occupant(g.n(), -1);

  RateTree tree(k0);
  auto slot_rate = [&](int slot) {
    return kind == ModelKind::edge ? static_cast<double>(g.degree(st.position[slot])) : 1.0;
  };

  int live = 0;
  for (int i = 0; i < k0; ++i) {
    st.parent[i] = i;
    int s = starts[i];
    if (s < 0 || s >= g.n()) throw std::invalid_argument("run_crw: start out of range");
    if (occupant[s] >= 0) {
      st.parent[i] = st.find(occupant[s]);  // co-located starts coalesce at time 0
      continue;
    }
    occupant[s] = i;
    st.position[i] = s;
    st.alive[i] = 1;
    tree.set(i, slot_rate(i));
    ++live;
  }

  Rng rng(seed);
  double t = 0.0;
  while (live > 1) {
    double total = tree.total();
    double dt = rng.exponential(total);
    if (t + dt > duration) break;
    t += dt;
    int slot = static_cast<int>(tree.sample(rng.uniform01() * total));
    int pos = st.position[slot];
    int next = g.neighbor(pos, static_cast<int>(rng.below(g.degree(pos))));
    occupant[pos] = -1;
    int other = occupant[next];
    if (other >= 0) {
      // moving cluster merges into the one already at the site
      st.parent[st.find(slot)] = st.find(other);
      st.alive[slot] = 0;
      tree.set(slot, 0.0);
      --live;
    } else {
      occupant[next] = slot;
      st.position[slot] = next;
      if (kind == ModelKind::edge) tree.set(slot, slot_rate(slot));
    }
  }

  ParticlePartition out;
  out.origins = starts;
  out.elapsed = duration;
  out.cluster_of.resize(k0);
  std::vector<int> compact(k0, -1);
  for (int i = 0; i < k0; ++i) {
    int root = st.find(i);
    if (compact[root] < 0) {
      compact[root] = out.cluster_count();
      out.cluster_position.push_back(st.position[root]);
    }
    out.cluster_of[i] = compact[root];
  }
  return out;
}

// Per-origin cluster sizes of the all-sites coalescing walk at elapsed time s.
struct ClusterStats {
  double s = 0.0;
  long n = 0;
  std::vector<long> origin_cluster_size;  // N_x(s) per origin x
  long n_max = 1;

  double mean_minus1() const {
    double acc = 0.0;
    for (long v : origin_cluster_size) acc += static_cast<double>(v - 1);
    return acc / origin_cluster_size.size();
  }

  // E (N-1)(N-2)
  double factorial2() const {
    double acc = 0.0;
    for (long v : origin_cluster_size)
      acc += static_cast<double>(v - 1) * static_cast<double>(v - 2);
    return acc / origin_cluster_size.size();
  }

  double raw_moment(int m) const {
    double acc = 0.0;
    for (long v : origin_cluster_size) acc += std::pow(static_cast<double>(v), m);
    return acc / origin_cluster_size.size();
  }
};

inline ClusterStats cluster_stats_from(const ParticlePartition& part) {
  ClusterStats cs;
  cs.s = part.elapsed;
  cs.n = static_cast<long>(part.origins.size());
  auto sizes = part.cluster_sizes();
  cs.origin_cluster_size.resize(part.origins.size());
  cs.n_max = 1;
  for (std::size_t i = 0; i < part.origins.size(); ++i) {
    cs.origin_cluster_size[i] = sizes[part.cluster_of[i]];
    cs.n_max = std::max(cs.n_max, cs.origin_cluster_size[i]);
  }
  return cs;
}

inline ClusterStats crw_all_sites(const Graph& g, ModelKind kind, double s,
                                  std::uint64_t seed) {
  std::vector<int> starts(g.n());
  for (int v = 0; v < g.n(); ++v) starts[v] = v;
  return cluster_stats_from(run_crw(g, kind, starts, s, seed));
}

// Density computed by feeding i.i.d. Bernoulli(u) cluster values through a
// partition: (1/n) sum_j N_j eta_j. Returns {density from per-site values,
// density from the cluster-size form}; the two are equal by construction.
inline std::pair<double, double> dual_density_identity(const ParticlePartition& part,
                                                       double u, Rng& rng) {
  std::vector<int> eta(part.cluster_count());
  for (auto& e : eta) e = rng.bernoulli(u) ? 1 : 0;
  double per_site = 0.0;
  for (std::size_t i = 0; i < part.origins.size(); ++i)
    per_site += eta[part.cluster_of[i]];
  auto sizes = part.cluster_sizes();
  double per_cluster = 0.0;
  for (int j = 0; j < part.cluster_count(); ++j)
    per_cluster += static_cast<double>(sizes[j]) * eta[j];
  double n = static_cast<double>(part.origins.size());
  return {per_site / n, per_cluster / n};
}

// P(S_k <= a k) <= (a e / (1+a))^k for S_k a sum of k independent mean-one
// exponentials. Vacuous (> 1) once a e / (1+a) >= 1.
inline double chernoff_exp_bound(long k, double a) {
  if (k < 1) throw std::invalid_argument("chernoff_exp_bound: k must be >= 1");
  if (!(a > 0)) throw std::invalid_argument("chernoff_exp_bound: a must be > 0");
  return std::pow(a * std::exp(1.0) / (1.0 + a), static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// Branching-coalescing dual of the latent model, traced backwards through a
// graphical record. Intervals between consecutive wake-up dots at the current
// site decide the move: a single incoming source is a jump, k >= 2 distinct
// sources branch (the k > 2 case is kept so the dual is always well defined),
// and a particle landing on an occupied site coalesces with its occupant.
// ---------------------------------------------------------------------------

struct DualNode {
  enum class Type { unresolved, leaf, alias, branch };
  Type type = Type::unresolved;
  int site = -1;      // leaf: time-0 ancestor site
  double time = 0.0;  // forward time at which the node was resolved
  std::vector<int> children;  // branch: [continuation, added sources...]
};

struct DualResult {
  std::vector<DualNode> nodes;
  std::vector<int> resolution_order;  // ids in decreasing resolution time
  int root = 0;
  std::vector<int> influence_set;  // sorted unique time-0 sites
  int branch_events = 0;
  bool exact = false;  // true only for pure voter records
};

namespace detail {

struct DualParticle {
  int site = -1;
  double frontier = 0.0;
  int out_node = -1;
  bool done = false;
};

struct DualEvent {
  double t;
  std::uint64_t seq;
  enum class Kind { advance, jump, spawn, finalize } kind;
  int particle;  // spawn: unused
  int site;      // jump/spawn target
  int out_node;  // spawn: node the new particle resolves
};

struct DualEventOrder {
  bool operator()(const DualEvent& a, const DualEvent& b) const {
    if (a.t != b.t) return a.t < b.t;  // max-heap: latest forward time first
    return a.seq > b.seq;
  }
};

}  // namespace detail

class BranchingDualRunner {
 public:
  BranchingDualRunner(const GraphicalRecord& rec, const Graph& g)
      : rec_(rec), g_(g), occupant_(g.n(), -1) {
    if (rec.pure_voter())
      throw std::invalid_argument(
          "run_branching_dual: voter records have no wake-up structure; use "
          "compute_state_via_dual");
    if (static_cast<int>(rec.arrows_in.size()) != g.n())
      throw std::invalid_argument("run_branching_dual: record does not match graph");
  }

  DualResult run(int x) {
    if (x < 0 || x >= g_.n()) throw std::invalid_argument("run_branching_dual: bad start");
    res_ = DualResult{};
    res_.root = new_node();
    int p = new_particle(x, rec_.horizon, res_.root);
    occupant_.assign(g_.n(), -1);
    occupant_[x] = p;
    schedule(p);
    while (!queue_.empty()) {
      auto ev = queue_.top();
      queue_.pop();
      dispatch(ev);
    }
    std::sort(res_.influence_set.begin(), res_.influence_set.end());
    res_.influence_set.erase(
        std::unique(res_.influence_set.begin(), res_.influence_set.end()),
        res_.influence_set.end());
    particles_.clear();
    return std::move(res_);
  }

 private:
  int new_node() {
    res_.nodes.emplace_back();
    return static_cast<int>(res_.nodes.size()) - 1;
  }

  int new_particle(int site, double frontier, int out) {
    particles_.push_back({site, frontier, out, false});
    return static_cast<int>(particles_.size()) - 1;
  }

  void push(double t, detail::DualEvent::Kind kind, int particle, int site, int out) {
    queue_.push({t, seq_++, kind, particle, site, out});
  }

  void resolve(int node, DualNode::Type type, double t) {
    res_.nodes[node].type = type;
    res_.nodes[node].time = t;
    res_.resolution_order.push_back(node);
  }

  // Examine the wake-up interval of (site, frontier) and schedule the next
  // backward event for the particle.
  void schedule(int pid) {
    auto& P = particles_[pid];
    const auto& dots = rec_.dots[P.site];
    auto dit = std::lower_bound(dots.begin(), dots.end(), P.frontier);
    const bool has_dot = dit != dots.begin();
    const double dstar = has_dot ? *(dit - 1) : 0.0;

    const auto& arrows = rec_.arrows_in[P.site];
    auto lo = std::upper_bound(arrows.begin(), arrows.end(), dstar,
                               [](double t, const auto& a) { return t < a.t; });
    auto hi = std::lower_bound(arrows.begin(), arrows.end(), P.frontier,
                               [](const auto& a, double t) { return a.t < t; });

    if (lo >= hi) {
      if (has_dot)
        push(dstar, detail::DualEvent::Kind::advance, pid, -1, -1);
      else
        push(0.0, detail::DualEvent::Kind::finalize, pid, -1, -1);
      return;
    }

    // distinct sources with their latest arrow time, newest first
    std::vector<std::pair<double, int>> sources;
    for (auto it = hi; it-- != lo;) {
      bool seen = false;
      for (const auto& s : sources)
        if (s.second == it->src) {
          seen = true;
          break;
        }
      if (!seen) sources.emplace_back(it->t, it->src);
    }

    if (sources.size() == 1) {
      push(sources[0].first, detail::DualEvent::Kind::jump, pid, sources[0].second, -1);
      return;
    }

    // branch: the particle's pending value becomes a branch node whose first
    // child is the interval-start continuation and whose remaining children
    // are the added sources
    ++res_.branch_events;
    int bnode = P.out_node;
    int cont = new_node();
    res_.nodes[bnode].site = P.site;
    res_.nodes[bnode].children.push_back(cont);
    P.out_node = cont;
    for (const auto& [t, src] : sources) {
      int cnode = new_node();
      res_.nodes[bnode].children.push_back(cnode);
      push(t, detail::DualEvent::Kind::spawn, -1, src, cnode);
    }
    resolve(bnode, DualNode::Type::branch, P.frontier);
    if (has_dot)
      push(dstar, detail::DualEvent::Kind::advance, pid, -1, -1);
    else
      push(0.0, detail::DualEvent::Kind::finalize, pid, -1, -1);
  }

  void dispatch(const detail::DualEvent& ev) {
    switch (ev.kind) {
      case detail::DualEvent::Kind::advance: {
        auto& P = particles_[ev.particle];
        P.frontier = ev.t;
        schedule(ev.particle);
        break;
      }
      case detail::DualEvent::Kind::jump: {
        auto& P = particles_[ev.particle];
        occupant_[P.site] = -1;
        int other = occupant_[ev.site];
        if (other >= 0) {
          // coalesce with the occupant: same site, no arrows in between, so
          // the occupant's pending value is this particle's value too
          res_.nodes[P.out_node].children.push_back(particles_[other].out_node);
          resolve(P.out_node, DualNode::Type::alias, ev.t);
          P.done = true;
        } else {
          occupant_[ev.site] = ev.particle;
          P.site = ev.site;
          P.frontier = ev.t;
          schedule(ev.particle);
        }
        break;
      }
      case detail::DualEvent::Kind::spawn: {
        int other = occupant_[ev.site];
        if (other >= 0) {
          res_.nodes[ev.out_node].children.push_back(particles_[other].out_node);
          resolve(ev.out_node, DualNode::Type::alias, ev.t);
        } else {
          int pid = new_particle(ev.site, ev.t, ev.out_node);
          occupant_[ev.site] = pid;
          schedule(pid);
        }
        break;
      }
      case detail::DualEvent::Kind::finalize: {
        auto& P = particles_[ev.particle];
        res_.nodes[P.out_node].site = P.site;
        resolve(P.out_node, DualNode::Type::leaf, 0.0);
        res_.influence_set.push_back(P.site);
        P.done = true;
        break;
      }
    }
  }

  const GraphicalRecord& rec_;
  const Graph& g_;
  std::vector<int> occupant_;
  std::vector<detail::DualParticle> particles_;
  std::priority_queue<detail::DualEvent, std::vector<detail::DualEvent>,
                      detail::DualEventOrder>
      queue_;
  DualResult res_;
  std::uint64_t seq_ = 0;
};

inline DualResult run_branching_dual(const GraphicalRecord& rec, const Graph& g, int x) {
  return BranchingDualRunner(rec, g).run(x);
}

// Replay the genealogy bottom-up from time-0 opinions. At a branch the value
// flips iff at least one added source disagrees with the continuation value.
inline int evaluate_dual(const DualResult& dual, const std::vector<int>& opinions) {
  std::vector<int> value(dual.nodes.size(), 0);
  for (auto it = dual.resolution_order.rbegin(); it != dual.resolution_order.rend(); ++it) {
    const DualNode& node = dual.nodes[*it];
    switch (node.type) {
      case DualNode::Type::leaf:
        value[*it] = opinions[node.site];
        break;
      case DualNode::Type::alias:
        value[*it] = value[node.children[0]];
        break;
      case DualNode::Type::branch: {
        int v0 = value[node.children[0]];
        bool change = false;
        for (std::size_t i = 1; i < node.children.size(); ++i)
          if (value[node.children[i]] != v0) change = true;
        value[*it] = change ? (v0 == 1 ? 2 : 1) : v0;
        break;
      }
      default:
        throw std::logic_error("evaluate_dual: unresolved node");
    }
  }
  return value[dual.root];
}

// Opinion of x at the record horizon, computed backward. Exact pathwise for
// pure voter records (the dual is a single ancestral walk). For latent
// records the branching dual is replayed on time-0 values, which is exact
// only in the large-lambda limit.
inline int compute_state_via_dual(const GraphicalRecord& rec, const Graph& g,
                                  const Configuration& init, int x) {
  if (x < 0 || x >= g.n()) throw std::invalid_argument("compute_state_via_dual: bad node");
  if (rec.pure_voter()) {
    int site = x;
    double t = rec.horizon;
    for (;;) {
      const auto& arrows = rec.arrows_in[site];
      auto it = std::lower_bound(arrows.begin(), arrows.end(), t,
                                 [](const auto& a, double tt) { return a.t < tt; });
      if (it == arrows.begin()) return opinion(init.state(site));
      --it;
      site = it->src;
      t = it->t;
    }
  }
  DualResult dual = run_branching_dual(rec, g, x);
  std::vector<int> opinions(g.n());
  for (int v = 0; v < g.n(); ++v) opinions[v] = opinion(init.state(v));
  return evaluate_dual(dual, opinions);
}

}  // namespace lvlab
