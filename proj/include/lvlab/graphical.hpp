#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "lvlab/dynamics.hpp"
#include "lvlab/graph.hpp"
#include "lvlab/rng.hpp"

namespace lvlab {

// Static Poisson scaffolding of one realization: arrow times on every
// directed edge (y -> x means "x imitates y if active") plus wake-up dots on
// every node. Arrow rates: 1 per directed edge in the edge version, 1/d(x)
// for arrows into x in the site version. Dots have rate lambda; a record with
// lambda = inf is a pure voter record and carries no dots.
struct GraphicalRecord {
  struct Arrow {
    double t;
    int src;
  };

  ModelKind kind = ModelKind::edge;
  double lambda = std::numeric_limits<double>::infinity();
  double horizon = 0.0;  // unrescaled
  std::vector<std::vector<Arrow>> arrows_in;  // per node, sorted by time
  std::vector<std::vector<double>> dots;      // per node, sorted

  bool pure_voter() const { return !std::isfinite(lambda); }

  std::uint64_t arrow_count() const {
    std::uint64_t c = 0;
    for (const auto& a : arrows_in) c += a.size();
    return c;
  }

  std::uint64_t dot_count() const {
    std::uint64_t c = 0;
    for (const auto& d : dots) c += d.size();
    return c;
  }
};

inline GraphicalRecord sample_graphical(const Graph& g, ModelKind kind, double lambda,
                                        double horizon, std::uint64_t seed,
                                        std::uint64_t max_events = 50000000ULL) {
  if (horizon < 0) throw std::invalid_argument("sample_graphical: negative horizon");
  if (!(lambda > 0)) throw std::invalid_argument("sample_graphical: lambda must be > 0");
  const bool voter = !std::isfinite(lambda);
  double arrow_rate_total = 0.0;
  for (int x = 0; x < g.n(); ++x)
    arrow_rate_total += (kind == ModelKind::edge) ? g.degree(x) : 1.0;
  double expected = horizon * (arrow_rate_total + (voter ? 0.0 : lambda * g.n()));
  if (expected > static_cast<double>(max_events))
    throw std::runtime_error("sample_graphical: expected event count exceeds cap");

  GraphicalRecord rec;
  rec.kind = kind;
  rec.lambda = lambda;
  rec.horizon = horizon;
  rec.arrows_in.resize(g.n());
  rec.dots.resize(g.n());

  Rng rng(seed);
  std::uint64_t count = 0;
  for (int x = 0; x < g.n(); ++x) {
    double rate = (kind == ModelKind::edge) ? 1.0 : 1.0 / g.degree(x);
    for (int y : g.neighbors(x)) {
      for (double t = rng.exponential(rate); t < horizon; t += rng.exponential(rate)) {
        rec.arrows_in[x].push_back({t, y});
        if (++count > max_events)
          throw std::runtime_error("sample_graphical: event cap exceeded");
      }
    }
    std::sort(rec.arrows_in[x].begin(), rec.arrows_in[x].end(),
              [](const auto& a, const auto& b) { return a.t < b.t; });
    if (!voter) {
      for (double t = rng.exponential(lambda); t < horizon; t += rng.exponential(lambda)) {
        rec.dots[x].push_back(t);
        if (++count > max_events)
          throw std::runtime_error("sample_graphical: event cap exceeded");
      }
    }
  }
  return rec;
}

// Deterministic forward sweep of a record in time order. At an arrow (y -> x)
// an active x with a differing opinion adopts opinion(y) -- latent in the
// latent model, active in a voter record. Dots wake latent nodes.
inline Configuration evolve_forward(const GraphicalRecord& rec, const Graph& g,
                                    const Configuration& init) {
  if (static_cast<int>(rec.arrows_in.size()) != g.n())
    throw std::invalid_argument("evolve_forward: record does not match graph");
  if (init.n() != g.n())
    throw std::invalid_argument("evolve_forward: init does not match graph");

  struct Event {
    double t;
    int node;
    int src;  // -1 for a wake-up dot
  };
  std::vector<Event> events;
  events.reserve(rec.arrow_count() + rec.dot_count());
  for (int x = 0; x < g.n(); ++x) {
    for (const auto& a : rec.arrows_in[x]) events.push_back({a.t, x, a.src});
    for (double t : rec.dots[x]) events.push_back({t, x, -1});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.node != b.node) return a.node < b.node;
    return a.src < b.src;
  });

  const bool voter = rec.pure_voter();
  std::vector<NodeState> states = init.states();
  for (const Event& e : events) {
    if (e.src < 0) {
      if (!is_active(states[e.node]))
        states[e.node] = make_state(opinion(states[e.node]), false);
      continue;
    }
    NodeState sx = states[e.node];
    if (!is_active(sx)) continue;
    int oy = opinion(states[e.src]);
    if (oy != opinion(sx)) states[e.node] = make_state(oy, !voter);
  }
  return Configuration::from_states(g, rec.kind, std::move(states));
}

}  // namespace lvlab
