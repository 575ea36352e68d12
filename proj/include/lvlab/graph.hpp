#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lvlab/rng.hpp"

namespace lvlab {

enum class ModelKind { site, edge };

inline const char* to_string(ModelKind k) {
  return k == ModelKind::site ? "site" : "edge";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "site") return ModelKind::site;
  if (s == "edge") return ModelKind::edge;
  throw std::invalid_argument("unknown model kind: '" + s + "' (expected site|edge)");
}

// Degree law with bounded support. Valid laws have probabilities summing to 1
// (within 1e-12) and support contained in [3, M]; degrees <= 2 are rejected so
// generated graphs are connected with good expansion.
struct DegreeDistribution {
  std::map<int, double> probs;

  int max_degree() const {
    int m = 0;
    for (const auto& [k, p] : probs)
      if (p > 0.0) m = std::max(m, k);
    return m;
  }

  double mean() const {
    double mu = 0.0;
    for (const auto& [k, p] : probs) mu += k * p;
    return mu;
  }

  void validate() const {
    if (probs.empty()) throw std::invalid_argument("degree distribution: empty");
    double sum = 0.0;
    for (const auto& [k, p] : probs) {
      if (p < 0.0) throw std::invalid_argument("degree distribution: negative probability");
      if (p > 0.0 && k <= 2)
        throw std::invalid_argument("degree distribution: support must satisfy k >= 3");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("degree distribution: probabilities must sum to 1");
  }

  int sample(Rng& rng) const {
    double u = rng.uniform01();
    double acc = 0.0;
    int last = 0;
    for (const auto& [k, p] : probs) {
      if (p <= 0.0) continue;
      acc += p;
      last = k;
      if (u < acc) return k;
    }
    return last;  // guards against acc rounding slightly below 1
  }
};

// q_k = k p_k / mu: the degree law seen from a stationary degree-biased walk.
inline DegreeDistribution size_biased(const DegreeDistribution& dist) {
  dist.validate();
  double mu = dist.mean();
  DegreeDistribution out;
  for (const auto& [k, p] : dist.probs)
    if (p > 0.0) out.probs[k] = k * p / mu;
  return out;
}

// Immutable simple graph, dense ids 0..n-1, CSR adjacency with sorted
// neighbor lists. Shared read-only across worker threads.
class Graph {
 public:
  Graph() = default;

  static Graph from_edges(int n, std::vector<std::pair<int, int>> edges) {
    if (n <= 0) throw std::invalid_argument("graph: n must be positive");
    std::vector<int> deg(n, 0);
    for (auto& [u, v] : edges) {
      if (u > v) std::swap(u, v);
      if (u < 0 || v >= n) throw std::invalid_argument("graph: vertex id out of range");
      if (u == v) throw std::invalid_argument("graph: self-loop");
      ++deg[u];
      ++deg[v];
    }
    std::sort(edges.begin(), edges.end());
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
      throw std::invalid_argument("graph: parallel edge");

    Graph g;
    g.n_ = n;
    g.m_ = static_cast<long>(edges.size());
    g.offsets_.assign(n + 1, 0);
    for (int v = 0; v < n; ++v) g.offsets_[v + 1] = g.offsets_[v] + deg[v];
    g.neighbors_.resize(2 * edges.size());
    std::vector<int> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
    for (const auto& [u, v] : edges) {
      g.neighbors_[cursor[u]++] = v;
      g.neighbors_[cursor[v]++] = u;
    }
    for (int v = 0; v < n; ++v) {
      auto b = g.neighbors_.begin() + g.offsets_[v];
      auto e = g.neighbors_.begin() + g.offsets_[v + 1];
      std::sort(b, e);
    }
    return g;
  }

  int n() const { return n_; }
  long edge_count() const { return m_; }
  int degree(int v) const { return offsets_[v + 1] - offsets_[v]; }

  std::span<const int> neighbors(int v) const {
    return {neighbors_.data() + offsets_[v],
            static_cast<std::size_t>(degree(v))};
  }

  int neighbor(int v, int i) const { return neighbors_[offsets_[v] + i]; }

  int max_degree() const {
    int m = 0;
    for (int v = 0; v < n_; ++v) m = std::max(m, degree(v));
    return m;
  }

  bool has_edge(int u, int v) const {
    auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
  }

  bool is_connected() const {
    if (n_ == 0) return false;
    std::vector<char> seen(n_, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int u : neighbors(v))
        if (!seen[u]) {
          seen[u] = 1;
          ++count;
          stack.push_back(u);
        }
    }
    return count == n_;
  }

  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(m_);
    for (int v = 0; v < n_; ++v)
      for (int u : neighbors(v))
        if (v < u) out.emplace_back(v, u);
    return out;
  }

 private:
  int n_ = 0;
  long m_ = 0;
  std::vector<int> offsets_;
  std::vector<int> neighbors_;
};

// i.i.d. degrees conditioned on even sum. The whole vector is redrawn until
// the parity condition holds, which preserves the conditional law exactly.
inline std::vector<int> sample_degree_sequence(const DegreeDistribution& dist,
                                               int n, Rng& rng,
                                               long max_retries = 1000000) {
  dist.validate();
  if (n < 2) throw std::invalid_argument("sample_degree_sequence: n must be >= 2");
  std::vector<int> degrees(n);
  for (long attempt = 0; attempt < max_retries; ++attempt) {
    long sum = 0;
    for (int i = 0; i < n; ++i) {
      degrees[i] = dist.sample(rng);
      sum += degrees[i];
    }
    if (sum % 2 == 0) return degrees;
  }
  throw std::runtime_error(
      "sample_degree_sequence: retry cap exceeded (degree sum parity never even)");
}

// Uniform pairing of half-edges; the whole pairing is rejected and redrawn
// whenever a self-loop or parallel edge appears, so accepted graphs follow
// the configuration-model law conditioned on simplicity.
inline Graph build_configuration_graph(const std::vector<int>& degrees, Rng& rng,
                                       int max_retries = 1000) {
  long sum = 0;
  for (int d : degrees) {
    if (d < 3) throw std::invalid_argument("build_configuration_graph: degree < 3");
    sum += d;
  }
  if (sum % 2 != 0)
    throw std::invalid_argument("build_configuration_graph: odd degree sum");

  const int n = static_cast<int>(degrees.size());
  std::vector<int> stubs;
  stubs.reserve(sum);
  for (int v = 0; v < n; ++v)
    for (int i = 0; i < degrees[v]; ++i) stubs.push_back(v);

  std::vector<std::pair<int, int>> edges;
  edges.reserve(sum / 2);
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    // Fisher-Yates; pairing consecutive entries of a uniform shuffle is a
    // uniform perfect matching of the stubs.
    for (std::size_t i = stubs.size() - 1; i > 0; --i) {
      std::size_t j = rng.below(i + 1);
      std::swap(stubs[i], stubs[j]);
    }
    bool simple = true;
    edges.clear();
    for (std::size_t i = 0; i + 1 < stubs.size(); i += 2) {
      int u = stubs[i], v = stubs[i + 1];
      if (u == v) {
        simple = false;
        break;
      }
      edges.emplace_back(std::min(u, v), std::max(u, v));
    }
    if (!simple) continue;
    std::sort(edges.begin(), edges.end());
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end()) continue;
    return Graph::from_edges(n, std::move(edges));
  }
  throw std::runtime_error(
      "build_configuration_graph: retries exhausted; degree sequence has "
      "vanishing simple-graph probability at this n");
}

inline Graph sample_configuration_graph(const DegreeDistribution& dist, int n,
                                        Rng& rng, bool require_connected = false,
                                        int max_retries = 1000) {
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    auto degrees = sample_degree_sequence(dist, n, rng);
    Graph g = build_configuration_graph(degrees, rng, max_retries);
    if (!require_connected || g.is_connected()) return g;
  }
  throw std::runtime_error("sample_configuration_graph: no connected sample");
}

// BFS ball of radius r around a start node. collisions counts the edges in
// excess of a spanning tree of the ball, so is_tree <=> collisions == 0.
struct LocalBall {
  int start = 0;
  int radius = 0;
  long size = 0;
  long internal_edges = 0;
  long collisions = 0;
  bool is_tree = true;
};

inline LocalBall ball(const Graph& g, int start, int radius) {
  if (start < 0 || start >= g.n()) throw std::invalid_argument("ball: bad start node");
  if (radius < 0) throw std::invalid_argument("ball: negative radius");
  std::vector<int> dist(g.n(), -1);
  std::vector<int> members;
  members.push_back(start);
  dist[start] = 0;
  for (std::size_t head = 0; head < members.size(); ++head) {
    int v = members[head];
    if (dist[v] == radius) continue;
    for (int u : g.neighbors(v))
      if (dist[u] < 0) {
        dist[u] = dist[v] + 1;
        members.push_back(u);
      }
  }
  LocalBall out;
  out.start = start;
  out.radius = radius;
  out.size = static_cast<long>(members.size());
  long edges = 0;
  for (int v : members)
    for (int u : g.neighbors(v))
      if (dist[u] >= 0 && v < u) ++edges;
  out.internal_edges = edges;
  out.collisions = edges - (out.size - 1);
  out.is_tree = (out.collisions == 0);
  return out;
}

// Stationary law of the dual walk: uniform for the edge version, degree
// biased d(x)/D for the site version. Requires a connected graph.
inline std::vector<double> stationary_distribution(const Graph& g, ModelKind kind) {
  if (!g.is_connected())
    throw std::invalid_argument("stationary_distribution: graph is disconnected");
  std::vector<double> pi(g.n());
  if (kind == ModelKind::edge) {
    std::fill(pi.begin(), pi.end(), 1.0 / g.n());
  } else {
    double total = 2.0 * g.edge_count();
    for (int v = 0; v < g.n(); ++v) pi[v] = g.degree(v) / total;
  }
  return pi;
}

// Text format: "n m" on the first line, then one "u v" line per edge with
// u < v, 0-based ids, LF endings, edges in lexicographic order.
inline void write_graph_file(const Graph& g, std::ostream& os) {
  os << g.n() << ' ' << g.edge_count() << '\n';
  for (const auto& [u, v] : g.edges()) os << u << ' ' << v << '\n';
}

inline void write_graph_file(const Graph& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_graph_file(g, os);
}

inline Graph read_graph_file(std::istream& is) {
  int n = 0;
  long m = 0;
  if (!(is >> n >> m)) throw std::runtime_error("graph file: bad header");
  std::vector<std::pair<int, int>> edges;
  edges.reserve(m);
  for (long i = 0; i < m; ++i) {
    int u, v;
    if (!(is >> u >> v)) throw std::runtime_error("graph file: truncated edge list");
    if (u >= v) throw std::runtime_error("graph file: edges must satisfy u < v");
    edges.emplace_back(u, v);
  }
  return Graph::from_edges(n, std::move(edges));
}

inline Graph read_graph_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open graph file: " + path);
  return read_graph_file(is);
}

}  // namespace lvlab
