#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "lvlab/graph.hpp"

using namespace lvlab;

namespace {

Graph k4() {
  return Graph::from_edges(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
}

// triangular prism: two triangles joined by a matching, 3-regular on 6 nodes
Graph prism() {
  return Graph::from_edges(6, {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5},
                               {0, 3}, {1, 4}, {2, 5}});
}

long triangle_count(const Graph& g) {
  long c = 0;
  for (int v = 0; v < g.n(); ++v)
    for (int u : g.neighbors(v))
      for (int w : g.neighbors(u))
        if (v < u && u < w && g.has_edge(v, w)) ++c;
  return c;
}

}  // namespace

TEST_CASE("degree distribution validation") {
  DegreeDistribution d{{{3, 0.5}, {4, 0.5}}};
  REQUIRE_NOTHROW(d.validate());
  REQUIRE(d.max_degree() == 4);
  REQUIRE(d.mean() == Catch::Approx(3.5));

  DegreeDistribution bad{{{2, 0.5}, {4, 0.5}}};
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  DegreeDistribution unnormalized{{{3, 0.6}, {4, 0.5}}};
  REQUIRE_THROWS_AS(unnormalized.validate(), std::invalid_argument);
}

TEST_CASE("size biased law") {
  // single atom is invariant
  DegreeDistribution mono{{{3, 1.0}}};
  auto q0 = size_biased(mono);
  REQUIRE(q0.probs.at(3) == Catch::Approx(1.0));

  // direct evaluation of k p_k / mu for {3: .5, 4: .5}: mu = 3.5
  DegreeDistribution d{{{3, 0.5}, {4, 0.5}}};
  auto q = size_biased(d);
  REQUIRE(q.probs.at(3) == Catch::Approx(3.0 / 7.0).margin(1e-15));
  REQUIRE(q.probs.at(4) == Catch::Approx(4.0 / 7.0).margin(1e-15));

  double total = 0.0;
  for (auto& [k, p] : q.probs) total += p;
  REQUIRE(total == Catch::Approx(1.0).margin(1e-12));

  // applying it twice moves the mass again (not idempotent off a single atom)
  auto q2 = size_biased(q);
  REQUIRE(q2.probs.at(4) > q.probs.at(4));
}

TEST_CASE("degree sequence sampling") {
  DegreeDistribution mono{{{3, 1.0}}};
  Rng rng(7);
  auto degs = sample_degree_sequence(mono, 4, rng);
  REQUIRE(degs == std::vector<int>{3, 3, 3, 3});

  // odd-impossible parity: every draw sums to 15, the retry cap must trip
  REQUIRE_THROWS_AS(sample_degree_sequence(mono, 5, rng, 1000), std::runtime_error);

  DegreeDistribution half{{{3, 0.5}, {4, 0.5}}};
  Rng rng2(11);
  auto big = sample_degree_sequence(half, 100000, rng2);
  long threes = 0;
  for (int d : big)
    if (d == 3) ++threes;
  double frac = static_cast<double>(threes) / big.size();
  REQUIRE(frac > 0.49);  // binomial concentration, 3 sigma ~ 0.0047
  REQUIRE(frac < 0.51);
  long sum = 0;
  for (int d : big) sum += d;
  REQUIRE(sum % 2 == 0);
}

TEST_CASE("configuration model on forced degree sequences") {
  Rng rng(3);
  // the unique simple 3-regular graph on 4 nodes is K4
  Graph g = build_configuration_graph({3, 3, 3, 3}, rng);
  REQUIRE(g.n() == 4);
  REQUIRE(g.edge_count() == 6);
  for (int v = 0; v < 4; ++v) REQUIRE(g.degree(v) == 3);

  // every accepted output is simple and satisfies the handshake identity
  DegreeDistribution half{{{3, 0.5}, {4, 0.5}}};
  for (int trial = 0; trial < 20; ++trial) {
    auto degs = sample_degree_sequence(half, 40, rng);
    Graph h = build_configuration_graph(degs, rng);
    long sum = 0;
    for (int v = 0; v < h.n(); ++v) {
      sum += h.degree(v);
      auto nb = h.neighbors(v);
      for (std::size_t i = 0; i + 1 < nb.size(); ++i) REQUIRE(nb[i] < nb[i + 1]);
      REQUIRE(h.degree(v) == degs[v]);
    }
    REQUIRE(sum == 2 * h.edge_count());
  }
}

TEST_CASE("3-regular graphs on 6 nodes are K33 or the prism") {
  // enumeration oracle: exactly two simple 3-regular graphs on 6 vertices
  // exist, K_{3,3} (triangle-free) and the prism (two triangles)
  Rng rng(12345);
  int seen_k33 = 0, seen_prism = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    Graph g = build_configuration_graph({3, 3, 3, 3, 3, 3}, rng);
    long tri = triangle_count(g);
    if (tri == 0)
      ++seen_k33;
    else {
      REQUIRE(tri == 2);
      ++seen_prism;
    }
  }
  REQUIRE(seen_k33 > 0);
  REQUIRE(seen_prism > 0);
  REQUIRE(seen_k33 + seen_prism == 10000);
}

TEST_CASE("ball and collision counts") {
  Graph g = k4();
  for (int v = 0; v < 4; ++v) {
    LocalBall b = ball(g, v, 1);
    REQUIRE(b.size == 4);
    REQUIRE(b.collisions == 3);  // 6 edges vs spanning tree of 4 nodes
    REQUIRE_FALSE(b.is_tree);
  }

  LocalBall b0 = ball(g, 2, 0);
  REQUIRE(b0.size == 1);
  REQUIRE(b0.collisions == 0);
  REQUIRE(b0.is_tree);

  // prism: radius-1 ball has the two triangle partners adjacent
  Graph p = prism();
  LocalBall bp = ball(p, 0, 1);
  REQUIRE(bp.size == 4);
  REQUIRE(bp.internal_edges == 4);
  REQUIRE(bp.collisions == 1);
}

TEST_CASE("balls on large random 3-regular graphs are mostly trees") {
  DegreeDistribution mono{{{3, 1.0}}};
  Rng rng(99);
  Graph g = sample_configuration_graph(mono, 10000, rng);

  // r = floor((1/5) log_3 n) = 1 at n = 1e4: radius-1 balls in a simple
  // graph never collide
  int r_short = static_cast<int>(std::log(10000.0) / (5.0 * std::log(3.0)));
  REQUIRE(r_short == 1);

  int collide_r1 = 0, collide_r2 = 0;
  for (int i = 0; i < 200; ++i) {
    int start = static_cast<int>(rng.below(g.n()));
    if (!ball(g, start, 1).is_tree) ++collide_r1;
    if (!ball(g, start, 2).is_tree) ++collide_r2;
  }
  REQUIRE(collide_r1 == 0);
  REQUIRE(collide_r2 <= 20);  // >= 90% tree at radius 2

  // branching bound on ball size
  LocalBall b = ball(g, 0, 3);
  REQUIRE(b.size <= 1 + 3 * 2 * 2 * 3);
}

TEST_CASE("stationary distributions") {
  Graph g = k4();
  auto pi_e = stationary_distribution(g, ModelKind::edge);
  auto pi_s = stationary_distribution(g, ModelKind::site);
  for (int v = 0; v < 4; ++v) {
    REQUIRE(pi_e[v] == Catch::Approx(0.25));
    REQUIRE(pi_s[v] == Catch::Approx(0.25));
  }

  // mixed degrees [3,3,3,3,4,4]: site weight of a degree-4 node is 4/20
  Rng rng(5);
  Graph h = build_configuration_graph({3, 3, 3, 3, 4, 4}, rng);
  auto pi = stationary_distribution(h, ModelKind::site);
  for (int v = 0; v < h.n(); ++v)
    REQUIRE(pi[v] == Catch::Approx(h.degree(v) / 20.0));

  Graph disconnected = Graph::from_edges(
      8, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3},
          {4, 5}, {4, 6}, {4, 7}, {5, 6}, {5, 7}, {6, 7}});
  REQUIRE_THROWS_AS(stationary_distribution(disconnected, ModelKind::edge),
                    std::invalid_argument);
}

TEST_CASE("graph file round trip") {
  Rng rng(21);
  DegreeDistribution half{{{3, 0.5}, {4, 0.5}}};
  Graph g = sample_configuration_graph(half, 30, rng);

  std::stringstream ss;
  write_graph_file(g, ss);
  std::string text = ss.str();
  REQUIRE(text.substr(0, text.find(' ')) == "30");

  std::stringstream in(text);
  Graph h = read_graph_file(in);
  REQUIRE(h.n() == g.n());
  REQUIRE(h.edges() == g.edges());

  std::stringstream bad("2 1\n1 0\n");
  REQUIRE_THROWS(read_graph_file(bad));
}

TEST_CASE("simplicity is rejected, not repaired") {
  REQUIRE_THROWS_AS(Graph::from_edges(3, {{0, 0}}), std::invalid_argument);
  REQUIRE_THROWS_AS(Graph::from_edges(3, {{0, 1}, {1, 0}}), std::invalid_argument);
  Rng rng(1);
  REQUIRE_THROWS_AS(build_configuration_graph({3, 3}, rng, 50), std::runtime_error);
}

TEST_CASE("graph file rejects malformed input") {
  std::stringstream empty("");
  REQUIRE_THROWS(read_graph_file(empty));
  std::stringstream truncated("4 3\n0 1\n");
  REQUIRE_THROWS(read_graph_file(truncated));
  std::stringstream out_of_range("2 1\n0 5\n");
  REQUIRE_THROWS(read_graph_file(out_of_range));
  std::stringstream dup("3 2\n0 1\n0 1\n");
  REQUIRE_THROWS(read_graph_file(dup));
  REQUIRE_THROWS(read_graph_file("/nonexistent/graph.txt"));
}
