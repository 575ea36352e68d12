#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lvlab/dual.hpp"
#include "lvlab/dynamics.hpp"
#include "lvlab/reaction.hpp"
#include "support/stats.hpp"

using namespace lvlab;

namespace {

Graph k4() {
  return Graph::from_edges(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
}

Graph random_graph_n8(std::uint64_t seed) {
  DegreeDistribution half{{{3, 0.5}, {4, 0.5}}};
  Rng rng(seed);
  return sample_configuration_graph(half, 8, rng, true);
}

}  // namespace

TEST_CASE("reaction phi") {
  REQUIRE(reaction_phi(0.5, 0.3) == 0.0);
  REQUIRE(reaction_phi(0.25, 0.5) == Catch::Approx(0.046875).margin(1e-15));
  for (double u : {0.1, 0.3, 0.45})
    REQUIRE(reaction_phi(u, 0.7) == Catch::Approx(-reaction_phi(1.0 - u, 0.7)).margin(1e-15));
  REQUIRE_THROWS_AS(reaction_phi(1.5, 0.5), std::invalid_argument);
}

TEST_CASE("ode closed form and solver") {
  // c=1, u0=0.9: z0 = 6.25, z(1) = 4 + 2.25 e, u(1) = 0.5 + 1/sqrt(z(1));
  // cross-checked against an independent adaptive integrator to 1e-12
  REQUIRE(ode_closed_form(1.0, 0.9, 1.0) == Catch::Approx(0.8144073649877).margin(1e-9));
  REQUIRE(ode_closed_form(1.0, 0.1, 1.0) == Catch::Approx(0.1855926350123).margin(1e-9));
  REQUIRE(ode_closed_form(1.0, 0.9, 1.0) + ode_closed_form(1.0, 0.1, 1.0) ==
          Catch::Approx(1.0).margin(1e-14));

  // fixed points are exact, not merely approximate
  for (double u0 : {0.0, 0.5, 1.0}) {
    auto sol = solve_ode(1.0, u0, {0.0, 1.0, 5.0});
    for (double v : sol.values) REQUIRE(v == u0);
  }

  // numerical vs closed form below 1e-8 across [0, 10]
  std::vector<double> grid;
  for (double t = 0.0; t <= 10.0 + 1e-9; t += 0.25) grid.push_back(t);
  for (double c : {0.1, 1.0}) {
    for (double u0 : {0.01, 0.3, 0.9}) {
      auto sol = solve_ode(c, u0, grid);
      double max_err = 0.0;
      for (std::size_t i = 0; i < grid.size(); ++i)
        max_err = std::max(max_err,
                           std::abs(sol.values[i] - ode_closed_form(c, u0, grid[i])));
      REQUIRE(max_err < 1e-8);
    }
  }

  // trajectories are monotone toward 1/2
  auto down = solve_ode(1.0, 0.9, grid);
  for (std::size_t i = 1; i < down.values.size(); ++i) {
    REQUIRE(down.values[i] <= down.values[i - 1] + 1e-15);
    REQUIRE(down.values[i] >= 0.5);
  }
  auto up = solve_ode(1.0, 0.2, grid);
  for (std::size_t i = 1; i < up.values.size(); ++i)
    REQUIRE(up.values[i] >= up.values[i - 1] - 1e-15);

  REQUIRE(ode_band_entry_time(1.0, 0.5, 0.03, 10.0) == 0.0);
  double t0 = ode_band_entry_time(1.0, 0.9, 0.1, 50.0);
  REQUIRE(std::abs(ode_closed_form(1.0, 0.9, t0) - 0.5) <= 0.1 + 1e-6);
}

TEST_CASE("exact pair meeting on K4") {
  Graph g = k4();
  // two edge walks on K4 meet at rate 2: P(apart at t) = e^{-2t}
  for (double t : {0.0, 0.3, 1.0, 2.0}) {
    double p = pair_never_meet_exact(g, ModelKind::edge, 0, 1, t);
    REQUIRE(p == Catch::Approx(std::exp(-2.0 * t)).margin(1e-10));
  }
}

TEST_CASE("exact triple classes") {
  Graph g = random_graph_n8(3);
  int x = 0;
  int y = g.neighbor(0, 0), z = g.neighbor(0, 1);

  TripleClassProbs at0 = triple_meeting_exact(g, ModelKind::edge, x, y, z, 0.0);
  REQUIRE(at0.x_y_z == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(at0.xyz == Catch::Approx(0.0).margin(1e-12));

  TripleClassProbs c = triple_meeting_exact(g, ModelKind::edge, x, y, z, 1.0);
  REQUIRE(c.total() == Catch::Approx(1.0).margin(1e-12));

  // the never-coalesced class is non-increasing in t
  double prev = 1.0;
  for (double t : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    double cur = triple_meeting_exact(g, ModelKind::edge, x, y, z, t).x_y_z;
    REQUIRE(cur <= prev + 1e-12);
    prev = cur;
  }

  REQUIRE_THROWS_AS(triple_meeting_exact(g, ModelKind::edge, 0, 0, 1, 1.0),
                    std::invalid_argument);
}

TEST_CASE("monte carlo triple frequencies match the exact solver") {
  Graph g = random_graph_n8(5);
  int x = 0, y = g.neighbor(0, 0), z = g.neighbor(0, 1);
  const double t = 1.0;
  const int R = 40000;
  for (ModelKind kind : {ModelKind::edge, ModelKind::site}) {
    TripleClassProbs exact = triple_meeting_exact(g, kind, x, y, z, t);
    long counts[5] = {0, 0, 0, 0, 0};
    for (int r = 0; r < R; ++r) {
      auto part = run_crw(g, kind, {x, y, z}, t,
                          derive_seed(606 + static_cast<int>(kind), r, 0));
      bool xy = part.same_cluster(0, 1), xz = part.same_cluster(0, 2),
           yz = part.same_cluster(1, 2);
      int cls = xy && xz ? 4 : xy ? 2 : xz ? 3 : yz ? 1 : 0;
      ++counts[cls];
    }
    double probs[5] = {exact.x_y_z, exact.x_yz, exact.xy_z, exact.xz_y, exact.xyz};
    for (int i = 0; i < 5; ++i) {
      double p_hat = static_cast<double>(counts[i]) / R;
      REQUIRE(std::abs(p_hat - probs[i]) <= 3 * teststat::binomial_se(probs[i], R) + 1e-4);
    }
  }
}

TEST_CASE("voter event probability") {
  Graph g = k4();
  int x = 0, y = 1, z = 2;
  REQUIRE(voter_event_probability(g, ModelKind::edge, x, y, z, 0.0, 1.0) == 0.0);
  REQUIRE(voter_event_probability(g, ModelKind::edge, x, y, z, 1.0, 1.0) ==
          Catch::Approx(0.0).margin(1e-12));

  // t = 0 with distinct starts: independent inputs, u(1-u^2)
  double u = 0.3;
  REQUIRE(voter_event_probability(g, ModelKind::edge, x, y, z, u, 0.0) ==
          Catch::Approx(u * (1 - u * u)).margin(1e-12));

  // forward-simulation oracle on K4 at u=0.3, t=1
  const int R = 100000;
  long hits = 0;
  for (int r = 0; r < R; ++r) {
    Rng ir(derive_seed(707, r, 0));
    Configuration init = Configuration::bernoulli(g, ModelKind::edge, u, ir);
    Configuration fin;
    simulate_voter(g, ModelKind::edge, 1.0, {}, init, derive_seed(707, r, 1), &fin);
    hits += opinion(fin.state(x)) == 1 &&
            (opinion(fin.state(y)) == 2 || opinion(fin.state(z)) == 2);
  }
  double p_hat = static_cast<double>(hits) / R;
  double exact = voter_event_probability(g, ModelKind::edge, x, y, z, u, 1.0);
  REQUIRE(std::abs(p_hat - exact) <= 3 * teststat::binomial_se(exact, R));
}

TEST_CASE("phi cancellation identity") {
  // the difference of the two event probabilities collapses to the
  // never-coalesced cubic: pair classes cancel exactly
  Graph g = random_graph_n8(11);
  int x = 0, y = g.neighbor(0, 0), z = g.neighbor(0, 2);
  for (ModelKind kind : {ModelKind::site, ModelKind::edge}) {
    TripleClassProbs c = triple_meeting_exact(g, kind, x, y, z, 1.0);
    for (double u : {0.1, 0.3, 0.5, 0.7}) {
      double phi_diff = voter_event_probability(c, 1.0 - u) - voter_event_probability(c, u);
      REQUIRE(std::abs(phi_diff - reaction_phi(u, c.x_y_z)) < 1e-12);
    }
  }
}

TEST_CASE("cp estimates") {
  DegreeDistribution mono{{{3, 1.0}}};
  CpSettings s;
  s.replicates_per_degree = 20000;
  s.seed = 12;
  CpEstimate site = estimate_cp(mono, ModelKind::site, s);
  REQUIRE(site.rows.size() == 1);
  REQUIRE(site.cp > 0.0);
  REQUIRE(site.cp < 1.0);

  // single atom: site and edge agree (time change leaves never-hit invariant)
  s.seed = 13;
  CpEstimate edge = estimate_cp(mono, ModelKind::edge, s);
  double se = std::hypot(site.se, edge.se);
  REQUIRE(std::abs(site.cp - edge.cp) <= 3 * se);

  // mixture weighting: site uses the size-biased law
  DegreeDistribution half{{{3, 0.5}, {4, 0.5}}};
  s.replicates_per_degree = 5000;
  s.seed = 14;
  CpEstimate mix = estimate_cp(half, ModelKind::site, s);
  REQUIRE(mix.rows.size() == 2);
  REQUIRE(mix.rows[0].weight == Catch::Approx(3.0 / 7.0));
  REQUIRE(mix.rows[1].weight == Catch::Approx(4.0 / 7.0));
  double manual = mix.rows[0].weight * mix.rows[0].p_hat +
                  mix.rows[1].weight * mix.rows[1].p_hat;
  REQUIRE(mix.cp == Catch::Approx(manual).margin(1e-15));

  // edge weights are the raw law
  s.seed = 15;
  CpEstimate mix_e = estimate_cp(half, ModelKind::edge, s);
  REQUIRE(mix_e.rows[0].weight == Catch::Approx(0.5));

  std::string text = format_cp_estimate(mix);
  REQUIRE(text.find("c_p,SE = ") != std::string::npos);
  REQUIRE(text.find("k,weight,P_hat,SE,replicates,timed_out") != std::string::npos);
}
