#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lvlab/graph.hpp"
#include "lvlab/lazy_tree.hpp"
#include "lvlab/rng.hpp"

namespace lvlab {

// Monte Carlo estimate of the partition-class law of the triple dual walk on
// a Galton-Watson tree. Replicates that hit the time cap are excluded and
// counted; more than 1% of them is treated as a configuration error.
struct TripleSurvival {
  std::array<long, 5> class_counts{};  // indexed by TripleClass
  long replicates = 0;
  long timed_out = 0;

  long classified() const { return replicates - timed_out; }

  double probability(TripleClass c) const {
    return static_cast<double>(class_counts[static_cast<int>(c)]) / classified();
  }

  double standard_error(TripleClass c) const {
    double p = probability(c);
    return std::sqrt(p * (1.0 - p) / classified());
  }
};

inline TripleSurvival estimate_survival_triple(const GwTreeModel& model,
                                               int separation_cut, double time_cap,
                                               long replicates, std::uint64_t seed,
                                               std::vector<TripleRunResult>* log = nullptr) {
  if (replicates < 1)
    throw std::invalid_argument("estimate_survival_triple: replicates must be >= 1");
  TripleSurvival out;
  out.replicates = replicates;
  if (log) log->reserve(replicates);
  for (long r = 0; r < replicates; ++r) {
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(r));
    TripleRunResult res = run_triple_walk(model, separation_cut, time_cap, rng);
    if (log) log->push_back(res);
    if (res.timed_out)
      ++out.timed_out;
    else
      ++out.class_counts[static_cast<int>(res.cls)];
  }
  if (out.timed_out * 100 > replicates)
    throw std::runtime_error(
        "estimate_survival_triple: more than 1% of replicates timed out");
  return out;
}

struct CpSettings {
  int separation_cut = 40;
  double time_cap = 1e4;
  long replicates_per_degree = 100000;
  std::uint64_t seed = 1;
};

// Reaction constant c_p: mixture over root degrees of the never-coalescence
// probabilities P_k(x|v1|v2), weighted by the size-biased law q_k in the site
// version and by p_k in the edge version.
struct CpEstimate {
  struct Row {
    int k = 0;
    double weight = 0.0;
    double p_hat = 0.0;
    double se = 0.0;
    long replicates = 0;
    long timed_out = 0;
  };
  std::vector<Row> rows;
  double cp = 0.0;
  double se = 0.0;
  ModelKind kind = ModelKind::site;
};

inline CpEstimate estimate_cp(const DegreeDistribution& dist, ModelKind kind,
                              const CpSettings& settings,
                              std::map<int, std::vector<TripleRunResult>>* logs = nullptr) {
  dist.validate();
  DegreeDistribution weights = (kind == ModelKind::site) ? size_biased(dist) : dist;
  CpEstimate out;
  out.kind = kind;
  double var = 0.0;
  for (const auto& [k, w] : weights.probs) {
    if (w <= 0.0) continue;
    GwTreeModel model = GwTreeModel::from_degree_distribution(dist, k, kind);
    TripleSurvival surv = estimate_survival_triple(
        model, settings.separation_cut, settings.time_cap,
        settings.replicates_per_degree,
        settings.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k)),
        logs ? &(*logs)[k] : nullptr);
    CpEstimate::Row row;
    row.k = k;
    row.weight = w;
    row.p_hat = surv.probability(TripleClass::x_y_z);
    row.se = surv.standard_error(TripleClass::x_y_z);
    row.replicates = surv.replicates;
    row.timed_out = surv.timed_out;
    out.rows.push_back(row);
    out.cp += w * row.p_hat;
    var += w * w * row.se * row.se;
  }
  out.se = std::sqrt(var);
  return out;
}

// Structured text block: one row per root degree plus a summary line.
inline std::string format_cp_estimate(const CpEstimate& est) {
  std::string s = "k,weight,P_hat,SE,replicates,timed_out\n";
  char buf[160];
  for (const auto& r : est.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%ld,%ld\n", r.k, r.weight,
                  r.p_hat, r.se, r.replicates, r.timed_out);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf), "c_p,SE = %.9g,%.9g\n", est.cp, est.se);
  s += buf;
  return s;
}

// ---------------------------------------------------------------------------
// Exact transient law of the three-walk coalescing process on a small graph,
// by uniformization over the stratified state space (ordered position triples,
// the three pair-merged strata, one absorbing all-merged state).
// ---------------------------------------------------------------------------

struct TripleClassProbs {
  double x_y_z = 0.0;
  double x_yz = 0.0;
  double xy_z = 0.0;
  double xz_y = 0.0;
  double xyz = 0.0;

  double pair_sum() const { return x_yz + xy_z + xz_y; }
  double total() const { return x_y_z + pair_sum() + xyz; }
};

namespace detail {

// Shared uniformization driver: step applies one transition of P = I + Q/L.
template <typename StepFn>
void uniformize(std::vector<double>& p, double lambda_unif, double t, StepFn step,
                double tail_tol = 1e-14) {
  if (t < 0) throw std::invalid_argument("uniformize: negative time");
  double lt = lambda_unif * t;
  if (lt > 700.0) throw std::invalid_argument("uniformize: horizon too large");
  std::vector<double> acc(p.size(), 0.0);
  double w = std::exp(-lt);
  double cum = w;
  for (std::size_t i = 0; i < p.size(); ++i) acc[i] = w * p[i];
  std::vector<double> next(p.size());
  long k = 0;
  const long k_cap = static_cast<long>(lt + 80.0 * std::sqrt(lt + 1.0) + 80.0);
  while (1.0 - cum > tail_tol && k < k_cap) {
    std::fill(next.begin(), next.end(), 0.0);
    step(p, next);
    p.swap(next);
    ++k;
    w *= lt / k;
    cum += w;
    for (std::size_t i = 0; i < p.size(); ++i) acc[i] += w * p[i];
  }
  if (1.0 - cum > tail_tol)
    throw std::runtime_error("uniformize: Poisson tail did not converge");
  // the dropped tail mass is below tail_tol
  p = std::move(acc);
}

}  // namespace detail

inline TripleClassProbs triple_meeting_exact(const Graph& g, ModelKind kind, int x,
                                             int y, int z, double t) {
  const long n = g.n();
  const long states_long = n * n * n + 3 * n * n + 1;
  if (states_long > 100000)
    throw std::invalid_argument("triple_meeting_exact: state space exceeds 1e5 (n <= 40)");
  if (x == y || x == z || y == z)
    throw std::invalid_argument("triple_meeting_exact: start nodes must be distinct");

  // layout: [0, n^3)            ordered triples (a,b,c), index (a n + b) n + c
  //         [n^3, n^3 + n^2)    x | yz merged:  (a = x pos, m), index a n + m
  //         [.., +2 n^2)        xy merged | z:  (m, c = z pos)
  //         [.., +3 n^2)        xz merged | y:  (m, b = y pos)
  //         last                all merged
  const long off_xyz = n * n * n;
  const long off_xy = off_xyz + n * n;
  const long off_xz = off_xy + n * n;
  const long absorbing = off_xz + n * n;

  const double lam =
      (kind == ModelKind::edge) ? 3.0 * g.max_degree() : 3.0;

  auto jump_rate = [&](int v) {
    return kind == ModelKind::edge ? static_cast<double>(g.degree(v)) : 1.0;
  };

  std::vector<double> p(absorbing + 1, 0.0);
  p[(static_cast<long>(x) * n + y) * n + z] = 1.0;

  auto step = [&](const std::vector<double>& from, std::vector<double>& to) {
    for (long s = 0; s < absorbing; ++s) {
      double mass = from[s];
      if (mass == 0.0) continue;
      if (s < off_xyz) {
        int c = static_cast<int>(s % n);
        int b = static_cast<int>((s / n) % n);
        int a = static_cast<int>(s / (n * n));
        double exit = jump_rate(a) + jump_rate(b) + jump_rate(c);
        to[s] += mass * (1.0 - exit / lam);
        double wa = (kind == ModelKind::edge) ? 1.0 / lam : 1.0 / (lam * g.degree(a));
        for (int u : g.neighbors(a)) {
          long tgt = (u == b)   ? off_xy + static_cast<long>(u) * n + c
                     : (u == c) ? off_xz + static_cast<long>(u) * n + b
                                : (static_cast<long>(u) * n + b) * n + c;
          to[tgt] += mass * wa;
        }
        double wb = (kind == ModelKind::edge) ? 1.0 / lam : 1.0 / (lam * g.degree(b));
        for (int u : g.neighbors(b)) {
          long tgt = (u == a)   ? off_xy + static_cast<long>(u) * n + c
                     : (u == c) ? off_xyz + static_cast<long>(a) * n + u
                                : (static_cast<long>(a) * n + u) * n + c;
          to[tgt] += mass * wb;
        }
        double wc = (kind == ModelKind::edge) ? 1.0 / lam : 1.0 / (lam * g.degree(c));
        for (int u : g.neighbors(c)) {
          long tgt = (u == a)   ? off_xz + static_cast<long>(u) * n + b
                     : (u == b) ? off_xyz + static_cast<long>(a) * n + u
                                : (static_cast<long>(a) * n + b) * n + u;
          to[tgt] += mass * wc;
        }
      } else {
        long base = (s < off_xy) ? off_xyz : (s < off_xz) ? off_xy : off_xz;
        long rel = s - base;
        int pv = static_cast<int>(rel / n);  // first coordinate of the stratum
        int qv = static_cast<int>(rel % n);
        double exit = jump_rate(pv) + jump_rate(qv);
        to[s] += mass * (1.0 - exit / lam);
        double wp = (kind == ModelKind::edge) ? 1.0 / lam : 1.0 / (lam * g.degree(pv));
        for (int u : g.neighbors(pv))
          to[u == qv ? absorbing : base + static_cast<long>(u) * n + qv] += mass * wp;
        double wq = (kind == ModelKind::edge) ? 1.0 / lam : 1.0 / (lam * g.degree(qv));
        for (int u : g.neighbors(qv))
          to[u == pv ? absorbing : base + static_cast<long>(pv) * n + u] += mass * wq;
      }
    }
    to[absorbing] += from[absorbing];
  };

  detail::uniformize(p, lam, t, step);

  TripleClassProbs out;
  for (long s = 0; s < off_xyz; ++s) out.x_y_z += p[s];
  for (long s = off_xyz; s < off_xy; ++s) out.x_yz += p[s];
  for (long s = off_xy; s < off_xz; ++s) out.xy_z += p[s];
  for (long s = off_xz; s < absorbing; ++s) out.xz_y += p[s];
  out.xyz = p[absorbing];
  return out;
}

// note: in the x|yz stratum the first coordinate is the position of the x
// walker; in xy|z and xz|y it is the merged cluster.

inline double pair_never_meet_exact(const Graph& g, ModelKind kind, int x, int y,
                                    double t) {
  const long n = g.n();
  if (n * n + 1 > 100000)
    throw std::invalid_argument("pair_never_meet_exact: graph too large");
  if (x == y) throw std::invalid_argument("pair_never_meet_exact: starts must differ");
  const long absorbing = n * n;
  const double lam = (kind == ModelKind::edge) ? 2.0 * g.max_degree() : 2.0;
  auto jump_rate = [&](int v) {
    return kind == ModelKind::edge ? static_cast<double>(g.degree(v)) : 1.0;
  };
  std::vector<double> p(absorbing + 1, 0.0);
  p[static_cast<long>(x) * n + y] = 1.0;
  auto step = [&](const std::vector<double>& from, std::vector<double>& to) {
    for (long s = 0; s < absorbing; ++s) {
      double mass = from[s];
      if (mass == 0.0) continue;
      int a = static_cast<int>(s / n), b = static_cast<int>(s % n);
      to[s] += mass * (1.0 - (jump_rate(a) + jump_rate(b)) / lam);
      double wa = (kind == ModelKind::edge) ? 1.0 / lam : 1.0 / (lam * g.degree(a));
      for (int u : g.neighbors(a))
        to[u == b ? absorbing : static_cast<long>(u) * n + b] += mass * wa;
      double wb = (kind == ModelKind::edge) ? 1.0 / lam : 1.0 / (lam * g.degree(b));
      for (int u : g.neighbors(b))
        to[u == a ? absorbing : static_cast<long>(a) * n + u] += mass * wb;
    }
    to[absorbing] += from[absorbing];
  };
  detail::uniformize(p, lam, t, step);
  return 1.0 - p[absorbing];
}

// P(xi_t(x) = 1 and (xi_t(y) = 2 or xi_t(z) = 2)) for the voter model started
// from product Bernoulli(u), via the exact dual partition classes:
//   P = P[x|y|z] u (1 - u^2) + (P[x|yz] + P[xy|z] + P[xz|y]) u (1 - u).
inline double voter_event_probability(const Graph& g, ModelKind kind, int x, int y,
                                      int z, double u, double t) {
  if (u < 0 || u > 1) throw std::invalid_argument("voter_event_probability: bad density");
  TripleClassProbs c = triple_meeting_exact(g, kind, x, y, z, t);
  return c.x_y_z * u * (1.0 - u * u) + c.pair_sum() * u * (1.0 - u);
}

inline double voter_event_probability(const TripleClassProbs& c, double u) {
  return c.x_y_z * u * (1.0 - u * u) + c.pair_sum() * u * (1.0 - u);
}

// Cubic reaction term p_survive * u (1-u) (1-2u).
inline double reaction_phi(double u, double p_survive) {
  if (u < 0 || u > 1) throw std::invalid_argument("reaction_phi: density outside [0,1]");
  if (p_survive < 0 || p_survive > 1)
    throw std::invalid_argument("reaction_phi: probability outside [0,1]");
  return p_survive * u * (1.0 - u) * (1.0 - 2.0 * u);
}

// ---------------------------------------------------------------------------
// Limiting ODE du/dt = c u (1-u) (1-2u).
// ---------------------------------------------------------------------------

struct OdeSolution {
  double c = 0.0;
  double u0 = 0.0;
  std::vector<double> times;
  std::vector<double> values;
};

// Closed form via the Bernoulli substitution z = 1/(u - 1/2)^2, which evolves
// as z(t) = 4 + (z0 - 4) e^{c t}.
inline double ode_closed_form(double c, double u0, double t) {
  double w0 = u0 - 0.5;
  if (w0 == 0.0) return 0.5;
  double z0 = 1.0 / (w0 * w0);
  double z = 4.0 + (z0 - 4.0) * std::exp(c * t);
  double r = 0.5 + std::copysign(1.0 / std::sqrt(z), w0);
  return r;
}

// Classical fourth-order Runge-Kutta with fixed step <= max_step. The three
// fixed points 0, 1/2, 1 are preserved exactly (every stage vanishes there).
inline OdeSolution solve_ode(double c, double u0, const std::vector<double>& grid,
                             double max_step = 1e-3) {
  if (c < 0) throw std::invalid_argument("solve_ode: c must be >= 0");
  if (u0 < 0 || u0 > 1) throw std::invalid_argument("solve_ode: u0 outside [0,1]");
  if (!(max_step > 0)) throw std::invalid_argument("solve_ode: bad step");
  auto f = [c](double u) { return c * u * (1.0 - u) * (1.0 - 2.0 * u); };

  OdeSolution sol;
  sol.c = c;
  sol.u0 = u0;
  double t = 0.0, u = u0;
  for (double tg : grid) {
    if (tg < t - 1e-12) throw std::invalid_argument("solve_ode: grid must be ascending");
    while (t < tg - 1e-15) {
      double h = std::min(max_step, tg - t);
      double k1 = f(u);
      double k2 = f(u + 0.5 * h * k1);
      double k3 = f(u + 0.5 * h * k2);
      double k4 = f(u + h * k3);
      u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
    }
    sol.times.push_back(tg);
    sol.values.push_back(u);
  }
  return sol;
}

// First time the solution enters the band |u - 1/2| <= eps (infinity if the
// grid never reaches it).
inline double ode_band_entry_time(double c, double u0, double eps, double horizon,
                                  double step = 1e-3) {
  if (std::abs(u0 - 0.5) <= eps) return 0.0;
  auto f = [c](double u) { return c * u * (1.0 - u) * (1.0 - 2.0 * u); };
  double t = 0.0, u = u0;
  while (t < horizon) {
    double k1 = f(u);
    double k2 = f(u + 0.5 * step * k1);
    double k3 = f(u + 0.5 * step * k2);
    double k4 = f(u + step * k3);
    u += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += step;
    if (std::abs(u - 0.5) <= eps) return t;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace lvlab
