#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lvlab/graph.hpp"

namespace lvlab {

// Continuous-time conventions throughout: the site walk leaves each node at
// total rate 1 (uniform neighbor), the edge walk at rate d(x) (each incident
// edge at rate 1). Both are reversible; the generator is symmetrized by
// conjugation with sqrt(pi) before eigenvalue work.

namespace detail {

inline Eigen::MatrixXd symmetrized_generator(const Graph& g, ModelKind kind) {
  const int n = g.n();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  if (kind == ModelKind::edge) {
    for (int v = 0; v < n; ++v) {
      s(v, v) = -static_cast<double>(g.degree(v));
      for (int u : g.neighbors(v)) s(v, u) = 1.0;
    }
  } else {
    // S(v,u) = q(v,u) sqrt(pi_v / pi_u) = 1 / sqrt(d(v) d(u))
    for (int v = 0; v < n; ++v) {
      s(v, v) = -1.0;
      for (int u : g.neighbors(v)) s(v, u) = 1.0 / std::sqrt(
          static_cast<double>(g.degree(v)) * g.degree(u));
    }
  }
  return s;
}

// Deflated power iteration on sigma I + S restricted to the complement of the
// known top eigenvector sqrt(pi). Residual-based stopping.
inline double spectral_gap_iterative(const Graph& g, ModelKind kind, double tol,
                                     long max_iters) {
  const int n = g.n();
  std::vector<double> pi = stationary_distribution(g, kind);
  Eigen::VectorXd v0(n);
  for (int v = 0; v < n; ++v) v0(v) = std::sqrt(pi[v]);
  v0.normalize();

  const double sigma = 2.0 * (kind == ModelKind::edge ? g.max_degree() : 1.0);
  auto apply = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
    // y = (sigma I + S) x without materializing S
    for (int v = 0; v < n; ++v) {
      double acc;
      if (kind == ModelKind::edge) {
        acc = (sigma - g.degree(v)) * x(v);
        for (int u : g.neighbors(v)) acc += x(u);
      } else {
        acc = (sigma - 1.0) * x(v);
        double inv = 1.0 / std::sqrt(static_cast<double>(g.degree(v)));
        for (int u : g.neighbors(v))
          acc += inv * x(u) / std::sqrt(static_cast<double>(g.degree(u)));
      }
      y(v) = acc;
    }
  };

  Eigen::VectorXd x(n), y(n);
  for (int v = 0; v < n; ++v) x(v) = std::cos(0.7 * (v + 1));  // fixed start
  x -= v0 * v0.dot(x);
  x.normalize();
  double ray = 0.0;
  for (long it = 0; it < max_iters; ++it) {
    apply(x, y);
    y -= v0 * v0.dot(y);
    ray = x.dot(y);
    double resid = (y - ray * x).norm();
    double ynorm = y.norm();
    if (ynorm == 0.0) return sigma;
    y /= ynorm;
    x.swap(y);
    if (resid < tol) return sigma - ray;
  }
  throw std::runtime_error("spectral_gap: power iteration did not converge after " +
                           std::to_string(max_iters) + " iterations");
}

}  // namespace detail

// Spectral gap of the walk generator: dense symmetric eigensolve for n <= 500,
// deflated power iteration (tolerance 1e-9 on the residual) beyond that.
inline double spectral_gap(const Graph& g, ModelKind kind) {
  if (!g.is_connected()) throw std::invalid_argument("spectral_gap: graph disconnected");
  const int n = g.n();
  if (n > 500) return detail::spectral_gap_iterative(g, kind, 1e-9, 200000);
  Eigen::MatrixXd s = detail::symmetrized_generator(g, kind);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  // eigenvalues ascending; the last is 0 (stationary mode)
  return -es.eigenvalues()(n - 2);
}

// Worst-case relative deviation from stationarity,
// Delta(t) = max_{x,y} |p_t(x,y)/pi(y) - 1|, by a uniformized transient solve
// from every start. Dense vectors, so restricted to n <= 500.
inline std::vector<double> tv_distance_curve(const Graph& g, ModelKind kind,
                                             const std::vector<double>& times) {
  if (g.n() > 500) throw std::invalid_argument("tv_distance_curve: n exceeds 500");
  if (!g.is_connected())
    throw std::invalid_argument("tv_distance_curve: graph disconnected");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0 || (i > 0 && times[i] < times[i - 1]))
      throw std::invalid_argument("tv_distance_curve: times must be ascending and >= 0");
  }
  const int n = g.n();
  const std::vector<double> pi = stationary_distribution(g, kind);
  const double lam = (kind == ModelKind::edge) ? g.max_degree() : 1.0;

  std::vector<double> delta(times.size(), 0.0);
  std::vector<double> p(n), acc(n), next(n);
  for (int x = 0; x < n; ++x) {
    std::fill(p.begin(), p.end(), 0.0);
    p[x] = 1.0;
    double t_prev = 0.0;
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      double dt = times[ti] - t_prev;
      t_prev = times[ti];
      if (dt > 0) {
        // p <- p exp(Q dt) via the Poisson mixture of powers of I + Q/lam
        double lt = lam * dt;
        double w = std::exp(-lt), cum = w;
        for (int v = 0; v < n; ++v) acc[v] = w * p[v];
        long k = 0;
        const long cap = static_cast<long>(lt + 80.0 * std::sqrt(lt + 1.0) + 80.0);
        while (1.0 - cum > 1e-14 && k < cap) {
          std::fill(next.begin(), next.end(), 0.0);
          for (int v = 0; v < n; ++v) {
            double mass = p[v];
            if (mass == 0.0) continue;
            if (kind == ModelKind::edge) {
              next[v] += mass * (1.0 - g.degree(v) / lam);
              double wv = mass / lam;
              for (int u : g.neighbors(v)) next[u] += wv;
            } else {
              next[v] += mass * (1.0 - 1.0 / lam);
              double wv = mass / (lam * g.degree(v));
              for (int u : g.neighbors(v)) next[u] += wv;
            }
          }
          p.swap(next);
          ++k;
          w *= lt / k;
          cum += w;
          for (int v = 0; v < n; ++v) acc[v] += w * p[v];
        }
        p = acc;
      }
      double worst = 0.0;
      for (int v = 0; v < n; ++v)
        worst = std::max(worst, std::abs(p[v] / pi[v] - 1.0));
      delta[ti] = std::max(delta[ti], worst);
    }
  }
  return delta;
}

// Flow Q(S, S^c) / pi(S) of one cut; Q(x,y) = pi(x) q(x,y), so 1/D per
// directed edge in the site version and 1/n in the edge version.
inline double cut_ratio(const Graph& g, ModelKind kind, const std::vector<bool>& in_set) {
  const std::vector<double> pi = stationary_distribution(g, kind);
  const double q_edge = (kind == ModelKind::edge)
                            ? 1.0 / g.n()
                            : 1.0 / (2.0 * g.edge_count());
  double pi_s = 0.0, flow = 0.0;
  for (int v = 0; v < g.n(); ++v) {
    if (!in_set[v]) continue;
    pi_s += pi[v];
    for (int u : g.neighbors(v))
      if (!in_set[u]) flow += q_edge;
  }
  if (pi_s <= 0.0) throw std::invalid_argument("cut_ratio: empty set");
  return flow / pi_s;
}

// Isoperimetric constant h = min over pi(S) <= 1/2 of Q(S,S^c)/pi(S), by Gray
// code enumeration of all 2^n cuts with incremental flow updates.
inline double conductance_exact(const Graph& g, ModelKind kind) {
  const int n = g.n();
  if (n > 20) throw std::invalid_argument("conductance_exact: n exceeds 20");
  if (!g.is_connected())
    throw std::invalid_argument("conductance_exact: graph disconnected");
  const std::vector<double> pi = stationary_distribution(g, kind);
  const double q_edge = (kind == ModelKind::edge)
                            ? 1.0 / g.n()
                            : 1.0 / (2.0 * g.edge_count());

  std::vector<char> member(n, 0);
  double pi_s = 0.0, boundary = 0.0;
  double best = std::numeric_limits<double>::infinity();
  const std::uint32_t count = 1u << n;
  std::uint32_t gray_prev = 0;
  for (std::uint32_t i = 1; i < count; ++i) {
    std::uint32_t gray = i ^ (i >> 1);
    int v = std::countr_zero(gray ^ gray_prev);
    gray_prev = gray;
    if (member[v]) {
      member[v] = 0;
      pi_s -= pi[v];
      for (int u : g.neighbors(v)) boundary += member[u] ? q_edge : -q_edge;
    } else {
      member[v] = 1;
      pi_s += pi[v];
      for (int u : g.neighbors(v)) boundary += member[u] ? -q_edge : q_edge;
    }
    if (pi_s > 0.0 && pi_s <= 0.5 + 1e-12)
      best = std::min(best, boundary / pi_s);
  }
  return best;
}

struct MixingReport {
  ModelKind kind = ModelKind::site;
  int n = 0;
  double gap = 0.0;
  double h = std::numeric_limits<double>::quiet_NaN();  // exact only for n <= 20
  double pi_min = 0.0;
  std::vector<double> times;
  std::vector<double> delta;
};

inline MixingReport mixing_report(const Graph& g, ModelKind kind,
                                  const std::vector<double>& times) {
  MixingReport rep;
  rep.kind = kind;
  rep.n = g.n();
  rep.gap = spectral_gap(g, kind);
  if (g.n() <= 20) rep.h = conductance_exact(g, kind);
  auto pi = stationary_distribution(g, kind);
  rep.pi_min = *std::min_element(pi.begin(), pi.end());
  rep.times = times;
  if (g.n() <= 500) rep.delta = tv_distance_curve(g, kind, times);
  return rep;
}

}  // namespace lvlab
