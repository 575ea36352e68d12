#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "lvlab/graph.hpp"
#include "lvlab/rng.hpp"

namespace lvlab {

// Galton-Watson tree law for dual-walk experiments: the root has a fixed
// degree, every other vertex draws its degree from the size-biased law q
// (so it has j children with probability q_{j+1}). A regular tree is the
// single-atom special case.
struct GwTreeModel {
  int root_degree = 3;
  std::vector<int> degree_vals;    // non-root degrees
  std::vector<double> degree_cum;  // cumulative probabilities
  ModelKind kind = ModelKind::site;

  static GwTreeModel regular(int d, ModelKind kind) {
    GwTreeModel m;
    m.root_degree = d;
    m.degree_vals = {d};
    m.degree_cum = {1.0};
    m.kind = kind;
    return m;
  }

  // Offspring structureematched to a degree law p: non-root degrees follow
  // size_biased(p), root degree fixed to k.
  static GwTreeModel from_degree_distribution(const DegreeDistribution& dist,
                                              int root_k, ModelKind kind) {
    DegreeDistribution q = size_biased(dist);
    GwTreeModel m;
    m.root_degree = root_k;
    m.kind = kind;
    double acc = 0.0;
    for (const auto& [k, p] : q.probs) {
      if (p <= 0.0) continue;
      acc += p;
      m.degree_vals.push_back(k);
      m.degree_cum.push_back(acc);
    }
    if (m.degree_vals.empty())
      throw std::invalid_argument("GwTreeModel: empty offspring law");
    m.degree_cum.back() = 1.0;
    return m;
  }

  int sample_nonroot_degree(Rng& rng) const {
    double u = rng.uniform01();
    for (std::size_t i = 0; i < degree_cum.size(); ++i)
      if (u < degree_cum[i]) return degree_vals[i];
    return degree_vals.back();
  }
};

// Infinite tree grown on first visit. Vertex 0 is the root; children ids are
// allocated lazily, and each new vertex draws its degree from the model when
// created. Vertices never move or disappear, so root paths are stable.
class LazyTree {
 public:
  LazyTree(const GwTreeModel& model, Rng& rng) : model_(model), rng_(rng) {
    parent_.push_back(-1);
    child_count_.push_back(model.root_degree);
    children_.emplace_back();
  }

  int degree(int v) const { return child_count_[v] + (v == 0 ? 0 : 1); }
  int parent(int v) const { return parent_[v]; }
  std::size_t vertex_count() const { return parent_.size(); }

  // Neighbor by index in [0, degree(v)); index 0 is the parent for non-root.
  int neighbor(int v, int i) {
    if (v != 0) {
      if (i == 0) return parent_[v];
      --i;
    }
    while (static_cast<int>(children_[v].size()) <= i) {
      int u = static_cast<int>(parent_.size());
      parent_.push_back(v);
      child_count_.push_back(model_.sample_nonroot_degree(rng_) - 1);
      children_.emplace_back();  // may reallocate children_
      children_[v].push_back(u);
    }
    return children_[v][i];
  }

 private:
  const GwTreeModel& model_;
  Rng& rng_;
  std::vector<int> parent_;
  std::vector<int> child_count_;  // children, excluding the parent link
  std::vector<std::vector<int>> children_;
};

// Walker on a lazy tree keeping its full root path, so pairwise distances
// reduce to longest-common-prefix bookkeeping with O(1) updates per move.
class TreeWalker {
 public:
  explicit TreeWalker(int start_path_root = 0) { path_.push_back(start_path_root); }

  static TreeWalker at_descendant(LazyTree& tree, int depth, int first_child_index) {
    TreeWalker w;
    int v = 0;
    for (int d = 0; d < depth; ++d) {
      int idx = (d == 0) ? first_child_index : (v == 0 ? 0 : 1);
      v = tree.neighbor(v, idx);
      w.path_.push_back(v);
    }
    return w;
  }

  int position() const { return path_.back(); }
  int depth() const { return static_cast<int>(path_.size()) - 1; }
  const std::vector<int>& path() const { return path_; }

  void move_to(LazyTree& tree, int neighbor_index) {
    int v = position();
    int u = tree.neighbor(v, neighbor_index);
    if (u == (path_.size() >= 2 ? path_[path_.size() - 2] : -1))
      path_.pop_back();
    else
      path_.push_back(u);
  }

 private:
  std::vector<int> path_;
};

// Longest common prefix length of two root paths, maintained incrementally.
class PairDistance {
 public:
  PairDistance(const TreeWalker& a, const TreeWalker& b) { recompute(a, b); }

  void recompute(const TreeWalker& a, const TreeWalker& b) {
    const auto& pa = a.path();
    const auto& pb = b.path();
    std::size_t l = 0;
    while (l < pa.size() && l < pb.size() && pa[l] == pb[l]) ++l;
    lcp_ = l;
  }

  // call after walker a moved (push or pop of one vertex)
  void after_move(const TreeWalker& a, const TreeWalker& b) {
    const auto& pa = a.path();
    const auto& pb = b.path();
    if (lcp_ > pa.size()) lcp_ = pa.size();
    if (lcp_ == pa.size() - 1 && lcp_ < pb.size() && pa[lcp_] == pb[lcp_]) ++lcp_;
  }

  int distance(const TreeWalker& a, const TreeWalker& b) const {
    return static_cast<int>(a.path().size() - lcp_) +
           static_cast<int>(b.path().size() - lcp_);
  }

 private:
  std::size_t lcp_ = 1;
};

enum class EscapeOutcome { hit, exited, timed_out };

inline const char* to_string(EscapeOutcome o) {
  switch (o) {
    case EscapeOutcome::hit: return "hit";
    case EscapeOutcome::exited: return "exited";
    default: return "timed_out";
  }
}

struct EscapeResult {
  EscapeOutcome outcome = EscapeOutcome::timed_out;
  double elapsed = 0.0;
};

// Two coalescing walks started distance d0 apart (the tree root is the
// midpoint). "exited" means escape without meeting: either walker leaves the
// radius-r ball around the midpoint, or (when r is infinite) the pairwise
// distance reaches never_hit_cut, beyond which a return has probability
// <= 2^-never_hit_cut on these trees.
inline EscapeResult pair_escape_experiment(const GwTreeModel& model, int d0,
                                           double exit_radius, double time_cap,
                                           std::uint64_t seed,
                                           int never_hit_cut = 40) {
  if (d0 < 1) throw std::invalid_argument("pair_escape_experiment: d0 must be >= 1");
  if (model.root_degree < 2)
    throw std::invalid_argument("pair_escape_experiment: root degree too small");
  Rng rng(seed);
  LazyTree tree(model, rng);
  TreeWalker a = TreeWalker::at_descendant(tree, (d0 + 1) / 2, 0);
  TreeWalker b = TreeWalker::at_descendant(tree, d0 / 2, 1);
  PairDistance pd(a, b);

  auto max_depth = [&]() { return std::max(a.depth(), b.depth()); };
  if (max_depth() > exit_radius) return {EscapeOutcome::exited, 0.0};

  const bool edge = model.kind == ModelKind::edge;
  double t = 0.0;
  for (;;) {
    double ra = edge ? tree.degree(a.position()) : 1.0;
    double rb = edge ? tree.degree(b.position()) : 1.0;
    double total = ra + rb;
    t += rng.exponential(total);
    if (t > time_cap) return {EscapeOutcome::timed_out, time_cap};
    bool move_a = rng.uniform01() * total < ra;
    TreeWalker& w = move_a ? a : b;
    w.move_to(tree, static_cast<int>(rng.below(tree.degree(w.position())))
                  );
    if (move_a)
      pd.after_move(a, b);
    else
      pd.after_move(b, a);
    int d = pd.distance(a, b);
    if (d == 0) return {EscapeOutcome::hit, t};
    if (max_depth() > exit_radius) return {EscapeOutcome::exited, t};
    if (d >= never_hit_cut) return {EscapeOutcome::exited, t};
  }
}

// Partition classes of three tagged walks (x at the root, v1 and v2 on two
// distinct root neighbors).
enum class TripleClass { x_y_z, x_yz, xy_z, xz_y, xyz };

inline const char* to_string(TripleClass c) {
  switch (c) {
    case TripleClass::x_y_z: return "x|y|z";
    case TripleClass::x_yz: return "x|yz";
    case TripleClass::xy_z: return "xy|z";
    case TripleClass::xz_y: return "xz|y";
    default: return "xyz";
  }
}

struct TripleRunResult {
  TripleClass cls = TripleClass::x_y_z;
  bool timed_out = false;
  double elapsed = 0.0;
};

// Run the three coalescing walks until every pairwise distance is at least
// separation_cut (the partition is then declared final) or the time cap hits.
inline TripleRunResult run_triple_walk(const GwTreeModel& model, int separation_cut,
                                       double time_cap, Rng& rng) {
  if (model.root_degree < 2)
    throw std::invalid_argument("run_triple_walk: root degree must be >= 2");
  LazyTree tree(model, rng);

  int i = static_cast<int>(rng.below(model.root_degree));
  int j = static_cast<int>(rng.below(model.root_degree - 1));
  if (j >= i) ++j;

  TreeWalker w[3] = {TreeWalker(), TreeWalker::at_descendant(tree, 1, i),
                     TreeWalker::at_descendant(tree, 1, j)};
  PairDistance pd[3] = {PairDistance(w[0], w[1]), PairDistance(w[0], w[2]),
                        PairDistance(w[1], w[2])};
  auto pair_index = [](int a, int b) { return a + b - 1; };  // (0,1)->0 (0,2)->1 (1,2)->2
  auto pair_dist = [&](int a, int b) {
    return pd[pair_index(a, b)].distance(w[a], w[b]);
  };

  std::vector<int> alive = {0, 1, 2};
  const bool edge = model.kind == ModelKind::edge;
  TripleClass pair_class = TripleClass::x_y_z;
  double t = 0.0;
  for (;;) {
    int mind = std::numeric_limits<int>::max();
    for (std::size_t p = 0; p < alive.size(); ++p)
      for (std::size_t q = p + 1; q < alive.size(); ++q)
        mind = std::min(mind, pair_dist(alive[p], alive[q]));
    if (mind >= separation_cut)
      return {alive.size() == 3 ? TripleClass::x_y_z : pair_class, false, t};

    double total = 0.0;
    double rates[3];
    for (std::size_t p = 0; p < alive.size(); ++p) {
      rates[p] = edge ? tree.degree(w[alive[p]].position()) : 1.0;
      total += rates[p];
    }
    t += rng.exponential(total);
    if (t > time_cap) return {pair_class, true, time_cap};

    double pick = rng.uniform01() * total;
    std::size_t mi = 0;
    while (mi + 1 < alive.size() && pick >= rates[mi]) {
      pick -= rates[mi];
      ++mi;
    }
    const int mover = alive[mi];
    w[mover].move_to(tree, static_cast<int>(rng.below(tree.degree(w[mover].position()))));
    for (int other = 0; other < 3; ++other) {
      if (other == mover) continue;
      int lo = std::min(mover, other), hi = std::max(mover, other);
      pd[pair_index(lo, hi)].after_move(w[mover], w[other]);
    }

    for (std::size_t q = 0; q < alive.size(); ++q) {
      int other = alive[q];
      if (other == mover) continue;
      if (w[other].position() == w[mover].position()) {
        if (alive.size() == 3) {
          int lo = std::min(mover, other), hi = std::max(mover, other);
          if (lo == 0)
            pair_class = (hi == 1) ? TripleClass::xy_z : TripleClass::xz_y;
          else
            pair_class = TripleClass::x_yz;
        }
        alive.erase(alive.begin() + mi);  // drop the mover, keep the occupant
        break;
      }
    }
    if (alive.size() == 1) return {TripleClass::xyz, false, t};
  }
}

}  // namespace lvlab
