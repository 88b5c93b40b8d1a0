#pragma once

// Graph filtrations from heat kernel signatures and their 0/1-dimensional
// persistence diagrams (ordinary and extended).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mst/multiset.hpp"

namespace mst {

struct Edge {
  int u = 0;
  int v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Simple undirected graph. Edges are stored with u < v, sorted, unique.
class Graph {
 public:
  Graph() = default;

  /// Normalizes orientation and drops duplicate edges. Self-loops and
  /// out-of-range endpoints are rejected.
  static Graph from_edges(int vertex_count, std::vector<Edge> edges) {
    if (vertex_count < 0) throw Error(ErrorKind::validation, "graph: negative vertex count");
    for (Edge& e : edges) {
      if (e.u < 0 || e.v < 0 || e.u >= vertex_count || e.v >= vertex_count) {
        throw Error(ErrorKind::validation, "graph: edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                                               ") out of range for " + std::to_string(vertex_count) + " vertices");
      }
      if (e.u == e.v) throw Error(ErrorKind::validation, "graph: self-loop at vertex " + std::to_string(e.u));
      if (e.u > e.v) std::swap(e.u, e.v);
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      return a.u != b.u ? a.u < b.u : a.v < b.v;
    });
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    Graph g;
    g.n_ = vertex_count;
    g.edges_ = std::move(edges);
    return g;
  }

  int vertex_count() const { return n_; }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }

  std::vector<int> degrees() const {
    std::vector<int> d(static_cast<std::size_t>(n_), 0);
    for (const Edge& e : edges_) {
      ++d[static_cast<std::size_t>(e.u)];
      ++d[static_cast<std::size_t>(e.v)];
    }
    return d;
  }

  friend bool operator==(const Graph& a, const Graph& b) { return a.n_ == b.n_ && a.edges_ == b.edges_; }

 private:
  int n_ = 0;
  std::vector<Edge> edges_;
};

/// Union-find with path halving; union by explicit choice of the surviving root.
class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void attach(std::size_t child_root, std::size_t parent_root) { parent_[child_root] = parent_root; }

 private:
  std::vector<std::size_t> parent_;
};

inline int component_count(const Graph& g) {
  DisjointSets ds(static_cast<std::size_t>(g.vertex_count()));
  int count = g.vertex_count();
  for (const Edge& e : g.edges()) {
    const std::size_t a = ds.find(static_cast<std::size_t>(e.u));
    const std::size_t b = ds.find(static_cast<std::size_t>(e.v));
    if (a != b) {
      ds.attach(a, b);
      --count;
    }
  }
  return count;
}

/// Independent cycles: |E| - |V| + #components.
inline int cycle_rank(const Graph& g) {
  return static_cast<int>(g.edge_count()) - g.vertex_count() + component_count(g);
}

// ---------------------------------------------------------------------------
// Heat kernel signature

struct LaplacianSpectrum {
  Vector eigenvalues;  // ascending, clamped to [0, 2]
  Matrix eigenvectors; // column k pairs with eigenvalues(k)
};

/// Symmetric normalized Laplacian D^-1/2 (D - A) D^-1/2. An isolated vertex
/// gets D^-1/2 = 0, so its row and column vanish.
inline Matrix normalized_laplacian(const Graph& g) {
  const int n = g.vertex_count();
  const std::vector<int> deg = g.degrees();
  Vector inv_sqrt(n);
  for (int v = 0; v < n; ++v) {
    inv_sqrt(v) = deg[static_cast<std::size_t>(v)] > 0 ? 1.0 / std::sqrt(static_cast<double>(deg[static_cast<std::size_t>(v)])) : 0.0;
  }
  Matrix lap = Matrix::Zero(n, n);
  for (int v = 0; v < n; ++v) {
    if (deg[static_cast<std::size_t>(v)] > 0) lap(v, v) = 1.0;
  }
  for (const Edge& e : g.edges()) {
    const double w = -inv_sqrt(e.u) * inv_sqrt(e.v);
    lap(e.u, e.v) = w;
    lap(e.v, e.u) = w;
  }
  return lap;
}

inline LaplacianSpectrum laplacian_spectrum(const Graph& g) {
  if (g.vertex_count() == 0) throw Error(ErrorKind::validation, "hks: empty graph");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(normalized_laplacian(g));
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::numeric, "hks: eigendecomposition failed");
  LaplacianSpectrum s;
  s.eigenvalues = solver.eigenvalues().cwiseMax(0.0).cwiseMin(2.0);
  s.eigenvectors = solver.eigenvectors();
  return s;
}

/// hks_t(v) = sum_k exp(-t lambda_k) psi_k(v)^2.
inline Vector hks(const LaplacianSpectrum& s, double t) {
  if (!(t >= 0.0)) throw Error(ErrorKind::validation, "hks: time must be nonnegative");
  const Eigen::ArrayXd weights = (-t * s.eigenvalues.array()).exp();
  return (s.eigenvectors.array().square().rowwise() * weights.transpose()).rowwise().sum().matrix();
}

inline Vector hks(const Graph& g, double t) { return hks(laplacian_spectrum(g), t); }

// ---------------------------------------------------------------------------
// Persistence

enum class DiagramKind { ord0, ess0, ext0, ext1, rel1 };

inline const char* to_string(DiagramKind k) {
  switch (k) {
    case DiagramKind::ord0: return "ord0";
    case DiagramKind::ess0: return "ess0";
    case DiagramKind::ext0: return "ext0";
    case DiagramKind::ext1: return "ext1";
    case DiagramKind::rel1: return "rel1";
  }
  return "unknown";
}

enum class PersistenceMode { ordinary, extended };

inline std::vector<DiagramKind> stream_kinds(PersistenceMode mode) {
  if (mode == PersistenceMode::ordinary) return {DiagramKind::ord0, DiagramKind::ess0};
  return {DiagramKind::ord0, DiagramKind::ext0, DiagramKind::ext1, DiagramKind::rel1};
}

struct PersistenceDiagram {
  DiagramKind kind = DiagramKind::ord0;
  Multiset points;  // rows are (birth, death)
};

namespace detail {

inline Multiset to_diagram(const std::vector<std::pair<double, double>>& pts) {
  Matrix m(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = pts[i].first;
    m(static_cast<Eigen::Index>(i), 1) = pts[i].second;
  }
  const std::vector<std::int64_t> ones(pts.size(), 1);
  return canonicalize(m, ones);
}

inline void require_values(const Graph& g, const Vector& f) {
  if (f.size() != g.vertex_count()) {
    throw Error(ErrorKind::dimension, "persistence: " + std::to_string(f.size()) + " values for " +
                                          std::to_string(g.vertex_count()) + " vertices");
  }
  if (!f.allFinite()) throw Error(ErrorKind::validation, "persistence: non-finite filtration value");
}

/// Position of every vertex in the sweep order: ascending f (descending when
/// `descending`), ties by vertex index.
inline std::vector<std::size_t> vertex_rank(const Vector& f, bool descending) {
  const std::size_t n = static_cast<std::size_t>(f.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double fa = f(static_cast<Eigen::Index>(a));
    const double fb = f(static_cast<Eigen::Index>(b));
    return descending ? fa > fb : fa < fb;
  });
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[order[i]] = i;
  return rank;
}

/// Edge order for a sweep: an edge enters with its later endpoint; ties by
/// that endpoint's rank, then by the other endpoint's rank.
inline std::vector<std::size_t> edge_order(const Graph& g, const std::vector<std::size_t>& vrank) {
  const auto& edges = g.edges();
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    const std::size_t a = vrank[static_cast<std::size_t>(edges[i].u)];
    const std::size_t b = vrank[static_cast<std::size_t>(edges[i].v)];
    return std::make_pair(std::max(a, b), std::min(a, b));
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return key(x) < key(y); });
  return order;
}

struct SweepResult {
  std::vector<std::pair<double, double>> pairs;  // (birth, death), zero-length dropped
  std::vector<std::size_t> negative;             // edges that merged two components
  std::vector<std::size_t> positive;             // edges that closed a cycle
};

/// Union-find sweep of the sublevel (or superlevel) filtration with the
/// elder rule. `descending` sweeps from high to low values.
inline SweepResult sweep(const Graph& g, const Vector& f, bool descending) {
  const std::vector<std::size_t> vrank = vertex_rank(f, descending);
  const std::vector<std::size_t> order = edge_order(g, vrank);
  DisjointSets ds(static_cast<std::size_t>(g.vertex_count()));
  SweepResult out;
  for (std::size_t ei : order) {
    const Edge& e = g.edges()[ei];
    const std::size_t a = ds.find(static_cast<std::size_t>(e.u));
    const std::size_t b = ds.find(static_cast<std::size_t>(e.v));
    if (a == b) {
      out.positive.push_back(ei);
      continue;
    }
    out.negative.push_back(ei);
    const std::size_t elder = vrank[a] < vrank[b] ? a : b;
    const std::size_t younger = elder == a ? b : a;
    const double birth = f(static_cast<Eigen::Index>(younger));
    const double death = descending ? std::min(f(e.u), f(e.v)) : std::max(f(e.u), f(e.v));
    if (birth != death) out.pairs.emplace_back(birth, death);
    ds.attach(younger, elder);
  }
  return out;
}

/// (min f, max f) for every connected component, in order of the component's
/// lowest vertex index.
inline std::vector<std::pair<double, double>> component_ranges(const Graph& g, const Vector& f) {
  const std::size_t n = static_cast<std::size_t>(g.vertex_count());
  DisjointSets ds(n);
  for (const Edge& e : g.edges()) {
    const std::size_t a = ds.find(static_cast<std::size_t>(e.u));
    const std::size_t b = ds.find(static_cast<std::size_t>(e.v));
    if (a != b) ds.attach(std::max(a, b), std::min(a, b));
  }
  std::vector<std::pair<double, double>> range(n, {0.0, 0.0});
  std::vector<bool> seen(n, false);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t r = ds.find(v);
    const double fv = f(static_cast<Eigen::Index>(v));
    if (!seen[r]) {
      range[r] = {fv, fv};
      seen[r] = true;
    } else {
      range[r].first = std::min(range[r].first, fv);
      range[r].second = std::max(range[r].second, fv);
    }
  }
  std::vector<std::pair<double, double>> out;
  for (std::size_t v = 0; v < n; ++v) {
    if (ds.find(v) == v) out.push_back(range[v]);
  }
  return out;
}

}  // namespace detail

struct OrdinaryDiagrams {
  PersistenceDiagram finite;     // Ord0
  PersistenceDiagram essential;  // one (min f, max f) point per component
};

inline OrdinaryDiagrams ordinary_persistence_0d(const Graph& g, const Vector& f) {
  detail::require_values(g, f);
  OrdinaryDiagrams out;
  out.finite = {DiagramKind::ord0, detail::to_diagram(detail::sweep(g, f, false).pairs)};
  out.essential = {DiagramKind::ess0, detail::to_diagram(detail::component_ranges(g, f))};
  return out;
}

struct ExtendedDiagrams {
  PersistenceDiagram ord0;
  PersistenceDiagram ext0;  // (min, max) per component
  PersistenceDiagram ext1;  // (sublevel birth, superlevel death), birth >= death
  PersistenceDiagram rel1;  // (superlevel birth, merge value), birth >= death

  const PersistenceDiagram& get(DiagramKind k) const {
    switch (k) {
      case DiagramKind::ord0: return ord0;
      case DiagramKind::ext0: return ext0;
      case DiagramKind::ext1: return ext1;
      case DiagramKind::rel1: return rel1;
      case DiagramKind::ess0: break;
    }
    throw Error(ErrorKind::validation, "extended persistence has no essential diagram");
  }
};

namespace detail {

/// Ext1 pairing. The superlevel sweep's merging edges form a spanning forest;
/// its cycle-closing edges are inserted from high to low. Each insertion
/// closes exactly one loop in the current forest: the loop's latest edge in
/// sublevel order gives the birth, the inserted edge's lower endpoint the
/// death, and that latest edge leaves the forest.
inline std::vector<std::pair<double, double>> ext1_pairs(const Graph& g, const Vector& f, const SweepResult& down) {
  const std::size_t n = static_cast<std::size_t>(g.vertex_count());
  const auto& edges = g.edges();
  const std::vector<std::size_t> up_order = edge_order(g, vertex_rank(f, false));
  std::vector<std::size_t> up_pos(edges.size());
  for (std::size_t i = 0; i < up_order.size(); ++i) up_pos[up_order[i]] = i;

  // Forest as adjacency lists of edge ids.
  std::vector<std::vector<std::size_t>> adj(n);
  auto link = [&](std::size_t ei) {
    adj[static_cast<std::size_t>(edges[ei].u)].push_back(ei);
    adj[static_cast<std::size_t>(edges[ei].v)].push_back(ei);
  };
  auto unlink = [&](std::size_t ei) {
    for (int end : {edges[ei].u, edges[ei].v}) {
      auto& list = adj[static_cast<std::size_t>(end)];
      list.erase(std::find(list.begin(), list.end(), ei));
    }
  };
  for (std::size_t ei : down.negative) link(ei);

  std::vector<std::pair<double, double>> out;
  std::vector<std::size_t> via(n);
  std::vector<bool> seen(n);
  for (std::size_t ei : down.positive) {
    const std::size_t src = static_cast<std::size_t>(edges[ei].u);
    const std::size_t dst = static_cast<std::size_t>(edges[ei].v);
    // Breadth-first path src -> dst in the forest.
    std::fill(seen.begin(), seen.end(), false);
    std::vector<std::size_t> queue{src};
    seen[src] = true;
    for (std::size_t head = 0; head < queue.size() && !seen[dst]; ++head) {
      const std::size_t x = queue[head];
      for (std::size_t te : adj[x]) {
        const std::size_t y = static_cast<std::size_t>(edges[te].u) == x ? static_cast<std::size_t>(edges[te].v)
                                                                         : static_cast<std::size_t>(edges[te].u);
        if (seen[y]) continue;
        seen[y] = true;
        via[y] = te;
        queue.push_back(y);
      }
    }
    if (!seen[dst]) throw Error(ErrorKind::consistency, "extended persistence: cycle edge outside forest");
    std::size_t latest = ei;
    for (std::size_t x = dst; x != src;) {
      const std::size_t te = via[x];
      if (up_pos[te] > up_pos[latest]) latest = te;
      x = static_cast<std::size_t>(edges[te].u) == x ? static_cast<std::size_t>(edges[te].v)
                                                     : static_cast<std::size_t>(edges[te].u);
    }
    const Edge& top = edges[latest];
    const double birth = std::max(f(top.u), f(top.v));
    const double death = std::min(f(edges[ei].u), f(edges[ei].v));
    out.emplace_back(birth, death);
    if (latest != ei) {
      unlink(latest);
      link(ei);
    }
  }
  return out;
}

}  // namespace detail

inline ExtendedDiagrams extended_persistence(const Graph& g, const Vector& f) {
  detail::require_values(g, f);
  ExtendedDiagrams out;
  out.ord0 = {DiagramKind::ord0, detail::to_diagram(detail::sweep(g, f, false).pairs)};
  const detail::SweepResult down = detail::sweep(g, f, true);
  out.rel1 = {DiagramKind::rel1, detail::to_diagram(down.pairs)};
  out.ext0 = {DiagramKind::ext0, detail::to_diagram(detail::component_ranges(g, f))};
  out.ext1 = {DiagramKind::ext1, detail::to_diagram(detail::ext1_pairs(g, f, down))};
  return out;
}

// ---------------------------------------------------------------------------
// Features and streams

inline constexpr int kDefaultEigenvalueCount = 30;

/// Linear-interpolation quantiles at 0.1, 0.2, ..., 1.0.
inline std::vector<double> deciles(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorKind::validation, "deciles: no values");
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  const double last = static_cast<double>(values.size() - 1);
  for (int q = 1; q <= 10; ++q) {
    const double pos = last * q / 10.0;
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    out.push_back(values[lo] + frac * (values[hi] - values[lo]));
  }
  return out;
}

/// The `eigen_count` smallest Laplacian eigenvalues (zero padded), then the
/// ten deciles of hks_t for each t.
inline Vector spectral_features(const Graph& g, const std::vector<double>& times,
                                int eigen_count = kDefaultEigenvalueCount) {
  const LaplacianSpectrum s = laplacian_spectrum(g);
  Vector out = Vector::Zero(eigen_count + 10 * static_cast<Eigen::Index>(times.size()));
  const Eigen::Index k = std::min<Eigen::Index>(eigen_count, s.eigenvalues.size());
  out.head(k) = s.eigenvalues.head(k);
  Eigen::Index at = eigen_count;
  for (double t : times) {
    const Vector h = hks(s, t);
    for (double d : deciles(std::vector<double>(h.data(), h.data() + h.size()))) out(at++) = d;
  }
  return out;
}

struct Stream {
  double time = 0.0;
  PersistenceDiagram diagram;
};

/// Diagrams for every HKS time (ascending as given) and every kind of the
/// mode, in stream_kinds order.
inline std::vector<Stream> build_streams(const Graph& g, const std::vector<double>& times, PersistenceMode mode) {
  const LaplacianSpectrum s = laplacian_spectrum(g);
  std::vector<Stream> out;
  for (double t : times) {
    const Vector f = hks(s, t);
    if (mode == PersistenceMode::ordinary) {
      OrdinaryDiagrams d = ordinary_persistence_0d(g, f);
      out.push_back({t, std::move(d.finite)});
      out.push_back({t, std::move(d.essential)});
    } else {
      const ExtendedDiagrams d = extended_persistence(g, f);
      for (DiagramKind k : stream_kinds(mode)) out.push_back({t, d.get(k)});
    }
  }
  return out;
}

}  // namespace mst
