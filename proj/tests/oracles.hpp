#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance runner. None of them reuse the library's sweep code.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "mst/mst.hpp"

namespace oracle {

using Pairs = std::vector<std::pair<double, double>>;

/// Random simple graph on 1..max_n vertices with integer-valued filtration
/// values drawn from a small range, so ties are common.
struct RandomGraph {
  mst::Graph graph;
  mst::Vector f;
};

inline RandomGraph random_graph(std::mt19937_64& rng, int max_n = 8) {
  std::uniform_int_distribution<int> size(1, max_n);
  const int n = size(rng);
  std::bernoulli_distribution keep(std::uniform_real_distribution<double>(0.15, 0.8)(rng));
  std::vector<mst::Edge> edges;
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      if (keep(rng)) edges.push_back({u, v});
    }
  }
  std::uniform_int_distribution<int> value(0, std::max(1, n - 2));
  mst::Vector f(n);
  for (int v = 0; v < n; ++v) f(v) = 0.5 * value(rng);
  return {mst::Graph::from_edges(n, edges), f};
}

/// Components by depth-first search restricted to vertices with f <= level.
/// Returns a component id per vertex (-1 if excluded).
inline std::vector<int> sublevel_components(const mst::Graph& g, const mst::Vector& f, double level) {
  const int n = g.vertex_count();
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const mst::Edge& e : g.edges()) {
    adj[static_cast<std::size_t>(e.u)].push_back(e.v);
    adj[static_cast<std::size_t>(e.v)].push_back(e.u);
  }
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  int next = 0;
  for (int s = 0; s < n; ++s) {
    if (f(s) > level || comp[static_cast<std::size_t>(s)] != -1) continue;
    std::vector<int> stack{s};
    comp[static_cast<std::size_t>(s)] = next;
    while (!stack.empty()) {
      const int x = stack.back();
      stack.pop_back();
      for (int y : adj[static_cast<std::size_t>(x)]) {
        if (f(y) <= level && comp[static_cast<std::size_t>(y)] == -1) {
          comp[static_cast<std::size_t>(y)] = next;
          stack.push_back(y);
        }
      }
    }
    ++next;
  }
  return comp;
}

/// Finite 0-dimensional sublevel pairs from the rank function
/// r(a, b) = #components of G_{<=b} that meet G_{<=a}, by inclusion-exclusion
/// over consecutive critical values.
inline Pairs ord0_by_rank(const mst::Graph& g, const mst::Vector& f) {
  std::vector<double> c(f.data(), f.data() + f.size());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  const int k = static_cast<int>(c.size());
  // r[i][j] for 0 <= i <= j < k, indices shifted by one so index 0 means "nothing".
  std::vector<std::vector<long>> r(static_cast<std::size_t>(k + 1), std::vector<long>(static_cast<std::size_t>(k + 1), 0));
  for (int j = 1; j <= k; ++j) {
    const std::vector<int> comp = sublevel_components(g, f, c[static_cast<std::size_t>(j - 1)]);
    for (int i = 1; i <= j; ++i) {
      std::vector<int> hit;
      for (int v = 0; v < g.vertex_count(); ++v) {
        if (f(v) <= c[static_cast<std::size_t>(i - 1)]) hit.push_back(comp[static_cast<std::size_t>(v)]);
      }
      std::sort(hit.begin(), hit.end());
      r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          static_cast<long>(std::unique(hit.begin(), hit.end()) - hit.begin());
    }
  }
  auto R = [&](int i, int j) { return (i <= 0 || j <= 0) ? 0L : r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]; };
  Pairs out;
  for (int i = 1; i <= k; ++i) {
    for (int j = i + 1; j <= k; ++j) {
      const long mu = R(i, j - 1) - R(i - 1, j - 1) - R(i, j) + R(i - 1, j);
      for (long m = 0; m < mu; ++m) out.emplace_back(c[static_cast<std::size_t>(i - 1)], c[static_cast<std::size_t>(j - 1)]);
    }
  }
  return out;
}

/// (min f, max f) per connected component, from depth-first search.
inline Pairs component_ranges(const mst::Graph& g, const mst::Vector& f) {
  const std::vector<int> comp = sublevel_components(g, f, f.maxCoeff());
  const int count = comp.empty() ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
  Pairs out(static_cast<std::size_t>(count), {f.maxCoeff() + 1.0, f.minCoeff() - 1.0});
  for (int v = 0; v < g.vertex_count(); ++v) {
    auto& p = out[static_cast<std::size_t>(comp[static_cast<std::size_t>(v)])];
    p.first = std::min(p.first, f(v));
    p.second = std::max(p.second, f(v));
  }
  return out;
}

struct Extended {
  Pairs ord0, ext0, ext1, rel1;
};

/// Extended persistence by Z/2 reduction of the boundary matrix of the coned
/// filtration: cone vertex first, then G ascending, then the cone over G
/// descending. Ord/Rel pairs of zero length and the unpaired cone vertex are
/// dropped.
inline Extended extended_by_reduction(const mst::Graph& g, const mst::Vector& f) {
  struct Cell {
    int dim;
    bool cone;   // lies in the descending (coned) half
    int id;      // vertex or edge index in g
    double value;
    std::vector<int> boundary;  // filled after ordering
  };
  const int n = g.vertex_count();
  const auto& edges = g.edges();
  std::vector<Cell> up, down;
  for (int v = 0; v < n; ++v) up.push_back({0, false, v, f(v), {}});
  for (std::size_t e = 0; e < edges.size(); ++e) {
    up.push_back({1, false, static_cast<int>(e), std::max(f(edges[e].u), f(edges[e].v)), {}});
  }
  for (int v = 0; v < n; ++v) down.push_back({1, true, v, f(v), {}});
  for (std::size_t e = 0; e < edges.size(); ++e) {
    down.push_back({2, true, static_cast<int>(e), std::min(f(edges[e].u), f(edges[e].v)), {}});
  }
  std::stable_sort(up.begin(), up.end(), [](const Cell& a, const Cell& b) {
    return std::tie(a.value, a.dim, a.id) < std::tie(b.value, b.dim, b.id);
  });
  std::stable_sort(down.begin(), down.end(), [](const Cell& a, const Cell& b) {
    const double va = -a.value, vb = -b.value;
    return std::tie(va, a.dim, a.id) < std::tie(vb, b.dim, b.id);
  });
  std::vector<Cell> cells;
  cells.push_back({0, true, -1, 0.0, {}});  // cone vertex
  cells.insert(cells.end(), up.begin(), up.end());
  cells.insert(cells.end(), down.begin(), down.end());

  std::vector<int> vpos(static_cast<std::size_t>(n)), epos(edges.size()), cvpos(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    if (c.id < 0) continue;
    if (!c.cone && c.dim == 0) vpos[static_cast<std::size_t>(c.id)] = static_cast<int>(i);
    if (!c.cone && c.dim == 1) epos[static_cast<std::size_t>(c.id)] = static_cast<int>(i);
    if (c.cone && c.dim == 1) cvpos[static_cast<std::size_t>(c.id)] = static_cast<int>(i);
  }
  for (Cell& c : cells) {
    if (c.id < 0) continue;
    if (!c.cone && c.dim == 1) {
      const mst::Edge& e = edges[static_cast<std::size_t>(c.id)];
      c.boundary = {vpos[static_cast<std::size_t>(e.u)], vpos[static_cast<std::size_t>(e.v)]};
    } else if (c.cone && c.dim == 1) {
      c.boundary = {0, vpos[static_cast<std::size_t>(c.id)]};
    } else if (c.cone && c.dim == 2) {
      const mst::Edge& e = edges[static_cast<std::size_t>(c.id)];
      c.boundary = {epos[static_cast<std::size_t>(c.id)], cvpos[static_cast<std::size_t>(e.u)],
                    cvpos[static_cast<std::size_t>(e.v)]};
    }
    std::sort(c.boundary.begin(), c.boundary.end());
  }

  // Standard column reduction over Z/2 with sorted index sets.
  const std::size_t N = cells.size();
  std::vector<std::vector<int>> col(N);
  for (std::size_t j = 0; j < N; ++j) col[j] = cells[j].boundary;
  std::vector<int> low_owner(N, -1);
  std::vector<int> pair_of(N, -1);
  for (std::size_t j = 0; j < N; ++j) {
    while (!col[j].empty()) {
      const int low = col[j].back();
      const int other = low_owner[static_cast<std::size_t>(low)];
      if (other < 0) break;
      std::vector<int> sum;
      std::set_symmetric_difference(col[j].begin(), col[j].end(), col[static_cast<std::size_t>(other)].begin(),
                                    col[static_cast<std::size_t>(other)].end(), std::back_inserter(sum));
      col[j] = std::move(sum);
    }
    if (!col[j].empty()) {
      const int low = col[j].back();
      low_owner[static_cast<std::size_t>(low)] = static_cast<int>(j);
      pair_of[static_cast<std::size_t>(low)] = static_cast<int>(j);
    }
  }

  Extended out;
  for (std::size_t i = 0; i < N; ++i) {
    if (pair_of[i] < 0) continue;
    const Cell& b = cells[i];
    const Cell& d = cells[static_cast<std::size_t>(pair_of[i])];
    if (b.id < 0) continue;
    if (!b.cone && !d.cone) {
      if (b.value != d.value) out.ord0.emplace_back(b.value, d.value);
    } else if (!b.cone && d.cone) {
      (b.dim == 0 ? out.ext0 : out.ext1).emplace_back(b.value, d.value);
    } else {
      if (b.value != d.value) out.rel1.emplace_back(b.value, d.value);
    }
  }
  return out;
}

inline mst::Multiset as_diagram(const Pairs& p) { return mst::detail::to_diagram(p); }

/// Largest relative error between tape gradients and central differences,
/// over every parameter tensor touched by `loss`.
inline double gradient_error(const std::vector<mst::Parameter*>& params,
                             const std::function<mst::Var(mst::Tape&)>& loss) {
  for (mst::Parameter* p : params) p->zero_grad();
  {
    mst::Tape t;
    t.backward(loss(t));
  }
  double worst = 0.0;
  for (mst::Parameter* p : params) {
    const mst::Matrix analytic = p->grad;
    const mst::Matrix saved = p->value;
    const mst::Matrix numeric = mst::finite_diff_grad(
        [&](const mst::Matrix& v) {
          p->value = v;
          mst::Tape t;
          return loss(t).scalar();
        },
        saved);
    p->value = saved;
    worst = std::max(worst, mst::max_relative_error(analytic, numeric));
  }
  return worst;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> s(n);
  std::iota(s.begin(), s.end(), std::size_t{0});
  std::shuffle(s.begin(), s.end(), rng);
  return s;
}

/// Random canonical multiset with distinct rows.
inline mst::Multiset random_multiset(std::mt19937_64& rng, int max_n, std::int64_t max_mult, int dim = 2) {
  const int n = std::uniform_int_distribution<int>(1, max_n)(rng);
  mst::Matrix base = mst::normal_matrix(n, dim, 1.0, rng);
  std::vector<std::int64_t> mult(static_cast<std::size_t>(n));
  std::uniform_int_distribution<std::int64_t> m(1, max_mult);
  for (auto& x : mult) x = m(rng);
  return mst::Multiset{base, mult};
}

}  // namespace oracle
