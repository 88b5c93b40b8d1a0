#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mst/topology.hpp"
#include "oracles.hpp"

using namespace mst;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Multiset pts(std::initializer_list<std::pair<double, double>> p) { return oracle::as_diagram(oracle::Pairs(p)); }

Graph triangle() { return Graph::from_edges(3, {{0, 1}, {1, 2}, {0, 2}}); }

}  // namespace

TEST(Graph, NormalizesAndValidates) {
  const Graph g = Graph::from_edges(3, {{1, 0}, {0, 1}, {2, 1}});
  EXPECT_EQ(g.edge_count(), 2);
  EXPECT_EQ(g.edges()[0].u, 0);
  EXPECT_EQ(g.edges()[0].v, 1);
  EXPECT_THROW(Graph::from_edges(3, {{1, 1}}), Error);
  EXPECT_THROW(Graph::from_edges(3, {{0, 3}}), Error);
}

TEST(Hks, SingleEdgeClosedForm) {
  const Graph k2 = Graph::from_edges(2, {{0, 1}});
  const LaplacianSpectrum s = laplacian_spectrum(k2);
  EXPECT_NEAR(s.eigenvalues(0), 0.0, 1e-15);
  EXPECT_NEAR(s.eigenvalues(1), 2.0, 1e-15);
  for (double t : {0.0, 0.1, 1.0, 10.0}) {
    const Vector h = hks(k2, t);
    const double want = (1.0 + std::exp(-2.0 * t)) / 2.0;
    EXPECT_NEAR(h(0), want, 1e-12);
    EXPECT_NEAR(h(1), want, 1e-12);
  }
}

TEST(Hks, TimeZeroIsOneAndTraceIdentity) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const oracle::RandomGraph rg = oracle::random_graph(rng, 10);
    const LaplacianSpectrum s = laplacian_spectrum(rg.graph);
    const Vector h0 = hks(s, 0.0);
    for (Eigen::Index v = 0; v < h0.size(); ++v) EXPECT_NEAR(h0(v), 1.0, 1e-12);
    for (double t : {0.1, 1.0, 10.0}) {
      const double trace = (-t * s.eigenvalues.array()).exp().sum();
      EXPECT_NEAR(hks(s, t).sum(), trace, 1e-9);
    }
    EXPECT_GE(s.eigenvalues.minCoeff(), 0.0);
    EXPECT_LE(s.eigenvalues.maxCoeff(), 2.0);
  }
}

TEST(Hks, IsolatedVertexHasZeroLaplacianRow) {
  const Graph g = Graph::from_edges(3, {{0, 1}});
  const Matrix l = normalized_laplacian(g);
  EXPECT_EQ(l.row(2).cwiseAbs().sum(), 0.0);
  EXPECT_NEAR(hks(g, 5.0)(2), 1.0, 1e-12);
  EXPECT_THROW(laplacian_spectrum(Graph::from_edges(0, {})), Error);
}

TEST(Ordinary, PathHandCase) {
  const Graph path = Graph::from_edges(3, {{0, 1}, {1, 2}});
  const OrdinaryDiagrams d = ordinary_persistence_0d(path, vec({1, 3, 2}));
  EXPECT_EQ(d.finite.points, pts({{2, 3}}));
  EXPECT_EQ(d.essential.points.size(), 1);
  EXPECT_EQ(d.essential.points.base(0, 0), 1.0);
}

TEST(Ordinary, ConstantFunction) {
  const OrdinaryDiagrams d = ordinary_persistence_0d(triangle(), vec({2, 2, 2}));
  EXPECT_TRUE(d.finite.points.empty());
  EXPECT_EQ(d.essential.points, pts({{2, 2}}));
}

TEST(Ordinary, DisjointUnionIsAdditive) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const oracle::RandomGraph a = oracle::random_graph(rng, 6);
    const oracle::RandomGraph b = oracle::random_graph(rng, 6);
    const int na = a.graph.vertex_count();
    std::vector<Edge> edges = a.graph.edges();
    for (const Edge& e : b.graph.edges()) edges.push_back({e.u + na, e.v + na});
    const Graph u = Graph::from_edges(na + b.graph.vertex_count(), edges);
    Vector f(u.vertex_count());
    f << a.f, b.f;
    const OrdinaryDiagrams du = ordinary_persistence_0d(u, f);
    const OrdinaryDiagrams da = ordinary_persistence_0d(a.graph, a.f);
    const OrdinaryDiagrams db = ordinary_persistence_0d(b.graph, b.f);
    EXPECT_EQ(du.essential.points.total_mass(), da.essential.points.total_mass() + db.essential.points.total_mass());
    oracle::Pairs joined;
    for (const auto* d : {&da.finite.points, &db.finite.points}) {
      for (Eigen::Index i = 0; i < d->size(); ++i) {
        for (std::int64_t k = 0; k < d->mult[static_cast<std::size_t>(i)]; ++k) joined.emplace_back(d->base(i, 0), d->base(i, 1));
      }
    }
    EXPECT_TRUE(same_multiset(du.finite.points, oracle::as_diagram(joined)));
  }
}

TEST(Ordinary, MatchesRankFunctionOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const oracle::RandomGraph rg = oracle::random_graph(rng);
    const OrdinaryDiagrams d = ordinary_persistence_0d(rg.graph, rg.f);
    EXPECT_TRUE(same_multiset(d.finite.points, oracle::as_diagram(oracle::ord0_by_rank(rg.graph, rg.f)))) << trial;
    EXPECT_TRUE(same_multiset(d.essential.points, oracle::as_diagram(oracle::component_ranges(rg.graph, rg.f)))) << trial;
  }
}

TEST(Ordinary, PointCountMatchesSurvivingBirths) {
  // Components born at level c that survive past c, summed over levels.
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const oracle::RandomGraph rg = oracle::random_graph(rng);
    std::vector<double> levels(rg.f.data(), rg.f.data() + rg.f.size());
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    long expected = 0;
    for (double c : levels) {
      const std::vector<int> comp = oracle::sublevel_components(rg.graph, rg.f, c);
      std::vector<bool> old(static_cast<std::size_t>(rg.graph.vertex_count()), false);
      int count = 0;
      for (int v = 0; v < rg.graph.vertex_count(); ++v) {
        if (comp[static_cast<std::size_t>(v)] >= 0) count = std::max(count, comp[static_cast<std::size_t>(v)] + 1);
        if (rg.f(v) < c) old[static_cast<std::size_t>(comp[static_cast<std::size_t>(v)])] = true;
      }
      for (int k = 0; k < count; ++k) expected += old[static_cast<std::size_t>(k)] ? 0 : 1;
    }
    const OrdinaryDiagrams d = ordinary_persistence_0d(rg.graph, rg.f);
    EXPECT_EQ(d.finite.points.total_mass() + d.essential.points.total_mass(), expected);
  }
}

TEST(Extended, TriangleHandCase) {
  const ExtendedDiagrams d = extended_persistence(triangle(), vec({1, 2, 3}));
  EXPECT_EQ(d.ext0.points, pts({{1, 3}}));
  ASSERT_EQ(d.ext1.points.total_mass(), 1);
  EXPECT_EQ(d.ext1.points.base(0, 0), 3.0);
  EXPECT_TRUE(d.ord0.points.empty());
}

TEST(Extended, TreeHasNoExt1) {
  const Graph tree = Graph::from_edges(5, {{0, 1}, {1, 2}, {1, 3}, {3, 4}});
  const ExtendedDiagrams d = extended_persistence(tree, vec({0.3, 1, 0.2, 0.7, 0.1}));
  EXPECT_TRUE(d.ext1.points.empty());
  EXPECT_EQ(d.ext0.points.total_mass(), 1);
}

TEST(Extended, CountsMatchComponentsAndCycleRank) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const oracle::RandomGraph rg = oracle::random_graph(rng);
    const ExtendedDiagrams d = extended_persistence(rg.graph, rg.f);
    EXPECT_EQ(d.ext0.points.total_mass(), component_count(rg.graph));
    EXPECT_EQ(d.ext1.points.total_mass(), cycle_rank(rg.graph));
    for (Eigen::Index i = 0; i < d.ext1.points.size(); ++i) EXPECT_GE(d.ext1.points.base(i, 0), d.ext1.points.base(i, 1));
  }
}

TEST(Extended, MatchesConedReductionOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const oracle::RandomGraph rg = oracle::random_graph(rng);
    const ExtendedDiagrams d = extended_persistence(rg.graph, rg.f);
    const oracle::Extended o = oracle::extended_by_reduction(rg.graph, rg.f);
    EXPECT_TRUE(same_multiset(d.ord0.points, oracle::as_diagram(o.ord0))) << trial;
    EXPECT_TRUE(same_multiset(d.ext0.points, oracle::as_diagram(o.ext0))) << trial;
    EXPECT_TRUE(same_multiset(d.ext1.points, oracle::as_diagram(o.ext1))) << trial;
    EXPECT_TRUE(same_multiset(d.rel1.points, oracle::as_diagram(o.rel1))) << trial;
  }
}

TEST(Persistence, ValueCountChecked) {
  EXPECT_THROW(ordinary_persistence_0d(triangle(), vec({1, 2})), Error);
  EXPECT_THROW(extended_persistence(triangle(), vec({1, 2, NAN})), Error);
}

TEST(Spectral, SingleEdgeAndShape) {
  const Graph k2 = Graph::from_edges(2, {{0, 1}});
  const Vector f = spectral_features(k2, {0.1, 10.0}, 30);
  ASSERT_EQ(f.size(), 50);
  EXPECT_NEAR(f(0), 0.0, 1e-15);
  EXPECT_NEAR(f(1), 2.0, 1e-15);
  for (int i = 2; i < 30; ++i) EXPECT_EQ(f(i), 0.0);
  // Both vertices share one hks value, so every decile equals it.
  const double h = (1.0 + std::exp(-0.2)) / 2.0;
  for (int i = 30; i < 40; ++i) EXPECT_NEAR(f(i), h, 1e-12);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    EXPECT_EQ(spectral_features(oracle::random_graph(rng, 12).graph, {1.0}, 30).size(), 40);
  }
}

TEST(Spectral, DecilesLinearInterpolation) {
  const std::vector<double> d = deciles({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  for (int q = 0; q < 10; ++q) EXPECT_NEAR(d[static_cast<std::size_t>(q)], q + 1.0, 1e-12);
  const std::vector<double> c = deciles({4, 4, 4});
  for (double x : c) EXPECT_EQ(x, 4.0);
}

TEST(Streams, CountAndKinds) {
  std::mt19937_64 rng(8);
  const oracle::RandomGraph rg = oracle::random_graph(rng);
  EXPECT_EQ(build_streams(rg.graph, {0.1, 10.0}, PersistenceMode::ordinary).size(), 4u);
  const std::vector<Stream> ext = build_streams(rg.graph, {0.1, 10.0}, PersistenceMode::extended);
  ASSERT_EQ(ext.size(), 8u);
  EXPECT_EQ(ext[0].diagram.kind, DiagramKind::ord0);
  EXPECT_EQ(ext[3].diagram.kind, DiagramKind::rel1);
  EXPECT_EQ(ext[4].time, 10.0);
}
