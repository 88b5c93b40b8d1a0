#pragma once

// DBSCAN over a multiset: neighborhood density counts multiplicities, each
// cluster collapses to its weighted centroid, noise points survive as-is.

#include <cstdint>
#include <string>
#include <vector>

#include "mst/multiset.hpp"

namespace mst {

struct DbscanConfig {
  double eps = 0.5;
  std::int64_t min_mass = 2;

  void validate() const {
    if (!(eps > 0.0)) throw Error(ErrorKind::config, "dbscan: eps must be positive");
    if (min_mass < 1) throw Error(ErrorKind::config, "dbscan: min-mass must be at least 1");
  }
};

/// Cluster id per row (-1 for noise). Clusters are numbered in the stored
/// order of their first core point; a border point keeps the first cluster
/// that reaches it.
inline std::vector<int> dbscan_labels(const Multiset& x, const DbscanConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = x.size();
  const double eps2 = cfg.eps * cfg.eps;
  std::vector<std::vector<Eigen::Index>> nbr(static_cast<std::size_t>(n));
  std::vector<bool> core(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::int64_t mass = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if ((x.base.row(i) - x.base.row(j)).squaredNorm() <= eps2) {
        nbr[static_cast<std::size_t>(i)].push_back(j);
        mass += x.mult[static_cast<std::size_t>(j)];
      }
    }
    core[static_cast<std::size_t>(i)] = mass >= cfg.min_mass;
  }
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  int next = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!core[static_cast<std::size_t>(i)] || label[static_cast<std::size_t>(i)] != -1) continue;
    const int id = next++;
    label[static_cast<std::size_t>(i)] = id;
    std::vector<Eigen::Index> frontier{i};
    for (std::size_t head = 0; head < frontier.size(); ++head) {
      const Eigen::Index p = frontier[head];
      if (!core[static_cast<std::size_t>(p)]) continue;
      for (Eigen::Index q : nbr[static_cast<std::size_t>(p)]) {
        if (label[static_cast<std::size_t>(q)] != -1) continue;
        label[static_cast<std::size_t>(q)] = id;
        frontier.push_back(q);
      }
    }
  }
  return label;
}

/// Clusters become one point each (weighted centroid, summed mass) in cluster
/// order; noise rows follow in stored order. The result is canonicalized.
inline Multiset dbscan_compress(const Multiset& x, const DbscanConfig& cfg) {
  if (x.empty()) return x;
  const std::vector<int> label = dbscan_labels(x, cfg);
  int clusters = 0;
  for (int l : label) clusters = std::max(clusters, l + 1);
  Matrix sums = Matrix::Zero(clusters, x.dim());
  std::vector<std::int64_t> mass(static_cast<std::size_t>(clusters), 0);
  std::vector<Eigen::Index> members(static_cast<std::size_t>(clusters), 0);
  std::vector<Eigen::Index> first(static_cast<std::size_t>(clusters), -1);
  std::vector<Eigen::Index> noise;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const int l = label[static_cast<std::size_t>(i)];
    const std::int64_t m = x.mult[static_cast<std::size_t>(i)];
    if (l < 0) {
      noise.push_back(i);
      continue;
    }
    sums.row(l) += static_cast<double>(m) * x.base.row(i);
    mass[static_cast<std::size_t>(l)] += m;
    if (members[static_cast<std::size_t>(l)]++ == 0) first[static_cast<std::size_t>(l)] = i;
  }
  Matrix pts(clusters + static_cast<Eigen::Index>(noise.size()), x.dim());
  std::vector<std::int64_t> counts;
  for (int c = 0; c < clusters; ++c) {
    // A lone core point keeps its exact coordinates; (m * x) / m can round.
    const auto k = static_cast<std::size_t>(c);
    pts.row(c) = members[k] == 1 ? Matrix(x.base.row(first[k])) : Matrix(sums.row(c) / static_cast<double>(mass[k]));
    counts.push_back(mass[k]);
  }
  for (std::size_t k = 0; k < noise.size(); ++k) {
    pts.row(clusters + static_cast<Eigen::Index>(k)) = x.base.row(noise[k]);
    counts.push_back(x.mult[static_cast<std::size_t>(noise[k])]);
  }
  return canonicalize(pts, counts);
}

/// |after| / total mass of `before`.
inline double ratio_report(const Multiset& before, const Multiset& after) {
  const std::int64_t mb = before.total_mass();
  const std::int64_t ma = after.total_mass();
  if (mb != ma) {
    throw Error(ErrorKind::consistency, "ratio_report: mass changed from " + std::to_string(mb) + " to " +
                                            std::to_string(ma));
  }
  if (mb == 0) return 1.0;
  return static_cast<double>(after.size()) / static_cast<double>(mb);
}

}  // namespace mst
