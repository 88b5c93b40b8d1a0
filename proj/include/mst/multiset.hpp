#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mst/numerics.hpp"

namespace mst {

/// A base set of distinct points (one per row) with positive integer
/// multiplicities.
struct Multiset {
  Matrix base;
  std::vector<std::int64_t> mult;

  Eigen::Index size() const { return base.rows(); }
  Eigen::Index dim() const { return base.cols(); }
  bool empty() const { return base.rows() == 0; }

  std::int64_t total_mass() const { return std::accumulate(mult.begin(), mult.end(), std::int64_t{0}); }

  /// Multiplicities as the real column vector seen by the attention layers.
  Vector mult_vector() const {
    Vector v(static_cast<Eigen::Index>(mult.size()));
    for (std::size_t i = 0; i < mult.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(mult[i]);
    return v;
  }

  friend bool operator==(const Multiset& a, const Multiset& b) {
    return a.base.rows() == b.base.rows() && a.base.cols() == b.base.cols() && a.base == b.base &&
           a.mult == b.mult;
  }
};

namespace detail {

struct RowKey {
  const double* data;
  Eigen::Index cols;
};

struct RowHash {
  std::size_t operator()(const RowKey& k) const {
    std::uint64_t h = 1469598103934665603ull;
    for (Eigen::Index j = 0; j < k.cols; ++j) {
      std::uint64_t bits;
      std::memcpy(&bits, k.data + j, sizeof bits);
      h ^= bits;
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

struct RowEq {
  bool operator()(const RowKey& a, const RowKey& b) const {
    return std::memcmp(a.data, b.data, sizeof(double) * static_cast<std::size_t>(a.cols)) == 0;
  }
};

}  // namespace detail

/// Merges bit-identical rows, summing their counts. Output rows keep the
/// first-occurrence order of the input.
inline Multiset canonicalize(const Matrix& points, std::span<const std::int64_t> counts) {
  if (static_cast<std::size_t>(points.rows()) != counts.size()) {
    throw Error(ErrorKind::validation, "canonicalize: " + std::to_string(points.rows()) +
                                           " rows but " + std::to_string(counts.size()) + " counts");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 1) {
      throw Error(ErrorKind::validation, "canonicalize: count " + std::to_string(counts[i]) +
                                             " at row " + std::to_string(i) + " is not positive");
    }
  }
  std::unordered_map<detail::RowKey, std::size_t, detail::RowHash, detail::RowEq> seen;
  seen.reserve(counts.size());
  std::vector<Eigen::Index> keep;
  std::vector<std::int64_t> mult;
  // Signed zeros compare equal as values but differ in bits; normalize first.
  Matrix pts = points;
  for (Eigen::Index i = 0; i < pts.size(); ++i) {
    if (pts.data()[i] == 0.0) pts.data()[i] = 0.0;
  }
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    detail::RowKey key{pts.data() + i * pts.cols(), pts.cols()};
    auto [it, inserted] = seen.try_emplace(key, keep.size());
    if (inserted) {
      keep.push_back(i);
      mult.push_back(counts[static_cast<std::size_t>(i)]);
    } else {
      mult[it->second] += counts[static_cast<std::size_t>(i)];
    }
  }
  Multiset out;
  out.base.resize(static_cast<Eigen::Index>(keep.size()), pts.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) out.base.row(static_cast<Eigen::Index>(r)) = pts.row(keep[r]);
  out.mult = std::move(mult);
  return out;
}

inline Multiset canonicalize(const Multiset& m) { return canonicalize(m.base, m.mult); }

/// A multiset whose every multiplicity is one.
inline Multiset as_set(const Matrix& points) {
  return Multiset{points, std::vector<std::int64_t>(static_cast<std::size_t>(points.rows()), 1)};
}

inline constexpr std::int64_t kDefaultExpansionCap = 10'000'000;

/// Repeats each base row mult[i] times, in base order.
inline Matrix expand_to_list(const Multiset& m, std::int64_t row_cap = kDefaultExpansionCap) {
  const std::int64_t total = m.total_mass();
  if (total > row_cap) {
    throw Error(ErrorKind::capacity, "expand_to_list: " + std::to_string(total) +
                                         " rows exceeds cap " + std::to_string(row_cap));
  }
  Matrix out(static_cast<Eigen::Index>(total), m.base.cols());
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < m.base.rows(); ++i) {
    for (std::int64_t k = 0; k < m.mult[static_cast<std::size_t>(i)]; ++k) out.row(at++) = m.base.row(i);
  }
  return out;
}

/// |X| / ||M_X||_1.
inline double data_ratio(const Multiset& m) {
  const std::int64_t total = m.total_mass();
  if (total == 0) return 1.0;
  return static_cast<double>(m.size()) / static_cast<double>(total);
}

inline bool is_permutation(std::span<const std::size_t> sigma) {
  std::vector<bool> hit(sigma.size(), false);
  for (std::size_t s : sigma) {
    if (s >= sigma.size() || hit[s]) return false;
    hit[s] = true;
  }
  return true;
}

/// Row i of the result is row sigma[i] of m (rows and multiplicities move
/// together).
inline Multiset permute(const Multiset& m, std::span<const std::size_t> sigma) {
  if (sigma.size() != static_cast<std::size_t>(m.size()) || !is_permutation(sigma)) {
    throw Error(ErrorKind::validation, "permute: not a permutation of " + std::to_string(m.size()) + " rows");
  }
  Multiset out;
  out.base.resize(m.base.rows(), m.base.cols());
  out.mult.resize(m.mult.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    out.base.row(static_cast<Eigen::Index>(i)) = m.base.row(static_cast<Eigen::Index>(sigma[i]));
    out.mult[i] = m.mult[sigma[i]];
  }
  return out;
}

inline Matrix permute_rows(const Matrix& a, std::span<const std::size_t> sigma) {
  if (sigma.size() != static_cast<std::size_t>(a.rows()) || !is_permutation(sigma)) {
    throw Error(ErrorKind::validation, "permute_rows: not a permutation of " + std::to_string(a.rows()) + " rows");
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < sigma.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.row(static_cast<Eigen::Index>(sigma[i]));
  return out;
}

inline std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> sigma) {
  std::vector<std::size_t> inv(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) inv[sigma[i]] = i;
  return inv;
}

/// Row-order-independent equality: both sides sorted lexicographically.
inline bool same_multiset(const Multiset& a, const Multiset& b) {
  if (a.size() != b.size() || a.dim() != b.dim()) return false;
  auto sorted = [](const Multiset& m) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(m.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
      for (Eigen::Index j = 0; j < m.dim(); ++j) {
        const double u = m.base(static_cast<Eigen::Index>(x), j);
        const double v = m.base(static_cast<Eigen::Index>(y), j);
        if (u != v) return u < v;
      }
      return m.mult[x] < m.mult[y];
    });
    return permute(m, idx);
  };
  return sorted(a) == sorted(b);
}

}  // namespace mst
