#pragma once

// Synthetic multisets, TU graph datasets, persistence diagram CSV files and
// cross-validation fold plans.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mst/topology.hpp"

namespace mst {

// ---------------------------------------------------------------------------
// Synthetic data

/// Each sample holds n distinct uniform points in the unit square. One
/// designated point carries most of the mass; the label is the vertical strip
/// (out of `classes`) containing it.
struct SyntheticSpec {
  int classes = 2;
  int n_min = 5;
  int n_max = 15;
  double ratio = 0.03;      // target |X| / total mass
  int samples = 1000;
  std::uint64_t seed = 42;
  double geometric_p = 0.3; // other multiplicities are 1 + Geometric(p) ...
  int other_cap = 10;       // ... capped here
  double boundary_margin = 0.005;

  /// Total mass for a sample of n distinct points.
  std::int64_t target_mass(int n) const { return std::llround(static_cast<double>(n) / ratio); }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::config, "synthetic: " + what); };
    if (classes < 2) fail("at least two classes required");
    if (n_min < 1 || n_max < n_min) fail("bad point-count range");
    if (!(ratio > 0.0 && ratio <= 1.0)) fail("ratio must lie in (0, 1]");
    if (samples < 1) fail("at least one sample required");
    if (!(geometric_p > 0.0 && geometric_p <= 1.0)) fail("geometric p must lie in (0, 1]");
    if (other_cap < 1) fail("multiplicity cap must be at least 1");
    if (!(boundary_margin >= 0.0 && boundary_margin * 2.0 * classes < 1.0)) fail("boundary margin too wide");
    for (int n = n_min; n <= n_max; ++n) {
      // Cheapest assignment: every other point at multiplicity 1, designated
      // point needs at least 2 to be a strict maximum.
      if (target_mass(n) - (n - 1) < 2) {
        fail("ratio " + std::to_string(ratio) + " leaves no strict maximum for n = " + std::to_string(n));
      }
    }
  }
};

struct LabeledMultiset {
  Multiset x;
  std::size_t label = 0;
};

inline std::size_t strip_of(double coord, int classes) {
  const auto s = static_cast<std::size_t>(std::floor(coord * classes));
  return std::min(s, static_cast<std::size_t>(classes - 1));
}

inline std::vector<LabeledMultiset> gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count(spec.n_min, spec.n_max);
  std::geometric_distribution<int> extra(spec.geometric_p);
  auto near_boundary = [&](double x) {
    for (int c = 1; c < spec.classes; ++c) {
      if (std::abs(x - static_cast<double>(c) / spec.classes) < spec.boundary_margin) return true;
    }
    return false;
  };
  std::vector<LabeledMultiset> out;
  out.reserve(static_cast<std::size_t>(spec.samples));
  constexpr int kMaxAttempts = 1000;
  while (static_cast<int>(out.size()) < spec.samples) {
    const int n = count(rng);
    const std::int64_t total = spec.target_mass(n);
    Matrix pts(n, 2);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = unit(rng);
    const int designated = std::uniform_int_distribution<int>(0, n - 1)(rng);
    if (near_boundary(pts(designated, 0))) continue;
    std::vector<std::int64_t> mult(static_cast<std::size_t>(n), 1);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      std::int64_t others = 0;
      std::int64_t second = 1;
      for (int i = 0; i < n; ++i) {
        if (i == designated) continue;
        const std::int64_t m = std::min<std::int64_t>(1 + extra(rng), spec.other_cap);
        mult[static_cast<std::size_t>(i)] = m;
        others += m;
        second = std::max(second, m);
      }
      const std::int64_t rest = total - others;
      const auto floor_margin = static_cast<std::int64_t>(std::ceil(1.5 * static_cast<double>(second)));
      if (rest > second && rest >= floor_margin) {
        mult[static_cast<std::size_t>(designated)] = rest;
        placed = true;
      }
    }
    if (!placed) throw Error(ErrorKind::config, "synthetic: cannot realize a strict maximum; raise the ratio");
    Multiset x = canonicalize(pts, mult);
    if (x.size() != n) continue;  // coincident uniform draws
    out.push_back({std::move(x), strip_of(pts(designated, 0), spec.classes)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// TU datasets

struct TuDataset {
  std::string name;
  std::vector<Graph> graphs;
  std::vector<std::size_t> labels;        // contiguous from 0
  std::vector<long long> label_values;    // original value for each class index
  std::size_t class_count() const { return label_values.size(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline long long parse_integer(std::string_view s, const std::string& where) {
  const std::string t = trim(s);
  long long v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw Error(ErrorKind::parse, where + ": expected an integer, got '" + t + "'");
  }
  return v;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::io, "cannot open " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace detail

inline TuDataset load_tu(const std::filesystem::path& dir, const std::string& name) {
  const auto file = [&](const char* suffix) { return dir / (name + suffix); };
  const std::vector<std::string> indicator = detail::read_lines(file("_graph_indicator.txt"));
  const std::vector<std::string> label_lines = detail::read_lines(file("_graph_labels.txt"));
  const std::vector<std::string> edge_lines = detail::read_lines(file("_A.txt"));

  const std::size_t graph_count = label_lines.size();
  if (graph_count == 0) throw Error(ErrorKind::parse, name + ": no graph labels");
  std::vector<std::size_t> graph_of(indicator.size());
  std::vector<int> local(indicator.size());
  std::vector<int> sizes(graph_count, 0);
  for (std::size_t i = 0; i < indicator.size(); ++i) {
    const long long g = detail::parse_integer(indicator[i], name + "_graph_indicator.txt line " + std::to_string(i + 1));
    if (g < 1 || static_cast<std::size_t>(g) > graph_count) {
      throw Error(ErrorKind::parse, name + "_graph_indicator.txt line " + std::to_string(i + 1) + ": graph " +
                                        std::to_string(g) + " outside 1.." + std::to_string(graph_count));
    }
    graph_of[i] = static_cast<std::size_t>(g - 1);
    local[i] = sizes[graph_of[i]]++;
  }
  for (std::size_t g = 0; g < graph_count; ++g) {
    if (sizes[g] == 0) throw Error(ErrorKind::validation, name + ": graph " + std::to_string(g + 1) + " has no vertices");
  }

  std::vector<std::vector<Edge>> edges(graph_count);
  for (std::size_t i = 0; i < edge_lines.size(); ++i) {
    const std::string where = name + "_A.txt line " + std::to_string(i + 1);
    const auto comma = edge_lines[i].find(',');
    if (comma == std::string::npos) throw Error(ErrorKind::parse, where + ": expected 'u, v'");
    const long long a = detail::parse_integer(std::string_view(edge_lines[i]).substr(0, comma), where);
    const long long b = detail::parse_integer(std::string_view(edge_lines[i]).substr(comma + 1), where);
    for (long long v : {a, b}) {
      if (v < 1 || static_cast<std::size_t>(v) > indicator.size()) {
        throw Error(ErrorKind::validation, where + ": vertex " + std::to_string(v) + " does not exist");
      }
    }
    const std::size_t ua = static_cast<std::size_t>(a - 1);
    const std::size_t ub = static_cast<std::size_t>(b - 1);
    if (graph_of[ua] != graph_of[ub]) throw Error(ErrorKind::validation, where + ": edge joins two graphs");
    if (ua == ub) continue;  // self-loops carry no structure for these filtrations
    edges[graph_of[ua]].push_back({local[ua], local[ub]});
  }

  TuDataset ds;
  ds.name = name;
  std::vector<long long> raw(graph_count);
  for (std::size_t g = 0; g < graph_count; ++g) {
    raw[g] = detail::parse_integer(label_lines[g], name + "_graph_labels.txt line " + std::to_string(g + 1));
  }
  ds.label_values = raw;
  std::sort(ds.label_values.begin(), ds.label_values.end());
  ds.label_values.erase(std::unique(ds.label_values.begin(), ds.label_values.end()), ds.label_values.end());
  for (std::size_t g = 0; g < graph_count; ++g) {
    ds.graphs.push_back(Graph::from_edges(sizes[g], std::move(edges[g])));
    ds.labels.push_back(static_cast<std::size_t>(
        std::lower_bound(ds.label_values.begin(), ds.label_values.end(), raw[g]) - ds.label_values.begin()));
  }
  return ds;
}

/// Writes the three structural TU files (both edge directions, 1-indexed).
inline void save_tu(const std::filesystem::path& dir, const TuDataset& ds) {
  std::filesystem::create_directories(dir);
  std::ofstream a(dir / (ds.name + "_A.txt"));
  std::ofstream ind(dir / (ds.name + "_graph_indicator.txt"));
  std::ofstream lab(dir / (ds.name + "_graph_labels.txt"));
  if (!a || !ind || !lab) throw Error(ErrorKind::io, "cannot write dataset into " + dir.string());
  long long offset = 0;
  for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
    for (int v = 0; v < ds.graphs[g].vertex_count(); ++v) ind << (g + 1) << "\n";
    for (const Edge& e : ds.graphs[g].edges()) {
      a << offset + e.u + 1 << ", " << offset + e.v + 1 << "\n";
      a << offset + e.v + 1 << ", " << offset + e.u + 1 << "\n";
    }
    lab << ds.label_values[ds.labels[g]] << "\n";
    offset += ds.graphs[g].vertex_count();
  }
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldPlan {
  std::uint64_t seed = 0;
  std::vector<std::size_t> order;  // shuffled indices
  std::vector<std::pair<std::size_t, std::size_t>> folds;  // [begin, end) into order

  std::size_t fold_count() const { return folds.size(); }

  std::vector<std::size_t> test(std::size_t k) const {
    return {order.begin() + static_cast<std::ptrdiff_t>(folds.at(k).first),
            order.begin() + static_cast<std::ptrdiff_t>(folds.at(k).second)};
  }

  std::vector<std::size_t> train(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < folds.size(); ++j) {
      if (j == k) continue;
      out.insert(out.end(), order.begin() + static_cast<std::ptrdiff_t>(folds[j].first),
                 order.begin() + static_cast<std::ptrdiff_t>(folds[j].second));
    }
    return out;
  }
};

/// Seeded shuffle, then k contiguous folds whose sizes differ by at most one
/// (the first n % k folds take the extra element).
inline FoldPlan kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > n) {
    throw Error(ErrorKind::config, "kfold: cannot split " + std::to_string(n) + " items into " + std::to_string(k) + " folds");
  }
  FoldPlan plan;
  plan.seed = seed;
  plan.order.resize(n);
  std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(plan.order[i - 1], plan.order[j]);
  }
  std::size_t at = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    plan.folds.emplace_back(at, at + size);
    at += size;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Persistence diagram CSV: header `birth,death,mult`, one distinct point per row.

struct PdCsv {
  Multiset points;
  std::vector<std::string> warnings;
};

inline void write_pd_csv(std::ostream& os, const Multiset& m) {
  if (m.dim() != 2 && !m.empty()) {
    throw Error(ErrorKind::dimension, "pd csv: diagram has " + std::to_string(m.dim()) + " columns");
  }
  os << "birth,death,mult\n";
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    os << detail::format_double(m.base(i, 0)) << "," << detail::format_double(m.base(i, 1)) << ","
       << m.mult[static_cast<std::size_t>(i)] << "\n";
  }
}

/// Reads a diagram. Without a mult column every row counts once (with a
/// warning); repeated rows are merged.
inline PdCsv read_pd_csv(std::istream& is, const std::string& source = "<stream>") {
  PdCsv out;
  std::string line;
  std::size_t line_no = 0;
  bool with_mult = true;
  bool header = false;
  std::vector<double> coords;
  std::vector<std::int64_t> counts;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string row = detail::trim(line);
    if (row.empty()) continue;
    const std::string where = source + " line " + std::to_string(line_no);
    if (!header) {
      if (row == "birth,death,mult") {
        with_mult = true;
      } else if (row == "birth,death") {
        with_mult = false;
        out.warnings.push_back(source + ": no mult column, every row counts once");
      } else {
        throw Error(ErrorKind::parse, where + ": expected header 'birth,death,mult'");
      }
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(row);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    const std::size_t expected = with_mult ? 3 : 2;
    if (cells.size() != expected) {
      throw Error(ErrorKind::parse, where + ": expected " + std::to_string(expected) + " fields, got " +
                                        std::to_string(cells.size()));
    }
    coords.push_back(detail::parse_double(cells[0], where));
    coords.push_back(detail::parse_double(cells[1], where));
    if (!std::isfinite(coords[coords.size() - 2]) || !std::isfinite(coords.back())) {
      throw Error(ErrorKind::parse, where + ": non-finite coordinate");
    }
    std::int64_t m = 1;
    if (with_mult) {
      m = detail::parse_integer(cells[2], where);
      if (m < 1) throw Error(ErrorKind::parse, where + ": multiplicity must be positive");
    }
    counts.push_back(m);
  }
  if (!header) throw Error(ErrorKind::parse, source + ": empty file");
  Matrix pts = Eigen::Map<Matrix>(coords.data(), static_cast<Eigen::Index>(counts.size()), 2);
  out.points = canonicalize(pts, counts);
  return out;
}

inline void write_pd_csv(const std::filesystem::path& p, const Multiset& m) {
  std::ofstream os(p);
  if (!os) throw Error(ErrorKind::io, "cannot write " + p.string());
  write_pd_csv(os, m);
}

inline PdCsv read_pd_csv(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw Error(ErrorKind::io, "cannot read " + p.string());
  return read_pd_csv(is, p.string());
}

}  // namespace mst
