#pragma once

// Experiment driver behind the `mst` command: configuration files, diagram
// caches, cross-validated training, evaluation with an invariance audit, and
// the complexity benchmark.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mst/clustering.hpp"
#include "mst/data.hpp"
#include "mst/model.hpp"

namespace mst {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

enum class RunMode { synthetic, ordinary, extended };

inline const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::synthetic: return "synthetic";
    case RunMode::ordinary: return "ordinary";
    case RunMode::extended: return "extended";
  }
  return "unknown";
}

struct BenchConfig {
  std::vector<int> sizes{64, 128, 256, 512, 1024};
  int hidden = 8;
  int heads = 1;
  int induced = 2;
  int repeats = 5;
  int compact_points = 256;
  std::vector<int> max_mult{1, 10, 50};
};

struct RunConfig {
  std::string dataset = "SYNTHETIC";
  fs::path data_dir = "data";
  RunMode mode = RunMode::synthetic;
  std::vector<double> hks_times;
  MstConfig mst;
  bool cluster = false;
  DbscanConfig dbscan;
  double lr = 0.01;
  int epochs = 100;
  int batch = 128;
  int runs = 5;
  int folds = 10;
  std::uint64_t seed = 42;
  bool use_mult = true;
  bool standardize = true;  // per-stream input standardization, fitted on each training split
  bool spectral = false;
  int eigen_count = kDefaultEigenvalueCount;
  SyntheticSpec synthetic;
  BenchConfig bench;
  fs::path cache_dir;  // empty: MST_CACHE_DIR or ./cache

  PersistenceMode persistence() const {
    return mode == RunMode::extended ? PersistenceMode::extended : PersistenceMode::ordinary;
  }

  int stream_count() const {
    if (mode == RunMode::synthetic) return 1;
    return static_cast<int>(hks_times.size() * stream_kinds(persistence()).size());
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::config, "config: " + what); };
    mst.validate();
    if (mode != RunMode::synthetic && hks_times.empty()) fail("HKS times required for graph datasets");
    for (double t : hks_times) {
      if (!(t >= 0.0)) fail("HKS times must be nonnegative");
    }
    if (!(lr > 0.0)) fail("LR must be positive");
    if (epochs < 0) fail("Epochs must be nonnegative");
    if (batch < 1) fail("Batch must be at least 1");
    if (runs < 1) fail("runs must be at least 1");
    if (folds < 2) fail("folds must be at least 2");
    if (cluster) dbscan.validate();
    if (mode == RunMode::synthetic) synthetic.validate();
  }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& where) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw Error(ErrorKind::config, where + ": expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline double config_double(const std::string& v, const std::string& where) {
  try {
    return parse_double(trim(v), where);
  } catch (const Error& e) {
    throw Error(ErrorKind::config, e.what());
  }
}

inline int config_int(const std::string& v, const std::string& where) {
  try {
    const long long x = parse_integer(v, where);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw Error(ErrorKind::config, where + ": out of range");
    }
    return static_cast<int>(x);
  } catch (const Error& e) {
    throw Error(ErrorKind::config, e.what());
  }
}

inline std::vector<int> config_ints(const std::string& v, const std::string& where) {
  std::vector<int> out;
  for (const std::string& s : split_list(v)) out.push_back(config_int(s, where));
  if (out.empty()) throw Error(ErrorKind::config, where + ": empty list");
  return out;
}

}  // namespace detail

/// Parses the flat `key = value` format. Keys are the hyperparameter table
/// names (HKS, H, E, E.Q, I.Q, Pre-LN, Eps, Hidden, LR, Epochs, Batch) plus
/// plumbing keys; `#` starts a comment.
inline RunConfig parse_config(std::istream& is, const std::string& source = "<config>") {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string row = detail::trim(line);
    if (row.empty()) continue;
    const std::string where = source + " line " + std::to_string(line_no);
    const auto eq = row.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::config, where + ": expected 'key = value'");
    const std::string key = detail::trim(std::string_view(row).substr(0, eq));
    const std::string value = detail::trim(std::string_view(row).substr(eq + 1));
    if (!seen.insert(key).second) throw Error(ErrorKind::config, where + ": duplicate key " + key);
    const std::string at = where + " (" + key + ")";

    if (key == "HKS") {
      cfg.hks_times.clear();
      for (std::string tok : detail::split_list(value)) {
        if (tok == "-") continue;
        if (tok.rfind("hks_", 0) == 0) tok = tok.substr(4);
        cfg.hks_times.push_back(detail::config_double(tok, at));
      }
      std::sort(cfg.hks_times.begin(), cfg.hks_times.end());
    } else if (key == "H") {
      cfg.mst.heads = detail::config_int(value, at);
    } else if (key == "E") {
      cfg.mst.equivariant_layers = detail::config_int(value, at);
    } else if (key == "E.Q") {
      cfg.mst.equivariant_queries = detail::config_int(value, at);
    } else if (key == "I.Q") {
      cfg.mst.invariant_queries = detail::config_int(value, at);
    } else if (key == "Pre-LN") {
      cfg.mst.ln = detail::parse_bool(value, at) ? LnVariant::pre : LnVariant::post;
    } else if (key == "Eps") {
      if (value != "-") cfg.dbscan.eps = detail::config_double(value, at);
    } else if (key == "Hidden") {
      cfg.mst.hidden = detail::config_int(value, at);
    } else if (key == "LR") {
      cfg.lr = detail::config_double(value, at);
    } else if (key == "Epochs") {
      cfg.epochs = detail::config_int(value, at);
    } else if (key == "Batch") {
      cfg.batch = detail::config_int(value, at);
    } else if (key == "dataset") {
      cfg.dataset = value;
    } else if (key == "data_dir") {
      cfg.data_dir = value;
    } else if (key == "cache_dir") {
      cfg.cache_dir = value;
    } else if (key == "mode") {
      if (value == "synthetic") cfg.mode = RunMode::synthetic;
      else if (value == "ordinary") cfg.mode = RunMode::ordinary;
      else if (value == "extended") cfg.mode = RunMode::extended;
      else throw Error(ErrorKind::config, at + ": unknown mode '" + value + "'");
    } else if (key == "block") {
      if (value == "sab") cfg.mst.block = BlockKind::sab;
      else if (value == "imab") cfg.mst.block = BlockKind::imab;
      else throw Error(ErrorKind::config, at + ": unknown block '" + value + "'");
    } else if (key == "bias") {
      cfg.mst.bias_enabled = detail::parse_bool(value, at);
    } else if (key == "bias_in_equivariant") {
      cfg.mst.bias_in_equivariant = detail::parse_bool(value, at);
    } else if (key == "mult") {
      cfg.use_mult = detail::parse_bool(value, at);
    } else if (key == "standardize") {
      cfg.standardize = detail::parse_bool(value, at);
    } else if (key == "cluster") {
      cfg.cluster = detail::parse_bool(value, at);
    } else if (key == "min_mass") {
      cfg.dbscan.min_mass = detail::config_int(value, at);
    } else if (key == "runs") {
      cfg.runs = detail::config_int(value, at);
    } else if (key == "folds") {
      cfg.folds = detail::config_int(value, at);
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(detail::config_int(value, at));
    } else if (key == "spectral") {
      cfg.spectral = detail::parse_bool(value, at);
    } else if (key == "eigen_count") {
      cfg.eigen_count = detail::config_int(value, at);
    } else if (key == "classes") {
      cfg.synthetic.classes = detail::config_int(value, at);
    } else if (key == "n_min") {
      cfg.synthetic.n_min = detail::config_int(value, at);
    } else if (key == "n_max") {
      cfg.synthetic.n_max = detail::config_int(value, at);
    } else if (key == "ratio") {
      cfg.synthetic.ratio = detail::config_double(value, at);
    } else if (key == "samples") {
      cfg.synthetic.samples = detail::config_int(value, at);
    } else if (key == "bench_sizes") {
      cfg.bench.sizes = detail::config_ints(value, at);
    } else if (key == "bench_hidden") {
      cfg.bench.hidden = detail::config_int(value, at);
    } else if (key == "bench_heads") {
      cfg.bench.heads = detail::config_int(value, at);
    } else if (key == "bench_induced") {
      cfg.bench.induced = detail::config_int(value, at);
    } else if (key == "bench_repeats") {
      cfg.bench.repeats = detail::config_int(value, at);
    } else if (key == "bench_points") {
      cfg.bench.compact_points = detail::config_int(value, at);
    } else if (key == "bench_max_mult") {
      cfg.bench.max_mult = detail::config_ints(value, at);
    } else {
      throw Error(ErrorKind::config, where + ": unknown key '" + key + "'");
    }
  }
  cfg.synthetic.seed = cfg.seed;
  return cfg;
}

inline RunConfig load_config(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw Error(ErrorKind::io, "cannot read config " + p.string());
  RunConfig cfg = parse_config(is, p.string());
  if (cfg.data_dir.is_relative() && !fs::exists(cfg.data_dir)) {
    // Relative data paths resolve against the config file's directory when
    // they do not exist relative to the working directory.
    const fs::path alt = p.parent_path() / cfg.data_dir;
    if (fs::exists(alt)) cfg.data_dir = alt;
  }
  return cfg;
}

inline std::string describe(const RunConfig& c) {
  std::ostringstream os;
  os << "HKS=";
  for (std::size_t i = 0; i < c.hks_times.size(); ++i) os << (i ? "," : "") << detail::format_double(c.hks_times[i]);
  if (c.hks_times.empty()) os << "-";
  os << " H=" << c.mst.heads << " E=" << c.mst.equivariant_layers << " E.Q=" << c.mst.equivariant_queries
     << " I.Q=" << c.mst.invariant_queries << " Pre-LN=" << (c.mst.ln == LnVariant::pre ? "True" : "False")
     << " Eps=" << (c.cluster ? detail::format_double(c.dbscan.eps) : std::string("-")) << " Hidden=" << c.mst.hidden
     << " LR=" << detail::format_double(c.lr) << " Epochs=" << c.epochs << " Batch=" << c.batch
     << " block=" << (c.mst.block == BlockKind::sab ? "sab" : "imab") << " mult=" << (c.use_mult ? "on" : "off")
     << " bias_in_equivariant=" << (c.mst.bias_in_equivariant ? "on" : "off")
     << " standardize=" << (c.standardize ? "on" : "off");
  return os.str();
}

// ---------------------------------------------------------------------------
// Diagram cache

namespace detail {

inline constexpr int kCacheFormat = 1;

class Fnv64 {
 public:
  void add(std::string_view s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 1099511628211ull;
    }
    add_separator();
  }
  void add_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    add(ss.str());
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  void add_separator() {
    h_ ^= 0xff;
    h_ *= 1099511628211ull;
  }
  std::uint64_t h_ = 1469598103934665603ull;
};

inline std::string time_tag(double t) { return format_double(t); }

}  // namespace detail

inline fs::path cache_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("MST_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  if (!cfg.cache_dir.empty()) return cfg.cache_dir;
  return "cache";
}

inline fs::path raw_cache_dir(const RunConfig& cfg) {
  return cache_root(cfg) / (cfg.dataset + "." + to_string(cfg.mode));
}

inline fs::path clustered_cache_dir(const RunConfig& cfg) {
  return cache_root(cfg) / (cfg.dataset + "." + to_string(cfg.mode) + ".dbscan-" +
                            detail::format_double(cfg.dbscan.eps) + "-m" + std::to_string(cfg.dbscan.min_mass));
}

/// Directory holding the TU files: `data_dir` itself, or `data_dir/<dataset>`
/// when the files sit in a per-dataset folder.
inline fs::path dataset_dir(const RunConfig& cfg) {
  const fs::path nested = cfg.data_dir / cfg.dataset;
  if (!fs::exists(cfg.data_dir / (cfg.dataset + "_A.txt")) && fs::exists(nested / (cfg.dataset + "_A.txt"))) return nested;
  return cfg.data_dir;
}

inline std::string raw_cache_key(const RunConfig& cfg) {
  detail::Fnv64 h;
  h.add("mst-cache " + std::to_string(detail::kCacheFormat));
  h.add(cfg.dataset);
  for (const char* suffix : {"_A.txt", "_graph_indicator.txt", "_graph_labels.txt"}) {
    h.add_file(dataset_dir(cfg) / (cfg.dataset + suffix));
  }
  h.add(to_string(cfg.mode));
  for (double t : cfg.hks_times) h.add(detail::time_tag(t));
  return h.hex();
}

inline std::string clustered_cache_key(const RunConfig& cfg) {
  detail::Fnv64 h;
  h.add(raw_cache_key(cfg));
  h.add(detail::format_double(cfg.dbscan.eps));
  h.add(std::to_string(cfg.dbscan.min_mass));
  return h.hex();
}

/// Cached diagrams of one dataset: per graph, one multiset per stream.
struct DiagramCache {
  std::string key;
  std::vector<std::string> stream_names;          // "<t>_<kind>"
  std::vector<std::vector<Multiset>> diagrams;    // [graph][stream]
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
};

namespace detail {

inline std::optional<std::string> manifest_key(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) return std::nullopt;
  std::string tag, key;
  if (!(in >> tag >> key) || tag != "key") return std::nullopt;
  return key;
}

inline void write_cache(const fs::path& dir, const DiagramCache& c) {
  fs::create_directories(dir);
  for (std::size_t g = 0; g < c.diagrams.size(); ++g) {
    for (std::size_t s = 0; s < c.stream_names.size(); ++s) {
      write_pd_csv(dir / (std::to_string(g + 1) + "_" + c.stream_names[s] + ".csv"), c.diagrams[g][s]);
    }
  }
  // The manifest goes last so an interrupted write is never mistaken for fresh.
  std::ofstream m(dir / "manifest.txt");
  if (!m) throw Error(ErrorKind::io, "cannot write " + (dir / "manifest.txt").string());
  m << "key " << c.key << "\n";
  m << "format " << kCacheFormat << "\n";
  m << "graphs " << c.diagrams.size() << "\n";
  m << "classes " << c.classes << "\n";
  m << "streams";
  for (const std::string& s : c.stream_names) m << " " << s;
  m << "\n";
  for (std::size_t g = 0; g < c.diagrams.size(); ++g) {
    m << (g + 1) << " " << c.labels[g];
    for (const std::string& s : c.stream_names) m << " " << (g + 1) << "_" << s << ".csv";
    m << "\n";
  }
}

inline DiagramCache read_cache(const fs::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw Error(ErrorKind::io, "missing manifest in " + dir.string());
  DiagramCache c;
  std::string tag, line;
  std::size_t graphs = 0;
  int format = 0;
  m >> tag >> c.key >> tag >> format >> tag >> graphs >> tag >> c.classes;
  if (!m || format != kCacheFormat) throw Error(ErrorKind::parse, dir.string() + ": unreadable manifest");
  std::getline(m, line);
  std::getline(m, line);
  std::istringstream ss(line);
  ss >> tag;
  for (std::string s; ss >> s;) c.stream_names.push_back(s);
  for (std::size_t g = 0; g < graphs; ++g) {
    std::size_t id = 0, label = 0;
    if (!(m >> id >> label)) throw Error(ErrorKind::parse, dir.string() + ": truncated manifest");
    c.labels.push_back(label);
    std::vector<Multiset> row;
    for (std::size_t s = 0; s < c.stream_names.size(); ++s) {
      std::string file;
      m >> file;
      row.push_back(read_pd_csv(dir / file).points);
    }
    c.diagrams.push_back(std::move(row));
  }
  return c;
}

}  // namespace detail

struct ExtractSummary {
  bool raw_fresh = false;        // cache was already up to date
  bool clustered_fresh = false;
  std::size_t graphs = 0;
  std::size_t streams = 0;
  double raw_ratio = 1.0;        // pooled |X| / mass over every diagram
  double clustered_ratio = 1.0;
};

/// Pooled data ratio: distinct points over total mass across all diagrams.
inline double pooled_ratio(const DiagramCache& c) {
  std::int64_t distinct = 0, mass = 0;
  for (const auto& row : c.diagrams) {
    for (const Multiset& m : row) {
      distinct += m.size();
      mass += m.total_mass();
    }
  }
  return mass == 0 ? 1.0 : static_cast<double>(distinct) / static_cast<double>(mass);
}

/// Builds (or reuses) the raw cache and, when clustering is on, the clustered
/// cache next to it.
inline ExtractSummary extract_diagrams(const RunConfig& cfg) {
  if (cfg.mode == RunMode::synthetic) throw Error(ErrorKind::config, "extract: synthetic data has no diagrams");
  ExtractSummary out;
  const fs::path raw_dir = raw_cache_dir(cfg);
  const std::string key = raw_cache_key(cfg);
  DiagramCache raw;
  if (detail::manifest_key(raw_dir) == key) {
    raw = detail::read_cache(raw_dir);
    out.raw_fresh = true;
  } else {
    const TuDataset ds = load_tu(dataset_dir(cfg), cfg.dataset);
    raw.key = key;
    raw.labels = ds.labels;
    raw.classes = ds.class_count();
    for (double t : cfg.hks_times) {
      for (DiagramKind k : stream_kinds(cfg.persistence())) {
        raw.stream_names.push_back(detail::time_tag(t) + "_" + to_string(k));
      }
    }
    for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
      std::vector<Multiset> row;
      try {
        for (Stream& s : build_streams(ds.graphs[g], cfg.hks_times, cfg.persistence())) {
          row.push_back(std::move(s.diagram.points));
        }
      } catch (const Error& e) {
        throw Error(e.kind(), cfg.dataset + " graph " + std::to_string(g + 1) + ": " + e.what());
      }
      raw.diagrams.push_back(std::move(row));
    }
    detail::write_cache(raw_dir, raw);
  }
  out.graphs = raw.diagrams.size();
  out.streams = raw.stream_names.size();
  out.raw_ratio = pooled_ratio(raw);
  out.clustered_ratio = out.raw_ratio;
  if (cfg.cluster) {
    const fs::path dir = clustered_cache_dir(cfg);
    const std::string ckey = clustered_cache_key(cfg);
    DiagramCache clustered;
    if (detail::manifest_key(dir) == ckey) {
      clustered = detail::read_cache(dir);
      out.clustered_fresh = true;
    } else {
      clustered = raw;
      clustered.key = ckey;
      for (auto& row : clustered.diagrams) {
        for (Multiset& m : row) m = dbscan_compress(m, cfg.dbscan);
      }
      detail::write_cache(dir, clustered);
    }
    std::int64_t after = 0, mass = 0;
    for (std::size_t g = 0; g < raw.diagrams.size(); ++g) {
      for (std::size_t s = 0; s < raw.diagrams[g].size(); ++s) {
        ratio_report(raw.diagrams[g][s], clustered.diagrams[g][s]);  // mass check
        after += clustered.diagrams[g][s].size();
        mass += raw.diagrams[g][s].total_mass();
      }
    }
    out.clustered_ratio = mass == 0 ? 1.0 : static_cast<double>(after) / static_cast<double>(mass);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Samples

struct Sample {
  std::vector<Multiset> streams;
  Vector features;  // empty unless spectral features are on
  std::size_t label = 0;
};

struct SampleSet {
  std::vector<Sample> samples;
  std::size_t classes = 0;
  double ratio = 1.0;  // pooled data ratio of the model inputs
};

/// Model inputs for a configuration: generated for synthetic runs, read from
/// the (raw or clustered) diagram cache otherwise.
inline SampleSet load_samples(const RunConfig& cfg) {
  SampleSet out;
  if (cfg.mode == RunMode::synthetic) {
    std::int64_t distinct = 0, mass = 0;
    for (LabeledMultiset& s : gen_synthetic(cfg.synthetic)) {
      distinct += s.x.size();
      mass += s.x.total_mass();
      out.samples.push_back({{std::move(s.x)}, Vector(), s.label});
    }
    out.classes = static_cast<std::size_t>(cfg.synthetic.classes);
    out.ratio = static_cast<double>(distinct) / static_cast<double>(mass);
    return out;
  }
  const ExtractSummary summary = extract_diagrams(cfg);
  DiagramCache cache = detail::read_cache(cfg.cluster ? clustered_cache_dir(cfg) : raw_cache_dir(cfg));
  out.classes = cache.classes;
  out.ratio = cfg.cluster ? summary.clustered_ratio : summary.raw_ratio;
  std::vector<Vector> features(cache.diagrams.size());
  if (cfg.spectral) {
    const TuDataset ds = load_tu(dataset_dir(cfg), cfg.dataset);
    for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
      features[g] = spectral_features(ds.graphs[g], cfg.hks_times, cfg.eigen_count);
    }
  }
  for (std::size_t g = 0; g < cache.diagrams.size(); ++g) {
    out.samples.push_back({std::move(cache.diagrams[g]), std::move(features[g]), cache.labels[g]});
  }
  return out;
}

inline ClassifierConfig classifier_config(const RunConfig& cfg, const SampleSet& data) {
  ClassifierConfig cc;
  cc.mst = cfg.mst;
  cc.streams = cfg.stream_count();
  cc.classes = static_cast<int>(data.classes);
  cc.extra_features = cfg.spectral ? cfg.eigen_count + 10 * static_cast<int>(cfg.hks_times.size()) : 0;
  return cc;
}

// ---------------------------------------------------------------------------
// Training

/// SplitMix64 step, used to derive independent seeds per run and fold.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t run_seed(std::uint64_t base, int run) { return mix_seed(base + static_cast<std::uint64_t>(run)); }

inline std::uint64_t fold_seed(std::uint64_t base, int run, int fold) {
  return mix_seed(run_seed(base, run) ^ mix_seed(static_cast<std::uint64_t>(fold) + 1000));
}

/// Per-stream, per-coordinate mean and standard deviation over the points of
/// the `train` samples, weighted by multiplicity when the model sees it. A
/// stream with no points or no spread keeps scale 1.
inline std::pair<Matrix, Matrix> fit_input_transform(const SampleSet& data, const std::vector<std::size_t>& train,
                                                     int streams, Eigen::Index dim, bool use_mult) {
  Matrix shift = Matrix::Zero(streams, dim);
  Matrix scale = Matrix::Ones(streams, dim);
  for (int k = 0; k < streams; ++k) {
    const auto s = static_cast<std::size_t>(k);
    double mass = 0.0;
    Matrix sum = Matrix::Zero(1, dim);
    for (std::size_t i : train) {
      const Multiset& m = data.samples[i].streams[s];
      for (Eigen::Index r = 0; r < m.size(); ++r) {
        const double w = use_mult ? static_cast<double>(m.mult[static_cast<std::size_t>(r)]) : 1.0;
        sum += w * m.base.row(r);
        mass += w;
      }
    }
    if (mass == 0.0) continue;
    const Matrix mean = sum / mass;
    Matrix sq = Matrix::Zero(1, dim);
    for (std::size_t i : train) {
      const Multiset& m = data.samples[i].streams[s];
      for (Eigen::Index r = 0; r < m.size(); ++r) {
        const double w = use_mult ? static_cast<double>(m.mult[static_cast<std::size_t>(r)]) : 1.0;
        sq += w * (m.base.row(r) - mean).cwiseAbs2();
      }
    }
    shift.row(k) = mean;
    for (Eigen::Index c = 0; c < dim; ++c) {
      const double sd = std::sqrt(sq(0, c) / mass);
      if (sd > 0.0 && std::isfinite(sd)) scale(k, c) = sd;
    }
  }
  return {shift, scale};
}

inline Var sample_logits(Tape& t, GraphClassifier& model, const Sample& s, bool use_mult) {
  return model.forward(t, s.streams, s.features.size() > 0 ? &s.features : nullptr, use_mult);
}

inline std::size_t argmax_row(const Matrix& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < logits.cols(); ++j) {
    if (logits(0, j) > logits(0, best)) best = j;
  }
  return static_cast<std::size_t>(best);
}

inline std::size_t count_correct(GraphClassifier& model, const SampleSet& data, const std::vector<std::size_t>& idx,
                                 bool use_mult) {
  std::size_t correct = 0;
  Tape t;
  for (std::size_t i : idx) {
    t.clear();
    const Var logits = sample_logits(t, model, data.samples[i], use_mult);
    if (argmax_row(logits.value()) == data.samples[i].label) ++correct;
  }
  return correct;
}

/// Mini-batch Adam on `train`. Each batch averages per-sample cross-entropy
/// gradients; the epoch order is reshuffled from `seed`.
inline double train_model(GraphClassifier& model, const SampleSet& data, std::vector<std::size_t> train,
                          const RunConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<Parameter*> params = model.parameters();
  double last_loss = 0.0;
  Tape t;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[static_cast<std::size_t>(rng() % i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(train.size(), start + static_cast<std::size_t>(cfg.batch));
      const double weight = 1.0 / static_cast<double>(stop - start);
      for (Parameter* p : params) p->zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& s = data.samples[train[k]];
        t.clear();
        const Var logits = sample_logits(t, model, s, cfg.use_mult);
        const std::size_t label[1] = {s.label};
        const Var loss = cross_entropy(logits, label);
        if (!std::isfinite(loss.scalar())) {
          throw Error(ErrorKind::numeric, "training diverged (non-finite loss at epoch " + std::to_string(epoch) +
                                              "); lower LR");
        }
        epoch_loss += loss.scalar();
        t.backward(loss, weight);
      }
      for (Parameter* p : params) adam_step(*p, cfg.lr);
    }
    last_loss = train.empty() ? 0.0 : epoch_loss / static_cast<double>(train.size());
  }
  return last_loss;
}

struct FoldResult {
  int run = 0;
  int fold = 0;
  std::size_t test_size = 0;
  std::size_t test_correct = 0;
  std::size_t train_size = 0;
  std::size_t train_correct = 0;  // after the final update
  double final_loss = 0.0;        // mean training loss of the last epoch
};

struct TrainReport {
  std::string header;
  std::vector<FoldResult> folds;
  std::vector<double> run_accuracy;  // percent, weighted by fold size
  double mean = 0.0;
  double stdev = 0.0;  // population std across runs
  double ratio = 1.0;
};

inline void summarize(TrainReport& r, int runs) {
  r.run_accuracy.assign(static_cast<std::size_t>(runs), 0.0);
  std::vector<std::size_t> correct(static_cast<std::size_t>(runs), 0), total(static_cast<std::size_t>(runs), 0);
  for (const FoldResult& f : r.folds) {
    correct[static_cast<std::size_t>(f.run)] += f.test_correct;
    total[static_cast<std::size_t>(f.run)] += f.test_size;
  }
  for (int k = 0; k < runs; ++k) {
    const auto i = static_cast<std::size_t>(k);
    r.run_accuracy[i] = total[i] == 0 ? 0.0 : 100.0 * static_cast<double>(correct[i]) / static_cast<double>(total[i]);
  }
  r.mean = std::accumulate(r.run_accuracy.begin(), r.run_accuracy.end(), 0.0) / runs;
  double var = 0.0;
  for (double a : r.run_accuracy) var += (a - r.mean) * (a - r.mean);
  r.stdev = std::sqrt(var / runs);
}

struct TrainOptions {
  std::optional<fs::path> checkpoint;  // where to save the run 0 / fold 0 model
  std::ostream* log = nullptr;         // progress and timing, never part of the report
};

inline FoldPlan plan_for_run(const RunConfig& cfg, std::size_t n, int run) {
  return kfold(n, static_cast<std::size_t>(cfg.folds), run_seed(cfg.seed, run));
}

inline TrainReport cross_validate(const RunConfig& cfg, const SampleSet& data, const TrainOptions& opt = {}) {
  cfg.validate();
  TrainReport report;
  report.ratio = data.ratio;
  const ClassifierConfig cc = classifier_config(cfg, data);
  for (int run = 0; run < cfg.runs; ++run) {
    const FoldPlan plan = plan_for_run(cfg, data.samples.size(), run);
    for (int fold = 0; fold < cfg.folds; ++fold) {
      const auto start = std::chrono::steady_clock::now();
      const std::uint64_t seed = fold_seed(cfg.seed, run, fold);
      GraphClassifier model(cc, seed);
      const std::vector<std::size_t> train = plan.train(static_cast<std::size_t>(fold));
      const std::vector<std::size_t> test = plan.test(static_cast<std::size_t>(fold));
      if (cfg.standardize) {
        const auto [shift, scale] = fit_input_transform(data, train, cc.streams, cc.mst.input_dim, cfg.use_mult);
        model.set_input_transform(shift, scale);
      }
      FoldResult fr;
      fr.run = run;
      fr.fold = fold;
      fr.final_loss = train_model(model, data, train, cfg, mix_seed(seed));
      fr.test_size = test.size();
      fr.test_correct = count_correct(model, data, test, cfg.use_mult);
      fr.train_size = train.size();
      fr.train_correct = count_correct(model, data, train, cfg.use_mult);
      report.folds.push_back(fr);
      if (run == 0 && fold == 0 && opt.checkpoint) save_checkpoint(model, opt.checkpoint->string());
      if (opt.log != nullptr) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        *opt.log << "run " << run << " fold " << fold << ": test " << fr.test_correct << "/" << fr.test_size
                 << " train " << fr.train_correct << "/" << fr.train_size << " (" << secs << " s)" << std::endl;
      }
    }
  }
  summarize(report, cfg.runs);
  return report;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline void write_train_report(const fs::path& dir, const RunConfig& cfg, const TrainReport& r) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "train_report.csv");
  std::ofstream txt(dir / "train_report.txt");
  if (!csv || !txt) throw Error(ErrorKind::io, "cannot write reports into " + dir.string());
  csv << "run,fold,test_size,test_correct,test_accuracy,train_size,train_correct,train_accuracy,final_loss\n";
  for (const FoldResult& f : r.folds) {
    csv << f.run << "," << f.fold << "," << f.test_size << "," << f.test_correct << ","
        << detail::fixed(100.0 * static_cast<double>(f.test_correct) / static_cast<double>(f.test_size), 4) << ","
        << f.train_size << "," << f.train_correct << ","
        << detail::fixed(100.0 * static_cast<double>(f.train_correct) / static_cast<double>(f.train_size), 4) << ","
        << detail::format_double(f.final_loss) << "\n";
  }
  txt << "dataset " << cfg.dataset << "  mode " << to_string(cfg.mode) << "  runs " << cfg.runs << "  folds "
      << cfg.folds << "  seed " << cfg.seed << "\n";
  txt << describe(cfg) << "\n";
  txt << "data ratio R " << detail::fixed(r.ratio, 4) << "\n\n";
  txt << "run  accuracy\n";
  for (std::size_t i = 0; i < r.run_accuracy.size(); ++i) {
    txt << i << "    " << detail::fixed(r.run_accuracy[i], 2) << "\n";
  }
  txt << "\naccuracy " << detail::fixed(r.mean, 2) << " +- " << detail::fixed(r.stdev, 2) << "\n";
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::size_t test_size = 0;
  std::size_t test_correct = 0;
  std::size_t train_size = 0;
  std::size_t train_correct = 0;
  std::size_t audited = 0;
  std::size_t audit_passed = 0;
  double audit_max_diff = 0.0;
};

/// Evaluates a checkpoint on run 0 / fold 0 of the configured plan and checks
/// that permuting every stream of every test sample leaves the logits fixed.
inline EvalReport evaluate_checkpoint(const RunConfig& cfg, const SampleSet& data, const fs::path& checkpoint) {
  cfg.validate();
  GraphClassifier model(classifier_config(cfg, data), fold_seed(cfg.seed, 0, 0));
  load_checkpoint(model, checkpoint.string());
  const FoldPlan plan = plan_for_run(cfg, data.samples.size(), 0);
  const std::vector<std::size_t> test = plan.test(0);
  const std::vector<std::size_t> train = plan.train(0);
  EvalReport r;
  r.test_size = test.size();
  r.test_correct = count_correct(model, data, test, cfg.use_mult);
  r.train_size = train.size();
  r.train_correct = count_correct(model, data, train, cfg.use_mult);
  std::mt19937_64 rng(mix_seed(cfg.seed ^ 0xa0d17ull));
  Tape t;
  for (std::size_t i : test) {
    const Sample& s = data.samples[i];
    Sample shuffled = s;
    for (Multiset& m : shuffled.streams) {
      std::vector<std::size_t> sigma(static_cast<std::size_t>(m.size()));
      std::iota(sigma.begin(), sigma.end(), std::size_t{0});
      for (std::size_t k = sigma.size(); k > 1; --k) std::swap(sigma[k - 1], sigma[static_cast<std::size_t>(rng() % k)]);
      m = permute(m, sigma);
    }
    t.clear();
    const Matrix a = sample_logits(t, model, s, cfg.use_mult).value();
    t.clear();
    const Matrix b = sample_logits(t, model, shuffled, cfg.use_mult).value();
    const double diff = (a - b).cwiseAbs().maxCoeff();
    r.audit_max_diff = std::max(r.audit_max_diff, diff);
    ++r.audited;
    if (diff <= 1e-9) ++r.audit_passed;
  }
  return r;
}

inline void write_eval_report(const fs::path& dir, const RunConfig& cfg, const EvalReport& r) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "eval_report.csv");
  std::ofstream txt(dir / "eval_report.txt");
  if (!csv || !txt) throw Error(ErrorKind::io, "cannot write reports into " + dir.string());
  const auto pct = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : 100.0 * static_cast<double>(a) / static_cast<double>(b); };
  csv << "split,size,correct,accuracy\n";
  csv << "test," << r.test_size << "," << r.test_correct << "," << detail::fixed(pct(r.test_correct, r.test_size), 4) << "\n";
  csv << "train," << r.train_size << "," << r.train_correct << "," << detail::fixed(pct(r.train_correct, r.train_size), 4)
      << "\n";
  csv << "audit," << r.audited << "," << r.audit_passed << "," << detail::fixed(pct(r.audit_passed, r.audited), 4) << "\n";
  txt << "dataset " << cfg.dataset << "  mode " << to_string(cfg.mode) << (cfg.cluster ? "  clustered" : "") << "\n";
  txt << describe(cfg) << "\n";
  txt << "test accuracy  " << detail::fixed(pct(r.test_correct, r.test_size), 2) << " (" << r.test_correct << "/"
      << r.test_size << ")\n";
  txt << "train accuracy " << detail::fixed(pct(r.train_correct, r.train_size), 2) << " (" << r.train_correct << "/"
      << r.train_size << ")\n";
  txt << "invariance audit " << r.audit_passed << "/" << r.audited << " within 1e-9\n";
}

inline void write_extract_report(const fs::path& dir, const RunConfig& cfg, const ExtractSummary& s) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "extract_report.csv");
  std::ofstream txt(dir / "extract_report.txt");
  if (!csv || !txt) throw Error(ErrorKind::io, "cannot write reports into " + dir.string());
  csv << "cache,graphs,streams,ratio\n";
  csv << "raw," << s.graphs << "," << s.streams << "," << detail::fixed(s.raw_ratio, 6) << "\n";
  if (cfg.cluster) csv << "clustered," << s.graphs << "," << s.streams << "," << detail::fixed(s.clustered_ratio, 6) << "\n";
  txt << "dataset " << cfg.dataset << "  mode " << to_string(cfg.mode) << "\n";
  txt << "graphs " << s.graphs << "  streams per graph " << s.streams << "\n";
  txt << "raw R " << detail::fixed(s.raw_ratio, 4) << "\n";
  if (cfg.cluster) {
    txt << "clustered R " << detail::fixed(s.clustered_ratio, 4) << " (eps " << detail::format_double(cfg.dbscan.eps)
        << ", min mass " << cfg.dbscan.min_mass << ")\n";
  }
}

// ---------------------------------------------------------------------------
// Complexity benchmark

struct BenchRow {
  std::string section;  // "block" or "compact"
  std::string variant;  // sab | imab | compact | expanded
  int n = 0;
  int m = 0;
  double seconds = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double sab_slope = 0.0;
  double imab_slope = 0.0;
  std::vector<std::pair<int, double>> speedup;  // (max multiplicity, expanded / compact)
};

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace detail {

template <typename F>
double best_time(int repeats, F&& f) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto start = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return best;
}

}  // namespace detail

inline BenchReport run_bench(const RunConfig& cfg) {
  const BenchConfig& b = cfg.bench;
  if (b.sizes.size() < 2) throw Error(ErrorKind::config, "bench: need at least two sizes");
  BenchReport out;
  std::mt19937_64 rng(cfg.seed);
  Sab sab(b.hidden, b.heads, LnVariant::post, rng);
  Imab imab(b.hidden, b.heads, b.induced, LnVariant::post, rng);
  const BiasConfig bias;
  std::vector<double> ns, sab_t, imab_t;
  for (int n : b.sizes) {
    const Matrix x = normal_matrix(n, b.hidden, 1.0, rng);
    Vector mult(n);
    for (int i = 0; i < n; ++i) mult(i) = static_cast<double>(1 + static_cast<int>(rng() % 5));
    Tape t;
    const double ts = detail::best_time(b.repeats, [&] {
      t.clear();
      sab.forward(t.constant(x), mult, bias);
    });
    const double ti = detail::best_time(b.repeats, [&] {
      t.clear();
      imab.forward(t.constant(x), mult, bias);
    });
    out.rows.push_back({"block", "sab", n, 0, ts});
    out.rows.push_back({"block", "imab", n, 0, ti});
    ns.push_back(n);
    sab_t.push_back(ts);
    imab_t.push_back(ti);
  }
  out.sab_slope = loglog_slope(ns, sab_t);
  out.imab_slope = loglog_slope(ns, imab_t);

  // Compact multiset vs its expanded list through an SAB-based MST.
  MstConfig mc;
  mc.block = BlockKind::sab;
  mc.equivariant_layers = 1;
  mc.hidden = b.hidden;
  mc.heads = b.heads;
  mc.invariant_queries = 1;
  mc.ln = LnVariant::post;
  Mst model(mc, rng);
  for (int m : b.max_mult) {
    Multiset x;
    x.base = Matrix(b.compact_points, 2);
    for (Eigen::Index i = 0; i < x.base.size(); ++i) x.base.data()[i] = static_cast<double>(rng() % 1000000) / 1e6;
    x = canonicalize(x.base, std::vector<std::int64_t>(static_cast<std::size_t>(b.compact_points), 1));
    for (std::size_t i = 0; i < x.mult.size(); ++i) x.mult[i] = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(m));
    x.mult[0] = m;
    const Matrix expanded = expand_to_list(x);
    Tape t;
    const double tc = detail::best_time(b.repeats, [&] {
      t.clear();
      model.forward(t, x);
    });
    const double te = detail::best_time(b.repeats, [&] {
      t.clear();
      model.forward_without_mult(t, expanded);
    });
    out.rows.push_back({"compact", "compact", static_cast<int>(x.size()), m, tc});
    out.rows.push_back({"compact", "expanded", static_cast<int>(expanded.rows()), m, te});
    out.speedup.emplace_back(m, te / tc);
  }
  return out;
}

/// Timing output is not reproducible, so the bench writes only bench_*.
inline void write_bench_report(const fs::path& dir, const RunConfig& cfg, const BenchReport& r) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "bench_timing.csv");
  std::ofstream txt(dir / "bench_timing.txt");
  if (!csv || !txt) throw Error(ErrorKind::io, "cannot write reports into " + dir.string());
  csv << "section,variant,n,m,seconds\n";
  for (const BenchRow& row : r.rows) {
    csv << row.section << "," << row.variant << "," << row.n << "," << row.m << "," << detail::format_double(row.seconds) << "\n";
  }
  csv << "slope,sab,,," << detail::format_double(r.sab_slope) << "\n";
  csv << "slope,imab,,," << detail::format_double(r.imab_slope) << "\n";
  for (const auto& [m, s] : r.speedup) csv << "speedup,expanded/compact,," << m << "," << detail::format_double(s) << "\n";
  txt << "hidden " << cfg.bench.hidden << "  heads " << cfg.bench.heads << "  induced " << cfg.bench.induced
      << "  repeats " << cfg.bench.repeats << "\n";
  txt << "SAB log-log slope  " << detail::fixed(r.sab_slope, 3) << "\n";
  txt << "IMAB log-log slope " << detail::fixed(r.imab_slope, 3) << "\n";
  for (const auto& [m, s] : r.speedup) {
    txt << "max multiplicity " << m << ": expanded/compact " << detail::fixed(s, 2) << "x\n";
  }
}

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  fs::path config;
  std::optional<std::uint64_t> seed;
  bool no_mult = false;
  bool no_cluster = false;
  fs::path out = "out";
  std::optional<fs::path> checkpoint;
};

inline RunConfig resolve_config(const CommandOptions& opt) {
  RunConfig cfg = load_config(opt.config);
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.synthetic.seed = *opt.seed;
  }
  if (opt.no_mult) cfg.use_mult = false;
  if (opt.no_cluster) cfg.cluster = false;
  cfg.validate();
  return cfg;
}

inline ExtractSummary cmd_extract(const CommandOptions& opt, std::ostream& log) {
  const RunConfig cfg = resolve_config(opt);
  const ExtractSummary s = extract_diagrams(cfg);
  write_extract_report(opt.out, cfg, s);
  log << "extract: " << s.graphs << " graphs, raw cache " << (s.raw_fresh ? "fresh" : "written");
  if (cfg.cluster) log << ", clustered cache " << (s.clustered_fresh ? "fresh" : "written");
  log << std::endl;
  return s;
}

inline TrainReport cmd_train(const CommandOptions& opt, std::ostream& log) {
  const RunConfig cfg = resolve_config(opt);
  const auto start = std::chrono::steady_clock::now();
  const SampleSet data = load_samples(cfg);
  fs::create_directories(opt.out);
  TrainOptions topt;
  topt.checkpoint = opt.checkpoint ? *opt.checkpoint : opt.out / "model.ckpt";
  topt.log = &log;
  const TrainReport r = cross_validate(cfg, data, topt);
  write_train_report(opt.out, cfg, r);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ofstream timing(opt.out / "timing.txt");
  timing << "train seconds " << secs << "\n";
  log << "train: accuracy " << detail::fixed(r.mean, 2) << " +- " << detail::fixed(r.stdev, 2) << " in " << secs
      << " s" << std::endl;
  return r;
}

inline EvalReport cmd_eval(const CommandOptions& opt, std::ostream& log) {
  const RunConfig cfg = resolve_config(opt);
  const SampleSet data = load_samples(cfg);
  const fs::path ckpt = opt.checkpoint ? *opt.checkpoint : opt.out / "model.ckpt";
  const EvalReport r = evaluate_checkpoint(cfg, data, ckpt);
  write_eval_report(opt.out, cfg, r);
  log << "eval: test " << r.test_correct << "/" << r.test_size << ", audit " << r.audit_passed << "/" << r.audited
      << " (max diff " << r.audit_max_diff << ")" << std::endl;
  if (r.audit_passed != r.audited) {
    throw Error(ErrorKind::consistency, "eval: permutation audit failed, max logit change " +
                                            detail::format_double(r.audit_max_diff));
  }
  return r;
}

inline BenchReport cmd_bench(const CommandOptions& opt, std::ostream& log) {
  const RunConfig cfg = resolve_config(opt);
  const BenchReport r = run_bench(cfg);
  write_bench_report(opt.out, cfg, r);
  log << "bench: SAB slope " << detail::fixed(r.sab_slope, 3) << ", IMAB slope " << detail::fixed(r.imab_slope, 3)
      << std::endl;
  return r;
}

/// Process exit status for an error kind; 2 is reserved for usage errors.
inline int exit_code(ErrorKind k) { return 10 + static_cast<int>(k); }

}  // namespace mst
