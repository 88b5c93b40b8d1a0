// Acceptance run: one PASS/FAIL line per criterion. With arguments, only the
// listed criteria run (e.g. `acceptance 1 4 5`).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mst/mst.hpp"
#include "oracles.hpp"

using namespace mst;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kSource = MST_SOURCE_DIR;
const fs::path kConfigs = kSource / "configs" / "acceptance";
const fs::path kOut = fs::absolute("acceptance_out");

std::string num(double v, int digits = 2) { return detail::fixed(v, digits); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void set_alphas(GraphClassifier& clf, double value) {
  clf.visit([&](const std::string& path, Parameter& p) {
    if (path.size() >= 6 && path.compare(path.size() - 6, 6, "/alpha") == 0) p.value(0, 0) = value;
  });
}

/// Cross-validates one acceptance config, logging folds to stderr.
// Reports go to acceptance_out/<config stem><suffix>.
TrainReport train_config(const std::string& name, const std::function<void(RunConfig&)>& tweak = {},
                         const std::string& suffix = "") {
  RunConfig cfg = load_config(kConfigs / name);
  if (tweak) tweak(cfg);
  cfg.validate();
  const SampleSet data = load_samples(cfg);
  TrainOptions opt;
  opt.log = &std::cerr;
  std::cerr << "[" << name << "] " << describe(cfg) << std::endl;
  TrainReport r = cross_validate(cfg, data, opt);
  write_train_report(kOut / (fs::path(name).stem().string() + suffix), cfg, r);
  return r;
}

// 1. Permutation invariance of logits and co-permutation of SAB/IMAB outputs.
Outcome invariance() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  ClassifierConfig cc;
  cc.mst.hidden = 16;
  cc.mst.heads = 2;
  cc.mst.bias_in_equivariant = true;
  cc.classes = 3;
  GraphClassifier clf(cc, 7);
  set_alphas(clf, 0.7);
  Sab sab(8, 2, LnVariant::post, rng);
  Imab imab(8, 2, 3, LnVariant::pre, rng);
  double worst_logit = 0.0, worst_eq = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Multiset x = oracle::random_multiset(rng, 8, 100, 2);
    const auto sigma = oracle::random_permutation(static_cast<std::size_t>(x.size()), rng);
    const Multiset y = permute(x, sigma);
    Tape t;
    worst_logit = std::max(worst_logit, (clf.forward(t, {x}).value() - clf.forward(t, {y}).value()).cwiseAbs().maxCoeff());
    const Multiset h = oracle::random_multiset(rng, 8, 100, 8);
    const auto tau = oracle::random_permutation(static_cast<std::size_t>(h.size()), rng);
    const Multiset hp = permute(h, tau);
    for (int which = 0; which < 2; ++which) {
      const Matrix a = which == 0 ? sab.forward(t.constant(h.base), h.mult_vector(), {}).value()
                                  : imab.forward(t.constant(h.base), h.mult_vector(), {}).value();
      const Matrix b = which == 0 ? sab.forward(t.constant(hp.base), hp.mult_vector(), {}).value()
                                  : imab.forward(t.constant(hp.base), hp.mult_vector(), {}).value();
      worst_eq = std::max(worst_eq, (permute_rows(a, tau) - b).cwiseAbs().maxCoeff());
    }
  }
  const double secs = seconds_since(start);
  return {worst_logit <= 1e-9 && worst_eq <= 1e-9 && secs < 60.0,
          "max logit change " + sci(worst_logit) + ", max SAB/IMAB co-permutation error " + sci(worst_eq) + ", " +
              num(secs) + " s"};
}

// 2. Unit multiplicities: zero bias matrices, bitwise equal outputs.
Outcome degeneracy() {
  std::mt19937_64 rng(202);
  bool zero = true, equal = true;
  for (LnVariant ln : {LnVariant::post, LnVariant::pre}) {
    for (BlockKind block : {BlockKind::sab, BlockKind::imab}) {
      MstConfig on;
      on.hidden = 16;
      on.block = block;
      on.ln = ln;
      on.bias_in_equivariant = true;
      MstConfig off = on;
      off.bias_enabled = false;
      std::mt19937_64 r1(5), r2(5);
      Mst a(on, r1), b(off, r2);
      for (Mst* m : {&a, &b}) {
        m->visit([](const std::string& path, Parameter& p) {
          if (path.size() >= 6 && path.compare(path.size() - 6, 6, "/alpha") == 0) p.value(0, 0) = 0.9;
        }, "m");
      }
      for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 8);
        const Multiset x = as_set(normal_matrix(n, 2, 1.0, rng));
        const Vector ones = Vector::Ones(n);
        const Vector q_ones = Vector::Ones(1 + static_cast<int>(rng() % 4));
        zero = zero && (multiplicity_bias(q_ones, ones, 1e-8).array() == 0.0).all();
        Tape t;
        Var m_alpha = t.constant(normal_matrix(4, 1, 0.1, rng));
        zero = zero && (learned_multiplicity_bias(m_alpha, ones, 1e-8).value().array() == 0.0).all();
        equal = equal && a.forward(t, x).value() == b.forward(t, x).value();
      }
    }
  }
  return {zero && equal, std::string("bias matrices ") + (zero ? "all zero" : "NONZERO") + ", outputs " +
                             (equal ? "bitwise equal" : "DIFFER") + " over 200 sets"};
}

// 3. Finite-difference check of every parameter through MST + cross-entropy.
Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(303);
  double worst = 0.0;
  std::size_t tensors = 0;
  for (BlockKind block : {BlockKind::sab, BlockKind::imab}) {
    for (LnVariant ln : {LnVariant::post, LnVariant::pre}) {
      ClassifierConfig cc;
      cc.mst.block = block;
      cc.mst.ln = ln;
      cc.mst.hidden = 6;
      cc.mst.heads = 2;
      cc.mst.equivariant_queries = 2;
      cc.mst.invariant_queries = 3;
      cc.mst.bias_in_equivariant = true;
      cc.classes = 3;
      GraphClassifier clf(cc, 17);
      set_alphas(clf, 0.6);
      const Multiset x = oracle::random_multiset(rng, 6, 40);
      const std::size_t label[1] = {2};
      const std::vector<Parameter*> params = clf.parameters();
      tensors += params.size();
      worst = std::max(worst, oracle::gradient_error(params, [&](Tape& t) {
        return cross_entropy(clf.forward(t, {x}), label);
      }));
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-4 && secs < 300.0,
          "max relative error " + sci(worst) + " over " + std::to_string(tensors) + " parameter tensors, " +
              num(secs) + " s"};
}

// 4. Persistence against brute-force oracles.
Outcome persistence() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(404);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const oracle::RandomGraph rg = oracle::random_graph(rng);
    const OrdinaryDiagrams d = ordinary_persistence_0d(rg.graph, rg.f);
    if (!same_multiset(d.finite.points, oracle::as_diagram(oracle::ord0_by_rank(rg.graph, rg.f)))) ++mismatches;
    if (!same_multiset(d.essential.points, oracle::as_diagram(oracle::component_ranges(rg.graph, rg.f)))) ++mismatches;
    const ExtendedDiagrams e = extended_persistence(rg.graph, rg.f);
    const oracle::Extended o = oracle::extended_by_reduction(rg.graph, rg.f);
    if (!same_multiset(e.ord0.points, oracle::as_diagram(o.ord0))) ++mismatches;
    if (!same_multiset(e.ext0.points, oracle::as_diagram(o.ext0))) ++mismatches;
    if (!same_multiset(e.ext1.points, oracle::as_diagram(o.ext1))) ++mismatches;
    if (!same_multiset(e.rel1.points, oracle::as_diagram(o.rel1))) ++mismatches;
  }
  const double secs = seconds_since(start);
  return {mismatches == 0 && secs < 60.0,
          std::to_string(mismatches) + " mismatching diagrams over 500 graphs, " + num(secs) + " s"};
}

// 5. Heat kernel signature closed form and trace identity.
Outcome heat_kernel() {
  const Graph k2 = Graph::from_edges(2, {{0, 1}});
  double closed = 0.0;
  for (double t : {0.0, 0.1, 0.5, 1.0, 2.5, 10.0}) {
    const Vector h = hks(k2, t);
    const double want = (1.0 + std::exp(-2.0 * t)) / 2.0;
    closed = std::max({closed, std::abs(h(0) - want), std::abs(h(1) - want)});
  }
  std::mt19937_64 rng(505);
  double trace = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Graph g = oracle::random_graph(rng, 12).graph;
    const LaplacianSpectrum s = laplacian_spectrum(g);
    for (double t : {0.1, 1.0, 10.0}) {
      const double want = s.eigenvalues.unaryExpr([t](double l) { return std::exp(-t * l); }).sum();
      trace = std::max(trace, std::abs(hks(s, t).sum() - want));
    }
  }
  return {closed <= 1e-12 && trace <= 1e-9, "K2 error " + sci(closed) + ", trace identity error " + sci(trace)};
}

// 6. Synthetic classification with and without multiplicities.
Outcome synthetic() {
  const auto start = std::chrono::steady_clock::now();
  const double c2 = train_config("synthetic_c2.cfg").mean;
  const double c3 = train_config("synthetic_c3.cfg").mean;
  const double c5 = train_config("synthetic_c5.cfg").mean;
  const double plain = train_config("synthetic_c2.cfg", [](RunConfig& c) { c.use_mult = false; }, "_no_mult").mean;
  return {c2 >= 99.0 && c3 >= 97.0 && c5 >= 80.0 && plain <= 70.0,
          "C=2 " + num(c2) + "%, C=3 " + num(c3) + "%, C=5 " + num(c5) + "%, C=2 without mult " + num(plain) + "%, " +
              num(seconds_since(start) / 60.0, 1) + " min"};
}

// 7. MUTAG, ordinary diagrams at hks_10, no clustering.
Outcome mutag_ordinary() {
  const auto start = std::chrono::steady_clock::now();
  const TrainReport r = train_config("mutag_ordinary.cfg");
  const double secs = seconds_since(start);
  return {r.mean >= 80.0 && secs <= 3600.0,
          "accuracy " + num(r.mean) + " +- " + num(r.stdev) + "%, " + num(secs / 60.0, 1) + " min"};
}

// 8. DBSCAN compression: exact mass, ratio and accuracy on MUTAG.
Outcome clustering() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> eps(0.01, 1.0);
  int mass_errors = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Multiset x = oracle::random_multiset(rng, 30, 20);
    const Multiset y = dbscan_compress(x, {eps(rng), 1 + static_cast<std::int64_t>(rng() % 4)});
    if (y.total_mass() != x.total_mass()) ++mass_errors;
  }
  RunConfig cfg = load_config(kConfigs / "mutag_extended.cfg");
  cfg.validate();
  const ExtractSummary s = extract_diagrams(cfg);
  const double clustered = train_config("mutag_extended.cfg").mean;
  const double raw = train_config("mutag_extended.cfg", [](RunConfig& c) { c.cluster = false; }, "_raw").mean;
  return {mass_errors == 0 && s.clustered_ratio < 0.7 && std::abs(clustered - raw) <= 5.0,
          std::to_string(mass_errors) + " mass errors in 1000 diagrams; R " + num(s.raw_ratio, 3) + " -> " +
              num(s.clustered_ratio, 3) + "; accuracy clustered " + num(clustered) + "% vs raw " + num(raw) + "%"};
}

// 9. Attention scaling and compact-vs-expanded speedup.
Outcome complexity() {
  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg = load_config(kConfigs / "bench.cfg");
  cfg.validate();
  const BenchReport r = run_bench(cfg);
  write_bench_report(kOut / "bench", cfg, r);
  double speedup50 = 0.0, speedup1 = 0.0;
  for (const auto& [m, s] : r.speedup) {
    if (m == 50) speedup50 = s;
    if (m == 1) speedup1 = s;
  }
  const double secs = seconds_since(start);
  const bool ok = r.sab_slope >= 1.7 && r.sab_slope <= 2.3 && r.imab_slope >= 0.7 && r.imab_slope <= 1.3 &&
                  speedup50 >= 50.0 && secs < 600.0;
  return {ok, "SAB slope " + num(r.sab_slope, 3) + ", IMAB slope " + num(r.imab_slope, 3) + ", speedup at m=50 " +
                  num(speedup50, 1) + "x (m=1: " + num(speedup1, 2) + "x), " + num(secs) + " s"};
}

// 10. Every reproducible command output is bitwise stable under a fixed seed.
Outcome determinism() {
  const fs::path root = kOut / "determinism";
  fs::remove_all(root);
  std::ostringstream log;
  std::vector<std::string> differing;
  std::size_t compared = 0;
  auto compare_dirs = [&](const fs::path& a, const fs::path& b, const std::string& what) {
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (!e.is_regular_file() || e.path().filename() == "timing.txt") continue;
      const fs::path rel = fs::relative(e.path(), a);
      ++compared;
      if (slurp(e.path()) != slurp(b / rel)) differing.push_back(what + ":" + rel.string());
    }
  };
  for (const char* name : {"determinism_synthetic.cfg", "determinism_mutag.cfg"}) {
    for (int pass = 0; pass < 2; ++pass) {
      const fs::path dir = root / (std::string(name) + "." + std::to_string(pass));
      ::setenv("MST_CACHE_DIR", (dir / "cache").c_str(), 1);
      CommandOptions opt;
      opt.config = kConfigs / name;
      opt.seed = 7;
      opt.out = dir / "out";
      RunConfig cfg = resolve_config(opt);
      if (cfg.mode != RunMode::synthetic) cmd_extract(opt, log);
      cmd_train(opt, log);
      cmd_eval(opt, log);
    }
    compare_dirs(root / (std::string(name) + ".0"), root / (std::string(name) + ".1"), name);
  }
  ::unsetenv("MST_CACHE_DIR");
  std::string detail = std::to_string(compared) + " report, cache and checkpoint files compared, " +
                       std::to_string(differing.size()) + " differ";
  for (const std::string& d : differing) detail += " " + d;
  return {differing.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, invariance},     {2, degeneracy}, {3, gradients},  {4, persistence}, {5, heat_kernel},
      {6, synthetic},      {7, mutag_ordinary}, {8, clustering}, {9, complexity}, {10, determinism},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  fs::create_directories(kOut);
  // Caches for the training criteria live next to the outputs.
  ::setenv("MST_CACHE_DIR", (kOut / "cache").c_str(), 0);
  const std::string cache_env = std::getenv("MST_CACHE_DIR");
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), id) == wanted.end()) continue;
    ::setenv("MST_CACHE_DIR", cache_env.c_str(), 1);
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
