#pragma once

// The Multiset Transformer: input embedding, a stack of equivariant blocks,
// and a learnable-query pooling block. GraphClassifier runs one MST per
// diagram stream and feeds the concatenated representations to a single
// affine layer.

#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "mst/blocks.hpp"
#include "mst/multiset.hpp"

namespace mst {

enum class BlockKind { sab, imab };

struct MstConfig {
  int equivariant_layers = 2;         // E
  BlockKind block = BlockKind::imab;
  int equivariant_queries = 2;        // E.Q
  int invariant_queries = 4;          // I.Q
  int heads = 2;                      // H
  int hidden = 64;
  LnVariant ln = LnVariant::pre;
  bool bias_enabled = true;
  /// Multiplicity bias inside the equivariant stack. Off means only the
  /// pooling block sees multiplicities.
  bool bias_in_equivariant = false;
  double bias_epsilon = 1e-8;
  int input_dim = 2;

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::config, "mst config: " + what); };
    if (equivariant_layers < 1) fail("E must be at least 1");
    if (heads < 1) fail("H must be at least 1");
    if (hidden < 1 || hidden % heads != 0) {
      fail("hidden " + std::to_string(hidden) + " is not divisible by H " + std::to_string(heads));
    }
    if (invariant_queries < 1) fail("I.Q must be at least 1");
    if (block == BlockKind::imab && equivariant_queries < 1) fail("E.Q must be at least 1");
    if (input_dim < 1) fail("input dim must be at least 1");
    if (!(bias_epsilon > 0.0)) fail("bias epsilon must be positive");
  }
};

/// Empty diagrams enter the model as one point on the diagonal.
inline Multiset model_input(const Multiset& m, Eigen::Index dim = 2) {
  if (!m.empty()) return m;
  return Multiset{Matrix::Zero(1, dim), {1}};
}

class Mst {
 public:
  Mst() = default;
  Mst(const MstConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    embed_w_ = Parameter(glorot_uniform(cfg.input_dim, cfg.hidden, rng));
    embed_b_ = Parameter(Matrix::Zero(1, cfg.hidden));
    for (int i = 0; i < cfg.equivariant_layers; ++i) {
      if (cfg.block == BlockKind::sab) {
        layers_.emplace_back(Sab(cfg.hidden, cfg.heads, cfg.ln, rng));
      } else {
        layers_.emplace_back(Imab(cfg.hidden, cfg.heads, cfg.equivariant_queries, cfg.ln, rng));
      }
    }
    pool_ = MabQ(cfg.hidden, cfg.heads, cfg.invariant_queries, cfg.ln, rng);
  }

  /// I.Q x hidden representation of (base, mult).
  Var forward(Tape& t, const Matrix& base, const Vector& mult) {
    if (base.rows() == 0) throw Error(ErrorKind::validation, "mst: empty multiset");
    if (base.cols() != cfg_.input_dim) {
      throw Error(ErrorKind::dimension, "mst: input " + shape_of(base) + " but model expects " +
                                            std::to_string(cfg_.input_dim) + " columns");
    }
    if (mult.size() != base.rows()) {
      throw Error(ErrorKind::dimension, "mst: " + std::to_string(mult.size()) + " multiplicities for " +
                                            std::to_string(base.rows()) + " rows");
    }
    const BiasConfig pooled{cfg_.bias_epsilon, cfg_.bias_enabled};
    const BiasConfig equivariant{cfg_.bias_epsilon, cfg_.bias_enabled && cfg_.bias_in_equivariant};
    Var h = linear(t.constant(base), t.param(embed_w_), t.param(embed_b_));
    for (auto& layer : layers_) {
      h = std::visit([&](auto& block) { return block.forward(h, mult, equivariant); }, layer);
    }
    return pool_.forward(h, mult, pooled);
  }

  Var forward(Tape& t, const Multiset& x) { return forward(t, x.base, x.mult_vector()); }

  /// Same pipeline on the base set alone: all-ones multiplicities and no bias.
  Var forward_without_mult(Tape& t, const Matrix& base) {
    const bool saved = cfg_.bias_enabled;
    cfg_.bias_enabled = false;
    try {
      Var out = forward(t, base, Vector::Ones(base.rows()));
      cfg_.bias_enabled = saved;
      return out;
    } catch (...) {
      cfg_.bias_enabled = saved;
      throw;
    }
  }

  const MstConfig& config() const { return cfg_; }
  Eigen::Index output_size() const { return static_cast<Eigen::Index>(cfg_.invariant_queries) * cfg_.hidden; }

  template <typename F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "/embed/w", embed_w_);
    f(prefix + "/embed/b", embed_b_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string lp = prefix + "/layer" + std::to_string(i);
      std::visit([&](auto& block) { block.visit(f, lp); }, layers_[i]);
    }
    pool_.visit(f, prefix + "/pool");
  }

 private:
  MstConfig cfg_;
  Parameter embed_w_;
  Parameter embed_b_;
  std::vector<std::variant<Sab, Imab>> layers_;
  MabQ pool_;
};

struct ClassifierConfig {
  MstConfig mst;
  int streams = 1;
  int classes = 2;
  int extra_features = 0;  // spectral feature length, 0 when unused
};

class GraphClassifier {
 public:
  GraphClassifier() = default;
  GraphClassifier(const ClassifierConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.streams < 1) throw Error(ErrorKind::config, "classifier: at least one stream required");
    if (cfg.classes < 2) throw Error(ErrorKind::config, "classifier: at least two classes required");
    if (cfg.extra_features < 0) throw Error(ErrorKind::config, "classifier: negative feature length");
    std::mt19937_64 rng(seed);
    for (int s = 0; s < cfg.streams; ++s) streams_.emplace_back(cfg.mst, rng);
    const Eigen::Index in = streams_.front().output_size() * cfg.streams + cfg.extra_features;
    fc_w_ = Parameter(glorot_uniform(in, cfg.classes, rng));
    fc_b_ = Parameter(Matrix::Zero(1, cfg.classes));
    input_shift_ = Parameter(Matrix::Zero(cfg.streams, cfg.mst.input_dim));
    input_scale_ = Parameter(Matrix::Ones(cfg.streams, cfg.mst.input_dim));
  }

  /// Fixed per-stream affine map applied to diagram coordinates before the
  /// embedding: (x - shift) / scale, one row per stream. Not trained.
  void set_input_transform(const Matrix& shift, const Matrix& scale) {
    if (shift.rows() != cfg_.streams || shift.cols() != cfg_.mst.input_dim || scale.rows() != shift.rows() ||
        scale.cols() != shift.cols()) {
      throw Error(ErrorKind::dimension, "classifier: input transform " + shape_of(shift) + " / " + shape_of(scale) +
                                            " for " + std::to_string(cfg_.streams) + " streams");
    }
    if (!shift.allFinite() || !scale.allFinite() || (scale.array() <= 0.0).any()) {
      throw Error(ErrorKind::validation, "classifier: input scale must be finite and positive");
    }
    input_shift_.value = shift;
    input_scale_.value = scale;
  }

  /// 1 x classes logits. Empty streams are replaced by the diagonal sentinel.
  Var forward(Tape& t, const std::vector<Multiset>& streams, const Vector* features = nullptr,
              bool use_mult = true) {
    if (static_cast<int>(streams.size()) != cfg_.streams) {
      throw Error(ErrorKind::dimension, "classifier: " + std::to_string(streams.size()) +
                                            " streams but model has " + std::to_string(cfg_.streams));
    }
    const Eigen::Index feature_len = features != nullptr ? features->size() : 0;
    if (feature_len != cfg_.extra_features) {
      throw Error(ErrorKind::dimension, "classifier: " + std::to_string(feature_len) +
                                            " extra features but model expects " +
                                            std::to_string(cfg_.extra_features));
    }
    std::vector<Var> parts;
    parts.reserve(streams.size() + 1);
    for (std::size_t s = 0; s < streams.size(); ++s) {
      Multiset x = model_input(streams[s], cfg_.mst.input_dim);
      if (!streams[s].empty()) {
        const auto row = static_cast<Eigen::Index>(s);
        x.base = ((x.base.rowwise() - input_shift_.value.row(row)).array().rowwise() /
                  input_scale_.value.row(row).array())
                     .matrix();
      }
      Var r = use_mult ? streams_[s].forward(t, x) : streams_[s].forward_without_mult(t, x.base);
      parts.push_back(flatten_row(r));
    }
    if (feature_len > 0) parts.push_back(t.constant(features->transpose()));
    Var joined = parts.size() == 1 ? parts.front() : concat_cols(parts);
    return linear(joined, t.param(fc_w_), t.param(fc_b_));
  }

  const ClassifierConfig& config() const { return cfg_; }
  Mst& stream(std::size_t i) { return streams_.at(i); }

  template <typename F>
  void visit(F&& f) {
    for (std::size_t s = 0; s < streams_.size(); ++s) streams_[s].visit(f, "stream" + std::to_string(s));
    f("fc/w", fc_w_);
    f("fc/b", fc_b_);
  }

  /// Trainable parameters plus the fixed input transform; checkpoint order.
  template <typename F>
  void visit_state(F&& f) {
    visit(f);
    f("input/shift", input_shift_);
    f("input/scale", input_scale_);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    visit([&](const std::string&, Parameter& p) { out.push_back(&p); });
    return out;
  }

 private:
  ClassifierConfig cfg_;
  std::vector<Mst> streams_;
  Parameter fc_w_;
  Parameter fc_b_;
  Parameter input_shift_;
  Parameter input_scale_;
};

// Checkpoint text format:
//
//   mst-checkpoint 1
//   <path> <rows> <cols>
//   <rows*cols values, row-major, shortest round-trip decimal>
//   ...
//
// Entries appear in visit order and are matched by path on load.

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(GraphClassifier& model, std::ostream& os) {
  os << "mst-checkpoint " << kCheckpointVersion << "\n";
  model.visit_state([&](const std::string& path, Parameter& p) {
    os << path << " " << p.value.rows() << " " << p.value.cols() << "\n";
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      if (i > 0) os << " ";
      os << detail::format_double(p.value.data()[i]);
    }
    os << "\n";
  });
}

inline void load_checkpoint(GraphClassifier& model, std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "mst-checkpoint") {
    throw Error(ErrorKind::parse, "checkpoint: missing header");
  }
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::parse, "checkpoint: unsupported version " + std::to_string(version));
  }
  model.visit_state([&](const std::string& path, Parameter& p) {
    std::string got;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (!(is >> got >> rows >> cols)) throw Error(ErrorKind::parse, "checkpoint: truncated before " + path);
    if (got != path) throw Error(ErrorKind::dimension, "checkpoint: expected " + path + ", found " + got);
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw Error(ErrorKind::dimension, "checkpoint: " + path + " is " + std::to_string(rows) + "x" +
                                            std::to_string(cols) + ", model has " + shape_of(p.value));
    }
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      std::string tok;
      if (!(is >> tok)) throw Error(ErrorKind::parse, "checkpoint: truncated in " + path);
      p.value.data()[i] = detail::parse_double(tok, "checkpoint " + path);
    }
  });
  std::string extra;
  if (is >> extra) throw Error(ErrorKind::dimension, "checkpoint: unexpected entry " + extra);
}

inline void save_checkpoint(GraphClassifier& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::io, "cannot write checkpoint " + path);
  save_checkpoint(model, os);
}

inline void load_checkpoint(GraphClassifier& model, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot read checkpoint " + path);
  load_checkpoint(model, is);
}

}  // namespace mst
