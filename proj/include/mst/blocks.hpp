#pragma once

// Multiset attention blocks.
//
//   post-LN  MAB(Q, X) = LN(H + FFN(H)),     H = LN(Q + A(Q, X))
//   pre-LN   MAB(Q, X) = H + FFN(LN(H)),     H = Q + A(LN(Q), LN(X))
//   MAB_Q(X)           = MAB with learnable queries and A_Q in place of A
//   SAB(X)             = MAB(X, X)
//   IMAB(X)            = MAB(X, MAB_Q(X))
//
// Layer normalization acts on rows only, so multiplicities pass through it
// untouched.

#include <random>
#include <string>

#include "mst/attention.hpp"

namespace mst {

enum class LnVariant { post, pre };

struct LayerNormParams {
  Parameter gain;
  Parameter shift;

  static LayerNormParams make(Eigen::Index dim) {
    return {Parameter(Matrix::Ones(1, dim)), Parameter(Matrix::Zero(1, dim))};
  }

  Var apply(Var x) {
    Tape& t = x.tape();
    return layer_norm_rows(x, t.param(gain), t.param(shift));
  }

  template <typename F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "/gain", gain);
    f(prefix + "/shift", shift);
  }
};

struct FfnParams {
  Parameter w1;
  Parameter b1;
  Parameter w2;
  Parameter b2;

  static FfnParams make(Eigen::Index dim, Eigen::Index hidden, std::mt19937_64& rng) {
    FfnParams p;
    p.w1 = Parameter(glorot_uniform(dim, hidden, rng));
    p.b1 = Parameter(Matrix::Zero(1, hidden));
    p.w2 = Parameter(glorot_uniform(hidden, dim, rng));
    p.b2 = Parameter(Matrix::Zero(1, dim));
    return p;
  }

  Var apply(Var x) {
    Tape& t = x.tape();
    return ffn(x, t.param(w1), t.param(b1), t.param(w2), t.param(b2));
  }

  template <typename F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "/w1", w1);
    f(prefix + "/b1", b1);
    f(prefix + "/w2", w2);
    f(prefix + "/b2", b2);
  }
};

struct BlockParams {
  AttentionParams attn;
  FfnParams ffn;
  LayerNormParams ln1;
  LayerNormParams ln2;
  LnVariant variant = LnVariant::post;

  static BlockParams make(Eigen::Index dim, int heads, Eigen::Index query_count, LnVariant variant,
                          std::mt19937_64& rng) {
    BlockParams p;
    p.attn = AttentionParams::make(dim, heads, query_count, rng);
    p.ffn = FfnParams::make(dim, dim, rng);
    p.ln1 = LayerNormParams::make(dim);
    p.ln2 = LayerNormParams::make(dim);
    p.variant = variant;
    return p;
  }

  /// Shared tail: residual + FFN with the variant's normalization placement.
  /// `mixed` is Q + attention output.
  Var finish(Var mixed) {
    if (variant == LnVariant::post) {
      Var h = ln1.apply(mixed);
      return ln2.apply(add(h, ffn.apply(h)));
    }
    return add(mixed, ffn.apply(ln2.apply(mixed)));
  }

  template <typename F>
  void visit(F&& f, const std::string& prefix) {
    attn.visit(f, prefix + "/attn");
    ffn.visit(f, prefix + "/ffn");
    ln1.visit(f, prefix + "/ln1");
    ln2.visit(f, prefix + "/ln2");
  }
};

/// Multiset Attention Block.
class Mab {
 public:
  Mab() = default;
  Mab(Eigen::Index dim, int heads, LnVariant variant, std::mt19937_64& rng)
      : params_(BlockParams::make(dim, heads, 0, variant, rng)) {}

  Var forward(Var q, const Vector& mq, Var x, const Vector& mx, const BiasConfig& bias) {
    if (q.cols() != x.cols()) {
      throw Error(ErrorKind::dimension, "mab: query " + shape_of(q.value()) + " and input " +
                                            shape_of(x.value()) + " widths differ");
    }
    if (params_.variant == LnVariant::post) {
      Var att = multihead_multiset_attention(q, mq, x, mx, params_.attn, bias);
      return params_.finish(add(q, att));
    }
    Var qn = params_.ln1.apply(q);
    Var xn = params_.ln1.apply(x);
    Var att = multihead_multiset_attention(qn, mq, xn, mx, params_.attn, bias);
    return params_.finish(add(q, att));
  }

  BlockParams& params() { return params_; }

  template <typename F>
  void visit(F&& f, const std::string& prefix) { params_.visit(f, prefix); }

 private:
  BlockParams params_;
};

/// MAB with learnable queries: permutation invariant, `query_count` rows out.
class MabQ {
 public:
  MabQ() = default;
  MabQ(Eigen::Index dim, int heads, Eigen::Index query_count, LnVariant variant, std::mt19937_64& rng)
      : params_(BlockParams::make(dim, heads, query_count, variant, rng)) {}

  Var forward(Var x, const Vector& mx, const BiasConfig& bias) {
    if (x.rows() == 0) throw Error(ErrorKind::validation, "mab_q: empty input");
    Tape& t = x.tape();
    Var q = t.param(params_.attn.query);
    if (q.cols() != x.cols()) {
      throw Error(ErrorKind::dimension, "mab_q: query " + shape_of(q.value()) + " and input " +
                                            shape_of(x.value()) + " widths differ");
    }
    if (params_.variant == LnVariant::post) {
      Var att = multihead_learnable_query_attention(q, x, mx, params_.attn, bias);
      return params_.finish(add(q, att));
    }
    Var qn = params_.ln1.apply(q);
    Var xn = params_.ln1.apply(x);
    Var att = multihead_learnable_query_attention(qn, xn, mx, params_.attn, bias);
    return params_.finish(add(q, att));
  }

  Eigen::Index query_count() const { return params_.attn.query.value.rows(); }
  BlockParams& params() { return params_; }

  template <typename F>
  void visit(F&& f, const std::string& prefix) { params_.visit(f, prefix); }

 private:
  BlockParams params_;
};

class Sab {
 public:
  Sab() = default;
  Sab(Eigen::Index dim, int heads, LnVariant variant, std::mt19937_64& rng) : mab_(dim, heads, variant, rng) {}

  Var forward(Var x, const Vector& mx, const BiasConfig& bias) { return mab_.forward(x, mx, x, mx, bias); }

  Mab& mab() { return mab_; }

  template <typename F>
  void visit(F&& f, const std::string& prefix) { mab_.visit(f, prefix + "/mab"); }

 private:
  Mab mab_;
};

/// Induced block: x attends to a `query_count`-row summary of itself. The
/// summary is a derived set, so its multiplicities are all one.
class Imab {
 public:
  Imab() = default;
  Imab(Eigen::Index dim, int heads, Eigen::Index query_count, LnVariant variant, std::mt19937_64& rng)
      : inducer_(dim, heads, query_count, variant, rng), mab_(dim, heads, variant, rng) {}

  Var forward(Var x, const Vector& mx, const BiasConfig& bias) {
    Var summary = inducer_.forward(x, mx, bias);
    const Vector ones = Vector::Ones(summary.rows());
    return mab_.forward(x, mx, summary, ones, bias);
  }

  MabQ& inducer() { return inducer_; }
  Mab& mab() { return mab_; }

  template <typename F>
  void visit(F&& f, const std::string& prefix) {
    inducer_.visit(f, prefix + "/inducer");
    mab_.visit(f, prefix + "/mab");
  }

 private:
  MabQ inducer_;
  Mab mab_;
};

}  // namespace mst
