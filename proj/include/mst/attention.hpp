#pragma once

// Multiset-enhanced attention.
//
//   A(Q, X)  = (softmax(Q X^T / sqrt(d)) + alpha * B) X
//   B        = (M_Q - 1)(M_X - 1)^T / (||(M_Q - 1)(M_X - 1)^T||_F + eps)
//
//   A_Q(X)   = (softmax(Q X^T / sqrt(d)) + B_Q) X,   Q learnable
//   B_Q      = M_alpha (M_X - 1)^T / (||M_alpha (M_X - 1)^T||_F + eps)
//
// The bias is added after the softmax, so the combined weights are not
// row-stochastic. Both bias matrices vanish exactly when every multiplicity
// is one.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mst/numerics.hpp"

namespace mst {

struct BiasConfig {
  double epsilon = 1e-8;
  bool enabled = true;
};

/// Frobenius-normalized outer product of (mq - 1) and (mx - 1).
inline Matrix multiplicity_bias(const Vector& mq, const Vector& mx, double eps) {
  const Vector u = mq.array() - 1.0;
  const Vector v = mx.array() - 1.0;
  Matrix outer = u * v.transpose();
  const double norm = outer.norm();
  return outer / (norm + eps);
}

/// Tape version of B_Q, differentiable in m_alpha.
inline Var learned_multiplicity_bias(Var m_alpha, const Vector& mx, double eps) {
  Tape& t = m_alpha.tape();
  if (m_alpha.cols() != 1) {
    throw Error(ErrorKind::dimension, "learned_multiplicity_bias: m_alpha must be a column, got " +
                                          shape_of(m_alpha.value()));
  }
  Matrix shifted = (mx.array() - 1.0).matrix();
  Var outer = matmul_nt(m_alpha, t.constant(std::move(shifted)));
  return div_scalar(outer, frobenius_norm(outer), eps);
}

/// (softmax(q k^T / sqrt(k.cols)) + bias) v. `bias` may be null.
inline Var biased_attention(Var q, Var k, Var v, const Var* bias) {
  if (q.cols() != k.cols()) {
    throw Error(ErrorKind::dimension, "attention: query " + shape_of(q.value()) +
                                          " and key " + shape_of(k.value()) + " widths differ");
  }
  if (k.rows() != v.rows()) {
    throw Error(ErrorKind::dimension, "attention: key " + shape_of(k.value()) + " and value " +
                                          shape_of(v.value()) + " row counts differ");
  }
  Var scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(k.cols())));
  Var weights = softmax_rows(scores);
  if (bias != nullptr) weights = add(weights, *bias);
  return matmul(weights, v);
}

inline Var scaled_dot_attention(Var q, Var k, Var v) { return biased_attention(q, k, v, nullptr); }

namespace detail {

inline void require_mult(const Var& x, const Vector& m, const char* what) {
  if (m.size() != x.rows()) {
    throw Error(ErrorKind::dimension, std::string(what) + ": " + std::to_string(m.size()) +
                                          " multiplicities for " + std::to_string(x.rows()) + " rows");
  }
}

/// alpha * B as a tape node, or nothing when the bias is switched off.
inline std::optional<Var> pairwise_bias(Tape& t, const Vector& mq, const Vector& mx, Var alpha,
                                        const BiasConfig& cfg) {
  if (!cfg.enabled) return std::nullopt;
  return mul_scalar(t.constant(multiplicity_bias(mq, mx, cfg.epsilon)), alpha);
}

inline std::optional<Var> query_bias(Var m_alpha, const Vector& mx, const BiasConfig& cfg) {
  if (!cfg.enabled) return std::nullopt;
  return learned_multiplicity_bias(m_alpha, mx, cfg.epsilon);
}

}  // namespace detail

/// Single-head A(Q, X) with K = V = X.
inline Var multiset_attention(Var q, const Vector& mq, Var x, const Vector& mx, Var alpha,
                              const BiasConfig& cfg) {
  detail::require_mult(q, mq, "multiset_attention(query)");
  detail::require_mult(x, mx, "multiset_attention(input)");
  auto bias = detail::pairwise_bias(q.tape(), mq, mx, alpha, cfg);
  return biased_attention(q, x, x, bias ? &*bias : nullptr);
}

/// Single-head A_Q(X) with K = V = X.
inline Var learnable_query_attention(Var query, Var x, const Vector& mx, Var m_alpha,
                                     const BiasConfig& cfg) {
  detail::require_mult(x, mx, "learnable_query_attention");
  if (x.rows() == 0) throw Error(ErrorKind::validation, "learnable_query_attention: empty input");
  auto bias = detail::query_bias(m_alpha, mx, cfg);
  return biased_attention(query, x, x, bias ? &*bias : nullptr);
}

struct HeadWeights {
  Parameter wq;
  Parameter wk;
  Parameter wv;
};

/// Parameters of one attention site. `m_alpha` and `query` are only
/// populated for learnable-query attention.
struct AttentionParams {
  Parameter alpha;
  Parameter m_alpha;
  Parameter query;
  std::vector<HeadWeights> heads;
  Parameter wo;

  /// Projections for `head_count` heads of width dim / head_count each.
  static AttentionParams make(Eigen::Index dim, int head_count, Eigen::Index query_count,
                              std::mt19937_64& rng) {
    if (head_count < 1 || dim % head_count != 0) {
      throw Error(ErrorKind::config, "attention: width " + std::to_string(dim) +
                                         " is not divisible by " + std::to_string(head_count) + " heads");
    }
    AttentionParams p;
    p.alpha = Parameter(Matrix::Zero(1, 1));
    const Eigen::Index head_dim = dim / head_count;
    for (int h = 0; h < head_count; ++h) {
      HeadWeights w;
      w.wq = Parameter(glorot_uniform(dim, head_dim, rng));
      w.wk = Parameter(glorot_uniform(dim, head_dim, rng));
      w.wv = Parameter(glorot_uniform(dim, head_dim, rng));
      p.heads.push_back(std::move(w));
    }
    p.wo = Parameter(glorot_uniform(dim, dim, rng));
    if (query_count > 0) {
      p.query = Parameter(normal_matrix(query_count, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
      p.m_alpha = Parameter(normal_matrix(query_count, 1, 0.1, rng));
    }
    return p;
  }

  bool has_query() const { return query.value.size() != 0; }

  template <typename F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "/alpha", alpha);
    if (has_query()) {
      f(prefix + "/query", query);
      f(prefix + "/m_alpha", m_alpha);
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const std::string hp = prefix + "/head" + std::to_string(h);
      f(hp + "/wq", heads[h].wq);
      f(hp + "/wk", heads[h].wk);
      f(hp + "/wv", heads[h].wv);
    }
    f(prefix + "/wo", wo);
  }
};

/// Concat_i(att(q W_i^Q, x W_i^K, x W_i^V) + bias) W^O, with the same bias
/// matrix added inside every head.
inline Var multihead(Var q, Var x, AttentionParams& p, const Var* bias) {
  Tape& t = q.tape();
  std::vector<Var> heads;
  heads.reserve(p.heads.size());
  for (HeadWeights& w : p.heads) {
    Var qh = matmul(q, t.param(w.wq));
    Var kh = matmul(x, t.param(w.wk));
    Var vh = matmul(x, t.param(w.wv));
    heads.push_back(biased_attention(qh, kh, vh, bias));
  }
  Var joined = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return matmul(joined, t.param(p.wo));
}

/// Multihead A(Q, X); B is computed once from the multiplicities.
inline Var multihead_multiset_attention(Var q, const Vector& mq, Var x, const Vector& mx,
                                        AttentionParams& p, const BiasConfig& cfg) {
  detail::require_mult(q, mq, "multihead_multiset_attention(query)");
  detail::require_mult(x, mx, "multihead_multiset_attention(input)");
  auto bias = detail::pairwise_bias(q.tape(), mq, mx, q.tape().param(p.alpha), cfg);
  return multihead(q, x, p, bias ? &*bias : nullptr);
}

/// Multihead A_Q(X). `query` is the (possibly normalized) learnable query.
inline Var multihead_learnable_query_attention(Var query, Var x, const Vector& mx, AttentionParams& p,
                                               const BiasConfig& cfg) {
  detail::require_mult(x, mx, "multihead_learnable_query_attention");
  if (x.rows() == 0) throw Error(ErrorKind::validation, "learnable query attention: empty input");
  auto bias = detail::query_bias(query.tape().param(p.m_alpha), mx, cfg);
  return multihead(query, x, p, bias ? &*bias : nullptr);
}

}  // namespace mst
