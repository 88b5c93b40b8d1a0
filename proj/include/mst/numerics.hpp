#pragma once

// Dense row-major matrices with a define-by-run reverse-mode tape, the Adam
// optimizer, and a central finite-difference gradient oracle.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mst {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorKind { dimension, validation, capacity, parse, io, config, consistency, numeric };

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::validation: return "validation";
    case ErrorKind::capacity: return "capacity";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::consistency: return "consistency";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

inline void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw Error(ErrorKind::dimension,
                std::string(op) + ": incompatible shapes " + shape_of(a) + " and " + shape_of(b));
  }
}

/// A learnable tensor with its Adam state.
struct Parameter {
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
  std::int64_t steps = 0;

  Parameter() = default;
  explicit Parameter(Matrix init)
      : value(std::move(init)),
        grad(Matrix::Zero(value.rows(), value.cols())),
        first_moment(Matrix::Zero(value.rows(), value.cols())),
        second_moment(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive ops in execution order; backward() replays them in
/// exact reverse order. Rebuilt per forward pass.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  Var constant(Matrix value) { return push(std::move(value), nullptr, false, nullptr); }

  Var param(Parameter& p) { return push(Matrix(), &p, true, nullptr); }

  Var record(Matrix value, bool needs_grad, Backward backward) {
    return push(std::move(value), nullptr, needs_grad, needs_grad ? std::move(backward) : nullptr);
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? n.param->value : n.value;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var& v) const { return needs_grad(v.id()); }

  /// Gradient of an intermediate node after backward(); empty if none flowed.
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.param != nullptr) {
      n.param->grad += g;
    } else if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = seed for a 1x1 root and propagates to every
  /// Parameter on the tape. Parameter gradients accumulate across calls.
  void backward(const Var& root, double seed = 1.0) {
    const Matrix& rv = value(root.id());
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw Error(ErrorKind::dimension, "backward: root must be 1x1, got " + shape_of(rv));
    }
    for (Node& n : nodes_) {
      if (n.param == nullptr) n.grad.resize(0, 0);
    }
    accumulate(root.id(), Matrix::Constant(1, 1, seed));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix value;
    Parameter* param = nullptr;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };

  Var push(Matrix value, Parameter* p, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), p, Matrix(), std::move(backward), needs_grad});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

namespace detail {
inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs) {
    if (v.tape().needs_grad(v)) return true;
  }
  return false;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_shape(av.cols() == bv.rows(), "matmul", av, bv);
  Matrix out;
  out.noalias() = av * bv;
  return t.record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a.id(), g * t.value(b.id()).transpose());
    if (t.needs_grad(b)) t.accumulate(b.id(), t.value(a.id()).transpose() * g);
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_shape(av.cols() == bv.cols(), "matmul_nt", av, bv);
  Matrix out;
  out.noalias() = av * bv.transpose();
  return t.record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a.id(), g * t.value(b.id()));
    if (t.needs_grad(b)) t.accumulate(b.id(), g.transpose() * t.value(a.id()));
  });
}

inline Var add(Var a, Var b) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_shape(av.rows() == bv.rows() && av.cols() == bv.cols(), "add", av, bv);
  Matrix out = av + bv;
  return t.record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a.id(), g);
    t.accumulate(b.id(), g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_shape(av.rows() == bv.rows() && av.cols() == bv.cols(), "sub", av, bv);
  Matrix out = av - bv;
  return t.record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a.id(), g);
    t.accumulate(b.id(), -g);
  });
}

inline Var scale(Var a, double s) {
  Tape& t = a.tape();
  Matrix out = a.value() * s;
  return t.record(std::move(out), t.needs_grad(a),
                  [a, s](Tape& t, const Matrix& g) { t.accumulate(a.id(), g * s); });
}

/// a * s for a 1x1 node s.
inline Var mul_scalar(Var a, Var s) {
  Tape& t = a.tape();
  const Matrix& sv = s.value();
  if (sv.rows() != 1 || sv.cols() != 1) {
    throw Error(ErrorKind::dimension, "mul_scalar: scalar operand is " + shape_of(sv));
  }
  Matrix out = a.value() * sv(0, 0);
  return t.record(std::move(out), detail::any_grad({a, s}), [a, s](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a.id(), g * t.value(s.id())(0, 0));
    if (t.needs_grad(s)) {
      t.accumulate(s.id(), Matrix::Constant(1, 1, g.cwiseProduct(t.value(a.id())).sum()));
    }
  });
}

/// a / (s + eps) for a 1x1 node s.
inline Var div_scalar(Var a, Var s, double eps) {
  Tape& t = a.tape();
  const Matrix& sv = s.value();
  if (sv.rows() != 1 || sv.cols() != 1) {
    throw Error(ErrorKind::dimension, "div_scalar: scalar operand is " + shape_of(sv));
  }
  const double denom = sv(0, 0) + eps;
  Matrix out = a.value() / denom;
  return t.record(std::move(out), detail::any_grad({a, s}),
                  [a, s, denom](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a)) t.accumulate(a.id(), g / denom);
                    if (t.needs_grad(s)) {
                      const double d = -g.cwiseProduct(t.value(a.id())).sum() / (denom * denom);
                      t.accumulate(s.id(), Matrix::Constant(1, 1, d));
                    }
                  });
}

/// a + broadcast of the 1 x cols row vector b to every row.
inline Var add_row(Var a, Var b) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_shape(bv.rows() == 1 && bv.cols() == av.cols(), "add_row", av, bv);
  Matrix out = av.rowwise() + bv.row(0);
  return t.record(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a.id(), g);
    if (t.needs_grad(b)) t.accumulate(b.id(), g.colwise().sum());
  });
}

/// x * w + b with b broadcast over rows.
inline Var linear(Var x, Var w, Var b) {
  Tape& t = x.tape();
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  require_shape(xv.cols() == wv.rows(), "linear", xv, wv);
  require_shape(bv.rows() == 1 && bv.cols() == wv.cols(), "linear(bias)", wv, bv);
  Matrix out(xv.rows(), wv.cols());
  out.noalias() = xv * wv;
  out.rowwise() += bv.row(0);
  return t.record(std::move(out), detail::any_grad({x, w, b}),
                  [x, w, b](Tape& t, const Matrix& g) {
                    if (t.needs_grad(x)) t.accumulate(x.id(), g * t.value(w.id()).transpose());
                    if (t.needs_grad(w)) t.accumulate(w.id(), t.value(x.id()).transpose() * g);
                    if (t.needs_grad(b)) t.accumulate(b.id(), g.colwise().sum());
                  });
}

inline Var relu(Var a) {
  Tape& t = a.tape();
  Matrix out = a.value().cwiseMax(0.0);
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a.id());
    t.accumulate(a.id(), (av.array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

/// Row-wise softmax, stabilized by subtracting each row's max.
inline Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double m = av.row(i).maxCoeff();
    out.row(i) = (av.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  const std::size_t self = t.size();
  return t.record(std::move(out), t.needs_grad(a), [a, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    Matrix dot = g.cwiseProduct(y).rowwise().sum();
    Matrix d = y.cwiseProduct(g - dot.replicate(1, g.cols()));
    t.accumulate(a.id(), d);
  });
}

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Per row: (x - mean) / sqrt(var + 1e-5), then elementwise gain and shift.
inline Var layer_norm_rows(Var a, Var gain, Var shift) {
  Tape& t = a.tape();
  const Matrix& av = a.value();
  const Matrix& gv = gain.value();
  const Matrix& sv = shift.value();
  require_shape(gv.rows() == 1 && gv.cols() == av.cols(), "layer_norm_rows(gain)", av, gv);
  require_shape(sv.rows() == 1 && sv.cols() == av.cols(), "layer_norm_rows(shift)", av, sv);
  const Eigen::Index n = av.rows();
  const Eigen::Index c = av.cols();
  Matrix normed(n, c);
  Vector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = av.row(i).mean();
    const double var = (av.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    normed.row(i) = (av.row(i).array() - mean) * inv_std(i);
  }
  Matrix out = (normed.array().rowwise() * gv.row(0).array()).matrix();
  out.rowwise() += sv.row(0);
  return t.record(
      std::move(out), detail::any_grad({a, gain, shift}),
      [a, gain, shift, normed = std::move(normed), inv_std = std::move(inv_std)](
          Tape& t, const Matrix& g) {
        if (t.needs_grad(gain)) t.accumulate(gain.id(), g.cwiseProduct(normed).colwise().sum());
        if (t.needs_grad(shift)) t.accumulate(shift.id(), g.colwise().sum());
        if (!t.needs_grad(a)) return;
        const Matrix& gv = t.value(gain.id());
        Matrix dn = (g.array().rowwise() * gv.row(0).array()).matrix();
        const double c = static_cast<double>(dn.cols());
        Matrix d(dn.rows(), dn.cols());
        for (Eigen::Index i = 0; i < dn.rows(); ++i) {
          const double mean_dn = dn.row(i).sum() / c;
          const double mean_dn_x = dn.row(i).dot(normed.row(i)) / c;
          d.row(i) = inv_std(i) *
                     (dn.row(i).array() - mean_dn - normed.row(i).array() * mean_dn_x);
        }
        t.accumulate(a.id(), d);
      });
}

/// Frobenius norm as a 1x1 node. The gradient at the zero matrix is zero.
inline Var frobenius_norm(Var a) {
  Tape& t = a.tape();
  const double norm = a.value().norm();
  return t.record(Matrix::Constant(1, 1, norm), t.needs_grad(a),
                  [a, norm](Tape& t, const Matrix& g) {
                    if (norm == 0.0) return;
                    t.accumulate(a.id(), t.value(a.id()) * (g(0, 0) / norm));
                  });
}

inline Var sum(Var a) {
  Tape& t = a.tape();
  const Eigen::Index r = a.rows();
  const Eigen::Index c = a.cols();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), t.needs_grad(a),
                  [a, r, c](Tape& t, const Matrix& g) {
                    t.accumulate(a.id(), Matrix::Constant(r, c, g(0, 0)));
                  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorKind::dimension, "concat_cols: no inputs");
  Tape& t = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool grad = false;
  for (const Var& p : parts) {
    require_shape(p.rows() == rows, "concat_cols", parts.front().value(), p.value());
    cols += p.cols();
    grad = grad || t.needs_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.record(std::move(out), grad, [parts](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (const Var& p : parts) {
      const Eigen::Index c = t.value(p.id()).cols();
      if (t.needs_grad(p)) t.accumulate(p.id(), g.middleCols(at, c));
      at += c;
    }
  });
}

/// Row-major reshape into a single row.
inline Var flatten_row(Var a) {
  Tape& t = a.tape();
  const Eigen::Index r = a.rows();
  const Eigen::Index c = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), 1, r * c);
  return t.record(std::move(out), t.needs_grad(a), [a, r, c](Tape& t, const Matrix& g) {
    t.accumulate(a.id(), Eigen::Map<const Matrix>(g.data(), r, c));
  });
}

/// Row-wise two-layer network with ReLU in between.
inline Var ffn(Var x, Var w1, Var b1, Var w2, Var b2) {
  return linear(relu(linear(x, w1, b1)), w2, b2);
}

/// Mean over rows of -log softmax(logits)[label].
inline Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Tape& t = logits.tape();
  const Matrix& lv = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != lv.rows()) {
    throw Error(ErrorKind::dimension, "cross_entropy: " + std::to_string(labels.size()) +
                                          " labels for logits " + shape_of(lv));
  }
  Matrix probs(lv.rows(), lv.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < lv.rows(); ++i) {
    const std::size_t y = labels[static_cast<std::size_t>(i)];
    if (y >= static_cast<std::size_t>(lv.cols())) {
      throw Error(ErrorKind::validation, "cross_entropy: label " + std::to_string(y) +
                                             " out of range for " + std::to_string(lv.cols()) +
                                             " classes");
    }
    const double m = lv.row(i).maxCoeff();
    probs.row(i) = (lv.row(i).array() - m).exp();
    const double z = probs.row(i).sum();
    probs.row(i) /= z;
    loss += -(lv(i, static_cast<Eigen::Index>(y)) - m - std::log(z));
  }
  const double n = static_cast<double>(lv.rows());
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  return t.record(Matrix::Constant(1, 1, loss / n), t.needs_grad(logits),
                  [logits, probs = std::move(probs), ys = std::move(ys), n](Tape& t,
                                                                           const Matrix& g) {
                    Matrix d = probs;
                    for (std::size_t i = 0; i < ys.size(); ++i) {
                      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ys[i])) -= 1.0;
                    }
                    t.accumulate(logits.id(), d * (g(0, 0) / n));
                  });
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void adam_step(Parameter& p, double lr, const AdamConfig& cfg = {}) {
  p.steps += 1;
  p.first_moment = cfg.beta1 * p.first_moment + (1.0 - cfg.beta1) * p.grad;
  p.second_moment = cfg.beta2 * p.second_moment + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.steps));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.steps));
  p.value.array() -= lr * (p.first_moment.array() / c1) /
                     ((p.second_moment.array() / c2).sqrt() + cfg.epsilon);
}

inline constexpr double kFiniteDiffStep = 1e-5;

/// Central differences of a scalar function, one entry at a time.
inline Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                               double step = kFiniteDiffStep) {
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = f(probe);
    probe.data()[i] = orig - step;
    const double down = f(probe);
    probe.data()[i] = orig;
    grad.data()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// max |a - b| / max(|b|_inf, floor): the gradient-check error measure.
inline double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_relative_error", a, b);
  if (a.size() == 0) return 0.0;
  const double scale = std::max({b.cwiseAbs().maxCoeff(), a.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::parse, where + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace mst
