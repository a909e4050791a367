#pragma once

// Dense row-major matrices with a tape-based reverse-mode autodiff engine.
//
// Every primitive records a node on a Tape. Nodes are appended in evaluation
// order, so ids are already a topological order and backward is a single
// reverse sweep. Parameters enter the tape as leaves; Tape::backward adds the
// leaf gradients into Param::grad.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "docrec/error.hpp"
#include "docrec/rng.hpp"

namespace docrec {

class Tensor {
public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      fail(ErrorKind::shape, "tensor: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(rows, cols));
  }

  static Tensor row(std::initializer_list<double> values) {
    return Tensor(1, values.size(), std::vector<double>(values));
  }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row_span(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols_, cols_);
  }

  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape() const { return shape_string(rows_, cols_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    assert(same_shape(o));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

// Sparse row: (column, value) pairs, sorted by column with no duplicates.
using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

// out += a * b, or with transposes. Loop orders keep the inner loop contiguous.
inline void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* br = b.data().data() + p * b.cols();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

// out += a * b^T
inline void gemm_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data().data() + i * a.cols();
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.data().data() + j * b.cols();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out(i, j) += s;
    }
  }
}

// out += a^T * b
inline void gemm_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t r = 0; r < n; ++r) {
    const double* br = b.data().data() + r * b.cols();
    for (std::size_t i = 0; i < k; ++i) {
      const double av = a(r, i);
      if (av == 0.0) continue;
      double* o = &out(i, 0);
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

}  // namespace detail

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // An inference tape records no backward closures; parameters enter as
  // constants.
  enum Mode { record_grad, no_grad };

  explicit Tape(Mode mode = record_grad) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, false); }

  // The leaf refers to p.value without copying; p must outlive the tape and
  // stay unmodified while the tape is in use.
  Var param(const Param& p) {
    Var v = push(Tensor(), {}, mode_ == record_grad);
    nodes_[v.id].external = &p.value;
    nodes_[v.id].param = &p;
    return v;
  }

  // Appends a node computed from `inputs`. `back` reads this node's grad and
  // accumulates into the inputs via grad_of().
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn back) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(back));
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn back) {
    bool needs = false;
    for (const Var& in : inputs) {
      assert(in.tape == this && in.id < nodes_.size());
      needs = needs || nodes_[in.id].needs_grad;
    }
    return push(std::move(value), needs ? std::move(back) : BackwardFn{}, needs);
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const Tensor& value(Var v) const { return value(v.id); }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient buffer of a node, allocated on first use.
  Tensor& grad_of(std::size_t id) {
    Node& n = nodes_[id];
    const Tensor& v = value(id);
    if (n.grad.size() != v.size() || n.grad.empty()) n.grad = Tensor(v.rows(), v.cols());
    return n.grad;
  }
  Tensor& grad_of(Var v) { return grad_of(v.id); }

  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep from a scalar loss; every leaf gradient for a Param listed in
  // `params` is added (+=) into that Param's grad.
  void backward(Var loss, std::span<Param* const> params) {
    const Tensor& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
      fail(ErrorKind::shape, "backward: loss must be 1x1, got " + lv.shape());
    for (Node& n : nodes_) n.grad = Tensor();
    grad_of(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.back || n.grad.empty()) continue;
      n.back(*this, i);
    }
    for (const Node& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      for (Param* p : params)
        if (n.param == p) p->grad += n.grad;
    }
  }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn back;
    const Tensor* external = nullptr;
    const Param* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Tensor value, BackwardFn back, bool needs) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(back), nullptr, nullptr, needs});
    return Var{this, nodes_.size() - 1};
  }

  Mode mode_;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------
// Primitives

inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows())
    fail(ErrorKind::shape, "matmul: shape mismatch " + A.shape() + " vs " + B.shape());
  Tensor out(A.rows(), B.cols());
  detail::gemm_nn(A, B, out);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs_grad(a)) detail::gemm_nt(g, t.value(b), t.grad_of(a));
    if (t.needs_grad(b)) detail::gemm_tn(t.value(a), g, t.grad_of(b));
  });
}

// a * b^T without materializing the transpose.
inline Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols())
    fail(ErrorKind::shape, "matmul_nt: shape mismatch " + A.shape() + " vs " + B.shape());
  Tensor out(A.rows(), B.rows());
  detail::gemm_nt(A, B, out);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    // d/dA = G * B ; d/dB = G^T * A
    if (t.needs_grad(a)) detail::gemm_nn(g, t.value(b), t.grad_of(a));
    if (t.needs_grad(b)) detail::gemm_tn(g, t.value(a), t.grad_of(b));
  });
}

inline Var transpose(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.cols(), A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(j, i) = A(i, j);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_of(a);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(j, i);
  });
}

// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
inline Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool broadcast = B.rows() == 1 && A.rows() != 1 && B.cols() == A.cols();
  if (!broadcast) detail::require_same_shape("add", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows(); ++i) {
    auto o = out.row_span(i);
    auto br = B.row_span(broadcast ? 0 : i);
    for (std::size_t j = 0; j < A.cols(); ++j) o[j] += br[j];
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, broadcast](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs_grad(a)) t.grad_of(a) += g;
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto gr = g.row_span(i);
        auto o = gb.row_span(broadcast ? 0 : i);
        for (std::size_t j = 0; j < g.cols(); ++j) o[j] += gr[j];
      }
    }
  });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& x : out.data()) x *= c;
  return a.tape->record(std::move(out), {a}, [a, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

inline Var elementwise_mul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_same_shape("elementwise_mul", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_of(a);
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_of(b);
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var row_softmax(Var a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row_span(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& x : r) {
      x = std::exp(x - mx);
      z += x;
    }
    for (double& x : r) x /= z;
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_of(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      auto yr = y.row_span(i);
      auto gr = g.row_span(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
      auto o = ga.row_span(i);
      for (std::size_t j = 0; j < yr.size(); ++j) o[j] += yr[j] * (gr[j] - dot);
    }
  });
}

inline Var tanh(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) x = std::tanh(x);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_of(a);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) x = sigmoid(x);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_of(a);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::shape, "concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows)
      fail(ErrorKind::shape, "concat_cols: shape mismatch " + parts[0].value().shape() + " vs " +
                                 p.value().shape());
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(v.row_span(i).begin(), v.row_span(i).end(), out.row_span(i).begin() + off);
    off += v.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts, [ins](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t c = t.value(p).cols();
      if (t.needs_grad(p)) {
        Tensor& gp = t.grad_of(p);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, off + j);
      }
      off += c;
    }
  });
}

inline Var concat_cols(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(std::span<const Var>(parts));
}

// Stacks inputs vertically.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::shape, "concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols)
      fail(ErrorKind::shape, "concat_rows: shape mismatch " + parts[0].value().shape() + " vs " +
                                 p.value().shape());
    rows += p.rows();
  }
  Tensor out(rows, cols);
  auto dst = out.data().begin();
  for (const Var& p : parts) dst = std::copy(p.value().data().begin(), p.value().data().end(), dst);
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts, [ins](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t n = t.value(p).size();
      if (t.needs_grad(p)) {
        Tensor& gp = t.grad_of(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

inline Var mean_rows(Var a) {
  const Tensor& A = a.value();
  if (A.rows() == 0) fail(ErrorKind::shape, "mean_rows: empty input " + A.shape());
  Tensor out(1, A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(0, j) += A(i, j);
  const double inv = 1.0 / static_cast<double>(A.rows());
  for (double& x : out.data()) x *= inv;
  return a.tape->record(std::move(out), {a}, [a, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_of(a);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += inv * g(0, j);
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (double& x : t.grad_of(a).data()) x += g;
  });
}

// Row selection with repetition allowed.
inline Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor& A = a.value();
  Tensor out(rows.size(), A.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= A.rows())
      fail(ErrorKind::shape, "gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                                 A.shape());
    std::copy(A.row_span(rows[i]).begin(), A.row_span(rows[i]).end(), out.row_span(i).begin());
  }
  return a.tape->record(std::move(out), {a}, [a, rows = std::move(rows)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_of(a);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = g.row_span(i);
      auto dst = ga.row_span(rows[i]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

// X * W for a sparse X given as rows of (column, value) pairs.
inline Var sparse_matmul(std::vector<SparseRow> x, Var w) {
  const Tensor& W = w.value();
  Tensor out(x.size(), W.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto o = out.row_span(i);
    for (auto [c, v] : x[i]) {
      if (c >= W.rows())
        fail(ErrorKind::shape, "sparse_matmul: column " + std::to_string(c) +
                                   " out of range for " + W.shape());
      auto wr = W.row_span(c);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += v * wr[j];
    }
  }
  return w.tape->record(std::move(out), {w}, [w, x = std::move(x)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& gw = t.grad_of(w);
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto gr = g.row_span(i);
      for (auto [c, v] : x[i]) {
        auto dst = gw.row_span(c);
        for (std::size_t j = 0; j < gr.size(); ++j) dst[j] += v * gr[j];
      }
    }
  });
}

inline constexpr double bce_clamp = 1e-12;

// -sum(lambda * y * ln s + (1 - y) * ln(1 - s)) over a column of scores.
inline Var weighted_bce(Var scores, std::vector<double> labels, double lambda) {
  const Tensor& S = scores.value();
  if (S.size() != labels.size())
    fail(ErrorKind::shape, "weighted_bce: " + std::to_string(labels.size()) +
                               " labels for scores " + S.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < S.size(); ++i) {
    const double s = std::clamp(S[i], bce_clamp, 1.0 - bce_clamp);
    loss -= lambda * labels[i] * std::log(s) + (1.0 - labels[i]) * std::log(1.0 - s);
  }
  return scores.tape->record(
      Tensor::scalar(loss), {scores},
      [scores, labels = std::move(labels), lambda](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        const Tensor& S = t.value(scores);
        Tensor& gs = t.grad_of(scores);
        for (std::size_t i = 0; i < S.size(); ++i) {
          const double s = std::clamp(S[i], bce_clamp, 1.0 - bce_clamp);
          gs[i] += g * (-lambda * labels[i] / s + (1.0 - labels[i]) / (1.0 - s));
        }
      });
}

// ---------------------------------------------------------------------------
// Initialization and optimization

inline void xavier_uniform(Tensor& t, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
  for (double& x : t.data()) x = rng.uniform(-bound, bound);
}

struct AdamConfig {
  double lr = 0.008;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

inline AdamMoments zero_moments(std::span<Param* const> params) {
  AdamMoments mo;
  for (const Param* p : params) {
    mo.m.emplace_back(p->value.rows(), p->value.cols());
    mo.v.emplace_back(p->value.rows(), p->value.cols());
  }
  return mo;
}

// One bias-corrected Adam update at step t (t >= 1); gradients are zeroed after.
inline void adam_step(std::span<Param* const> params, AdamMoments& moments, const AdamConfig& cfg,
                      long t) {
  assert(t >= 1 && moments.m.size() == params.size());
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    Tensor& m = moments.m[k];
    Tensor& v = moments.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      if (m[i] == 0.0) continue;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p.value[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    p.zero_grad();
  }
}

class Adam {
public:
  Adam(std::vector<Param*> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg), moments_(zero_moments(params_)) {}

  void step() { adam_step(params_, moments_, cfg_, ++t_); }
  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }
  long steps() const noexcept { return t_; }
  const std::vector<Param*>& params() const noexcept { return params_; }

private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  AdamMoments moments_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

using LossFn = std::function<Var(Tape&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

// Compares backward() against central differences on every coordinate of
// every listed parameter. Parameter values are restored afterwards; grads hold
// the analytic gradient on return.
inline GradCheckResult grad_check(const LossFn& loss_fn, std::span<Param* const> params,
                                  double eps = 1e-4) {
  if (!(eps > 0.0 && eps <= 1e-2))
    fail(ErrorKind::config, "grad_check: eps must lie in (0, 1e-2], got " + std::to_string(eps));
  for (Param* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss, params);
  }
  auto eval = [&](const std::string& where) {
    Tape tape;
    const double f = loss_fn(tape).value()[0];
    if (!std::isfinite(f)) fail(ErrorKind::training, "grad_check: non-finite loss at " + where);
    return f;
  };
  GradCheckResult res;
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      const std::string where = p->name + "[" + std::to_string(i) + "]";
      p->value[i] = orig + eps;
      const double fp = eval(where);
      p->value[i] = orig - eps;
      const double fm = eval(where);
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double err = relative_error(analytic, numeric);
      ++res.coordinates;
      if (err > res.max_rel_error || res.worst_param.empty()) {
        res.max_rel_error = err;
        res.worst_param = p->name;
        res.worst_index = i;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace docrec
