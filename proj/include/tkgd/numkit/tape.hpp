#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tkgd/errors.hpp"
#include "tkgd/numkit/tensor.hpp"

namespace tkgd {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in forward order; backward() walks
// them in exact reverse, so gradient accumulation order is fixed.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value) { return push(std::move(value), true, nullptr, "leaf"); }
  Var constant(Tensor value) { return push(std::move(value), false, nullptr, "const"); }

  // Records an op result. The node requires grad iff any parent does; the
  // backward closure is dropped otherwise.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward, const char* op) {
    require_admissible(value, op);
    bool needs = false;
    for (const Var& p : parents) {
      if (p.tape_ != this) throw Error(std::string(op) + ": operand belongs to another tape");
      needs = needs || nodes_[p.id_].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr, op);
  }

  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }
  const Tensor& value(const Var& v) const { return nodes_[v.id_].value; }

  const Tensor& grad(const Var& v) const {
    const Node& n = nodes_[v.id_];
    if (n.grad.empty() && !n.value.empty()) {
      zero_cache_ = Tensor(n.value.shape());
      return zero_cache_;
    }
    return n.grad;
  }

  // Gradient buffer of `v`, allocated on first use. Only valid during backward().
  Tensor& grad_buffer(const Var& v) {
    Node& n = nodes_[v.id_];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void accumulate(const Var& v, const Tensor& g) {
    if (!nodes_[v.id_].requires_grad) return;
    Tensor& buf = grad_buffer(v);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  void backward(const Var& root) {
    if (root.tape_ != this) throw Error("backward: root belongs to another tape");
    if (value(root).size() != 1)
      throw DimensionError("backward requires a scalar root, got " + shape_str(value(root).shape()));
    grad_buffer(root)[0] = 1.0;
    for (std::size_t id = root.id_ + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad;
    const char* op;
  };

  Var push(Tensor value, bool requires_grad, Backward backward, const char* op) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward), requires_grad, op});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  mutable Tensor zero_cache_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline const Tensor& Var::grad() const { return tape_->grad(*this); }

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
  const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* c = &C(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      const double* bp = &B(p, 0);
      for (std::size_t j = 0; j < n; ++j) c[j] += aip * bp[j];
    }
  }
  return a.tape().record(std::move(C), {a, b}, [a, b, m, k, n](Tape& tape, const Tensor& g) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (tape.requires_grad(a)) {
      Tensor& gA = tape.grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double* gi = &g(i, 0);
          const double* bp = &B(p, 0);
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
          gA(i, p) += acc;
        }
    }
    if (tape.requires_grad(b)) {
      Tensor& gB = tape.grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = &g(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A(i, p);
          if (aip == 0.0) continue;
          double* gb = &gB(p, 0);
          for (std::size_t j = 0; j < n; ++j) gb[j] += aip * gi[j];
        }
      }
    }
  }, "matmul");
}

enum class ElementwiseOp { add, sub, mul, div, tanh, exp, log, neg };

namespace detail {

// Index maps for same-rank broadcasting where any axis may be 1 on one side.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

inline Broadcast broadcast(const Shape& sa, const Shape& sb, const char* op) {
  auto fail = [&] {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sa) + " with " +
                         shape_str(sb));
  };
  if (sa.size() != sb.size()) fail();
  Broadcast bc;
  bc.out.resize(sa.size());
  for (std::size_t d = 0; d < sa.size(); ++d) {
    if (sa[d] == sb[d] || sb[d] == 1) bc.out[d] = sa[d];
    else if (sa[d] == 1) bc.out[d] = sb[d];
    else fail();
  }
  const std::size_t total = shape_size(bc.out);
  bc.a_index.resize(total);
  bc.b_index.resize(total);
  std::vector<std::size_t> idx(sa.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < sa.size(); ++d) {
      ia = ia * sa[d] + (sa[d] == 1 ? 0 : idx[d]);
      ib = ib * sb[d] + (sb[d] == 1 ? 0 : idx[d]);
    }
    bc.a_index[flat] = ia;
    bc.b_index[flat] = ib;
    for (std::size_t d = sa.size(); d-- > 0;) {
      if (++idx[d] < bc.out[d]) break;
      idx[d] = 0;
    }
  }
  return bc;
}

inline const char* op_name(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::add: return "add";
    case ElementwiseOp::sub: return "sub";
    case ElementwiseOp::mul: return "mul";
    case ElementwiseOp::div: return "div";
    case ElementwiseOp::tanh: return "tanh";
    case ElementwiseOp::exp: return "exp";
    case ElementwiseOp::log: return "log";
    case ElementwiseOp::neg: return "neg";
  }
  return "?";
}

inline Var binary(ElementwiseOp op, const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const char* name = op_name(op);
  if (op == ElementwiseOp::div)
    for (double v : B.data())
      if (v == 0.0) throw NumericError("div: zero divisor");

  if (A.shape() == B.shape()) {
    Tensor out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      switch (op) {
        case ElementwiseOp::add: out[i] = A[i] + B[i]; break;
        case ElementwiseOp::sub: out[i] = A[i] - B[i]; break;
        case ElementwiseOp::mul: out[i] = A[i] * B[i]; break;
        default: out[i] = A[i] / B[i]; break;
      }
    }
    return a.tape().record(std::move(out), {a, b}, [op, a, b](Tape& tape, const Tensor& g) {
      const Tensor& A = a.value();
      const Tensor& B = b.value();
      const bool ga = tape.requires_grad(a), gb = tape.requires_grad(b);
      Tensor* GA = ga ? &tape.grad_buffer(a) : nullptr;
      Tensor* GB = gb ? &tape.grad_buffer(b) : nullptr;
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (op) {
          case ElementwiseOp::add:
            if (ga) (*GA)[i] += g[i];
            if (gb) (*GB)[i] += g[i];
            break;
          case ElementwiseOp::sub:
            if (ga) (*GA)[i] += g[i];
            if (gb) (*GB)[i] -= g[i];
            break;
          case ElementwiseOp::mul:
            if (ga) (*GA)[i] += g[i] * B[i];
            if (gb) (*GB)[i] += g[i] * A[i];
            break;
          default:
            if (ga) (*GA)[i] += g[i] / B[i];
            if (gb) (*GB)[i] -= g[i] * A[i] / (B[i] * B[i]);
            break;
        }
      }
    }, name);
  }

  auto bc = std::make_shared<Broadcast>(broadcast(A.shape(), B.shape(), name));
  Tensor out(bc->out);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = A[bc->a_index[i]], y = B[bc->b_index[i]];
    switch (op) {
      case ElementwiseOp::add: out[i] = x + y; break;
      case ElementwiseOp::sub: out[i] = x - y; break;
      case ElementwiseOp::mul: out[i] = x * y; break;
      default: out[i] = x / y; break;
    }
  }
  return a.tape().record(std::move(out), {a, b}, [op, a, b, bc](Tape& tape, const Tensor& g) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const bool ga = tape.requires_grad(a), gb = tape.requires_grad(b);
    Tensor* GA = ga ? &tape.grad_buffer(a) : nullptr;
    Tensor* GB = gb ? &tape.grad_buffer(b) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ia = bc->a_index[i], ib = bc->b_index[i];
      switch (op) {
        case ElementwiseOp::add:
          if (ga) (*GA)[ia] += g[i];
          if (gb) (*GB)[ib] += g[i];
          break;
        case ElementwiseOp::sub:
          if (ga) (*GA)[ia] += g[i];
          if (gb) (*GB)[ib] -= g[i];
          break;
        case ElementwiseOp::mul:
          if (ga) (*GA)[ia] += g[i] * B[ib];
          if (gb) (*GB)[ib] += g[i] * A[ia];
          break;
        default:
          if (ga) (*GA)[ia] += g[i] / B[ib];
          if (gb) (*GB)[ib] -= g[i] * A[ia] / (B[ib] * B[ib]);
          break;
      }
    }
  }, name);
}

inline Var unary(ElementwiseOp op, const Var& a) {
  const Tensor& A = a.value();
  const char* name = op_name(op);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double x = A[i];
    switch (op) {
      case ElementwiseOp::tanh: out[i] = std::tanh(x); break;
      case ElementwiseOp::exp: out[i] = std::exp(x); break;
      case ElementwiseOp::log:
        if (!(x > 0.0)) throw NumericError("log: non-positive argument " + std::to_string(x));
        out[i] = std::log(x);
        break;
      default: out[i] = -x; break;
    }
  }
  return a.tape().record(std::move(out), {a}, [op, a](Tape& tape, const Tensor& g) {
    const Tensor& A = a.value();
    Tensor& G = tape.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (op) {
        case ElementwiseOp::tanh: {
          const double t = std::tanh(A[i]);
          G[i] += g[i] * (1.0 - t * t);
          break;
        }
        case ElementwiseOp::exp: G[i] += g[i] * std::exp(A[i]); break;
        case ElementwiseOp::log: G[i] += g[i] / A[i]; break;
        default: G[i] -= g[i]; break;
      }
    }
  }, name);
}

}  // namespace detail

inline Var elementwise(ElementwiseOp op, const Var& a, const Var& b) {
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::sub:
    case ElementwiseOp::mul:
    case ElementwiseOp::div: return detail::binary(op, a, b);
    default: throw Error(std::string(detail::op_name(op)) + " is unary");
  }
}

inline Var elementwise(ElementwiseOp op, const Var& a) {
  switch (op) {
    case ElementwiseOp::tanh:
    case ElementwiseOp::exp:
    case ElementwiseOp::log:
    case ElementwiseOp::neg: return detail::unary(op, a);
    default: throw Error(std::string(detail::op_name(op)) + " is binary");
  }
}

inline Var operator+(const Var& a, const Var& b) { return elementwise(ElementwiseOp::add, a, b); }
inline Var operator-(const Var& a, const Var& b) { return elementwise(ElementwiseOp::sub, a, b); }
inline Var operator*(const Var& a, const Var& b) { return elementwise(ElementwiseOp::mul, a, b); }
inline Var operator/(const Var& a, const Var& b) { return elementwise(ElementwiseOp::div, a, b); }
inline Var operator-(const Var& a) { return elementwise(ElementwiseOp::neg, a); }
inline Var tanh(const Var& a) { return elementwise(ElementwiseOp::tanh, a); }
inline Var exp(const Var& a) { return elementwise(ElementwiseOp::exp, a); }
inline Var log(const Var& a) { return elementwise(ElementwiseOp::log, a); }

// a * c for a constant c.
inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return a.tape().record(std::move(out), {a}, [a, c](Tape& tape, const Tensor& g) {
    Tensor& G = tape.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) G[i] += c * g[i];
  }, "scale");
}

// a + c for a constant c.
inline Var shift(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  return a.tape().record(std::move(out), {a}, [a](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
  }, "shift");
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& tape, const Tensor& g) {
    Tensor& G = tape.grad_buffer(a);
    for (double& v : G.data()) v += g[0];
  }, "sum");
}

inline Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
  }, "reshape");
}

inline Var transpose(const Var& a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(A.shape()));
  const std::size_t m = A.shape()[0], n = A.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = A(i, j);
  return a.tape().record(std::move(out), {a}, [a, m, n](Tape& tape, const Tensor& g) {
    Tensor& G = tape.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) G(i, j) += g(j, i);
  }, "transpose");
}

namespace detail {

inline std::pair<std::size_t, std::size_t> as_rows(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  throw DimensionError(std::string(op) + " expects rank 1 or 2, got " + shape_str(t.shape()));
}

}  // namespace detail

// Row-wise softmax with row-max subtraction. Entries equal to -inf get
// probability exactly 0.
inline Var softmax_rows(const Var& a) {
  const Tensor& A = a.value();
  const auto [m, n] = detail::as_rows(A, "softmax_rows");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = A.data().data() + i * n;
    double* y = out.data().data() + i * n;
    const double mx = *std::max_element(x, x + n);
    if (mx == -INFINITY) throw NumericError("softmax_rows: row has no finite entry");
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  Tensor y = out;
  const std::size_t rows = m, cols = n;
  return a.tape().record(std::move(out), {a}, [a, y = std::move(y), rows, cols](Tape& tape, const Tensor& g) {
    Tensor& G = tape.grad_buffer(a);
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j)
        G[i * cols + j] += y[i * cols + j] * (g[i * cols + j] - dot);
    }
  }, "softmax_rows");
}

// Row-wise log-softmax. -inf entries stay -inf and receive no gradient.
inline Var log_softmax_rows(const Var& a) {
  const Tensor& A = a.value();
  const auto [m, n] = detail::as_rows(A, "log_softmax_rows");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = A.data().data() + i * n;
    double* y = out.data().data() + i * n;
    const double mx = *std::max_element(x, x + n);
    if (mx == -INFINITY) throw NumericError("log_softmax_rows: row has no finite entry");
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  const std::size_t rows = m, cols = n;
  return a.tape().record(std::move(out), {a}, [a, rows, cols](Tape& tape, const Tensor& g) {
    const Tensor& A = a.value();
    Tensor& G = tape.grad_buffer(a);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* x = A.data().data() + i * cols;
      const double mx = *std::max_element(x, x + cols);
      double z = 0.0, gs = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        z += std::exp(x[j] - mx);
        gs += g[i * cols + j];
      }
      for (std::size_t j = 0; j < cols; ++j) {
        const double p = std::exp(x[j] - mx) / z;
        G[i * cols + j] += g[i * cols + j] - p * gs;
      }
    }
  }, "log_softmax_rows");
}

// Flat gather: out[k] = a.data[indices[k]]. Gradients scatter-add back.
inline Var take(const Var& a, std::vector<std::size_t> indices) {
  const Tensor& A = a.value();
  Tensor out(Shape{indices.size()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= A.size()) throw DimensionError("take: index out of range");
    out[k] = A[indices[k]];
  }
  return a.tape().record(std::move(out), {a}, [a, idx = std::move(indices)](Tape& tape, const Tensor& g) {
    Tensor& G = tape.grad_buffer(a);
    for (std::size_t k = 0; k < idx.size(); ++k) G[idx[k]] += g[k];
  }, "take");
}

// out[i] = a(i, cols[i]).
inline Var pick(const Var& a, std::span<const std::size_t> cols) {
  const Tensor& A = a.value();
  if (A.rank() != 2 || A.shape()[0] != cols.size())
    throw DimensionError("pick: need one column per row of " + shape_str(A.shape()));
  std::vector<std::size_t> flat(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= A.shape()[1]) throw DimensionError("pick: column out of range");
    flat[i] = i * A.shape()[1] + cols[i];
  }
  return take(a, std::move(flat));
}

// Rows of `table` selected by `ids` (embedding lookup).
inline Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  const Tensor& T = table.value();
  if (T.rank() != 2) throw DimensionError("gather_rows expects a matrix table");
  const std::size_t d = T.shape()[1];
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.shape()[0])
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " out of range " +
                           std::to_string(T.shape()[0]));
    std::copy_n(&T(ids[i], 0), d, &out(i, 0));
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table}, [table, rows = std::move(rows), d](Tape& tape, const Tensor& g) {
    Tensor& G = tape.grad_buffer(table);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) G(rows[i], j) += g(i, j);
  }, "gather_rows");
}

inline Var concat_cols(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[0] != B.shape()[0])
    throw DimensionError("concat_cols: incompatible shapes " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
  const std::size_t m = A.shape()[0], p = A.shape()[1], q = B.shape()[1];
  Tensor out({m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(&A(i, 0), p, &out(i, 0));
    std::copy_n(&B(i, 0), q, &out(i, p));
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, m, p, q](Tape& tape, const Tensor& g) {
    if (tape.requires_grad(a)) {
      Tensor& G = tape.grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) G(i, j) += g(i, j);
    }
    if (tape.requires_grad(b)) {
      Tensor& G = tape.grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) G(i, j) += g(i, p + j);
    }
  }, "concat_cols");
}

// Each row divided by its L2 norm (norm floored at 1e-12).
inline Var l2_normalize_rows(const Var& a) {
  const Tensor& A = a.value();
  const auto [m, n] = detail::as_rows(A, "l2_normalize_rows");
  Tensor out(A.shape());
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += A[i * n + j] * A[i * n + j];
    norms[i] = std::max(std::sqrt(s), 1e-12);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] / norms[i];
  }
  Tensor y = out;
  const std::size_t rows = m, cols = n;
  return a.tape().record(std::move(out), {a}, [a, y = std::move(y), norms = std::move(norms), rows, cols](Tape& tape, const Tensor& g) {
    Tensor& G = tape.grad_buffer(a);
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += y[i * cols + j] * g[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j)
        G[i * cols + j] += (g[i * cols + j] - y[i * cols + j] * dot) / norms[i];
    }
  }, "l2_normalize_rows");
}

}  // namespace tkgd
