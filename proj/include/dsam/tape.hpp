#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsam/errors.hpp"
#include "dsam/tensor.hpp"

namespace dsam {

/// Trainable leaf value. The tape fills `grad` after a backward pass.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool requires_grad = true;
  std::string name;

  Parameter() = default;
  Parameter(Tensor v, std::string n = "", bool rg = true)
      : value(std::move(v)), grad(value.shape(), 0.0), requires_grad(rg), name(std::move(n)) {}
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr; }
  const Tensor& val() const;
  const Shape& shape() const { return val().shape(); }
};

/// Define-by-run reverse-mode tape over dense tensors. Nodes are stored in
/// creation order, which is a valid topological order, so a single reverse
/// sweep with deterministic += accumulation computes all adjoints.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var constant(double v) { return constant(Tensor::scalar(v)); }

  /// Registers a parameter as a differentiable leaf. After backward(), the
  /// parameter's grad slot holds d(output)/d(param). Watching the same
  /// parameter again returns the existing node, so every use on a tape
  /// shares one adjoint slot.
  Var watch(Parameter& p) {
    for (auto& [id, q] : watched_)
      if (q == &p) return Var{this, id};
    Var v = push(p.value, p.requires_grad, nullptr);
    if (p.requires_grad) watched_.push_back({v.id, &p});
    return v;
  }

  Var push(Tensor value, bool requires_grad, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(int id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Adjoint accumulator of a node (zeros until backward touches it).
  Tensor& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  void accumulate(int id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor& dst = grad(id);
    Tensor r = reduce_to(g, dst.shape());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += r[i];
  }

  /// Reverse pass from a scalar output; seeds the adjoint with 1 and writes
  /// gradients into every watched Parameter. A second call without
  /// re-recording the graph is an error.
  void backward(Var out) {
    if (out.tape != this) throw ShapeError("backward: var from another tape");
    if (nodes_[out.id].value.size() != 1)
      throw ShapeError("backward requires a scalar output, got shape " +
                       shape_str(nodes_[out.id].value.shape()));
    if (backward_done_)
      throw std::logic_error("backward called twice on the same tape");
    backward_done_ = true;
    run_reverse(out.id, Tensor(nodes_[out.id].value.shape(), 1.0));
    for (auto& [id, p] : watched_) p->grad = grad(id);
  }

  /// Vector-Jacobian product: one reverse sweep with an arbitrary seed.
  /// Clears adjoints first, so it can be called repeatedly (Jacobian rows).
  /// Watched parameters are not updated; read node grads via `grad_of`.
  Tensor vjp(Var out, const Tensor& seed, Var wrt) {
    if (seed.shape() != nodes_[out.id].value.shape())
      throw ShapeError("vjp: seed shape mismatch");
    for (auto& n : nodes_) n.grad = Tensor();
    run_reverse(out.id, seed);
    return grad(wrt.id);
  }

  Tensor grad_of(Var v) { return grad(v.id); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackFn back;
  };

  void run_reverse(int out_id, const Tensor& seed) {
    grad(out_id);  // ensure allocated
    Tensor& g = nodes_[out_id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    nodes_[out_id].requires_grad = true;  // output always participates
    for (int id = out_id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.back) continue;
      if (n.grad.size() == 0) continue;  // never reached from output
      n.back(*this, id);
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> watched_;
  bool backward_done_ = false;
};

inline const Tensor& Var::val() const { return tape->value(id); }

namespace detail {

inline void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ShapeError("operands live on different tapes");
}

inline bool any_grad(std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CEMap = Eigen::Map<const EMat>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  Tape& t = *a.tape;
  Tensor out = broadcast_binary(a.val(), b.val(), [](double x, double y) { return x + y; });
  bool rg = detail::any_grad({a, b});
  return t.push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  Tape& t = *a.tape;
  Tensor out = broadcast_binary(a.val(), b.val(), [](double x, double y) { return x - y; });
  bool rg = detail::any_grad({a, b});
  return t.push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a.id, g);
    Tensor neg(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    t.accumulate(b.id, neg);
  });
}

inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  Tape& t = *a.tape;
  Tensor out = broadcast_binary(a.val(), b.val(), [](double x, double y) { return x * y; });
  bool rg = detail::any_grad({a, b});
  return t.push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a.id, broadcast_binary(g, b.val(), [](double x, double y) { return x * y; }));
    t.accumulate(b.id, broadcast_binary(g, a.val(), [](double x, double y) { return x * y; }));
  });
}

inline Var div(Var a, Var b) {
  detail::check_same_tape(a, b);
  Tape& t = *a.tape;
  for (std::size_t i = 0; i < b.val().size(); ++i)
    if (b.val()[i] == 0.0) throw DomainError("div: division by zero");
  Tensor out = broadcast_binary(a.val(), b.val(), [](double x, double y) { return x / y; });
  bool rg = detail::any_grad({a, b});
  return t.push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a.id, broadcast_binary(g, b.val(), [](double x, double y) { return x / y; }));
    Tensor gb = broadcast_binary(g, broadcast_binary(a.val(), b.val(), [](double x, double y) {
                                   return -x / (y * y);
                                 }),
                                 [](double x, double y) { return x * y; });
    t.accumulate(b.id, gb);
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {
template <class F, class DF>
Var unary(Var a, F&& f, DF&& df_from_in_out) {
  Tape& t = *a.tape;
  Tensor out(a.val().shape());
  const Tensor& x = a.val();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  bool rg = t.requires_grad(a.id);
  return t.push(std::move(out), rg, [a, df = std::forward<DF>(df_from_in_out)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = a.val();
    const Tensor& y = t.value(self);
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * df(x[i], y[i]);
    t.accumulate(a.id, gx);
  });
}
}  // namespace detail

inline Var neg(Var a) {
  return detail::unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Var exp(Var a) {
  return detail::unary(a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Var log(Var a) {
  for (std::size_t i = 0; i < a.val().size(); ++i)
    if (a.val()[i] <= 0.0) throw DomainError("log: non-positive argument");
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline double softplus_val(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_val(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Var softplus(Var a) {
  return detail::unary(a, [](double x) { return softplus_val(x); },
                       [](double x, double) { return sigmoid_val(x); });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, [](double x) { return sigmoid_val(x); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var square(Var a) {
  return detail::unary(a, [](double x) { return x * x; },
                       [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(Var a) {
  for (std::size_t i = 0; i < a.val().size(); ++i)
    if (a.val()[i] < 0.0) throw DomainError("sqrt: negative argument");
  return detail::unary(a, [](double x) { return std::sqrt(x); },
                       [](double, double y) { return 0.5 / y; });
}

/// Identity in value; blocks all adjoint flow.
inline Var stop_gradient(Var a) { return a.tape->constant(a.val()); }

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()));
  std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out(Shape{m, n});
  {
    detail::CEMap ma(A.data(), m, k), mb(B.data(), k, n);
    detail::EMap mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  Tape& t = *a.tape;
  bool rg = detail::any_grad({a, b});
  return t.push(std::move(out), rg, [a, b, m, k, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    detail::CEMap mg(g.data(), m, n);
    detail::CEMap ma(a.val().data(), m, k), mb(b.val().data(), k, n);
    Tensor ga(Shape{m, k}), gb(Shape{k, n});
    detail::EMap mga(ga.data(), m, k), mgb(gb.data(), k, n);
    mga.noalias() = mg * mb.transpose();
    mgb.noalias() = ma.transpose() * mg;
    t.accumulate(a.id, ga);
    t.accumulate(b.id, gb);
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum(Var a) {
  const Tensor& x = a.val();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  Tape& t = *a.tape;
  return t.push(Tensor::scalar(s), t.requires_grad(a.id), [a](Tape& t, int self) {
    double g = t.grad(self)[0];
    t.accumulate(a.id, Tensor(a.val().shape(), g));
  });
}

inline Var mean(Var a) {
  const Tensor& x = a.val();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  double n = static_cast<double>(x.size());
  Tape& t = *a.tape;
  return t.push(Tensor::scalar(s / n), t.requires_grad(a.id), [a, n](Tape& t, int self) {
    double g = t.grad(self)[0] / n;
    t.accumulate(a.id, Tensor(a.val().shape(), g));
  });
}

namespace detail {
struct AxisSplit {
  std::size_t outer, len, inner;
};
inline AxisSplit axis_split(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("reduction axis out of range");
  AxisSplit sp{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}
inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  return out;
}
}  // namespace detail

inline Var sum(Var a, std::size_t axis) {
  const Tensor& x = a.val();
  auto sp = detail::axis_split(x.shape(), axis);
  Tensor out(detail::drop_axis(x.shape(), axis), 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += x[(o * sp.len + l) * sp.inner + i];
  Tape& t = *a.tape;
  return t.push(std::move(out), t.requires_grad(a.id), [a, sp](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor gx(a.val().shape());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i)
          gx[(o * sp.len + l) * sp.inner + i] = g[o * sp.inner + i];
    t.accumulate(a.id, gx);
  });
}

/// log(sum(exp(a))) along one axis, max-shifted for stability.
inline Var logsumexp(Var a, std::size_t axis) {
  const Tensor& x = a.val();
  auto sp = detail::axis_split(x.shape(), axis);
  Tensor out(detail::drop_axis(x.shape(), axis), 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double mx = -INFINITY;
      for (std::size_t l = 0; l < sp.len; ++l)
        mx = std::max(mx, x[(o * sp.len + l) * sp.inner + i]);
      double s = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l)
        s += std::exp(x[(o * sp.len + l) * sp.inner + i] - mx);
      out[o * sp.inner + i] = mx + std::log(s);
    }
  Tape& t = *a.tape;
  return t.push(std::move(out), t.requires_grad(a.id), [a, sp](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& x = a.val();
    Tensor gx(x.shape());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          std::size_t xi = (o * sp.len + l) * sp.inner + i;
          std::size_t yi = o * sp.inner + i;
          gx[xi] = g[yi] * std::exp(x[xi] - y[yi]);
        }
    t.accumulate(a.id, gx);
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var reshape(Var a, Shape shape) {
  const Tensor& x = a.val();
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: size mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tape& t = *a.tape;
  Tensor out(shape, x.vec_data());
  return t.push(std::move(out), t.requires_grad(a.id), [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a.id, Tensor(a.val().shape(), g.vec_data()));
  });
}

inline Var broadcast_to(Var a, Shape shape) {
  Tape& t = *a.tape;
  Tensor zeros(shape, 0.0);
  Tensor out = broadcast_binary(a.val(), zeros, [](double x, double) { return x; });
  return t.push(std::move(out), t.requires_grad(a.id), [a](Tape& t, int self) {
    t.accumulate(a.id, t.grad(self));
  });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = *parts[0].tape;
  Shape s0 = parts[0].val().shape();
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.val().shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) throw ShapeError("concat: shape mismatch off axis");
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  auto sp0 = detail::axis_split(os, axis);
  Tensor out(os);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& x = p.val();
    std::size_t len = x.shape()[axis];
    for (std::size_t o = 0; o < sp0.outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < sp0.inner; ++i)
          out[(o * total + off + l) * sp0.inner + i] = x[(o * len + l) * sp0.inner + i];
    off += len;
  }
  bool rg = false;
  for (const Var& p : parts) rg = rg || t.requires_grad(p.id);
  auto parts_copy = parts;
  return t.push(std::move(out), rg, [parts_copy, axis, sp0, total](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : parts_copy) {
      std::size_t len = p.val().shape()[axis];
      Tensor gp(p.val().shape());
      for (std::size_t o = 0; o < sp0.outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t i = 0; i < sp0.inner; ++i)
            gp[(o * len + l) * sp0.inner + i] = g[(o * total + off + l) * sp0.inner + i];
      t.accumulate(p.id, gp);
      off += len;
    }
  });
}

inline Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
  const Tensor& x = a.val();
  const Shape& s = x.shape();
  if (axis >= s.size() || start + len > s[axis]) throw ShapeError("slice: out of range");
  auto sp = detail::axis_split(s, axis);
  Shape os = s;
  os[axis] = len;
  Tensor out(os);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[(o * len + l) * sp.inner + i] = x[(o * sp.len + start + l) * sp.inner + i];
  Tape& t = *a.tape;
  return t.push(std::move(out), t.requires_grad(a.id), [a, sp, start, len](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor gx(a.val().shape(), 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i)
          gx[(o * sp.len + start + l) * sp.inner + i] = g[(o * len + l) * sp.inner + i];
    t.accumulate(a.id, gx);
  });
}

/// out[i, :] = M[idx[i], :]. Backward scatter-adds rows.
inline Var gather_rows(Var m, std::vector<std::size_t> idx) {
  const Tensor& M = m.val();
  if (M.ndim() != 2) throw ShapeError("gather_rows: expects a matrix");
  std::size_t d = M.dim(1);
  for (std::size_t k : idx)
    if (k >= M.dim(0)) throw ShapeError("gather_rows: index out of range");
  Tensor out(Shape{idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = M.at(idx[i], j);
  Tape& t = *m.tape;
  return t.push(std::move(out), t.requires_grad(m.id),
                [m, idx = std::move(idx), d](Tape& t, int self) {
                  const Tensor& g = t.grad(self);
                  Tensor gm(m.val().shape(), 0.0);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < d; ++j) gm.at(idx[i], j) += g.at(i, j);
                  t.accumulate(m.id, gm);
                });
}

// ---------------------------------------------------------------------------
// Operator sugar
// ---------------------------------------------------------------------------

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double c) { return add(a, a.tape->constant(c)); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return add(neg(a), a.tape->constant(c)); }
inline Var operator*(Var a, double c) { return mul(a, a.tape->constant(c)); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return div(a, a.tape->constant(c)); }
inline Var operator/(double c, Var a) { return div(a.tape->constant(c), a); }

}  // namespace dsam
