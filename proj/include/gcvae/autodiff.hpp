#pragma once

// Define-by-run reverse-mode differentiation over Tensor values.
//
// Every operation on a Var evaluates eagerly and appends one node to its
// Tape, so node ids are already in topological order. backward() walks the
// tape in reverse and accumulates adjoints into every node that depends on a
// leaf created with Tape::leaf().

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gcvae/errors.hpp"
#include "gcvae/tensor.hpp"

namespace gcvae {

class Tape;

/// Handle to a tape node. Cheap to copy; valid while its Tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor v) { return push(std::move(v), false, nullptr, "constant", {}); }

  /// Differentiable input (parameter or designated input).
  Var leaf(Tensor v, std::string name) { return push(std::move(v), true, nullptr, "leaf", std::move(name)); }

  /// Append the result of an op. `bw` is kept only when some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, const char* op, Backward bw) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw ContractViolation(std::string(op) + ": input belongs to another tape");
      needs = needs || nodes_[v.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(bw) : nullptr, op, {});
  }

  Var record(Tensor value, const std::vector<Var>& inputs, const char* op, Backward bw) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw ContractViolation(std::string(op) + ": input belongs to another tape");
      needs = needs || nodes_[v.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(bw) : nullptr, op, {});
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(const Var& v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }

  /// Add `g` into the adjoint of `v`. No-op for nodes that need no gradient.
  void accumulate(const Var& v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw ContractViolation(std::string("gradient shape ") + shape_str(g.shape()) + " != value shape " +
                              shape_str(n.value.shape()) + " at node #" + std::to_string(v.id) + " (" +
                              n.op + ")");
    }
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
      return;
    }
    double* dst = n.grad.data().data();
    const double* src = g.data().data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  }

  /// Reverse sweep from a scalar loss.
  void backward(const Var& loss) {
    if (loss.tape != this) throw ContractViolation("backward: loss belongs to another tape");
    if (nodes_[loss.id].value.size() != 1) {
      throw ContractViolation("backward: loss node must be scalar, got shape " +
                              shape_str(nodes_[loss.id].value.shape()));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    if (!nodes_[loss.id].requires_grad) return;
    accumulate(loss, Tensor(nodes_[loss.id].value.shape(), 1.0));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      const Tensor g = n.grad;
      n.backward(*this, g);
    }
  }

  /// Adjoint of `v` after backward(); zeros when nothing reached it.
  Tensor grad(const Var& v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Tensor(n.value.shape());
  }

  /// Gradients of every named leaf, keyed by name.
  std::map<std::string, Tensor> leaf_grads() const {
    std::map<std::string, Tensor> out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (std::string_view(n.op) == "leaf" && !n.name.empty()) {
        out[n.name] = n.has_grad ? n.grad : Tensor(n.value.shape());
      }
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    const char* op = "";
    std::string name;
  };

  Var push(Tensor v, bool requires_grad, Backward bw, const char* op, std::string name) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.backward = std::move(bw);
    n.op = op;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractViolation("use of unbound Var");
  return tape->value(id);
}

namespace detail {

inline void check_same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape != b.tape) throw ContractViolation(std::string(op) + ": operands on different tapes");
}

template <class Fwd, class Deriv>
Var unary(const Var& a, const char* op, Fwd fwd, Deriv deriv) {
  Tensor out = map(a.value(), fwd);
  return a.tape->record(std::move(out), {a}, op, [a, deriv](Tape& t, const Tensor& g) {
    const Tensor& x = a.value();
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * deriv(x[i]);
    t.accumulate(a, gx);
  });
}

}  // namespace detail

// ---- elementwise binary ---------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  detail::check_same_tape(a, b, "add");
  return a.tape->record(a.value() + b.value(), {a, b}, "add", [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, reduce_to(g, a.shape()));
    t.accumulate(b, reduce_to(g, b.shape()));
  });
}

inline Var operator-(const Var& a, const Var& b) {
  detail::check_same_tape(a, b, "sub");
  return a.tape->record(a.value() - b.value(), {a, b}, "sub", [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, reduce_to(g, a.shape()));
    t.accumulate(b, reduce_to(-g, b.shape()));
  });
}

inline Var operator*(const Var& a, const Var& b) {
  detail::check_same_tape(a, b, "mul");
  return a.tape->record(a.value() * b.value(), {a, b}, "mul", [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.accumulate(a, reduce_to(g * b.value(), a.shape()));
    if (t.requires_grad(b)) t.accumulate(b, reduce_to(g * a.value(), b.shape()));
  });
}

inline Var operator/(const Var& a, const Var& b) {
  detail::check_same_tape(a, b, "div");
  return a.tape->record(a.value() / b.value(), {a, b}, "div", [a, b](Tape& t, const Tensor& g) {
    const Tensor inv = reciprocal(b.value());
    if (t.requires_grad(a)) t.accumulate(a, reduce_to(g * inv, a.shape()));
    if (t.requires_grad(b)) t.accumulate(b, reduce_to(-(g * a.value() * square(inv)), b.shape()));
  });
}

inline Var operator+(const Var& a, double s) {
  return a.tape->record(a.value() + s, {a}, "add_scalar", [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}
inline Var operator-(const Var& a, double s) { return a + (-s); }
inline Var operator+(double s, const Var& a) { return a + s; }
inline Var operator*(const Var& a, double s) {
  return a.tape->record(a.value() * s, {a}, "scale", [a, s](Tape& t, const Tensor& g) { t.accumulate(a, g * s); });
}
inline Var operator*(double s, const Var& a) { return a * s; }
inline Var operator/(const Var& a, double s) { return a * (1.0 / s); }
inline Var operator-(const Var& a) { return a * -1.0; }
inline Var operator-(double s, const Var& a) { return (-a) + s; }
inline Var operator/(double s, const Var& a) {
  return a.tape->record(s / a.value(), {a}, "rdiv", [a, s](Tape& t, const Tensor& g) {
    t.accumulate(a, g * (-s) / square(a.value()));
  });
}

inline Var operator+(const Var& a, const Tensor& b) { return a + a.tape->constant(b); }
inline Var operator+(const Tensor& b, const Var& a) { return a.tape->constant(b) + a; }
inline Var operator-(const Var& a, const Tensor& b) { return a - a.tape->constant(b); }
inline Var operator-(const Tensor& b, const Var& a) { return a.tape->constant(b) - a; }
inline Var operator*(const Var& a, const Tensor& b) { return a * a.tape->constant(b); }
inline Var operator*(const Tensor& b, const Var& a) { return a.tape->constant(b) * a; }
inline Var operator/(const Var& a, const Tensor& b) { return a / a.tape->constant(b); }
inline Var operator/(const Tensor& b, const Var& a) { return a.tape->constant(b) / a; }

// ---- elementwise unary ----------------------------------------------------

inline Var exp(const Var& a) {
  Tensor out = exp(a.value());
  return a.tape->record(out, {a}, "exp", [a, out](Tape& t, const Tensor& g) { t.accumulate(a, g * out); });
}
inline Var log(const Var& a) {
  return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}
inline Var sqrt(const Var& a) {
  Tensor out = sqrt(a.value());
  return a.tape->record(out, {a}, "sqrt", [a, out](Tape& t, const Tensor& g) { t.accumulate(a, g * 0.5 / out); });
}
inline Var square(const Var& a) {
  return detail::unary(a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}
inline Var reciprocal(const Var& a) { return 1.0 / a; }
inline Var tanh(const Var& a) {
  Tensor out = tanh(a.value());
  return a.tape->record(out, {a}, "tanh", [a, out](Tape& t, const Tensor& g) {
    t.accumulate(a, g * (1.0 - square(out)));
  });
}
inline Var relu(const Var& a) {
  return detail::unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}
inline Var sigmoid(const Var& a) {
  Tensor out = sigmoid(a.value());
  return a.tape->record(out, {a}, "sigmoid", [a, out](Tape& t, const Tensor& g) {
    t.accumulate(a, g * out * (1.0 - out));
  });
}
inline Var softplus(const Var& a) {
  return detail::unary(a, "softplus", softplus_scalar, sigmoid_scalar);
}
inline Var clamp_min(const Var& a, double lo) {
  return detail::unary(a, "clamp_min", [lo](double x) { return x < lo ? lo : x; },
                       [lo](double x) { return x < lo ? 0.0 : 1.0; });
}
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

// ---- reductions and structure ---------------------------------------------

inline Var sum(const Var& a) {
  return a.tape->record(sum(a.value()), {a}, "sum", [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(a.shape(), g[0]));
  });
}

inline Var sum_axis(const Var& a, std::size_t axis) {
  const std::size_t n = a.shape().at(axis);
  return a.tape->record(sum_axis(a.value(), axis), {a}, "sum_axis", [a, axis, n](Tape& t, const Tensor& g) {
    t.accumulate(a, expand_axis(g, axis, n));
  });
}

inline Var expand_axis(const Var& a, std::size_t axis, std::size_t n) {
  return a.tape->record(expand_axis(a.value(), axis, n), {a}, "expand_axis", [a, axis](Tape& t, const Tensor& g) {
    t.accumulate(a, sum_axis(g, axis));
  });
}

inline Var mean_axis(const Var& a, std::size_t axis) {
  return sum_axis(a, axis) * (1.0 / static_cast<double>(a.shape().at(axis)));
}

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a.value().reshaped(std::move(s));
  return a.tape->record(std::move(out), {a}, "reshape", [a](Tape& t, const Tensor& g) {
    t.accumulate(a, g.reshaped(a.shape()));
  });
}

inline Var matmul(const Var& a, const Var& b) {
  detail::check_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ConfigError("matmul: shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) +
                      " at node #" + std::to_string(a.tape->size()));
  }
  return a.tape->record(matmul(av, bv), {a, b}, "matmul", [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor ga(a.shape());
      as_matrix(ga).noalias() = as_matrix(g) * as_matrix(b.value()).transpose();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb(b.shape());
      as_matrix(gb).noalias() = as_matrix(a.value()).transpose() * as_matrix(g);
      t.accumulate(b, gb);
    }
  });
}

inline Var slice_axis(const Var& a, std::size_t axis, std::size_t start, std::size_t len) {
  return a.tape->record(slice_axis(a.value(), axis, start, len), {a}, "slice",
                        [a, axis, start, len](Tape& t, const Tensor& g) {
                          std::size_t outer, n, inner;
                          detail::axis_split(a.shape(), axis, outer, n, inner);
                          Tensor ga(a.shape());
                          for (std::size_t o = 0; o < outer; ++o)
                            std::copy_n(g.data().data() + o * len * inner, len * inner,
                                        ga.data().data() + (o * n + start) * inner);
                          t.accumulate(a, ga);
                        });
}

inline Var concat_axis(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  std::vector<Tensor> vals;
  vals.reserve(parts.size());
  for (const Var& p : parts) vals.push_back(p.value());
  Tape* tape = parts.front().tape;
  return tape->record(concat_axis(vals, axis), parts, "concat", [parts, axis](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const std::size_t len = p.shape()[axis];
      if (t.requires_grad(p)) t.accumulate(p, slice_axis(g, axis, offset, len));
      offset += len;
    }
  });
}

inline Var softmax_last(const Var& a) {
  Tensor out = softmax_last(a.value());
  return a.tape->record(out, {a}, "softmax", [a, out](Tape& t, const Tensor& g) {
    const std::size_t k = out.shape().back();
    Tensor ga(out.shape());
    for (std::size_t r = 0; r < out.size() / k; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < k; ++i) dot += g[r * k + i] * out[r * k + i];
      for (std::size_t i = 0; i < k; ++i) ga[r * k + i] = out[r * k + i] * (g[r * k + i] - dot);
    }
    t.accumulate(a, ga);
  });
}

}  // namespace gcvae
