#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A Tape records every primitive applied during a forward pass. Nodes are
// appended in evaluation order, so the recording is already a topological
// order and reverse accumulation is a single backwards sweep. Parameters are
// referenced, never copied; gradients land in Parameter::gradient of the
// ParameterSet passed to backward() and accumulate until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "clarify/errors.hpp"
#include "clarify/rng.hpp"
#include "clarify/tensor.hpp"

namespace clarify {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor gradient;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), gradient(Tensor::zeros(value.shape())) {}

  void zero_grad() { gradient.fill(0.0); }
};

// Non-owning, ordered view over the parameters of a model.
class ParameterSet {
 public:
  ParameterSet() = default;

  void add(Parameter& p) {
    if (p.value.shape() != p.gradient.shape()) {
      throw DimensionError("parameter '" + p.name + "' gradient shape differs from value shape");
    }
    if (index_.count(p.name)) throw ValidationError("duplicate parameter name '" + p.name + "'");
    index_.emplace(p.name, items_.size());
    items_.push_back(&p);
  }

  void extend(const ParameterSet& other) {
    for (Parameter* p : other.items_) add(*p);
  }

  std::size_t size() const { return items_.size(); }
  Parameter& operator[](std::size_t i) const { return *items_[i]; }

  Parameter* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second];
  }

  bool contains(const Parameter* p) const {
    return std::find(items_.begin(), items_.end(), p) != items_.end();
  }

  void zero_grad() const {
    for (Parameter* p : items_) p->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (Parameter* p : items_) n += p->value.size();
    return n;
  }

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<Parameter*> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

enum class Mode { Train, Infer };

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var self, const Tensor& out_grad)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, false, {}});
    return Var{this, nodes_.size() - 1};
  }

  // Binding the same parameter twice yields the same node, so its gradient
  // is gathered in one slot however often it is used.
  Var param(const Parameter& p) {
    auto [it, fresh] = bound_.try_emplace(&p, nodes_.size());
    if (fresh) nodes_.push_back(Node{Tensor{}, &p, true, {}});
    return Var{this, it->second};
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      check(v);
      needs = needs || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), nullptr, needs, needs ? std::move(backward) : BackwardFn{}});
    return Var{this, nodes_.size() - 1};
  }

  Var record_many(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      check(v);
      needs = needs || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), nullptr, needs, needs ? std::move(backward) : BackwardFn{}});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
  }

  bool requires_grad(Var v) const {
    check(v);
    return nodes_[v.id].requires_grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Gradient slot of an input during reverse accumulation; nullptr when the
  // input does not lead to any parameter.
  Tensor* grad_slot(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (!grad_live_[v.id]) {
      grads_[v.id] = Tensor::zeros(value(v).shape());
      grad_live_[v.id] = 1;
    }
    return &grads_[v.id];
  }

  void backward(Var loss, const ParameterSet& params) {
    if (loss.tape != this || loss.id >= nodes_.size()) {
      throw GraphError("backward called on a node not recorded by this tape");
    }
    if (value(loss).size() != 1) {
      throw GraphError("backward requires a scalar loss, got " + shape_string(value(loss).shape()));
    }
    grads_.assign(nodes_.size(), Tensor{});
    grad_live_.assign(nodes_.size(), 0);
    if (!nodes_[loss.id].requires_grad) return;
    *grad_slot(loss) = Tensor::scalar(1.0);

    std::unordered_map<const Parameter*, Parameter*> sinks;
    for (Parameter* p : params) sinks.emplace(p, p);

    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (!grad_live_[i]) continue;
      Node& n = nodes_[i];
      if (n.param) {
        auto it = sinks.find(n.param);
        if (it != sinks.end()) it->second->gradient += grads_[i];
      } else if (n.backward) {
        const Tensor g = std::move(grads_[i]);
        n.backward(*this, Var{this, i}, g);
      }
    }
    grads_.clear();
    grad_live_.clear();
  }

  void check(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw GraphError("variable was not recorded by this tape");
  }

 private:
  struct Node {
    Tensor value;
    const Parameter* param;
    bool requires_grad;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_live_;
};

// ---------------------------------------------------------------------------
// Primitives

namespace detail {

inline Tape& tape_of(Var v) {
  if (!v.tape) throw GraphError("uninitialised variable");
  return *v.tape;
}

inline void same_size(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  detail::same_size(av, bv, "add");
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, Var, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) *ga += g;
    if (Tensor* gb = tp.grad_slot(b)) *gb += g;
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  detail::same_size(av, bv, "sub");
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, Var, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) *ga += g;
    if (Tensor* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  detail::same_size(av, bv, "mul");
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, Var, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * av[i];
  return t.record(std::move(out), {a}, [a, c](Tape& tp, Var, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
    }
  });
}

inline Var add_scalar(Var a, double c) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return t.record(std::move(out), {a}, [a](Tape& tp, Var, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) *ga += g;
  });
}

// a: [m x k] or a row vector [k]; b: [k x n]. A row vector input yields [n].
inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const bool row = av.rank() == 1;
  if (bv.rank() != 2 || av.rank() > 2) {
    throw DimensionError("matmul: unsupported ranks " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t m = row ? 1 : av.dim(0);
  const std::size_t k = row ? av.dim(0) : av.dim(1);
  const std::size_t n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros(row ? Shape{n} : Shape{m, n});
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.mutable_data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tp, Var, const Tensor& g) {
    const double* A = tp.value(a).data().data();
    const double* B = tp.value(b).data().data();
    const double* G = g.data().data();
    if (Tensor* ga = tp.grad_slot(a)) {
      double* GA = ga->mutable_data().data();
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          const double* grow = G + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          GA[i * k + p] += s;
        }
      }
    }
    if (Tensor* gb = tp.grad_slot(b)) {
      double* GB = gb->mutable_data().data();
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = GB + p * n;
          const double* grow = G + i * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}


namespace detail {

template <typename Fwd, typename Deriv>
Var elementwise(Var a, Fwd fwd, Deriv deriv_from_output) {
  Tape& t = tape_of(a);
  const Tensor& av = t.value(a);
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return t.record(std::move(out), {a}, [a, deriv_from_output](Tape& tp, Var self, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) {
      const Tensor& x = tp.value(a);
      const Tensor& y = tp.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv_from_output(x[i], y[i]);
    }
  });
}

}  // namespace detail

inline Var tanh(Var a) {
  return detail::elementwise(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::elementwise(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var a) {
  return detail::elementwise(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

// Softmax over a vector, or row-wise over a matrix.
inline Var softmax(Var a) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  if (av.rank() > 2) throw DimensionError("softmax: rank > 2 unsupported");
  const std::size_t rows = av.rank() == 1 ? 1 : av.dim(0);
  const std::size_t cols = av.shape().back();
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, av[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp(av[r * cols + c] - mx);
      z += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return t.record(std::move(out), {a}, [a, rows, cols](Tape& tp, Var self, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) {
      const Tensor& y = tp.value(self);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    }
  });
}

// Flattening concatenation into a vector.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Tape& t = detail::tape_of(parts.front());
  std::size_t total = 0;
  for (const Var& v : parts) total += t.value(v).size();
  Tensor out = Tensor::zeros({total});
  std::size_t off = 0;
  for (const Var& v : parts) {
    const Tensor& pv = t.value(v);
    std::copy(pv.data().begin(), pv.data().end(), out.mutable_data().begin() + off);
    off += pv.size();
  }
  return t.record_many(std::move(out), parts, [parts](Tape& tp, Var, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& v : parts) {
      const std::size_t n = tp.value(v).size();
      if (Tensor* gv = tp.grad_slot(v)) {
        for (std::size_t i = 0; i < n; ++i) (*gv)[i] += g[off + i];
      }
      off += n;
    }
  });
}

// Contiguous range [begin, begin + length) of a flattened tensor.
inline Var slice(Var a, std::size_t begin, std::size_t length) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  if (length == 0 || begin + length > av.size()) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                         ") out of range for " + shape_string(av.shape()));
  }
  Tensor out = Tensor::zeros({length});
  std::copy_n(av.data().begin() + begin, length, out.mutable_data().begin());
  return t.record(std::move(out), {a}, [a, begin, length](Tape& tp, Var, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < length; ++i) (*ga)[begin + i] += g[i];
    }
  });
}

// Row `index` of an embedding table [V x E].
inline Var embedding(Var table, std::size_t index) {
  Tape& t = detail::tape_of(table);
  const Tensor& tv = t.value(table);
  if (tv.rank() != 2) throw DimensionError("embedding: table must be a matrix, got " + shape_string(tv.shape()));
  if (index >= tv.dim(0)) {
    throw DimensionError("embedding: index " + std::to_string(index) + " out of range for vocabulary of " +
                         std::to_string(tv.dim(0)));
  }
  const std::size_t e = tv.dim(1);
  Tensor out = Tensor::zeros({e});
  std::copy_n(tv.data().begin() + index * e, e, out.mutable_data().begin());
  return t.record(std::move(out), {table}, [table, index, e](Tape& tp, Var, const Tensor& g) {
    if (Tensor* gt = tp.grad_slot(table)) {
      for (std::size_t i = 0; i < e; ++i) (*gt)[index * e + i] += g[i];
    }
  });
}

// Stacks equally sized vectors into a [rows x n] matrix.
inline Var stack(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack: no inputs");
  Tape& t = detail::tape_of(rows.front());
  const std::size_t n = t.value(rows.front()).size();
  for (const Var& r : rows) {
    if (t.value(r).size() != n) throw DimensionError("stack: rows differ in length");
  }
  Var flat = concat(rows);
  Tensor out = t.value(flat).reshaped({rows.size(), n});
  return t.record(std::move(out), {flat}, [flat](Tape& tp, Var, const Tensor& g) {
    if (Tensor* gf = tp.grad_slot(flat)) *gf += g;
  });
}

enum class Reduce { Mean, Max, Min };

// Reduction along `axis` of a matrix (0 -> per column, 1 -> per row), or over
// all entries of a vector. Max/min route the gradient to the first extremum.
inline Var reduce(Var a, Reduce kind, std::size_t axis = 0) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  std::size_t outer, inner, stride_out, stride_in;
  Shape out_shape;
  if (av.rank() == 1) {
    outer = 1;
    inner = av.size();
    stride_out = 0;
    stride_in = 1;
    out_shape = {1};
  } else if (av.rank() == 2 && axis < 2) {
    const std::size_t r = av.dim(0), c = av.dim(1);
    if (axis == 0) {
      outer = c, inner = r, stride_out = 1, stride_in = c;
      out_shape = {c};
    } else {
      outer = r, inner = c, stride_out = c, stride_in = 1;
      out_shape = {r};
    }
  } else {
    throw DimensionError("reduce: unsupported axis " + std::to_string(axis) + " for " + shape_string(av.shape()));
  }
  Tensor out = Tensor::zeros(out_shape);
  std::vector<std::size_t> pick(outer, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * stride_out;
    if (kind == Reduce::Mean) {
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += av[base + i * stride_in];
      out[o] = s / static_cast<double>(inner);
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < inner; ++i) {
        const double v = av[base + i * stride_in];
        const double b = av[base + best * stride_in];
        if (kind == Reduce::Max ? v > b : v < b) best = i;
      }
      pick[o] = base + best * stride_in;
      out[o] = av[pick[o]];
    }
  }
  return t.record(std::move(out), {a},
                  [a, kind, outer, inner, stride_out, stride_in, pick](Tape& tp, Var, const Tensor& g) {
                    Tensor* ga = tp.grad_slot(a);
                    if (!ga) return;
                    for (std::size_t o = 0; o < outer; ++o) {
                      if (kind == Reduce::Mean) {
                        const double share = g[o] / static_cast<double>(inner);
                        for (std::size_t i = 0; i < inner; ++i) (*ga)[o * stride_out + i * stride_in] += share;
                      } else {
                        (*ga)[pick[o]] += g[o];
                      }
                    }
                  });
}

inline Var sum(Var a) {
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  double s = 0.0;
  for (double v : av.data()) s += v;
  return t.record(Tensor::scalar(s), {a}, [a](Tape& tp, Var, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0];
    }
  });
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

inline constexpr double kCosineEpsilon = 1e-12;

struct CosineValue {
  double value = 0.0;
  bool degenerate = false;
};

// dot(u, v) / (max(|u|, eps) * max(|v|, eps)), clamped to [-1, 1]. Two zero
// vectors give 0 with the degenerate flag set.
inline CosineValue cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) {
    throw DimensionError("cosine: vectors of length " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
  }
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu <= kCosineEpsilon && nv <= kCosineEpsilon) return {0.0, true};
  const double c = uv / (std::max(nu, kCosineEpsilon) * std::max(nv, kCosineEpsilon));
  return {std::clamp(c, -1.0, 1.0), false};
}

inline Var cosine(Var u, Var v, bool* degenerate = nullptr) {
  Tape& t = detail::tape_of(u);
  const Tensor& uv = t.value(u);
  const Tensor& vv = t.value(v);
  if (uv.rank() != 1 || vv.rank() != 1) throw DimensionError("cosine: expects vectors");
  const CosineValue c = cosine_similarity(uv.data(), vv.data());
  if (degenerate) *degenerate = c.degenerate;
  return t.record(Tensor::scalar(c.value), {u, v}, [u, v](Tape& tp, Var self, const Tensor& g) {
    const Tensor& a = tp.value(u);
    const Tensor& b = tp.value(v);
    double aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    if (na <= kCosineEpsilon && nb <= kCosineEpsilon) return;
    const double ca = std::max(na, kCosineEpsilon), cb = std::max(nb, kCosineEpsilon);
    const double c = tp.value(self)[0];
    const double inv = 1.0 / (ca * cb);
    // A norm held at the epsilon floor is locally constant.
    const double ka = na > kCosineEpsilon ? c / (ca * ca) : 0.0;
    const double kb = nb > kCosineEpsilon ? c / (cb * cb) : 0.0;
    if (Tensor* gu = tp.grad_slot(u)) {
      for (std::size_t i = 0; i < a.size(); ++i) (*gu)[i] += g[0] * (b[i] * inv - ka * a[i]);
    }
    if (Tensor* gv = tp.grad_slot(v)) {
      for (std::size_t i = 0; i < b.size(); ++i) (*gv)[i] += g[0] * (a[i] * inv - kb * b[i]);
    }
  });
}

// Inverted dropout; identity in Infer mode or at rate 0.
inline Var dropout(Var a, double rate, Rng& rng, Mode mode) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (mode == Mode::Infer || rate == 0.0) return a;
  Tape& t = detail::tape_of(a);
  const Tensor& av = t.value(a);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(av.size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
  return t.record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& tp, Var, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * mask[i];
    }
  });
}

inline constexpr double kProbabilityFloor = 1e-300;

// -log p[gold] of a probability vector; p[gold] below the floor is clamped and
// reported through `clamped`.
inline Var negative_log_likelihood(Var probs, std::size_t gold, bool* clamped = nullptr) {
  Tape& t = detail::tape_of(probs);
  const Tensor& pv = t.value(probs);
  if (pv.rank() != 1 || gold >= pv.size()) {
    throw DimensionError("nll: class " + std::to_string(gold) + " out of range for " + shape_string(pv.shape()));
  }
  const bool floor_hit = pv[gold] < kProbabilityFloor;
  if (clamped) *clamped = floor_hit;
  const double p = std::max(pv[gold], kProbabilityFloor);
  return t.record(Tensor::scalar(-std::log(p)), {probs}, [probs, gold, floor_hit](Tape& tp, Var, const Tensor& g) {
    if (floor_hit) return;
    if (Tensor* gp = tp.grad_slot(probs)) (*gp)[gold] -= g[0] / tp.value(probs)[gold];
  });
}

}  // namespace clarify
