#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lpose/lorentz.hpp"
#include "lpose/tensor.hpp"

namespace lpose::ad {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& val() const { return tape->node(id).value; }
  const std::vector<int>& shape() const { return val().shape; }
  T scalar() const {
    if (val().numel() != 1) throw std::invalid_argument("Var::scalar: not a scalar node");
    return val().data[0];
  }
};

/// Reverse-mode tape over dense tensors. Recording order is the topological
/// order; backward() replays it in exact reverse, which makes gradients
/// deterministic for a fixed recording order. One tape is single-writer;
/// independent tapes may run on independent threads.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until first accumulation
    std::function<void(Tape&)> backward;
    const char* op = "leaf";
    std::string name;
    bool requires_grad = false;
  };

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  std::uint64_t madds() const { return madds_; }
  void add_madds(std::uint64_t n) { madds_ += n; }
  void reset_madds() { madds_ = 0; }

  int size() const { return static_cast<int>(nodes_.size()); }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Tensor<T>& val(int id) { return node(id).value; }
  bool wants(int id) const { return node(id).requires_grad; }

  Tensor<T>& grad(int id) {
    Node& n = node(id);
    if (n.grad.numel() == 0 && n.value.numel() > 0) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  Var<T> leaf(Tensor<T> v, bool requires_grad, std::string name = {}) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad && grad_enabled_;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return {this, size() - 1};
  }

  Var<T> constant(Tensor<T> v, std::string name = {}) { return leaf(std::move(v), false, std::move(name)); }

  /// Record an op node. `inputs` drive requires_grad propagation; the
  /// backward closure owns whatever saved state it needs.
  Var<T> emit(Tensor<T> value, const char* op, std::initializer_list<int> inputs,
              std::function<void(Tape&)> backward) {
    bool rq = false;
    for (int i : inputs)
      if (node(i).requires_grad) rq = true;
    return emit_flagged(std::move(value), op, rq, std::move(backward));
  }

  /// emit() variant for ops with a dynamic input list.
  Var<T> emit_flagged(Tensor<T> value, const char* op, bool requires_grad,
                      std::function<void(Tape&)> backward) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.requires_grad = requires_grad;
    if (grad_enabled_ && n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, size() - 1};
  }

  /// Accumulate d(loss)/d(leaf) for every participating node. Gradients of
  /// nodes the loss does not depend on stay zero (their buffers are never
  /// allocated).
  void backward(const Var<T>& loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: node from another tape");
    if (node(loss.id).value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad(loss.id).data[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = node(i);
      if (n.backward && n.grad.numel() > 0) n.backward(*this);
    }
  }

  struct NonFinite {
    int id;
    const char* op;
    std::string name;
  };

  /// First node whose value holds a non-finite entry, if any.
  std::optional<NonFinite> find_nonfinite() const {
    for (int i = 0; i < size(); ++i)
      if (!node(i).value.all_finite()) return NonFinite{i, node(i).op, node(i).name};
    return std::nullopt;
  }

 private:
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  std::uint64_t madds_ = 0;
};

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument("ops: vars on different tapes");
  return *a.tape;
}

inline std::size_t prod(const std::vector<int>& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= static_cast<std::size_t>(s[i]);
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

/// fwd(x) elementwise; dfun(x, y) is dy/dx given input and output values.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, const char* name, F fwd, DF dfun) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = fwd(xv.data[i]);
  int xid = x.id;
  int self = t.size();
  return t.emit(std::move(out), name, {xid}, [xid, self, dfun](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& xin = tp.val(xid);
    const Tensor<T>& yout = tp.val(self);
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] * dfun(xin.data[i], yout.data[i]);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> cosh(const Var<T>& x) {
  return unary(
      x, "cosh", [](T v) { return std::cosh(v); }, [](T v, T) { return std::sinh(v); });
}

template <typename T>
Var<T> sinh(const Var<T>& x) {
  return unary(
      x, "sinh", [](T v) { return std::sinh(v); }, [](T v, T) { return std::cosh(v); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary(
      x, "log",
      [](T v) {
        if (v <= T(0)) throw std::domain_error("ad::log: non-positive input");
        return std::log(v);
      },
      [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  // guarded derivative at 0 (a.e. convention); keeps pred == gt losses finite
  return unary(
      x, "sqrt", [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(1) / (T(2) * std::max(y, T(1e-12))); });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return unary(
      x, "neg", [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
T softplus_val(T v) {
  if (v > T(20)) return v;
  if (v < T(-20)) return std::exp(v);
  return std::log1p(std::exp(v));
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return unary(
      x, "softplus", [](T v) { return softplus_val(v); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
T gelu_val(T v) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T a = static_cast<T>(0.044715);
  return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T a = static_cast<T>(0.044715);
  return unary(
      x, "gelu", [](T v) { return gelu_val(v); },
      [c, a](T v, T) {
        T u = c * (v + a * v * v * v);
        T th = std::tanh(u);
        return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
      });
}

/// arccosh with the forward argument clamped to >= 1 + eps; the gradient is
/// 1/sqrt(z'^2 - 1) evaluated at the clamped point, so it stays finite.
template <typename T>
Var<T> acosh_clamped(const Var<T>& x, T eps = T(1e-7)) {
  return unary(
      x, "acosh",
      [eps](T v) { return std::acosh(std::max(v, T(1) + eps)); },
      [eps](T v, T) {
        T z = std::max(v, T(1) + eps);
        return T(1) / std::sqrt(z * z - T(1));
      });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return unary(
      x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, T c) {
  return unary(
      x, "mul_scalar", [c](T v) { return v * c; }, [c](T, T) { return c; });
}

// ---------------------------------------------------------------------------
// elementwise binary ops with leading-batch broadcast
// ---------------------------------------------------------------------------

namespace detail {

/// Resolves the broadcast pattern: equal shapes, scalar (numel 1) operand, or
/// one shape a trailing suffix of the other. Returns (out_shape, a_is_big).
template <typename T>
std::pair<std::vector<int>, bool> binary_shape(const Tensor<T>& a, const Tensor<T>& b, const char* name) {
  if (a.shape == b.shape) return {a.shape, true};
  if (b.numel() == 1 || is_suffix_shape(b.shape, a.shape)) return {a.shape, true};
  if (a.numel() == 1 || is_suffix_shape(a.shape, b.shape)) return {b.shape, false};
  throw std::invalid_argument(std::string(name) + ": incompatible shapes " + shape_str(a.shape) + " vs " +
                              shape_str(b.shape));
}

}  // namespace detail

/// f(a, b) with partials dfa(a, b), dfb(a, b). The smaller operand (scalar or
/// trailing-suffix shape) broadcasts over the leading dims of the larger one;
/// its gradient sums over the broadcast.
template <typename T, typename F, typename DA, typename DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* name, F f, DA dfa, DB dfb) {
  Tape<T>& t = detail::same_tape(a, b);
  const Tensor<T>& av = a.val();
  const Tensor<T>& bv = b.val();
  auto [shape, a_big] = detail::binary_shape(av, bv, name);
  std::size_t n = Tensor<T>::numel_of(shape);
  std::size_t an = av.numel(), bn = bv.numel();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = f(av.data[i % an], bv.data[i % bn]);
  int aid = a.id, bid = b.id;
  int self = t.size();
  return t.emit(std::move(out), name, {aid, bid}, [aid, bid, self, an, bn, dfa, dfb](Tape<T>& tp) {
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& av2 = tp.val(aid);
    const Tensor<T>& bv2 = tp.val(bid);
    if (tp.wants(aid)) {
      Tensor<T>& ga = tp.grad(aid);
      for (std::size_t i = 0; i < g.numel(); ++i)
        ga.data[i % an] += g.data[i] * dfa(av2.data[i % an], bv2.data[i % bn]);
    }
    if (tp.wants(bid)) {
      Tensor<T>& gb = tp.grad(bid);
      for (std::size_t i = 0; i < g.numel(); ++i)
        gb.data[i % bn] += g.data[i] * dfb(av2.data[i % an], bv2.data[i % bn]);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  T s = 0;
  for (T v : xv.data) s += v;
  int xid = x.id;
  int self = t.size();
  return t.emit(Tensor<T>::scalar(s), "sum_all", {xid}, [xid, self](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    T g = tp.node(self).grad.data[0];
    Tensor<T>& gx = tp.grad(xid);
    for (auto& v : gx.data) v += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  std::size_t n = x.val().numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(n));
}

/// Sum over one axis (removed from the shape).
template <typename T>
Var<T> sum_axis(const Var<T>& x, int axis) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  int r = xv.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("sum_axis: axis out of range");
  std::size_t outer = detail::prod(xv.shape, 0, axis);
  std::size_t ax = static_cast<std::size_t>(xv.shape[axis]);
  std::size_t inner = detail::prod(xv.shape, axis + 1, xv.shape.size());
  std::vector<int> oshape;
  for (int i = 0; i < r; ++i)
    if (i != axis) oshape.push_back(xv.shape[i]);
  if (oshape.empty()) oshape = {1};
  Tensor<T> out(oshape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < ax; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out.data[o * inner + i] += xv.data[(o * ax + k) * inner + i];
  int xid = x.id;
  int self = t.size();
  return t.emit(std::move(out), "sum_axis", {xid}, [xid, self, outer, ax, inner](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < ax; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          gx.data[(o * ax + k) * inner + i] += g.data[o * inner + i];
  });
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, int axis) {
  int r = x.val().rank();
  int a = axis < 0 ? axis + r : axis;
  T n = static_cast<T>(x.val().shape[static_cast<std::size_t>(a)]);
  return mul_scalar(sum_axis(x, axis), T(1) / n);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> shape) {
  Tape<T>& t = *x.tape;
  Tensor<T> out = x.val().reshaped(shape);
  int xid = x.id;
  int self = t.size();
  return t.emit(std::move(out), "reshape", {xid}, [xid, self](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
  });
}

namespace detail {

/// Walks the input tensor in flat (row-major) order and calls
/// emit(flat_in, flat_out) with the matching position in the permuted output.
template <typename F>
void permute_walk(const std::vector<int>& in_shape, const std::vector<int>& perm, F&& emit) {
  std::size_t r = in_shape.size();
  std::vector<int> out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
  std::vector<std::size_t> out_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) out_strides[i - 1] = out_strides[i] * static_cast<std::size_t>(out_shape[i]);
  // stride in the output for a unit step along input axis a
  std::vector<std::size_t> out_stride_for_axis(r, 0);
  for (std::size_t i = 0; i < r; ++i) out_stride_for_axis[static_cast<std::size_t>(perm[i])] = out_strides[i];
  std::size_t n = 1;
  for (int e : in_shape) n *= static_cast<std::size_t>(e);
  std::vector<std::size_t> idx(r, 0);
  std::size_t out_pos = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    emit(flat, out_pos);
    for (std::size_t a = r; a-- > 0;) {
      idx[a]++;
      out_pos += out_stride_for_axis[a];
      if (idx[a] < static_cast<std::size_t>(in_shape[a])) break;
      out_pos -= out_stride_for_axis[a] * idx[a];
      idx[a] = 0;
    }
  }
}

}  // namespace detail

/// Axis permutation: out[i_perm(0), ..] = in[i_0, ..].
template <typename T>
Var<T> permute(const Var<T>& x, std::vector<int> perm) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  std::size_t r = xv.shape.size();
  if (perm.size() != r) throw std::invalid_argument("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= r || seen[static_cast<std::size_t>(p)])
      throw std::invalid_argument("permute: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  std::vector<int> oshape(r);
  for (std::size_t i = 0; i < r; ++i) oshape[i] = xv.shape[static_cast<std::size_t>(perm[i])];
  Tensor<T> out(oshape);
  detail::permute_walk(xv.shape, perm,
                       [&](std::size_t fin, std::size_t fout) { out.data[fout] = xv.data[fin]; });
  int xid = x.id;
  int self = t.size();
  return t.emit(std::move(out), "permute", {xid}, [xid, self, perm](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    Tensor<T>& gx = tp.grad(xid);
    detail::permute_walk(gx.shape, perm,
                         [&](std::size_t fin, std::size_t fout) { gx.data[fin] += g.data[fout]; });
  });
}

/// Contiguous sub-range along one axis.
template <typename T>
Var<T> slice(const Var<T>& x, int axis, int start, int len) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  int r = xv.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("slice: axis out of range");
  int ax = xv.shape[static_cast<std::size_t>(axis)];
  if (start < 0 || len < 0 || start + len > ax) throw std::invalid_argument("slice: range out of bounds");
  std::size_t outer = detail::prod(xv.shape, 0, axis);
  std::size_t inner = detail::prod(xv.shape, axis + 1, xv.shape.size());
  std::vector<int> oshape = xv.shape;
  oshape[static_cast<std::size_t>(axis)] = len;
  Tensor<T> out(oshape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data.begin() + static_cast<std::ptrdiff_t>((o * ax + start) * inner),
                static_cast<std::ptrdiff_t>(static_cast<std::size_t>(len) * inner),
                out.data.begin() + static_cast<std::ptrdiff_t>(o * static_cast<std::size_t>(len) * inner));
  int xid = x.id;
  int self = t.size();
  std::size_t sax = static_cast<std::size_t>(ax), sstart = static_cast<std::size_t>(start),
              slen = static_cast<std::size_t>(len);
  return t.emit(std::move(out), "slice", {xid}, [xid, self, outer, inner, sax, sstart, slen](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < slen; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          gx.data[(o * sax + sstart + k) * inner + i] += g.data[(o * slen + k) * inner + i];
  });
}

/// Gather rows along `axis` by an index list (duplicates allowed); backward
/// scatter-adds.
template <typename T>
Var<T> index_select(const Var<T>& x, int axis, std::vector<int> idx) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  int r = xv.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("index_select: axis out of range");
  int ax = xv.shape[static_cast<std::size_t>(axis)];
  for (int i : idx)
    if (i < 0 || i >= ax) throw std::invalid_argument("index_select: index out of bounds");
  std::size_t outer = detail::prod(xv.shape, 0, axis);
  std::size_t inner = detail::prod(xv.shape, axis + 1, xv.shape.size());
  std::vector<int> oshape = xv.shape;
  oshape[static_cast<std::size_t>(axis)] = static_cast<int>(idx.size());
  Tensor<T> out(oshape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(xv.data.begin() + static_cast<std::ptrdiff_t>((o * static_cast<std::size_t>(ax) +
                                                                 static_cast<std::size_t>(idx[k])) *
                                                                inner),
                  static_cast<std::ptrdiff_t>(inner),
                  out.data.begin() + static_cast<std::ptrdiff_t>((o * idx.size() + k) * inner));
  int xid = x.id;
  int self = t.size();
  std::size_t sax = static_cast<std::size_t>(ax);
  return t.emit(std::move(out), "index_select", {xid}, [xid, self, outer, inner, sax, idx](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t i = 0; i < inner; ++i)
          gx.data[(o * sax + static_cast<std::size_t>(idx[k])) * inner + i] +=
              g.data[(o * idx.size() + k) * inner + i];
  });
}

/// Concatenate along one axis; all other extents must match.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  Tape<T>& t = *xs[0].tape;
  const Tensor<T>& first = xs[0].val();
  int r = first.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("concat: axis out of range");
  int total = 0;
  for (const auto& x : xs) {
    if (x.tape != &t) throw std::invalid_argument("concat: vars on different tapes");
    const auto& s = x.val().shape;
    if (static_cast<int>(s.size()) != r) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && s[static_cast<std::size_t>(i)] != first.shape[static_cast<std::size_t>(i)])
        throw std::invalid_argument("concat: extent mismatch");
    total += s[static_cast<std::size_t>(axis)];
  }
  std::vector<int> oshape = first.shape;
  oshape[static_cast<std::size_t>(axis)] = total;
  std::size_t outer = detail::prod(first.shape, 0, axis);
  std::size_t inner = detail::prod(first.shape, axis + 1, first.shape.size());
  Tensor<T> out(oshape);
  std::vector<int> ids;
  std::vector<std::size_t> axlens;
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::size_t alen = static_cast<std::size_t>(x.val().shape[static_cast<std::size_t>(axis)]);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.val().data.begin() + static_cast<std::ptrdiff_t>(o * alen * inner),
                  static_cast<std::ptrdiff_t>(alen * inner),
                  out.data.begin() +
                      static_cast<std::ptrdiff_t>((o * static_cast<std::size_t>(total) + off) * inner));
    ids.push_back(x.id);
    axlens.push_back(alen);
    off += alen;
  }
  Tensor<T> value = std::move(out);
  bool rq = false;
  for (int id : ids) rq = rq || t.wants(id);
  int self = t.size();
  std::size_t stotal = static_cast<std::size_t>(total);
  return t.emit_flagged(std::move(value), "concat", rq,
                        [ids, axlens, self, outer, inner, stotal](Tape<T>& tp) {
                          const Tensor<T>& g = tp.node(self).grad;
                          std::size_t off2 = 0;
                          for (std::size_t k = 0; k < ids.size(); ++k) {
                            if (tp.wants(ids[k])) {
                              Tensor<T>& gx = tp.grad(ids[k]);
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t j = 0; j < axlens[k] * inner; ++j)
                                  gx.data[o * axlens[k] * inner + j] +=
                                      g.data[(o * stotal + off2) * inner + j];
                            }
                            off2 += axlens[k];
                          }
                        });
}

// ---------------------------------------------------------------------------
// matmul / batched matmul
// ---------------------------------------------------------------------------

namespace detail {

/// C += opA(A) * opB(B) where opX is optional transpose. A is [n,k] (or [k,n]
/// when transposed), B is [k,m] (or [m,k]), C is [n,m]. The transposed-B case
/// goes through a scratch transpose so every path runs the cache-friendly
/// ikj kernel; the transpose is O(km) against O(nkm) multiply work.
template <typename T>
void matmul_acc(const T* A, const T* B, T* C, std::size_t n, std::size_t k, std::size_t m, bool tA, bool tB) {
  thread_local std::vector<T> scratch;
  if (tB) {
    scratch.resize(k * m);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t kk = 0; kk < k; ++kk) scratch[kk * m + j] = B[j * k + kk];
    B = scratch.data();
    tB = false;
  }
  if (!tA) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        T a = A[i * k + kk];
        const T* brow = B + kk * m;
        T* crow = C + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += a * brow[j];
      }
  } else {
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t i = 0; i < n; ++i) {
        T a = A[kk * n + i];
        const T* brow = B + kk * m;
        T* crow = C + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += a * brow[j];
      }
  }
}

}  // namespace detail

/// 2-D matmul: out = opA(A) @ opB(B).
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  Tape<T>& t = detail::same_tape(a, b);
  const Tensor<T>& av = a.val();
  const Tensor<T>& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2) throw std::invalid_argument("matmul: rank-2 tensors required");
  std::size_t n = static_cast<std::size_t>(trans_a ? av.shape[1] : av.shape[0]);
  std::size_t k = static_cast<std::size_t>(trans_a ? av.shape[0] : av.shape[1]);
  std::size_t kb = static_cast<std::size_t>(trans_b ? bv.shape[1] : bv.shape[0]);
  std::size_t m = static_cast<std::size_t>(trans_b ? bv.shape[0] : bv.shape[1]);
  if (k != kb)
    throw std::invalid_argument("matmul: inner extents differ: " + shape_str(av.shape) + " x " +
                                shape_str(bv.shape));
  Tensor<T> out({static_cast<int>(n), static_cast<int>(m)});
  detail::matmul_acc(av.data.data(), bv.data.data(), out.data.data(), n, k, m, trans_a, trans_b);
  t.add_madds(static_cast<std::uint64_t>(n) * k * m);
  int aid = a.id, bid = b.id;
  int self = t.size();
  return t.emit(std::move(out), "matmul", {aid, bid}, [aid, bid, self, n, k, m, trans_a, trans_b](Tape<T>& tp) {
    const Tensor<T>& g = tp.node(self).grad;
    const T* G = g.data.data();
    const T* A = tp.val(aid).data.data();
    const T* B = tp.val(bid).data.data();
    if (tp.wants(aid)) {
      T* GA = tp.grad(aid).data.data();
      // dA for C = opA(A) opB(B)
      if (!trans_a && !trans_b) detail::matmul_acc(G, B, GA, n, m, k, false, true);
      else if (!trans_a && trans_b) detail::matmul_acc(G, B, GA, n, m, k, false, false);
      else if (trans_a && !trans_b) detail::matmul_acc(B, G, GA, k, m, n, false, true);
      else detail::matmul_acc(B, G, GA, k, m, n, true, true);
      tp.add_madds(static_cast<std::uint64_t>(n) * k * m);
    }
    if (tp.wants(bid)) {
      T* GB = tp.grad(bid).data.data();
      if (!trans_a && !trans_b) detail::matmul_acc(A, G, GB, k, n, m, true, false);
      else if (!trans_a && trans_b) detail::matmul_acc(G, A, GB, m, n, k, true, false);
      else if (trans_a && !trans_b) detail::matmul_acc(A, G, GB, k, n, m, false, false);
      else detail::matmul_acc(G, A, GB, m, n, k, true, true);
      tp.add_madds(static_cast<std::uint64_t>(n) * k * m);
    }
  });
}

/// Batched matmul over the shared leading dim: [B,n,k] x [B,k,m] -> [B,n,m].
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  Tape<T>& t = detail::same_tape(a, b);
  const Tensor<T>& av = a.val();
  const Tensor<T>& bv = b.val();
  if (av.rank() != 3 || bv.rank() != 3) throw std::invalid_argument("bmm: rank-3 tensors required");
  if (av.shape[0] != bv.shape[0]) throw std::invalid_argument("bmm: batch extents differ");
  std::size_t nb = static_cast<std::size_t>(av.shape[0]);
  std::size_t n = static_cast<std::size_t>(trans_a ? av.shape[2] : av.shape[1]);
  std::size_t k = static_cast<std::size_t>(trans_a ? av.shape[1] : av.shape[2]);
  std::size_t kb = static_cast<std::size_t>(trans_b ? bv.shape[2] : bv.shape[1]);
  std::size_t m = static_cast<std::size_t>(trans_b ? bv.shape[1] : bv.shape[2]);
  if (k != kb) throw std::invalid_argument("bmm: inner extents differ");
  Tensor<T> out({static_cast<int>(nb), static_cast<int>(n), static_cast<int>(m)});
  std::size_t a_stride = static_cast<std::size_t>(av.shape[1]) * static_cast<std::size_t>(av.shape[2]);
  std::size_t b_stride = static_cast<std::size_t>(bv.shape[1]) * static_cast<std::size_t>(bv.shape[2]);
  for (std::size_t bi = 0; bi < nb; ++bi)
    detail::matmul_acc(av.data.data() + bi * a_stride, bv.data.data() + bi * b_stride,
                       out.data.data() + bi * n * m, n, k, m, trans_a, trans_b);
  t.add_madds(static_cast<std::uint64_t>(nb) * n * k * m);
  int aid = a.id, bid = b.id;
  int self = t.size();
  return t.emit(std::move(out), "bmm", {aid, bid},
                [aid, bid, self, nb, n, k, m, a_stride, b_stride, trans_a, trans_b](Tape<T>& tp) {
                  const Tensor<T>& g = tp.node(self).grad;
                  for (std::size_t bi = 0; bi < nb; ++bi) {
                    const T* G = g.data.data() + bi * n * m;
                    const T* A = tp.val(aid).data.data() + bi * a_stride;
                    const T* B = tp.val(bid).data.data() + bi * b_stride;
                    if (tp.wants(aid)) {
                      T* GA = tp.grad(aid).data.data() + bi * a_stride;
                      if (!trans_a && !trans_b) detail::matmul_acc(G, B, GA, n, m, k, false, true);
                      else if (!trans_a && trans_b) detail::matmul_acc(G, B, GA, n, m, k, false, false);
                      else if (trans_a && !trans_b) detail::matmul_acc(B, G, GA, k, m, n, false, true);
                      else detail::matmul_acc(B, G, GA, k, m, n, true, true);
                    }
                    if (tp.wants(bid)) {
                      T* GB = tp.grad(bid).data.data() + bi * b_stride;
                      if (!trans_a && !trans_b) detail::matmul_acc(A, G, GB, k, n, m, true, false);
                      else if (!trans_a && trans_b) detail::matmul_acc(G, A, GB, m, n, k, true, false);
                      else if (trans_a && !trans_b) detail::matmul_acc(A, G, GB, k, n, m, false, false);
                      else detail::matmul_acc(G, A, GB, m, n, k, true, true);
                    }
                  }
                  tp.add_madds(2 * static_cast<std::uint64_t>(nb) * n * k * m);
                });
}

// ---------------------------------------------------------------------------
// softmax / layernorm / norm clip
// ---------------------------------------------------------------------------

/// Shift-invariant softmax over the last axis. An optional additive mask
/// (same shape or trailing-suffix broadcast; 0 = keep, -inf = drop) is
/// applied before the max subtraction, so fully masked slots come out as
/// exact zeros.
template <typename T>
Var<T> softmax_last(const Var<T>& x, const Tensor<T>* mask = nullptr) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  if (xv.rank() < 1) throw std::invalid_argument("softmax_last: rank >= 1 required");
  std::size_t d = static_cast<std::size_t>(xv.dim(-1));
  std::size_t rows = xv.numel() / d;
  std::size_t mn = 0;
  if (mask) {
    if (!(mask->shape == xv.shape || is_suffix_shape(mask->shape, xv.shape) || mask->numel() == 1))
      throw std::invalid_argument("softmax_last: mask shape incompatible");
    mn = mask->numel();
  }
  Tensor<T> out(xv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data.data() + r * d;
    T* o = out.data.data() + r * d;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < d; ++i) {
      T z = in[i] + (mask ? mask->data[(r * d + i) % mn] : T(0));
      o[i] = z;
      if (z > mx) mx = z;
    }
    T sum = 0;
    for (std::size_t i = 0; i < d; ++i) {
      T e = std::exp(o[i] - mx);
      o[i] = e;
      sum += e;
    }
    for (std::size_t i = 0; i < d; ++i) o[i] /= sum;
  }
  int xid = x.id;
  int self = t.size();
  return t.emit(std::move(out), "softmax", {xid}, [xid, self, rows, d](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& y = tp.val(self);
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = g.data.data() + r * d;
      const T* yr = y.data.data() + r * d;
      T dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
      T* gxr = gx.data.data() + r * d;
      for (std::size_t i = 0; i < d; ++i) gxr[i] += yr[i] * (gr[i] - dot);
    }
  });
}

/// LayerNorm over the last axis with learnable gain and bias (shape [d]).
template <typename T>
Var<T> layernorm_last(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  std::size_t d = static_cast<std::size_t>(xv.dim(-1));
  std::size_t rows = xv.numel() / d;
  const Tensor<T>& gv = gain.val();
  const Tensor<T>& bv = bias.val();
  if (gv.numel() != d || bv.numel() != d) throw std::invalid_argument("layernorm: gain/bias must be [d]");
  Tensor<T> out(xv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data.data() + r * d;
    T* o = out.data.data() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += in[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<T>(d);
    T is = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) o[i] = (in[i] - mu) * is * gv.data[i] + bv.data[i];
  }
  int xid = x.id, gid = gain.id, bid = bias.id;
  int self = t.size();
  return t.emit(std::move(out), "layernorm", {xid, gid, bid}, [xid, gid, bid, self, rows, d, eps](Tape<T>& tp) {
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& xin = tp.val(xid);
    const Tensor<T>& gn = tp.val(gid);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* in = xin.data.data() + r * d;
      const T* gr = g.data.data() + r * d;
      T mu = 0;
      for (std::size_t i = 0; i < d; ++i) mu += in[i];
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t i = 0; i < d; ++i) var += (in[i] - mu) * (in[i] - mu);
      var /= static_cast<T>(d);
      T is = T(1) / std::sqrt(var + eps);
      if (tp.wants(xid)) {
        T mean_gh = 0, mean_ghx = 0;
        for (std::size_t i = 0; i < d; ++i) {
          T xh = (in[i] - mu) * is;
          T gh = gr[i] * gn.data[i];
          mean_gh += gh;
          mean_ghx += gh * xh;
        }
        mean_gh /= static_cast<T>(d);
        mean_ghx /= static_cast<T>(d);
        T* gx = tp.grad(xid).data.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
          T xh = (in[i] - mu) * is;
          T gh = gr[i] * gn.data[i];
          gx[i] += is * (gh - mean_gh - xh * mean_ghx);
        }
      }
      if (tp.wants(gid)) {
        T* gg = tp.grad(gid).data.data();
        for (std::size_t i = 0; i < d; ++i) gg[i] += gr[i] * (in[i] - mu) * is;
      }
      if (tp.wants(bid)) {
        T* gb = tp.grad(bid).data.data();
        for (std::size_t i = 0; i < d; ++i) gb[i] += gr[i];
      }
    }
  });
}

/// Differentiable norm clip of each last-axis row to radius r: identity
/// inside the ball, radial rescale outside (a.e. Jacobian r/n (I - vv^T/n^2)
/// on the clipped branch).
template <typename T>
Var<T> row_norm_clip(const Var<T>& x, T r) {
  if (r <= T(0)) throw std::invalid_argument("row_norm_clip: r must be positive");
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  std::size_t d = static_cast<std::size_t>(xv.dim(-1));
  std::size_t rows = xv.numel() / d;
  Tensor<T> out(xv.shape);
  for (std::size_t rr = 0; rr < rows; ++rr) {
    const T* in = xv.data.data() + rr * d;
    T* o = out.data.data() + rr * d;
    T n2 = 0;
    for (std::size_t i = 0; i < d; ++i) n2 += in[i] * in[i];
    T n = std::sqrt(n2);
    T s = (n > r) ? r / n : T(1);
    for (std::size_t i = 0; i < d; ++i) o[i] = s * in[i];
  }
  int xid = x.id;
  int self = t.size();
  return t.emit(std::move(out), "norm_clip", {xid}, [xid, self, rows, d, r](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& xin = tp.val(xid);
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t rr = 0; rr < rows; ++rr) {
      const T* in = xin.data.data() + rr * d;
      const T* gr = g.data.data() + rr * d;
      T* gxr = gx.data.data() + rr * d;
      T n2 = 0;
      for (std::size_t i = 0; i < d; ++i) n2 += in[i] * in[i];
      T n = std::sqrt(n2);
      if (n <= r) {
        for (std::size_t i = 0; i < d; ++i) gxr[i] += gr[i];
      } else {
        T s = r / n;
        T dot = 0;
        for (std::size_t i = 0; i < d; ++i) dot += gr[i] * in[i];
        T c = s * dot / n2;
        for (std::size_t i = 0; i < d; ++i) gxr[i] += s * gr[i] - c * in[i];
      }
    }
  });
}

/// Scale each last-axis row of x by the matching entry of v, where v has
/// exactly x's shape minus the last axis.
template <typename T>
Var<T> row_scale(const Var<T>& x, const Var<T>& v) {
  Tape<T>& t = detail::same_tape(x, v);
  const Tensor<T>& xv = x.val();
  const Tensor<T>& vv = v.val();
  std::size_t d = static_cast<std::size_t>(xv.dim(-1));
  std::size_t rows = xv.numel() / d;
  if (vv.numel() != rows) throw std::invalid_argument("row_scale: v must have one entry per row");
  Tensor<T> out(xv.shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < d; ++i) out.data[r * d + i] = xv.data[r * d + i] * vv.data[r];
  int xid = x.id, vid = v.id;
  int self = t.size();
  return t.emit(std::move(out), "row_scale", {xid, vid}, [xid, vid, self, rows, d](Tape<T>& tp) {
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& xin = tp.val(xid);
    const Tensor<T>& vin = tp.val(vid);
    if (tp.wants(xid)) {
      Tensor<T>& gx = tp.grad(xid);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) gx.data[r * d + i] += g.data[r * d + i] * vin.data[r];
    }
    if (tp.wants(vid)) {
      Tensor<T>& gv = tp.grad(vid);
      for (std::size_t r = 0; r < rows; ++r) {
        T s = 0;
        for (std::size_t i = 0; i < d; ++i) s += g.data[r * d + i] * xin.data[r * d + i];
        gv.data[r] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// hyperbolic ops (rows over the last axis)
// ---------------------------------------------------------------------------

/// exp_o applied to each last-axis row: [.., d] -> [.., d+1]. Counts one
/// origin-map call per row at `site`.
template <typename T>
Var<T> lorentz_lift(const Var<T>& x, lorentz::MapSite site) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  std::size_t d = static_cast<std::size_t>(xv.dim(-1));
  std::size_t rows = xv.numel() / d;
  std::vector<int> oshape = xv.shape;
  oshape.back() += 1;
  Tensor<T> out(oshape);
  for (std::size_t r = 0; r < rows; ++r)
    lorentz::exp_origin(std::span<const T>(xv.data.data() + r * d, d),
                        std::span<T>(out.data.data() + r * (d + 1), d + 1), site);
  int xid = x.id;
  int self = t.size();
  return t.emit(std::move(out), "lorentz_lift", {xid}, [xid, self, rows, d](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& xin = tp.val(xid);
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t rr = 0; rr < rows; ++rr) {
      const T* v = xin.data.data() + rr * d;
      const T* gr = g.data.data() + rr * (d + 1);
      T* gv = gx.data.data() + rr * d;
      T n2 = 0;
      for (std::size_t i = 0; i < d; ++i) n2 += v[i] * v[i];
      T r = std::sqrt(n2);
      T sigma, kappa;  // sinh(r)/r and (r cosh r - sinh r)/r^3
      if (r < T(1e-4)) {
        sigma = T(1) + n2 / T(6);
        kappa = T(1) / T(3) + n2 / T(30);
      } else {
        sigma = std::sinh(r) / r;
        kappa = (r * std::cosh(r) - std::sinh(r)) / (r * n2);
      }
      T g0 = gr[0];
      T gs_dot_v = 0;
      for (std::size_t i = 0; i < d; ++i) gs_dot_v += gr[i + 1] * v[i];
      for (std::size_t i = 0; i < d; ++i) gv[i] += sigma * (g0 * v[i] + gr[i + 1]) + kappa * gs_dot_v * v[i];
    }
  });
}

/// log_o applied to each last-axis row: [.., d+1] -> [.., d]. On-manifold
/// inputs make arccosh(y0) equal asinh(||y_s||); the spatial form is the one
/// evaluated (well-conditioned at the origin), so the time coordinate carries
/// no gradient.
template <typename T>
Var<T> lorentz_logmap(const Var<T>& y, lorentz::MapSite site) {
  Tape<T>& t = *y.tape;
  const Tensor<T>& yv = y.val();
  std::size_t dp1 = static_cast<std::size_t>(yv.dim(-1));
  if (dp1 < 2) throw std::invalid_argument("lorentz_logmap: last extent must be >= 2");
  std::size_t d = dp1 - 1;
  std::size_t rows = yv.numel() / dp1;
  std::vector<int> oshape = yv.shape;
  oshape.back() -= 1;
  Tensor<T> out(oshape);
  for (std::size_t r = 0; r < rows; ++r)
    lorentz::log_origin(std::span<const T>(yv.data.data() + r * dp1, dp1),
                        std::span<T>(out.data.data() + r * d, d), site);
  int yid = y.id;
  int self = t.size();
  return t.emit(std::move(out), "lorentz_logmap", {yid}, [yid, self, rows, d, dp1](Tape<T>& tp) {
    if (!tp.wants(yid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& yin = tp.val(yid);
    Tensor<T>& gy = tp.grad(yid);
    for (std::size_t rr = 0; rr < rows; ++rr) {
      const T* ys = yin.data.data() + rr * dp1 + 1;
      const T* gu = g.data.data() + rr * d;
      T* gyr = gy.data.data() + rr * dp1;
      T s2 = 0;
      for (std::size_t i = 0; i < d; ++i) s2 += ys[i] * ys[i];
      T s = std::sqrt(s2);
      T scale, psi;  // asinh(s)/s and d(asinh(s)/s)/ds / s
      if (s < T(1e-4)) {
        scale = T(1) - s2 / T(6);
        psi = T(-1) / T(3) + T(3) * s2 / T(10);
      } else {
        scale = std::asinh(s) / s;
        psi = (s / std::sqrt(T(1) + s2) - std::asinh(s)) / (s2 * s);
      }
      T gu_dot_ys = 0;
      for (std::size_t i = 0; i < d; ++i) gu_dot_ys += gu[i] * ys[i];
      for (std::size_t i = 0; i < d; ++i) gyr[i + 1] += scale * gu[i] + psi * gu_dot_ys * ys[i];
    }
  });
}

/// pi(phi) = (sqrt(1+||phi||^2), phi) per last-axis row: [.., d] -> [.., d+1].
template <typename T>
Var<T> hyperboloid_project(const Var<T>& x) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.val();
  std::size_t d = static_cast<std::size_t>(xv.dim(-1));
  std::size_t rows = xv.numel() / d;
  std::vector<int> oshape = xv.shape;
  oshape.back() += 1;
  Tensor<T> out(oshape);
  for (std::size_t r = 0; r < rows; ++r)
    lorentz::project_hyperboloid(std::span<const T>(xv.data.data() + r * d, d),
                                 std::span<T>(out.data.data() + r * (d + 1), d + 1));
  int xid = x.id;
  int self = t.size();
  return t.emit(std::move(out), "hyperboloid_project", {xid}, [xid, self, rows, d](Tape<T>& tp) {
    if (!tp.wants(xid)) return;
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& xin = tp.val(xid);
    const Tensor<T>& yout = tp.val(self);
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t rr = 0; rr < rows; ++rr) {
      const T* phi = xin.data.data() + rr * d;
      const T* gr = g.data.data() + rr * (d + 1);
      T y0 = yout.data[rr * (d + 1)];
      T* gp = gx.data.data() + rr * d;
      for (std::size_t i = 0; i < d; ++i) gp[i] += gr[i + 1] + gr[0] * phi[i] / y0;
    }
  });
}

/// Row-wise Lorentzian inner product of two [.., k] tensors -> [..] tensor.
template <typename T>
Var<T> row_lorentz_inner(const Var<T>& a, const Var<T>& b) {
  Tape<T>& t = detail::same_tape(a, b);
  const Tensor<T>& av = a.val();
  const Tensor<T>& bv = b.val();
  if (av.shape != bv.shape) throw std::invalid_argument("row_lorentz_inner: shape mismatch");
  std::size_t k = static_cast<std::size_t>(av.dim(-1));
  std::size_t rows = av.numel() / k;
  std::vector<int> oshape(av.shape.begin(), av.shape.end() - 1);
  if (oshape.empty()) oshape = {1};
  Tensor<T> out(oshape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data.data() + r * k;
    const T* y = bv.data.data() + r * k;
    T s = -x[0] * y[0];
    for (std::size_t i = 1; i < k; ++i) s += x[i] * y[i];
    out.data[r] = s;
  }
  int aid = a.id, bid = b.id;
  int self = t.size();
  return t.emit(std::move(out), "row_lorentz_inner", {aid, bid}, [aid, bid, self, rows, k](Tape<T>& tp) {
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& av2 = tp.val(aid);
    const Tensor<T>& bv2 = tp.val(bid);
    for (std::size_t r = 0; r < rows; ++r) {
      T gr = g.data[r];
      if (tp.wants(aid)) {
        T* ga = tp.grad(aid).data.data() + r * k;
        const T* y = bv2.data.data() + r * k;
        ga[0] += -gr * y[0];
        for (std::size_t i = 1; i < k; ++i) ga[i] += gr * y[i];
      }
      if (tp.wants(bid)) {
        T* gb = tp.grad(bid).data.data() + r * k;
        const T* x = av2.data.data() + r * k;
        gb[0] += -gr * x[0];
        for (std::size_t i = 1; i < k; ++i) gb[i] += gr * x[i];
      }
    }
  });
}

/// Pairwise squared Euclidean distances via the expanded form
/// ||a||^2+||b||^2-2<a,b>, clamped at zero. Rank 2: [N,d]x[M,d] -> [N,M];
/// rank 3 runs batched over the shared leading dim.
template <typename T>
Var<T> pairwise_sqdist(const Var<T>& a, const Var<T>& b) {
  Tape<T>& t = detail::same_tape(a, b);
  const Tensor<T>& av = a.val();
  const Tensor<T>& bv = b.val();
  if (av.rank() != bv.rank() || (av.rank() != 2 && av.rank() != 3))
    throw std::invalid_argument("pairwise_sqdist: rank 2 or 3 required");
  bool batched = av.rank() == 3;
  std::size_t nb = batched ? static_cast<std::size_t>(av.shape[0]) : 1;
  if (batched && av.shape[0] != bv.shape[0]) throw std::invalid_argument("pairwise_sqdist: batch mismatch");
  std::size_t n = static_cast<std::size_t>(av.shape[batched ? 1 : 0]);
  std::size_t m = static_cast<std::size_t>(bv.shape[batched ? 1 : 0]);
  std::size_t d = static_cast<std::size_t>(av.dim(-1));
  if (d != static_cast<std::size_t>(bv.dim(-1))) throw std::invalid_argument("pairwise_sqdist: d mismatch");
  std::vector<int> oshape = batched ? std::vector<int>{static_cast<int>(nb), static_cast<int>(n),
                                                       static_cast<int>(m)}
                                    : std::vector<int>{static_cast<int>(n), static_cast<int>(m)};
  Tensor<T> out(oshape);
  for (std::size_t bi = 0; bi < nb; ++bi)
    lorentz::pairwise_sqdist_expanded(std::span<const T>(av.data.data() + bi * n * d, n * d), n,
                                      std::span<const T>(bv.data.data() + bi * m * d, m * d), m, d,
                                      std::span<T>(out.data.data() + bi * n * m, n * m));
  t.add_madds(static_cast<std::uint64_t>(nb) * (n * m * d + (n + m) * d));
  int aid = a.id, bid = b.id;
  int self = t.size();
  return t.emit(std::move(out), "pairwise_sqdist", {aid, bid}, [aid, bid, self, nb, n, m, d](Tape<T>& tp) {
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& av2 = tp.val(aid);
    const Tensor<T>& bv2 = tp.val(bid);
    for (std::size_t bi = 0; bi < nb; ++bi) {
      const T* G = g.data.data() + bi * n * m;
      const T* A = av2.data.data() + bi * n * d;
      const T* B = bv2.data.data() + bi * m * d;
      T* GA = tp.wants(aid) ? tp.grad(aid).data.data() + bi * n * d : nullptr;
      T* GB = tp.wants(bid) ? tp.grad(bid).data.data() + bi * m * d : nullptr;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          T gij = T(2) * G[i * m + j];
          if (gij == T(0)) continue;
          const T* ai = A + i * d;
          const T* bj = B + j * d;
          for (std::size_t kk = 0; kk < d; ++kk) {
            T diff = ai[kk] - bj[kk];
            if (GA) GA[i * d + kk] += gij * diff;
            if (GB) GB[j * d + kk] -= gij * diff;
          }
        }
    }
  });
}

// ---------------------------------------------------------------------------
// banded temporal attention primitives
// ---------------------------------------------------------------------------

/// Banded q.k logits: Q,K are [B,T,dh]; out[b,t,W+w] = <Q[b,t], K[b,t+w]> for
/// w in [-W, W] with t+w in range, 0 elsewhere (mask the invalid slots before
/// softmax). Multiply-adds are counted for valid slots only.
template <typename T>
Var<T> band_qk(const Var<T>& q, const Var<T>& k, int W) {
  if (W < 1) throw std::invalid_argument("band_qk: W must be >= 1");
  Tape<T>& t = detail::same_tape(q, k);
  const Tensor<T>& qv = q.val();
  const Tensor<T>& kv = k.val();
  if (qv.rank() != 3 || qv.shape != kv.shape) throw std::invalid_argument("band_qk: [B,T,dh] inputs required");
  std::size_t B = static_cast<std::size_t>(qv.shape[0]);
  std::size_t Tn = static_cast<std::size_t>(qv.shape[1]);
  std::size_t dh = static_cast<std::size_t>(qv.shape[2]);
  std::size_t S = 2 * static_cast<std::size_t>(W) + 1;
  Tensor<T> out({static_cast<int>(B), static_cast<int>(Tn), static_cast<int>(S)});
  std::uint64_t valid = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t tt = 0; tt < Tn; ++tt) {
      const T* qr = qv.data.data() + (b * Tn + tt) * dh;
      for (int w = -W; w <= W; ++w) {
        std::ptrdiff_t u = static_cast<std::ptrdiff_t>(tt) + w;
        if (u < 0 || u >= static_cast<std::ptrdiff_t>(Tn)) continue;
        const T* kr = kv.data.data() + (b * Tn + static_cast<std::size_t>(u)) * dh;
        T s = 0;
        for (std::size_t i = 0; i < dh; ++i) s += qr[i] * kr[i];
        out.data[(b * Tn + tt) * S + static_cast<std::size_t>(w + W)] = s;
        valid += dh;
      }
    }
  t.add_madds(valid);
  int qid = q.id, kid = k.id;
  int self = t.size();
  return t.emit(std::move(out), "band_qk", {qid, kid}, [qid, kid, self, B, Tn, dh, W, S](Tape<T>& tp) {
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& qv2 = tp.val(qid);
    const Tensor<T>& kv2 = tp.val(kid);
    T* GQ = tp.wants(qid) ? tp.grad(qid).data.data() : nullptr;
    T* GK = tp.wants(kid) ? tp.grad(kid).data.data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t tt = 0; tt < Tn; ++tt)
        for (int w = -W; w <= W; ++w) {
          std::ptrdiff_t u = static_cast<std::ptrdiff_t>(tt) + w;
          if (u < 0 || u >= static_cast<std::ptrdiff_t>(Tn)) continue;
          T gl = g.data[(b * Tn + tt) * S + static_cast<std::size_t>(w + W)];
          if (gl == T(0)) continue;
          std::size_t qoff = (b * Tn + tt) * dh;
          std::size_t koff = (b * Tn + static_cast<std::size_t>(u)) * dh;
          for (std::size_t i = 0; i < dh; ++i) {
            if (GQ) GQ[qoff + i] += gl * kv2.data[koff + i];
            if (GK) GK[koff + i] += gl * qv2.data[qoff + i];
          }
        }
  });
}

/// Banded value aggregation: out[b,t] = sum_w alpha[b,t,W+w] * V[b,t+w].
template <typename T>
Var<T> band_av(const Var<T>& alpha, const Var<T>& v, int W) {
  if (W < 1) throw std::invalid_argument("band_av: W must be >= 1");
  Tape<T>& t = detail::same_tape(alpha, v);
  const Tensor<T>& av = alpha.val();
  const Tensor<T>& vv = v.val();
  if (av.rank() != 3 || vv.rank() != 3) throw std::invalid_argument("band_av: rank-3 inputs required");
  std::size_t B = static_cast<std::size_t>(vv.shape[0]);
  std::size_t Tn = static_cast<std::size_t>(vv.shape[1]);
  std::size_t dh = static_cast<std::size_t>(vv.shape[2]);
  std::size_t S = 2 * static_cast<std::size_t>(W) + 1;
  if (av.shape[0] != vv.shape[0] || av.shape[1] != vv.shape[1] ||
      av.shape[2] != static_cast<int>(S))
    throw std::invalid_argument("band_av: alpha must be [B,T,2W+1]");
  Tensor<T> out({static_cast<int>(B), static_cast<int>(Tn), static_cast<int>(dh)});
  std::uint64_t valid = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t tt = 0; tt < Tn; ++tt) {
      T* o = out.data.data() + (b * Tn + tt) * dh;
      for (int w = -W; w <= W; ++w) {
        std::ptrdiff_t u = static_cast<std::ptrdiff_t>(tt) + w;
        if (u < 0 || u >= static_cast<std::ptrdiff_t>(Tn)) continue;
        T a = av.data[(b * Tn + tt) * S + static_cast<std::size_t>(w + W)];
        const T* vr = vv.data.data() + (b * Tn + static_cast<std::size_t>(u)) * dh;
        for (std::size_t i = 0; i < dh; ++i) o[i] += a * vr[i];
        valid += dh;
      }
    }
  t.add_madds(valid);
  int aid = alpha.id, vid = v.id;
  int self = t.size();
  return t.emit(std::move(out), "band_av", {aid, vid}, [aid, vid, self, B, Tn, dh, W, S](Tape<T>& tp) {
    const Tensor<T>& g = tp.node(self).grad;
    const Tensor<T>& av2 = tp.val(aid);
    const Tensor<T>& vv2 = tp.val(vid);
    T* GA = tp.wants(aid) ? tp.grad(aid).data.data() : nullptr;
    T* GV = tp.wants(vid) ? tp.grad(vid).data.data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t tt = 0; tt < Tn; ++tt) {
        const T* gr = g.data.data() + (b * Tn + tt) * dh;
        for (int w = -W; w <= W; ++w) {
          std::ptrdiff_t u = static_cast<std::ptrdiff_t>(tt) + w;
          if (u < 0 || u >= static_cast<std::ptrdiff_t>(Tn)) continue;
          std::size_t voff = (b * Tn + static_cast<std::size_t>(u)) * dh;
          std::size_t aoff = (b * Tn + tt) * S + static_cast<std::size_t>(w + W);
          if (GA) {
            T s = 0;
            for (std::size_t i = 0; i < dh; ++i) s += gr[i] * vv2.data[voff + i];
            GA[aoff] += s;
          }
          if (GV) {
            T a = av2.data[aoff];
            for (std::size_t i = 0; i < dh; ++i) GV[voff + i] += a * gr[i];
          }
        }
      }
  });
}

/// Additive band validity mask [T, 2W+1]: 0 on valid slots, -inf elsewhere.
template <typename T>
Tensor<T> band_mask(int Tn, int W) {
  std::size_t S = 2 * static_cast<std::size_t>(W) + 1;
  Tensor<T> m({Tn, static_cast<int>(S)});
  const T ninf = -std::numeric_limits<T>::infinity();
  for (int tt = 0; tt < Tn; ++tt)
    for (int w = -W; w <= W; ++w) {
      int u = tt + w;
      m.data[static_cast<std::size_t>(tt) * S + static_cast<std::size_t>(w + W)] =
          (u < 0 || u >= Tn) ? ninf : T(0);
    }
  return m;
}

}  // namespace lpose::ad
