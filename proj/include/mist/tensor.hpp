#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mist/errors.hpp"
#include "mist/kernels.hpp"

namespace mist {

// Dense row-major tensor with an optional gradient accumulator. Copies are
// shallow handles onto the same buffers; data is never mutated by ops, only
// grad accumulates. Scalar type S is float for training/inference and double
// for gradient-check tests.
template <class S>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<S>> data;
  std::shared_ptr<std::vector<S>> grad;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shp) {
    Tensor t;
    std::size_t n = 1;
    for (int d : shp) {
      if (d < 0) throw ShapeError("tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    t.shape = std::move(shp);
    t.data = std::make_shared<std::vector<S>>(n, S(0));
    return t;
  }

  static Tensor from(std::vector<int> shp, std::vector<S> values) {
    Tensor t = zeros(std::move(shp));
    if (values.size() != t.data->size()) throw ShapeError("tensor: value count does not match shape");
    *t.data = std::move(values);
    return t;
  }

  static Tensor scalar(S v) { return from({1}, {v}); }

  // Leaf parameter: requires_grad with a zero gradient buffer attached.
  static Tensor param(std::vector<int> shp) {
    Tensor t = zeros(std::move(shp));
    t.set_requires_grad();
    return t;
  }

  void set_requires_grad() {
    requires_grad = true;
    if (!grad) grad = std::make_shared<std::vector<S>>(data->size(), S(0));
  }

  std::size_t numel() const { return data ? data->size() : 0; }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_2d() const { return shape.size() == 2; }

  S* ptr() { return data->data(); }
  const S* ptr() const { return data->data(); }
  S* grad_ptr() { return grad->data(); }
  const S* grad_ptr() const { return grad->data(); }

  S value() const {
    if (numel() != 1) throw ContractError("tensor: value() on non-scalar");
    return (*data)[0];
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), S(0));
  }

  bool values_finite() const {
    for (S v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool grad_finite() const {
    if (!grad) return true;
    for (S v : *grad)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Tape of executed operations. One tape per forward pass, confined to one
// thread; backward replays the nodes exactly once in reverse order. The
// active tape is a thread-local pointer managed by TapeScope / NoTapeScope,
// so independent tapes may run concurrently on different threads.
template <class S>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph*& current() {
    thread_local Graph* active = nullptr;
    return active;
  }

  void record(std::function<void()> fn, const Tensor<S>& out) {
    nodes_.push_back(Node{std::move(fn), out.grad});
  }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates. Intermediate (op output) grads
  // are cleared first, so calling backward twice accumulates exactly 2x into
  // the leaves.
  void backward(Tensor<S>& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape));
    if (!loss.requires_grad || !loss.grad)
      throw ContractError("backward: loss is not attached to a recorded graph");
    for (auto& n : nodes_)
      if (n.out_grad) std::fill(n.out_grad->begin(), n.out_grad->end(), S(0));
    (*loss.grad)[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::function<void()> backward;
    std::shared_ptr<std::vector<S>> out_grad;
  };
  std::vector<Node> nodes_;
};

template <class S>
struct TapeScope {
  Graph<S>* prev;
  explicit TapeScope(Graph<S>& g) : prev(Graph<S>::current()) { Graph<S>::current() = &g; }
  ~TapeScope() { Graph<S>::current() = prev; }
};

// Suspends recording (pseudo-target generation inside a training step).
template <class S>
struct NoTapeScope {
  Graph<S>* prev;
  NoTapeScope() : prev(Graph<S>::current()) { Graph<S>::current() = nullptr; }
  ~NoTapeScope() { Graph<S>::current() = prev; }
};

namespace detail {

template <class S>
bool wants_grad(const Tensor<S>& t) {
  return Graph<S>::current() != nullptr && t.requires_grad;
}

template <class S>
void attach_output(Tensor<S>& out) {
  out.set_requires_grad();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Every op returns a fresh tensor; when a tape is active and any input
// requires grad, a backward node is recorded on the tape.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.is_2d() || !b.is_2d() || a.shape[1] != b.shape[0])
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<S> out = Tensor<S>::zeros({m, n});
  kernels::matmul_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (detail::wants_grad(a) || detail::wants_grad(b)) {
    detail::attach_output(out);
    Tensor<S> pa = a, pb = b, po = out;
    Graph<S>::current()->record(
        [pa, pb, po, m, k, n]() mutable {
          if (pa.requires_grad)
            kernels::matmul_nt(po.grad_ptr(), pb.ptr(), pa.grad_ptr(), m, n, k, true);
          if (pb.requires_grad)
            kernels::matmul_tn(pa.ptr(), po.grad_ptr(), pb.grad_ptr(), k, m, n, true);
        },
        out);
  }
  return out;
}

// a[m x k] * b[n x k]^T. Used for attention scores and the tied output head.
template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.is_2d() || !b.is_2d() || a.shape[1] != b.shape[1])
    throw ShapeError("matmul_nt: shape mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape) + "^T");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor<S> out = Tensor<S>::zeros({m, n});
  kernels::matmul_nt(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (detail::wants_grad(a) || detail::wants_grad(b)) {
    detail::attach_output(out);
    Tensor<S> pa = a, pb = b, po = out;
    Graph<S>::current()->record(
        [pa, pb, po, m, k, n]() mutable {
          if (pa.requires_grad)
            kernels::matmul_nn(po.grad_ptr(), pb.ptr(), pa.grad_ptr(), m, n, k, true);
          if (pb.requires_grad)
            kernels::matmul_tn(po.grad_ptr(), pa.ptr(), pb.grad_ptr(), n, m, k, true);
        },
        out);
  }
  return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape)
    throw ShapeError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<S> out = Tensor<S>::zeros(a.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (detail::wants_grad(a) || detail::wants_grad(b)) {
    detail::attach_output(out);
    Tensor<S> pa = a, pb = b, po = out;
    Graph<S>::current()->record(
        [pa, pb, po, n]() mutable {
          if (pa.requires_grad)
            for (std::size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*po.grad)[i];
          if (pb.requires_grad)
            for (std::size_t i = 0; i < n; ++i) (*pb.grad)[i] += (*po.grad)[i];
        },
        out);
  }
  return out;
}

// x[r x c] + row vector v[c] broadcast over rows (bias add).
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
  if (!x.is_2d() || static_cast<int>(v.numel()) != x.shape[1])
    throw ShapeError("add_rowvec: shape mismatch " + shape_str(x.shape) + " + " + shape_str(v.shape));
  const int r = x.shape[0], c = x.shape[1];
  Tensor<S> out = Tensor<S>::zeros(x.shape);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) (*out.data)[i * c + j] = (*x.data)[i * c + j] + (*v.data)[j];
  if (detail::wants_grad(x) || detail::wants_grad(v)) {
    detail::attach_output(out);
    Tensor<S> px = x, pv = v, po = out;
    Graph<S>::current()->record(
        [px, pv, po, r, c]() mutable {
          if (px.requires_grad)
            for (int i = 0; i < r * c; ++i) (*px.grad)[i] += (*po.grad)[i];
          if (pv.requires_grad)
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < c; ++j) (*pv.grad)[j] += (*po.grad)[i * c + j];
        },
        out);
  }
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S s) {
  Tensor<S> out = Tensor<S>::zeros(x.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * s;
  if (detail::wants_grad(x)) {
    detail::attach_output(out);
    Tensor<S> px = x, po = out;
    Graph<S>::current()->record(
        [px, po, s, n]() mutable {
          for (std::size_t i = 0; i < n; ++i) (*px.grad)[i] += (*po.grad)[i] * s;
        },
        out);
  }
  return out;
}

// Gaussian error linear unit, tanh approximation (constant 0.044715).
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor<S> out = Tensor<S>::zeros(x.shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>((*x.data)[i]);
    const double t = std::tanh(kC * (v + kA * v * v * v));
    (*out.data)[i] = static_cast<S>(0.5 * v * (1.0 + t));
  }
  if (detail::wants_grad(x)) {
    detail::attach_output(out);
    Tensor<S> px = x, po = out;
    Graph<S>::current()->record(
        [px, po, n]() mutable {
          for (std::size_t i = 0; i < n; ++i) {
            const double v = static_cast<double>((*px.data)[i]);
            const double u = kC * (v + kA * v * v * v);
            const double t = std::tanh(u);
            const double du = kC * (1.0 + 3.0 * kA * v * v);
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            (*px.grad)[i] += (*po.grad)[i] * static_cast<S>(d);
          }
        },
        out);
  }
  return out;
}

// Row-wise layer norm with affine transform; eps inside the sqrt.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5)) {
  if (!x.is_2d() || static_cast<int>(gamma.numel()) != x.shape[1] || static_cast<int>(beta.numel()) != x.shape[1])
    throw ShapeError("layer_norm: shape mismatch " + shape_str(x.shape) + ", gamma " + shape_str(gamma.shape));
  const int r = x.shape[0], d = x.shape[1];
  Tensor<S> out = Tensor<S>::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<S>>(static_cast<std::size_t>(r) * d);
  auto inv_sigma = std::make_shared<std::vector<S>>(r);
  for (int i = 0; i < r; ++i) {
    const S* row = x.ptr() + static_cast<long>(i) * d;
    S mean = S(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<S>(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) {
      const S c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (int j = 0; j < d; ++j) {
      const S xh = (row[j] - mean) * is;
      (*xhat)[static_cast<long>(i) * d + j] = xh;
      (*out.data)[static_cast<long>(i) * d + j] = xh * (*gamma.data)[j] + (*beta.data)[j];
    }
  }
  if (detail::wants_grad(x) || detail::wants_grad(gamma) || detail::wants_grad(beta)) {
    detail::attach_output(out);
    Tensor<S> px = x, pg = gamma, pb = beta, po = out;
    Graph<S>::current()->record(
        [px, pg, pb, po, xhat, inv_sigma, r, d]() mutable {
          for (int i = 0; i < r; ++i) {
            const S* g = po.grad_ptr() + static_cast<long>(i) * d;
            const S* xh = xhat->data() + static_cast<long>(i) * d;
            if (pg.requires_grad)
              for (int j = 0; j < d; ++j) (*pg.grad)[j] += g[j] * xh[j];
            if (pb.requires_grad)
              for (int j = 0; j < d; ++j) (*pb.grad)[j] += g[j];
            if (px.requires_grad) {
              S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
              for (int j = 0; j < d; ++j) {
                const S dxh = g[j] * (*pg.data)[j];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh[j];
              }
              const S inv_d = S(1) / static_cast<S>(d);
              for (int j = 0; j < d; ++j) {
                const S dxh = g[j] * (*pg.data)[j];
                (*px.grad)[static_cast<long>(i) * d + j] +=
                    (*inv_sigma)[i] * (dxh - sum_dxhat * inv_d - xh[j] * sum_dxhat_xhat * inv_d);
              }
            }
          }
        },
        out);
  }
  return out;
}

namespace detail {

template <class S>
void softmax_row(const S* in, const unsigned char* allow, S* out, int c) {
  S mx = S(0);
  bool any = false;
  for (int j = 0; j < c; ++j) {
    if (allow && !allow[j]) continue;
    if (!any || in[j] > mx) mx = in[j];
    any = true;
  }
  if (!any) {
    // Fully masked row (padding): no attention anywhere.
    for (int j = 0; j < c; ++j) out[j] = S(0);
    return;
  }
  S denom = S(0);
  for (int j = 0; j < c; ++j) {
    if (allow && !allow[j]) {
      out[j] = S(0);
      continue;
    }
    out[j] = std::exp(in[j] - mx);
    denom += out[j];
  }
  const S inv = S(1) / denom;
  for (int j = 0; j < c; ++j) out[j] *= inv;
}

// dL/ds_j = p_j * (g_j - sum_k p_k g_k); masked entries have p_j = 0.
template <class S>
void softmax_row_backward(const S* p, const S* g, S* ds, int c) {
  S dot = S(0);
  for (int j = 0; j < c; ++j) dot += p[j] * g[j];
  for (int j = 0; j < c; ++j) ds[j] += p[j] * (g[j] - dot);
}

}  // namespace detail

// Row-wise softmax with max-subtraction.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  if (!x.is_2d()) throw ShapeError("softmax_rows: expected 2-d tensor, got " + shape_str(x.shape));
  const int r = x.shape[0], c = x.shape[1];
  Tensor<S> out = Tensor<S>::zeros(x.shape);
  for (int i = 0; i < r; ++i)
    detail::softmax_row<S>(x.ptr() + static_cast<long>(i) * c, nullptr, out.ptr() + static_cast<long>(i) * c, c);
  if (detail::wants_grad(x)) {
    detail::attach_output(out);
    Tensor<S> px = x, po = out;
    Graph<S>::current()->record(
        [px, po, r, c]() mutable {
          for (int i = 0; i < r; ++i)
            detail::softmax_row_backward<S>(po.ptr() + static_cast<long>(i) * c,
                                            po.grad_ptr() + static_cast<long>(i) * c,
                                            px.grad_ptr() + static_cast<long>(i) * c, c);
        },
        out);
  }
  return out;
}

// Softmax restricted to allowed entries; disallowed entries get exactly zero
// probability and zero gradient, which is what makes the source/target
// attention partition exact rather than approximate.
template <class S>
Tensor<S> masked_softmax_rows(const Tensor<S>& x, const std::vector<unsigned char>& mask) {
  if (!x.is_2d()) throw ShapeError("masked_softmax_rows: expected 2-d tensor");
  const int r = x.shape[0], c = x.shape[1];
  if (mask.size() != static_cast<std::size_t>(r) * c)
    throw ShapeError("masked_softmax_rows: mask size mismatch with " + shape_str(x.shape));
  auto m = std::make_shared<std::vector<unsigned char>>(mask);
  Tensor<S> out = Tensor<S>::zeros(x.shape);
  for (int i = 0; i < r; ++i)
    detail::softmax_row<S>(x.ptr() + static_cast<long>(i) * c, m->data() + static_cast<long>(i) * c,
                           out.ptr() + static_cast<long>(i) * c, c);
  if (detail::wants_grad(x)) {
    detail::attach_output(out);
    Tensor<S> px = x, po = out;
    Graph<S>::current()->record(
        [px, po, r, c]() mutable {
          for (int i = 0; i < r; ++i)
            detail::softmax_row_backward<S>(po.ptr() + static_cast<long>(i) * c,
                                            po.grad_ptr() + static_cast<long>(i) * c,
                                            px.grad_ptr() + static_cast<long>(i) * c, c);
        },
        out);
  }
  return out;
}

// Row gather; backward scatter-adds into the table gradient.
template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids) {
  if (!table.is_2d()) throw ShapeError("embedding_lookup: table must be 2-d");
  const int v = table.shape[0], d = table.shape[1];
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range [0, " + std::to_string(v) + ")");
  const int n = static_cast<int>(ids.size());
  Tensor<S> out = Tensor<S>::zeros({n, d});
  for (int i = 0; i < n; ++i)
    std::copy_n(table.ptr() + static_cast<long>(ids[i]) * d, d, out.ptr() + static_cast<long>(i) * d);
  if (detail::wants_grad(table)) {
    detail::attach_output(out);
    Tensor<S> pt = table, po = out;
    auto pids = std::make_shared<std::vector<int>>(ids);
    Graph<S>::current()->record(
        [pt, po, pids, d]() mutable {
          for (std::size_t i = 0; i < pids->size(); ++i) {
            const S* g = po.grad_ptr() + i * d;
            S* dst = pt.grad_ptr() + static_cast<long>((*pids)[i]) * d;
            for (int j = 0; j < d; ++j) dst[j] += g[j];
          }
        },
        out);
  }
  return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, int r0, int r1) {
  if (!x.is_2d() || r0 < 0 || r1 > x.shape[0] || r0 > r1)
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + ", " + std::to_string(r1) + ") on " + shape_str(x.shape));
  const int c = x.shape[1], n = r1 - r0;
  Tensor<S> out = Tensor<S>::zeros({n, c});
  std::copy_n(x.ptr() + static_cast<long>(r0) * c, static_cast<long>(n) * c, out.ptr());
  if (detail::wants_grad(x)) {
    detail::attach_output(out);
    Tensor<S> px = x, po = out;
    Graph<S>::current()->record(
        [px, po, r0, n, c]() mutable {
          const S* g = po.grad_ptr();
          S* dst = px.grad_ptr() + static_cast<long>(r0) * c;
          for (long i = 0; i < static_cast<long>(n) * c; ++i) dst[i] += g[i];
        },
        out);
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int c1) {
  if (!x.is_2d() || c0 < 0 || c1 > x.shape[1] || c0 > c1)
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + ", " + std::to_string(c1) + ") on " + shape_str(x.shape));
  const int r = x.shape[0], c = x.shape[1], w = c1 - c0;
  Tensor<S> out = Tensor<S>::zeros({r, w});
  for (int i = 0; i < r; ++i)
    std::copy_n(x.ptr() + static_cast<long>(i) * c + c0, w, out.ptr() + static_cast<long>(i) * w);
  if (detail::wants_grad(x)) {
    detail::attach_output(out);
    Tensor<S> px = x, po = out;
    Graph<S>::current()->record(
        [px, po, r, c, c0, w]() mutable {
          for (int i = 0; i < r; ++i) {
            const S* g = po.grad_ptr() + static_cast<long>(i) * w;
            S* dst = px.grad_ptr() + static_cast<long>(i) * c + c0;
            for (int j = 0; j < w; ++j) dst[j] += g[j];
          }
        },
        out);
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  const int c = parts[0].cols();
  int r = 0;
  for (const auto& p : parts) {
    if (!p.is_2d() || p.shape[1] != c) throw ShapeError("concat_rows: column mismatch");
    r += p.shape[0];
  }
  Tensor<S> out = Tensor<S>::zeros({r, c});
  long off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.ptr(), p.numel(), out.ptr() + off);
    off += static_cast<long>(p.numel());
  }
  bool any = false;
  for (const auto& p : parts) any = any || detail::wants_grad(p);
  if (any) {
    detail::attach_output(out);
    auto pp = std::make_shared<std::vector<Tensor<S>>>(parts);
    Tensor<S> po = out;
    Graph<S>::current()->record(
        [pp, po]() mutable {
          long off2 = 0;
          for (auto& p : *pp) {
            if (p.requires_grad) {
              const S* g = po.grad_ptr() + off2;
              for (std::size_t i = 0; i < p.numel(); ++i) (*p.grad)[i] += g[i];
            }
            off2 += static_cast<long>(p.numel());
          }
        },
        out);
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  const int r = parts[0].rows();
  int c = 0;
  for (const auto& p : parts) {
    if (!p.is_2d() || p.shape[0] != r) throw ShapeError("concat_cols: row mismatch");
    c += p.shape[1];
  }
  Tensor<S> out = Tensor<S>::zeros({r, c});
  int coff = 0;
  for (const auto& p : parts) {
    const int w = p.shape[1];
    for (int i = 0; i < r; ++i)
      std::copy_n(p.ptr() + static_cast<long>(i) * w, w, out.ptr() + static_cast<long>(i) * c + coff);
    coff += w;
  }
  bool any = false;
  for (const auto& p : parts) any = any || detail::wants_grad(p);
  if (any) {
    detail::attach_output(out);
    auto pp = std::make_shared<std::vector<Tensor<S>>>(parts);
    Tensor<S> po = out;
    Graph<S>::current()->record(
        [pp, po, r, c]() mutable {
          int coff2 = 0;
          for (auto& p : *pp) {
            const int w = p.shape[1];
            if (p.requires_grad)
              for (int i = 0; i < r; ++i) {
                const S* g = po.grad_ptr() + static_cast<long>(i) * c + coff2;
                S* dst = p.grad_ptr() + static_cast<long>(i) * w;
                for (int j = 0; j < w; ++j) dst[j] += g[j];
              }
            coff2 += w;
          }
        },
        out);
  }
  return out;
}

// Mean over masked rows of -log softmax(logits)[target]. Gradient on masked
// rows is (softmax - onehot) / count, zero elsewhere.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets,
                        const std::vector<unsigned char>& mask) {
  if (!logits.is_2d()) throw ShapeError("cross_entropy: logits must be 2-d");
  const int n = logits.shape[0], v = logits.shape[1];
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
    throw ShapeError("cross_entropy: targets/mask length mismatch with " + shape_str(logits.shape));
  int count = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || targets[i] >= v)
      throw ShapeError("cross_entropy: target id " + std::to_string(targets[i]) + " out of range [0, " +
                       std::to_string(v) + ")");
  }
  if (count == 0) throw ContractError("cross_entropy: degenerate batch, mask selects no positions");

  auto probs = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n) * v);
  S loss = S(0);
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const S* row = logits.ptr() + static_cast<long>(i) * v;
    S* prow = probs->data() + static_cast<long>(i) * v;
    S mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    S denom = S(0);
    for (int j = 0; j < v; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    const S inv = S(1) / denom;
    for (int j = 0; j < v; ++j) prow[j] *= inv;
    loss += std::log(denom) + mx - row[targets[i]];
  }
  loss /= static_cast<S>(count);

  Tensor<S> out = Tensor<S>::scalar(loss);
  if (detail::wants_grad(logits)) {
    detail::attach_output(out);
    Tensor<S> pl = logits, po = out;
    auto pt = std::make_shared<std::vector<int>>(targets);
    auto pm = std::make_shared<std::vector<unsigned char>>(mask);
    Graph<S>::current()->record(
        [pl, po, pt, pm, probs, n, v, count]() mutable {
          const S up = (*po.grad)[0] / static_cast<S>(count);
          for (int i = 0; i < n; ++i) {
            if (!(*pm)[i]) continue;
            const S* prow = probs->data() + static_cast<long>(i) * v;
            S* g = pl.grad_ptr() + static_cast<long>(i) * v;
            for (int j = 0; j < v; ++j) g[j] += up * prow[j];
            g[(*pt)[i]] -= up;
          }
        },
        out);
  }
  return out;
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S s = S(0);
  for (S v : *x.data) s += v;
  Tensor<S> out = Tensor<S>::scalar(s);
  if (detail::wants_grad(x)) {
    detail::attach_output(out);
    Tensor<S> px = x, po = out;
    Graph<S>::current()->record(
        [px, po]() mutable {
          const S g = (*po.grad)[0];
          for (std::size_t i = 0; i < px.numel(); ++i) (*px.grad)[i] += g;
        },
        out);
  }
  return out;
}

template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_rowvec(matmul(x, w), b);
}

// Truncated normal init (resample outside 2 sigma), std 0.02 by default.
template <class S>
void fill_trunc_normal(Tensor<S>& t, std::mt19937_64& rng, double stddev = 0.02) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : *t.data) {
    double z = dist(rng);
    while (std::abs(z) > 2.0 * stddev) z = dist(rng);
    v = static_cast<S>(z);
  }
}

}  // namespace mist
