#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cloak/errors.hpp"
#include "cloak/random.hpp"

namespace cloak {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

// One record in the define-by-run graph. Nodes are created in program order;
// ids are monotone within a worker, so iterating reachable nodes by
// descending id is a valid reverse-topological order for backward.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first backward touch
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents
  std::uint64_t id = 0;
  std::uint64_t visit_token = 0;  // scratch for backward traversal

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline std::uint64_t next_visit_token() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Scoped switch that stops ops from recording backward closures.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Value-semantics handle to a graph node. A Tensor produced by an op keeps
// its inputs alive through parent edges; the graph is rebuilt on every
// forward pass and freed when the last handle goes away.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return make_leaf(std::move(shape), {}, requires_grad, 0.0);
  }

  static Tensor full(Shape shape, double v) {
    return make_leaf(std::move(shape), {}, false, v);
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false) {
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("from_data: shape " + shape_str(shape) + " expects " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(data.size()));
    Tensor t;
    t.n_ = std::make_shared<detail::Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    t.n_->id = detail::next_node_id();
    return t;
  }

  static Tensor randn(const Shape& shape, RandomStream& rng) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (double& x : v) x = rng.normal();
    return from_data(shape, std::move(v));
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return n_->size(); }

  double* data() { return n_->value.data(); }
  const double* data() const { return n_->value.data(); }
  std::vector<double>& values() { return n_->value; }
  const std::vector<double>& values() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    n_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !n_->grad.empty(); }
  const std::vector<double>& grad() const { return n_->grad; }
  std::vector<double>& grad() { return n_->grad; }
  void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

  double item() const {
    if (size() != 1)
      throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return n_->value[0];
  }

  // Same values, fresh constant leaf outside any graph.
  Tensor detach() const { return from_data(n_->shape, n_->value, false); }

  // Deep copy as a leaf.
  Tensor clone(bool requires_grad = false) const {
    return from_data(n_->shape, n_->value, requires_grad);
  }

  bool all_finite() const {
    for (double v : n_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::shared_ptr<detail::Node> node() const { return n_; }

 private:
  static Tensor make_leaf(Shape shape, std::vector<double>, bool requires_grad,
                          double fill) {
    Tensor t;
    t.n_ = std::make_shared<detail::Node>();
    t.n_->value.assign(static_cast<std::size_t>(numel(shape)), fill);
    t.n_->shape = std::move(shape);
    t.n_->requires_grad = requires_grad;
    t.n_->id = detail::next_node_id();
    return t;
  }

  std::shared_ptr<detail::Node> n_;
};

namespace detail {

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!grad_mode_flag()) return false;
  for (const Tensor* t : inputs)
    if (t && t->node()->requires_grad) return true;
  return false;
}

inline Tensor make_op_node(Shape shape, std::vector<double> value, bool record,
                           std::vector<std::shared_ptr<Node>> parents,
                           std::function<void(Node&)> backward_fn) {
  Tensor t = Tensor::from_data(std::move(shape), std::move(value));
  if (record) {
    t.node()->requires_grad = true;
    t.node()->parents = std::move(parents);
    t.node()->backward_fn = std::move(backward_fn);
  }
  return t;
}

// Trailing-dimension broadcast: shapes align from the right, size-1 extents
// stretch. Anything else must be reshaped explicitly by the caller.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int da = i < ra ? a[static_cast<std::size_t>(ra - 1 - i)] : 1;
    const int db = i < rb ? b[static_cast<std::size_t>(rb - 1 - i)] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("broadcast: incompatible shapes " + shape_str(a) +
                       " and " + shape_str(b));
    out[static_cast<std::size_t>(r - 1 - i)] = std::max(da, db);
  }
  return out;
}

constexpr int kMaxRank = 4;

struct BcastPlan {
  std::int64_t n = 0;
  int rank = 0;
  std::int64_t out_stride[kMaxRank] = {0, 0, 0, 0};
  std::int64_t a_stride[kMaxRank] = {0, 0, 0, 0};
  std::int64_t b_stride[kMaxRank] = {0, 0, 0, 0};
  int extent[kMaxRank] = {1, 1, 1, 1};
  bool same_shape = false;
};

inline void fill_strides(const Shape& s, const Shape& out, std::int64_t* strides,
                         int out_rank) {
  const int r = static_cast<int>(s.size());
  std::int64_t running = 1;
  // compute row-major strides of s, then align to out from the right,
  // zeroing stretched dims
  std::vector<std::int64_t> own(static_cast<std::size_t>(r));
  for (int i = r - 1; i >= 0; --i) {
    own[static_cast<std::size_t>(i)] = running;
    running *= s[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < out_rank; ++i) {
    const int si = i - (out_rank - r);
    if (si < 0) {
      strides[i] = 0;
    } else {
      const int ext = s[static_cast<std::size_t>(si)];
      strides[i] = (ext == 1 && out[static_cast<std::size_t>(i)] != 1)
                       ? 0
                       : own[static_cast<std::size_t>(si)];
    }
  }
}

inline BcastPlan plan_broadcast(const Shape& a, const Shape& b, const Shape& out) {
  BcastPlan p;
  p.rank = static_cast<int>(out.size());
  if (p.rank > kMaxRank)
    throw ShapeError("broadcast: rank > " + std::to_string(kMaxRank) +
                     " unsupported, got " + shape_str(out));
  p.n = numel(out);
  p.same_shape = (a == b);
  std::int64_t running = 1;
  for (int i = p.rank - 1; i >= 0; --i) {
    p.extent[i] = out[static_cast<std::size_t>(i)];
    p.out_stride[i] = running;
    running *= out[static_cast<std::size_t>(i)];
  }
  fill_strides(a, out, p.a_stride, p.rank);
  fill_strides(b, out, p.b_stride, p.rank);
  return p;
}

template <class F>
inline void for_each_broadcast(const BcastPlan& p, F&& f) {
  int idx[kMaxRank] = {0, 0, 0, 0};
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t lin = 0; lin < p.n; ++lin) {
    f(lin, oa, ob);
    for (int d = p.rank - 1; d >= 0; --d) {
      ++idx[d];
      oa += p.a_stride[d];
      ob += p.b_stride[d];
      if (idx[d] < p.extent[d]) break;
      idx[d] = 0;
      oa -= p.a_stride[d] * p.extent[d];
      ob -= p.b_stride[d] * p.extent[d];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

enum class EwOp { add, sub, mul, div, relu, square, scale };

namespace detail {

inline Tensor binary_ew(EwOp op, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const BcastPlan plan = plan_broadcast(a.shape(), b.shape(), out_shape);
  std::vector<double> out(static_cast<std::size_t>(plan.n));
  const double* pa = a.data();
  const double* pb = b.data();

  if (plan.same_shape) {
    const std::int64_t n = plan.n;
    switch (op) {
      case EwOp::add:
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] + pb[i];
        break;
      case EwOp::sub:
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] - pb[i];
        break;
      case EwOp::mul:
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] * pb[i];
        break;
      case EwOp::div:
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] / pb[i];
        break;
      default:
        throw ShapeError("binary_ew: not a binary op");
    }
  } else {
    for_each_broadcast(plan, [&](std::int64_t lin, std::int64_t oa, std::int64_t ob) {
      const double x = pa[oa], y = pb[ob];
      double r = 0;
      switch (op) {
        case EwOp::add: r = x + y; break;
        case EwOp::sub: r = x - y; break;
        case EwOp::mul: r = x * y; break;
        case EwOp::div: r = x / y; break;
        default: throw ShapeError("binary_ew: not a binary op");
      }
      out[static_cast<std::size_t>(lin)] = r;
    });
  }

  const bool record = should_record({&a, &b});
  if (!record) return Tensor::from_data(out_shape, std::move(out));

  auto an = a.node();
  auto bn = b.node();
  return make_op_node(
      out_shape, std::move(out), true, {an, bn},
      [op, plan, an = an.get(), bn = bn.get()](Node& self) {
        const bool need_a = an->requires_grad;
        const bool need_b = bn->requires_grad;
        if (need_a) an->ensure_grad();
        if (need_b) bn->ensure_grad();
        const double* g = self.grad.data();
        const double* pa = an->value.data();
        const double* pb = bn->value.data();
        for_each_broadcast(plan, [&](std::int64_t lin, std::int64_t oa, std::int64_t ob) {
          const double gi = g[lin];
          switch (op) {
            case EwOp::add:
              if (need_a) an->grad[static_cast<std::size_t>(oa)] += gi;
              if (need_b) bn->grad[static_cast<std::size_t>(ob)] += gi;
              break;
            case EwOp::sub:
              if (need_a) an->grad[static_cast<std::size_t>(oa)] += gi;
              if (need_b) bn->grad[static_cast<std::size_t>(ob)] -= gi;
              break;
            case EwOp::mul:
              if (need_a) an->grad[static_cast<std::size_t>(oa)] += gi * pb[ob];
              if (need_b) bn->grad[static_cast<std::size_t>(ob)] += gi * pa[oa];
              break;
            case EwOp::div: {
              const double inv = 1.0 / pb[ob];
              if (need_a) an->grad[static_cast<std::size_t>(oa)] += gi * inv;
              if (need_b)
                bn->grad[static_cast<std::size_t>(ob)] -= gi * pa[oa] * inv * inv;
              break;
            }
            default: break;
          }
        });
      });
}

inline Tensor unary_ew(EwOp op, const Tensor& a, double k = 0.0) {
  const std::int64_t n = a.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.data();
  switch (op) {
    case EwOp::relu:
      for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = pa[i] > 0.0 ? pa[i] : 0.0;
      break;
    case EwOp::square:
      for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] * pa[i];
      break;
    case EwOp::scale:
      for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] * k;
      break;
    default:
      throw ShapeError("unary_ew: not a unary op");
  }
  const bool record = should_record({&a});
  if (!record) return Tensor::from_data(a.shape(), std::move(out));

  auto an = a.node();
  return make_op_node(a.shape(), std::move(out), true, {an},
                      [op, k, an = an.get()](Node& self) {
                        an->ensure_grad();
                        const double* g = self.grad.data();
                        const double* pa = an->value.data();
                        const std::int64_t n = self.size();
                        switch (op) {
                          case EwOp::relu:
                            for (std::int64_t i = 0; i < n; ++i)
                              if (pa[i] > 0.0) an->grad[static_cast<std::size_t>(i)] += g[i];
                            break;
                          case EwOp::square:
                            for (std::int64_t i = 0; i < n; ++i)
                              an->grad[static_cast<std::size_t>(i)] += 2.0 * pa[i] * g[i];
                            break;
                          case EwOp::scale:
                            for (std::int64_t i = 0; i < n; ++i)
                              an->grad[static_cast<std::size_t>(i)] += k * g[i];
                            break;
                          default: break;
                        }
                      });
}

}  // namespace detail

// Dispatcher form; op_kind in {add, sub, mul, div, relu, square, scale}.
inline Tensor elementwise(EwOp op, const Tensor& a, const Tensor* b = nullptr,
                          double scalar = 0.0) {
  switch (op) {
    case EwOp::add:
    case EwOp::sub:
    case EwOp::mul:
    case EwOp::div:
      if (!b) throw ShapeError("elementwise: binary op needs two operands");
      return detail::binary_ew(op, a, *b);
    case EwOp::relu:
    case EwOp::square:
      return detail::unary_ew(op, a);
    case EwOp::scale:
      return detail::unary_ew(op, a, scalar);
  }
  throw ShapeError("elementwise: unknown op");
}

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary_ew(EwOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary_ew(EwOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary_ew(EwOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary_ew(EwOp::div, a, b); }
inline Tensor relu(const Tensor& a) { return detail::unary_ew(EwOp::relu, a); }
inline Tensor square(const Tensor& a) { return detail::unary_ew(EwOp::square, a); }
inline Tensor scale(const Tensor& a, double k) { return detail::unary_ew(EwOp::scale, a, k); }

// sqrt(x + eps^2)-style smooth root; used by total-variation objectives.
inline Tensor sqrt_ew(const Tensor& a) {
  const std::int64_t n = a.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.data();
  for (std::int64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = std::sqrt(pa[i]);
  const bool record = detail::should_record({&a});
  if (!record) return Tensor::from_data(a.shape(), std::move(out));
  auto an = a.node();
  return detail::make_op_node(a.shape(), std::move(out), true, {an},
                              [an = an.get()](detail::Node& self) {
                                an->ensure_grad();
                                const double* g = self.grad.data();
                                const double* y = self.value.data();
                                const std::int64_t n = self.size();
                                for (std::int64_t i = 0; i < n; ++i)
                                  an->grad[static_cast<std::size_t>(i)] +=
                                      g[i] * 0.5 / y[i];
                              });
}

// ---------------------------------------------------------------------------
// Linear algebra. The three GEMM kernels below are the hot path for every
// convolution (via im2col); inner loops are unit-stride and j-tiled so the
// accumulator tile stays in L1.

namespace detail {

constexpr int kGemmTile = 256;

// Shared j-tiled kernel: each C row accumulates in an L1-resident buffer
// while the B tile stays hot. ATrans selects A[l,i] vs A[i,l] indexing;
// with Accumulate off, C is overwritten and may start uninitialized.
template <bool ATrans, bool Accumulate = true>
inline void gemm_tiled(int m, int kk, int n, const double* __restrict__ a,
                       const double* __restrict__ b, double* __restrict__ c) {
  double acc[kGemmTile];
  for (int j0 = 0; j0 < n; j0 += kGemmTile) {
    const int jw = std::min(n - j0, kGemmTile);
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<std::size_t>(i) * n + j0;
      if (Accumulate) {
        for (int j = 0; j < jw; ++j) acc[j] = crow[j];
      } else {
        for (int j = 0; j < jw; ++j) acc[j] = 0.0;
      }
      for (int l = 0; l < kk; ++l) {
        const double av = ATrans ? a[static_cast<std::size_t>(l) * m + i]
                                 : a[static_cast<std::size_t>(i) * kk + l];
        const double* brow = b + static_cast<std::size_t>(l) * n + j0;
        for (int j = 0; j < jw; ++j) acc[j] += av * brow[j];
      }
      for (int j = 0; j < jw; ++j) crow[j] = acc[j];
    }
  }
}

// C[m,n] += A[m,kk] * B[kk,n]
inline void gemm_nn(int m, int kk, int n, const double* a, const double* b, double* c) {
  gemm_tiled<false>(m, kk, n, a, b, c);
}

// C[m,n] += A[kk,m]^T * B[kk,n]
inline void gemm_tn(int m, int kk, int n, const double* a, const double* b, double* c) {
  gemm_tiled<true>(m, kk, n, a, b, c);
}

// Dot product with eight interleaved accumulators summed in a fixed order;
// the lane loop vectorizes while results stay deterministic run to run.
inline double dot_lanes(int kk, const double* __restrict__ a, const double* __restrict__ b) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int l = 0;
  for (; l + 8 <= kk; l += 8)
    for (int k = 0; k < 8; ++k) lanes[k] += a[l + k] * b[l + k];
  double tail = 0.0;
  for (; l < kk; ++l) tail += a[l] * b[l];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

// C[m,n] += A[m,kk] * B[n,kk]^T  (rows of B dotted with rows of A)
inline void gemm_nt(int m, int kk, int n, const double* __restrict__ a,
                    const double* __restrict__ b, double* __restrict__ c) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * kk;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j)
      crow[j] += dot_lanes(kk, arow, b + static_cast<std::size_t>(j) * kk);
  }
}

// Patch matrix [ci*kh*kw, oh*ow] with zero padding.
inline void im2col(const double* __restrict__ x, int ci, int h, int w, int kh, int kw,
                   int stride, int pad, int oh, int ow, double* __restrict__ cols) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < ci; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        double* dst = cols + ((static_cast<std::size_t>(c) * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* drow = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::memset(drow, 0, sizeof(double) * static_cast<std::size_t>(ow));
            continue;
          }
          const double* xrow = xc + static_cast<std::size_t>(iy) * w;
          const int ix0 = -pad + kx;
          int lo = 0, hi = ow;
          if (ix0 < 0) lo = (-ix0 + stride - 1) / stride;
          if (ix0 + (ow - 1) * stride >= w) hi = (w - ix0 + stride - 1) / stride;
          if (hi < lo) hi = lo;
          for (int ox = 0; ox < lo; ++ox) drow[ox] = 0.0;
          if (stride == 1) {
            std::memcpy(drow + lo, xrow + ix0 + lo,
                        sizeof(double) * static_cast<std::size_t>(hi - lo));
          } else {
            for (int ox = lo; ox < hi; ++ox) drow[ox] = xrow[ix0 + ox * stride];
          }
          for (int ox = hi; ox < ow; ++ox) drow[ox] = 0.0;
        }
      }
  }
}

// Scatter-add the patch-matrix gradient back onto the input image.
inline void col2im_add(const double* __restrict__ cols, int ci, int h, int w, int kh, int kw,
                       int stride, int pad, int oh, int ow, double* __restrict__ dx) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < ci; ++c) {
    double* xc = dx + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const double* src = cols + ((static_cast<std::size_t>(c) * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* xrow = xc + static_cast<std::size_t>(iy) * w;
          const double* srow = src + static_cast<std::size_t>(oy) * ow;
          const int ix0 = -pad + kx;
          int lo = 0, hi = ow;
          if (ix0 < 0) lo = (-ix0 + stride - 1) / stride;
          if (ix0 + (ow - 1) * stride >= w) hi = (w - ix0 + stride - 1) / stride;
          for (int ox = lo; ox < hi; ++ox) xrow[ix0 + ox * stride] += srow[ox];
        }
      }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects rank-2 operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  detail::gemm_nn(m, k, n, a.data(), b.data(), out.data());
  const bool record = detail::should_record({&a, &b});
  if (!record) return Tensor::from_data({m, n}, std::move(out));

  auto an = a.node();
  auto bn = b.node();
  return detail::make_op_node(
      {m, n}, std::move(out), true, {an, bn},
      [m, k, n, an = an.get(), bn = bn.get()](detail::Node& self) {
        const double* g = self.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          detail::gemm_nt(m, n, k, g, bn->value.data(), an->grad.data());
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::gemm_tn(k, m, n, an->value.data(), g, bn->grad.data());
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions and spatial ops. Images are [C,H,W] row-major.

inline Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int pad) {
  if (x.rank() != 3 || kernels.rank() != 4)
    throw ShapeError("conv2d: expects x[C,H,W], kernels[O,C,k,k], got " +
                     shape_str(x.shape()) + " and " + shape_str(kernels.shape()));
  const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int co = kernels.dim(0), kc = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kc != ci)
    throw ShapeError("conv2d: channel mismatch, x " + shape_str(x.shape()) +
                     " vs kernels " + shape_str(kernels.shape()));
  if (kh != kw || kh % 2 == 0)
    throw ShapeError("conv2d: kernel must be odd and square, got " +
                     shape_str(kernels.shape()));
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  if (kh > h + 2 * pad || kw > w + 2 * pad)
    throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) +
                     " larger than padded input " + shape_str(x.shape()));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  const int patch = ci * kh * kw;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;

  std::unique_ptr<double[]> cols(new double[static_cast<std::size_t>(patch) * plane]);
  detail::im2col(x.data(), ci, h, w, kh, kw, stride, pad, oh, ow, cols.get());
  std::vector<double> out(static_cast<std::size_t>(co) * plane);
  detail::gemm_tiled<false, false>(co, patch, static_cast<int>(plane), kernels.data(),
                                   cols.get(), out.data());

  const bool record = detail::should_record({&x, &kernels});
  if (!record) return Tensor::from_data({co, oh, ow}, std::move(out));

  auto xn = x.node();
  auto kn = kernels.node();
  return detail::make_op_node(
      {co, oh, ow}, std::move(out), true, {xn, kn},
      [ci, h, w, co, kh, kw, oh, ow, stride, pad, patch, plane, xn = xn.get(),
       kn = kn.get()](detail::Node& self) {
        const double* g = self.grad.data();
        if (kn->requires_grad) {
          kn->ensure_grad();
          std::unique_ptr<double[]> cols(new double[static_cast<std::size_t>(patch) * plane]);
          detail::im2col(xn->value.data(), ci, h, w, kh, kw, stride, pad, oh, ow, cols.get());
          detail::gemm_nt(co, static_cast<int>(plane), patch, g, cols.get(),
                          kn->grad.data());
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          std::unique_ptr<double[]> dcols(new double[static_cast<std::size_t>(patch) * plane]);
          detail::gemm_tiled<true, false>(patch, co, static_cast<int>(plane),
                                          kn->value.data(), g, dcols.get());
          detail::col2im_add(dcols.get(), ci, h, w, kh, kw, stride, pad, oh, ow,
                             xn->grad.data());
        }
      });
}

namespace detail {
// reflect-101 index map: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}
}  // namespace detail

// Same-size filtering of each channel with one 2-D kernel under reflect
// padding. The kernel is treated as a constant; gradients flow to x only.
inline Tensor depthwise_filter2d(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 3 || kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1) ||
      kernel.dim(0) % 2 == 0)
    throw ShapeError("depthwise_filter2d: expects x[C,H,W] and odd square kernel, got " +
                     shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int k = kernel.dim(0), half = k / 2;
  std::vector<double> out(static_cast<std::size_t>(c) * h * w, 0.0);
  const double* px = x.data();
  const double* pk = kernel.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* xc = px + static_cast<std::size_t>(ch) * h * w;
    double* oc = out.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int ky = 0; ky < k; ++ky) {
        const int iy = detail::reflect_index(y + ky - half, h);
        const double* xrow = xc + static_cast<std::size_t>(iy) * w;
        const double* krow = pk + static_cast<std::size_t>(ky) * k;
        double* orow = oc + static_cast<std::size_t>(y) * w;
        for (int xo = 0; xo < w; ++xo) {
          double acc = 0.0;
          for (int kx = 0; kx < k; ++kx)
            acc += krow[kx] * xrow[detail::reflect_index(xo + kx - half, w)];
          orow[xo] += acc;
        }
      }
  }
  const bool record = detail::should_record({&x});
  if (!record) return Tensor::from_data(x.shape(), std::move(out));

  auto xn = x.node();
  auto kern = kernel.detach();
  return detail::make_op_node(
      x.shape(), std::move(out), true, {xn},
      [c, h, w, k, half, kern, xn = xn.get()](detail::Node& self) {
        xn->ensure_grad();
        const double* g = self.grad.data();
        const double* pk = kern.data();
        for (int ch = 0; ch < c; ++ch) {
          double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * h * w;
          const double* gc = g + static_cast<std::size_t>(ch) * h * w;
          for (int y = 0; y < h; ++y)
            for (int ky = 0; ky < k; ++ky) {
              const int iy = detail::reflect_index(y + ky - half, h);
              const double* krow = pk + static_cast<std::size_t>(ky) * k;
              const double* grow = gc + static_cast<std::size_t>(y) * w;
              double* gxrow = gx + static_cast<std::size_t>(iy) * w;
              for (int xo = 0; xo < w; ++xo) {
                const double gv = grow[xo];
                for (int kx = 0; kx < k; ++kx)
                  gxrow[detail::reflect_index(xo + kx - half, w)] += krow[kx] * gv;
              }
            }
        }
      });
}

inline Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() != 3)
    throw ShapeError("upsample_nearest2x: expects [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = 2 * h, ow = 2 * w;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const double* px = x.data();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y) {
      const double* xrow = px + (static_cast<std::size_t>(ch) * h + y / 2) * w;
      double* orow = out.data() + (static_cast<std::size_t>(ch) * oh + y) * ow;
      for (int xo = 0; xo < ow; ++xo) orow[xo] = xrow[xo / 2];
    }
  const bool record = detail::should_record({&x});
  if (!record) return Tensor::from_data({c, oh, ow}, std::move(out));
  auto xn = x.node();
  return detail::make_op_node(
      {c, oh, ow}, std::move(out), true, {xn},
      [c, h, w, oh, ow, xn = xn.get()](detail::Node& self) {
        xn->ensure_grad();
        const double* g = self.grad.data();
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < oh; ++y) {
            double* gxrow = xn->grad.data() + (static_cast<std::size_t>(ch) * h + y / 2) * w;
            const double* grow = g + (static_cast<std::size_t>(ch) * oh + y) * ow;
            for (int xo = 0; xo < ow; ++xo) gxrow[xo / 2] += grow[xo];
          }
      });
}

// Bilinear resize with half-pixel centers. Each output pixel is a convex
// combination of at most four inputs, so [0,1] ranges are preserved.
inline Tensor resize_bilinear(const Tensor& x, int oh, int ow) {
  if (x.rank() != 3)
    throw ShapeError("resize_bilinear: expects [C,H,W], got " + shape_str(x.shape()));
  if (oh < 1 || ow < 1) throw ShapeError("resize_bilinear: bad target size");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (oh == h && ow == w) {
    // identity fast path still records a pass-through node
    const bool record = detail::should_record({&x});
    std::vector<double> out(x.values());
    if (!record) return Tensor::from_data(x.shape(), std::move(out));
    auto xn = x.node();
    return detail::make_op_node(x.shape(), std::move(out), true, {xn},
                                [xn = xn.get()](detail::Node& self) {
                                  xn->ensure_grad();
                                  const std::int64_t n = self.size();
                                  for (std::int64_t i = 0; i < n; ++i)
                                    xn->grad[static_cast<std::size_t>(i)] += self.grad[static_cast<std::size_t>(i)];
                                });
  }

  struct Tap {
    int i0, i1;
    double w0, w1;
  };
  auto make_taps = [](int n_in, int n_out) {
    std::vector<Tap> taps(static_cast<std::size_t>(n_out));
    const double s = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * s - 0.5;
      if (src < 0) src = 0;
      if (src > n_in - 1) src = n_in - 1;
      const int i0 = static_cast<int>(src);
      const int i1 = std::min(i0 + 1, n_in - 1);
      const double f = src - i0;
      taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
    }
    return taps;
  };
  const auto ty = make_taps(h, oh);
  const auto tx = make_taps(w, ow);

  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const double* px = x.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* xc = px + static_cast<std::size_t>(ch) * h * w;
    double* oc = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const double* r0 = xc + static_cast<std::size_t>(a.i0) * w;
      const double* r1 = xc + static_cast<std::size_t>(a.i1) * w;
      double* orow = oc + static_cast<std::size_t>(y) * ow;
      for (int xo = 0; xo < ow; ++xo) {
        const Tap& b = tx[static_cast<std::size_t>(xo)];
        orow[xo] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                   a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
      }
    }
  }

  const bool record = detail::should_record({&x});
  if (!record) return Tensor::from_data({c, oh, ow}, std::move(out));
  auto xn = x.node();
  return detail::make_op_node(
      {c, oh, ow}, std::move(out), true, {xn},
      [c, h, w, oh, ow, ty, tx, xn = xn.get()](detail::Node& self) {
        xn->ensure_grad();
        const double* g = self.grad.data();
        for (int ch = 0; ch < c; ++ch) {
          double* gx = xn->grad.data() + static_cast<std::size_t>(ch) * h * w;
          const double* gc = g + static_cast<std::size_t>(ch) * oh * ow;
          for (int y = 0; y < oh; ++y) {
            const Tap& a = ty[static_cast<std::size_t>(y)];
            const double* grow = gc + static_cast<std::size_t>(y) * ow;
            for (int xo = 0; xo < ow; ++xo) {
              const Tap& b = tx[static_cast<std::size_t>(xo)];
              const double gv = grow[xo];
              gx[static_cast<std::size_t>(a.i0) * w + b.i0] += a.w0 * b.w0 * gv;
              gx[static_cast<std::size_t>(a.i0) * w + b.i1] += a.w0 * b.w1 * gv;
              gx[static_cast<std::size_t>(a.i1) * w + b.i0] += a.w1 * b.w0 * gv;
              gx[static_cast<std::size_t>(a.i1) * w + b.i1] += a.w1 * b.w1 * gv;
            }
          }
        }
      });
}

inline Tensor hflip(const Tensor& x) {
  if (x.rank() != 3)
    throw ShapeError("hflip: expects [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> out(static_cast<std::size_t>(c) * h * w);
  const double* px = x.data();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const double* xrow = px + (static_cast<std::size_t>(ch) * h + y) * w;
      double* orow = out.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      for (int xo = 0; xo < w; ++xo) orow[xo] = xrow[w - 1 - xo];
    }
  const bool record = detail::should_record({&x});
  if (!record) return Tensor::from_data(x.shape(), std::move(out));
  auto xn = x.node();
  return detail::make_op_node(x.shape(), std::move(out), true, {xn},
                              [c, h, w, xn = xn.get()](detail::Node& self) {
                                xn->ensure_grad();
                                const double* g = self.grad.data();
                                for (int ch = 0; ch < c; ++ch)
                                  for (int y = 0; y < h; ++y) {
                                    double* gxrow = xn->grad.data() +
                                                    (static_cast<std::size_t>(ch) * h + y) * w;
                                    const double* grow = g + (static_cast<std::size_t>(ch) * h + y) * w;
                                    for (int xo = 0; xo < w; ++xo)
                                      gxrow[w - 1 - xo] += grow[xo];
                                  }
                              });
}

inline Tensor crop(const Tensor& x, int y0, int x0, int ch2, int cw2) {
  if (x.rank() != 3)
    throw ShapeError("crop: expects [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (y0 < 0 || x0 < 0 || y0 + ch2 > h || x0 + cw2 > w || ch2 < 1 || cw2 < 1)
    throw ShapeError("crop: window out of bounds");
  std::vector<double> out(static_cast<std::size_t>(c) * ch2 * cw2);
  const double* px = x.data();
  for (int chn = 0; chn < c; ++chn)
    for (int y = 0; y < ch2; ++y)
      std::memcpy(out.data() + (static_cast<std::size_t>(chn) * ch2 + y) * cw2,
                  px + (static_cast<std::size_t>(chn) * h + y0 + y) * w + x0,
                  sizeof(double) * static_cast<std::size_t>(cw2));
  const bool record = detail::should_record({&x});
  if (!record) return Tensor::from_data({c, ch2, cw2}, std::move(out));
  auto xn = x.node();
  return detail::make_op_node(
      {c, ch2, cw2}, std::move(out), true, {xn},
      [c, h, w, y0, x0, ch2, cw2, xn = xn.get()](detail::Node& self) {
        xn->ensure_grad();
        const double* g = self.grad.data();
        for (int chn = 0; chn < c; ++chn)
          for (int y = 0; y < ch2; ++y) {
            double* gxrow = xn->grad.data() + (static_cast<std::size_t>(chn) * h + y0 + y) * w + x0;
            const double* grow = g + (static_cast<std::size_t>(chn) * ch2 + y) * cw2;
            for (int xo = 0; xo < cw2; ++xo) gxrow[xo] += grow[xo];
          }
      });
}

// ---------------------------------------------------------------------------
// Structure ops

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " +
                     shape_str(shape) + " changes element count");
  const bool record = detail::should_record({&x});
  std::vector<double> out(x.values());
  if (!record) return Tensor::from_data(std::move(shape), std::move(out));
  auto xn = x.node();
  return detail::make_op_node(std::move(shape), std::move(out), true, {xn},
                              [xn = xn.get()](detail::Node& self) {
                                xn->ensure_grad();
                                const std::int64_t n = self.size();
                                for (std::int64_t i = 0; i < n; ++i)
                                  xn->grad[static_cast<std::size_t>(i)] += self.grad[static_cast<std::size_t>(i)];
                              });
}

// Stack equally-shaped tensors along a new outermost axis; grads scatter
// back into each input.
inline Tensor stack_outer(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack_outer: empty input");
  const Shape& inner = parts.front().shape();
  for (const Tensor& p : parts)
    if (p.shape() != inner)
      throw ShapeError("stack_outer: mixed shapes " + shape_str(inner) + " vs " +
                       shape_str(p.shape()));
  const std::int64_t stride = numel(inner);
  Shape out_shape;
  out_shape.reserve(inner.size() + 1);
  out_shape.push_back(static_cast<int>(parts.size()));
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(stride) * parts.size());
  bool record = false;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    record = record || detail::should_record({&p});
  }
  if (!record) return Tensor::from_data(std::move(out_shape), std::move(out));

  std::vector<std::shared_ptr<detail::Node>> parents;
  parents.reserve(parts.size());
  for (const Tensor& p : parts) parents.push_back(p.node());
  auto raw = parents;
  return detail::make_op_node(
      std::move(out_shape), std::move(out), true, std::move(parents),
      [stride, raw](detail::Node& self) {
        for (std::size_t i = 0; i < raw.size(); ++i) {
          detail::Node* p = raw[i].get();
          if (!p->requires_grad) continue;
          p->ensure_grad();
          const double* g = self.grad.data() + static_cast<std::int64_t>(i) * stride;
          for (std::int64_t j = 0; j < stride; ++j)
            p->grad[static_cast<std::size_t>(j)] += g[j];
        }
      });
}

// x[i] along the outermost axis; [n, rest...] -> [rest...].
inline Tensor select_outer(const Tensor& x, int i) {
  if (x.rank() < 2)
    throw ShapeError("select_outer: expects rank >= 2, got " + shape_str(x.shape()));
  const int n = x.dim(0);
  if (i < 0 || i >= n) throw ShapeError("select_outer: index out of range");
  Shape sub(x.shape().begin() + 1, x.shape().end());
  const std::int64_t stride = numel(sub);
  std::vector<double> out(x.values().begin() + i * stride,
                          x.values().begin() + (i + 1) * stride);
  const bool record = detail::should_record({&x});
  if (!record) return Tensor::from_data(std::move(sub), std::move(out));
  auto xn = x.node();
  return detail::make_op_node(std::move(sub), std::move(out), true, {xn},
                              [i, stride, xn = xn.get()](detail::Node& self) {
                                xn->ensure_grad();
                                for (std::int64_t j = 0; j < stride; ++j)
                                  xn->grad[static_cast<std::size_t>(i * stride + j)] +=
                                      self.grad[static_cast<std::size_t>(j)];
                              });
}

// ---------------------------------------------------------------------------
// Reductions. Accumulation is row-major sequential for determinism.

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const double* px = x.data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) acc += px[i];
  const bool record = detail::should_record({&x});
  if (!record) return Tensor::scalar(acc);
  auto xn = x.node();
  return detail::make_op_node({1}, {acc}, true, {xn},
                              [xn = xn.get()](detail::Node& self) {
                                xn->ensure_grad();
                                const double g = self.grad[0];
                                for (double& gv : xn->grad) gv += g;
                              });
}

inline Tensor mean(const Tensor& x) {
  const std::int64_t n = x.size();
  double acc = 0.0;
  const double* px = x.data();
  for (std::int64_t i = 0; i < n; ++i) acc += px[i];
  acc /= static_cast<double>(n);
  const bool record = detail::should_record({&x});
  if (!record) return Tensor::scalar(acc);
  auto xn = x.node();
  return detail::make_op_node({1}, {acc}, true, {xn},
                              [n, xn = xn.get()](detail::Node& self) {
                                xn->ensure_grad();
                                const double g = self.grad[0] / static_cast<double>(n);
                                for (double& gv : xn->grad) gv += g;
                              });
}

// Mean squared error over all elements.
inline Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

// ---------------------------------------------------------------------------
// Backward

inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad) return;  // nothing reachable requires grad

  // Collect reachable nodes; descending id is reverse topological order
  // because parents always precede children in creation order.
  const std::uint64_t token = detail::next_visit_token();
  std::vector<detail::Node*> order;
  std::vector<detail::Node*> stack{root.get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (n->visit_token == token) continue;
    n->visit_token = token;
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (detail::Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                const Tensor& x, double h = 1e-4) {
  Tensor leaf = x.clone(true);
  Tensor loss = f(leaf);
  backward(loss);
  const std::vector<double> analytic = leaf.grad();

  Tensor probe = x.clone(false);
  double worst = 0.0;
  NoGradGuard ng;
  for (std::int64_t i = 0; i < probe.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double fp = f(probe).item();
    probe.data()[i] = orig - h;
    const double fm = f(probe).item();
    probe.data()[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[static_cast<std::size_t>(i)] - fd) /
                       (std::abs(analytic[static_cast<std::size_t>(i)]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Serialization: u32 rank, u32 extents, then float64 little-endian payload.

static_assert(std::endian::native == std::endian::little,
              "tensor wire format assumes a little-endian host");

inline void write_tensor(std::ostream& os, const Tensor& t) {
  const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (int i = 0; i < t.rank(); ++i) {
    const std::uint32_t d = static_cast<std::uint32_t>(t.dim(i));
    os.write(reinterpret_cast<const char*>(&d), sizeof(d));
  }
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
  if (!os) throw IoError("write_tensor: stream failure");
}

inline Tensor read_tensor(std::istream& is) {
  std::uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!is || rank > 8) throw IoError("read_tensor: bad header");
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t d = 0;
    is.read(reinterpret_cast<char*>(&d), sizeof(d));
    if (!is || d == 0) throw IoError("read_tensor: bad extent");
    shape[i] = static_cast<int>(d);
  }
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(sizeof(double) * data.size()));
  if (!is) throw IoError("read_tensor: truncated payload");
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace cloak
