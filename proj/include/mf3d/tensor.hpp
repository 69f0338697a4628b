#pragma once

// Dense tensors with define-by-run reverse-mode differentiation.
//
// Every op returns a new Tensor whose node remembers its parents and a
// backward closure. backward(loss) orders the reachable graph topologically,
// runs each closure once, then drops the closures (the tape is single-use).
// Parameters are leaves; their gradients accumulate across backward calls
// until zero_grad().

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mf3d/error.hpp"
#include "mf3d/parallel.hpp"

namespace mf3d {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <class T>
class Tensor;

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Test hooks that deliberately break backward rules (negative controls for grad checks).
struct FaultHooks {
  std::atomic<bool> corrupt_gelu_backward{false};
};
inline FaultHooks& fault_hooks() {
  static FaultHooks hooks;
  return hooks;
}

}  // namespace detail

/// Disables graph construction in its scope (inference and finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = mf3d::numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    const std::size_t n = mf3d::numel(shape);
    return from(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (mf3d::numel(shape) != values.size())
      throw ShapeError("tensor shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                       " values");
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  /// Size of an axis; negative axes count from the end.
  std::size_t dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const T> values() const { return node_->value; }
  /// Direct write access, for optimizers and finite differences on leaves.
  std::span<T> mutable_values() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  T operator[](std::size_t i) const { return node_->value[i]; }

  /// Detached copy with fresh storage.
  Tensor clone() const { return from(shape(), node_->value, false); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_mode()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

/// Wraps a freshly computed value as an op output, attaching parents and the
/// backward rule only when a gradient can flow.
template <class T, class Fn>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs, Fn&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  if (any_requires_grad<T>(inputs)) {
    node->requires_grad = true;
    for (const auto* t : inputs) node->parents.push_back(t->node());
    node->backward = std::forward<Fn>(backward);
  }
  return Tensor<T>(std::move(node));
}

// ---------------------------------------------------------------------------
// GEMM kernels. Each output element accumulates over the inner index in
// ascending order regardless of how rows are split across threads, so results
// are bit-identical for any thread count.

/// C[M,N] += A[M,K] * B[K,N], all row-major contiguous.
template <class T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  const std::size_t work = M * N * K;
  const std::size_t min_rows = std::max<std::size_t>(1, (1u << 18) / std::max<std::size_t>(1, N * K));
  // Four rows of C per pass over a column tile, so each B element is loaded
  // once per four rows. Every C element still sums over k in ascending order.
  auto rows = [&](std::size_t begin, std::size_t end) {
    constexpr std::size_t tile = 256;
    std::size_t i = begin;
    for (; i + 4 <= end; i += 4) {
      const T* a0 = A + i * K;
      const T* a1 = a0 + K;
      const T* a2 = a1 + K;
      const T* a3 = a2 + K;
      T* __restrict c0 = C + i * N;
      T* __restrict c1 = c0 + N;
      T* __restrict c2 = c1 + N;
      T* __restrict c3 = c2 + N;
      for (std::size_t j0 = 0; j0 < N; j0 += tile) {
        const std::size_t jn = std::min(N, j0 + tile);
        for (std::size_t k = 0; k < K; ++k) {
          const T* __restrict b = B + k * N;
          const T x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
          for (std::size_t j = j0; j < jn; ++j) {
            const T bj = b[j];
            c0[j] += x0 * bj;
            c1[j] += x1 * bj;
            c2[j] += x2 * bj;
            c3[j] += x3 * bj;
          }
        }
      }
    }
    for (; i < end; ++i) {
      T* __restrict c = C + i * N;
      const T* a = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T av = a[k];
        const T* __restrict b = B + k * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  };
  if (work < (1u << 16))
    rows(0, M);
  else
    parallel_for(M, min_rows, rows);
}

/// C[P,N] += A[R,P]^T * B[R,N]. Rows of C are split across threads; each C
/// element sums over r in ascending order.
template <class T>
void gemm_tn_acc(std::size_t R, std::size_t P, std::size_t N, const T* A, const T* B, T* C) {
  auto rows = [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = 0; r < R; ++r) {
      const T* a = A + r * P;
      const T* __restrict b = B + r * N;
      for (std::size_t p = begin; p < end; ++p) {
        const T ap = a[p];
        T* __restrict c = C + p * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += ap * b[j];
      }
    }
  };
  if (R * P * N < (1u << 16))
    rows(0, P);
  else
    parallel_for(P, std::max<std::size_t>(1, (1u << 18) / std::max<std::size_t>(1, R * N)), rows);
}

/// out[C,R] = in[R,C]^T
template <class T>
void transpose_into(std::size_t R, std::size_t C, const T* in, T* out) {
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < R; i0 += B)
    for (std::size_t j0 = 0; j0 < C; j0 += B)
      for (std::size_t i = i0; i < std::min(R, i0 + B); ++i)
        for (std::size_t j = j0; j < std::min(C, j0 + B); ++j) out[j * R + i] = in[i * C + j];
}

// Broadcasting for binary elementwise ops: shapes equal, one operand a single
// element, or one operand's shape a proper suffix of the other's (leading-axis
// expansion). Anything else is an error.
enum class Broadcast { None, RightSmall, LeftSmall };

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

template <class T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (b.numel() == 1 && a.numel() >= 1) return Broadcast::RightSmall;
  if (a.numel() == 1) return Broadcast::LeftSmall;
  if (is_suffix(b.shape(), a.shape())) return Broadcast::RightSmall;
  if (is_suffix(a.shape(), b.shape())) return Broadcast::LeftSmall;
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
}

/// Elementwise binary op with broadcasting. fwd(x, y) -> z; dx(x, y, z) and
/// dy(x, y, z) give partial derivatives.
template <class T, class F, class DX, class DY>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F fwd, DX dx, DY dy) {
  const Broadcast kind = broadcast_kind(a, b, op);
  const bool swap = kind == Broadcast::LeftSmall;
  const Tensor<T>& big = swap ? b : a;
  const Tensor<T>& small = swap ? a : b;
  const std::size_t n = big.numel(), m = small.numel();
  const auto& bv = big.node()->value;
  const auto& sv = small.node()->value;
  std::vector<T> out(n);
  if (!swap) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(bv[i], sv[i % m]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(sv[i % m], bv[i]);
  }
  auto an = a.node(), bn = b.node();
  return make_result<T>(big.shape(), std::move(out), op, {&a, &b}, [an, bn, swap, n, m, dx, dy](Node<T>& self) {
    const auto& g = self.grad;
    const auto& av = an->value;
    const auto& bv2 = bn->value;
    const std::size_t ma = swap ? m : n;
    const std::size_t mb = swap ? n : m;
    if (an->requires_grad) {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const T x = av[i % ma], y = bv2[i % mb];
        ga[i % ma] += g[i] * dx(x, y, self.value[i]);
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const T x = av[i % ma], y = bv2[i % mb];
        gb[i % mb] += g[i] * dy(x, y, self.value[i]);
      }
    }
  });
}

template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& x, const char* op, F fwd, D deriv) {
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), op, {&x}, [xn, deriv](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xn->value[i], self.value[i]);
  });
}

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T corrupt = detail::fault_hooks().corrupt_gelu_backward.load() ? T(1.5) : T(1);
  return detail::unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(M_SQRT1_2))); },
      [corrupt](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(M_SQRT1_2)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(0.3989422804014327);
        return corrupt * (cdf + v * pdf);
      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// Natural log; inputs must be positive.
template <class T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.values())
    if (!(v > T(0))) throw NumericError("log of a nonpositive value");
  return detail::unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  auto xn = x.node();
  return detail::make_result<T>({}, {s}, "sum", {&x}, [xn](detail::Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  T s = T(0);
  for (T v : x.values()) s += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  auto xn = x.node();
  return detail::make_result<T>({}, {s * inv}, "mean", {&x}, [xn, inv](detail::Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

/// Max over the last axis; the gradient goes to the first maximal entry only.
template <class T>
Tensor<T> max_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("max_lastdim on a scalar");
  const std::size_t d = x.dim(-1);
  if (d == 0) throw ShapeError("max_lastdim over empty axis");
  const std::size_t rows = x.numel() / d;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<T> out(rows);
  std::vector<std::size_t> arg(rows);
  const auto& xv = x.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (xv[r * d + j] > xv[r * d + best]) best = j;
    arg[r] = r * d + best;
    out[r] = xv[arg[r]];
  }
  auto xn = x.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), "max_lastdim", {&x},
                                [xn, arg = std::move(arg)](detail::Node<T>& self) {
                                  auto& g = xn->ensure_grad();
                                  for (std::size_t r = 0; r < arg.size(); ++r) g[arg[r]] += self.grad[r];
                                });
}

/// Column-wise max over row segments of a [n, d] matrix: segment s spans rows
/// [offsets[s], offsets[s+1]). Output [S, d].
template <class T>
Tensor<T> segment_max_rows(const Tensor<T>& x, const std::vector<std::size_t>& offsets) {
  if (x.rank() != 2) throw ShapeError("segment_max_rows expects a matrix, got " + to_string(x.shape()));
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.dim(0))
    throw ShapeError("segment_max_rows: offsets must start at 0 and end at the row count");
  const std::size_t d = x.dim(1), segs = offsets.size() - 1;
  const auto& xv = x.node()->value;
  std::vector<T> out(segs * d);
  std::vector<std::size_t> arg(segs * d);
  for (std::size_t s = 0; s < segs; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ShapeError("segment_max_rows: empty segment");
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t best = offsets[s] * d + j;
      for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r)
        if (xv[r * d + j] > xv[best]) best = r * d + j;
      arg[s * d + j] = best;
      out[s * d + j] = xv[best];
    }
  }
  auto xn = x.node();
  return detail::make_result<T>({segs, d}, std::move(out), "segment_max_rows", {&x},
                                [xn, arg = std::move(arg)](detail::Node<T>& self) {
                                  auto& g = xn->ensure_grad();
                                  for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product over the last two axes. b is either a matrix shared by every
/// leading index of a, or has exactly a's leading axes.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const bool shared_b = b.rank() == 2;
  if (!shared_b && (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())))
    throw ShapeError("matmul batch axes differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t batch = a.numel() / std::max<std::size_t>(1, m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n, T(0));
  const T* av = a.node()->value.data();
  const T* bv = b.node()->value.data();
  if (shared_b) {
    detail::gemm_acc(batch * m, n, k, av, bv, out.data());
  } else {
    for (std::size_t t = 0; t < batch; ++t) detail::gemm_acc(m, n, k, av + t * m * k, bv + t * k * n, out.data() + t * m * n);
  }
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), "matmul", {&a, &b},
                                [an, bn, shared_b, batch, m, n, k](detail::Node<T>& self) {
                                  const T* g = self.grad.data();
                                  const std::size_t rows = shared_b ? batch * m : m;
                                  const std::size_t reps = shared_b ? 1 : batch;
                                  if (an->requires_grad) {
                                    // dA = G * B^T
                                    auto& ga = an->ensure_grad();
                                    std::vector<T> bt(k * n);
                                    for (std::size_t t = 0; t < reps; ++t) {
                                      detail::transpose_into(k, n, bn->value.data() + t * k * n, bt.data());
                                      detail::gemm_acc(rows, k, n, g + t * rows * n, bt.data(), ga.data() + t * rows * k);
                                    }
                                  }
                                  if (bn->requires_grad) {
                                    // dB = A^T * G
                                    auto& gb = bn->ensure_grad();
                                    std::vector<T> at(rows * k);
                                    for (std::size_t t = 0; t < reps; ++t) {
                                      detail::transpose_into(rows, k, an->value.data() + t * rows * k, at.data());
                                      detail::gemm_acc(k, n, rows, at.data(), g + t * rows * n, gb.data() + t * k * n);
                                    }
                                  }
                                });
}

/// Swaps the last two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t r = x.dim(-2), c = x.dim(-1);
  const std::size_t batch = x.numel() / std::max<std::size_t>(1, r * c);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<T> out(x.numel());
  for (std::size_t t = 0; t < batch; ++t)
    detail::transpose_into(r, c, x.node()->value.data() + t * r * c, out.data() + t * r * c);
  auto xn = x.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), "transpose", {&x},
                                [xn, batch, r, c](detail::Node<T>& self) {
                                  auto& g = xn->ensure_grad();
                                  for (std::size_t t = 0; t < batch; ++t)
                                    for (std::size_t i = 0; i < r; ++i)
                                      for (std::size_t j = 0; j < c; ++j)
                                        g[t * r * c + i * c + j] += self.grad[t * r * c + j * r + i];
                                });
}

// ---------------------------------------------------------------------------
// Attention

namespace detail {

/// Columns [c0, c0 + w) of a row-major [rows, cols] matrix.
template <class T>
std::vector<T> take_cols(const std::vector<T>& x, std::size_t rows, std::size_t cols, std::size_t c0, std::size_t w) {
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * cols + c0, w, out.data() + r * w);
  return out;
}

template <class T>
void add_cols(std::vector<T>& x, std::size_t rows, std::size_t cols, std::size_t c0, std::size_t w,
              const std::vector<T>& part) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) x[r * cols + c0 + j] += part[r * w + j];
}

}  // namespace detail

/// Multi-head scaled dot-product attention on projected inputs.
/// q [n, d], k [m, d], v [m, d]; head h uses columns [h*d/heads, (h+1)*d/heads).
/// Returns [n, d] with the heads side by side. Equivalent to slicing each head,
/// softmax(q_h k_h^T / sqrt(d/heads)) v_h and concatenating, with one stored
/// probability matrix per head.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ShapeError("attention expects matrices, got " + to_string(q.shape()) + ", " + to_string(k.shape()) + ", " +
                     to_string(v.shape()));
  const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.shape() != k.shape())
    throw ShapeError("attention: incompatible shapes " + to_string(q.shape()) + ", " + to_string(k.shape()) + ", " +
                     to_string(v.shape()));
  if (heads == 0 || d % heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (m == 0) throw ShapeError("attention over zero keys");
  const std::size_t dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<T>>(heads * n * m, T(0));
  std::vector<T> out(n * d, T(0));
  const auto& qv = q.node()->value;
  const auto& kv = k.node()->value;
  const auto& vv = v.node()->value;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = detail::take_cols(qv, n, d, h * dh, dh);
    const auto kh = detail::take_cols(kv, m, d, h * dh, dh);
    const auto vh = detail::take_cols(vv, m, d, h * dh, dh);
    std::vector<T> kt(dh * m);
    detail::transpose_into(m, dh, kh.data(), kt.data());
    T* p = probs->data() + h * n * m;
    detail::gemm_acc(n, m, dh, qh.data(), kt.data(), p);
    for (std::size_t r = 0; r < n; ++r) {
      T* row = p + r * m;
      for (std::size_t j = 0; j < m; ++j) row[j] *= sc;
      T mx = row[0];
      for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
      T total = T(0);
      for (std::size_t j = 0; j < m; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
      }
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < m; ++j) row[j] *= inv;
    }
    std::vector<T> oh(n * dh, T(0));
    detail::gemm_acc(n, dh, m, p, vh.data(), oh.data());
    detail::add_cols(out, n, d, h * dh, dh, oh);
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return detail::make_result<T>(
      {n, d}, std::move(out), "attention", {&q, &k, &v},
      [qn, kn, vn, probs, heads, n, m, d, dh, sc](detail::Node<T>& self) {
        for (std::size_t h = 0; h < heads; ++h) {
          const T* p = probs->data() + h * n * m;
          const auto gh = detail::take_cols(self.grad, n, d, h * dh, dh);
          if (vn->requires_grad) {
            std::vector<T> dv(m * dh, T(0));
            detail::gemm_tn_acc(n, m, dh, p, gh.data(), dv.data());
            detail::add_cols(vn->ensure_grad(), m, d, h * dh, dh, dv);
          }
          if (!qn->requires_grad && !kn->requires_grad) continue;
          // dZ = sc * P o (dP - rowsum(dP o P)), with dP = G_h V_h^T
          const auto vh = detail::take_cols(vn->value, m, d, h * dh, dh);
          std::vector<T> vt(dh * m);
          detail::transpose_into(m, dh, vh.data(), vt.data());
          std::vector<T> dz(n * m, T(0));
          detail::gemm_acc(n, m, dh, gh.data(), vt.data(), dz.data());
          for (std::size_t r = 0; r < n; ++r) {
            T* row = dz.data() + r * m;
            const T* pr = p + r * m;
            T dotp = T(0);
            for (std::size_t j = 0; j < m; ++j) dotp += row[j] * pr[j];
            for (std::size_t j = 0; j < m; ++j) row[j] = sc * pr[j] * (row[j] - dotp);
          }
          if (qn->requires_grad) {
            const auto kh = detail::take_cols(kn->value, m, d, h * dh, dh);
            std::vector<T> dq(n * dh, T(0));
            detail::gemm_acc(n, dh, m, dz.data(), kh.data(), dq.data());
            detail::add_cols(qn->ensure_grad(), n, d, h * dh, dh, dq);
          }
          if (kn->requires_grad) {
            const auto qh = detail::take_cols(qn->value, n, d, h * dh, dh);
            std::vector<T> dk(m * dh, T(0));
            detail::gemm_tn_acc(n, m, dh, dz.data(), qh.data(), dk.data());
            detail::add_cols(kn->ensure_grad(), m, d, h * dh, dh, dk);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization

/// Numerically stable softmax over the last axis.
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax_lastdim on a scalar");
  const std::size_t d = x.dim(-1);
  const std::size_t rows = d ? x.numel() / d : 0;
  const auto& xv = x.node()->value;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T* o = out.data() + r * d;
    T mx = in[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    T s = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
  }
  auto xn = x.node();
  return detail::make_result<T>(x.shape(), std::move(out), "softmax_lastdim", {&x},
                                [xn, rows, d](detail::Node<T>& self) {
                                  auto& g = xn->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T* y = self.value.data() + r * d;
                                    const T* gy = self.grad.data() + r * d;
                                    T dotp = T(0);
                                    for (std::size_t j = 0; j < d; ++j) dotp += gy[j] * y[j];
                                    for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (gy[j] - dotp);
                                  }
                                });
}

/// Normalizes each row over the last axis, then applies gain and bias of shape [d].
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  if (x.rank() == 0) throw ShapeError("layer_norm on a scalar");
  const std::size_t d = x.dim(-1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
  const std::size_t rows = d ? x.numel() / d : 0;
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), "layer_norm", {&x, &gain, &bias},
      [xn, gn, bn, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
        const T* gy = self.grad.data();
        if (gn->requires_grad) {
          auto& gg = gn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xhat[r * d + j];
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
        }
        if (xn->requires_grad) {
          auto& gx = xn->ensure_grad();
          const auto& gain_v = gn->value;
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = T(0), m2 = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = gy[r * d + j] * gain_v[j];
              m1 += dxh;
              m2 += dxh * xhat[r * d + j];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = gy[r * d + j] * gain_v[j];
              gx[r * d + j] += rstd[r] * (dxh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
  auto xn = x.node();
  return detail::make_result<T>(std::move(shape), x.node()->value, "reshape", {&x}, [xn](detail::Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Concatenation along an axis; all other axes must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const Shape& ref = parts.front().shape();
  const std::size_t ax = detail::normalize_axis(axis, ref.size());
  Shape out_shape = ref;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != ax && p.shape()[i] != ref[i])
        throw ShapeError("concat: shape " + to_string(p.shape()) + " incompatible with " + to_string(ref));
    out_shape[ax] += p.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= ref[i];
  for (std::size_t i = ax + 1; i < ref.size(); ++i) inner *= ref[i];
  const std::size_t out_row = out_shape[ax] * inner;
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t row = p.shape()[ax] * inner;
    const auto& pv = p.node()->value;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * row, row, out.data() + o * out_row + off);
    off += row;
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(out_shape);
  node->value = std::move(out);
  node->op = "concat";
  node->is_leaf = false;
  bool need = false;
  if (detail::grad_mode())
    for (const auto& p : parts) need = need || p.requires_grad();
  if (need) {
    node->requires_grad = true;
    std::vector<std::shared_ptr<detail::Node<T>>> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node());
    node->parents = pnodes;
    node->backward = [pnodes, offsets, outer, inner, out_row, ax](detail::Node<T>& self) {
      for (std::size_t k = 0; k < pnodes.size(); ++k) {
        auto& pn = pnodes[k];
        if (!pn->requires_grad) continue;
        auto& g = pn->ensure_grad();
        const std::size_t row = pn->shape[ax] * inner;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < row; ++j) g[o * row + j] += self.grad[o * out_row + offsets[k] + j];
      }
    };
  }
  return Tensor<T>(std::move(node));
}

/// Rows along axis 0 in the given order (indices may repeat).
template <class T>
Tensor<T> index_select(const Tensor<T>& x, const std::vector<std::size_t>& indices) {
  if (x.rank() == 0) throw ShapeError("index_select on a scalar");
  const std::size_t rows = x.dim(0);
  const std::size_t row = rows ? x.numel() / rows : 0;
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  std::vector<T> out(indices.size() * row);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) throw ShapeError("index_select: index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(x.node()->value.data() + indices[i] * row, row, out.data() + i * row);
  }
  auto xn = x.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), "index_select", {&x},
                                [xn, indices, row](detail::Node<T>& self) {
                                  auto& g = xn->ensure_grad();
                                  for (std::size_t i = 0; i < indices.size(); ++i)
                                    for (std::size_t j = 0; j < row; ++j) g[indices[i] * row + j] += self.grad[i * row + j];
                                });
}

/// Columns [start, start + len) of the last axis.
template <class T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t start, std::size_t len) {
  if (x.rank() == 0) throw ShapeError("slice_lastdim on a scalar");
  const std::size_t d = x.dim(-1);
  if (start + len > d) throw ShapeError("slice_lastdim: range exceeds last axis of " + to_string(x.shape()));
  const std::size_t rows = d ? x.numel() / d : 0;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  std::vector<T> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.node()->value.data() + r * d + start, len, out.data() + r * len);
  auto xn = x.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), "slice_lastdim", {&x},
                                [xn, rows, d, start, len](detail::Node<T>& self) {
                                  auto& g = xn->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t j = 0; j < len; ++j) g[r * d + start + j] += self.grad[r * len + j];
                                });
}

// ---------------------------------------------------------------------------
// Backward pass

/// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient, then
/// releases the recorded graph.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  using NodeT = detail::Node<T>;
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS: parents before children.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (NodeT* n : order) {
    if (n->is_leaf) continue;
    n->backward = nullptr;
    n->parents.clear();
  }
}

}  // namespace mf3d
