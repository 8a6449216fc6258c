#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "loop/rng.hpp"

namespace loop::num {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + "]";
}

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thread-local switch: when recording is off, ops compute values only and the
// resulting nodes carry no parents (inference mode).
inline bool& grad_recording_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_recording_flag()) { grad_recording_flag() = false; }
  ~NoGradGuard() { grad_recording_flag() = prev; }
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on demand, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Propagates this node's grad into parents' grads. Called exactly once per
  // node during backward.
  std::function<void(Node<T>&)> backward_fn;
  int visit_count = 0;  // instrumentation for the once-per-node invariant

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Value-semantic handle over a tape node. Copies share the node.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  Tensor(const Shape& shape, std::vector<T> data, bool requires_grad = false) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    node_ = std::make_shared<Node<T>>();
    node_->shape = shape;
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(numel(shape), T(0)), requires_grad);
  }
  static Tensor full(const Shape& shape, T v, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(numel(shape), v), requires_grad);
  }
  static Tensor randn(const Shape& shape, Rng& rng, T stddev,
                      bool requires_grad = false) {
    std::vector<T> d(numel(shape));
    for (auto& x : d) x = static_cast<T>(rng.next_gaussian()) * stddev;
    return Tensor(shape, std::move(d), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad_view() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
  }
  T item() const {
    if (node_->value.size() != 1) throw UsageError("item() on non-scalar tensor");
    return node_->value[0];
  }
  std::shared_ptr<Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> parents,
                  std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rec = grad_recording_flag();
  bool req = false;
  if (rec) {
    for (auto& p : parents) req = req || p.node()->requires_grad;
  }
  n->requires_grad = req;
  if (rec && req) {
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>(n);
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> v(a.size());
  const auto &av = a.data(), &bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> v(a.size());
  const auto &av = a.data(), &bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> v(a.size());
  const auto &av = a.data(), &bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        pa->grad[i] += n.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        pb->grad[i] += n.grad[i] * pa->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * c;
  auto pa = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [pa, c](Node<T>& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * c;
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + c;
  auto pa = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
  });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) {
    T x = av[i];
    v[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                     : std::exp(x) / (T(1) + std::exp(x));
  }
  auto pa = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T s = n.value[i];
      pa->grad[i] += n.grad[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) {
    T x = av[i];
    T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                    : std::exp(x) / (T(1) + std::exp(x));
    v[i] = x * s;
  }
  auto pa = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T x = pa->value[i];
      T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                      : std::exp(x) / (T(1) + std::exp(x));
      pa->grad[i] += n.grad[i] * (s + x * s * (T(1) - s));
    }
  });
}

inline constexpr double kLogFloor = 1e-9;  // floor applied before every log

template <class T>
Tensor<T> log_guarded(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = std::log(std::max(av[i], static_cast<T>(kLogFloor)));
  auto pa = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T x = std::max(pa->value[i], static_cast<T>(kLogFloor));
      pa->grad[i] += n.grad[i] / x;
    }
  });
}

template <class T>
Tensor<T> detach(const Tensor<T>& a) {
  return Tensor<T>(a.shape(), a.data(), false);
}

// Gradient passes only where the value was inside [lo, hi].
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  std::vector<T> v(a.size());
  const auto& av = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::min(std::max(av[i], lo), hi);
  auto pa = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [pa, lo, hi](Node<T>& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (pa->value[i] >= lo && pa->value[i] <= hi) pa->grad[i] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T x : a.data()) acc += x;
  auto pa = a.node();
  return detail::make_op<T>(Shape{1}, std::vector<T>{acc}, {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += n.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// Row means over valid positions. x: [rows, cols]; mask: length rows*cols of
// 0/1 weights (constant). Rows with zero mask weight yield 0.
template <class T>
Tensor<T> row_mean_masked(const Tensor<T>& x, const std::vector<T>& mask) {
  if (x.shape().size() != 2) throw ShapeError("row_mean_masked expects 2-D input");
  int rows = x.shape()[0], cols = x.shape()[1];
  if (static_cast<int64_t>(mask.size()) != x.size())
    throw ShapeError("row_mean_masked: mask length mismatch");
  std::vector<T> v(rows, T(0));
  std::vector<T> counts(rows, T(0));
  const auto& xv = x.data();
  for (int r = 0; r < rows; ++r) {
    T acc = 0, cnt = 0;
    for (int c = 0; c < cols; ++c) {
      acc += xv[r * cols + c] * mask[r * cols + c];
      cnt += mask[r * cols + c];
    }
    counts[r] = cnt;
    v[r] = cnt > T(0) ? acc / cnt : T(0);
  }
  auto pa = x.node();
  return detail::make_op<T>(Shape{rows}, std::move(v), {x},
                            [pa, mask, counts, cols](Node<T>& n) {
                              pa->ensure_grad();
                              int rows = static_cast<int>(n.value.size());
                              for (int r = 0; r < rows; ++r) {
                                if (counts[r] <= T(0)) continue;
                                T g = n.grad[r] / counts[r];
                                for (int c = 0; c < cols; ++c)
                                  pa->grad[r * cols + c] += g * mask[r * cols + c];
                              }
                            });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  auto pa = a.node();
  return detail::make_op<T>(shape, a.data(), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// matmul and linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// c[m,n] += a[m,k] * b[k,n]; deterministic per-element accumulation order.
template <class T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <class T>
void gemm_bt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<int64_t>(j) * k;
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <class T>
void gemm_at_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    const T* brow = b + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeError("matmul expects 2-D tensors");
  int m = a.shape()[0], k = a.shape()[1];
  int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  std::vector<T> v(static_cast<size_t>(m) * n, T(0));
  detail::gemm_acc(a.data().data(), b.data().data(), v.data(), m, k, n);
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(Shape{m, n}, std::move(v), {a, b},
                            [pa, pb, m, k, n](Node<T>& nd) {
                              if (pa->requires_grad) {
                                pa->ensure_grad();
                                // dA = dC * B^T
                                detail::gemm_bt_acc(nd.grad.data(), pb->value.data(),
                                                    pa->grad.data(), m, n, k);
                              }
                              if (pb->requires_grad) {
                                pb->ensure_grad();
                                // dB = A^T * dC
                                detail::gemm_at_acc(pa->value.data(), nd.grad.data(),
                                                    pb->grad.data(), m, k, n);
                              }
                            });
}

// a[m,k] * b[n,k]^T -> [m,n]; lets a [vocab,d] table double as the LM head.
template <class T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeError("matmul_transposed expects 2-D tensors");
  int m = a.shape()[0], k = a.shape()[1];
  int n = b.shape()[0];
  if (b.shape()[1] != k)
    throw ShapeError("matmul_transposed: inner dims differ, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  std::vector<T> v(static_cast<size_t>(m) * n, T(0));
  detail::gemm_bt_acc(a.data().data(), b.data().data(), v.data(), m, k, n);
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(Shape{m, n}, std::move(v), {a, b},
                            [pa, pb, m, k, n](Node<T>& nd) {
                              if (pa->requires_grad) {
                                pa->ensure_grad();
                                // dA = dC * B
                                detail::gemm_acc(nd.grad.data(), pb->value.data(),
                                                 pa->grad.data(), m, n, k);
                              }
                              if (pb->requires_grad) {
                                pb->ensure_grad();
                                // dB = dC^T * A
                                detail::gemm_at_acc(nd.grad.data(), pa->value.data(),
                                                    pb->grad.data(), m, n, k);
                              }
                            });
}

// x[m,n] + b[n] broadcast over rows
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.shape().size() != 2 || b.shape().size() != 1 || x.shape()[1] != b.shape()[0])
    throw ShapeError("add_rowvec: incompatible shapes " + shape_str(x.shape()) +
                     " + " + shape_str(b.shape()));
  int m = x.shape()[0], n = x.shape()[1];
  std::vector<T> v(x.size());
  const auto &xv = x.data(), &bv = b.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[i * n + j] = xv[i * n + j] + bv[j];
  auto px = x.node(), pb = b.node();
  return detail::make_op<T>(x.shape(), std::move(v), {x, b},
                            [px, pb, m, n](Node<T>& nd) {
                              if (px->requires_grad) {
                                px->ensure_grad();
                                for (size_t i = 0; i < nd.grad.size(); ++i)
                                  px->grad[i] += nd.grad[i];
                              }
                              if (pb->requires_grad) {
                                pb->ensure_grad();
                                for (int i = 0; i < m; ++i)
                                  for (int j = 0; j < n; ++j)
                                    pb->grad[j] += nd.grad[i * n + j];
                              }
                            });
}

// rows of table selected by ids; backward scatter-adds.
template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.shape().size() != 2) throw ShapeError("embedding table must be 2-D");
  int vocab = table.shape()[0], d = table.shape()[1];
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw IndexError("embedding: token id " + std::to_string(id) +
                       " out of vocab " + std::to_string(vocab));
  int m = static_cast<int>(ids.size());
  std::vector<T> v(static_cast<size_t>(m) * d);
  const auto& tv = table.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) v[i * d + j] = tv[ids[i] * d + j];
  auto pt = table.node();
  return detail::make_op<T>(Shape{m, d}, std::move(v), {table},
                            [pt, ids, d](Node<T>& nd) {
                              pt->ensure_grad();
                              int m = static_cast<int>(ids.size());
                              for (int i = 0; i < m; ++i)
                                for (int j = 0; j < d; ++j)
                                  pt->grad[ids[i] * d + j] += nd.grad[i * d + j];
                            });
}

// ---------------------------------------------------------------------------
// normalization / softmax / activations over axes
// ---------------------------------------------------------------------------

// y = x / sqrt(mean(x^2) + eps) * w, over the last dimension.
template <class T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& w, T eps) {
  if (x.shape().empty()) throw ShapeError("rms_norm on empty shape");
  int d = x.shape().back();
  if (w.shape().size() != 1 || w.shape()[0] != d)
    throw ShapeError("rms_norm: weight length " + shape_str(w.shape()) +
                     " does not match last dim " + std::to_string(d));
  int rows = static_cast<int>(x.size() / d);
  std::vector<T> v(x.size());
  std::vector<T> inv_rms(rows);
  const auto &xv = x.data(), &wv = w.data();
  for (int r = 0; r < rows; ++r) {
    T ms = 0;
    for (int j = 0; j < d; ++j) ms += xv[r * d + j] * xv[r * d + j];
    ms = ms / static_cast<T>(d) + eps;
    T inv = T(1) / std::sqrt(ms);
    inv_rms[r] = inv;
    for (int j = 0; j < d; ++j) v[r * d + j] = xv[r * d + j] * inv * wv[j];
  }
  auto px = x.node(), pw = w.node();
  return detail::make_op<T>(
      x.shape(), std::move(v), {x, w},
      [px, pw, inv_rms, d, rows](Node<T>& nd) {
        const auto& xv = px->value;
        const auto& wv = pw->value;
        if (pw->requires_grad) {
          pw->ensure_grad();
          for (int r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j)
              pw->grad[j] += nd.grad[r * d + j] * xv[r * d + j] * inv_rms[r];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          for (int r = 0; r < rows; ++r) {
            T inv = inv_rms[r];
            // dL/dx = inv * g*w - x * inv^3 / d * sum(g*w*x)
            T dot = 0;
            for (int j = 0; j < d; ++j)
              dot += nd.grad[r * d + j] * wv[j] * xv[r * d + j];
            T coef = inv * inv * inv * dot / static_cast<T>(d);
            for (int j = 0; j < d; ++j)
              px->grad[r * d + j] +=
                  nd.grad[r * d + j] * wv[j] * inv - xv[r * d + j] * coef;
          }
        }
      });
}

// Numerically-guarded softmax along `axis` (negative counts from the back).
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  const Shape& s = x.shape();
  int nd = static_cast<int>(s.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw UsageError("softmax: axis out of range");
  int64_t axis_len = s[axis];
  int64_t inner = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= s[i];
  int64_t outer = x.size() / (axis_len * inner);
  std::vector<T> v(x.size());
  const auto& xv = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * axis_len * inner + in;
      T mx = xv[base];
      for (int64_t a = 1; a < axis_len; ++a)
        mx = std::max(mx, xv[base + a * inner]);
      T z = 0;
      for (int64_t a = 0; a < axis_len; ++a) {
        T e = std::exp(xv[base + a * inner] - mx);
        v[base + a * inner] = e;
        z += e;
      }
      T invz = T(1) / z;
      for (int64_t a = 0; a < axis_len; ++a) v[base + a * inner] *= invz;
    }
  }
  auto px = x.node();
  return detail::make_op<T>(
      s, std::move(v), {x}, [px, axis_len, inner, outer](Node<T>& ndn) {
        px->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t in = 0; in < inner; ++in) {
            int64_t base = o * axis_len * inner + in;
            T dot = 0;
            for (int64_t a = 0; a < axis_len; ++a)
              dot += ndn.grad[base + a * inner] * ndn.value[base + a * inner];
            for (int64_t a = 0; a < axis_len; ++a) {
              int64_t idx = base + a * inner;
              px->grad[idx] += ndn.value[idx] * (ndn.grad[idx] - dot);
            }
          }
        }
      });
}

// Rotary embedding over q or k laid out [tokens, d_model], n_heads heads.
// Within each head, pair (2i, 2i+1) rotates by pos * base^(-2i/head_dim).
template <class T>
Tensor<T> rope_apply(const Tensor<T>& x, const std::vector<int>& positions,
                     T base, int n_heads) {
  if (x.shape().size() != 2) throw ShapeError("rope_apply expects [tokens, d]");
  int m = x.shape()[0], d = x.shape()[1];
  if (static_cast<int>(positions.size()) != m)
    throw ShapeError("rope_apply: positions length mismatch");
  if (d % n_heads != 0) throw UsageError("rope_apply: d not divisible by heads");
  int hd = d / n_heads;
  if (hd % 2 != 0) throw UsageError("rope_apply: head dim must be even");
  std::vector<T> cs(static_cast<size_t>(m) * hd / 2), sn(cs.size());
  for (int t = 0; t < m; ++t) {
    for (int i = 0; i < hd / 2; ++i) {
      T theta = static_cast<T>(positions[t]) *
                std::pow(base, -static_cast<T>(2 * i) / static_cast<T>(hd));
      cs[t * (hd / 2) + i] = std::cos(theta);
      sn[t * (hd / 2) + i] = std::sin(theta);
    }
  }
  std::vector<T> v(x.size());
  const auto& xv = x.data();
  for (int t = 0; t < m; ++t) {
    for (int h = 0; h < n_heads; ++h) {
      for (int i = 0; i < hd / 2; ++i) {
        int64_t idx = static_cast<int64_t>(t) * d + h * hd + 2 * i;
        T c = cs[t * (hd / 2) + i], s = sn[t * (hd / 2) + i];
        T a = xv[idx], b = xv[idx + 1];
        v[idx] = a * c - b * s;
        v[idx + 1] = a * s + b * c;
      }
    }
  }
  auto px = x.node();
  return detail::make_op<T>(
      x.shape(), std::move(v), {x},
      [px, cs, sn, m, d, n_heads, hd](Node<T>& nd) {
        px->ensure_grad();
        for (int t = 0; t < m; ++t) {
          for (int h = 0; h < n_heads; ++h) {
            for (int i = 0; i < hd / 2; ++i) {
              int64_t idx = static_cast<int64_t>(t) * d + h * hd + 2 * i;
              T c = cs[t * (hd / 2) + i], s = sn[t * (hd / 2) + i];
              T ga = nd.grad[idx], gb = nd.grad[idx + 1];
              // inverse rotation on the gradient
              px->grad[idx] += ga * c + gb * s;
              px->grad[idx + 1] += -ga * s + gb * c;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// attention primitives (batched over rows and heads)
// ---------------------------------------------------------------------------

// q, k: [rows*m, d]. Output scores: [rows, heads, m, m], entry (r,h,i,j) =
// <q_i, k_j>_h / sqrt(head_dim) for row r.
template <class T>
Tensor<T> attention_scores(const Tensor<T>& q, const Tensor<T>& k, int rows,
                           int n_heads) {
  detail::check_same_shape(q, k, "attention_scores");
  if (q.shape().size() != 2) throw ShapeError("attention_scores expects 2-D");
  int total = q.shape()[0], d = q.shape()[1];
  if (total % rows != 0) throw ShapeError("attention_scores: rows mismatch");
  int m = total / rows;
  if (d % n_heads != 0) throw UsageError("attention_scores: heads mismatch");
  int hd = d / n_heads;
  T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> v(static_cast<size_t>(rows) * n_heads * m * m, T(0));
  const auto &qv = q.data(), &kv = k.data();
  for (int r = 0; r < rows; ++r) {
    for (int h = 0; h < n_heads; ++h) {
      for (int i = 0; i < m; ++i) {
        const T* qp = qv.data() + (static_cast<int64_t>(r) * m + i) * d + h * hd;
        T* outp =
            v.data() + ((static_cast<int64_t>(r) * n_heads + h) * m + i) * m;
        for (int j = 0; j < m; ++j) {
          const T* kp = kv.data() + (static_cast<int64_t>(r) * m + j) * d + h * hd;
          T acc = 0;
          for (int p = 0; p < hd; ++p) acc += qp[p] * kp[p];
          outp[j] = acc * inv_sqrt;
        }
      }
    }
  }
  auto pq = q.node(), pk = k.node();
  return detail::make_op<T>(
      Shape{rows, n_heads, m, m}, std::move(v), {q, k},
      [pq, pk, rows, n_heads, m, d, hd, inv_sqrt](Node<T>& nd) {
        const auto &qv = pq->value, &kv = pk->value;
        if (pq->requires_grad) pq->ensure_grad();
        if (pk->requires_grad) pk->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          for (int h = 0; h < n_heads; ++h) {
            for (int i = 0; i < m; ++i) {
              const T* gp =
                  nd.grad.data() +
                  ((static_cast<int64_t>(r) * n_heads + h) * m + i) * m;
              int64_t qoff = (static_cast<int64_t>(r) * m + i) * d + h * hd;
              for (int j = 0; j < m; ++j) {
                T g = gp[j] * inv_sqrt;
                if (g == T(0)) continue;
                int64_t koff = (static_cast<int64_t>(r) * m + j) * d + h * hd;
                if (pq->requires_grad)
                  for (int p = 0; p < hd; ++p)
                    pq->grad[qoff + p] += g * kv[koff + p];
                if (pk->requires_grad)
                  for (int p = 0; p < hd; ++p)
                    pk->grad[koff + p] += g * qv[qoff + p];
              }
            }
          }
        }
      });
}

// probs: [rows, heads, m, m]; v: [rows*m, d]. Output [rows*m, d]:
// out_i = sum_j probs(i,j) * v_j per head.
template <class T>
Tensor<T> attention_mix(const Tensor<T>& probs, const Tensor<T>& v) {
  if (probs.shape().size() != 4) throw ShapeError("attention_mix: probs not 4-D");
  int rows = probs.shape()[0], n_heads = probs.shape()[1], m = probs.shape()[2];
  if (probs.shape()[3] != m) throw ShapeError("attention_mix: probs not square");
  if (v.shape().size() != 2 || v.shape()[0] != rows * m)
    throw ShapeError("attention_mix: v shape mismatch");
  int d = v.shape()[1];
  if (d % n_heads != 0) throw UsageError("attention_mix: heads mismatch");
  int hd = d / n_heads;
  std::vector<T> out(static_cast<size_t>(rows) * m * d, T(0));
  const auto &pv = probs.data(), &vv = v.data();
  for (int r = 0; r < rows; ++r) {
    for (int h = 0; h < n_heads; ++h) {
      for (int i = 0; i < m; ++i) {
        const T* pp =
            pv.data() + ((static_cast<int64_t>(r) * n_heads + h) * m + i) * m;
        T* op = out.data() + (static_cast<int64_t>(r) * m + i) * d + h * hd;
        for (int j = 0; j < m; ++j) {
          T w = pp[j];
          if (w == T(0)) continue;
          const T* vp = vv.data() + (static_cast<int64_t>(r) * m + j) * d + h * hd;
          for (int p = 0; p < hd; ++p) op[p] += w * vp[p];
        }
      }
    }
  }
  auto pp = probs.node(), pvn = v.node();
  return detail::make_op<T>(
      Shape{rows * m, d}, std::move(out), {probs, v},
      [pp, pvn, rows, n_heads, m, d, hd](Node<T>& nd) {
        const auto &prv = pp->value, &vv = pvn->value;
        if (pp->requires_grad) pp->ensure_grad();
        if (pvn->requires_grad) pvn->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          for (int h = 0; h < n_heads; ++h) {
            for (int i = 0; i < m; ++i) {
              const T* go =
                  nd.grad.data() + (static_cast<int64_t>(r) * m + i) * d + h * hd;
              int64_t prow =
                  ((static_cast<int64_t>(r) * n_heads + h) * m + i) * m;
              for (int j = 0; j < m; ++j) {
                int64_t voff = (static_cast<int64_t>(r) * m + j) * d + h * hd;
                if (pp->requires_grad) {
                  T acc = 0;
                  for (int p = 0; p < hd; ++p) acc += go[p] * vv[voff + p];
                  pp->grad[prow + j] += acc;
                }
                if (pvn->requires_grad) {
                  T w = prv[prow + j];
                  if (w != T(0))
                    for (int p = 0; p < hd; ++p)
                      pvn->grad[voff + p] += w * go[p];
                }
              }
            }
          }
        }
      });
}

// W_down(silu(x W_gate) ⊙ (x W_up)); the gated FFN used by the blocks.
template <class T>
Tensor<T> swiglu(const Tensor<T>& x, const Tensor<T>& w_gate,
                 const Tensor<T>& w_up, const Tensor<T>& w_down) {
  return matmul(mul(silu(matmul(x, w_gate)), matmul(x, w_up)), w_down);
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

inline constexpr int kIgnoreIndex = -1;

// Per-position -log softmax(logits)[target]; ignored positions yield 0.
template <class T>
Tensor<T> cross_entropy_per_pos(const Tensor<T>& logits,
                                const std::vector<int>& targets) {
  if (logits.shape().size() != 2) throw ShapeError("cross_entropy: logits not 2-D");
  int n = logits.shape()[0], vsz = logits.shape()[1];
  if (static_cast<int>(targets.size()) != n)
    throw ShapeError("cross_entropy: targets length mismatch");
  for (int t : targets)
    if (t != kIgnoreIndex && (t < 0 || t >= vsz))
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " out of range [0," + std::to_string(vsz) + ")");
  std::vector<T> v(n, T(0));
  const auto& lv = logits.data();
  // cache row max and logsumexp for backward
  std::vector<T> mx(n), lse(n);
  for (int i = 0; i < n; ++i) {
    const T* row = lv.data() + static_cast<int64_t>(i) * vsz;
    T m = row[0];
    for (int j = 1; j < vsz; ++j) m = std::max(m, row[j]);
    T z = 0;
    for (int j = 0; j < vsz; ++j) z += std::exp(row[j] - m);
    mx[i] = m;
    lse[i] = m + std::log(z);
    if (targets[i] != kIgnoreIndex) v[i] = lse[i] - row[targets[i]];
  }
  auto pl = logits.node();
  return detail::make_op<T>(
      Shape{n}, std::move(v), {logits},
      [pl, targets, lse, vsz](Node<T>& nd) {
        pl->ensure_grad();
        int n = static_cast<int>(targets.size());
        for (int i = 0; i < n; ++i) {
          if (targets[i] == kIgnoreIndex) continue;
          T g = nd.grad[i];
          if (g == T(0)) continue;
          const T* row = pl->value.data() + static_cast<int64_t>(i) * vsz;
          T* grow = pl->grad.data() + static_cast<int64_t>(i) * vsz;
          for (int j = 0; j < vsz; ++j) {
            T p = std::exp(row[j] - lse[i]);  // softmax - onehot
            grow[j] += g * (p - (j == targets[i] ? T(1) : T(0)));
          }
        }
      });
}

// Mean over non-ignored positions.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
  auto per = cross_entropy_per_pos(logits, targets);
  int cnt = 0;
  for (int t : targets)
    if (t != kIgnoreIndex) ++cnt;
  if (cnt == 0) throw UsageError("cross_entropy: all targets ignored");
  return scale(sum(per), T(1) / static_cast<T>(cnt));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

struct BackwardStats {
  int64_t nodes_visited = 0;
  int64_t adjoint_calls = 0;
};

// Reverse-mode sweep from a scalar root. Nodes are visited in reverse
// topological order; each adjoint runs exactly once.
template <class T>
BackwardStats backward(Tensor<T>& loss) {
  if (loss.size() != 1) throw UsageError("backward: root must be a scalar");
  auto root = loss.node();
  if (!root->requires_grad)
    throw UsageError("backward: root does not require grad");

  // iterative post-order DFS to get a topological order
  std::vector<Node<T>*> order;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  // state: 0 = unvisited, 1 = in progress, 2 = done
  std::unordered_map<Node<T>*, int> state;
  stack.push_back({root.get(), 0});
  state[root.get()] = 1;
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && state[p] == 0) {
        state[p] = 1;
        stack.push_back({p, 0});
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = T(1);
  BackwardStats stats;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    ++stats.nodes_visited;
    n->visit_count += 1;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
      ++stats.adjoint_calls;
    }
  }
  return stats;
}

}  // namespace loop::num
