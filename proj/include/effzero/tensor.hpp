#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace effzero {

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a) +
                      " vs " + shape_str(b));
}

// Thread-local autograd switch. Inference under NoGradGuard records nothing,
// which is what makes shared read-only model snapshots safe across threads.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
};

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> v;
  std::vector<S> g;  // allocated on demand, same length as v
  bool requires_grad = false;
  uint64_t id = 0;  // creation order; parents always precede children
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::vector<S>& grad() {
    if (g.empty()) g.assign(v.size(), S(0));
    return g;
  }
};

// Value-semantic handle onto a node of the autodiff DAG.
template <typename S>
class Tensor {
 public:
  using Node = TensorNode<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) { return from_data(std::move(shape), {}); }

  static Tensor from_data(Shape shape, std::vector<S> data,
                          bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    const int64_t count = numel(shape);
    n->shape = std::move(shape);
    if (data.empty()) data.assign(count, S(0));
    if (static_cast<int64_t>(data.size()) != count)
      throw TensorError("tensor: data length " + std::to_string(data.size()) +
                        " does not match " + shape_str(n->shape));
    n->v = std::move(data);
    n->requires_grad = requires_grad;
    n->id = next_id();
    return Tensor(std::move(n));
  }

  static Tensor scalar(S value) { return from_data({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int64_t size() const { return static_cast<int64_t>(node_->v.size()); }
  std::vector<S>& data() { return node_->v; }
  const std::vector<S>& data() const { return node_->v; }
  std::vector<S>& grad() { return node_->grad(); }
  const std::vector<S>& grad_view() const { return node_->g; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  S item() const {
    if (size() != 1)
      throw TensorError("item: tensor " + shape_str(shape()) +
                        " is not a scalar");
    return node_->v[0];
  }
  void zero_grad() {
    if (!node_->g.empty()) std::fill(node_->g.begin(), node_->g.end(), S(0));
  }

  std::shared_ptr<Node> node() const { return node_; }

  // Reverse-mode accumulation from a scalar loss into every reachable
  // grad-requiring tensor. Leaf gradients accumulate across repeated calls;
  // interior op gradients are per-pass scratch and reset each time.
  void backward() const {
    if (size() != 1)
      throw TensorError("backward: loss must be a scalar, got " +
                        shape_str(shape()));
    if (!node_->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second)
          stack.push_back(p.get());
      }
    }
    for (Node* n : order)
      if (n->backward && !n->g.empty())
        std::fill(n->g.begin(), n->g.end(), S(0));
    node_->grad()[0] += S(1);

    // Creation ids give a valid topological order: every op node is created
    // after its parents.
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });
    for (Node* n : order)
      if (n->backward && !n->g.empty()) n->backward(*n);
  }

  static uint64_t next_id() {
    thread_local uint64_t counter = 0;
    return ++counter;
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename S>
Tensor<S> make_op(Shape shape, std::vector<S> values,
                  std::vector<std::shared_ptr<TensorNode<S>>> parents,
                  std::function<void(TensorNode<S>&)> backward) {
  auto out = Tensor<S>::from_data(std::move(shape), std::move(values));
  bool track = grad_mode();
  if (track) {
    track = false;
    for (auto& p : parents)
      if (p->requires_grad) track = true;
  }
  if (track) {
    out.node()->requires_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backward = std::move(backward);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a.shape(), b.shape(), "add");
  std::vector<S> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  auto na = a.node(), nb = b.node();
  return detail::make_op<S>(a.shape(), std::move(v), {na, nb},
                            [na, nb](TensorNode<S>& o) {
                              if (na->requires_grad) {
                                auto& g = na->grad();
                                for (size_t i = 0; i < g.size(); ++i)
                                  g[i] += o.g[i];
                              }
                              if (nb->requires_grad) {
                                auto& g = nb->grad();
                                for (size_t i = 0; i < g.size(); ++i)
                                  g[i] += o.g[i];
                              }
                            });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a.shape(), b.shape(), "mul");
  std::vector<S> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  auto na = a.node(), nb = b.node();
  return detail::make_op<S>(a.shape(), std::move(v), {na, nb},
                            [na, nb](TensorNode<S>& o) {
                              if (na->requires_grad) {
                                auto& g = na->grad();
                                for (size_t i = 0; i < g.size(); ++i)
                                  g[i] += o.g[i] * nb->v[i];
                              }
                              if (nb->requires_grad) {
                                auto& g = nb->grad();
                                for (size_t i = 0; i < g.size(); ++i)
                                  g[i] += o.g[i] * na->v[i];
                              }
                            });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] * c;
  auto na = a.node();
  return detail::make_op<S>(a.shape(), std::move(v), {na},
                            [na, c](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                g[i] += o.g[i] * c;
                            });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  std::vector<S> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] + c;
  auto na = a.node();
  return detail::make_op<S>(a.shape(), std::move(v), {na},
                            [na](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                g[i] += o.g[i];
                            });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, scale(b, S(-1)));
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i)
    v[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
  auto na = a.node();
  // Subgradient 0 at the kink.
  return detail::make_op<S>(a.shape(), std::move(v), {na},
                            [na](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                if (na->v[i] > S(0)) g[i] += o.g[i];
                            });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i)
    v[i] = S(1) / (S(1) + std::exp(-a.data()[i]));
  auto na = a.node();
  return detail::make_op<S>(a.shape(), std::move(v), {na},
                            [na](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                g[i] += o.g[i] * o.v[i] * (S(1) - o.v[i]);
                            });
}

template <typename S>
Tensor<S> tanh_op(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = std::tanh(a.data()[i]);
  auto na = a.node();
  return detail::make_op<S>(a.shape(), std::move(v), {na},
                            [na](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                g[i] += o.g[i] * (S(1) - o.v[i] * o.v[i]);
                            });
}

template <typename S>
Tensor<S> log_op(const Tensor<S>& a) {
  std::vector<S> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) {
    if (a.data()[i] <= S(0))
      throw TensorError("log: non-positive input");
    v[i] = std::log(a.data()[i]);
  }
  auto na = a.node();
  return detail::make_op<S>(a.shape(), std::move(v), {na},
                            [na](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                g[i] += o.g[i] / na->v[i];
                            });
}

// Identity forward; gradients multiplied by s on the way back. Used for the
// optional dynamics-unroll gradient damping.
template <typename S>
Tensor<S> scale_gradient(const Tensor<S>& a, S s) {
  std::vector<S> v = a.data();
  auto na = a.node();
  return detail::make_op<S>(a.shape(), std::move(v), {na},
                            [na, s](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                g[i] += o.g[i] * s;
                            });
}

// Detaches from the graph: same values, no gradient path.
template <typename S>
Tensor<S> stop_gradient(const Tensor<S>& a) {
  return Tensor<S>::from_data(a.shape(), a.data(), false);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// C[m,n] = A[m,k] * B[k,n]. Inner loops are laid out ikj so the compiler can
// vectorize over the contiguous rows of B and C.
template <typename S>
void matmul_raw(const S* a, const S* b, S* c, int m, int k, int n,
                bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<int64_t>(m) * n, S(0));
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<int64_t>(i) * k;
    S* crow = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      const S* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A^T[m,k'] * ... helper: c[k,n] += a^T(a is [m,k]) * b[m,n]
template <typename S>
void matmul_at_b(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<int64_t>(i) * k;
    const S* brow = b + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      S* crow = c + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += a[m,n] * b^T (b is [k,n])
template <typename S>
void matmul_a_bt(const S* a, const S* b, S* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<int64_t>(i) * n;
    S* crow = c + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const S* brow = b + static_cast<int64_t>(p) * n;
      S acc = S(0);
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.dim(1) != b.dim(0))
    throw TensorError("matmul: shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> v(static_cast<int64_t>(m) * n);
  matmul_raw(a.data().data(), b.data().data(), v.data(), m, k, n, false);
  auto na = a.node(), nb = b.node();
  return detail::make_op<S>(
      {m, n}, std::move(v), {na, nb}, [na, nb, m, k, n](TensorNode<S>& o) {
        if (na->requires_grad)
          matmul_a_bt(o.g.data(), nb->v.data(), na->grad().data(), m, n, k);
        if (nb->requires_grad)
          matmul_at_b(na->v.data(), o.g.data(), nb->grad().data(), m, k, n);
      });
}

// x[B,F] + bias[F], broadcast over rows.
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  if (x.shape().size() != 2 || bias.shape().size() != 1 ||
      x.dim(1) != bias.dim(0))
    throw TensorError("add_bias: shape mismatch " + shape_str(x.shape()) +
                      " vs " + shape_str(bias.shape()));
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<S> v(x.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      v[static_cast<int64_t>(r) * cols + c] =
          x.data()[static_cast<int64_t>(r) * cols + c] + bias.data()[c];
  auto nx = x.node(), nb = bias.node();
  return detail::make_op<S>(
      x.shape(), std::move(v), {nx, nb}, [nx, nb, rows, cols](TensorNode<S>& o) {
        if (nx->requires_grad) {
          auto& g = nx->grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += o.g[i];
        }
        if (nb->requires_grad) {
          auto& g = nb->grad();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
              g[c] += o.g[static_cast<int64_t>(r) * cols + c];
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and row operations (2-D tensors [B, N])
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  S total = S(0);
  for (S x : a.data()) total += x;
  auto na = a.node();
  return detail::make_op<S>({1}, {total}, {na}, [na](TensorNode<S>& o) {
    auto& g = na->grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.g[0];
  });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.size()));
}

template <typename S>
Tensor<S> row_sum(const Tensor<S>& a) {
  if (a.shape().size() != 2)
    throw TensorError("row_sum: expected 2-D, got " + shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<S> v(rows, S(0));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      v[r] += a.data()[static_cast<int64_t>(r) * cols + c];
  auto na = a.node();
  return detail::make_op<S>({rows}, std::move(v), {na},
                            [na, rows, cols](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (int r = 0; r < rows; ++r)
                                for (int c = 0; c < cols; ++c)
                                  g[static_cast<int64_t>(r) * cols + c] +=
                                      o.g[r];
                            });
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  if (a.shape().size() != 2)
    throw TensorError("softmax: expected 2-D, got " + shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<S> v(a.size());
  for (int r = 0; r < rows; ++r) {
    const S* row = a.data().data() + static_cast<int64_t>(r) * cols;
    S* out = v.data() + static_cast<int64_t>(r) * cols;
    S mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    S sum = S(0);
    for (int c = 0; c < cols; ++c) {
      out[c] = std::exp(row[c] - mx);
      sum += out[c];
    }
    for (int c = 0; c < cols; ++c) out[c] /= sum;
  }
  auto na = a.node();
  return detail::make_op<S>(
      a.shape(), std::move(v), {na}, [na, rows, cols](TensorNode<S>& o) {
        auto& g = na->grad();
        for (int r = 0; r < rows; ++r) {
          const S* y = o.v.data() + static_cast<int64_t>(r) * cols;
          const S* gy = o.g.data() + static_cast<int64_t>(r) * cols;
          S dot = S(0);
          for (int c = 0; c < cols; ++c) dot += y[c] * gy[c];
          for (int c = 0; c < cols; ++c)
            g[static_cast<int64_t>(r) * cols + c] += y[c] * (gy[c] - dot);
        }
      });
}

template <typename S>
Tensor<S> log_softmax_rows(const Tensor<S>& a) {
  if (a.shape().size() != 2)
    throw TensorError("log_softmax: expected 2-D, got " +
                      shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<S> v(a.size());
  for (int r = 0; r < rows; ++r) {
    const S* row = a.data().data() + static_cast<int64_t>(r) * cols;
    S* out = v.data() + static_cast<int64_t>(r) * cols;
    S mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    S sum = S(0);
    for (int c = 0; c < cols; ++c) sum += std::exp(row[c] - mx);
    const S lse = mx + std::log(sum);
    for (int c = 0; c < cols; ++c) out[c] = row[c] - lse;
  }
  auto na = a.node();
  return detail::make_op<S>(
      a.shape(), std::move(v), {na}, [na, rows, cols](TensorNode<S>& o) {
        auto& g = na->grad();
        for (int r = 0; r < rows; ++r) {
          const S* y = o.v.data() + static_cast<int64_t>(r) * cols;
          const S* gy = o.g.data() + static_cast<int64_t>(r) * cols;
          S gsum = S(0);
          for (int c = 0; c < cols; ++c) gsum += gy[c];
          for (int c = 0; c < cols; ++c)
            g[static_cast<int64_t>(r) * cols + c] +=
                gy[c] - std::exp(y[c]) * gsum;
        }
      });
}

template <typename S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(0) != b.dim(0))
    throw TensorError("concat: shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  std::vector<S> v(static_cast<int64_t>(rows) * (ca + cb));
  for (int r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + static_cast<int64_t>(r) * ca, ca,
                v.data() + static_cast<int64_t>(r) * (ca + cb));
    std::copy_n(b.data().data() + static_cast<int64_t>(r) * cb, cb,
                v.data() + static_cast<int64_t>(r) * (ca + cb) + ca);
  }
  auto na = a.node(), nb = b.node();
  return detail::make_op<S>(
      {rows, ca + cb}, std::move(v), {na, nb},
      [na, nb, rows, ca, cb](TensorNode<S>& o) {
        if (na->requires_grad) {
          auto& g = na->grad();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < ca; ++c)
              g[static_cast<int64_t>(r) * ca + c] +=
                  o.g[static_cast<int64_t>(r) * (ca + cb) + c];
        }
        if (nb->requires_grad) {
          auto& g = nb->grad();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cb; ++c)
              g[static_cast<int64_t>(r) * cb + c] +=
                  o.g[static_cast<int64_t>(r) * (ca + cb) + ca + c];
        }
      });
}

// Columns [begin, end) of a 2-D tensor.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, int begin, int end) {
  if (a.shape().size() != 2 || begin < 0 || end > a.dim(1) || begin >= end)
    throw TensorError("slice: invalid range [" + std::to_string(begin) + "," +
                      std::to_string(end) + ") for " + shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1), w = end - begin;
  std::vector<S> v(static_cast<int64_t>(rows) * w);
  for (int r = 0; r < rows; ++r)
    std::copy_n(a.data().data() + static_cast<int64_t>(r) * cols + begin, w,
                v.data() + static_cast<int64_t>(r) * w);
  auto na = a.node();
  return detail::make_op<S>({rows, w}, std::move(v), {na},
                            [na, rows, cols, begin, w](TensorNode<S>& o) {
                              auto& g = na->grad();
                              for (int r = 0; r < rows; ++r)
                                for (int c = 0; c < w; ++c)
                                  g[static_cast<int64_t>(r) * cols + begin +
                                    c] += o.g[static_cast<int64_t>(r) * w + c];
                            });
}

// Row-wise x / max(||x||2, eps).
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& a, S eps = S(1e-8)) {
  if (a.shape().size() != 2)
    throw TensorError("l2_normalize: expected 2-D, got " +
                      shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<S> v(a.size());
  std::vector<S> norms(rows);
  for (int r = 0; r < rows; ++r) {
    const S* row = a.data().data() + static_cast<int64_t>(r) * cols;
    S ss = S(0);
    for (int c = 0; c < cols; ++c) ss += row[c] * row[c];
    const S norm = std::max(std::sqrt(ss), eps);
    norms[r] = norm;
    for (int c = 0; c < cols; ++c)
      v[static_cast<int64_t>(r) * cols + c] = row[c] / norm;
  }
  auto na = a.node();
  return detail::make_op<S>(
      a.shape(), std::move(v), {na},
      [na, rows, cols, norms = std::move(norms), eps](TensorNode<S>& o) {
        auto& g = na->grad();
        for (int r = 0; r < rows; ++r) {
          const S* y = o.v.data() + static_cast<int64_t>(r) * cols;
          const S* gy = o.g.data() + static_cast<int64_t>(r) * cols;
          const S* x = na->v.data() + static_cast<int64_t>(r) * cols;
          const S norm = norms[r];
          // Past the eps floor the map is linear in x.
          S xx = S(0);
          for (int c = 0; c < cols; ++c) xx += x[c] * x[c];
          const bool floored = std::sqrt(xx) < eps;
          S dot = S(0);
          for (int c = 0; c < cols; ++c) dot += y[c] * gy[c];
          for (int c = 0; c < cols; ++c) {
            S d = gy[c] / norm;
            if (!floored) d -= y[c] * dot / norm;
            g[static_cast<int64_t>(r) * cols + c] += d;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d, 3x3 kernels, stride 1 or 2, zero padding 1
// x: [B, Cin, H, W], w: [Cout, Cin, 3, 3], bias: [Cout]
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> conv2d_3x3(const Tensor<S>& x, const Tensor<S>& w,
                     const Tensor<S>& bias, int stride) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || w.dim(2) != 3 ||
      w.dim(3) != 3 || x.dim(1) != w.dim(1))
    throw TensorError("conv2d: shape mismatch " + shape_str(x.shape()) +
                      " vs " + shape_str(w.shape()));
  if (stride != 1 && stride != 2)
    throw TensorError("conv2d: stride must be 1 or 2");
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0);
  const int Ho = (H + 2 - 3) / stride + 1;
  const int Wo = (W + 2 - 3) / stride + 1;
  std::vector<S> v(static_cast<int64_t>(B) * Cout * Ho * Wo, S(0));

  auto xin = [&](int b, int c, int i, int j) -> S {
    if (i < 0 || i >= H || j < 0 || j >= W) return S(0);
    return x.data()[((static_cast<int64_t>(b) * Cin + c) * H + i) * W + j];
  };
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < Cout; ++oc)
      for (int oi = 0; oi < Ho; ++oi)
        for (int oj = 0; oj < Wo; ++oj) {
          S acc = bias.data()[oc];
          for (int ic = 0; ic < Cin; ++ic)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj)
                acc += w.data()[((static_cast<int64_t>(oc) * Cin + ic) * 3 +
                                 ki) *
                                    3 +
                                kj] *
                       xin(b, ic, oi * stride + ki - 1, oj * stride + kj - 1);
          v[((static_cast<int64_t>(b) * Cout + oc) * Ho + oi) * Wo + oj] = acc;
        }

  auto nx = x.node(), nw = w.node(), nb = bias.node();
  return detail::make_op<S>(
      {B, Cout, Ho, Wo}, std::move(v), {nx, nw, nb},
      [nx, nw, nb, B, Cin, H, W, Cout, Ho, Wo, stride](TensorNode<S>& o) {
        for (int b = 0; b < B; ++b)
          for (int oc = 0; oc < Cout; ++oc)
            for (int oi = 0; oi < Ho; ++oi)
              for (int oj = 0; oj < Wo; ++oj) {
                const S go =
                    o.g[((static_cast<int64_t>(b) * Cout + oc) * Ho + oi) *
                            Wo +
                        oj];
                if (nb->requires_grad) nb->grad()[oc] += go;
                for (int ic = 0; ic < Cin; ++ic)
                  for (int ki = 0; ki < 3; ++ki)
                    for (int kj = 0; kj < 3; ++kj) {
                      const int i = oi * stride + ki - 1;
                      const int j = oj * stride + kj - 1;
                      if (i < 0 || i >= H || j < 0 || j >= W) continue;
                      const int64_t xi =
                          ((static_cast<int64_t>(b) * Cin + ic) * H + i) * W +
                          j;
                      const int64_t wi =
                          ((static_cast<int64_t>(oc) * Cin + ic) * 3 + ki) *
                              3 +
                          kj;
                      if (nw->requires_grad)
                        nw->grad()[wi] += go * nx->v[xi];
                      if (nx->requires_grad)
                        nx->grad()[xi] += go * nw->v[wi];
                    }
              }
      });
}

// Flattens [B, C, H, W] to [B, C*H*W] (or any trailing dims).
template <typename S>
Tensor<S> flatten_rows(const Tensor<S>& x) {
  if (x.shape().size() < 2)
    throw TensorError("flatten: expected >= 2-D, got " +
                      shape_str(x.shape()));
  const int rows = x.dim(0);
  const int cols = static_cast<int>(x.size() / rows);
  std::vector<S> v = x.data();
  auto nx = x.node();
  return detail::make_op<S>({rows, cols}, std::move(v), {nx},
                            [nx](TensorNode<S>& o) {
                              auto& g = nx->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                g[i] += o.g[i];
                            });
}

// Reshapes [B, F] to [B, C, H, W]; F must equal C*H*W.
template <typename S>
Tensor<S> reshape_to_4d(const Tensor<S>& x, int C, int H, int W) {
  if (x.shape().size() != 2 || x.dim(1) != C * H * W)
    throw TensorError("reshape: cannot view " + shape_str(x.shape()) +
                      " as channels " + std::to_string(C));
  const int rows = x.dim(0);
  std::vector<S> v = x.data();
  auto nx = x.node();
  return detail::make_op<S>({rows, C, H, W}, std::move(v), {nx},
                            [nx](TensorNode<S>& o) {
                              auto& g = nx->grad();
                              for (size_t i = 0; i < g.size(); ++i)
                                g[i] += o.g[i];
                            });
}

}  // namespace effzero
