#pragma once

// Dense row-major f64 tensors with tape-based reverse-mode differentiation.
//
// Operations record themselves on the thread's active Tape (see TapeScope)
// whenever at least one input requires a gradient. Without an active tape
// every operation is a plain forward computation. Leaf tensors (parameters)
// accumulate gradients across backward passes until zero_grad() is called.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nfsm/error.hpp"

namespace nfsm {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline Shape shape_strides(const Shape& s) {
  Shape st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  bool recorded = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<detail::Node> n) {
    n->recorded = true;
    entries_.push_back(std::move(n));
  }
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Reverse sweep from a scalar root. Intermediate gradients are reset
  // first so that only leaves accumulate across repeated calls.
  inline void backward(const Tensor& root);

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<std::shared_ptr<detail::Node>> entries_;
};

// Makes `tape` the recording target for the current thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

class Tensor {
 public:
  Tensor() : Tensor(Shape{1}) {}
  explicit Tensor(Shape shape) : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0)) {}
  Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape)
      if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape));
    if (shape.empty()) throw ShapeError("tensor must have at least one dimension");
    if (shape_numel(shape) != values.size())
      throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                       " values, got " + std::to_string(values.size()));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }
  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
  }

  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  std::size_t size() const noexcept { return node_->value.size(); }

  std::span<double> data() noexcept { return node_->value; }
  std::span<const double> data() const noexcept { return node_->value; }
  const std::vector<double>& values() const noexcept { return node_->value; }

  // Gradient view; zeros if nothing has been accumulated yet.
  std::span<const double> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t flat) const { return node_->value[flat]; }
  double at(std::size_t i, std::size_t j) const { return node_->value[i * node_->shape.back() + j]; }

  std::size_t flat_index(std::span<const std::size_t> idx) const {
    if (idx.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
    auto st = shape_strides(shape());
    std::size_t f = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= shape()[k]) throw ShapeError("index out of range for " + shape_str(shape()));
      f += idx[k] * st[k];
    }
    return f;
  }

  // Deep copy of value (and nothing else); the copy is a fresh leaf.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  const void* node_id() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  friend class Tape;
  std::shared_ptr<detail::Node> node_;
};

inline void Tape::backward(const Tensor& root) {
  if (root.size() != 1) throw ShapeError("backward needs a scalar root, got " + shape_str(root.shape()));
  for (auto& n : entries_) n->grad.assign(n->value.size(), 0.0);
  auto& r = *root.node_;
  r.ensure_grad();
  r.grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& n = **it;
    if (n.backward) n.backward(n);
  }
}

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Attaches `fn` to `out` when recording is active and an input needs grads.
inline void link(Tensor& out, std::initializer_list<const Tensor*> inputs,
                 std::function<void(Node&)> fn) {
  Tape* tape = Tape::active();
  if (!tape || !any_requires_grad(inputs)) return;
  auto& n = *out.node();
  n.requires_grad = true;
  for (auto* t : inputs) n.parents.push_back(t->node());
  n.backward = std::move(fn);
  tape->record(out.node());
}

// Parent gradient buffer if that parent participates, else nullptr.
inline double* parent_grad(Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q)
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<double> c(p * r, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = A[i * q + k];
      const double* brow = B + k * r;
      double* crow = c.data() + i * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  Tensor out({p, r}, std::move(c));
  detail::link(out, {&a, &b}, [p, q, r](detail::Node& self) {
    const double* G = self.grad.data();
    const double* A = self.parents[0]->value.data();
    const double* B = self.parents[1]->value.data();
    if (double* dA = detail::parent_grad(self, 0))  // dA = G Bt
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < q; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < r; ++j) s += G[i * r + j] * B[k * r + j];
          dA[i * q + k] += s;
        }
    if (double* dB = detail::parent_grad(self, 1))  // dB = At G
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < q; ++k) {
          const double aik = A[i * q + k];
          for (std::size_t j = 0; j < r; ++j) dB[k * r + j] += aik * G[i * r + j];
        }
  });
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t p = a.dim(0), q = a.dim(1);
  std::vector<double> v(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) v[j * p + i] = a.data()[i * q + j];
  Tensor out({q, p}, std::move(v));
  detail::link(out, {&a}, [p, q](detail::Node& self) {
    double* dA = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) dA[i * q + j] += self.grad[j * p + i];
  });
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  Tensor out(a.shape(), std::move(v));
  detail::link(out, {&a, &b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* d = detail::parent_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
  return out;
}

// Elementwise product of equally shaped tensors.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  Tensor out(a.shape(), std::move(v));
  detail::link(out, {&a, &b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (double* d = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * bv[i];
    if (double* d = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * av[i];
  });
  return out;
}

// Scalar-tensor product, the only broadcast the engine supports.
inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * c;
  Tensor out(a.shape(), std::move(v));
  detail::link(out, {&a}, [c](detail::Node& self) {
    double* d = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += c * self.grad[i];
  });
  return out;
}

// x[p x q] + bias[q] added to every row.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 2, "add_bias");
  detail::require_rank(bias, 1, "add_bias");
  const std::size_t p = x.dim(0), q = x.dim(1);
  if (bias.dim(0) != q)
    throw ShapeError("add_bias: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
  std::vector<double> v(x.values());
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) v[i * q + j] += bias[j];
  Tensor out(x.shape(), std::move(v));
  detail::link(out, {&x, &bias}, [p, q](detail::Node& self) {
    if (double* dx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < p * q; ++i) dx[i] += self.grad[i];
    if (double* db = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) db[j] += self.grad[i * q + j];
  });
  return out;
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > 0.0 ? x[i] : 0.0;
  Tensor out(x.shape(), std::move(v));
  detail::link(out, {&x}, [](detail::Node& self) {
    double* d = detail::parent_grad(self, 0);
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xv[i] > 0.0) d[i] += self.grad[i];
  });
  return out;
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  detail::link(out, {&x}, [](detail::Node& self) {
    double* d = detail::parent_grad(self, 0);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) d[i] += g;
  });
  return out;
}

// Sum of equally shaped tensors, accumulated left to right.
inline Tensor add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw ArgumentError("add_n: empty input");
  std::vector<double> v(xs[0].values());
  for (std::size_t k = 1; k < xs.size(); ++k) {
    detail::require_same(xs[0], xs[k], "add_n");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += xs[k][i];
  }
  Tensor out(xs[0].shape(), std::move(v));
  Tape* tape = Tape::active();
  bool track = tape && std::any_of(xs.begin(), xs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (const auto& t : xs) n.parents.push_back(t.node());
    n.backward = [](detail::Node& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k)
        if (double* d = detail::parent_grad(self, k))
          for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    };
    tape->record(out.node());
  }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor out(std::move(shape), x.values());
  detail::link(out, {&x}, [](detail::Node& self) {
    double* d = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
  return out;
}

// Softmax over the trailing axis, max-subtracted.
inline Tensor softmax_last(const Tensor& x) {
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.size() / k;
  std::vector<double> v(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * k;
    double* o = v.data() + r * k;
    double mx = in[0];
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(in[j])) throw NumericError("softmax_last: non-finite input");
      mx = std::max(mx, in[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < k; ++j) o[j] /= z;
  }
  Tensor out(x.shape(), std::move(v));
  detail::link(out, {&x}, [k, rows](detail::Node& self) {
    double* d = detail::parent_grad(self, 0);
    const double* y = self.value.data();
    const double* g = self.grad.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
      for (std::size_t j = 0; j < k; ++j) d[r * k + j] += y[r * k + j] * (g[r * k + j] - dot);
    }
  });
  return out;
}

inline Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("mean_over_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  std::vector<double> v(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) v[o * inner + i] += x[(o * len + l) * inner + i];
  for (double& e : v) e /= static_cast<double>(len);
  Tensor out(std::move(os), std::move(v));
  detail::link(out, {&x}, [outer, inner, len](detail::Node& self) {
    double* d = detail::parent_grad(self, 0);
    const double w = 1.0 / static_cast<double>(len);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) d[(o * len + l) * inner + i] += w * self.grad[o * inner + i];
  });
  return out;
}

// Normalises each trailing-axis slice to zero mean and unit variance.
inline Tensor layer_norm_last(const Tensor& x, double eps = 1e-5) {
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.size() / k;
  std::vector<double> v(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * k;
    double mu = 0.0;
    for (std::size_t j = 0; j < k; ++j) mu += in[j];
    mu /= static_cast<double>(k);
    double var = 0.0;
    for (std::size_t j = 0; j < k; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(k);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < k; ++j) v[r * k + j] = (in[j] - mu) * inv_std[r];
  }
  Tensor out(x.shape(), std::move(v));
  detail::link(out, {&x}, [k, rows, inv_std = std::move(inv_std)](detail::Node& self) {
    double* d = detail::parent_grad(self, 0);
    const double* y = self.value.data();
    const double* g = self.grad.data();
    const double kk = static_cast<double>(k);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        gs += g[r * k + j];
        gy += g[r * k + j] * y[r * k + j];
      }
      for (std::size_t j = 0; j < k; ++j)
        d[r * k + j] += inv_std[r] * (g[r * k + j] - gs / kk - y[r * k + j] * gy / kk);
    }
  });
  return out;
}

// Selects rows of a matrix by index (repeats allowed); gradients scatter-add.
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> rows) {
  detail::require_rank(x, 2, "gather_rows");
  const std::size_t p = x.dim(0), q = x.dim(1);
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  std::vector<double> v(rows.size() * q);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= p)
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(x.shape()));
    std::copy_n(x.data().data() + rows[i] * q, q, v.data() + i * q);
  }
  Tensor out({rows.size(), q}, std::move(v));
  detail::link(out, {&x}, [q, rows = std::move(rows)](detail::Node& self) {
    double* d = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < q; ++j) d[rows[i] * q + j] += self.grad[i * q + j];
  });
  return out;
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_rows");
  if (begin >= end || end > x.dim(0))
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(x, std::move(idx));
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "concat_rows");
  detail::require_rank(b, 2, "concat_rows");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("concat_rows: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<double> v(a.values());
  v.insert(v.end(), b.values().begin(), b.values().end());
  const std::size_t na = a.size();
  Tensor out({a.dim(0) + b.dim(0), a.dim(1)}, std::move(v));
  detail::link(out, {&a, &b}, [na](detail::Node& self) {
    if (double* da = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < na; ++i) da[i] += self.grad[i];
    if (double* db = detail::parent_grad(self, 1))
      for (std::size_t i = na; i < self.grad.size(); ++i) db[i - na] += self.grad[i];
  });
  return out;
}

// Stacks equally sized tensors as the rows of a [count x size] matrix.
inline Tensor stack_rows(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("stack_rows: empty input");
  const std::size_t k = xs[0].size();
  std::vector<double> v;
  v.reserve(xs.size() * k);
  for (const auto& x : xs) {
    if (x.size() != k) throw ShapeError("stack_rows: row sizes differ");
    v.insert(v.end(), x.values().begin(), x.values().end());
  }
  Tensor out({xs.size(), k}, std::move(v));
  Tape* tape = Tape::active();
  if (tape && std::any_of(xs.begin(), xs.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (const auto& t : xs) n.parents.push_back(t.node());
    n.backward = [k](detail::Node& self) {
      for (std::size_t r = 0; r < self.parents.size(); ++r)
        if (double* d = detail::parent_grad(self, r))
          for (std::size_t j = 0; j < k; ++j) d[j] += self.grad[r * k + j];
    };
    tape->record(out.node());
  }
  return out;
}

inline constexpr double kProbFloor = 1e-12;

// -sum_j onehot[j] * log(clamp(pred[j], 1e-12, 1)).
inline Tensor cross_entropy(const Tensor& pred, const Tensor& onehot) {
  detail::require_same(pred, onehot, "cross_entropy");
  double loss = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (onehot[j] == 0.0) continue;
    if (!std::isfinite(pred[j])) throw NumericError("cross_entropy: non-finite probability");
    loss -= onehot[j] * std::log(std::clamp(pred[j], kProbFloor, 1.0));
  }
  Tensor out = Tensor::scalar(loss);
  detail::link(out, {&pred, &onehot}, [](detail::Node& self) {
    const auto& p = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    const double g = self.grad[0];
    if (double* dp = detail::parent_grad(self, 0))
      for (std::size_t j = 0; j < p.size(); ++j)
        if (y[j] != 0.0 && p[j] > kProbFloor && p[j] <= 1.0) dp[j] -= g * y[j] / p[j];
    if (double* dy = detail::parent_grad(self, 1))
      for (std::size_t j = 0; j < p.size(); ++j) dy[j] -= g * std::log(std::clamp(p[j], kProbFloor, 1.0));
  });
  return out;
}

// softmax(q kt / sqrt(d)) v.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  detail::require_rank(q, 2, "scaled_dot_attention");
  detail::require_rank(k, 2, "scaled_dot_attention");
  detail::require_rank(v, 2, "scaled_dot_attention");
  if (q.dim(1) != k.dim(1) || k.dim(1) != v.dim(1) || k.dim(0) != v.dim(0))
    throw ShapeError("scaled_dot_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                     ", v " + shape_str(v.shape()));
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return matmul(softmax_last(scale(matmul(q, transpose(k)), inv)), v);
}

}  // namespace nfsm
