// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// Every op returns a fresh node. When at least one input requires a gradient
// the node records its inputs and an adjoint closure; `backward` walks the
// recorded graph in reverse topological order. Leaves (parameters, data) keep
// their gradient accumulators between graphs, interior nodes are single use.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace pgca {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline thread_local bool grad_disabled = false;

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> v(numel(shape), value);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  /// Builds a leaf. Rejects shape/length mismatch and non-finite values.
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    }
    for (double x : values) {
      if (!std::isfinite(x)) throw NumericError("tensor: non-finite value at construction");
    }
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return from({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.size() > 1 ? node_->shape[1] : 1; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() {
    if (!node_->is_leaf) throw GraphError("tensor: only leaves may be mutated in place");
    return node_->value;
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf) throw GraphError("tensor: requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
  }
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy of the values into a new leaf.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->value, requires_grad);
  }

  /// Returns a non-recording leaf holding the same values.
  Tensor detach() const { return clone(false); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  Tensor(Shape shape, std::vector<double> values, bool requires_grad)
      : node_(std::make_shared<detail::Node>()) {
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape, std::vector<double>, std::span<const Tensor* const>,
                            std::function<void(detail::Node&)>);
};

/// Wraps a freshly computed value as a graph node. Gradient recording happens
/// only if some input requires it and recording is not disabled.
inline Tensor make_result(Shape shape, std::vector<double> value, std::span<const Tensor* const> inputs,
                          std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool record = false;
  if (!detail::grad_disabled) {
    for (const Tensor* t : inputs) record = record || t->requires_grad();
  }
  if (record) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->inputs.reserve(inputs.size());
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                          std::function<void(detail::Node&)> backward) {
  return make_result(std::move(shape), std::move(value),
                     std::span<const Tensor* const>(inputs.begin(), inputs.size()), std::move(backward));
}

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                    double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

inline void check_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (std::isnan(x)) throw NumericError(std::string(op) + ": NaN input");
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": infinite input");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " @ " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) detail::gemm_nt(m, n, k, self.grad.data(), bn.value.data(), an.ensure_grad().data());
    if (bn.requires_grad) detail::gemm_tn(k, m, n, an.value.data(), self.grad.data(), bn.ensure_grad().data());
  });
}

/// a @ b^T without materialising the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " @ " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nt(m, k, n, a.data().data(), b.data().data(), out.data());
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    // dA = G B, dB = G^T A
    if (an.requires_grad) detail::gemm_nn(m, n, k, self.grad.data(), bn.value.data(), an.ensure_grad().data());
    if (bn.requires_grad) detail::gemm_tn(n, m, k, self.grad.data(), an.value.data(), bn.ensure_grad().data());
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto v = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return make_result({n, m}, std::move(out), {&a}, [m, n](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.value[i];
    }
  });
}

/// Multiplies by a compile-time-style constant (no gradient for c).
inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& x : out) x *= c;
  return make_result(a.shape(), std::move(out), {&a}, [c](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

/// s * a where s is a one-element tensor that may itself require a gradient.
inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: factor must have one element, got " + shape_str(s.shape()));
  const double sv = s[0];
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& x : out) x *= sv;
  return make_result(a.shape(), std::move(out), {&a, &s}, [](detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& sn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sn.value[0] * self.grad[i];
    }
    if (sn.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * an.value[i];
      sn.ensure_grad()[0] += acc;
    }
  });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& x : out) x = std::tanh(x);
  return make_result(a.shape(), std::move(out), {&a}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += (1.0 - y * y) * self.grad[i];
    }
  });
}

/// Exact GELU, x * Phi(x).
inline Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
  return make_result(a.shape(), std::move(out), {&a}, [](detail::Node& self) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = in.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      g[i] += (cdf + x * pdf) * self.grad[i];
    }
  });
}

/// Adds a constant (non-differentiable) tensor of the same shape, e.g. an
/// additive attention mask.
inline Tensor add_constant(const Tensor& a, std::span<const double> c) {
  if (c.size() != a.size()) throw ShapeError("add_constant: size mismatch");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return make_result(a.shape(), std::move(out), {&a}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Broadcasting (bias vectors only)

/// a[m x n] + b where b holds n values (shape [n] or [1 x n]).
inline Tensor add_bias(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "add_bias");
  const std::size_t m = a.rows(), n = a.cols();
  if (b.size() != n) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return make_result(a.shape(), std::move(out), {&a, &b}, [m, n](detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

/// Repeats a row vector (n values) into an [m x n] matrix.
inline Tensor broadcast_rows(const Tensor& v, std::size_t m) {
  const std::size_t n = v.size();
  if (m == 0) throw ShapeError("broadcast_rows: zero rows");
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy(v.data().begin(), v.data().end(), out.begin() + i * n);
  return make_result({m, n}, std::move(out), {&v}, [m, n](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
  });
}

/// Column-wise mean, [m x n] -> [1 x n].
inline Tensor mean_rows(const Tensor& a) {
  detail::require_rank2(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
  for (double& x : out) x /= static_cast<double>(m);
  return make_result({1, n}, std::move(out), {&a}, [m, n](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
  });
}

// ---------------------------------------------------------------------------
// Reshaping

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  detail::require_rank2(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (c0 >= c1 || c1 > n) throw ShapeError("slice_cols: bad range for " + shape_str(a.shape()));
  const std::size_t w = c1 - c0;
  std::vector<double> out(m * w);
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy(av.begin() + i * n + c0, av.begin() + i * n + c1, out.begin() + i * w);
  return make_result({m, w}, std::move(out), {&a}, [m, n, w, c0](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + c0 + j] += self.grad[i * w + j];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    auto pv = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(pv.begin() + i * w, pv.begin() + (i + 1) * w, out.begin() + i * n + off);
    widths.push_back(w);
    off += w;
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return make_result({m, n}, std::move(out), inputs, [m, n, widths](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t w = widths[k];
      if (self.inputs[k]->requires_grad) {
        auto& g = self.inputs[k]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * n + off + j];
      }
      off += w;
    }
  });
}

/// Row gather: out[t] = table[ids[t]].
inline Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  detail::require_rank2(table, "embedding");
  const std::size_t v = table.rows(), d = table.cols(), t = ids.size();
  if (t == 0) throw ShapeError("embedding: empty id list");
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<double> out(t * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < t; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
      throw ShapeError("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(v) + " rows");
    }
    std::copy(tv.begin() + idx[i] * d, tv.begin() + (idx[i] + 1) * d, out.begin() + i * d);
  }
  return make_result({t, d}, std::move(out), {&table}, [idx = std::move(idx), d](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
  });
}

/// im2col along time for a 1-D convolution with odd kernel and same padding:
/// out[t, j*F + f] = x[t + j - k/2, f], zero outside the sequence.
inline Tensor unfold_time(const Tensor& x, std::size_t kernel) {
  detail::require_rank2(x, "unfold_time");
  if (kernel == 0 || kernel % 2 == 0) throw ShapeError("unfold_time: kernel must be odd");
  const std::size_t t = x.rows(), f = x.cols();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<double> out(t * kernel * f, 0.0);
  auto xv = x.data();
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < kernel; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(j) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
      std::copy(xv.begin() + src * f, xv.begin() + (src + 1) * f, out.begin() + i * kernel * f + j * f);
    }
  }
  return make_result({t, kernel * f}, std::move(out), {&x}, [t, f, kernel, pad](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
        for (std::size_t c = 0; c < f; ++c) g[src * f + c] += self.grad[i * kernel * f + j * f + c];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalisation

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result({1}, {s}, {&a}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& x : g) x += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Softmax along `axis`, computed with max subtraction.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
  }
  detail::check_finite(x.data(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  return make_result(s, std::move(out), {&x}, [outer, inner, len](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += self.grad[base + k * inner] * self.value[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = base + k * inner;
          g[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

/// Per-row normalisation over the last extent followed by gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: width " + std::to_string(d) + " but gamma " + shape_str(gamma.shape()) +
                     ", beta " + shape_str(beta.shape()));
  }
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(m * d);
  // xhat and 1/sigma per row are needed by the adjoint.
  auto xhat = std::make_shared<std::vector<double>>(m * d);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[i * d + j] - mu) * is;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result({m, d}, std::move(out), {&x, &gamma, &beta}, [m, d, xhat, inv_std](detail::Node& self) {
    auto& xn = *self.inputs[0];
    auto& gn = *self.inputs[1];
    auto& bn = *self.inputs[2];
    const auto& h = *xhat;
    if (gn.requires_grad) {
      auto& g = gn.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j] * h[i * d + j];
    }
    if (bn.requires_grad) {
      auto& g = bn.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
    if (xn.requires_grad) {
      auto& g = xn.ensure_grad();
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t i = 0; i < m; ++i) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = self.grad[i * d + j] * gn.value[j];
          s1 += dh;
          s2 += dh * h[i * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = self.grad[i * d + j] * gn.value[j];
          g[i * d + j] += (*inv_std)[i] * (dh - inv_d * s1 - h[i * d + j] * inv_d * s2);
        }
      }
    }
  });
}

/// Sum over rows of -log softmax(logits[t])[targets[t]].
inline Tensor cross_entropy_sum(const Tensor& logits, std::span<const std::int32_t> targets) {
  detail::require_rank2(logits, "cross_entropy");
  const std::size_t t = logits.rows(), v = logits.cols();
  if (targets.size() != t) {
    throw ShapeError("cross_entropy: " + std::to_string(t) + " logit rows but " +
                     std::to_string(targets.size()) + " targets");
  }
  auto lv = logits.data();
  auto probs = std::make_shared<std::vector<double>>(t * v);
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (tg[i] < 0 || static_cast<std::size_t>(tg[i]) >= v) {
      throw ShapeError("cross_entropy: target " + std::to_string(tg[i]) + " outside vocabulary");
    }
    const double* row = lv.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[i * v + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] /= z;
    total += (mx + std::log(z)) - row[tg[i]];
  }
  return make_result({1}, {total}, {&logits}, [t, v, probs, tg = std::move(tg)](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < v; ++j) g[i * v + j] += up * (*probs)[i * v + j];
      g[i * v + tg[i]] -= up;
    }
  });
}

/// Mean token cross-entropy.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
  auto s = cross_entropy_sum(logits, targets);
  return scale(s, 1.0 / static_cast<double>(targets.size()));
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

// ---------------------------------------------------------------------------
// Graph traversal

namespace detail {

// Reverse-postorder of the recording subgraph reachable from root.
inline std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

/// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient.
/// Interior nodes are marked consumed; a second call on the same graph is
/// rejected until `reset_graph`.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw GraphError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad() || loss.is_leaf()) {
    throw GraphError("backward: loss is not connected to any parameter requiring a gradient");
  }
  if (!std::isfinite(loss.item())) throw NumericError("backward: loss is not finite");
  auto order = detail::topo_order(loss.node().get());
  for (auto* n : order) {
    if (!n->is_leaf && n->consumed) {
      throw GraphError("backward: graph already differentiated; call reset_graph before reusing it");
    }
  }
  for (auto* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf) continue;
    n->backward(*n);
    n->consumed = true;
  }
  for (auto* n : order) {
    if (!n->is_leaf) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

/// Clears the consumed marks of a graph so it can be differentiated again.
inline void reset_graph(const Tensor& loss) {
  if (!loss.defined() || !loss.requires_grad()) return;
  for (auto* n : detail::topo_order(loss.node().get())) {
    if (!n->is_leaf) {
      n->consumed = false;
      n->grad.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = true;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(θ+eps) - f(θ-eps)) / 2eps for every scalar in `params`.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  double eps = 1e-5, double tol = 1e-4, double floor = 1e-5) {
  for (auto& p : params) {
    if (!p.is_leaf()) throw GraphError("grad_check: parameters must be leaves");
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor loss = f();
  if (loss.size() != 1) throw GraphError("grad_check: function must return a scalar");
  const double base = loss.item();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.size(), 0.0);
    }
  }
  {
    NoGradGuard ng;
    if (f().item() != base) throw NumericError("grad_check: function is not deterministic");
  }

  GradCheckReport report;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double fp = f().item();
      values[i] = saved - eps;
      const double fm = f().item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace pgca
