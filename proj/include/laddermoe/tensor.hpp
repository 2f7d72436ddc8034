// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with tape-style reverse-mode autodiff.
//
// Every op returns a fresh node holding its inputs and a local backward rule.
// A Graph is the topologically ordered list of nodes reachable from an output;
// it is rebuilt for every forward pass. Reductions run sequentially so the same
// inputs always produce bitwise-identical values and gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "laddermoe/errors.hpp"

namespace laddermoe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->data.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (data.size() != shape_numel(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  std::vector<double>& values() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double>& grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  bool is_leaf() const { return !node_->backward_fn; }

  /// Copy of the values with no graph history.
  Tensor detach() const { return from(shape(), values(), false); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered operations reachable from an output tensor.
class Graph {
 public:
  static Graph trace(const Tensor& output) {
    Graph g;
    g.output_ = output;
    std::unordered_set<const detail::Node*> seen;
    // iterative post-order DFS so deep graphs do not exhaust the stack
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    seen.insert(output.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        if (node->backward_fn) g.ops_.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }

  /// Operations in forward order: every op's inputs precede it.
  std::span<detail::Node* const> ops() const { return ops_; }
  const Tensor& output() const { return output_; }

 private:
  std::vector<detail::Node*> ops_;
  Tensor output_;
};

/// Propagates `seed` from the graph output back to every requires_grad leaf.
/// Leaf gradients accumulate across calls; interior gradients are reset.
inline void backward(const Graph& g, const Tensor& seed) {
  const Tensor& out = g.output();
  if (seed.shape() != out.shape()) {
    throw DimensionError("backward seed shape " + shape_str(seed.shape()) +
                         " does not match output " + shape_str(out.shape()));
  }
  if (!out.requires_grad()) return;
  for (detail::Node* n : g.ops()) n->grad.assign(n->data.size(), 0.0);
  detail::Node* o = out.node();
  o->ensure_grad();
  for (std::size_t i = 0; i < o->grad.size(); ++i) o->grad[i] += seed.data()[i];
  auto ops = g.ops();
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) (*it)->backward_fn(**it);
}

inline void backward(const Tensor& scalar_output) {
  backward(Graph::trace(scalar_output), Tensor::from(scalar_output.shape(),
                                                     std::vector<double>(scalar_output.size(), 1.0)));
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// While alive, ops on this thread record no backward rules (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool any = false;
  if (grad_mode_flag())
    for (auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node_ptr());
    n->backward_fn = std::move(fn);
  }
  return Tensor(std::move(n));
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// c[m×n] += a[m×k] · b[k×n]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m×k] += g[m×n] · b[k×n]ᵀ
inline void gemm_nt_acc(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
                        std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// c[k×n] += a[m×k]ᵀ · g[m×n]
inline void gemm_tn_acc(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      detail::gemm_nt_acc(self.grad.data(), B.data.data(), A.grad.data(), m, n, k);
    }
    if (B.requires_grad) {
      B.ensure_grad();
      detail::gemm_tn_acc(A.data.data(), self.grad.data(), B.grad.data(), m, k, n);
    }
  });
}

/// a · bᵀ without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()) + "ᵀ");
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      detail::gemm_acc(self.grad.data(), B.data.data(), A.grad.data(), m, n, k);
    }
    if (B.requires_grad) {
      B.ensure_grad();
      detail::gemm_tn_acc(self.grad.data(), A.data.data(), B.grad.data(), m, n, k);
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return detail::make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) A.grad[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      in.ensure_grad();
      const double s = k == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += s * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * B.data[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) B.grad[i] += self.grad[i] * A.data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return detail::make_result(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * c;
  });
}

/// a · s where s holds a single value (e.g. a gate coefficient or routing weight).
inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("mul_scalar expects a one-element factor, got " + shape_str(s.shape()));
  const double sv = s.data()[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * sv;
  return detail::make_result(a.shape(), std::move(out), {a, s}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& S = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * S.data[0];
    }
    if (S.requires_grad) {
      S.ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * A.data[i];
      S.grad[0] += acc;
    }
  });
}

/// Adds a bias row vector (shape [n] or [1,n]) to every row of a [m×n] matrix.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  detail::require_2d(a, "add_bias");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs matrix " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  return detail::make_result(a.shape(), std::move(out), {a, bias}, [m, n](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) B.grad[j] += self.grad[i * n + j];
    }
  });
}

/// Adds a constant (non-differentiable) matrix, e.g. an attention mask of 0 / -inf.
inline Tensor add_constant(const Tensor& a, const std::vector<double>& c) {
  if (c.size() != a.size()) throw DimensionError("add_constant: size mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c[i];
  return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      A.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

/// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = A.data[i];
      const double d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      A.grad[i] += self.grad[i] * d;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({1}, {s}, {a}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (double& g : A.grad) g += self.grad[0];
  });
}

/// Mean over rows of a [m×n] matrix -> [1×n].
inline Tensor mean_rows(const Tensor& a) {
  detail::require_2d(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw DimensionError("mean_rows over zero rows");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  return detail::make_result({1, n}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) A.grad[i * n + j] += self.grad[j] * inv;
  });
}

/// Numerically stable softmax along `axis` (max-subtracted).
inline Tensor softmax(const Tensor& v, std::size_t axis) {
  const Shape& s = v.shape();
  if (axis >= s.size()) throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  const std::size_t len = s[axis];
  if (len == 0) throw DimensionError("softmax over an empty axis");
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = v.size() / (len * inner);
  std::vector<double> out(v.size());
  const auto x = v.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  return detail::make_result(s, std::move(out), {v}, [outer, len, inner](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += self.grad[base + k * inner] * self.data[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          A.grad[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

/// Normalizes each row over the last axis then applies gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps > 0.0)) throw ParameterError("layer_norm eps must be > 0");
  if (x.ndim() == 0) throw DimensionError("layer_norm on a 0-d tensor");
  const std::size_t n = x.shape().back();
  if (gamma.size() != n || beta.size() != n) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
  }
  const std::size_t m = x.size() / n;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xi[j] - mean) * is;
      xhat[i * n + j] = h;
      out[i * n + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& X = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& B = *self.inputs[2];
        if (G.requires_grad) G.ensure_grad();
        if (B.requires_grad) B.ensure_grad();
        if (X.requires_grad) X.ensure_grad();
        std::vector<double> dh(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = self.grad.data() + i * n;
          const double* hi = xhat.data() + i * n;
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            if (G.requires_grad) G.grad[j] += gi[j] * hi[j];
            if (B.requires_grad) B.grad[j] += gi[j];
            dh[j] = gi[j] * G.data[j];
            sum_dh += dh[j];
            sum_dh_h += dh[j] * hi[j];
          }
          if (!X.requires_grad) continue;
          const double invn = 1.0 / static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            X.grad[i * n + j] += inv_std[i] * (dh[j] - invn * sum_dh - hi[j] * invn * sum_dh_h);
          }
        }
      });
}

/// Mean cross-entropy of row-wise logits against integer targets. Rows whose
/// target equals `ignore_index` are excluded from both numerator and count.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index = -1) {
  detail::require_2d(logits, "cross_entropy");
  const std::size_t m = logits.rows(), v = logits.cols();
  if (targets.size() != m) throw DimensionError("cross_entropy: one target per row required");
  std::vector<double> prob(m * v);
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* li = logits.data().data() + i * v;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, li[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(li[j] - mx);
    const double logz = std::log(z) + mx;
    for (std::size_t j = 0; j < v; ++j) prob[i * v + j] = std::exp(li[j] - logz);
    if (targets[i] == ignore_index) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary");
    }
    loss += logz - li[targets[i]];
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  return detail::make_result({1}, {loss / denom}, {logits},
                             [m, v, denom, targets, ignore_index, prob = std::move(prob)](detail::Node& self) {
                               auto& L = *self.inputs[0];
                               L.ensure_grad();
                               const double g = self.grad[0] / denom;
                               for (std::size_t i = 0; i < m; ++i) {
                                 if (targets[i] == ignore_index) continue;
                                 for (std::size_t j = 0; j < v; ++j) {
                                   const double onehot = static_cast<int>(j) == targets[i] ? 1.0 : 0.0;
                                   L.grad[i * v + j] += g * (prob[i * v + j] - onehot);
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return detail::make_result(std::move(shape), a.values(), {a}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
  });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_2d(a, "slice_rows");
  if (begin > end || end > a.rows()) throw DimensionError("slice_rows range out of bounds");
  const std::size_t n = a.cols();
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return detail::make_result({end - begin, n}, std::move(out), {a}, [begin, n](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[begin * n + i] += self.grad[i];
  });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_2d(a, "slice_cols");
  if (begin > end || end > a.cols()) throw DimensionError("slice_cols range out of bounds");
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.data()[i * n + begin + j];
  return detail::make_result({m, w}, std::move(out), {a}, [m, n, w, begin](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) A.grad[i * n + begin + j] += self.grad[i * w + j];
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (auto& p : parts) {
    detail::require_2d(p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_result({m, n}, std::move(out), parts, [](detail::Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = in->data.size();
      if (in->requires_grad) {
        in->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) in->grad[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + off + j] = p.data()[i * w + j];
    off += w;
  }
  return detail::make_result({m, n}, std::move(out), parts, [m, n](detail::Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t w = in->shape[1];
      if (in->requires_grad) {
        in->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) in->grad[i * w + j] += self.grad[i * n + off + j];
      }
      off += w;
    }
  });
}

/// Rows of `table` selected by `ids` (embedding lookup); gradients scatter-add.
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  detail::require_2d(table, "gather_rows");
  const std::size_t n = table.cols();
  std::vector<double> out(ids.size() * n);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= table.rows()) throw DimensionError("gather_rows: id out of range");
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * n), n, out.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return detail::make_result({ids.size(), n}, std::move(out), {table}, [ids, n](detail::Node& self) {
    auto& T = *self.inputs[0];
    T.ensure_grad();
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) T.grad[ids[r] * n + j] += self.grad[r * n + j];
  });
}

/// Columns of a [1×n] row vector selected by `ids`.
inline Tensor gather_cols(const Tensor& row, const std::vector<std::size_t>& ids) {
  detail::require_2d(row, "gather_cols");
  const std::size_t m = row.rows(), n = row.cols(), k = ids.size();
  std::vector<double> out(m * k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      if (ids[j] >= n) throw DimensionError("gather_cols: id out of range");
      out[i * k + j] = row.data()[i * n + ids[j]];
    }
  return detail::make_result({m, k}, std::move(out), {row}, [ids, m, n, k](detail::Node& self) {
    auto& A = *self.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) A.grad[i * n + ids[j]] += self.grad[i * k + j];
  });
}

// ---------------------------------------------------------------------------
// Gradient verification

enum class Stencil { ThreePoint, FivePoint };

/// Which error `tol` bounds: every element separately, or the whole tensor's
/// gradient vector in the Euclidean norm.
enum class ErrorMeasure { Elementwise, Tensorwise };

struct FiniteDifferenceEntry {
  std::string name;
  double tensor_rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_rel_error = 0.0;     // worst element
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

struct FiniteDifferenceReport {
  std::vector<FiniteDifferenceEntry> entries;
  ErrorMeasure measure = ErrorMeasure::Elementwise;
  bool all_passed() const {
    return std::all_of(entries.begin(), entries.end(), [](auto& e) { return e.passed; });
  }
  /// Largest error under the measure the check was run with.
  double worst() const {
    double w = 0.0;
    for (auto& e : entries) w = std::max(w, measure == ErrorMeasure::Elementwise ? e.max_rel_error : e.tensor_rel_error);
    return w;
  }
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}


/// Compares analytic gradients of the scalar `f()` against central differences
/// for every element of every named parameter. `f` must rebuild its graph on
/// each call and be deterministic. The five-point stencil,
/// (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h, has fourth-order
/// truncation error and so tolerates a step large enough to keep rounding
/// noise small. Differences are taken first so that a parameter without
/// influence yields exactly zero.
template <class F>
FiniteDifferenceReport finite_difference_check(F&& f, const std::vector<std::pair<std::string, Tensor>>& params,
                                               double eps, double tol, Stencil stencil = Stencil::ThreePoint,
                                               ErrorMeasure measure = ErrorMeasure::Elementwise) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ParameterError("finite difference eps must lie in (0, 1e-2]");
  auto eval = [&]() {
    Tensor out = f();
    const double v = out.item();
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: f returned a non-finite value");
    return v;
  };
  std::vector<Tensor> ps;
  for (auto [name, t] : params) {
    t.zero_grad();
    ps.push_back(t);
  }
  Tensor out = f();
  if (!std::isfinite(out.item())) throw NumericError("finite_difference_check: f returned a non-finite value");
  backward(out);

  FiniteDifferenceReport report;
  report.measure = measure;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    FiniteDifferenceEntry e;
    e.name = params[p].first;
    std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                : std::vector<double>(t.size(), 0.0);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t.data()[i];
      auto at = [&](double offset) {
        t.data()[i] = orig + offset;
        const double v = eval();
        t.data()[i] = orig;
        return v;
      };
      const double numeric = stencil == Stencil::ThreePoint
                                 ? (at(eps) - at(-eps)) / (2.0 * eps)
                                 : (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      const double err = relative_error(analytic[i], numeric);
      if (i == 0 || err > e.max_rel_error) {
        e.max_rel_error = err;
        e.worst_index = i;
        e.analytic = analytic[i];
        e.numeric = numeric;
      }
    }
    e.tensor_rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    e.passed = (measure == ErrorMeasure::Elementwise ? e.max_rel_error : e.tensor_rel_error) <= tol;
    report.entries.push_back(std::move(e));
  }
  for (auto& t : ps) t.zero_grad();
  return report;
}

}  // namespace laddermoe
