// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Small layer building blocks shared by the encoder and decoder.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "laddermoe/rng.hpp"
#include "laddermoe/tensor.hpp"

namespace laddermoe::nn {

/// Callback used to enumerate named parameters: visit(path, tensor).
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

inline Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.normal() * stddev;
  return t;
}

struct Linear {
  Tensor weight;  // [in × out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    return {normal_init({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng), Tensor::zeros({out}, true)};
  }
  static Linear zeros(std::size_t in, std::size_t out) {
    return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
  }

  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

/// Linear map without a bias term.
struct Projection {
  Tensor weight;  // [in × out]

  static Projection init(std::size_t in, std::size_t out, Rng& rng) {
    return {normal_init({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)};
  }

  Tensor operator()(const Tensor& x) const { return matmul(x, weight); }

  void visit(const std::string& prefix, const ParamVisitor& fn) { fn(prefix + ".weight", weight); }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNorm init(std::size_t n) {
    LayerNorm ln{Tensor::zeros({n}, true), Tensor::zeros({n}, true)};
    for (double& g : ln.gamma.data()) g = 1.0;
    return ln;
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

/// Additive attention mask: 0 where attention is allowed, -inf elsewhere.
using AttentionMask = std::vector<double>;

/// Keys carry no bias: a key bias adds the same amount to every score of a
/// query, which the softmax cancels, so its gradient is identically zero.
struct MultiHeadAttention {
  Linear q;
  Projection k;
  Linear v, out;
  std::size_t heads = 1;

  static MultiHeadAttention init(std::size_t dim, std::size_t heads, Rng& rng) {
    Linear q = Linear::init(dim, dim, rng);
    Projection k = Projection::init(dim, dim, rng);
    Linear v = Linear::init(dim, dim, rng);
    Linear out = Linear::init(dim, dim, rng);
    return {std::move(q), std::move(k), std::move(v), std::move(out), heads};
  }

  /// queries [m×d] attend over keys/values [n×d]; `mask` is empty or m·n additive entries.
  Tensor operator()(const Tensor& queries, const Tensor& context, const AttentionMask& mask = {}) const {
    const std::size_t dim = queries.cols();
    const std::size_t head_dim = dim / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Tensor qp = q(queries);
    Tensor kp = k(context);
    Tensor vp = v(context);
    std::vector<Tensor> parts;
    parts.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t b = h * head_dim, e = b + head_dim;
      Tensor qh = heads == 1 ? qp : slice_cols(qp, b, e);
      Tensor kh = heads == 1 ? kp : slice_cols(kp, b, e);
      Tensor vh = heads == 1 ? vp : slice_cols(vp, b, e);
      Tensor scores = scale(matmul_nt(qh, kh), inv_scale);
      if (!mask.empty()) scores = add_constant(scores, mask);
      parts.push_back(matmul(softmax(scores, 1), vh));
    }
    Tensor merged = heads == 1 ? parts[0] : concat_cols(parts);
    return out(merged);
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    q.visit(prefix + ".q", fn);
    k.visit(prefix + ".k", fn);
    v.visit(prefix + ".v", fn);
    out.visit(prefix + ".out", fn);
  }
};

struct MLP {
  Linear fc1, fc2;

  static MLP init(std::size_t dim, std::size_t hidden, Rng& rng) {
    return {Linear::init(dim, hidden, rng), Linear::init(hidden, dim, rng)};
  }
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fc1.visit(prefix + ".fc1", fn);
    fc2.visit(prefix + ".fc2", fn);
  }
};

constexpr double kMaskedOut = -std::numeric_limits<double>::infinity();

}  // namespace laddermoe::nn
