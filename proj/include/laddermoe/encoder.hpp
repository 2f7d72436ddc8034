// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Patch-embedding transformer encoder with ladder-side mixture-of-experts
// adapters.
//
// After every layer listed in `adapter_layers` the stream passes through one
// adapter: a router scores the experts from [class token ; mean patch token],
// keeps the top-k, softmaxes their raw scores, and the weighted expert output
// is added back into the stream through a sigmoid gate:
//
//     x <- x + sigmoid(g) * sum_i w_i * expert_i(x)
//
// Expert up-projections start at exactly zero, so a freshly initialized
// adapter leaves the backbone output untouched.

#pragma once

#include <cmath>
#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "laddermoe/image.hpp"
#include "laddermoe/nn.hpp"
#include "laddermoe/rng.hpp"
#include "laddermoe/tensor.hpp"

namespace laddermoe {

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t depth = 12;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::vector<std::size_t> adapter_layers{0, 4, 8, 11};
  std::size_t num_experts = 36;
  std::size_t top_k = 5;
  std::size_t expert_bottleneck = 16;
  /// Flip standardized images whose majority of pixels is brighter than the
  /// mean, so ink is bright on a dark ground in every rendering style.
  bool normalize_polarity = true;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t num_tokens() const { return 1 + num_patches(); }
  /// num_experts == 0 is the "no MoE" ablation: adapters are skipped entirely.
  bool adapters_enabled() const { return num_experts > 0 && !adapter_layers.empty(); }

  void validate() const {
    if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
      throw ParameterError("image_size must be a positive multiple of patch_size");
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
      throw ParameterError("embed_dim must be a positive multiple of heads");
    if (depth == 0) throw ParameterError("depth must be >= 1");
    if (mlp_ratio == 0) throw ParameterError("mlp_ratio must be >= 1");
    for (std::size_t i = 0; i < adapter_layers.size(); ++i) {
      if (adapter_layers[i] >= depth)
        throw ParameterError("adapter layer " + std::to_string(adapter_layers[i]) + " outside [0, depth)");
      if (i && adapter_layers[i] <= adapter_layers[i - 1])
        throw ParameterError("adapter_layers must be strictly increasing");
    }
    if (num_experts > 0 && (top_k < 1 || top_k > num_experts))
      throw ParameterError("top_k must lie in [1, num_experts]");
    if (num_experts > 0 && expert_bottleneck == 0) throw ParameterError("expert_bottleneck must be >= 1");
  }

  bool operator==(const EncoderConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters

struct Expert {
  nn::Linear down;  // embed_dim -> bottleneck
  nn::Linear up;    // bottleneck -> embed_dim, zero-initialized

  static Expert init(std::size_t dim, std::size_t bottleneck, Rng& rng) {
    return {nn::Linear::init(dim, bottleneck, rng), nn::Linear::zeros(bottleneck, dim)};
  }
  Tensor operator()(const Tensor& x) const { return up(gelu(down(x))); }
  void visit(const std::string& p, const nn::ParamVisitor& fn) {
    down.visit(p + ".down", fn);
    up.visit(p + ".up", fn);
  }
};

struct RouterParams {
  nn::Linear projection;  // 2*embed_dim -> num_experts
  std::size_t num_experts() const { return projection.bias.size(); }
};

struct Adapter {
  RouterParams router;
  std::vector<Expert> experts;
  Tensor gate;  // scalar g; fusion coefficient sigmoid(g)

  void visit(const std::string& p, const nn::ParamVisitor& fn) {
    router.projection.visit(p + ".router", fn);
    for (std::size_t e = 0; e < experts.size(); ++e) experts[e].visit(p + ".expert" + std::to_string(e), fn);
    fn(p + ".gate", gate);
  }
};

struct EncoderBlock {
  nn::LayerNorm ln1;
  nn::MultiHeadAttention attn;
  nn::LayerNorm ln2;
  nn::MLP mlp;

  Tensor operator()(const Tensor& x) const {
    Tensor h = ln1(x);
    Tensor y = add(x, attn(h, h));
    return add(y, mlp(ln2(y)));
  }
  void visit(const std::string& p, const nn::ParamVisitor& fn) {
    ln1.visit(p + ".ln1", fn);
    attn.visit(p + ".attn", fn);
    ln2.visit(p + ".ln2", fn);
    mlp.visit(p + ".mlp", fn);
  }
};

/// Everything that stands in for the pretrained image encoder.
struct Backbone {
  nn::Linear patch_proj;  // patch_size^2 -> embed_dim
  Tensor cls_token;       // [1 × embed_dim]
  Tensor pos_embed;       // [num_tokens × embed_dim]
  std::vector<EncoderBlock> blocks;
  nn::LayerNorm final_ln;

  void visit(const std::string& p, const nn::ParamVisitor& fn) {
    patch_proj.visit(p + ".patch_proj", fn);
    fn(p + ".cls_token", cls_token);
    fn(p + ".pos_embed", pos_embed);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(p + ".block" + std::to_string(i), fn);
    final_ln.visit(p + ".final_ln", fn);
  }
};

struct EncoderParams {
  Backbone backbone;
  std::vector<Adapter> adapters;  // one per entry of adapter_layers

  void visit_backbone(const nn::ParamVisitor& fn) { backbone.visit("encoder.backbone", fn); }
  void visit_adapters(const nn::ParamVisitor& fn) {
    for (std::size_t a = 0; a < adapters.size(); ++a) adapters[a].visit("encoder.adapter" + std::to_string(a), fn);
  }
  void visit(const nn::ParamVisitor& fn) {
    visit_backbone(fn);
    visit_adapters(fn);
  }
};

inline Adapter init_adapter(const EncoderConfig& cfg, Rng& rng) {
  Adapter a;
  a.router.projection = nn::Linear::init(2 * cfg.embed_dim, cfg.num_experts, rng);
  a.experts.reserve(cfg.num_experts);
  for (std::size_t e = 0; e < cfg.num_experts; ++e) a.experts.push_back(Expert::init(cfg.embed_dim, cfg.expert_bottleneck, rng));
  a.gate = Tensor::scalar(0.0, true);
  return a;
}

inline Backbone init_backbone(const EncoderConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.embed_dim;
  Backbone b;
  b.patch_proj = nn::Linear::init(cfg.patch_size * cfg.patch_size, d, rng);
  b.cls_token = nn::normal_init({1, d}, 0.02, rng);
  b.pos_embed = nn::normal_init({cfg.num_tokens(), d}, 0.02, rng);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    b.blocks.push_back({nn::LayerNorm::init(d), nn::MultiHeadAttention::init(d, cfg.heads, rng), nn::LayerNorm::init(d),
                        nn::MLP::init(d, d * cfg.mlp_ratio, rng)});
  }
  b.final_ln = nn::LayerNorm::init(d);
  return b;
}

/// Backbone and adapters are drawn from separate streams so the backbone is
/// the same for every adapter configuration under one seed.
inline EncoderParams init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng backbone_rng(seed, "encoder.backbone");
  Rng adapter_rng(seed, "encoder.adapters");
  EncoderParams p;
  p.backbone = init_backbone(cfg, backbone_rng);
  if (cfg.adapters_enabled()) {
    for (std::size_t a = 0; a < cfg.adapter_layers.size(); ++a) p.adapters.push_back(init_adapter(cfg, adapter_rng));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Operations

/// Per-image standardization applied before patching: zero mean, unit
/// variance (the variance is floored so a flat image maps to all zeros).
inline Image standardize(const Image& image) {
  Image out = image;
  if (out.empty()) return out;
  const double n = static_cast<double>(out.pixels.size());
  double mean = 0.0;
  for (double p : out.pixels) mean += p;
  mean /= n;
  double var = 0.0;
  for (double p : out.pixels) var += (p - mean) * (p - mean);
  const double inv = 1.0 / std::sqrt(var / n + 1e-4);
  for (double& p : out.pixels) p = (p - mean) * inv;
  return out;
}

/// Negates a standardized image when its median pixel is positive, i.e. when
/// the background is the bright side. A zero median leaves it unchanged. The
/// median of an even count is the midpoint of the two middle values, so an
/// inverted image always has the negated median.
inline Image normalize_polarity(Image standardized) {
  if (standardized.empty()) return standardized;
  std::vector<double> v = standardized.pixels;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (median > 0.0)
    for (double& p : standardized.pixels) p = -p;
  return standardized;
}

/// Flattened non-overlapping patches of the standardized (and, if configured,
/// polarity-normalized) image, one row per patch in raster order.
inline Tensor extract_patches(const Image& raw, const EncoderConfig& cfg) {
  const Image image = cfg.normalize_polarity ? normalize_polarity(standardize(raw)) : standardize(raw);
  if (raw.height != cfg.image_size || raw.width != cfg.image_size) {
    throw DimensionError("encoder expects " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                         " images, got " + std::to_string(raw.height) + "x" + std::to_string(raw.width));
  }
  const std::size_t p = cfg.patch_size, g = cfg.patches_per_side();
  Tensor out = Tensor::zeros({g * g, p * p});
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) out.at(py * g + px, y * p + x) = image(py * p + y, px * p + x);
  return out;
}

/// [(1+T) × embed_dim] tokens: class token first, then patches; positional embedding added.
inline Tensor patch_embed(const Image& image, const EncoderConfig& cfg, const Backbone& b) {
  Tensor patches = b.patch_proj(extract_patches(image, cfg));
  return add(concat_rows({b.cls_token, patches}), b.pos_embed);
}

struct RoutingRecord {
  std::size_t adapter_index = 0;
  std::vector<std::size_t> selected;
  std::vector<double> weights;
  bool operator==(const RoutingRecord&) const = default;
};

/// Indices of the k largest scores, ordered by score descending; equal scores
/// resolve to the lower index.
inline std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size())
    throw ParameterError("top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  return idx;
}

/// Routing decision from a raw score vector: top-k selection, then softmax
/// over the selected raw scores only.
inline RoutingRecord select_experts(std::span<const double> scores, std::size_t k, std::size_t adapter_index = 0) {
  RoutingRecord rec;
  rec.adapter_index = adapter_index;
  rec.selected = top_k_indices(scores, k);
  std::vector<double> picked;
  picked.reserve(k);
  for (auto i : rec.selected) picked.push_back(scores[i]);
  Tensor w = softmax(Tensor::from({k}, std::move(picked)), 0);
  rec.weights = w.values();
  return rec;
}

struct RouteResult {
  RoutingRecord record;
  Tensor weights;  // [1 × k], differentiable w.r.t. the router and the stream
  Tensor scores;   // [1 × num_experts]
};

/// Routes on the concatenation [cls_token ; mean_token].
inline RouteResult route(const Tensor& cls_token, const Tensor& mean_token, const RouterParams& r, std::size_t k,
                         std::size_t adapter_index = 0) {
  if (k < 1 || k > r.num_experts())
    throw ParameterError("route: k=" + std::to_string(k) + " outside [1, " + std::to_string(r.num_experts()) + "]");
  Tensor signal = concat_cols({cls_token, mean_token});
  Tensor scores = r.projection(signal);
  RouteResult res;
  res.record.adapter_index = adapter_index;
  res.record.selected = top_k_indices(scores.data(), k);
  res.weights = softmax(gather_cols(scores, res.record.selected), 1);
  res.record.weights = res.weights.values();
  res.scores = scores;
  return res;
}

/// Weighted sum of the selected experts, token-wise. Unselected experts are
/// never evaluated and so receive no gradient.
inline Tensor adapter_forward(const Tensor& tokens, const std::vector<Expert>& experts,
                              const std::vector<std::size_t>& selected, const Tensor& weights) {
  if (weights.size() != selected.size()) throw DimensionError("adapter_forward: one weight per selected expert");
  const Tensor w = weights.ndim() == 2 ? weights : reshape(weights, {1, weights.size()});
  Tensor acc;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i] >= experts.size())
      throw Error("internal: expert index " + std::to_string(selected[i]) + " outside pool of " +
                  std::to_string(experts.size()));
    Tensor term = mul_scalar(experts[selected[i]](tokens), slice_cols(w, i, i + 1));
    acc = acc.defined() ? add(acc, term) : term;
  }
  if (!acc.defined()) throw ParameterError("adapter_forward: empty selection");
  return acc;
}

inline Tensor adapter_forward(const Tensor& tokens, const std::vector<Expert>& experts, const RoutingRecord& rec) {
  return adapter_forward(tokens, experts, rec.selected, Tensor::from({1, rec.weights.size()}, rec.weights));
}

/// backbone + sigmoid(g) * side
inline Tensor gate_fuse(const Tensor& backbone, const Tensor& side, const Tensor& gate) {
  if (backbone.shape() != side.shape())
    throw DimensionError("gate_fuse: shape mismatch " + shape_str(backbone.shape()) + " vs " + shape_str(side.shape()));
  return add(backbone, mul_scalar(side, sigmoid(gate)));
}

struct EncodeResult {
  Tensor features;  // [(1+T) × embed_dim]
  std::vector<RoutingRecord> routing;
};

inline EncodeResult encode(const Image& image, const EncoderConfig& cfg, const EncoderParams& params,
                           bool record_routing = false) {
  if (params.backbone.blocks.size() != cfg.depth) throw DimensionError("encoder params do not match configured depth");
  const bool adapters = cfg.adapters_enabled();
  if (adapters && params.adapters.size() != cfg.adapter_layers.size())
    throw DimensionError("encoder params hold " + std::to_string(params.adapters.size()) + " adapters, config expects " +
                         std::to_string(cfg.adapter_layers.size()));
  EncodeResult res;
  Tensor x = patch_embed(image, cfg, params.backbone);
  std::size_t next_adapter = 0;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    x = params.backbone.blocks[l](x);
    if (adapters && next_adapter < cfg.adapter_layers.size() && cfg.adapter_layers[next_adapter] == l) {
      const Adapter& ad = params.adapters[next_adapter];
      Tensor cls = slice_rows(x, 0, 1);
      Tensor mean = mean_rows(slice_rows(x, 1, x.rows()));
      RouteResult r = route(cls, mean, ad.router, cfg.top_k, next_adapter);
      Tensor side = adapter_forward(x, ad.experts, r.record.selected, r.weights);
      x = gate_fuse(x, side, ad.gate);
      if (record_routing) res.routing.push_back(std::move(r.record));
      ++next_adapter;
    }
  }
  res.features = params.backbone.final_ln(x);
  return res;
}

}  // namespace laddermoe
