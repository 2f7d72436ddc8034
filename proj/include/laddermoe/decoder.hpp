// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Single-layer attention decoder trained with permutation language modeling
// (PLM) and fine-tuned with a fixed left-to-right mask.
//
// A target of L characters is supervised at L+1 positions (the characters,
// then the end marker). Position i is queried with a learned positional query
// and may attend to
//   * the BOS content token (always), and
//   * the ground-truth token of position j whenever mask(i, j) admits it,
// then cross-attends to the encoder features.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "laddermoe/nn.hpp"
#include "laddermoe/rng.hpp"
#include "laddermoe/tensor.hpp"

namespace laddermoe {

/// Token layout: specials first, then category c at c + kFirstCategoryToken.
namespace tokens {
constexpr int kEos = 0;
constexpr int kBos = 1;
constexpr int kPad = 2;
constexpr int kFirstCategory = 3;
constexpr int kNumSpecials = 3;

inline int from_category(std::size_t c) { return static_cast<int>(c) + kFirstCategory; }
inline bool is_category(int t) { return t >= kFirstCategory; }
inline std::size_t to_category(int t) { return static_cast<std::size_t>(t - kFirstCategory); }
}  // namespace tokens

struct DecoderConfig {
  std::size_t num_permutations = 12;
  std::size_t max_label_len = 8;
  std::size_t vocab_size = 0;  // categories + specials
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;

  void validate() const {
    if (num_permutations < 1) throw ParameterError("num_permutations must be >= 1");
    if (vocab_size < 4) throw ParameterError("vocab_size must be >= 4 (specials + at least one category)");
    if (max_label_len < 1) throw ParameterError("max_label_len must be >= 1");
    if (heads < 1 || mlp_ratio < 1) throw ParameterError("decoder heads and mlp_ratio must be >= 1");
  }
  bool operator==(const DecoderConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Visibility masks

struct VisibilityMask {
  std::size_t side = 0;
  std::vector<std::size_t> order;  // factorization order (a permutation of 0..side-1)
  std::vector<std::uint8_t> allowed;

  bool admits(std::size_t i, std::size_t j) const { return allowed[i * side + j] != 0; }
  bool operator==(const VisibilityMask&) const = default;
};

/// Row i admits exactly the positions preceding i in `order`.
inline VisibilityMask mask_from_order(const std::vector<std::size_t>& order) {
  VisibilityMask m;
  m.side = order.size();
  m.order = order;
  m.allowed.assign(m.side * m.side, 0);
  for (std::size_t a = 0; a < order.size(); ++a)
    for (std::size_t b = 0; b < a; ++b) m.allowed[order[a] * m.side + order[b]] = 1;
  return m;
}

inline VisibilityMask make_sequential_mask(std::size_t length) {
  if (length == 0) throw ParameterError("mask length must be >= 1");
  std::vector<std::size_t> order(length);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return mask_from_order(order);
}

/// K masks: canonical order, its reverse, then K-2 orders drawn uniformly
/// without replacement from the remaining permutations (with replacement from
/// all permutations when too few remain).
inline std::vector<VisibilityMask> make_permutation_masks(std::size_t length, std::size_t k, Rng& rng) {
  if (length == 0) throw ParameterError("mask length must be >= 1");
  if (k == 0) throw ParameterError("number of permutations must be >= 1");
  std::vector<std::size_t> canonical(length);
  std::iota(canonical.begin(), canonical.end(), std::size_t{0});
  std::vector<std::size_t> reversed(canonical.rbegin(), canonical.rend());

  std::vector<std::vector<std::size_t>> orders{canonical};
  if (k >= 2) orders.push_back(reversed);

  // number of permutations other than canonical/reverse, saturating
  std::uint64_t total = 1;
  for (std::size_t i = 2; i <= length && total < (1ULL << 40); ++i) total *= i;
  const std::uint64_t distinct_fixed = length >= 2 ? 2 : 1;
  const std::uint64_t remaining = total - distinct_fixed;
  const std::size_t extra = k > 2 ? k - 2 : 0;
  const bool without_replacement = remaining >= extra;

  std::set<std::vector<std::size_t>> used{canonical, reversed};
  while (orders.size() < k) {
    std::vector<std::size_t> perm = canonical;
    rng.shuffle(perm);
    if (without_replacement) {
      if (!used.insert(perm).second) continue;
    }
    orders.push_back(std::move(perm));
  }
  std::vector<VisibilityMask> masks;
  masks.reserve(k);
  for (auto& o : orders) masks.push_back(mask_from_order(o));
  return masks;
}

inline std::vector<VisibilityMask> make_permutation_masks(std::size_t length, std::size_t k, std::uint64_t seed) {
  Rng rng(seed, "decoder.permutations");
  return make_permutation_masks(length, k, rng);
}

// ---------------------------------------------------------------------------
// Parameters

struct DecoderParams {
  Tensor token_embed;    // [vocab × d]
  Tensor content_pos;    // [(max_len+1) × d]
  Tensor query_pos;      // [(max_len+1) × d]
  nn::LayerNorm ln_query, ln_content;
  nn::MultiHeadAttention self_attn;
  nn::LayerNorm ln_cross;
  nn::MultiHeadAttention cross_attn;
  nn::LayerNorm ln_mlp;
  nn::MLP mlp;
  nn::LayerNorm final_ln;
  nn::Linear head;  // d -> vocab

  void visit(const nn::ParamVisitor& fn) {
    const std::string p = "decoder";
    fn(p + ".token_embed", token_embed);
    fn(p + ".content_pos", content_pos);
    fn(p + ".query_pos", query_pos);
    ln_query.visit(p + ".ln_query", fn);
    ln_content.visit(p + ".ln_content", fn);
    self_attn.visit(p + ".self_attn", fn);
    ln_cross.visit(p + ".ln_cross", fn);
    cross_attn.visit(p + ".cross_attn", fn);
    ln_mlp.visit(p + ".ln_mlp", fn);
    mlp.visit(p + ".mlp", fn);
    final_ln.visit(p + ".final_ln", fn);
    head.visit(p + ".head", fn);
  }
};

inline DecoderParams init_decoder(const DecoderConfig& cfg, std::size_t embed_dim, std::uint64_t seed) {
  cfg.validate();
  if (embed_dim % cfg.heads != 0) throw ParameterError("decoder heads must divide embed_dim");
  Rng rng(seed, "decoder");
  const std::size_t d = embed_dim, positions = cfg.max_label_len + 1;
  DecoderParams p;
  p.token_embed = nn::normal_init({cfg.vocab_size, d}, 0.1, rng);
  p.content_pos = nn::normal_init({positions, d}, 0.02, rng);
  p.query_pos = nn::normal_init({positions, d}, 0.1, rng);
  p.ln_query = nn::LayerNorm::init(d);
  p.ln_content = nn::LayerNorm::init(d);
  p.self_attn = nn::MultiHeadAttention::init(d, cfg.heads, rng);
  p.ln_cross = nn::LayerNorm::init(d);
  p.cross_attn = nn::MultiHeadAttention::init(d, cfg.heads, rng);
  p.ln_mlp = nn::LayerNorm::init(d);
  p.mlp = nn::MLP::init(d, d * cfg.mlp_ratio, rng);
  p.final_ln = nn::LayerNorm::init(d);
  p.head = nn::Linear::init(d, cfg.vocab_size, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes

/// Supervision targets for a label: its tokens followed by the end marker.
inline std::vector<int> supervision_targets(const std::vector<int>& label) {
  std::vector<int> y(label);
  y.push_back(tokens::kEos);
  return y;
}

/// Logits [(L+1) × vocab] for a ground-truth token sequence (category tokens,
/// no specials) under `mask` (side L+1).
inline Tensor decode_train(const Tensor& features, const std::vector<int>& target, const VisibilityMask& mask,
                           const DecoderParams& p, const DecoderConfig& cfg) {
  const std::size_t len = target.size();
  if (len > cfg.max_label_len)
    throw ParameterError("target of length " + std::to_string(len) + " exceeds max_label_len " +
                         std::to_string(cfg.max_label_len));
  if (mask.side != len + 1) throw DimensionError("visibility mask side must equal target length + 1");
  const std::size_t positions = len + 1;
  const std::vector<int> y = supervision_targets(target);

  // content rows: BOS, then the ground-truth token of every position
  std::vector<std::size_t> ids{static_cast<std::size_t>(tokens::kBos)};
  for (int t : y) ids.push_back(static_cast<std::size_t>(t));
  Tensor emb = gather_rows(p.token_embed, ids);
  Tensor content = concat_rows({slice_rows(emb, 0, 1), add(slice_rows(emb, 1, positions + 1), slice_rows(p.content_pos, 0, positions))});

  nn::AttentionMask attn_mask(positions * (positions + 1), nn::kMaskedOut);
  for (std::size_t i = 0; i < positions; ++i) {
    attn_mask[i * (positions + 1)] = 0.0;
    for (std::size_t j = 0; j < positions; ++j)
      if (mask.admits(i, j)) attn_mask[i * (positions + 1) + j + 1] = 0.0;
  }

  Tensor q = slice_rows(p.query_pos, 0, positions);
  q = add(q, p.self_attn(p.ln_query(q), p.ln_content(content), attn_mask));
  q = add(q, p.cross_attn(p.ln_cross(q), features));
  q = add(q, p.mlp(p.ln_mlp(q)));
  return p.head(p.final_ln(q));
}

/// Mean cross-entropy over the given masks (each mask weighted equally).
inline Tensor decode_loss(const Tensor& features, const std::vector<int>& target,
                          const std::vector<VisibilityMask>& masks, const DecoderParams& p, const DecoderConfig& cfg) {
  if (masks.empty()) throw ParameterError("decode_loss needs at least one mask");
  const std::vector<int> y = supervision_targets(target);
  // identical masks give identical losses; evaluate each distinct one once
  std::vector<std::pair<const VisibilityMask*, std::size_t>> distinct;
  for (const auto& m : masks) {
    auto it = std::find_if(distinct.begin(), distinct.end(), [&](auto& d) { return d.first->allowed == m.allowed; });
    if (it == distinct.end()) distinct.emplace_back(&m, 1);
    else ++it->second;
  }
  Tensor total;
  for (auto& [m, count] : distinct) {
    Tensor l = cross_entropy(decode_train(features, target, *m, p, cfg), y, tokens::kPad);
    if (count != 1) l = scale(l, static_cast<double>(count));
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(masks.size()));
}

/// Greedy autoregressive decoding. `next_logits(prefix)` returns the logits for
/// the position following `prefix` (tokens, no BOS). Stops at the end marker or
/// after `max_len` tokens; ties resolve to the lower token id.
template <class NextLogits>
std::vector<int> greedy_decode(NextLogits&& next_logits, std::size_t max_len) {
  std::vector<int> out;
  while (out.size() < max_len) {
    const std::vector<double> logits = next_logits(out);
    const auto best = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == tokens::kEos) break;
    out.push_back(best);
  }
  return out;
}

/// Logits for the position after `prefix` under the sequential mask.
inline std::vector<double> next_token_logits(const Tensor& features, const std::vector<int>& prefix,
                                             const DecoderParams& p, const DecoderConfig& cfg) {
  Tensor logits = decode_train(features, prefix, make_sequential_mask(prefix.size() + 1), p, cfg);
  const std::size_t v = logits.cols(), row = prefix.size();
  return {logits.data().begin() + static_cast<std::ptrdiff_t>(row * v),
          logits.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * v)};
}

/// Greedy decode returning category ids (special tokens dropped).
inline std::vector<std::size_t> decode_infer(const Tensor& features, const DecoderParams& p, const DecoderConfig& cfg,
                                             std::size_t max_len) {
  if (max_len < 1) throw ParameterError("max_len must be >= 1");
  if (max_len > cfg.max_label_len) throw ParameterError("max_len exceeds the decoder's max_label_len");
  const std::vector<int> toks =
      greedy_decode([&](const std::vector<int>& prefix) { return next_token_logits(features, prefix, p, cfg); }, max_len);
  std::vector<std::size_t> cats;
  for (int t : toks)
    if (tokens::is_category(t)) cats.push_back(tokens::to_category(t));
  return cats;
}

}  // namespace laddermoe
