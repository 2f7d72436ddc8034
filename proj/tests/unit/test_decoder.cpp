// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "laddermoe/decoder.hpp"

using namespace laddermoe;
using Catch::Matchers::WithinAbs;

namespace {

DecoderConfig small_decoder() {
  DecoderConfig c;
  c.num_permutations = 4;
  c.max_label_len = 5;
  c.vocab_size = 9;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

Tensor random_features(std::size_t rows, std::size_t d, Rng& rng) {
  Tensor t = Tensor::zeros({rows, d});
  for (double& v : t.data()) v = rng.normal();
  return t;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

}  // namespace

TEST_CASE("token mapping reserves three specials", "[decoder]") {
  using namespace tokens;
  CHECK(kEos == 0);
  CHECK(kBos == 1);
  CHECK(kPad == 2);
  CHECK(from_category(0) == 3);
  CHECK(to_category(from_category(17)) == 17);
  CHECK_FALSE(is_category(kPad));
  CHECK(is_category(3));
  CHECK(supervision_targets({4, 7}) == std::vector<int>{4, 7, kEos});
}

TEST_CASE("mask_from_order admits exactly the preceding positions", "[decoder][mask]") {
  const VisibilityMask seq = make_sequential_mask(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(seq.admits(i, j) == (j < i));

  const VisibilityMask m = mask_from_order({2, 0, 3, 1});
  // position 2 is first: sees nothing; position 1 is last: sees all others
  for (std::size_t j = 0; j < 4; ++j) CHECK_FALSE(m.admits(2, j));
  CHECK(m.admits(0, 2));
  CHECK_FALSE(m.admits(0, 3));
  CHECK(m.admits(1, 0));
  CHECK(m.admits(1, 2));
  CHECK(m.admits(1, 3));
  CHECK_FALSE(m.admits(1, 1));
  std::size_t admitted = 0;
  for (auto a : m.allowed) admitted += a;
  CHECK(admitted == 6);
  CHECK_THROWS_AS(make_sequential_mask(0), ParameterError);
}

TEST_CASE("permutation masks: canonical, reverse, then distinct samples", "[decoder][mask]") {
  Rng rng(3);
  const auto masks = make_permutation_masks(5, 12, rng);
  REQUIRE(masks.size() == 12);
  CHECK(masks[0].order == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(masks[1].order == std::vector<std::size_t>{4, 3, 2, 1, 0});
  std::set<std::vector<std::size_t>> seen;
  for (const auto& m : masks) {
    CHECK(m.side == 5);
    seen.insert(m.order);
    std::vector<std::size_t> s = m.order;
    std::sort(s.begin(), s.end());
    CHECK(s == std::vector<std::size_t>{0, 1, 2, 3, 4});
  }
  CHECK(seen.size() == 12);

  CHECK(make_permutation_masks(5, 1, rng).size() == 1);
  // 3! = 6 orders: all of them are produced without repeats
  std::set<std::vector<std::size_t>> all;
  for (const auto& m : make_permutation_masks(3, 6, rng)) all.insert(m.order);
  CHECK(all.size() == 6);
  // more requested than exist: sampling falls back to replacement
  CHECK(make_permutation_masks(2, 5, rng).size() == 5);
  CHECK(make_permutation_masks(1, 3, rng).size() == 3);

  CHECK(make_permutation_masks(6, 8, 42) == make_permutation_masks(6, 8, 42));
  CHECK(make_permutation_masks(6, 8, 42) != make_permutation_masks(6, 8, 43));
  CHECK_THROWS_AS(make_permutation_masks(0, 2, rng), ParameterError);
  CHECK_THROWS_AS(make_permutation_masks(3, 0, rng), ParameterError);
}

TEST_CASE("decoder config validation", "[decoder]") {
  DecoderConfig c = small_decoder();
  CHECK_NOTHROW(c.validate());
  c.vocab_size = 3;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = small_decoder();
  c.num_permutations = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  CHECK_THROWS_AS(init_decoder(small_decoder(), 7, 1), ParameterError);
}

TEST_CASE("decode_train shapes and argument checks", "[decoder]") {
  const DecoderConfig c = small_decoder();
  Rng rng(5);
  const DecoderParams p = init_decoder(c, 8, 11);
  const Tensor f = random_features(5, 8, rng);
  const Tensor logits = decode_train(f, {3, 5, 4}, make_sequential_mask(4), p, c);
  CHECK(logits.shape() == Shape{4, 9});
  CHECK_THROWS_AS(decode_train(f, {3, 5, 4}, make_sequential_mask(3), p, c), DimensionError);
  CHECK_THROWS_AS(decode_train(f, {3, 3, 3, 3, 3, 3}, make_sequential_mask(7), p, c), ParameterError);
}

TEST_CASE("a position's logits ignore tokens its mask hides", "[decoder][mask]") {
  const DecoderConfig c = small_decoder();
  Rng rng(6);
  const DecoderParams p = init_decoder(c, 8, 12);
  const Tensor f = random_features(5, 8, rng);
  const VisibilityMask m = mask_from_order({1, 3, 0, 2, 4});
  const std::vector<int> a{3, 4, 5, 6}, b{8, 4, 5, 7};  // positions 0 and 3 differ
  const Tensor la = decode_train(f, a, m, p, c), lb = decode_train(f, b, m, p, c);
  // position 1 is first in the order, position 3 sees only 1: neither admits 0 or 3
  for (std::size_t r : {std::size_t{1}, std::size_t{3}}) {
    const auto ra = row_of(la, r), rb = row_of(lb, r);
    for (std::size_t k = 0; k < ra.size(); ++k) CHECK(ra[k] == rb[k]);
  }
  // position 2 admits 0 and 3, so its logits move
  CHECK(row_of(la, 2) != row_of(lb, 2));
}

TEST_CASE("decode_loss is the mean of per-mask cross-entropies", "[decoder]") {
  const DecoderConfig c = small_decoder();
  Rng rng(7);
  const DecoderParams p = init_decoder(c, 8, 13);
  const Tensor f = random_features(5, 8, rng);
  const std::vector<int> t{5, 3, 8};
  const auto masks = make_permutation_masks(4, 4, rng);
  double expected = 0;
  for (const auto& m : masks) expected += cross_entropy(decode_train(f, t, m, p, c), supervision_targets(t), tokens::kPad).item();
  expected /= 4;
  CHECK_THAT(decode_loss(f, t, masks, p, c).item(), WithinAbs(expected, 1e-12));

  // duplicating a mask doubles its weight
  const std::vector<VisibilityMask> dup{masks[0], masks[0], masks[2]};
  const double l0 = decode_loss(f, t, {masks[0]}, p, c).item();
  const double l2 = decode_loss(f, t, {masks[2]}, p, c).item();
  CHECK_THAT(decode_loss(f, t, dup, p, c).item(), WithinAbs((2 * l0 + l2) / 3, 1e-12));
  CHECK_THROWS_AS(decode_loss(f, t, {}, p, c), ParameterError);
}

TEST_CASE("greedy_decode stops at the end marker or the length limit", "[decoder]") {
  // scripted: emit 4, then 6, then the end marker
  auto script = [](const std::vector<int>& prefix) {
    std::vector<double> l(9, 0.0);
    if (prefix.empty()) l[4] = 2;
    else if (prefix.size() == 1) l[6] = 1;
    else l[tokens::kEos] = 5;
    return l;
  };
  CHECK(greedy_decode(script, 8) == std::vector<int>{4, 6});
  CHECK(greedy_decode(script, 1) == std::vector<int>{4});
  // all-equal logits resolve to the lowest id, which is the end marker
  CHECK(greedy_decode([](const std::vector<int>&) { return std::vector<double>(9, 0.5); }, 4).empty());
  auto tie = [](const std::vector<int>& prefix) {
    std::vector<double> l(9, 0.0);
    if (prefix.empty()) l[5] = l[7] = 1;
    else l[0] = 1;
    return l;
  };
  CHECK(greedy_decode(tie, 3) == std::vector<int>{5});
}

TEST_CASE("decode_infer agrees with the sequential training pass", "[decoder]") {
  const DecoderConfig c = small_decoder();
  Rng rng(8);
  const DecoderParams p = init_decoder(c, 8, 14);
  const Tensor f = random_features(5, 8, rng);
  const std::vector<int> prefix{4, 7};
  const auto next = next_token_logits(f, prefix, p, c);
  const Tensor full = decode_train(f, {4, 7, 3}, make_sequential_mask(4), p, c);
  const auto row = row_of(full, 2);
  for (std::size_t k = 0; k < next.size(); ++k) CHECK_THAT(next[k], WithinAbs(row[k], 1e-12));

  const auto cats = decode_infer(f, p, c, 3);
  CHECK(cats.size() <= 3);
  for (auto cat : cats) CHECK(cat < 6);
  CHECK_THROWS_AS(decode_infer(f, p, c, 0), ParameterError);
  CHECK_THROWS_AS(decode_infer(f, p, c, 6), ParameterError);
}

TEST_CASE("decoder gradients match central differences", "[decoder][fd]") {
  const DecoderConfig c = small_decoder();
  Rng rng(9);
  DecoderParams p = init_decoder(c, 8, 15);
  Tensor f = random_features(5, 8, rng);
  f.set_requires_grad(true);
  const std::vector<int> t{5, 3, 8};
  const auto masks = make_permutation_masks(4, 3, rng);
  std::vector<std::pair<std::string, Tensor>> params{{"features", f}};
  p.visit([&](const std::string& n, Tensor& x) { params.emplace_back(n, x); });
  const auto rep = finite_difference_check([&] { return decode_loss(f, t, masks, p, c); }, params, 1e-6, 1e-4);
  for (auto& e : rep.entries) {
    INFO(e.name << " rel " << e.max_rel_error);
    CHECK(e.passed);
  }
}
