// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Builds a complete synthetic benchmark in memory: long-tailed category
// counts, count filtering, rendered crops with their 4:1:5 split, head/mid/tail
// groups, and full pages with their domain-stratified 8:1:1 split. Images are
// quantized to 8 bits so that the stored PNG files reproduce them exactly.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "laddermoe/syndata.hpp"

namespace laddermoe {

struct CorpusConfig {
  std::size_t num_categories = 60;
  double zipf_s = 1.0;
  std::size_t total_crops = 3000;
  std::size_t min_count = 10;  // keep categories with strictly more samples
  std::size_t glyph_size = 16;
  double max_noise = 0.5;
  std::array<double, 3> domain_weights{0.2, 0.6, 0.2};  // color, rubbing, tracing
  std::size_t num_pages = 60;
  std::size_t min_page_chars = 4;
  std::size_t max_page_chars = 12;
  std::size_t max_columns = 4;
  double page_jitter = 1.0;

  void validate() const {
    if (num_categories < 3) throw ParameterError("num_categories must be >= 3");
    if (total_crops < num_categories) throw ParameterError("total_crops must be >= num_categories");
    if (!(zipf_s >= 0.0)) throw ParameterError("zipf_s must be >= 0");
    if (glyph_size < 4) throw ParameterError("glyph_size must be >= 4");
    if (!(max_noise >= 0.0 && max_noise <= 1.0)) throw ParameterError("max_noise must lie in [0, 1]");
    if (domain_weights[0] < 0 || domain_weights[1] < 0 || domain_weights[2] < 0 ||
        domain_weights[0] + domain_weights[1] + domain_weights[2] <= 0)
      throw ParameterError("domain_weights must be non-negative and not all zero");
    if (min_page_chars < 1 || max_page_chars < min_page_chars) throw ParameterError("page char range invalid");
    if (max_columns < 1) throw ParameterError("max_columns must be >= 1");
    PageLayoutConfig layout;
    layout.glyph_size = glyph_size;
    if (page_jitter < 0 || page_jitter > max_page_jitter(layout))
      throw ParameterError("page_jitter must lie in [0, " + std::to_string(max_page_jitter(layout)) + "]");
  }
  bool operator==(const CorpusConfig&) const = default;
};

struct Corpus {
  std::vector<std::size_t> counts;    // per category id, before filtering
  std::vector<std::size_t> retained;  // category ids passing the count filter
  FrequencyGroups groups;             // over retained categories
  std::vector<GlyphSample> crops;
  SplitManifest char_split;
  std::vector<PageSample> pages;
  SplitManifest page_split;

  std::vector<std::size_t> crop_indices(Split s) const { return char_split.indices(s); }
  std::vector<GlyphSample> crops_in(Split s) const {
    std::vector<GlyphSample> out;
    for (auto i : char_split.indices(s)) out.push_back(crops[i]);
    return out;
  }
  std::vector<std::size_t> retained_counts() const {
    std::vector<std::size_t> rc;
    for (auto c : retained) rc.push_back(counts[c]);
    return rc;
  }
};

inline Domain sample_domain(const std::array<double, 3>& w, Rng& rng) {
  const double u = rng.uniform() * (w[0] + w[1] + w[2]);
  if (u < w[0]) return Domain::Color;
  if (u < w[0] + w[1]) return Domain::Rubbing;
  return Domain::Tracing;
}

inline Corpus build_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Corpus c;
  c.counts = sample_category_frequencies(cfg.num_categories, cfg.zipf_s, cfg.total_crops, seed);
  c.retained = filter_min_count(c.counts, cfg.min_count);
  if (c.retained.size() < 3) throw DataError("fewer than 3 categories survive the count filter");
  c.groups = stratify_head_mid_tail(c.retained_counts(), c.retained);

  Rng crop_rng(seed, "corpus.crops");
  std::vector<std::size_t> crop_categories;
  for (std::size_t cat : c.retained) {
    for (std::size_t k = 0; k < c.counts[cat]; ++k) {
      const Domain d = sample_domain(cfg.domain_weights, crop_rng);
      const double noise = crop_rng.uniform() * cfg.max_noise;
      GlyphSample g = render_glyph(cat, d, noise, crop_rng.next_u64(), cfg.glyph_size);
      g.image = quantize8(g.image);
      c.crops.push_back(std::move(g));
      crop_categories.push_back(cat);
    }
  }
  c.char_split = split_chars(crop_categories, derive_seed(seed, "corpus.char_split"));

  // pages draw characters with the same long-tailed frequencies
  std::vector<double> cum;
  double acc = 0;
  for (std::size_t cat : c.retained) cum.push_back(acc += static_cast<double>(c.counts[cat]));
  Rng page_rng(seed, "corpus.pages");
  PageLayoutConfig layout;
  layout.glyph_size = cfg.glyph_size;
  std::vector<Domain> page_domains;
  for (std::size_t p = 0; p < cfg.num_pages; ++p) {
    const std::size_t n = cfg.min_page_chars + page_rng.below(cfg.max_page_chars - cfg.min_page_chars + 1);
    const std::size_t cols = 1 + page_rng.below(std::min(cfg.max_columns, n));
    std::vector<std::size_t> cats;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = page_rng.uniform() * acc;
      const auto it = std::upper_bound(cum.begin(), cum.end(), u);
      cats.push_back(c.retained[std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), c.retained.size() - 1)]);
    }
    const Domain d = sample_domain(cfg.domain_weights, page_rng);
    const double noise = page_rng.uniform() * cfg.max_noise;
    PageSample page =
        generate_page(cats, cols, page_extent(n, cols, layout), cfg.page_jitter, d, noise, page_rng.next_u64(), layout);
    page.image = quantize8(page.image);
    c.pages.push_back(std::move(page));
    page_domains.push_back(d);
  }
  if (!c.pages.empty()) c.page_split = split_pages(page_domains, derive_seed(seed, "corpus.page_split"));
  return c;
}

}  // namespace laddermoe
