// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic long-tailed glyph corpus: procedural category glyphs rendered in
// three acquisition styles, page layouts in right-to-left columns, and the
// filtering / splitting / head-mid-tail procedures applied to the corpus.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "laddermoe/errors.hpp"
#include "laddermoe/image.hpp"
#include "laddermoe/rng.hpp"

namespace laddermoe {

enum class Domain : std::uint8_t { Color = 0, Rubbing = 1, Tracing = 2 };
constexpr std::array<Domain, 3> kAllDomains{Domain::Color, Domain::Rubbing, Domain::Tracing};

inline std::string_view domain_name(Domain d) {
  switch (d) {
    case Domain::Color: return "color";
    case Domain::Rubbing: return "rubbing";
    case Domain::Tracing: return "tracing";
  }
  return "unknown";
}

inline Domain parse_domain(std::string_view s) {
  for (Domain d : kAllDomains)
    if (domain_name(d) == s) return d;
  throw FormatError("unknown domain '" + std::string(s) + "'");
}

struct GlyphSample {
  Image image;
  std::size_t category = 0;
  Domain domain = Domain::Rubbing;
};

struct PageChar {
  BBox box;
  std::size_t category = 0;
  bool operator==(const PageChar&) const = default;
};

struct PageSample {
  Image image;
  std::vector<PageChar> chars;  // canonical reading order
  Domain domain = Domain::Rubbing;
  std::size_t num_columns = 0;
};

// ---------------------------------------------------------------------------
// Largest-remainder apportionment

/// Splits `total` into integer parts proportional to `weights` so that the
/// parts sum to `total` exactly. Leftover units go to the largest fractional
/// remainders; equal remainders favor the earlier index.
inline std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || !(wsum > 0.0)) throw ParameterError("largest_remainder needs positive weights");
  std::vector<std::size_t> parts(weights.size());
  std::vector<double> frac(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double q = static_cast<double>(total) * weights[i] / wsum;
    parts[i] = static_cast<std::size_t>(std::floor(q));
    frac[i] = q - std::floor(q);
    assigned += parts[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++parts[order[r % order.size()]];
  return parts;
}

/// Per-category counts proportional to rank^(-s) (rank 1 = category 0).
/// `seed` is accepted for interface symmetry; the apportionment is exact.
inline std::vector<std::size_t> sample_category_frequencies(std::size_t num_categories, double zipf_s, std::size_t total,
                                                            std::uint64_t seed = 0) {
  (void)seed;
  if (num_categories < 1) throw ParameterError("num_categories must be >= 1");
  if (total < num_categories) throw ParameterError("total must be >= num_categories");
  if (!(zipf_s >= 0.0) || !std::isfinite(zipf_s)) throw ParameterError("zipf exponent must be finite and >= 0");
  std::vector<double> w(num_categories);
  for (std::size_t r = 0; r < num_categories; ++r) w[r] = std::pow(static_cast<double>(r + 1), -zipf_s);
  return largest_remainder(total, w);
}

/// Categories whose count is strictly greater than `threshold`.
inline std::vector<std::size_t> filter_min_count(const std::vector<std::size_t>& counts, std::size_t threshold = 10) {
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > threshold) kept.push_back(c);
  return kept;
}

// ---------------------------------------------------------------------------
// Glyph rendering

namespace detail {

struct Stroke {
  double x0, y0, x1, y1;  // unit-square coordinates
};

constexpr std::uint64_t kGlyphRoot = 0x6c61646465726d6fULL;

/// Category-keyed stroke pattern on a 5x5 lattice; depends only on the category.
inline std::vector<Stroke> glyph_strokes(std::size_t category) {
  Rng rng(derive_seed(kGlyphRoot, "glyph", category));
  const auto lattice = [](std::uint64_t i) { return 0.14 + 0.18 * static_cast<double>(i); };
  std::vector<Stroke> strokes;
  const std::size_t n = 3 + rng.below(3);
  while (strokes.size() < n) {
    const std::uint64_t ax = rng.below(5), ay = rng.below(5), bx = rng.below(5), by = rng.below(5);
    if (ax == bx && ay == by) continue;
    // skip strokes shorter than two lattice steps so each stays visible at low resolution
    const double dx = std::abs(static_cast<double>(ax) - static_cast<double>(bx));
    const double dy = std::abs(static_cast<double>(ay) - static_cast<double>(by));
    if (dx + dy < 2.0) continue;
    strokes.push_back({lattice(ax), lattice(ay), lattice(bx), lattice(by)});
  }
  return strokes;
}

inline double segment_distance(double px, double py, const Stroke& s) {
  const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - s.x0) * vx + (py - s.y0) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (s.x0 + t * vx), dy = py - (s.y0 + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

/// Ink coverage in [0,1] of the category's strokes, after a small per-sample
/// similarity transform.
inline Image stroke_coverage(std::size_t category, std::size_t size, Rng& rng, double geometric_jitter) {
  const auto strokes = glyph_strokes(category);
  const double angle = (rng.uniform() * 2 - 1) * 0.10 * geometric_jitter;
  const double scl = 1.0 + (rng.uniform() * 2 - 1) * 0.06 * geometric_jitter;
  const double tx = (rng.uniform() * 2 - 1) * 0.05 * geometric_jitter;
  const double ty = (rng.uniform() * 2 - 1) * 0.05 * geometric_jitter;
  const double half_width = 0.055 + rng.uniform() * 0.015;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double px_size = 1.0 / static_cast<double>(size);
  Image cov(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      // inverse-map pixel center into glyph space
      const double u = (static_cast<double>(x) + 0.5) * px_size - 0.5 - tx;
      const double v = (static_cast<double>(y) + 0.5) * px_size - 0.5 - ty;
      const double gx = (ca * u + sa * v) / scl + 0.5;
      const double gy = (-sa * u + ca * v) / scl + 0.5;
      double d = 1e9;
      for (const auto& s : strokes) d = std::min(d, segment_distance(gx, gy, s));
      // one-pixel linear ramp at the stroke edge
      cov(y, x) = std::clamp((half_width - d) / px_size + 0.5, 0.0, 1.0);
    }
  }
  return cov;
}

inline Image box_blur3(const Image& src) {
  Image dst(src.height, src.width);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) {
      double acc = 0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(src.height) || xx >= static_cast<std::ptrdiff_t>(src.width)) continue;
          acc += src(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          ++n;
        }
      dst(y, x) = acc / n;
    }
  return dst;
}

}  // namespace detail

/// Deterministic procedural glyph for (category, domain, noise_level, seed).
///   tracing: dark ink on a light ground, clean edges
///   rubbing: light strokes on a dark ground with speckle
///   color:   strokes over a textured ground, blurred
/// noise_level in [0,1] scales the corruption of each style.
inline GlyphSample render_glyph(std::size_t category, Domain domain, double noise_level, std::uint64_t seed,
                                std::size_t size = 16) {
  if (!(noise_level >= 0.0 && noise_level <= 1.0)) throw ParameterError("noise_level must lie in [0, 1]");
  if (size < 4) throw ParameterError("glyph size must be >= 4");
  Rng rng(derive_seed(seed, "render", category * 3 + static_cast<std::size_t>(domain)));
  const Image cov = detail::stroke_coverage(category, size, rng, 1.0);
  GlyphSample g;
  g.category = category;
  g.domain = domain;
  g.image = Image(size, size);
  Image& img = g.image;
  switch (domain) {
    case Domain::Tracing: {
      for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = 1.0 - cov.pixels[i];
      const double flip = 0.04 * noise_level;
      for (double& p : img.pixels) {
        if (rng.uniform() < flip) p = 1.0 - p;
        p += rng.normal() * 0.08 * noise_level;
      }
      break;
    }
    case Domain::Rubbing: {
      const double ground = 0.12 + 0.08 * rng.uniform();
      const double ink = 0.85 + 0.1 * rng.uniform();
      const double speckle = 0.01 + 0.12 * noise_level;
      for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        double p = ground + (ink - ground) * cov.pixels[i];
        if (rng.uniform() < speckle) p = cov.pixels[i] > 0.5 ? ground + 0.2 * rng.uniform() : 0.55 + 0.4 * rng.uniform();
        img.pixels[i] = p + rng.normal() * 0.06 * noise_level;
      }
      break;
    }
    case Domain::Color: {
      const double base = 0.45 + 0.15 * rng.uniform();
      const double fx = 0.6 + 1.2 * rng.uniform(), fy = 0.6 + 1.2 * rng.uniform();
      const double phase = 6.283185307179586 * rng.uniform();
      const double amp = 0.08 + 0.2 * noise_level;
      const double ink = base > 0.5 ? 0.08 : 0.92;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double tex = amp * std::sin(fx * static_cast<double>(x) + phase) * std::cos(fy * static_cast<double>(y) - phase);
          const double ground = base + tex;
          img(y, x) = ground + (ink - ground) * cov(y, x);
        }
      img = detail::box_blur3(img);
      for (double& p : img.pixels) p += rng.normal() * 0.05 * noise_level;
      break;
    }
  }
  img.clamp01();
  return g;
}

// ---------------------------------------------------------------------------
// Page layout

struct PageLayoutConfig {
  std::size_t glyph_size = 16;
  std::size_t column_gap = 6;
  std::size_t row_gap = 3;
  std::size_t margin = 4;
};

/// Largest per-box positional jitter (pixels) that keeps every column's x1
/// spread below half the glyph width, which is what column grouping with the
/// default factor 0.5 needs to recover the layout.
inline double max_page_jitter(const PageLayoutConfig& layout) {
  return std::min(static_cast<double>(layout.glyph_size) / 4.0 - 0.5, static_cast<double>(layout.row_gap) / 2.0);
}

/// Minimal page extent (height, width) holding `num_chars` in `num_columns` columns.
inline std::pair<std::size_t, std::size_t> page_extent(std::size_t num_chars, std::size_t num_columns,
                                                       const PageLayoutConfig& layout) {
  const std::size_t rows = (num_chars + num_columns - 1) / num_columns;
  const std::size_t j = static_cast<std::size_t>(std::ceil(max_page_jitter(layout)));
  return {2 * (layout.margin + j) + rows * layout.glyph_size + (rows - 1) * layout.row_gap,
          2 * (layout.margin + j) + num_columns * layout.glyph_size + (num_columns - 1) * layout.column_gap};
}

/// Places `categories.size()` glyphs in right-to-left columns, top to bottom.
/// `page_size` is (height, width).
inline PageSample generate_page(const std::vector<std::size_t>& categories, std::size_t num_columns,
                                std::pair<std::size_t, std::size_t> page_size, double jitter, Domain domain,
                                double noise_level, std::uint64_t seed, const PageLayoutConfig& layout = {}) {
  const std::size_t n = categories.size();
  if (n == 0) throw LayoutError("page needs at least one character");
  if (num_columns == 0 || num_columns > n) throw LayoutError("column count must lie in [1, num_chars]");
  if (jitter < 0 || jitter > max_page_jitter(layout))
    throw ParameterError("jitter must lie in [0, " + std::to_string(max_page_jitter(layout)) + "]");
  const auto [need_h, need_w] = page_extent(n, num_columns, layout);
  const auto [height, width] = page_size;
  if (need_h > height || need_w > width)
    throw LayoutError("characters do not fit a " + std::to_string(height) + "x" + std::to_string(width) + " page");

  Rng rng(derive_seed(seed, "page"));
  PageSample page;
  page.domain = domain;
  page.num_columns = num_columns;
  const double ground = domain == Domain::Tracing ? 1.0 : domain == Domain::Rubbing ? 0.15 : 0.5;
  page.image = Image(height, width, ground);

  const std::size_t rows = (n + num_columns - 1) / num_columns;
  const std::size_t g = layout.glyph_size;
  const std::size_t pad = static_cast<std::size_t>(std::ceil(max_page_jitter(layout)));
  const auto jit = [&]() { return static_cast<long>(std::lround((rng.uniform() * 2 - 1) * jitter)); };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t col = i / rows, row = i % rows;  // col 0 is the rightmost
    const long base_x = static_cast<long>(width - layout.margin - pad - g - col * (g + layout.column_gap));
    const long base_y = static_cast<long>(layout.margin + pad + row * (g + layout.row_gap));
    const long x1 = base_x + jit(), y1 = base_y + jit();
    const GlyphSample glyph = render_glyph(categories[i], domain, noise_level, derive_seed(seed, "page.glyph", i), g);
    for (std::size_t y = 0; y < g; ++y)
      for (std::size_t x = 0; x < g; ++x)
        page.image(static_cast<std::size_t>(y1) + y, static_cast<std::size_t>(x1) + x) = glyph.image(y, x);
    page.chars.push_back({BBox{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x1 + static_cast<long>(g)),
                               static_cast<double>(y1 + static_cast<long>(g))},
                          categories[i]});
  }
  return page;
}

// ---------------------------------------------------------------------------
// Splits and stratification

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

inline Split parse_split(std::string_view s) {
  for (Split sp : {Split::Train, Split::Val, Split::Test})
    if (split_name(sp) == s) return sp;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

enum class SplitKind : std::uint8_t { Page, Char };

struct SplitManifest {
  SplitKind kind = SplitKind::Page;
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> ratios{};
  std::vector<Split> assignment;  // one entry per input sample

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == s) out.push_back(i);
    return out;
  }
  bool operator==(const SplitManifest&) const = default;
};

namespace detail {

inline void assign_group(std::vector<std::size_t> members, const std::array<std::size_t, 3>& ratios, Rng& rng,
                         std::vector<Split>& out, bool require_train_and_test) {
  rng.shuffle(members);
  auto parts = largest_remainder(members.size(), {static_cast<double>(ratios[0]), static_cast<double>(ratios[1]),
                                                  static_cast<double>(ratios[2])});
  if (require_train_and_test) {
    // steal from the largest other bucket when a required bucket came out empty
    for (std::size_t need : {std::size_t{0}, std::size_t{2}}) {
      if (parts[need] > 0) continue;
      std::size_t donor = need == 0 ? 2 : 0;
      if (parts[1] > parts[donor]) donor = 1;
      if (parts[donor] > 1 || (donor == 1 && parts[1] > 0)) {
        --parts[donor];
        ++parts[need];
      }
    }
  }
  std::size_t pos = 0;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < parts[b]; ++i) out[members[pos++]] = static_cast<Split>(b);
}

}  // namespace detail

/// Domain-stratified page split: each domain is shuffled then cut by `ratios`.
inline SplitManifest split_pages(const std::vector<Domain>& page_domains, std::uint64_t seed,
                                 std::array<std::size_t, 3> ratios = {8, 1, 1}) {
  if (page_domains.empty()) throw DataError("cannot split an empty page set");
  SplitManifest m{SplitKind::Page, seed, ratios, std::vector<Split>(page_domains.size(), Split::Train)};
  for (Domain d : kAllDomains) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < page_domains.size(); ++i)
      if (page_domains[i] == d) members.push_back(i);
    if (members.empty()) continue;
    Rng rng(derive_seed(seed, "split_pages", static_cast<std::uint64_t>(d)));
    detail::assign_group(std::move(members), ratios, rng, m.assignment, false);
  }
  return m;
}

/// Per-category split by `ratios`; every category gets at least one train and
/// one test sample.
inline SplitManifest split_chars(const std::vector<std::size_t>& categories, std::uint64_t seed,
                                 std::array<std::size_t, 3> ratios = {4, 1, 5}) {
  if (categories.empty()) throw DataError("cannot split an empty crop set");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < categories.size(); ++i) groups[categories[i]].push_back(i);
  SplitManifest m{SplitKind::Char, seed, ratios, std::vector<Split>(categories.size(), Split::Train)};
  for (auto& [cat, members] : groups) {
    if (members.size() < 2)
      throw DataError("category " + std::to_string(cat) + " has fewer than 2 samples; cannot cover train and test");
    Rng rng(derive_seed(seed, "split_chars", cat));
    detail::assign_group(std::move(members), ratios, rng, m.assignment, true);
  }
  return m;
}

struct FrequencyGroups {
  std::vector<std::size_t> head, mid, tail;
};

/// Sorts categories by (count desc, id asc) and cuts at ceil(C/3) and 2*ceil(C/3).
/// `counts` maps position -> count; `ids` gives the category id at each position
/// (defaults to the position itself).
inline FrequencyGroups stratify_head_mid_tail(const std::vector<std::size_t>& counts,
                                              std::vector<std::size_t> ids = {}) {
  const std::size_t c = counts.size();
  if (c < 3) throw ParameterError("head/mid/tail stratification needs at least 3 categories");
  if (ids.empty()) {
    ids.resize(c);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
  }
  if (ids.size() != c) throw DimensionError("one id per count required");
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return counts[a] > counts[b] || (counts[a] == counts[b] && ids[a] < ids[b]);
  });
  const std::size_t cut = (c + 2) / 3;
  FrequencyGroups g;
  for (std::size_t r = 0; r < c; ++r) {
    const std::size_t id = ids[order[r]];
    if (r < cut) g.head.push_back(id);
    else if (r < 2 * cut) g.mid.push_back(id);
    else g.tail.push_back(id);
  }
  return g;
}

}  // namespace laddermoe
