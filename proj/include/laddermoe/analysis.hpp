// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Expert-activation statistics: per-adapter [expert × category] selection
// counts, CSV export/import, and utilization summaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "laddermoe/model.hpp"
#include "laddermoe/syndata.hpp"

namespace laddermoe {

inline constexpr int kActivationCsvVersion = 1;

struct ActivationMatrix {
  std::size_t adapter = 0;
  std::size_t num_experts = 0;
  std::size_t num_categories = 0;
  std::vector<std::uint64_t> counts;           // row-major [expert × category]
  std::vector<std::uint64_t> category_totals;  // samples seen per category

  static ActivationMatrix zeros(std::size_t adapter, std::size_t experts, std::size_t categories) {
    return {adapter, experts, categories, std::vector<std::uint64_t>(experts * categories, 0),
            std::vector<std::uint64_t>(categories, 0)};
  }
  std::uint64_t& at(std::size_t e, std::size_t c) { return counts[e * num_categories + c]; }
  std::uint64_t at(std::size_t e, std::size_t c) const { return counts[e * num_categories + c]; }
  std::uint64_t column_sum(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t e = 0; e < num_experts; ++e) s += at(e, c);
    return s;
  }
  std::vector<std::uint64_t> expert_marginal() const {
    std::vector<std::uint64_t> m(num_experts, 0);
    for (std::size_t e = 0; e < num_experts; ++e)
      for (std::size_t c = 0; c < num_categories; ++c) m[e] += at(e, c);
    return m;
  }
  bool operator==(const ActivationMatrix&) const = default;
};

/// Adds one sample's routing records to the matrices (one per adapter).
inline void accumulate_routing(std::vector<ActivationMatrix>& mats, const std::vector<RoutingRecord>& routing,
                               std::size_t category) {
  if (routing.size() != mats.size()) throw DimensionError("routing record count does not match adapter count");
  for (std::size_t a = 0; a < mats.size(); ++a) {
    auto& m = mats[a];
    if (category >= m.num_categories) throw DimensionError("category outside the activation matrix");
    ++m.category_totals[category];
    for (std::size_t e : routing[a].selected) {
      if (e >= m.num_experts) throw DimensionError("expert index outside the activation matrix");
      ++m.at(e, category);
    }
  }
}

/// Encodes every sample with routing recorded and counts selections. The
/// model is only read.
inline std::vector<ActivationMatrix> record_activations(const Model& model, const std::vector<GlyphSample>& data,
                                                        std::size_t num_categories) {
  const auto& ec = model.cfg.encoder;
  std::vector<ActivationMatrix> mats;
  if (!ec.adapters_enabled()) return mats;
  for (std::size_t a = 0; a < ec.adapter_layers.size(); ++a)
    mats.push_back(ActivationMatrix::zeros(a, ec.num_experts, num_categories));
  NoGradGuard guard;
  for (const auto& s : data) {
    const EncodeResult r = model.encode(resize(s.image, ec.image_size, ec.image_size), true);
    accumulate_routing(mats, r.routing, s.category);
  }
  return mats;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_header(const ActivationMatrix& m, const char* kind) {
  std::ostringstream os;
  os << "# laddermoe activation " << kind << " version=" << kActivationCsvVersion << " adapter=" << m.adapter
     << " experts=" << m.num_experts << " categories=" << m.num_categories << '\n';
  os << "expert";
  for (std::size_t c = 0; c < m.num_categories; ++c) os << ",c" << c;
  os << '\n';
  return os.str();
}

inline std::string raw_csv(const ActivationMatrix& m) {
  std::ostringstream os;
  os << csv_header(m, "raw");
  os << "total";
  for (auto t : m.category_totals) os << ',' << t;
  os << '\n';
  for (std::size_t e = 0; e < m.num_experts; ++e) {
    os << e;
    for (std::size_t c = 0; c < m.num_categories; ++c) os << ',' << m.at(e, c);
    os << '\n';
  }
  return os.str();
}

/// Counts divided by the category's sample count (0 for unseen categories).
inline std::string normalized_csv(const ActivationMatrix& m) {
  std::ostringstream os;
  os << csv_header(m, "normalized");
  for (std::size_t e = 0; e < m.num_experts; ++e) {
    os << e;
    for (std::size_t c = 0; c < m.num_categories; ++c) {
      const double v = m.category_totals[c] ? static_cast<double>(m.at(e, c)) / static_cast<double>(m.category_totals[c]) : 0.0;
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

/// Writes adapter<i>_raw.csv and adapter<i>_normalized.csv; returns the paths.
inline std::vector<std::filesystem::path> export_heatmap_csv(const std::vector<ActivationMatrix>& mats,
                                                             const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> out;
  for (const auto& m : mats) {
    const auto stem = "adapter" + std::to_string(m.adapter);
    out.push_back(dir / (stem + "_raw.csv"));
    write_text_file(out.back(), raw_csv(m));
    out.push_back(dir / (stem + "_normalized.csv"));
    write_text_file(out.back(), normalized_csv(m));
  }
  return out;
}

/// Parses the output of raw_csv back into a matrix.
inline ActivationMatrix parse_raw_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("activation CSV is empty");
  ActivationMatrix m;
  int version = 0;
  if (std::sscanf(line.c_str(), "# laddermoe activation raw version=%d adapter=%zu experts=%zu categories=%zu", &version,
                  &m.adapter, &m.num_experts, &m.num_categories) != 4)
    throw FormatError("activation CSV header not recognized");
  if (version != kActivationCsvVersion) throw FormatError("unsupported activation CSV version");
  m.counts.assign(m.num_experts * m.num_categories, 0);
  std::getline(is, line);  // column names
  auto parse_row = [&](const std::string& row, const std::string& key, std::vector<std::uint64_t>& out) {
    std::istringstream rs(row);
    std::string cell;
    std::getline(rs, cell, ',');
    if (cell != key) throw FormatError("activation CSV row '" + cell + "' where '" + key + "' expected");
    out.clear();
    while (std::getline(rs, cell, ',')) out.push_back(std::stoull(cell));
    if (out.size() != m.num_categories) throw FormatError("activation CSV row has the wrong width");
  };
  if (!std::getline(is, line)) throw FormatError("activation CSV lacks the totals row");
  parse_row(line, "total", m.category_totals);
  std::vector<std::uint64_t> row;
  for (std::size_t e = 0; e < m.num_experts; ++e) {
    if (!std::getline(is, line)) throw FormatError("activation CSV truncated");
    parse_row(line, std::to_string(e), row);
    std::copy(row.begin(), row.end(), m.counts.begin() + static_cast<std::ptrdiff_t>(e * m.num_categories));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Summary

struct UtilizationStats {
  std::size_t adapter = 0;
  double utilization = 0.0;  // fraction of experts selected at least once
  double entropy = 0.0;      // natural-log entropy of the marginal expert distribution
  std::vector<std::size_t> top_experts;
};

struct UtilizationSummary {
  std::vector<UtilizationStats> adapters;
  std::vector<std::vector<std::size_t>> top_overlap;  // [adapter × adapter] shared top experts
};

/// The `top` most used experts, ties by lower index.
inline std::vector<std::size_t> top_experts(const ActivationMatrix& m, std::size_t top = 5) {
  const auto marg = m.expert_marginal();
  std::vector<std::size_t> idx(marg.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return marg[a] > marg[b]; });
  idx.resize(std::min(top, idx.size()));
  return idx;
}

inline UtilizationSummary expert_utilization_summary(const std::vector<ActivationMatrix>& mats, std::size_t top = 5) {
  UtilizationSummary s;
  for (const auto& m : mats) {
    UtilizationStats st;
    st.adapter = m.adapter;
    const auto marg = m.expert_marginal();
    double total = 0.0;
    std::size_t used = 0;
    for (auto v : marg) {
      total += static_cast<double>(v);
      used += v > 0;
    }
    st.utilization = m.num_experts ? static_cast<double>(used) / static_cast<double>(m.num_experts) : 0.0;
    if (total > 0)
      for (auto v : marg)
        if (v > 0) {
          const double p = static_cast<double>(v) / total;
          st.entropy -= p * std::log(p);
        }
    st.top_experts = top_experts(m, top);
    s.adapters.push_back(std::move(st));
  }
  const std::size_t n = mats.size();
  s.top_overlap.assign(n, std::vector<std::size_t>(n, 0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      auto x = s.adapters[a].top_experts, y = s.adapters[b].top_experts;
      std::sort(x.begin(), x.end());
      std::sort(y.begin(), y.end());
      std::vector<std::size_t> both;
      std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(both));
      s.top_overlap[a][b] = both.size();
    }
  return s;
}

inline nlohmann::json to_json(const UtilizationSummary& s) {
  nlohmann::json adapters = nlohmann::json::array();
  for (auto& a : s.adapters)
    adapters.push_back({{"adapter", a.adapter}, {"utilization", a.utilization}, {"entropy", a.entropy}, {"top_experts", a.top_experts}});
  return {{"format", "laddermoe.expert_summary"}, {"version", kActivationCsvVersion}, {"adapters", adapters}, {"top_overlap", s.top_overlap}};
}

}  // namespace laddermoe
