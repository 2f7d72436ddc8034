// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Report assembly on top of the metric formulas: batch prediction with
// optional worker threads, single-character reports with head/mid/tail and
// per-domain subsets, page reports, and their JSON / table renderings.

#pragma once

#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "laddermoe/metrics.hpp"
#include "laddermoe/model.hpp"
#include "laddermoe/syndata.hpp"
#include "laddermoe/transcribe.hpp"

namespace laddermoe {

inline constexpr int kReportFormatVersion = 1;
/// Prediction value for a crop on which the recognizer emitted no character.
inline constexpr std::size_t kNoPrediction = std::numeric_limits<std::size_t>::max();

/// Runs `fn(i)` for i in [0, n) over `workers` threads with a static
/// contiguous partition, so results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::size_t recognize_char(const Model& m, const Image& image) {
  const auto seq = m.recognize(resize(image, m.cfg.encoder.image_size, m.cfg.encoder.image_size), 1);
  return seq.empty() ? kNoPrediction : seq.front();
}

inline std::vector<std::size_t> predict_categories(const Model& m, const std::vector<GlyphSample>& crops,
                                                   std::size_t workers = 1) {
  std::vector<std::size_t> out(crops.size());
  parallel_for(crops.size(), workers, [&](std::size_t i) { out[i] = recognize_char(m, crops[i].image); });
  return out;
}

struct SubsetScore {
  std::string name;
  std::optional<double> accuracy;
  std::size_t count = 0;
};

struct CharReport {
  std::size_t samples = 0;
  double overall = 0.0;
  double balanced = 0.0;
  std::size_t balanced_classes = 0;
  std::vector<SubsetScore> subsets;  // head, mid, tail, color, rubbing, tracing
  Warnings warnings;

  std::optional<double> subset(const std::string& name) const {
    for (auto& s : subsets)
      if (s.name == name) return s.accuracy;
    return std::nullopt;
  }
};

/// Single-character report. `classes` is the evaluated category set (the
/// retained categories); `groups` provides the head/mid/tail subsets.
inline CharReport char_report(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                              const std::vector<Domain>& domains, const std::vector<std::size_t>& classes,
                              const FrequencyGroups& groups) {
  check_paired(preds.size(), labels.size());
  check_paired(domains.size(), labels.size());
  CharReport r;
  r.samples = labels.size();
  r.overall = overall_accuracy(preds, labels);
  r.balanced = balanced_accuracy(preds, labels, classes, &r.warnings);
  {
    std::set<std::size_t> present(labels.begin(), labels.end());
    for (auto c : classes) r.balanced_classes += present.count(c);
  }
  auto add_subset = [&](const std::string& name, auto&& member) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (member(i)) idx.push_back(i);
    r.subsets.push_back({name, subset_accuracy(preds, labels, idx, &r.warnings, name), idx.size()});
  };
  const std::pair<const char*, const std::vector<std::size_t>*> gs[] = {
      {"head", &groups.head}, {"mid", &groups.mid}, {"tail", &groups.tail}};
  for (auto& [name, members] : gs) {
    const std::set<std::size_t> s(members->begin(), members->end());
    add_subset(name, [&](std::size_t i) { return s.count(labels[i]) > 0; });
  }
  for (Domain d : kAllDomains)
    add_subset(std::string(domain_name(d)), [&](std::size_t i) { return domains[i] == d; });
  return r;
}

struct PageReport {
  CorpusRates rates;
  std::optional<double> ap50;
  std::vector<AlignmentCounts> per_page;
  Warnings warnings;
};

inline PageReport page_report(const std::vector<std::vector<std::size_t>>& references,
                              const std::vector<std::vector<std::size_t>>& hypotheses,
                              const std::vector<std::vector<ScoredBox>>* detections = nullptr,
                              const std::vector<std::vector<BBox>>* ground_truth = nullptr) {
  if (references.size() != hypotheses.size()) throw DimensionError("reference and hypothesis page counts differ");
  PageReport r;
  for (std::size_t p = 0; p < references.size(); ++p) r.per_page.push_back(edit_alignment(references[p], hypotheses[p]));
  r.rates = corpus_macro_micro(r.per_page, &r.warnings);
  if (detections && ground_truth) {
    r.ap50 = ap50(*detections, *ground_truth);
    if (!r.ap50) r.warnings.push_back("no ground-truth boxes; AP50 not reported");
  }
  return r;
}

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json to_json(const CharReport& r) {
  nlohmann::json subsets = nlohmann::json::object();
  for (auto& s : r.subsets) subsets[s.name] = {{"accuracy", optional_json(s.accuracy)}, {"count", s.count}};
  return {{"format", "laddermoe.char_report"},
          {"version", kReportFormatVersion},
          {"samples", r.samples},
          {"overall_acc", r.overall},
          {"balanced_acc", r.balanced},
          {"balanced_classes", r.balanced_classes},
          {"subsets", subsets},
          {"warnings", r.warnings}};
}

inline nlohmann::json to_json(const PageReport& r, bool with_pages = false) {
  nlohmann::json j = {{"format", "laddermoe.page_report"},
                      {"version", kReportFormatVersion},
                      {"pages", r.rates.pages},
                      {"pages_in_macro", r.rates.pages_in_macro},
                      {"macro_cr", r.rates.macro_cr},
                      {"macro_ar", r.rates.macro_ar},
                      {"micro_cr", r.rates.micro_cr},
                      {"micro_ar", r.rates.micro_ar},
                      {"ap50", optional_json(r.ap50)},
                      {"warnings", r.warnings}};
  if (with_pages) {
    auto& pages = j["per_page"] = nlohmann::json::array();
    for (auto& c : r.per_page) pages.push_back({{"S", c.S}, {"D", c.D}, {"I", c.I}, {"N", c.N}});
  }
  return j;
}

inline std::string fmt_pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

inline std::string format_table(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::size_t w = 0;
  for (auto& [k, v] : rows) w = std::max(w, k.size());
  std::ostringstream os;
  for (auto& [k, v] : rows) os << k << std::string(w - k.size() + 2, ' ') << v << '\n';
  return os.str();
}

inline std::string format_table(const CharReport& r) {
  std::vector<std::pair<std::string, std::string>> rows{{"samples", std::to_string(r.samples)},
                                                        {"overall acc (%)", fmt_pct(r.overall)},
                                                        {"balanced acc (%)", fmt_pct(r.balanced)}};
  for (auto& s : r.subsets) rows.emplace_back(s.name + " acc (%)", fmt_pct(s.accuracy) + "  (n=" + std::to_string(s.count) + ")");
  return format_table(rows);
}

inline std::string format_table(const PageReport& r) {
  return format_table({{"pages", std::to_string(r.rates.pages)},
                       {"macro CR (%)", fmt_pct(r.rates.macro_cr)},
                       {"macro AR (%)", fmt_pct(r.rates.macro_ar)},
                       {"micro CR (%)", fmt_pct(r.rates.micro_cr)},
                       {"micro AR (%)", fmt_pct(r.rates.micro_ar)},
                       {"AP50 (%)", fmt_pct(r.ap50)}});
}

/// Transcribes pages with the model using the given boxes per page.
inline std::vector<PageTranscription> transcribe_pages(const Model& m, const std::vector<const Image*>& pages,
                                                       const std::vector<std::vector<BBox>>& boxes, double factor,
                                                       std::size_t workers = 1) {
  if (pages.size() != boxes.size()) throw DimensionError("page and box-list counts differ");
  std::vector<PageTranscription> out(pages.size());
  const std::size_t input = m.cfg.encoder.image_size;
  parallel_for(pages.size(), workers, [&](std::size_t p) {
    out[p] = transcribe_page(*pages[p], boxes[p], [&](const Image& crop) { return m.recognize(crop, 1); }, input, factor);
  });
  return out;
}

}  // namespace laddermoe
