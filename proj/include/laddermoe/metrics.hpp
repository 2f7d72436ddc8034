// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: single-character accuracies (overall, class-balanced,
// subset), page-level Levenshtein alignment with correct/accurate rates and
// their macro/micro aggregates, and AP at IoU 0.5 for supplied detections.

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "laddermoe/errors.hpp"
#include "laddermoe/image.hpp"

namespace laddermoe {

using Warnings = std::vector<std::string>;

inline void check_paired(std::size_t preds, std::size_t labels) {
  if (preds != labels) throw DimensionError("predictions and labels differ in length");
}

inline double overall_accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels) {
  check_paired(preds.size(), labels.size());
  if (labels.empty()) throw EmptyInputError("overall accuracy of an empty test set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Unweighted mean of per-class accuracy over `classes`. Classes without test
/// samples are left out of the mean and reported in `warnings`.
inline double balanced_accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                                const std::vector<std::size_t>& classes, Warnings* warnings = nullptr) {
  check_paired(preds.size(), labels.size());
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> per;  // class -> (hits, support)
  for (std::size_t c : classes) per[c] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = per.find(labels[i]);
    if (it == per.end()) continue;
    it->second.first += preds[i] == labels[i];
    ++it->second.second;
  }
  double acc = 0.0;
  std::size_t used = 0;
  for (auto& [c, hs] : per) {
    if (hs.second == 0) {
      if (warnings) warnings->push_back("class " + std::to_string(c) + " has no test samples; excluded from balanced accuracy");
      continue;
    }
    acc += static_cast<double>(hs.first) / static_cast<double>(hs.second);
    ++used;
  }
  if (used == 0) throw EmptyInputError("balanced accuracy: no class has test samples");
  return acc / static_cast<double>(used);
}

/// Balanced accuracy over every class that appears among the labels.
inline double balanced_accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels) {
  std::set<std::size_t> cs(labels.begin(), labels.end());
  return balanced_accuracy(preds, labels, std::vector<std::size_t>(cs.begin(), cs.end()));
}

/// Accuracy restricted to sample indices `subset`; absent when the subset is empty.
inline std::optional<double> subset_accuracy(const std::vector<std::size_t>& preds,
                                             const std::vector<std::size_t>& labels,
                                             const std::vector<std::size_t>& subset, Warnings* warnings = nullptr,
                                             const std::string& subset_name = "subset") {
  check_paired(preds.size(), labels.size());
  if (subset.empty()) {
    if (warnings) warnings->push_back(subset_name + " is empty; accuracy not reported");
    return std::nullopt;
  }
  std::size_t hit = 0;
  for (std::size_t i : subset) {
    if (i >= labels.size()) throw DimensionError("subset index out of range");
    hit += preds[i] == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(subset.size());
}

// ---------------------------------------------------------------------------
// Page alignment

struct AlignmentCounts {
  std::size_t S = 0, D = 0, I = 0, N = 0;
  std::size_t errors() const { return S + D + I; }
  bool operator==(const AlignmentCounts&) const = default;
};

/// Unit-cost Levenshtein alignment of `hyp` to `ref`. Among optimal paths the
/// backtrace prefers diagonal (match/substitution), then deletion, then insertion.
template <class T>
AlignmentCounts edit_alignment(const std::vector<T>& ref, const std::vector<T>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  const auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});

  AlignmentCounts c;
  c.N = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const std::size_t sub = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      if (at(i, j) == at(i - 1, j - 1) + sub) {
        c.S += sub;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++c.D;
      --i;
      continue;
    }
    ++c.I;
    --j;
  }
  return c;
}

struct PageRates {
  double cr = 0.0;
  double ar = 0.0;
};

/// CR = (N - S - D) / N, AR = 1 - (S + D + I) / N (AR is not clamped). Both
/// are evaluated as 1 - errors / N so that CR >= AR holds in floating point.
inline PageRates page_cr_ar(const AlignmentCounts& c) {
  if (c.N == 0) throw EmptyInputError("page with an empty reference has no CR/AR");
  const double n = static_cast<double>(c.N);
  return {1.0 - static_cast<double>(c.S + c.D) / n, 1.0 - static_cast<double>(c.errors()) / n};
}

struct CorpusRates {
  double macro_cr = 0.0, macro_ar = 0.0, micro_cr = 0.0, micro_ar = 0.0;
  std::size_t pages = 0;           // M
  std::size_t pages_in_macro = 0;  // pages with N >= 1
};

/// Macro: mean of per-page CR/AR. Micro: pooled counts. Pages with N = 0 are
/// left out of the macro mean (warning) and contribute only their insertions
/// to the micro numerators.
inline CorpusRates corpus_macro_micro(const std::vector<AlignmentCounts>& pages, Warnings* warnings = nullptr) {
  if (pages.empty()) throw EmptyInputError("no pages to aggregate");
  CorpusRates r;
  r.pages = pages.size();
  std::size_t sd = 0, sdi = 0, n = 0;
  for (std::size_t p = 0; p < pages.size(); ++p) {
    const auto& c = pages[p];
    sd += c.S + c.D;
    sdi += c.errors();
    n += c.N;
    if (c.N == 0) {
      if (warnings) warnings->push_back("page " + std::to_string(p) + " has an empty reference; excluded from macro rates");
      continue;
    }
    const PageRates pr = page_cr_ar(c);
    r.macro_cr += pr.cr;
    r.macro_ar += pr.ar;
    ++r.pages_in_macro;
  }
  if (r.pages_in_macro == 0 || n == 0) throw EmptyInputError("every page has an empty reference");
  r.macro_cr /= static_cast<double>(r.pages_in_macro);
  r.macro_ar /= static_cast<double>(r.pages_in_macro);
  r.micro_cr = 1.0 - static_cast<double>(sd) / static_cast<double>(n);
  r.micro_ar = 1.0 - static_cast<double>(sdi) / static_cast<double>(n);
  return r;
}

// ---------------------------------------------------------------------------
// Detection AP

struct ScoredBox {
  BBox box;
  double score = 0.0;
};

/// Single-class AP at IoU >= 0.5. Detections are visited in descending score
/// order; each matches the highest-IoU unmatched ground-truth box on its page.
/// The PR curve is integrated with all-points interpolation. Absent when there
/// is no ground truth at all.
inline std::optional<double> ap50(const std::vector<std::vector<ScoredBox>>& detections,
                                  const std::vector<std::vector<BBox>>& ground_truth) {
  if (detections.size() != ground_truth.size()) throw DimensionError("detections and ground truth cover different page counts");
  std::size_t total_gt = 0;
  for (auto& g : ground_truth) total_gt += g.size();
  if (total_gt == 0) return std::nullopt;

  struct Det {
    std::size_t page, index;
    double score;
  };
  std::vector<Det> all;
  for (std::size_t p = 0; p < detections.size(); ++p)
    for (std::size_t i = 0; i < detections[p].size(); ++i) all.push_back({p, i, detections[p][i].score});
  std::stable_sort(all.begin(), all.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> matched(ground_truth.size());
  for (std::size_t p = 0; p < ground_truth.size(); ++p) matched[p].assign(ground_truth[p].size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const Det& d : all) {
    const BBox& db = detections[d.page][d.index].box;
    double best = 0.5;
    std::optional<std::size_t> hit;
    for (std::size_t g = 0; g < ground_truth[d.page].size(); ++g) {
      if (matched[d.page][g]) continue;
      const double o = iou(db, ground_truth[d.page][g]);
      if (o >= best && (!hit || o > best)) {
        best = o;
        hit = g;
      }
    }
    if (hit) {
      matched[d.page][*hit] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  // precision envelope, right to left
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

}  // namespace laddermoe
