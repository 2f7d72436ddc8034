// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Slow reference implementations shared by the unit and acceptance tests.
// They are written without reusing library code so that agreement with the
// library is meaningful.

#pragma once

#include <cstddef>
#include <vector>

#include "laddermoe/image.hpp"

namespace laddermoe::testing {

/// Column grouping re-derived step by step: threshold from the mean valid
/// width, boxes visited rightmost first, each joins the first column whose
/// creation-time box is closer than the threshold in x1. Returns box indices
/// per column in final reading order. An empty result signals that no box has
/// a positive width.
inline std::vector<std::vector<std::size_t>> reference_columns(const std::vector<BBox>& boxes, double factor) {
  double width_sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i].x2 - boxes[i].x1 > 0.0) {
      width_sum += boxes[i].x2 - boxes[i].x1;
      valid += 1;
    }
  }
  if (valid == 0) return {};
  const double thr = width_sum / static_cast<double>(valid) * factor;

  // insertion sort keeps the order of fully tied boxes
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    std::size_t pos = order.size();
    while (pos > 0) {
      const BBox& prev = boxes[order[pos - 1]];
      const BBox& cur = boxes[i];
      const bool before = cur.x1 > prev.x1 || (cur.x1 == prev.x1 && (cur.y1 < prev.y1 || (cur.y1 == prev.y1 && cur.x2 < prev.x2)));
      if (!before) break;
      --pos;
    }
    order.insert(order.begin() + static_cast<std::ptrdiff_t>(pos), i);
  }

  std::vector<std::vector<std::size_t>> cols;
  for (std::size_t b : order) {
    std::size_t target = cols.size();
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double d = boxes[b].x1 - boxes[cols[c][0]].x1;
      if ((d < 0 ? -d : d) < thr) {
        target = c;
        break;
      }
    }
    if (target == cols.size()) cols.emplace_back();
    cols[target].push_back(b);
  }
  for (auto& col : cols) {
    for (std::size_t i = 1; i < col.size(); ++i)
      for (std::size_t j = i; j > 0 && boxes[col[j]].y1 < boxes[col[j - 1]].y1; --j) std::swap(col[j], col[j - 1]);
  }
  for (std::size_t i = 1; i < cols.size(); ++i)
    for (std::size_t j = i; j > 0 && boxes[cols[j][0]].x1 > boxes[cols[j - 1][0]].x1; --j) std::swap(cols[j], cols[j - 1]);
  return cols;
}

/// Minimum number of unit edits turning `a[i..]` into `b[j..]`, by exhaustive recursion.
inline std::size_t brute_edit_distance(const std::vector<int>& a, const std::vector<int>& b, std::size_t i = 0,
                                       std::size_t j = 0) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  if (a[i] == b[j]) return brute_edit_distance(a, b, i + 1, j + 1);
  const std::size_t sub = brute_edit_distance(a, b, i + 1, j + 1);
  const std::size_t del = brute_edit_distance(a, b, i + 1, j);
  const std::size_t ins = brute_edit_distance(a, b, i, j + 1);
  return 1 + (sub < del ? (sub < ins ? sub : ins) : (del < ins ? del : ins));
}

/// Every sequence over {0, .., symbols-1} with length at most `max_len`.
inline std::vector<std::vector<int>> all_sequences(int symbols, std::size_t max_len) {
  std::vector<std::vector<int>> out{{}};
  for (std::size_t start = 0; start < out.size(); ++start) {
    if (out[start].size() == max_len) continue;
    for (int s = 0; s < symbols; ++s) {
      std::vector<int> next = out[start];
      next.push_back(s);
      out.push_back(next);
    }
  }
  return out;
}

}  // namespace laddermoe::testing
