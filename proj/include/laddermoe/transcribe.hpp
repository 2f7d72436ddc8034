// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Column-wise grouping of character boxes into right-to-left columns and
// reading-order serialization for full-page transcription.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "laddermoe/errors.hpp"
#include "laddermoe/image.hpp"

namespace laddermoe {

template <class Payload>
struct BoxedItem {
  BBox box;
  Payload payload{};
  bool operator==(const BoxedItem&) const = default;
};

template <class Payload>
struct ColumnGrouping {
  std::vector<std::vector<BoxedItem<Payload>>> columns;

  std::size_t total() const {
    std::size_t n = 0;
    for (auto& c : columns) n += c.size();
    return n;
  }
  bool operator==(const ColumnGrouping&) const = default;
};

/// One assignment decision: the box (by position in x1-descending order)
/// joined `column` whose anchor x1 was `anchor_x1` at that moment.
struct AssignmentStep {
  std::size_t column = 0;
  double box_x1 = 0;
  double anchor_x1 = 0;
  bool opened_column = false;
};

/// Mean width of boxes with x2 > x1, times `factor`.
inline double adaptive_threshold(const std::vector<BBox>& boxes, double factor = 0.5) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& b : boxes) {
    if (b.x2 > b.x1) {
      sum += b.x2 - b.x1;
      ++n;
    }
  }
  if (n == 0) throw ThresholdError("no box with positive width; column threshold undefined");
  return sum / static_cast<double>(n) * factor;
}

/// Groups boxes into columns: visit boxes rightmost first, join the first
/// column whose anchor (its first box) lies within the threshold in x1, else
/// open a column; then order each column top to bottom and the columns right
/// to left by their first box.
template <class Payload>
ColumnGrouping<Payload> group_columns(std::vector<BoxedItem<Payload>> items, double factor = 0.5,
                                      std::vector<AssignmentStep>* log = nullptr) {
  std::vector<BBox> boxes;
  boxes.reserve(items.size());
  for (auto& it : items) boxes.push_back(it.box);
  const double x_thr = adaptive_threshold(boxes, factor);

  // x1 descending; ties by y1 ascending, then x2 ascending
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.box.x1 != b.box.x1) return a.box.x1 > b.box.x1;
    if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
    return a.box.x2 < b.box.x2;
  });

  ColumnGrouping<Payload> g;
  for (auto& item : items) {
    bool assigned = false;
    for (std::size_t c = 0; c < g.columns.size(); ++c) {
      const double anchor = g.columns[c].front().box.x1;
      if (std::abs(item.box.x1 - anchor) < x_thr) {
        if (log) log->push_back({c, item.box.x1, anchor, false});
        g.columns[c].push_back(std::move(item));
        assigned = true;
        break;
      }
    }
    if (!assigned) {
      if (log) log->push_back({g.columns.size(), item.box.x1, item.box.x1, true});
      g.columns.push_back({std::move(item)});
    }
  }
  for (auto& col : g.columns)
    std::stable_sort(col.begin(), col.end(), [](const auto& a, const auto& b) { return a.box.y1 < b.box.y1; });
  std::stable_sort(g.columns.begin(), g.columns.end(),
                   [](const auto& a, const auto& b) { return a.front().box.x1 > b.front().box.x1; });
  return g;
}

/// Column-first reading order: columns in stored order, each top to bottom.
template <class Payload>
std::vector<Payload> serialize_reading_order(const ColumnGrouping<Payload>& g) {
  std::vector<Payload> out;
  out.reserve(g.total());
  for (const auto& col : g.columns)
    for (const auto& item : col) out.push_back(item.payload);
  return out;
}

/// Recognition result attached to one input box.
struct BoxPrediction {
  std::size_t box_index = 0;
  BBox box;
  bool recognized = false;  // false when the recognizer emitted no character
  std::size_t category = 0;
  bool clamped = false;
  bool operator==(const BoxPrediction&) const = default;
};

struct PageTranscription {
  std::vector<std::vector<std::size_t>> columns;  // categories per column, reading order
  std::vector<std::size_t> text;                  // flattened reading order
  std::vector<BoxPrediction> per_box;             // in input order
  std::vector<std::string> warnings;
};

/// Crops each box (clipped to the page), resizes it to `input_size`, and asks
/// `recognize(crop)` for a token sequence; the first token is the box's
/// character. All boxes are grouped; boxes without a character are skipped
/// when the reading order is emitted.
template <class Recognizer>
PageTranscription transcribe_page(const Image& page, const std::vector<BBox>& boxes, Recognizer&& recognize,
                                  std::size_t input_size, double factor = 0.5) {
  PageTranscription out;
  if (boxes.empty()) return out;
  std::vector<BoxedItem<std::size_t>> items;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    CropResult cr = crop(page, boxes[i]);
    if (cr.clamped) out.warnings.push_back("box " + std::to_string(i) + " extends past the page; clamped");
    const std::vector<std::size_t> pred = recognize(resize(cr.image, input_size, input_size));
    BoxPrediction bp{i, boxes[i], !pred.empty(), pred.empty() ? 0 : pred.front(), cr.clamped};
    out.per_box.push_back(bp);
    items.push_back({boxes[i], i});
  }
  const auto grouping = group_columns(std::move(items), factor);
  for (const auto& col : grouping.columns) {
    std::vector<std::size_t> cats;
    for (const auto& item : col)
      if (out.per_box[item.payload].recognized) cats.push_back(out.per_box[item.payload].category);
    if (cats.empty()) continue;
    out.text.insert(out.text.end(), cats.begin(), cats.end());
    out.columns.push_back(std::move(cats));
  }
  return out;
}

}  // namespace laddermoe
