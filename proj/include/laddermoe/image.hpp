// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "laddermoe/errors.hpp"

namespace laddermoe {

/// Grayscale raster, row-major, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& operator()(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double operator()(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool empty() const { return pixels.empty(); }
  bool operator==(const Image&) const = default;

  void clamp01() {
    for (double& p : pixels) p = std::clamp(p, 0.0, 1.0);
  }
};

/// Axis-aligned box ((x1,y1),(x2,y2)) in pixels; x2/y2 exclusive when cropping.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  bool valid() const { return x2 > x1 && y2 > y1; }
  double area() const { return valid() ? width() * height() : 0.0; }
  bool operator==(const BBox&) const = default;
};

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Bilinear resize (pixel-center aligned).
inline Image resize(const Image& src, std::size_t h, std::size_t w) {
  if (src.empty()) throw DimensionError("resize of an empty image");
  if (src.height == h && src.width == w) return src;
  Image dst(h, w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = src(y0, x0) * (1 - tx) + src(y0, x1) * tx;
      const double bot = src(y1, x0) * (1 - tx) + src(y1, x1) * tx;
      dst(y, x) = top * (1 - ty) + bot * ty;
    }
  }
  return dst;
}

struct CropResult {
  Image image;
  bool clamped = false;  // the box extended past the image and was clipped
};

/// Crops integer-rounded `box` from `src`, clipping to the image bounds.
inline CropResult crop(const Image& src, const BBox& box) {
  const auto lo = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(std::floor(v), 0.0, static_cast<double>(hi)));
  };
  const auto hi = [](double v, std::size_t lim) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v), 0.0, static_cast<double>(lim)));
  };
  CropResult r;
  std::size_t x1 = lo(box.x1, src.width), y1 = lo(box.y1, src.height);
  std::size_t x2 = hi(box.x2, src.width), y2 = hi(box.y2, src.height);
  r.clamped = box.x1 < 0 || box.y1 < 0 || box.x2 > static_cast<double>(src.width) ||
              box.y2 > static_cast<double>(src.height);
  if (x2 <= x1) {
    x2 = std::min(x1 + 1, src.width);
    x1 = x2 - 1;
    r.clamped = true;
  }
  if (y2 <= y1) {
    y2 = std::min(y1 + 1, src.height);
    y1 = y2 - 1;
    r.clamped = true;
  }
  r.image = Image(y2 - y1, x2 - x1);
  for (std::size_t y = y1; y < y2; ++y)
    for (std::size_t x = x1; x < x2; ++x) r.image(y - y1, x - x1) = src(y, x);
  return r;
}

inline std::vector<std::uint8_t> to_u8(const Image& img) {
  std::vector<std::uint8_t> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

inline Image from_u8(std::size_t h, std::size_t w, const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() != h * w) throw DimensionError("from_u8: byte count does not match dimensions");
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<double>(bytes[i]) / 255.0;
  return img;
}

/// Quantizes to 8 bits and back, matching what a PNG round trip yields.
inline Image quantize8(const Image& img) { return from_u8(img.height, img.width, to_u8(img)); }

}  // namespace laddermoe
