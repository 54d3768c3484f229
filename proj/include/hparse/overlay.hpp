#pragma once

// Figure-style overlays: object outlines, translucent part fills and
// category-id labels drawn with a tiny bitmap font.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "hparse/dataset.hpp"
#include "hparse/metrics.hpp"
#include "hparse/raster.hpp"

namespace hparse {

/// Deterministic, saturated color for a category id.
inline Rgb palette_color(Id category_id) {
  std::uint64_t h = static_cast<std::uint64_t>(category_id) * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull;
  h ^= h >> 31;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= h >> 29;
  Rgb c{};
  for (int i = 0; i < 3; ++i) c[i] = static_cast<std::uint8_t>(64 + ((h >> (8 * i)) & 0xFF) % 192);
  return c;
}

namespace detail {

// 3x5 glyphs for 0-9, one row per 3-bit nibble, top row first
inline constexpr std::array<std::array<std::uint8_t, 5>, 10> kDigits = {{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
}};

inline void put(Image& img, int y, int x, const Rgb& c) {
  if (y >= 0 && x >= 0 && y < img.height && x < img.width) img.set(y, x, c);
}

inline void blend(Image& img, int y, int x, const Rgb& c, int alpha256) {
  Rgb p = img.at(y, x);
  for (int i = 0; i < 3; ++i) p[i] = static_cast<std::uint8_t>((p[i] * (256 - alpha256) + c[i] * alpha256) >> 8);
  img.set(y, x, p);
}

inline void draw_label(Image& img, int y, int x, Id value, const Rgb& c) {
  const std::string s = std::to_string(value);
  // dark backing plate keeps digits legible on any fill
  for (int yy = y - 1; yy < y + 6; ++yy)
    for (int xx = x - 1; xx < x + 4 * static_cast<int>(s.size()); ++xx) put(img, yy, xx, {0, 0, 0});
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] < '0' || s[k] > '9') continue;
    const auto& g = kDigits[static_cast<std::size_t>(s[k] - '0')];
    for (int r = 0; r < 5; ++r)
      for (int col = 0; col < 3; ++col)
        if (g[r] & (4 >> col)) put(img, y + r, x + 4 * static_cast<int>(k) + col, c);
  }
}

inline void check_geometry(const Image& img, const Detection& d) {
  if (d.box.x1 < 0 || d.box.y1 < 0 || d.box.x2 > img.width || d.box.y2 > img.height || !d.box.valid())
    throw RasterError("overlay: box of category " + std::to_string(d.category_id) + " lies outside the image");
  if (d.mask && (d.mask->height() != img.height || d.mask->width() != img.width))
    throw RasterError("overlay: mask size differs from the image");
}

}  // namespace detail

/// Parts first (alpha fill), then object outlines: mask boundary when a mask
/// is present, else the box. Labels sit at each object's top-left corner.
inline Image draw_overlay(const Image& base, std::span<const Detection> objects, std::span<const Detection> parts) {
  Image img = base;
  for (const auto& d : objects) detail::check_geometry(img, d);
  for (const auto& d : parts) detail::check_geometry(img, d);
  for (const auto& d : parts) {
    const Rgb c = palette_color(d.category_id);
    if (d.mask) {
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          if (d.mask->at(y, x)) detail::blend(img, y, x, c, 115);
    } else {
      for (int y = static_cast<int>(d.box.y1); y < static_cast<int>(std::ceil(d.box.y2)); ++y)
        for (int x = static_cast<int>(d.box.x1); x < static_cast<int>(std::ceil(d.box.x2)); ++x)
          detail::blend(img, y, x, c, 115);
    }
  }
  for (const auto& d : objects) {
    const Rgb c = palette_color(d.category_id);
    if (d.mask) {
      const Mask& m = *d.mask;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          if (!m.at(y, x)) continue;
          const bool edge = y == 0 || x == 0 || y + 1 == img.height || x + 1 == img.width || !m.at(y - 1, x) ||
                            !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
          if (edge) img.set(y, x, c);
        }
    } else {
      const int x1 = static_cast<int>(d.box.x1), y1 = static_cast<int>(d.box.y1);
      const int x2 = std::max(x1, static_cast<int>(std::ceil(d.box.x2)) - 1), y2 = std::max(y1, static_cast<int>(std::ceil(d.box.y2)) - 1);
      for (int x = x1; x <= x2; ++x) {
        detail::put(img, y1, x, c);
        detail::put(img, y2, x, c);
      }
      for (int y = y1; y <= y2; ++y) {
        detail::put(img, y, x1, c);
        detail::put(img, y, x2, c);
      }
    }
    detail::draw_label(img, static_cast<int>(d.box.y1) + 1, static_cast<int>(d.box.x1) + 1, d.category_id, c);
  }
  return img;
}

inline Detection as_detection(const AnnotationRecord& a) { return {a.image_id, a.category_id, 1.0, a.box, a.mask}; }

/// Draws and writes a PPM; throws RasterError when the path cannot be written.
inline void render_overlays(const Image& base, std::span<const Detection> objects, std::span<const Detection> parts,
                            const std::filesystem::path& out) {
  write_ppm(draw_overlay(base, objects, parts), out);
}

}  // namespace hparse
