#pragma once

// Boxes, binary masks, overlap measures, morphology and the uncompressed
// COCO run-length codec. Everything here is a pure function over values.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hparse {

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Axis-aligned box in continuous pixel coordinates (xyxy, origin top-left).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  [[nodiscard]] constexpr double width() const { return x2 - x1; }
  [[nodiscard]] constexpr double height() const { return y2 - y1; }
  [[nodiscard]] constexpr double area() const {
    return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
  }
  [[nodiscard]] constexpr bool valid() const { return x1 <= x2 && y1 <= y2; }
  [[nodiscard]] constexpr bool contains(const Box& o, double eps = 0.0) const {
    return x1 <= o.x1 + eps && y1 <= o.y1 + eps && o.x2 <= x2 + eps &&
           o.y2 <= y2 + eps;
  }

  friend constexpr bool operator==(const Box&, const Box&) = default;
};

inline Box clamp_box(const Box& b, double width, double height) {
  Box r{std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
        std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
  r.x2 = std::max(r.x1, r.x2);
  r.y2 = std::max(r.y1, r.y2);
  return r;
}

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

inline double box_iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// IoU minus the fraction of the minimal enclosing box not covered by the union.
inline double generalized_iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const Box hull{std::min(a.x1, b.x1), std::min(a.y1, b.y1),
                 std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
  const double c = hull.area();
  if (c <= 0.0) return uni > 0.0 ? inter / uni : 0.0;
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  return iou - (c - uni) / c;
}

inline Box enclosing_box(std::span<const Box> boxes) {
  if (boxes.empty()) throw GeometryError("enclosing_box: empty box list");
  Box r = boxes.front();
  for (const Box& b : boxes.subspan(1)) {
    r.x1 = std::min(r.x1, b.x1);
    r.y1 = std::min(r.y1, b.y1);
    r.x2 = std::max(r.x2, b.x2);
    r.y2 = std::max(r.y2, b.y2);
  }
  return r;
}

/// Uncompressed COCO run-length encoding: column-major runs, first run counts
/// zeros (possibly 0).
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const Rle&, const Rle&) = default;
};

/// Dense binary mask, row-major, one byte per pixel (0 or 1).
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width)
      : height_(height), width_(width),
        bits_(static_cast<std::size_t>(checked_size(height, width)), 0) {}
  Mask(int height, int width, std::vector<std::uint8_t> bits)
      : height_(height), width_(width), bits_(std::move(bits)) {
    if (bits_.size() != static_cast<std::size_t>(checked_size(height, width))) {
      throw GeometryError("Mask: payload size does not match dimensions");
    }
    for (auto& v : bits_) v = v ? 1 : 0;
  }

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] bool empty_grid() const { return bits_.empty(); }
  [[nodiscard]] bool at(int y, int x) const {
    return bits_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }
  void set(int y, int x, bool v = true) {
    bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  [[nodiscard]] std::span<const std::uint8_t> bits() const { return bits_; }

  [[nodiscard]] std::int64_t area() const {
    return std::accumulate(bits_.begin(), bits_.end(), std::int64_t{0});
  }
  [[nodiscard]] bool same_shape(const Mask& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  static std::int64_t checked_size(int h, int w) {
    if (h < 0 || w < 0) throw GeometryError("Mask: negative dimensions");
    return static_cast<std::int64_t>(h) * w;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline Rle rle_encode(const Mask& m) {
  Rle r{m.height(), m.width(), {}};
  std::uint32_t run = 0;
  bool current = false;
  for (int x = 0; x < m.width(); ++x) {
    for (int y = 0; y < m.height(); ++y) {
      if (m.at(y, x) != current) {
        r.counts.push_back(run);
        run = 0;
        current = !current;
      }
      ++run;
    }
  }
  r.counts.push_back(run);
  return r;
}

inline Mask rle_decode(const Rle& r) {
  Mask m(r.height, r.width);
  const std::int64_t total = static_cast<std::int64_t>(r.height) * r.width;
  std::int64_t pos = 0;
  bool value = false;
  for (std::uint32_t c : r.counts) {
    if (pos + c > total) throw GeometryError("rle_decode: runs exceed mask size");
    if (value) {
      for (std::int64_t i = pos; i < pos + c; ++i) {
        m.set(static_cast<int>(i % r.height), static_cast<int>(i / r.height));
      }
    }
    pos += c;
    value = !value;
  }
  if (pos != total) throw GeometryError("rle_decode: runs do not cover mask");
  return m;
}

inline void require_same_shape(const Mask& a, const Mask& b, const char* op) {
  if (!a.same_shape(b)) {
    throw GeometryError(std::string(op) + ": mask dimensions differ (" +
                        std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                        " vs " + std::to_string(b.height()) + "x" +
                        std::to_string(b.width()) + ")");
  }
}

inline std::int64_t intersection_area(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "intersection_area");
  std::int64_t n = 0;
  const auto pa = a.bits();
  const auto pb = b.bits();
  for (std::size_t i = 0; i < pa.size(); ++i) n += pa[i] & pb[i];
  return n;
}

inline double mask_iou(const Mask& a, const Mask& b) {
  const std::int64_t inter = intersection_area(a, b);
  const std::int64_t uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// |a ∩ b| / max(|a|, |b|); 0 when both masks are empty.
inline double overlap_ratio(const Mask& a, const Mask& b) {
  const std::int64_t inter = intersection_area(a, b);
  const std::int64_t larger = std::max(a.area(), b.area());
  return larger > 0 ? static_cast<double>(inter) / static_cast<double>(larger) : 0.0;
}

inline Mask mask_union(std::span<const Mask> masks) {
  if (masks.empty()) throw GeometryError("mask_union: empty mask list");
  std::vector<std::uint8_t> out(masks.front().bits().begin(), masks.front().bits().end());
  for (const Mask& m : masks.subspan(1)) {
    require_same_shape(masks.front(), m, "mask_union");
    const auto p = m.bits();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] |= p[i];
  }
  return Mask(masks.front().height(), masks.front().width(), std::move(out));
}

/// Binary erosion with a 3x3 square; pixels outside the grid count as unset.
inline Mask erode(const Mask& m) {
  Mask out(m.height(), m.width());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(y, x)) continue;
      bool keep = y > 0 && x > 0 && y + 1 < m.height() && x + 1 < m.width();
      for (int dy = -1; keep && dy <= 1; ++dy) {
        for (int dx = -1; keep && dx <= 1; ++dx) keep = m.at(y + dy, x + dx);
      }
      if (keep) out.set(y, x);
    }
  }
  return out;
}

struct Components {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // row-major; 0 = unset, 1..count otherwise
  int count = 0;

  [[nodiscard]] int at(int y, int x) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] Mask component(int label) const {
    Mask m(height, width);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (at(y, x) == label) m.set(y, x);
    return m;
  }
};

/// 4-connected labeling; labels are assigned in row-major order of each
/// component's first pixel.
inline Components connected_components(const Mask& m) {
  Components c{m.height(), m.width(),
               std::vector<int>(static_cast<std::size_t>(m.height()) * m.width(), 0), 0};
  std::deque<std::pair<int, int>> frontier;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(y, x) || c.at(y, x) != 0) continue;
      const int label = ++c.count;
      c.labels[static_cast<std::size_t>(y) * m.width() + x] = label;
      frontier.emplace_back(y, x);
      while (!frontier.empty()) {
        auto [cy, cx] = frontier.front();
        frontier.pop_front();
        constexpr int dy[] = {-1, 1, 0, 0};
        constexpr int dx[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = cy + dy[k];
          const int nx = cx + dx[k];
          if (ny < 0 || nx < 0 || ny >= m.height() || nx >= m.width()) continue;
          auto& l = c.labels[static_cast<std::size_t>(ny) * m.width() + nx];
          if (m.at(ny, nx) && l == 0) {
            l = label;
            frontier.emplace_back(ny, nx);
          }
        }
      }
    }
  }
  return c;
}

/// Per-pixel category grid; 0 is background.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // row-major

  [[nodiscard]] int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// Tight box around set pixels, pixel edges inclusive: a single pixel (x, y)
/// yields (x, y, x + 1, y + 1). Empty masks yield a zero box.
inline Box tight_box(const Mask& m) {
  int x1 = m.width(), y1 = m.height(), x2 = -1, y2 = -1;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(y, x)) continue;
      x1 = std::min(x1, x);
      y1 = std::min(y1, y);
      x2 = std::max(x2, x);
      y2 = std::max(y2, y);
    }
  }
  if (x2 < 0) return {};
  return {double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
}

/// Sets every pixel whose center lies inside the box.
inline Mask rasterize_box(const Box& b, int height, int width) {
  Mask m(height, width);
  for (int y = 0; y < height; ++y) {
    const double cy = y + 0.5;
    if (cy < b.y1 || cy >= b.y2) continue;
    for (int x = 0; x < width; ++x) {
      const double cx = x + 0.5;
      if (cx >= b.x1 && cx < b.x2) m.set(y, x);
    }
  }
  return m;
}

}  // namespace hparse
