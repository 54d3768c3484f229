#pragma once

// Builds object/part correspondences from part-only, object-only, semantic
// or class-agnostic sources.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hparse/dataset.hpp"
#include "hparse/geometry.hpp"

namespace hparse {

class UnifyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Overlap threshold, strictly inside (0, 1).
class HierarchyThreshold {
 public:
  explicit HierarchyThreshold(double t = 0.5) : t_(t) {
    if (!(t > 0.0 && t < 1.0)) throw UnifyError("HierarchyThreshold must lie in (0, 1)");
  }
  [[nodiscard]] double value() const { return t_; }

 private:
  double t_;
};

struct MergedObject {
  AnnotationRecord object;
  std::vector<AnnotationRecord> parts;  // inputs with parent_annotation_id set
};

/// Object geometry from its parts: enclosing box and pixelwise mask union.
inline MergedObject merge_parts_to_object(std::span<const AnnotationRecord> parts, Id object_id,
                                          Id object_category_id) {
  if (parts.empty()) throw UnifyError("merge_parts_to_object: empty part list");
  std::vector<Box> boxes;
  std::vector<Mask> masks;
  for (const auto& p : parts) {
    if (p.level != Level::Part) throw UnifyError("merge_parts_to_object: annotation " + std::to_string(p.id) + " is not part-level");
    if (p.image_id != parts.front().image_id) throw UnifyError("merge_parts_to_object: parts span multiple images");
    boxes.push_back(p.box);
    if (p.mask) masks.push_back(*p.mask);
  }
  MergedObject out;
  out.object.id = object_id;
  out.object.image_id = parts.front().image_id;
  out.object.category_id = object_category_id;
  out.object.level = Level::Object;
  out.object.box = enclosing_box(boxes);
  if (!masks.empty()) out.object.mask = mask_union(masks);
  out.parts.assign(parts.begin(), parts.end());
  for (auto& p : out.parts) p.parent_annotation_id = object_id;
  return out;
}

namespace detail {

inline double annotation_overlap(const AnnotationRecord& part, const AnnotationRecord& object) {
  if (part.mask && object.mask) return overlap_ratio(*part.mask, *object.mask);
  if (object.mask) {
    return overlap_ratio(rasterize_box(part.box, object.mask->height(), object.mask->width()), *object.mask);
  }
  if (part.mask) {
    return overlap_ratio(*part.mask, rasterize_box(object.box, part.mask->height(), part.mask->width()));
  }
  const double larger = std::max(part.box.area(), object.box.area());
  return larger > 0.0 ? intersection_area(part.box, object.box) / larger : 0.0;
}

}  // namespace detail

/// Links each part to the object of its mapped category with the greatest
/// overlap ratio (first object wins ties). Parts with no overlapping
/// candidate keep no parent.
inline std::vector<AnnotationRecord> attach_object_annotations(std::span<const AnnotationRecord> parts,
                                                               std::span<const AnnotationRecord> objects,
                                                               const std::map<Id, Id>& category_map) {
  std::vector<AnnotationRecord> out;
  out.reserve(parts.size());
  for (const auto& part : parts) {
    auto it = category_map.find(part.category_id);
    if (it == category_map.end())
      throw UnifyError("attach_object_annotations: no object category mapped for part category " +
                       std::to_string(part.category_id));
    AnnotationRecord linked = part;
    linked.parent_annotation_id.reset();
    double best = 0.0;
    for (const auto& obj : objects) {
      if (obj.image_id != part.image_id || obj.category_id != it->second) continue;
      const double r = detail::annotation_overlap(part, obj);
      if (r > best) {
        best = r;
        linked.parent_annotation_id = obj.id;
      }
    }
    out.push_back(std::move(linked));
  }
  return out;
}

struct HierarchyNode {
  Level level = Level::Object;
  std::optional<std::size_t> parent;  // index into the input masks
};

/// Class-agnostic hierarchy from pairwise overlap ratios. A mask becomes a
/// part when some strictly larger mask (area, then lower index) overlaps it with
/// ratio above `t`; its parent is the best such container (greatest ratio, then
/// larger area, then lower index), followed up to its object-level root so the
/// output has exactly two levels.
inline std::vector<HierarchyNode> build_overlap_hierarchy(std::span<const Mask> masks, HierarchyThreshold t) {
  const std::size_t n = masks.size();
  std::vector<std::int64_t> area(n);
  for (std::size_t i = 0; i < n; ++i) area[i] = masks[i].area();
  auto larger = [&](std::size_t a, std::size_t b) {
    return area[a] > area[b] || (area[a] == area[b] && a < b);
  };

  std::vector<std::optional<std::size_t>> direct(n);
  std::vector<double> best_r(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !larger(j, i)) continue;
      const double r = overlap_ratio(masks[i], masks[j]);
      if (!(r > t.value())) continue;
      if (!direct[i] || r > best_r[i] || (r == best_r[i] && larger(j, *direct[i]))) {
        direct[i] = j;
        best_r[i] = r;
      }
    }
  }

  std::vector<HierarchyNode> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!direct[i]) continue;
    std::size_t root = *direct[i];
    while (direct[root]) root = *direct[root];  // terminates: parents are strictly larger
    out[i] = {Level::Part, root};
  }
  return out;
}

struct SemanticInstance {
  int category = 0;
  Mask mask;
  Box box;
};

/// Splits each category plane into instances: erode once, label 4-connected
/// components, then give every category pixel to the nearest component
/// centroid (lower label on ties). Planes that erode to nothing fall back to
/// the components of the raw plane.
inline std::vector<SemanticInstance> semantic_to_instances(const LabelMap& map) {
  if (map.labels.size() != static_cast<std::size_t>(map.height) * map.width)
    throw UnifyError("semantic_to_instances: label grid size mismatch");
  std::vector<int> categories;
  for (int v : map.labels) {
    if (v < 0) throw UnifyError("semantic_to_instances: negative category label");
    if (v > 0) categories.push_back(v);
  }
  std::sort(categories.begin(), categories.end());
  categories.erase(std::unique(categories.begin(), categories.end()), categories.end());

  std::vector<SemanticInstance> out;
  for (int cat : categories) {
    Mask plane(map.height, map.width);
    for (int y = 0; y < map.height; ++y)
      for (int x = 0; x < map.width; ++x)
        if (map.at(y, x) == cat) plane.set(y, x);

    Components seeds = connected_components(erode(plane));
    if (seeds.count == 0) seeds = connected_components(plane);

    std::vector<double> cy(seeds.count, 0.0), cx(seeds.count, 0.0), n(seeds.count, 0.0);
    for (int y = 0; y < map.height; ++y) {
      for (int x = 0; x < map.width; ++x) {
        const int l = seeds.at(y, x);
        if (l == 0) continue;
        cy[l - 1] += y;
        cx[l - 1] += x;
        n[l - 1] += 1.0;
      }
    }
    for (int k = 0; k < seeds.count; ++k) {
      cy[k] /= n[k];
      cx[k] /= n[k];
    }

    std::vector<Mask> parts(seeds.count, Mask(map.height, map.width));
    for (int y = 0; y < map.height; ++y) {
      for (int x = 0; x < map.width; ++x) {
        if (!plane.at(y, x)) continue;
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < seeds.count; ++k) {
          const double d = (y - cy[k]) * (y - cy[k]) + (x - cx[k]) * (x - cx[k]);
          if (d < best_d) {
            best_d = d;
            best = k;
          }
        }
        parts[best].set(y, x);
      }
    }
    for (auto& m : parts) {
      if (m.area() == 0) continue;
      Box b = tight_box(m);
      out.push_back({cat, std::move(m), b});
    }
  }
  return out;
}

}  // namespace hparse
