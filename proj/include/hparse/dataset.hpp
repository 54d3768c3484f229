#pragma once

// Two-level (object/part) annotation schema stored as extended COCO json.
//
// File layout:
//   images:      [{id, width, height, file_name}]
//   categories:  [{id, name, level: "object"|"part",
//                  parent_object_category_id (parts only), split: "base"|"novel"}]
//   annotations: [{id, image_id, category_id, bbox: [x, y, w, h], area, iscrowd,
//                  level, parent_annotation_id (optional),
//                  segmentation: {size: [h, w], counts: [...]} (optional)}]

#include <cmath>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "hparse/geometry.hpp"

namespace hparse {

using Id = std::int64_t;

enum class Level { Object, Part };
enum class Split { Base, Novel };

inline const char* to_string(Level l) { return l == Level::Object ? "object" : "part"; }
inline const char* to_string(Split s) { return s == Split::Base ? "base" : "novel"; }

enum class DatasetErrorKind { MissingFile, Malformed, DanglingReference, InvalidRecord, Unwritable };

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

struct ImageRecord {
  Id id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct CategoryRecord {
  Id id = 0;
  std::string name;
  Level level = Level::Object;
  std::optional<Id> parent_object_category_id;
  Split split = Split::Base;

  friend bool operator==(const CategoryRecord&, const CategoryRecord&) = default;
};

struct AnnotationRecord {
  Id id = 0;
  Id image_id = 0;
  Id category_id = 0;
  Box box;
  std::optional<Mask> mask;
  Level level = Level::Object;
  std::optional<Id> parent_annotation_id;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct HierarchicalDataset {
  std::vector<ImageRecord> images;
  std::vector<CategoryRecord> categories;
  std::vector<AnnotationRecord> annotations;

  friend bool operator==(const HierarchicalDataset&, const HierarchicalDataset&) = default;

  [[nodiscard]] const CategoryRecord* find_category(Id id) const {
    for (const auto& c : categories)
      if (c.id == id) return &c;
    return nullptr;
  }
  [[nodiscard]] const CategoryRecord* find_category(const std::string& name) const {
    for (const auto& c : categories)
      if (c.name == name) return &c;
    return nullptr;
  }
  [[nodiscard]] const ImageRecord* find_image(Id id) const {
    for (const auto& im : images)
      if (im.id == id) return &im;
    return nullptr;
  }
  [[nodiscard]] std::vector<const CategoryRecord*> categories_at(Level level) const {
    std::vector<const CategoryRecord*> out;
    for (const auto& c : categories)
      if (c.level == level) out.push_back(&c);
    return out;
  }
  [[nodiscard]] std::vector<const AnnotationRecord*> annotations_of(Id image_id) const {
    std::vector<const AnnotationRecord*> out;
    for (const auto& a : annotations)
      if (a.image_id == image_id) out.push_back(&a);
    return out;
  }
};

/// Checks every schema invariant and clamps boxes into image bounds.
/// Throws DatasetError naming the offending record.
inline void validate(HierarchicalDataset& d) {
  auto fail = [](DatasetErrorKind k, const std::string& msg) { throw DatasetError(k, msg); };

  std::unordered_map<Id, const ImageRecord*> images;
  for (const auto& im : d.images) {
    if (!images.emplace(im.id, &im).second)
      fail(DatasetErrorKind::InvalidRecord, "duplicate image id " + std::to_string(im.id));
    if (im.width <= 0 || im.height <= 0)
      fail(DatasetErrorKind::InvalidRecord, "image " + std::to_string(im.id) + " has non-positive size");
  }

  std::unordered_map<Id, const CategoryRecord*> cats;
  for (const auto& c : d.categories) {
    if (!cats.emplace(c.id, &c).second)
      fail(DatasetErrorKind::InvalidRecord, "duplicate category id " + std::to_string(c.id));
  }
  for (const auto& c : d.categories) {
    const std::string who = "category '" + c.name + "' (id " + std::to_string(c.id) + ")";
    if (c.level == Level::Part) {
      if (!c.parent_object_category_id)
        fail(DatasetErrorKind::InvalidRecord, who + " is a part category without parent_object_category_id");
      auto it = cats.find(*c.parent_object_category_id);
      if (it == cats.end())
        fail(DatasetErrorKind::DanglingReference, who + " references missing object category " +
                                                      std::to_string(*c.parent_object_category_id));
      if (it->second->level != Level::Object)
        fail(DatasetErrorKind::InvalidRecord, who + " has a parent that is not an object category");
    } else if (c.parent_object_category_id) {
      fail(DatasetErrorKind::InvalidRecord, who + " is an object category with a parent");
    }
  }

  std::unordered_map<Id, const AnnotationRecord*> anns;
  for (const auto& a : d.annotations) {
    if (!anns.emplace(a.id, &a).second)
      fail(DatasetErrorKind::InvalidRecord, "duplicate annotation id " + std::to_string(a.id));
  }
  for (auto& a : d.annotations) {
    const std::string who = "annotation " + std::to_string(a.id);
    auto im = images.find(a.image_id);
    if (im == images.end())
      fail(DatasetErrorKind::DanglingReference, who + " references missing image " + std::to_string(a.image_id));
    auto cat = cats.find(a.category_id);
    if (cat == cats.end())
      fail(DatasetErrorKind::DanglingReference, who + " references missing category " + std::to_string(a.category_id));
    if (cat->second->level != a.level)
      fail(DatasetErrorKind::InvalidRecord, who + " level does not match its category level");
    if (!a.box.valid()) fail(DatasetErrorKind::InvalidRecord, who + " has an inverted box");
    a.box = clamp_box(a.box, im->second->width, im->second->height);
    if (a.mask && (a.mask->height() != im->second->height || a.mask->width() != im->second->width))
      fail(DatasetErrorKind::InvalidRecord, who + " mask size differs from its image size");
    if (a.parent_annotation_id) {
      if (a.level != Level::Part)
        fail(DatasetErrorKind::InvalidRecord, who + " is object-level but has a parent annotation");
      auto p = anns.find(*a.parent_annotation_id);
      if (p == anns.end())
        fail(DatasetErrorKind::DanglingReference, who + " references missing parent annotation " +
                                                      std::to_string(*a.parent_annotation_id));
      if (p->second->level != Level::Object || p->second->image_id != a.image_id)
        fail(DatasetErrorKind::InvalidRecord, who + " parent is not an object annotation on the same image");
    }
  }
}

namespace detail {

inline Level parse_level(const std::string& s) {
  if (s == "object") return Level::Object;
  if (s == "part") return Level::Part;
  throw DatasetError(DatasetErrorKind::Malformed, "unknown level '" + s + "'");
}

inline Split parse_split(const std::string& s) {
  if (s == "base") return Split::Base;
  if (s == "novel") return Split::Novel;
  throw DatasetError(DatasetErrorKind::Malformed, "unknown split '" + s + "'");
}

}  // namespace detail

/// Extent `w` with start + w == end exactly in double arithmetic, so that
/// xywh storage reproduces the xyxy box bit-for-bit.
inline double exact_extent(double start, double end) {
  double w = end - start;
  for (int i = 0; i < 8 && start + w != end; ++i) {
    w = std::nextafter(w, start + w < end ? std::numeric_limits<double>::infinity()
                                          : -std::numeric_limits<double>::infinity());
  }
  return w;
}

inline nlohmann::json rle_to_json(const Rle& r) {
  return {{"size", {r.height, r.width}}, {"counts", r.counts}};
}

inline Rle rle_from_json(const nlohmann::json& j) {
  Rle r;
  const auto& size = j.at("size");
  r.height = size.at(0).get<int>();
  r.width = size.at(1).get<int>();
  r.counts = j.at("counts").get<std::vector<std::uint32_t>>();
  return r;
}

inline nlohmann::json to_json(const HierarchicalDataset& d) {
  using nlohmann::json;
  json images = json::array(), categories = json::array(), annotations = json::array();
  for (const auto& im : d.images) {
    images.push_back({{"id", im.id}, {"width", im.width}, {"height", im.height}, {"file_name", im.file_name}});
  }
  for (const auto& c : d.categories) {
    json j = {{"id", c.id}, {"name", c.name}, {"level", to_string(c.level)}, {"split", to_string(c.split)}};
    if (c.parent_object_category_id) j["parent_object_category_id"] = *c.parent_object_category_id;
    categories.push_back(std::move(j));
  }
  for (const auto& a : d.annotations) {
    json j = {{"id", a.id},
              {"image_id", a.image_id},
              {"category_id", a.category_id},
              {"bbox", {a.box.x1, a.box.y1, exact_extent(a.box.x1, a.box.x2), exact_extent(a.box.y1, a.box.y2)}},
              {"area", a.mask ? static_cast<double>(a.mask->area()) : a.box.area()},
              {"iscrowd", 0},
              {"level", to_string(a.level)}};
    if (a.parent_annotation_id) j["parent_annotation_id"] = *a.parent_annotation_id;
    if (a.mask) j["segmentation"] = rle_to_json(rle_encode(*a.mask));
    annotations.push_back(std::move(j));
  }
  return {{"images", images}, {"categories", categories}, {"annotations", annotations}};
}

/// Parses without validating; throws DatasetError(Malformed) on structure errors.
inline HierarchicalDataset from_json(const nlohmann::json& j) {
  HierarchicalDataset d;
  try {
    for (const auto& im : j.at("images")) {
      d.images.push_back({im.at("id").get<Id>(), im.at("width").get<int>(), im.at("height").get<int>(),
                          im.value("file_name", std::string{})});
    }
    for (const auto& c : j.at("categories")) {
      CategoryRecord r;
      r.id = c.at("id").get<Id>();
      r.name = c.at("name").get<std::string>();
      r.level = detail::parse_level(c.value("level", std::string("object")));
      if (c.contains("parent_object_category_id") && !c["parent_object_category_id"].is_null())
        r.parent_object_category_id = c["parent_object_category_id"].get<Id>();
      r.split = detail::parse_split(c.value("split", std::string("base")));
      d.categories.push_back(std::move(r));
    }
    for (const auto& a : j.at("annotations")) {
      AnnotationRecord r;
      r.id = a.at("id").get<Id>();
      r.image_id = a.at("image_id").get<Id>();
      r.category_id = a.at("category_id").get<Id>();
      const auto& bb = a.at("bbox");
      if (!bb.is_array() || bb.size() != 4)
        throw DatasetError(DatasetErrorKind::Malformed, "annotation " + std::to_string(r.id) + ": bbox must have 4 numbers");
      const double x = bb[0].get<double>(), y = bb[1].get<double>();
      r.box = {x, y, x + bb[2].get<double>(), y + bb[3].get<double>()};
      r.level = detail::parse_level(a.value("level", std::string("object")));
      if (a.contains("parent_annotation_id") && !a["parent_annotation_id"].is_null())
        r.parent_annotation_id = a["parent_annotation_id"].get<Id>();
      if (a.contains("segmentation") && !a["segmentation"].is_null())
        r.mask = rle_decode(rle_from_json(a["segmentation"]));
      d.annotations.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(DatasetErrorKind::Malformed, std::string("malformed dataset: ") + e.what());
  } catch (const GeometryError& e) {
    throw DatasetError(DatasetErrorKind::Malformed, std::string("malformed mask: ") + e.what());
  }
  return d;
}

inline HierarchicalDataset load_dataset(const std::filesystem::path& path, bool check = true) {
  std::ifstream in(path);
  if (!in) throw DatasetError(DatasetErrorKind::MissingFile, "cannot open dataset file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError(DatasetErrorKind::Malformed, path.string() + ": " + e.what());
  }
  HierarchicalDataset d = from_json(j);
  if (check) validate(d);
  return d;
}

inline void save_dataset(const HierarchicalDataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(DatasetErrorKind::Unwritable, "cannot write dataset file " + path.string());
  out << to_json(d).dump() << '\n';
  if (!out) throw DatasetError(DatasetErrorKind::Unwritable, "failed writing " + path.string());
}

/// Read-only subset of a dataset's annotations; shares storage with its base.
class DatasetView {
 public:
  DatasetView(std::shared_ptr<const HierarchicalDataset> base, std::vector<std::size_t> indices)
      : base_(std::move(base)), indices_(std::move(indices)) {}

  [[nodiscard]] const HierarchicalDataset& base() const { return *base_; }
  [[nodiscard]] const std::vector<ImageRecord>& images() const { return base_->images; }
  [[nodiscard]] const std::vector<CategoryRecord>& categories() const { return base_->categories; }
  [[nodiscard]] std::size_t size() const { return indices_.size(); }
  [[nodiscard]] const AnnotationRecord& annotation(std::size_t i) const { return base_->annotations[indices_[i]]; }
  [[nodiscard]] const std::vector<std::size_t>& indices() const { return indices_; }

  [[nodiscard]] HierarchicalDataset materialize() const {
    HierarchicalDataset d{base_->images, base_->categories, {}};
    d.annotations.reserve(indices_.size());
    for (std::size_t i : indices_) d.annotations.push_back(base_->annotations[i]);
    return d;
  }

 private:
  std::shared_ptr<const HierarchicalDataset> base_;
  std::vector<std::size_t> indices_;
};

struct BaseNovelSplit {
  DatasetView train;
  DatasetView eval;
  std::set<Id> novel_category_ids;
};

/// Train view drops annotations of the named categories; eval view keeps all.
inline BaseNovelSplit split_base_novel(std::shared_ptr<const HierarchicalDataset> d,
                                       const std::set<std::string>& novel_names) {
  std::set<Id> novel;
  std::vector<std::string> unknown;
  for (const auto& name : novel_names) {
    if (const auto* c = d->find_category(name)) {
      novel.insert(c->id);
    } else {
      unknown.push_back(name);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "split_base_novel: unknown category names:";
    for (const auto& n : unknown) msg += " '" + n + "'";
    throw DatasetError(DatasetErrorKind::InvalidRecord, msg);
  }
  std::vector<std::size_t> train, all;
  for (std::size_t i = 0; i < d->annotations.size(); ++i) {
    all.push_back(i);
    if (!novel.contains(d->annotations[i].category_id)) train.push_back(i);
  }
  return {DatasetView(d, std::move(train)), DatasetView(d, std::move(all)), std::move(novel)};
}

/// Copy of `d` with category split labels set from `novel_ids`.
inline HierarchicalDataset with_split_labels(HierarchicalDataset d, const std::set<Id>& novel_ids) {
  for (auto& c : d.categories) c.split = novel_ids.contains(c.id) ? Split::Novel : Split::Base;
  return d;
}

}  // namespace hparse
