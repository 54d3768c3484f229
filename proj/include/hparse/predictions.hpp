#pragma once

// Prediction sets on disk and their evaluation against a hierarchical dataset.
//
// predictions JSON: {"objects": [det...], "parts": [det...]}
//   det = {image_id, category_id, score, bbox: [x, y, w, h], segmentation?: COCO RLE}

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "hparse/dataset.hpp"
#include "hparse/metrics.hpp"

namespace hparse {

struct PredictionSet {
  std::vector<Detection> objects;
  std::vector<Detection> parts;
};

inline nlohmann::json to_json(const Detection& d) {
  nlohmann::json j = {{"image_id", d.image_id},
                      {"category_id", d.category_id},
                      {"score", d.score},
                      {"bbox", {d.box.x1, d.box.y1, d.box.width(), d.box.height()}}};
  if (d.mask) j["segmentation"] = rle_to_json(rle_encode(*d.mask));
  return j;
}

inline Detection detection_from_json(const nlohmann::json& j) {
  Detection d;
  d.image_id = j.at("image_id").get<Id>();
  d.category_id = j.at("category_id").get<Id>();
  d.score = j.at("score").get<double>();
  const auto& b = j.at("bbox");
  if (!b.is_array() || b.size() != 4) throw MetricsError("prediction bbox must have 4 numbers");
  const double x = b[0], y = b[1], w = b[2], h = b[3];
  d.box = Box{x, y, x + w, y + h};
  if (j.contains("segmentation") && !j["segmentation"].is_null()) d.mask = rle_decode(rle_from_json(j["segmentation"]));
  return d;
}

inline nlohmann::json to_json(const PredictionSet& p) {
  nlohmann::json objs = nlohmann::json::array(), parts = nlohmann::json::array();
  for (const auto& d : p.objects) objs.push_back(to_json(d));
  for (const auto& d : p.parts) parts.push_back(to_json(d));
  return {{"objects", objs}, {"parts", parts}};
}

inline void save_predictions(const PredictionSet& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw MetricsError("cannot write predictions " + path.string());
  out << to_json(p).dump() << "\n";
}

inline PredictionSet load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MetricsError("cannot open predictions " + path.string());
  PredictionSet p;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& d : j.value("objects", nlohmann::json::array())) p.objects.push_back(detection_from_json(d));
    for (const auto& d : j.value("parts", nlohmann::json::array())) p.parts.push_back(detection_from_json(d));
  } catch (const nlohmann::json::exception& e) {
    throw MetricsError("malformed predictions " + path.string() + ": " + e.what());
  }
  return p;
}

/// Semantic part map of one image: lower-scored masks are painted first.
inline LabelMap part_label_map(std::span<const Detection> dets, Id image_id, int height, int width, double min_score) {
  LabelMap m{height, width, std::vector<int>(static_cast<std::size_t>(height) * width, 0)};
  std::vector<const Detection*> order;
  for (const auto& d : dets)
    if (d.image_id == image_id && d.mask && d.score >= min_score) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->score < b->score; });
  for (const auto* d : order) {
    if (d->mask->height() != height || d->mask->width() != width)
      throw MetricsError("prediction mask size differs from image " + std::to_string(image_id));
    const auto bits = d->mask->bits();
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) m.labels[i] = static_cast<int>(d->category_id);
  }
  return m;
}

inline LabelMap part_label_map(std::span<const AnnotationRecord> anns, const ImageRecord& im) {
  LabelMap m{im.height, im.width, std::vector<int>(static_cast<std::size_t>(im.height) * im.width, 0)};
  for (const auto& a : anns) {
    if (a.image_id != im.id || a.level != Level::Part || !a.mask) continue;
    const auto bits = a.mask->bits();
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) m.labels[i] = static_cast<int>(a.category_id);
  }
  return m;
}

struct EvalOptions {
  double miou_min_score = 0.5;
};

/// Per-level box and mask AP; part mIoU split by category base/novel labels.
inline EvalReport evaluate_predictions(const PredictionSet& p, const HierarchicalDataset& gt, const EvalOptions& opt = {}) {
  EvalReport r;
  std::vector<AnnotationRecord> gt_obj, gt_part;
  for (const auto& a : gt.annotations) (a.level == Level::Object ? gt_obj : gt_part).push_back(a);
  std::vector<Id> obj_ids, part_ids;
  for (const auto& c : gt.categories) {
    (c.level == Level::Object ? obj_ids : part_ids).push_back(c.id);
    r.category_names[c.id] = c.name;
  }
  auto masked = [](std::span<const Detection> dets) {
    std::vector<Detection> out;
    for (const auto& d : dets)
      if (d.mask) out.push_back(d);
    return out;
  };
  r.object.box = evaluate_map(p.objects, gt_obj, obj_ids, IouType::Box);
  r.part.box = evaluate_map(p.parts, gt_part, part_ids, IouType::Box);
  const auto obj_masked = masked(p.objects), part_masked = masked(p.parts);
  r.object.mask = evaluate_map(obj_masked, gt_obj, obj_ids, IouType::Mask);
  r.part.mask = evaluate_map(part_masked, gt_part, part_ids, IouType::Mask);

  if (!part_ids.empty() && !gt.images.empty()) {
    std::vector<LabelMap> preds, gts;
    for (const auto& im : gt.images) {
      preds.push_back(part_label_map(part_masked, im.id, im.height, im.width, opt.miou_min_score));
      gts.push_back(part_label_map(gt_part, im));
    }
    std::vector<CategoryRecord> part_cats;
    for (const auto& c : gt.categories)
      if (c.level == Level::Part) part_cats.push_back(c);
    r.miou = miou_by_split(preds, gts, part_cats);
  }
  return r;
}

}  // namespace hparse
