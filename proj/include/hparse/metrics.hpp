#pragma once

// COCO-style average precision, split-aware mIoU and the derived scalars.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hparse/dataset.hpp"
#include "hparse/geometry.hpp"

namespace hparse {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Detection {
  Id image_id = 0;
  Id category_id = 0;
  double score = 0.0;
  Box box;
  std::optional<Mask> mask;
};

enum class IouType { Box, Mask };

struct ApResult {
  double ap = 0.0;    // mean over IoU thresholds 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::map<Id, double> per_category_ap;
  std::map<Id, double> per_category_ap50;
  int num_categories = 0;  // categories with at least one ground truth
};

inline constexpr std::array<double, 10> kIouThresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                                         0.75, 0.80, 0.85, 0.90, 0.95};
inline constexpr int kRecallPoints = 101;
inline constexpr std::size_t kMaxDetsPerImage = 100;

/// 101-point interpolated precision from score-ordered TP flags.
inline double interpolated_ap(std::span<const char> tp_in_rank_order, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  const std::size_t n = tp_in_rank_order.size();
  std::vector<double> recall(n), precision(n);
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    (tp_in_rank_order[i] ? tp : fp) += 1.0;
    recall[i] = tp / static_cast<double>(num_gt);
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k < kRecallPoints; ++k) {
    const double r = static_cast<double>(k) / (kRecallPoints - 1);
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / kRecallPoints;
}

namespace detail {

inline double pair_iou(const Detection& d, const AnnotationRecord& g, IouType type) {
  if (type == IouType::Box) return box_iou(d.box, g.box);
  if (!d.mask || !g.mask) return 0.0;
  return mask_iou(*d.mask, *g.mask);
}

}  // namespace detail

/// COCO-style AP for one annotation level. `gts` must already be restricted
/// to that level; `category_ids` lists the categories of the level. Categories
/// without ground truth are excluded from the mean.
inline ApResult evaluate_map(std::span<const Detection> detections, std::span<const AnnotationRecord> gts,
                             std::span<const Id> category_ids, IouType type) {
  ApResult result;
  std::map<Id, std::map<Id, std::vector<const AnnotationRecord*>>> gt_by_cat_img;
  for (const auto& g : gts) gt_by_cat_img[g.category_id][g.image_id].push_back(&g);
  std::map<Id, std::map<Id, std::vector<const Detection*>>> dt_by_cat_img;
  for (const auto& d : detections) dt_by_cat_img[d.category_id][d.image_id].push_back(&d);

  double sum_ap = 0.0, sum_ap50 = 0.0, sum_ap75 = 0.0;
  for (Id cat : category_ids) {
    std::size_t num_gt = 0;
    if (auto it = gt_by_cat_img.find(cat); it != gt_by_cat_img.end())
      for (const auto& [img, list] : it->second) num_gt += list.size();
    if (num_gt == 0) continue;

    // Per-image greedy matching; each entry: score, order key, tp flag per threshold.
    struct Scored {
      double score;
      std::size_t order;
      std::array<char, kIouThresholds.size()> tp;
    };
    std::vector<Scored> scored;
    std::size_t order = 0;
    auto& dts_of_cat = dt_by_cat_img[cat];
    for (auto& [img, dts] : dts_of_cat) {
      std::stable_sort(dts.begin(), dts.end(),
                       [](const Detection* a, const Detection* b) { return a->score > b->score; });
      if (dts.size() > kMaxDetsPerImage) dts.resize(kMaxDetsPerImage);
      std::vector<const AnnotationRecord*> empty;
      const auto& img_gts = gt_by_cat_img[cat].contains(img) ? gt_by_cat_img[cat][img] : empty;
      std::vector<std::vector<double>> ious(dts.size(), std::vector<double>(img_gts.size()));
      for (std::size_t i = 0; i < dts.size(); ++i)
        for (std::size_t g = 0; g < img_gts.size(); ++g) ious[i][g] = detail::pair_iou(*dts[i], *img_gts[g], type);

      std::vector<Scored> local(dts.size());
      for (std::size_t i = 0; i < dts.size(); ++i) local[i] = {dts[i]->score, order++, {}};
      for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
        std::vector<char> taken(img_gts.size(), 0);
        for (std::size_t i = 0; i < dts.size(); ++i) {
          double best = std::min(kIouThresholds[t], 1.0 - 1e-10);
          int match = -1;
          for (std::size_t g = 0; g < img_gts.size(); ++g) {
            if (taken[g] || ious[i][g] < best) continue;
            best = ious[i][g];
            match = static_cast<int>(g);
          }
          if (match >= 0) {
            taken[static_cast<std::size_t>(match)] = 1;
            local[i].tp[t] = 1;
          }
        }
      }
      scored.insert(scored.end(), local.begin(), local.end());
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
      return a.score > b.score || (a.score == b.score && a.order < b.order);
    });

    double cat_ap = 0.0, cat_ap50 = 0.0, cat_ap75 = 0.0;
    std::vector<char> flags(scored.size());
    for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
      for (std::size_t i = 0; i < scored.size(); ++i) flags[i] = scored[i].tp[t];
      const double ap = interpolated_ap(flags, num_gt);
      cat_ap += ap;
      if (t == 0) cat_ap50 = ap;
      if (t == 5) cat_ap75 = ap;
    }
    cat_ap /= static_cast<double>(kIouThresholds.size());
    result.per_category_ap[cat] = cat_ap;
    result.per_category_ap50[cat] = cat_ap50;
    sum_ap += cat_ap;
    sum_ap50 += cat_ap50;
    sum_ap75 += cat_ap75;
    ++result.num_categories;
  }
  if (result.num_categories > 0) {
    result.ap = sum_ap / result.num_categories;
    result.ap50 = sum_ap50 / result.num_categories;
    result.ap75 = sum_ap75 / result.num_categories;
  }
  return result;
}

/// 2·s·u / (s + u); 0 when both are 0.
inline double harmonic_miou(double seen, double unseen) {
  if (seen + unseen == 0.0) return 0.0;
  return 2.0 * seen * unseen / (seen + unseen);
}

struct SplitMiou {
  double seen = 0.0;    // percent
  double unseen = 0.0;  // percent
  int seen_categories = 0;
  int unseen_categories = 0;
};

/// Per-category IoU accumulated over all maps, averaged within each split.
/// Label 0 is background; categories never present in either map are skipped.
inline SplitMiou miou_by_split(std::span<const LabelMap> preds, std::span<const LabelMap> gts,
                               std::span<const CategoryRecord> categories) {
  if (preds.size() != gts.size()) throw MetricsError("miou_by_split: prediction and ground-truth counts differ");
  std::map<int, std::pair<double, double>> iu;  // category -> (intersection, union)
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& p = preds[k];
    const auto& g = gts[k];
    if (p.height != g.height || p.width != g.width)
      throw MetricsError("miou_by_split: resolution mismatch at map " + std::to_string(k));
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      const int a = p.labels[i], b = g.labels[i];
      if (a == b) {
        if (a != 0) {
          iu[a].first += 1.0;
          iu[a].second += 1.0;
        }
      } else {
        if (a != 0) iu[a].second += 1.0;
        if (b != 0) iu[b].second += 1.0;
      }
    }
  }
  SplitMiou out;
  for (const auto& c : categories) {
    auto it = iu.find(static_cast<int>(c.id));
    if (it == iu.end() || it->second.second == 0.0) continue;
    const double v = 100.0 * it->second.first / it->second.second;
    if (c.split == Split::Base) {
      out.seen += v;
      ++out.seen_categories;
    } else {
      out.unseen += v;
      ++out.unseen_categories;
    }
  }
  if (out.seen_categories) out.seen /= out.seen_categories;
  if (out.unseen_categories) out.unseen /= out.unseen_categories;
  return out;
}

/// AP over a novel split, tagged with the category ids of that split.
struct NovelAp {
  double value = 0.0;
  std::set<Id> novel_category_ids;
};

inline double novel_ap_increment(const NovelAp& baseline, const NovelAp& augmented) {
  if (baseline.novel_category_ids != augmented.novel_category_ids)
    throw MetricsError("novel_ap_increment: runs were evaluated on different novel splits");
  return augmented.value - baseline.value;
}

struct LevelReport {
  ApResult box;
  ApResult mask;
};

struct EvalReport {
  LevelReport object;
  LevelReport part;
  std::optional<SplitMiou> miou;
  std::optional<double> novel_ap_increment;
  std::map<Id, std::string> category_names;
};

inline nlohmann::json to_json(const ApResult& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, ap] : r.per_category_ap)
    per[std::to_string(id)] = {{"AP", 100.0 * ap}, {"AP50", 100.0 * r.per_category_ap50.at(id)}};
  return {{"AP", 100.0 * r.ap}, {"AP50", 100.0 * r.ap50}, {"AP75", 100.0 * r.ap75},
          {"num_categories", r.num_categories}, {"per_category", per}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {
      {"object", {{"box", to_json(r.object.box)}, {"mask", to_json(r.object.mask)}}},
      {"part", {{"box", to_json(r.part.box)}, {"mask", to_json(r.part.mask)}}},
  };
  if (r.miou) {
    j["miou"] = {{"seen", r.miou->seen}, {"unseen", r.miou->unseen}};
    if (r.miou->seen_categories > 0 && r.miou->unseen_categories > 0)
      j["miou"]["hIoU"] = harmonic_miou(r.miou->seen, r.miou->unseen);
  }
  if (r.novel_ap_increment) j["novel_ap_increment"] = *r.novel_ap_increment;
  nlohmann::json names = nlohmann::json::object();
  for (const auto& [id, n] : r.category_names) names[std::to_string(id)] = n;
  j["category_names"] = names;
  return j;
}

/// One row per (level, iou type, category) plus an "all" row per level and type.
inline std::string to_table(const EvalReport& r) {
  std::string out = "level,iou_type,category_id,category,AP,AP50\n";
  auto row = [&](const char* level, const char* type, const ApResult& a) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,all,all,%.4f,%.4f\n", level, type, 100.0 * a.ap, 100.0 * a.ap50);
    out += buf;
    for (const auto& [id, ap] : a.per_category_ap) {
      const auto it = r.category_names.find(id);
      std::snprintf(buf, sizeof buf, "%s,%s,%lld,%s,%.4f,%.4f\n", level, type, static_cast<long long>(id),
                    it == r.category_names.end() ? "" : it->second.c_str(), 100.0 * ap,
                    100.0 * a.per_category_ap50.at(id));
      out += buf;
    }
  };
  row("object", "box", r.object.box);
  row("object", "mask", r.object.mask);
  row("part", "box", r.part.box);
  row("part", "mask", r.part.mask);
  return out;
}

}  // namespace hparse
