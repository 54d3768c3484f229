#include "hparse/losses.hpp"

#include "hparse/hungarian.hpp"

namespace hparse {

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"cls", w.cls}, {"box", w.box}, {"mask", w.mask}, {"res", w.res}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.cls = j.value("cls", w.cls);
  w.box = j.value("box", w.box);
  w.mask = j.value("mask", w.mask);
  w.res = j.value("res", w.res);
  if (w.cls < 0 || w.box < 0 || w.mask < 0 || w.res < 0) throw std::invalid_argument("loss weights must be nonnegative");
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = {{"cls_obj", b.cls_obj},   {"cls_part", b.cls_part},   {"box_obj", b.box_obj}, {"box_part", b.box_part},
       {"mask_obj", b.mask_obj}, {"mask_part", b.mask_part}, {"res", b.res},         {"total", b.total}};
}

double total_loss(const LossBreakdown& b, const LossWeights& w) {
  return w.cls * (b.cls_obj + b.cls_part) + w.box * (b.box_obj + b.box_part) + w.mask * (b.mask_obj + b.mask_part) +
         w.res * b.res;
}

torch::Tensor total_loss(const LossTerms& t, const LossWeights& w) {
  return w.cls * (t.cls_obj + t.cls_part) + w.box * (t.box_obj + t.box_part) + w.mask * (t.mask_obj + t.mask_part) +
         w.res * t.res;
}

LossBreakdown breakdown(const LossTerms& t, const LossWeights& w) {
  auto v = [](const torch::Tensor& x) { return x.defined() ? x.item<double>() : 0.0; };
  LossBreakdown b{v(t.cls_obj), v(t.cls_part), v(t.box_obj), v(t.box_part), v(t.mask_obj), v(t.mask_part), v(t.res), 0};
  b.total = total_loss(b, w);
  return b;
}

torch::Tensor cxcywh_to_xyxy(const torch::Tensor& b) {
  auto c = b.unbind(-1);
  return torch::stack({c[0] - 0.5 * c[2], c[1] - 0.5 * c[3], c[0] + 0.5 * c[2], c[1] + 0.5 * c[3]}, -1);
}

torch::Tensor xyxy_to_cxcywh(const torch::Tensor& b) {
  auto c = b.unbind(-1);
  return torch::stack({0.5 * (c[0] + c[2]), 0.5 * (c[1] + c[3]), c[2] - c[0], c[3] - c[1]}, -1);
}

namespace {

torch::Tensor giou_broadcast(const torch::Tensor& a, const torch::Tensor& b) {
  // a (..., 4), b (..., 4) broadcastable
  auto a_ = a.unbind(-1), b_ = b.unbind(-1);
  auto area_a = (a_[2] - a_[0]).clamp_min(0) * (a_[3] - a_[1]).clamp_min(0);
  auto area_b = (b_[2] - b_[0]).clamp_min(0) * (b_[3] - b_[1]).clamp_min(0);
  auto iw = (torch::min(a_[2], b_[2]) - torch::max(a_[0], b_[0])).clamp_min(0);
  auto ih = (torch::min(a_[3], b_[3]) - torch::max(a_[1], b_[1])).clamp_min(0);
  auto inter = iw * ih;
  auto uni = area_a + area_b - inter;
  auto ew = torch::max(a_[2], b_[2]) - torch::min(a_[0], b_[0]);
  auto eh = torch::max(a_[3], b_[3]) - torch::min(a_[1], b_[1]);
  auto enclosing = ew * eh;
  return inter / uni.clamp_min(1e-12) - (enclosing - uni) / enclosing.clamp_min(1e-12);
}

}  // namespace

torch::Tensor generalized_iou_rows(const torch::Tensor& a, const torch::Tensor& b) { return giou_broadcast(a, b); }

torch::Tensor generalized_iou_matrix(const torch::Tensor& a, const torch::Tensor& b) {
  return giou_broadcast(a.unsqueeze(1), b.unsqueeze(0));
}

torch::Tensor sigmoid_focal(const torch::Tensor& logits, const torch::Tensor& targets, double alpha, double gamma) {
  auto p = torch::sigmoid(logits);
  auto ce = torch::binary_cross_entropy_with_logits(logits, targets, {}, {}, at::Reduction::None);
  auto p_t = p * targets + (1 - p) * (1 - targets);
  auto alpha_t = alpha * targets + (1 - alpha) * (1 - targets);
  return alpha_t * ce * torch::pow(1 - p_t, gamma);
}

torch::Tensor focal_cls_loss(const torch::Tensor& logits, const torch::Tensor& targets, double num_matched) {
  return sigmoid_focal(logits, targets).sum() / std::max(num_matched, 1.0);
}

torch::Tensor box_loss(const torch::Tensor& pred, const torch::Tensor& target, double num_matched) {
  if (pred.size(0) == 0) return pred.sum();
  auto l1 = (pred - target).abs().sum(-1);
  auto giou = generalized_iou_rows(cxcywh_to_xyxy(pred), cxcywh_to_xyxy(target));
  return (kBoxL1Weight * l1 + kBoxGiouWeight * (1 - giou)).sum() / std::max(num_matched, 1.0);
}

torch::Tensor mask_loss(const torch::Tensor& pred_logits, const torch::Tensor& target, double num_matched) {
  if (pred_logits.size(0) == 0) return pred_logits.sum();
  auto x = pred_logits.flatten(1), t = target.flatten(1);
  auto p = torch::sigmoid(x);
  auto dice = 1 - (2 * (p * t).sum(1) + 1) / (p.sum(1) + t.sum(1) + 1);
  auto focal = sigmoid_focal(x, t).mean(1);
  return (dice + focal).sum() / std::max(num_matched, 1.0);
}

torch::Tensor restriction_loss(const torch::Tensor& parent, const torch::Tensor& part, double eps) {
  if (part.size(0) == 0) return part.sum();
  auto o = cxcywh_to_xyxy(parent).unbind(-1), p = cxcywh_to_xyxy(part).unbind(-1);
  auto iw = (torch::min(o[2], p[2]) - torch::max(o[0], p[0])).clamp_min(0);
  auto ih = (torch::min(o[3], p[3]) - torch::max(o[1], p[1])).clamp_min(0);
  auto area = ((p[2] - p[0]).clamp_min(0) * (p[3] - p[1]).clamp_min(0)).clamp_min(eps);
  return (1 - iw * ih / area).sum();
}

torch::Tensor matching_cost(const torch::Tensor& logits, const torch::Tensor& boxes, const torch::Tensor& masks,
                            const LevelTargets& t, const LossWeights& w) {
  torch::NoGradGuard g;
  const auto R = logits.size(0), n = t.size();
  auto opts = torch::TensorOptions().dtype(torch::kDouble);
  if (n == 0) return torch::zeros({R, 0}, opts);
  auto p = torch::sigmoid(logits.to(torch::kDouble)).index_select(1, t.labels);  // (R, n)
  auto pos = kFocalAlpha * torch::pow(1 - p, kFocalGamma) * -torch::log(p + 1e-8);
  auto neg = (1 - kFocalAlpha) * torch::pow(p, kFocalGamma) * -torch::log(1 - p + 1e-8);
  auto b = boxes.to(torch::kDouble), tb = t.boxes.to(torch::kDouble);
  auto l1 = torch::cdist(b, tb, 1.0);
  auto giou = generalized_iou_matrix(cxcywh_to_xyxy(b), cxcywh_to_xyxy(tb));
  auto cost = w.cls * (pos - neg) + w.box * (kBoxL1Weight * l1 + kBoxGiouWeight * (1 - giou));
  if (masks.defined() && t.masks.defined()) {
    auto x = masks.to(torch::kDouble).flatten(1), tm = t.masks.to(torch::kDouble).flatten(1);
    const double P = static_cast<double>(x.size(1));
    auto sp = torch::sigmoid(x);
    auto dice = 1 - (2 * torch::matmul(sp, tm.t()) + 1) / (sp.sum(1).unsqueeze(1) + tm.sum(1).unsqueeze(0) + 1);
    auto ce = (torch::matmul(torch::softplus(-x), tm.t()) + torch::matmul(torch::softplus(x), (1 - tm).t())) / P;
    cost = cost + w.mask * (dice + ce) * t.has_mask.to(torch::kDouble).unsqueeze(0);
  }
  // non-finite costs become large finite ones
  return cost.nan_to_num(1e12, 1e12, -1e12);
}

Matching match_level(const torch::Tensor& logits, const torch::Tensor& boxes, const torch::Tensor& masks,
                     const LevelTargets& t, const LossWeights& w) {
  if (t.size() == 0 || logits.size(0) == 0) return {};
  auto cost = matching_cost(logits, boxes, masks, t, w).contiguous();
  CostMatrix m(static_cast<std::size_t>(cost.size(0)), static_cast<std::size_t>(cost.size(1)),
               std::vector<double>(cost.data_ptr<double>(), cost.data_ptr<double>() + cost.numel()));
  Matching out;
  for (auto [r, c] : hungarian_match(m).pairs) out.emplace_back(static_cast<std::int64_t>(r), static_cast<std::int64_t>(c));
  return out;
}

MatchResult decoupled_match(const LevelOutput& object, const LevelOutput& part, std::int64_t b, const ImageTargets& t,
                            const LossWeights& w) {
  auto slice = [b](const torch::Tensor& x) { return x.defined() ? x[b] : x; };
  return {match_level(slice(object.logits), slice(object.boxes), slice(object.masks), t.object, w),
          match_level(slice(part.logits), slice(part.boxes), slice(part.masks), t.part, w)};
}

namespace {

struct StageLoss {
  torch::Tensor cls, box, mask;
  std::vector<Matching> matches;
};

torch::Tensor index_tensor(const std::vector<std::int64_t>& v) { return torch::tensor(v, torch::kLong); }

StageLoss stage_loss(const LevelOutput& o, const std::vector<ImageTargets>& targets, bool part, const LossWeights& w) {
  StageLoss s;
  const auto B = o.logits.size(0);
  auto dense = torch::zeros_like(o.logits);
  std::vector<torch::Tensor> pb, tb, pm, tm;
  double matched = 0, with_mask = 0;
  for (std::int64_t b = 0; b < B; ++b) {
    const LevelTargets& t = part ? targets[b].part : targets[b].object;
    auto m = match_level(o.logits[b], o.boxes[b], o.masks.defined() ? o.masks[b] : torch::Tensor(), t, w);
    if (!m.empty()) {
      std::vector<std::int64_t> rows, cols;
      for (auto [r, c] : m) {
        rows.push_back(r);
        cols.push_back(c);
      }
      auto ri = index_tensor(rows), ci = index_tensor(cols);
      dense[b].index_put_({ri, t.labels.index_select(0, ci)}, 1.0);
      pb.push_back(o.boxes[b].index_select(0, ri));
      tb.push_back(t.boxes.index_select(0, ci));
      matched += static_cast<double>(m.size());
      if (o.masks.defined() && t.masks.defined()) {
        auto keep = t.has_mask.index_select(0, ci).nonzero().flatten();
        if (keep.numel() > 0) {
          pm.push_back(o.masks[b].index_select(0, ri.index_select(0, keep)));
          tm.push_back(t.masks.index_select(0, ci.index_select(0, keep)));
          with_mask += static_cast<double>(keep.numel());
        }
      }
    }
    s.matches.push_back(std::move(m));
  }
  s.cls = focal_cls_loss(o.logits, dense, matched);
  s.box = pb.empty() ? o.boxes.sum() * 0 : box_loss(torch::cat(pb), torch::cat(tb), matched);
  if (o.masks.defined())
    s.mask = pm.empty() ? o.masks.sum() * 0 : mask_loss(torch::cat(pm), torch::cat(tm), with_mask);
  return s;
}

}  // namespace

LossResult compute_losses(const ModelOutput& out, const std::vector<ImageTargets>& targets, const LossWeights& w) {
  if (out.object.empty() || static_cast<std::int64_t>(targets.size()) != out.object.back().logits.size(0))
    throw std::invalid_argument("compute_losses: one target set per image is required");
  LossResult r;
  auto zero = torch::zeros({}, out.object.back().logits.options());
  LossTerms& t = r.terms;
  t.cls_obj = t.cls_part = t.box_obj = t.box_part = t.mask_obj = t.mask_part = t.res = zero;

  const StageLoss prop = stage_loss(out.proposals, targets, false, w);
  t.cls_obj = t.cls_obj + prop.cls;
  t.box_obj = t.box_obj + prop.box;
  std::vector<Matching> obj_final, part_final;
  for (const auto& o : out.object) {
    StageLoss s = stage_loss(o, targets, false, w);
    t.cls_obj = t.cls_obj + s.cls;
    t.box_obj = t.box_obj + s.box;
    t.mask_obj = t.mask_obj + s.mask;
    obj_final = std::move(s.matches);
  }
  const auto parents = out.object.back().boxes;
  const double B = static_cast<double>(targets.size());
  bool any_parts = false;
  for (const auto& tg : targets) any_parts = any_parts || tg.part.size() > 0;
  for (const auto& o : out.part) {
    StageLoss s = stage_loss(o, targets, true, w);
    t.cls_part = t.cls_part + s.cls;
    t.box_part = t.box_part + s.box;
    t.mask_part = t.mask_part + s.mask;
    if (any_parts) {
      for (std::size_t b = 0; b < targets.size(); ++b) {
        if (s.matches[b].empty()) continue;
        std::vector<std::int64_t> rows;
        for (auto [row, c] : s.matches[b]) rows.push_back(row);
        auto ri = index_tensor(rows);
        auto slot = out.part_slot[static_cast<std::int64_t>(b)].index_select(0, ri);
        t.res = t.res + restriction_loss(parents[static_cast<std::int64_t>(b)].index_select(0, slot),
                                         o.boxes[static_cast<std::int64_t>(b)].index_select(0, ri)) / B;
      }
    }
    part_final = std::move(s.matches);
  }
  for (std::size_t b = 0; b < targets.size(); ++b) r.final_matches.push_back({obj_final[b], part_final[b]});
  r.values = breakdown(t, w);
  return r;
}

}  // namespace hparse
