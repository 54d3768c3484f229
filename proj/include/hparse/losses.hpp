#pragma once

// Decoupled set matching and the training objective. Boxes are normalized
// cxcywh unless a name says xyxy.

#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hparse/model.hpp"

namespace hparse {

struct LossWeights {
  double cls = 4.0;   // lambda_1
  double box = 2.0;   // lambda_2
  double mask = 5.0;  // lambda_3
  double res = 5.0;   // lambda_4
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;
inline constexpr double kBoxL1Weight = 5.0;
inline constexpr double kBoxGiouWeight = 2.0;
inline constexpr double kRestrictionEps = 1e-6;

struct LossBreakdown {
  double cls_obj = 0, cls_part = 0, box_obj = 0, box_part = 0, mask_obj = 0, mask_part = 0, res = 0, total = 0;
};

void to_json(nlohmann::json& j, const LossBreakdown& b);

/// lambda_1 (cls) + lambda_2 (box) + lambda_3 (mask) + lambda_4 res, in that summation order.
double total_loss(const LossBreakdown& b, const LossWeights& w);

struct LossTerms {
  torch::Tensor cls_obj, cls_part, box_obj, box_part, mask_obj, mask_part, res;
};

torch::Tensor total_loss(const LossTerms& t, const LossWeights& w);

/// Component values as doubles with total recombined from them.
LossBreakdown breakdown(const LossTerms& t, const LossWeights& w);

torch::Tensor cxcywh_to_xyxy(const torch::Tensor& b);
torch::Tensor xyxy_to_cxcywh(const torch::Tensor& b);

/// Row-wise GIoU of matching rows (n, 4) xyxy.
torch::Tensor generalized_iou_rows(const torch::Tensor& a, const torch::Tensor& b);
/// All-pairs GIoU (R, 4) x (n, 4) xyxy -> (R, n).
torch::Tensor generalized_iou_matrix(const torch::Tensor& a, const torch::Tensor& b);

/// Elementwise sigmoid focal loss.
torch::Tensor sigmoid_focal(const torch::Tensor& logits, const torch::Tensor& targets, double alpha = kFocalAlpha,
                            double gamma = kFocalGamma);

/// Sum of focal terms over every (row, category) cell / max(num_matched, 1).
torch::Tensor focal_cls_loss(const torch::Tensor& logits, const torch::Tensor& targets, double num_matched);

/// Sum over matched rows of 5 * L1 (cxcywh) + 2 * (1 - GIoU), / max(num_matched, 1).
torch::Tensor box_loss(const torch::Tensor& pred, const torch::Tensor& target, double num_matched);

/// Sum over matched rows of dice + per-pixel-mean focal, / max(num_matched, 1). Inputs (n, h, w).
torch::Tensor mask_loss(const torch::Tensor& pred_logits, const torch::Tensor& target, double num_matched);

/// Sum over rows of 1 - |parent ∩ part| / max(|part|, eps).
torch::Tensor restriction_loss(const torch::Tensor& parent, const torch::Tensor& part, double eps = kRestrictionEps);

struct LevelTargets {
  torch::Tensor labels;    // (n) int64 vocabulary index
  torch::Tensor boxes;     // (n, 4)
  torch::Tensor masks;     // (n, h, w) soft coverage at stride 4
  torch::Tensor has_mask;  // (n) bool
  [[nodiscard]] std::int64_t size() const { return labels.defined() ? labels.size(0) : 0; }
};

struct ImageTargets {
  LevelTargets object, part;
};

using Matching = std::vector<std::pair<std::int64_t, std::int64_t>>;  // (prediction row, target index)

struct MatchResult {
  Matching object, part;
};

/// Cost lambda_1 * focal(pos - neg) + lambda_2 * (5 L1 + 2 (1 - GIoU)) + lambda_3 * (dice + BCE);
/// `masks` may be undefined. One image: logits (R, K), boxes (R, 4), masks (R, h, w).
torch::Tensor matching_cost(const torch::Tensor& logits, const torch::Tensor& boxes, const torch::Tensor& masks,
                            const LevelTargets& t, const LossWeights& w);

Matching match_level(const torch::Tensor& logits, const torch::Tensor& boxes, const torch::Tensor& masks,
                     const LevelTargets& t, const LossWeights& w);

/// Independent assignments per level for image b of the batch output.
MatchResult decoupled_match(const LevelOutput& object, const LevelOutput& part, std::int64_t b, const ImageTargets& t,
                            const LossWeights& w);

struct LossResult {
  LossTerms terms;
  LossBreakdown values;
  std::vector<MatchResult> final_matches;  // final decoder layers, per image
};

/// Encoder proposals and every decoder layer contribute to their level's cls/box(/mask)
/// terms; the restriction term uses each part layer with parents from the final object layer.
LossResult compute_losses(const ModelOutput& out, const std::vector<ImageTargets>& targets, const LossWeights& w);

}  // namespace hparse
