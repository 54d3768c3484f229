#pragma once

// Free inference, the GT-object-conditioned part parsing setting, and
// evaluation of a model on a split.

#include <vector>

#include <torch/torch.h>

#include "hparse/metrics.hpp"
#include "hparse/model.hpp"
#include "hparse/predictions.hpp"
#include "hparse/training.hpp"

namespace hparse {

struct InferenceOptions {
  int max_dets = static_cast<int>(kMaxDetsPerImage);
  int batch_size = 8;
};

/// Top-scoring (row, category) pairs of image b as pixel-space detections.
/// `allowed` (R, K) bool restricts the categories each row may take; may be undefined.
std::vector<Detection> level_detections(const LevelOutput& level, std::int64_t b, const std::vector<Id>& category_ids,
                                        Id image_id, int height, int width, int max_dets,
                                        const torch::Tensor& allowed = {});

PredictionSet predict(HierParser& model, const SplitData& data, const VocabMap& vm, const InferenceOptions& opt = {});

/// GT objects of one image condition the part parse. Rows = G * L; empty when G = 0.
struct OracleParse {
  LevelOutput parts;       // batch of one
  torch::Tensor allowed;   // (G*L, K_part) part categories whose parent is the row's GT category
};

OracleParse oracle_obj_parse(HierParser& model, const torch::Tensor& image, const LevelTargets& objects);

PredictionSet predict_oracle(HierParser& model, const SplitData& data, const VocabMap& vm, const InferenceOptions& opt = {});

struct ModelEvaluation {
  EvalReport free;
  EvalReport oracle;  // object level left empty; only parts are scored
};

ModelEvaluation evaluate_model(HierParser& model, const SplitData& data, const VocabMap& vm, bool with_oracle = true,
                               const InferenceOptions& opt = {});
nlohmann::json to_json(const ModelEvaluation& e);

}  // namespace hparse
