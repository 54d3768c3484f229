#pragma once

// Data loading into tensors, checkpoints, the metrics log, the training loop and
// the finite-difference gradient check.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hparse/dataset.hpp"
#include "hparse/losses.hpp"
#include "hparse/model.hpp"
#include "hparse/raster.hpp"

namespace hparse {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  double lr = 5e-5;
  double weight_decay = 0.05;
  double lr_decay = 0.1;
  std::vector<int> milestones;                          // explicit; empty = derived from fractions
  std::vector<double> milestone_fractions{0.6, 0.8};    // of total iterations
  int batch_size = 4;
  int iterations = 3000;
  double grad_clip = 0.1;  // max global gradient norm; 0 disables
  std::uint64_t seed = 0;
  std::string train_path;
  std::string val_path;
  std::string embeddings;  // optional override file for text rows
  std::string out_dir = "run";
  int log_every = 1;
  int eval_every = 0;  // 0 = only at the end

  /// Milestones actually used: explicit list, else fractions scaled to `iterations`.
  [[nodiscard]] std::vector<int> resolved_milestones() const;
  void check() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Dataset category ids <-> vocabulary rows.
struct VocabMap {
  Vocabulary vocab;
  std::vector<Id> object_ids, part_ids;
  std::map<Id, int> object_index, part_index;
};

/// Object categories in id order, then part categories in id order.
VocabMap vocabulary_from(const HierarchicalDataset& d);
/// Aligns dataset categories with an existing vocabulary by name.
VocabMap align_vocabulary(const Vocabulary& vocab, const HierarchicalDataset& d);

struct SplitData {
  HierarchicalDataset dataset;
  torch::Tensor images;                // (n, 3, H, W) normalized
  std::vector<ImageTargets> targets;   // aligned with dataset.images
};

torch::Tensor image_to_tensor(const Image& img);
LevelTargets level_targets(const std::vector<const AnnotationRecord*>& anns, const std::map<Id, int>& index, int H, int W);
SplitData load_split(const std::filesystem::path& dataset_path, const VocabMap& vm);

void save_checkpoint(HierParser& model, const nlohmann::json& train_config, const std::filesystem::path& path);
struct LoadedModel {
  HierParser model{nullptr};
  nlohmann::json train_config;
};
LoadedModel load_checkpoint(const std::filesystem::path& path);

HierParser build_model(const ModelConfig& cfg, const Vocabulary& vocab, const std::string& embeddings = "");

/// Append-only JSONL; step records must have strictly increasing iterations.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void log_step(int iteration, double lr, const LossBreakdown& b, double tensor_total);
  void log_eval(int iteration, const nlohmann::json& report);
  [[nodiscard]] const std::vector<std::pair<int, LossBreakdown>>& steps() const { return steps_; }

 private:
  std::ofstream out_;
  std::chrono::steady_clock::time_point start_;
  int last_step_ = -1, last_eval_ = -1;
  std::vector<std::pair<int, LossBreakdown>> steps_;
};

std::vector<std::pair<int, LossBreakdown>> read_metrics_log(const std::filesystem::path& path);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::vector<std::pair<int, LossBreakdown>> steps;
  double seconds = 0;
};

using EvalHook = std::function<nlohmann::json(HierParser&, int iteration)>;

/// Deterministic given the seed when run with one thread.
TrainResult train_model(const TrainConfig& cfg, const EvalHook& eval = nullptr);

struct GradcheckReport {
  std::string component;
  int trials = 0;
  int resampled = 0;
  double max_rel_error = 0;
};

void to_json(nlohmann::json& j, const GradcheckReport& r);

/// Autograd vs central differences (step 1e-4, double precision) on random
/// non-degenerate micro-batches. component: linear, cls, box, mask, res, total.
GradcheckReport gradcheck(const std::string& component, int trials, std::uint64_t seed);

}  // namespace hparse
