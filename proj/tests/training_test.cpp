#include <gtest/gtest.h>

#include <filesystem>

#include "hparse/inference.hpp"
#include "hparse/synthdata.hpp"
#include "hparse/training.hpp"

using namespace hparse;
namespace fs = std::filesystem;

namespace {

fs::path corpus() {
  const fs::path dir = fs::temp_directory_path() / "hparse_training_test_corpus";
  if (!fs::exists(dir / "val.json")) {
    SynthSpec s;
    s.image_size = 64;
    s.min_height = 20;
    s.max_height = 30;
    s.train_size = 8;
    s.val_size = 4;
    s.seed = 11;
    write_corpus(generate_dataset(s), s, dir);
  }
  return dir;
}

TrainConfig tiny_config(const std::string& name, int iterations) {
  TrainConfig c;
  c.model.C = 16;
  c.model.D = 16;
  c.model.N = 6;
  c.model.L = 3;
  c.model.M = 1;
  c.model.K_top = 3;
  c.model.heads = 2;
  c.model.ffn = 32;
  c.model.decoder_layers = 2;
  c.batch_size = 2;
  c.iterations = iterations;
  c.lr = 1e-3;
  c.seed = 5;
  c.train_path = (corpus() / "train.json").string();
  c.val_path = (corpus() / "val.json").string();
  c.out_dir = (fs::temp_directory_path() / ("hparse_training_test_" + name)).string();
  fs::remove_all(c.out_dir);
  return c;
}

void expect_same_parameters(HierParser& a, HierParser& b) {
  auto pa = a->named_parameters(), pb = b->named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (const auto& p : pa) EXPECT_TRUE(torch::equal(p.value(), pb[p.key()])) << p.key();
}

struct SingleThread : ::testing::Test {
  void SetUp() override { torch::set_num_threads(1); }
};

}  // namespace

TEST(TrainConfigTest, MilestonesScaleWithIterations) {
  TrainConfig c;
  c.iterations = 3000;
  EXPECT_EQ(c.resolved_milestones(), (std::vector<int>{1800, 2400}));
  c.milestones = {100, 50};
  EXPECT_THROW(c.check(), TrainingError);
  c.milestones = {100, 3000};
  EXPECT_THROW(c.check(), TrainingError);
  c.milestones = {100, 200};
  EXPECT_NO_THROW(c.check());
}

TEST(TrainConfigTest, JsonRoundTripAndPartialFiles) {
  TrainConfig c;
  c.lr = 3e-4;
  c.model.L = 7;
  c.milestones = {10, 20};
  const nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  const auto partial = nlohmann::json{{"iterations", 12}}.get<TrainConfig>();
  EXPECT_EQ(partial.iterations, 12);
  EXPECT_EQ(partial.lr, 5e-5);
  EXPECT_EQ(partial.weight_decay, 0.05);
}

TEST_F(SingleThread, ZeroIterationsSavesInitialization) {
  auto cfg = tiny_config("zero", 0);
  const auto r = train_model(cfg);
  EXPECT_TRUE(r.steps.empty());
  EXPECT_TRUE(read_metrics_log(r.metrics).empty());
  auto loaded = load_checkpoint(r.checkpoint);
  torch::manual_seed(cfg.seed);
  auto fresh = build_model(cfg.model, vocabulary_from(load_dataset(cfg.train_path)).vocab);
  expect_same_parameters(loaded.model, fresh);
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "config.json"));
}

TEST_F(SingleThread, SameSeedGivesIdenticalParameters) {
  auto a = train_model(tiny_config("det_a", 4));
  auto b = train_model(tiny_config("det_b", 4));
  auto ma = load_checkpoint(a.checkpoint), mb = load_checkpoint(b.checkpoint);
  expect_same_parameters(ma.model, mb.model);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].second.total, b.steps[i].second.total);
}

TEST_F(SingleThread, LoggedTotalsSatisfyWeightedSum) {
  auto cfg = tiny_config("identity", 5);
  cfg.weights = LossWeights{3, 1, 2, 7};
  cfg.milestones = {2, 4};
  const auto r = train_model(cfg);
  const auto steps = read_metrics_log(r.metrics);
  ASSERT_EQ(steps.size(), 5u);
  for (const auto& [it, b] : steps) EXPECT_NEAR(b.total, total_loss(b, cfg.weights), 1e-6) << it;
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "checkpoint_2.pt"));
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "checkpoint_4.pt"));
}

TEST_F(SingleThread, DivergenceAbortsNamingTheComponent) {
  auto cfg = tiny_config("diverge", 6);
  cfg.lr = 1e30;
  cfg.grad_clip = 0;
  try {
    train_model(cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("non-finite"), std::string::npos) << msg;
    EXPECT_NE(msg.find("L_"), std::string::npos) << msg;
  }
}

TEST_F(SingleThread, CheckpointReloadReproducesEvaluation) {
  auto cfg = tiny_config("reload", 3);
  VocabMap vm = vocabulary_from(load_dataset(cfg.train_path));
  const auto val = load_split(cfg.val_path, align_vocabulary(vm.vocab, load_dataset(cfg.val_path)));
  nlohmann::json live;
  const auto r = train_model(cfg, [&](HierParser& m, int) {
    live = to_json(evaluate_model(m, val, align_vocabulary(vm.vocab, val.dataset)));
    return live;
  });
  auto loaded = load_checkpoint(r.checkpoint);
  const auto again = to_json(evaluate_model(loaded.model, val, align_vocabulary(loaded.model->vocab, val.dataset)));
  EXPECT_EQ(again, live);
  EXPECT_EQ(loaded.train_config.at("iterations"), 3);
}

TEST(LoadSplit, NormalizedTargets) {
  const auto vm = vocabulary_from(load_dataset(corpus() / "train.json"));
  const auto s = load_split(corpus() / "train.json", vm);
  EXPECT_EQ(s.images.sizes(), (std::vector<std::int64_t>{8, 3, 64, 64}));
  for (const auto& t : s.targets) {
    EXPECT_GE(t.object.size(), 1);
    EXPECT_TRUE(t.object.boxes.min().item<double>() >= 0 && t.object.boxes.max().item<double>() <= 1);
    EXPECT_EQ(t.object.masks.size(1), 16);
    EXPECT_TRUE(t.part.has_mask.all().item<bool>());
  }
  // a gray-valued pixel maps into [-2, 2]
  EXPECT_LE(s.images.abs().max().item<double>(), 2.0);
}

TEST(MetricsLogTest, RejectsNonIncreasingSteps) {
  const auto path = fs::temp_directory_path() / "hparse_metrics_order.jsonl";
  MetricsLog log(path);
  log.log_step(1, 0.1, {}, 0);
  EXPECT_THROW(log.log_step(1, 0.1, {}, 0), TrainingError);
  log.log_eval(1, {});
  EXPECT_THROW(log.log_eval(0, {}), TrainingError);
}

TEST(Gradcheck, LinearAtNoiseFloor) { EXPECT_LT(gradcheck("linear", 5, 0).max_rel_error, 1e-8); }

TEST(Gradcheck, RestrictionTwentyTrials) {
  const auto r = gradcheck("res", 20, 1);
  EXPECT_EQ(r.trials, 20);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Gradcheck, ComponentsAndTotal) {
  double worst = 0;
  for (const char* c : {"cls", "box", "mask", "res"}) worst = std::max(worst, gradcheck(c, 5, 2).max_rel_error);
  EXPECT_LT(worst, 1e-3);
  EXPECT_LT(gradcheck("total", 3, 2).max_rel_error, 1e-3);
  EXPECT_THROW(gradcheck("bogus", 1, 0), TrainingError);
}

TEST(Oracle, RowCountsFollowGroundTruthObjects) {
  torch::manual_seed(0);
  auto cfg = tiny_config("oracle_rows", 0);
  const auto vm = vocabulary_from(load_dataset(cfg.train_path));
  auto model = build_model(cfg.model, vm.vocab);
  const auto s = load_split(cfg.train_path, vm);
  torch::NoGradGuard g;
  for (std::size_t i = 0; i < s.targets.size(); ++i) {
    const auto r = oracle_obj_parse(model, s.images[static_cast<std::int64_t>(i)], s.targets[i].object);
    EXPECT_EQ(r.parts.logits.size(1), s.targets[i].object.size() * cfg.model.L);
    EXPECT_EQ(r.allowed.size(0), r.parts.logits.size(1));
  }
  LevelTargets none{torch::zeros({0}, torch::kLong), torch::zeros({0, 4}), torch::zeros({0, 16, 16}),
                    torch::zeros({0}, torch::kBool)};
  EXPECT_EQ(oracle_obj_parse(model, s.images[0], none).parts.logits.size(1), 0);
  // a single object parses into exactly L rows, restricted to its own parts
  auto one = s.targets[0].object;
  one = LevelTargets{one.labels.slice(0, 0, 1), one.boxes.slice(0, 0, 1), one.masks.slice(0, 0, 1),
                     one.has_mask.slice(0, 0, 1)};
  const auto r = oracle_obj_parse(model, s.images[0], one);
  ASSERT_EQ(r.parts.logits.size(1), cfg.model.L);
  const int label = static_cast<int>(one.labels[0].item<std::int64_t>());
  for (std::size_t k = 0; k < vm.vocab.part_parent.size(); ++k)
    EXPECT_EQ(r.allowed[0][static_cast<std::int64_t>(k)].item<bool>(), vm.vocab.part_parent[k] == label);
}
