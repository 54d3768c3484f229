#include <gtest/gtest.h>

#include <random>

#include "hparse/metrics.hpp"

using namespace hparse;

namespace {

// Max precision at recall >= r over all ranks, averaged on the 101 recall points.
double brute_force_ap(const std::vector<bool>& tp_sorted, int num_gt) {
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double best = 0.0;
    int tp = 0;
    for (std::size_t i = 0; i < tp_sorted.size(); ++i) {
      tp += tp_sorted[i];
      const double recall = double(tp) / num_gt;
      const double precision = double(tp) / double(i + 1);
      if (recall >= r - 1e-12) best = std::max(best, precision);
    }
    sum += best;
  }
  return sum / 101.0;
}

AnnotationRecord gt(Id id, Id image, Id cat, Box b) { return {id, image, cat, b, std::nullopt, Level::Object, std::nullopt}; }

Detection det(Id image, Id cat, double score, Box b) { return {image, cat, score, b, std::nullopt}; }

}  // namespace

TEST(EvaluateMap, PerfectPredictionsScoreOne) {
  std::vector<AnnotationRecord> gts = {gt(1, 1, 1, {0, 0, 10, 10}), gt(2, 1, 2, {20, 20, 30, 40}),
                                       gt(3, 2, 1, {5, 5, 9, 9})};
  std::vector<Detection> dets;
  for (const auto& g : gts) dets.push_back(det(g.image_id, g.category_id, 1.0, g.box));
  const std::vector<Id> cats = {1, 2};
  const auto r = evaluate_map(dets, gts, cats, IouType::Box);
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
  EXPECT_DOUBLE_EQ(r.ap50, 1.0);
  EXPECT_EQ(r.num_categories, 2);
}

TEST(EvaluateMap, NoPredictionsScoreZero) {
  std::vector<AnnotationRecord> gts = {gt(1, 1, 1, {0, 0, 10, 10})};
  const std::vector<Id> cats = {1, 7};
  const auto r = evaluate_map(std::vector<Detection>{}, gts, cats, IouType::Box);
  EXPECT_DOUBLE_EQ(r.ap, 0.0);
  EXPECT_EQ(r.num_categories, 1);  // category 7 has no ground truth
}

TEST(EvaluateMap, MaskIou) {
  Mask m(8, 8);
  for (int x = 0; x < 4; ++x) m.set(2, x);
  AnnotationRecord g = gt(1, 1, 1, tight_box(m));
  g.mask = m;
  Detection d = det(1, 1, 0.9, tight_box(m));
  d.mask = m;
  const std::vector<Id> cats = {1};
  EXPECT_DOUBLE_EQ(evaluate_map(std::vector<Detection>{d}, std::vector<AnnotationRecord>{g}, cats, IouType::Mask).ap, 1.0);
  d.mask = Mask(8, 8);
  EXPECT_DOUBLE_EQ(evaluate_map(std::vector<Detection>{d}, std::vector<AnnotationRecord>{g}, cats, IouType::Mask).ap, 0.0);
}

TEST(EvaluateMap, CraftedTpFpMatchesBruteForce) {
  std::vector<AnnotationRecord> gts = {gt(1, 1, 1, {0, 0, 10, 10})};
  const std::vector<Id> cats = {1};
  std::vector<Detection> dets = {det(1, 1, 0.9, {0, 0, 10, 10}), det(1, 1, 0.5, {50, 50, 60, 60})};
  EXPECT_NEAR(evaluate_map(dets, gts, cats, IouType::Box).ap50, brute_force_ap({true, false}, 1), 1e-6);
  EXPECT_NEAR(evaluate_map(dets, gts, cats, IouType::Box).ap50, 1.0, 1e-12);
  dets.push_back(det(1, 1, 0.95, {40, 0, 45, 5}));
  const double with_fp = evaluate_map(dets, gts, cats, IouType::Box).ap50;
  EXPECT_NEAR(with_fp, brute_force_ap({false, true, false}, 1), 1e-6);
  EXPECT_NEAR(with_fp, 0.5, 1e-12);
}

TEST(EvaluateMap, RandomScenesMatchBruteForceAp50) {
  std::mt19937 rng(53);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<AnnotationRecord> gts;
    std::vector<Detection> dets;
    std::vector<std::pair<double, bool>> ranked;  // single image: greedy by score
    const int n_gt = 1 + static_cast<int>(rng() % 4);
    for (int g = 0; g < n_gt; ++g) gts.push_back(gt(g + 1, 1, 1, {g * 20.0, 0, g * 20.0 + 10, 10}));
    std::vector<double> scores;
    for (int k = 0; k < 6; ++k) scores.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
    std::vector<bool> taken(n_gt, false);
    std::vector<int> order(6);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    std::vector<int> target(6);
    for (int k = 0; k < 6; ++k) target[k] = static_cast<int>(rng() % (n_gt + 1)) - 1;  // -1 = background box
    for (int k = 0; k < 6; ++k) {
      const Box b = target[k] < 0 ? Box{200, 200, 210, 210} : gts[target[k]].box;
      dets.push_back(det(1, 1, scores[k], b));
    }
    std::vector<bool> tp_sorted;
    for (int k : order) {
      const bool hit = target[k] >= 0 && !taken[target[k]];
      if (hit) taken[target[k]] = true;
      tp_sorted.push_back(hit);
    }
    const std::vector<Id> cats = {1};
    EXPECT_NEAR(evaluate_map(dets, gts, cats, IouType::Box).ap50, brute_force_ap(tp_sorted, n_gt), 1e-6);
  }
}

TEST(EvaluateMap, MonotoneUnderTopTpAndBottomFp) {
  std::vector<AnnotationRecord> gts = {gt(1, 1, 1, {0, 0, 10, 10}), gt(2, 1, 1, {20, 0, 30, 10}),
                                       gt(3, 1, 1, {40, 0, 50, 10})};
  std::vector<Detection> dets = {det(1, 1, 0.8, {0, 0, 10, 10}), det(1, 1, 0.7, {70, 0, 80, 10}),
                                 det(1, 1, 0.6, {20, 0, 30, 10})};
  const std::vector<Id> cats = {1};
  const auto base = evaluate_map(dets, gts, cats, IouType::Box);
  auto with_tp = dets;
  with_tp.push_back(det(1, 1, 0.99, {40, 0, 50, 10}));
  EXPECT_GE(evaluate_map(with_tp, gts, cats, IouType::Box).ap, base.ap);
  auto with_fp = dets;
  with_fp.push_back(det(1, 1, 0.01, {90, 90, 95, 95}));
  EXPECT_LE(evaluate_map(with_fp, gts, cats, IouType::Box).ap50, base.ap50);
}

TEST(HarmonicMiou, Values) {
  EXPECT_NEAR(harmonic_miou(51.29, 35.33), 41.83, 0.02);
  EXPECT_DOUBLE_EQ(harmonic_miou(37.5, 37.5), 37.5);
  EXPECT_NEAR(harmonic_miou(55.28, 52.14), 2 * 55.28 * 52.14 / (55.28 + 52.14), 1e-12);
  EXPECT_NEAR(harmonic_miou(55.28, 52.14), 53.66, 0.01);
  EXPECT_DOUBLE_EQ(harmonic_miou(0, 0), 0.0);
  std::mt19937 rng(59);
  for (int i = 0; i < 100; ++i) {
    const double s = std::uniform_real_distribution<double>(0, 100)(rng);
    const double u = std::uniform_real_distribution<double>(0, 100)(rng);
    const double h = harmonic_miou(s, u);
    EXPECT_LE(h, 2 * std::min(s, u) + 1e-12);
    EXPECT_LE(h, std::max(s, u) + 1e-12);
  }
}

TEST(MiouBySplit, PerfectBackgroundAndCrafted) {
  std::vector<CategoryRecord> cats = {{1, "a", Level::Part, 9, Split::Base}, {2, "b", Level::Part, 9, Split::Novel}};
  LabelMap g{4, 4, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 2, 2, 0, 0, 2, 2}};
  auto r = miou_by_split(std::vector<LabelMap>{g}, std::vector<LabelMap>{g}, cats);
  EXPECT_DOUBLE_EQ(r.seen, 100.0);
  EXPECT_DOUBLE_EQ(r.unseen, 100.0);
  r = miou_by_split(std::vector<LabelMap>{LabelMap{4, 4, std::vector<int>(16, 0)}}, std::vector<LabelMap>{g}, cats);
  EXPECT_DOUBLE_EQ(r.seen, 0.0);
  EXPECT_DOUBLE_EQ(r.unseen, 0.0);

  // category 1: pred covers 3 of 4 gt pixels + 1 extra -> I=3, U=5; category 2: pred 2 of 4 -> I=2, U=4
  LabelMap p{4, 4, {1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 2, 0, 0, 0, 2, 0}};
  r = miou_by_split(std::vector<LabelMap>{p}, std::vector<LabelMap>{g}, cats);
  EXPECT_NEAR(r.seen, 60.0, 1e-12);
  EXPECT_NEAR(r.unseen, 50.0, 1e-12);
  EXPECT_THROW(miou_by_split(std::vector<LabelMap>{LabelMap{2, 2, {0, 0, 0, 0}}}, std::vector<LabelMap>{g}, cats),
               MetricsError);
}

TEST(NovelApIncrement, Values) {
  const std::set<Id> split = {3, 4};
  EXPECT_NEAR(novel_ap_increment({2.1, split}, {5.8, split}), 3.7, 1e-12);
  EXPECT_NEAR(novel_ap_increment({5.8, split}, {15.5, split}), 9.7, 1e-12);
  EXPECT_DOUBLE_EQ(novel_ap_increment({4.0, split}, {4.0, split}), 0.0);
  EXPECT_THROW(novel_ap_increment({1.0, split}, {2.0, {3}}), MetricsError);
}

TEST(EvalReport, SerializesHiouOnlyWithBothSplits) {
  EvalReport r;
  r.miou = SplitMiou{50.0, 0.0, 2, 0};
  EXPECT_FALSE(to_json(r)["miou"].contains("hIoU"));
  r.miou = SplitMiou{51.29, 35.33, 2, 1};
  EXPECT_NEAR(to_json(r)["miou"]["hIoU"].get<double>(), 41.83, 0.02);
  EXPECT_NE(to_table(r).find("object,box,all"), std::string::npos);
}
