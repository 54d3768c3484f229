#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hparse/cli.hpp"
#include "hparse/dataset.hpp"

using namespace hparse;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = HPARSE_FIXTURE_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "hparse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("hparse_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  const auto r = run({"synth", "--bogus-flag"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--component", "nothing"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, RuntimeFailureExitsOne) {
  const auto r = run({"eval", "--dataset", "/nonexistent/val.json", "--predictions", "/nonexistent/p.json", "--out",
                      scratch("missing").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, SynthIsDeterministicForOneSeed) {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  const auto spec = (kFixtures / "mini" / "spec.json").string();
  ASSERT_EQ(run({"synth", "--config", spec, "--seed", "3", "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"synth", "--config", spec, "--seed", "3", "--out", b.string()}).code, 0);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
  }
  const auto c = scratch("synth_c");
  ASSERT_EQ(run({"synth", "--config", spec, "--seed", "4", "--out", c.string()}).code, 0);
  EXPECT_NE(slurp(a / "train.json"), slurp(c / "train.json"));
}

TEST(Cli, EvalPerfectPredictionsReportsFullAp) {
  const auto out = scratch("eval_perfect");
  const auto r = run({"eval", "--dataset", (kFixtures / "mini" / "val.json").string(), "--predictions",
                      (kFixtures / "mini" / "perfect_predictions.json").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(out / "report.json");
  const auto j = nlohmann::json::parse(in);
  for (const char* level : {"object", "part"})
    for (const char* type : {"box", "mask"}) {
      EXPECT_DOUBLE_EQ(j[level][type]["AP"].get<double>(), 100.0) << level << " " << type;
      EXPECT_DOUBLE_EQ(j[level][type]["AP50"].get<double>(), 100.0);
    }
  EXPECT_TRUE(fs::exists(out / "report.csv"));
}

TEST(Cli, UnifyNestedMasksMatchesRecordedHierarchy) {
  const auto out = scratch("unify_nested");
  const auto r = run({"unify", "--mode", "overlap", "--input", (kFixtures / "nested" / "masks.json").string(), "--out",
                      out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_dataset(out / "hierarchy.json"), load_dataset(kFixtures / "nested" / "expected.json"));
}

TEST(Cli, UnifyMergeAndAttachRebuildSyntheticLinks) {
  // drop objects, keep part groups: merging reconstructs the object records exactly
  auto d = load_dataset(kFixtures / "mini" / "train.json");
  HierarchicalDataset parts_only = d;
  std::erase_if(parts_only.annotations, [](const auto& a) { return a.level == Level::Object; });
  const auto dir = scratch("unify_merge");
  fs::create_directories(dir);
  save_dataset(parts_only, dir / "parts.json");
  ASSERT_EQ(run({"unify", "--mode", "merge-parts", "--input", (dir / "parts.json").string(), "--out", dir.string()}).code, 0);
  EXPECT_EQ(load_dataset(dir / "hierarchy.json"), d);

  HierarchicalDataset unlinked = d;
  for (auto& a : unlinked.annotations) a.parent_annotation_id.reset();
  save_dataset(unlinked, dir / "unlinked.json");
  const auto out2 = dir / "attach";
  ASSERT_EQ(run({"unify", "--mode", "attach", "--input", (dir / "unlinked.json").string(), "--out", out2.string()}).code, 0);
  EXPECT_EQ(load_dataset(out2 / "hierarchy.json"), d);
}

TEST(Cli, GradcheckAndVisualize) {
  const auto out = scratch("grad");
  const auto r = run({"gradcheck", "--component", "res", "--trials", "5", "--seed", "2", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_LT(j["max_rel_error"].get<double>(), 1e-3);
  EXPECT_TRUE(fs::exists(out / "gradcheck.json"));

  const auto vis = scratch("vis");
  ASSERT_EQ(run({"visualize", "--dataset", (kFixtures / "mini" / "train.json").string(), "--image-id", "1", "--out",
                 vis.string()})
                .code,
            0);
  EXPECT_EQ(slurp(vis / "1.ppm"), slurp(kFixtures / "golden_overlay.ppm"));
}
