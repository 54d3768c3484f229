#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hparse/dataset.hpp"

using namespace hparse;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "hparse_dataset_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// Two images; "dog" with parts head/leg, "bus" with part wheel.
HierarchicalDataset toy_dataset() {
  HierarchicalDataset d;
  d.images = {{1, 20, 10, "a.png"}, {2, 20, 10, "b.png"}};
  d.categories = {{1, "dog", Level::Object, std::nullopt, Split::Base},
                  {2, "bus", Level::Object, std::nullopt, Split::Base},
                  {3, "dog head", Level::Part, 1, Split::Base},
                  {4, "dog leg", Level::Part, 1, Split::Base},
                  {5, "bus wheel", Level::Part, 2, Split::Base}};
  Mask m(10, 20);
  m.set(1, 1);
  m.set(2, 1);
  d.annotations = {
      {1, 1, 1, {0, 0, 10, 10}, m, Level::Object, std::nullopt},
      {2, 1, 3, {0, 0, 3, 3}, std::nullopt, Level::Part, 1},
      {3, 1, 4, {5, 5, 7, 9}, std::nullopt, Level::Part, 1},
      {4, 2, 2, {2, 2, 18, 8}, std::nullopt, Level::Object, std::nullopt},
      {5, 2, 5, {3, 6, 6, 8}, std::nullopt, Level::Part, 4},
      {6, 2, 5, {12, 6, 15, 8}, std::nullopt, Level::Part, std::nullopt},
  };
  return d;
}

DatasetErrorKind kind_of(const std::string& json_text) {
  auto p = temp_path("bad.json");
  write_file(p, json_text);
  try {
    load_dataset(p);
  } catch (const DatasetError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected DatasetError";
  return DatasetErrorKind::Unwritable;
}

}  // namespace

TEST(Dataset, MinimalFileLoads) {
  auto p = temp_path("minimal.json");
  write_file(p, R"({"images":[{"id":7,"width":4,"height":3,"file_name":"x.ppm"}],
                    "categories":[{"id":1,"name":"cat","level":"object","split":"base"}],
                    "annotations":[{"id":1,"image_id":7,"category_id":1,"bbox":[0,0,2,2],"level":"object"}]})");
  const auto d = load_dataset(p);
  EXPECT_EQ(d.images.size(), 1u);
  EXPECT_EQ(d.categories.size(), 1u);
  EXPECT_EQ(d.annotations.size(), 1u);
  EXPECT_EQ(d.annotations[0].box, (Box{0, 0, 2, 2}));
}

TEST(Dataset, PartCategoryWithoutParentNamesCategory) {
  auto p = temp_path("noparent.json");
  write_file(p, R"({"images":[],"categories":[{"id":1,"name":"cat"},{"id":2,"name":"cat tail","level":"part"}],
                    "annotations":[]})");
  try {
    load_dataset(p);
    FAIL() << "expected validation error";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetErrorKind::InvalidRecord);
    EXPECT_NE(std::string(e.what()).find("cat tail"), std::string::npos);
  }
}

TEST(Dataset, DistinctErrorKinds) {
  EXPECT_THROW(load_dataset(temp_path("does_not_exist.json")), DatasetError);
  try {
    load_dataset(temp_path("does_not_exist.json"));
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetErrorKind::MissingFile);
  }
  EXPECT_EQ(kind_of("{not json"), DatasetErrorKind::Malformed);
  EXPECT_EQ(kind_of(R"({"images":[]})"), DatasetErrorKind::Malformed);
  EXPECT_EQ(kind_of(R"({"images":[],"categories":[{"id":1,"name":"a"}],
                        "annotations":[{"id":1,"image_id":9,"category_id":1,"bbox":[0,0,1,1]}]})"),
            DatasetErrorKind::DanglingReference);
  EXPECT_EQ(kind_of(R"({"images":[{"id":1,"width":5,"height":5}],"categories":[{"id":1,"name":"a"}],
                        "annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[0,0,1,1],"level":"part"}]})"),
            DatasetErrorKind::InvalidRecord);
}

TEST(Dataset, ParentMustBeObjectOnSameImage) {
  auto d = toy_dataset();
  d.annotations[4].parent_annotation_id = 1;  // image 2 part pointing at image 1 object
  EXPECT_THROW(validate(d), DatasetError);
  d = toy_dataset();
  d.annotations[4].parent_annotation_id = 99;
  EXPECT_THROW(validate(d), DatasetError);
}

TEST(Dataset, BoxesClampedToImage) {
  auto d = toy_dataset();
  d.annotations[3].box = {-5, 2, 30, 8};
  validate(d);
  EXPECT_EQ(d.annotations[3].box, (Box{0, 2, 20, 8}));
}

TEST(Dataset, RoundTripIsByteIdentical) {
  auto d = toy_dataset();
  validate(d);
  auto p1 = temp_path("rt1.json"), p2 = temp_path("rt2.json");
  save_dataset(d, p1);
  const auto loaded = load_dataset(p1);
  EXPECT_EQ(loaded, d);
  ASSERT_TRUE(loaded.annotations[0].mask.has_value());
  EXPECT_EQ(*loaded.annotations[0].mask, *d.annotations[0].mask);
  save_dataset(loaded, p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
}

TEST(Dataset, EmptyDatasetRoundTrips) {
  auto p = temp_path("empty.json");
  save_dataset(HierarchicalDataset{}, p);
  const auto j = nlohmann::json::parse(read_file(p));
  EXPECT_TRUE(j.at("images").empty());
  EXPECT_TRUE(j.at("categories").empty());
  EXPECT_TRUE(j.at("annotations").empty());
  EXPECT_EQ(load_dataset(p), HierarchicalDataset{});
}

TEST(Dataset, RandomThousandAnnotationRoundTrip) {
  std::mt19937 rng(42);
  HierarchicalDataset d;
  for (int i = 1; i <= 50; ++i) d.images.push_back({i, 32, 24, "img" + std::to_string(i) + ".ppm"});
  d.categories = {{1, "obj", Level::Object, std::nullopt, Split::Base},
                  {2, "piece", Level::Part, 1, Split::Novel}};
  std::uniform_real_distribution<double> ux(0.0, 32.0), uy(0.0, 24.0);
  std::vector<Id> object_of_image(51, 0);
  for (int id = 1; id <= 1000; ++id) {
    AnnotationRecord a;
    a.id = id;
    a.image_id = 1 + static_cast<Id>(rng() % 50);
    const bool part = object_of_image[a.image_id] != 0 && rng() % 2;
    a.level = part ? Level::Part : Level::Object;
    a.category_id = part ? 2 : 1;
    // xywh storage is exact for dyadic coordinates
    auto q = [](double v) { return std::round(v * 256.0) / 256.0; };
    double x1 = q(ux(rng)), x2 = q(ux(rng)), y1 = q(uy(rng)), y2 = q(uy(rng));
    a.box = {std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
    if (rng() % 2) {
      Mask m(24, 32);
      for (int k = 0; k < 40; ++k) m.set(static_cast<int>(rng() % 24), static_cast<int>(rng() % 32));
      a.mask = m;
    }
    if (part && rng() % 3) a.parent_annotation_id = object_of_image[a.image_id];
    if (!part) object_of_image[a.image_id] = id;
    d.annotations.push_back(std::move(a));
  }
  validate(d);
  auto p = temp_path("random.json");
  save_dataset(d, p);
  auto loaded = load_dataset(p);
  ASSERT_EQ(loaded.annotations.size(), d.annotations.size());
  for (std::size_t i = 0; i < d.annotations.size(); ++i) EXPECT_EQ(loaded.annotations[i], d.annotations[i]) << i;
  EXPECT_EQ(loaded, d);
  // validation is idempotent
  EXPECT_NO_THROW(validate(loaded));
  EXPECT_EQ(loaded, d);
}

TEST(Dataset, UnwritablePath) {
  EXPECT_THROW(save_dataset(HierarchicalDataset{}, "/nonexistent_dir/x/y.json"), DatasetError);
}

TEST(SplitBaseNovel, EmptyNovelSetKeepsEverything) {
  auto d = std::make_shared<const HierarchicalDataset>(toy_dataset());
  const auto s = split_base_novel(d, {});
  EXPECT_EQ(s.train.materialize(), *d);
  EXPECT_EQ(s.eval.size(), d->annotations.size());
}

TEST(SplitBaseNovel, AllPartsNovelLeavesObjects) {
  auto d = std::make_shared<const HierarchicalDataset>(toy_dataset());
  const auto s = split_base_novel(d, {"dog head", "dog leg", "bus wheel"});
  for (std::size_t i = 0; i < s.train.size(); ++i) EXPECT_EQ(s.train.annotation(i).level, Level::Object);
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(s.eval.size(), 6u);
  EXPECT_EQ(&s.train.images(), &s.eval.images());
}

TEST(SplitBaseNovel, CountingOracleAndPartition) {
  auto d = std::make_shared<const HierarchicalDataset>(toy_dataset());
  const HierarchicalDataset before = *d;
  const std::set<std::string> novel = {"bus wheel", "dog leg"};
  const auto s = split_base_novel(d, novel);

  std::size_t novel_count = 0;
  for (const auto& a : d->annotations) {
    const auto* c = d->find_category(a.category_id);
    novel_count += novel.contains(c->name);
  }
  EXPECT_EQ(novel_count, 3u);
  EXPECT_EQ(s.train.size(), d->annotations.size() - novel_count);
  EXPECT_EQ(*d, before);

  std::multiset<Id> kept_parts, all_parts;
  for (std::size_t i = 0; i < s.train.size(); ++i)
    if (s.train.annotation(i).level == Level::Part) kept_parts.insert(s.train.annotation(i).id);
  for (const auto& a : d->annotations) {
    if (a.level != Level::Part) continue;
    all_parts.insert(a.id);
    if (s.novel_category_ids.contains(a.category_id)) kept_parts.insert(a.id);
  }
  EXPECT_EQ(kept_parts, all_parts);
}

TEST(SplitBaseNovel, UnknownNameListed) {
  auto d = std::make_shared<const HierarchicalDataset>(toy_dataset());
  try {
    split_base_novel(d, {"dog head", "unicorn horn"});
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("unicorn horn"), std::string::npos);
  }
}
