#include <gtest/gtest.h>

#include <functional>
#include <numeric>
#include <random>

#include "hparse/geometry.hpp"

using namespace hparse;

namespace {

Mask random_mask(std::mt19937& rng, int h, int w, double density) {
  std::bernoulli_distribution on(density);
  Mask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (on(rng)) m.set(y, x);
  return m;
}

Mask square(int h, int w, int y0, int x0, int size) {
  Mask m(h, w);
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) m.set(y, x);
  return m;
}

Box random_box(std::mt19937& rng, double extent) {
  std::uniform_real_distribution<double> u(0.0, extent);
  double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
  return {std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
}

// Counts covered cells of a fine grid over [0, extent)^2.
double rasterized_giou(const Box& a, const Box& b, double extent, int cells) {
  const double step = extent / cells;
  const Box hull{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
  double inter = 0, uni = 0, enclosed = 0;
  for (int i = 0; i < cells; ++i) {
    const double y = (i + 0.5) * step;
    for (int j = 0; j < cells; ++j) {
      const double x = (j + 0.5) * step;
      auto in = [&](const Box& r) { return x >= r.x1 && x < r.x2 && y >= r.y1 && y < r.y2; };
      const bool ia = in(a), ib = in(b);
      inter += ia && ib;
      uni += ia || ib;
      enclosed += in(hull);
    }
  }
  if (enclosed == 0) return 0.0;
  return (uni > 0 ? inter / uni : 0.0) - (enclosed - uni) / enclosed;
}

// Union-find labeling; independent of the BFS used by connected_components.
int union_find_count(const Mask& m) {
  const int h = m.height(), w = m.width();
  std::vector<int> parent(static_cast<std::size_t>(h) * w);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int i) { return parent[i] == i ? i : parent[i] = find(parent[i]); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m.at(y, x)) continue;
      if (x + 1 < w && m.at(y, x + 1)) parent[find(y * w + x)] = find(y * w + x + 1);
      if (y + 1 < h && m.at(y + 1, x)) parent[find(y * w + x)] = find((y + 1) * w + x);
    }
  int roots = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (m.at(y, x) && find(y * w + x) == y * w + x) ++roots;
  return roots;
}

}  // namespace

TEST(BoxIou, AnalyticCases) {
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 1, 1}, {5, 5, 6, 6}), 0.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(box_iou({1, 1, 1, 1}, {1, 1, 1, 1}), 0.0);
}

TEST(GeneralizedIou, AnalyticCases) {
  EXPECT_DOUBLE_EQ(generalized_iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_NEAR(generalized_iou({0, 0, 1, 1}, {2, 0, 3, 1}), -1.0 / 3.0, 1e-15);
}

TEST(GeneralizedIou, MatchesRasterizedEstimate) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    Box a = random_box(rng, 10.0), b = random_box(rng, 10.0);
    if (a.area() < 1.0 || b.area() < 1.0) continue;
    EXPECT_NEAR(generalized_iou(a, b), rasterized_giou(a, b, 10.0, 1000), 0.02) << trial;
  }
}

TEST(BoxIou, AgreesWithMaskIouWhenRasterizedFinely) {
  std::mt19937 rng(11);
  int checked = 0;
  for (int trial = 0; trial < 400 && checked < 20; ++trial) {
    Box a = random_box(rng, 4.0), b = random_box(rng, 4.0);
    if (a.width() < 0.5 || a.height() < 0.5 || b.width() < 0.5 || b.height() < 0.5) continue;
    const double s = 64.0;
    const Box as{a.x1 * s, a.y1 * s, a.x2 * s, a.y2 * s}, bs{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s};
    const double miou = mask_iou(rasterize_box(as, 256, 256), rasterize_box(bs, 256, 256));
    EXPECT_NEAR(box_iou(a, b), miou, 0.02);
    ++checked;
  }
  EXPECT_EQ(checked, 20);
}

TEST(Rle, ColumnMajorWithLeadingZeroRun) {
  Mask m(2, 3);
  m.set(0, 0);
  m.set(1, 2);
  // column-major order: (0,0)=1 (1,0)=0 (0,1)=0 (1,1)=0 (0,2)=0 (1,2)=1
  EXPECT_EQ(rle_encode(m).counts, (std::vector<std::uint32_t>{0, 1, 4, 1}));
  EXPECT_EQ(rle_encode(Mask(2, 2)).counts, (std::vector<std::uint32_t>{4}));
}

TEST(Rle, RoundTripProperty) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 17), w = 1 + static_cast<int>(rng() % 17);
    Mask m = random_mask(rng, h, w, (trial % 5) / 4.0);
    EXPECT_EQ(rle_decode(rle_encode(m)), m);
  }
}

TEST(Rle, RejectsInconsistentRuns) {
  EXPECT_THROW(rle_decode(Rle{2, 2, {1, 2}}), GeometryError);
  EXPECT_THROW(rle_decode(Rle{2, 2, {3, 3}}), GeometryError);
}

TEST(OverlapRatio, AnalyticCases) {
  Mask a = square(20, 20, 0, 0, 10);
  EXPECT_DOUBLE_EQ(overlap_ratio(a, a), 1.0);
  EXPECT_DOUBLE_EQ(overlap_ratio(a, square(20, 20, 10, 10, 5)), 0.0);
  Mask big(10, 10), small(10, 10);
  for (int x = 0; x < 10; ++x) {
    big.set(0, x);
    big.set(1, x);
    small.set(0, x);
  }
  EXPECT_DOUBLE_EQ(overlap_ratio(big, small), 0.5);
  EXPECT_DOUBLE_EQ(overlap_ratio(Mask(4, 4), Mask(4, 4)), 0.0);
  EXPECT_THROW(overlap_ratio(Mask(4, 4), Mask(4, 5)), GeometryError);
}

TEST(OverlapRatio, SymmetricAndBounded) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Mask a = random_mask(rng, 9, 11, 0.3), b = random_mask(rng, 9, 11, 0.6);
    const double r = overlap_ratio(a, b);
    EXPECT_EQ(r, overlap_ratio(b, a));
    const double lo = static_cast<double>(std::min(a.area(), b.area()));
    const double hi = static_cast<double>(std::max(a.area(), b.area()));
    if (hi > 0) EXPECT_LE(r, lo / hi + 1e-15);
  }
}

TEST(MaskUnion, CasesAndInclusionExclusion) {
  Mask a = square(10, 10, 0, 0, 2);
  EXPECT_EQ(mask_union(std::vector<Mask>{a}), a);
  Mask five(10, 10), seven(10, 10);
  for (int x = 0; x < 5; ++x) five.set(0, x);
  for (int x = 0; x < 7; ++x) seven.set(5, x);
  EXPECT_EQ(mask_union(std::vector<Mask>{five, seven}).area(), 12);
  EXPECT_THROW(mask_union(std::vector<Mask>{}), GeometryError);
  EXPECT_THROW(mask_union(std::vector<Mask>{Mask(2, 2), Mask(3, 2)}), GeometryError);

  std::mt19937 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Mask x = random_mask(rng, 8, 8, 0.3), y = random_mask(rng, 8, 8, 0.3), z = random_mask(rng, 8, 8, 0.3);
    auto inter = [](std::initializer_list<const Mask*> ms) {
      std::int64_t n = 0;
      for (int i = 0; i < 64; ++i) {
        bool all = true;
        for (const Mask* m : ms) all = all && m->bits()[i];
        n += all;
      }
      return n;
    };
    const std::int64_t expected = x.area() + y.area() + z.area() - inter({&x, &y}) - inter({&x, &z}) -
                                  inter({&y, &z}) + inter({&x, &y, &z});
    EXPECT_EQ(mask_union(std::vector<Mask>{x, y, z}).area(), expected);
  }
}

TEST(EnclosingBox, CasesAndMinimality) {
  EXPECT_EQ(enclosing_box(std::vector<Box>{{0, 0, 2, 2}, {4, 4, 6, 6}}), (Box{0, 0, 6, 6}));
  EXPECT_EQ(enclosing_box(std::vector<Box>{{1, 2, 3, 4}}), (Box{1, 2, 3, 4}));
  EXPECT_THROW(enclosing_box(std::vector<Box>{}), GeometryError);

  std::mt19937 rng(13);
  const double eps = 1e-9;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Box> boxes(1 + rng() % 6);
    for (auto& b : boxes) b = random_box(rng, 100.0);
    const Box e = enclosing_box(boxes);
    for (const auto& b : boxes) EXPECT_TRUE(e.contains(b));
    const Box shrunk[] = {{e.x1 + eps, e.y1, e.x2, e.y2}, {e.x1, e.y1 + eps, e.x2, e.y2},
                          {e.x1, e.y1, e.x2 - eps, e.y2}, {e.x1, e.y1, e.x2, e.y2 - eps}};
    for (const Box& s : shrunk) {
      bool breaks = false;
      for (const auto& b : boxes) breaks = breaks || !s.contains(b);
      EXPECT_TRUE(breaks);
    }
  }
}

TEST(Erode, CasesAndNaiveOracle) {
  EXPECT_EQ(erode(Mask(6, 6)), Mask(6, 6));
  EXPECT_EQ(erode(square(9, 9, 2, 2, 5)), square(9, 9, 3, 3, 3));
  // zero padding: a full grid loses its border
  Mask full(4, 4, std::vector<std::uint8_t>(16, 1));
  EXPECT_EQ(erode(full), square(4, 4, 1, 1, 2));

  std::mt19937 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    Mask m = random_mask(rng, 10, 12, 0.8);
    Mask naive(10, 12);
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 12; ++x) {
        int set = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            set += (ny >= 0 && nx >= 0 && ny < 10 && nx < 12 && m.at(ny, nx));
          }
        if (set == 9) naive.set(y, x);
      }
    const Mask e = erode(m);
    EXPECT_EQ(e, naive);
    EXPECT_EQ(intersection_area(e, m), e.area());
  }
}

TEST(ConnectedComponents, CasesAndUnionFindOracle) {
  Mask two = mask_union(std::vector<Mask>{square(10, 10, 0, 0, 3), square(10, 10, 5, 5, 3)});
  EXPECT_EQ(connected_components(two).count, 2);
  EXPECT_EQ(connected_components(Mask(5, 5)).count, 0);
  Mask diagonal(2, 2);
  diagonal.set(0, 0);
  diagonal.set(1, 1);
  EXPECT_EQ(connected_components(diagonal).count, 2);

  std::mt19937 rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    Mask m = random_mask(rng, 12, 12, 0.5);
    const Components c = connected_components(m);
    EXPECT_EQ(c.count, union_find_count(m));
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        EXPECT_EQ(c.at(y, x) != 0, m.at(y, x));
        if (x + 1 < 12 && m.at(y, x) && m.at(y, x + 1)) EXPECT_EQ(c.at(y, x), c.at(y, x + 1));
        if (y + 1 < 12 && m.at(y, x) && m.at(y + 1, x)) EXPECT_EQ(c.at(y, x), c.at(y + 1, x));
      }
  }
}

TEST(TightBox, PixelEdges) {
  Mask m(8, 8);
  m.set(2, 3);
  m.set(4, 5);
  EXPECT_EQ(tight_box(m), (Box{3, 2, 6, 5}));
  EXPECT_EQ(tight_box(Mask(3, 3)), Box{});
  EXPECT_EQ(rasterize_box(tight_box(m), 8, 8).area(), 9);
}
