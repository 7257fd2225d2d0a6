#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace mdp {
namespace {

GrayImage random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.1f, 0.9f);
  GrayImage img(w, h);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

GrayImage crop(const GrayImage& img, int x0, int y0, int w, int h) {
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.at(x, y) = img.at(x0 + x, y0 + y);
  }
  return out;
}

TEST(Ncc, ExactCopyPeaksAtItsOffset) {
  const GrayImage search = random_image(40, 30, 1);
  const GrayImage templ = crop(search, 13, 9, 8, 6);
  const ScoreMap m = ncc_response(templ, search);
  EXPECT_EQ(m.width, 33);
  EXPECT_EQ(m.height, 25);
  EXPECT_NEAR(m.at(13, 9), 1.0, 1e-9);
  EXPECT_EQ(m.argmax(), (std::pair<int, int>{13, 9}));
  for (double v : m.values) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Ncc, ConstantTemplateGivesFlaggedZeroMap) {
  const ScoreMap m = ncc_response(GrayImage(5, 5, 0.3f), random_image(20, 20, 2));
  EXPECT_TRUE(m.degenerate);
  for (double v : m.values) EXPECT_EQ(v, 0.0);
}

TEST(Ncc, NegatedRegionGivesMinusOne) {
  GrayImage search = random_image(30, 30, 3);
  const GrayImage templ = crop(search, 4, 4, 7, 7);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 7; ++x) search.at(20 + x, 18 + y) = 1.0f - templ.at(x, y);
  }
  const ScoreMap m = ncc_response(templ, search);
  EXPECT_NEAR(m.at(20, 18), -1.0, 1e-6);
  EXPECT_NEAR(*std::min_element(m.values.begin(), m.values.end()), -1.0, 1e-6);
}

TEST(Ncc, InvariantUnderPositiveAffineIntensity) {
  const GrayImage search = random_image(32, 24, 4);
  const GrayImage templ = random_image(6, 5, 5);
  GrayImage scaled = search;
  for (auto& v : scaled.data()) v = 0.4f * v + 0.2f;
  GrayImage templ2 = templ;
  for (auto& v : templ2.data()) v = 0.5f * v + 0.3f;
  const ScoreMap a = ncc_response(templ, search);
  const ScoreMap b = ncc_response(templ2, scaled);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-5);
}

TEST(Ncc, PatchOverloadCorrelatesObjectRegion) {
  testing::BlobField field = testing::BlobField::random(200, 340, 700, 9);
  const GrayImage img = field.raster(200, 340);
  const RoiParams roi;
  const Patch p = extract_roi(img, {60, 140, 45, 60}, roi);
  const ScoreMap m = ncc_response(p, p);
  EXPECT_EQ(m.argmax(), (std::pair<int, int>{roi.border_x, roi.border_y}));
  EXPECT_NEAR(m.at(roi.border_x, roi.border_y), 1.0, 1e-6);
}

TEST(Ncc, TemplateLargerThanSearchThrows) {
  EXPECT_THROW(ncc_response(GrayImage(10, 10), GrayImage(5, 20)), ContractViolation);
}

TEST(RowColMax, Examples) {
  EXPECT_EQ(rowcol_max(ScoreMap(2, 2, {1, 2, 3, 4})).values, (std::vector<double>{2, 4, 3, 4}));
  EXPECT_EQ(rowcol_max(ScoreMap(3, 2, 0.7)).values, std::vector<double>(5, 0.7));
  EXPECT_EQ(rowcol_max(ScoreMap(1, 1, {0.25})).values, (std::vector<double>{0.25, 0.25}));
}

TEST(TopK, SingleIsGlobalMax) {
  EXPECT_EQ(topk_nms(ScoreMap(2, 2, {1, 5, 3, 4}), 1, 0).values, (std::vector<double>{5}));
}

TEST(TopK, SuppressesNeighbourOfAcceptedPeak) {
  ScoreMap m(5, 5, 0.0);
  m.at(1, 1) = 0.9;
  m.at(2, 1) = 0.8;  // adjacent to the first peak
  m.at(4, 4) = 0.5;
  EXPECT_EQ(topk_nms(m, 2, 1).values, (std::vector<double>{0.9, 0.5}));
  EXPECT_EQ(topk_nms(m, 2, 0).values, (std::vector<double>{0.9, 0.8}));
}

TEST(TopK, PadsWithZeros) {
  const ScoreMap m(3, 3, {0.1, 0.2, 0.3, 0.4, 0.9, 0.5, 0.6, 0.7, 0.8});
  EXPECT_EQ(topk_nms(m, 4, 3).values, (std::vector<double>{0.9, 0, 0, 0}));
  EXPECT_THROW(topk_nms(m, 0, 1), ContractViolation);
}

TEST(RingStats, ConstantMap) {
  const std::vector<double> radii = {1, 2, 4};
  const FeatureVector f = ring_stats(ScoreMap(9, 9, 0.4), radii);
  ASSERT_EQ(f.size(), 12u);
  for (double v : f.values) EXPECT_DOUBLE_EQ(v, 0.4);
}

TEST(RingStats, DeltaPeak) {
  ScoreMap m(9, 9, 0.0);
  m.at(4, 4) = 1.0;
  const std::vector<double> radii = {1, 3};
  const FeatureVector f = ring_stats(m, radii);
  // Center disc: the peak plus its 4 axis neighbours.
  EXPECT_DOUBLE_EQ(f[0], 0.2);
  EXPECT_DOUBLE_EQ(f[1], 0.0);
  EXPECT_DOUBLE_EQ(f[2], 0.0);
  EXPECT_DOUBLE_EQ(f[3], 1.0);
  for (std::size_t i = 4; i < 8; ++i) EXPECT_DOUBLE_EQ(f[i], 0.0);
}

TEST(RingStats, CornerArgmaxAndEmptyRings) {
  ScoreMap m(3, 3, 0.1);
  m.at(0, 0) = 1.0;
  const std::vector<double> radii = {1, 2, 10, 20};
  const FeatureVector f = ring_stats(m, radii);
  ASSERT_EQ(f.size(), 16u);
  EXPECT_DOUBLE_EQ(f[3], 1.0);
  for (std::size_t i = 12; i < 16; ++i) EXPECT_DOUBLE_EQ(f[i], 0.0);
  const std::vector<double> bad = {2, 1};
  EXPECT_THROW(ring_stats(m, bad), ContractViolation);
}

TEST(RingStats, ArgmaxInvariantUnderAffineRescaling) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  ScoreMap m(11, 7);
  for (auto& v : m.values) v = u(rng);
  ScoreMap scaled = m;
  for (auto& v : scaled.values) v = 3.0 * v + 2.0;
  EXPECT_EQ(m.argmax(), scaled.argmax());
  const std::vector<double> radii = {1.5, 3};
  const FeatureVector a = ring_stats(m, radii), b = ring_stats(scaled, radii);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 3.0 * a[i] + 2.0, 1e-12);
}

TEST(Extractors, LengthDependsOnlyOnShape) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  const std::vector<double> radii = {1, 2, 3};
  for (int i = 0; i < 10; ++i) {
    ScoreMap m(6, 4);
    for (auto& v : m.values) v = u(rng);
    EXPECT_EQ(rowcol_max(m).size(), 10u);
    EXPECT_EQ(topk_nms(m).size(), 10u);
    EXPECT_EQ(ring_stats(m, radii).size(), 12u);
  }
}

TEST(ActiveFeatures, Examples) {
  const ImageExtent img{200, 100};
  const FeatureVector full = active_features({1, {0, 0, 200, 100}, 1.0}, img);
  EXPECT_EQ(full.tag, FeatureKind::Active);
  EXPECT_EQ(full.values, (std::vector<double>{0, 0, 1, 1, 2.0, 1.0}));
  const FeatureVector half = active_features({1, {50, 25, 100, 50}, 0.0}, img);
  EXPECT_DOUBLE_EQ(half[0], 0.25);
  EXPECT_DOUBLE_EQ(half[1], 0.25);
  EXPECT_DOUBLE_EQ(half[2], 0.5);
  EXPECT_DOUBLE_EQ(half[3], 0.5);
  EXPECT_DOUBLE_EQ(half[5], 0.0);
  EXPECT_EQ(half.size(), kActiveFeatureDim);
}

TEST(LostFeatures, PerfectTrack) {
  TrackResult r;
  r.success = true;
  r.median_fb = 0.0;
  r.median_ncc = 1.0;
  const BoundingBox b{10, 10, 20, 40};
  const FeatureVector f = lost_features(r, b, {1, b, 0.7}, {100, 100});
  EXPECT_EQ(f.size(), kLostFeatureDim);
  EXPECT_EQ(f.values, (std::vector<double>{1, 1, 1, 1, 1, 1, 0.7}));
}

TEST(LostFeatures, FailedTrackZeroesTrackingEntries) {
  TrackResult r;
  r.success = false;
  r.median_fb = 0.1;
  r.median_ncc = 0.9;
  const BoundingBox b{10, 10, 20, 40};
  const FeatureVector f = lost_features(r, b, {1, b, 0.7}, {100, 100});
  EXPECT_EQ(f[0], 0.0);
  EXPECT_EQ(f[1], 0.0);
  EXPECT_EQ(f[4], 1.0);
}

TEST(LostFeatures, DisjointDetection) {
  TrackResult r;
  const FeatureVector f = lost_features(r, {0, 0, 10, 20}, {1, {50, 0, 5, 10}, 0.5}, {100, 100});
  EXPECT_EQ(f[2], 0.5);
  EXPECT_EQ(f[3], 0.5);
  EXPECT_EQ(f[4], 0.0);
  EXPECT_LT(f[5], 1.0);
  EXPECT_GT(f[5], 0.0);
}

}  // namespace
}  // namespace mdp
