#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace mdp {
namespace {

ScenarioConfig one_target(double speed) {
  ScenarioConfig c;
  c.extent = {400, 300};
  c.frames = 30;
  c.targets = 1;
  c.layout = Layout::Lanes;
  c.speed_min = c.speed_max = speed;
  c.height_min = c.height_max = 60;
  return c;
}

TEST(GenerateGt, NoiseFreeTargetMovesLinearly) {
  const Scenario sc = generate_gt(one_target(2.5), 3);
  const auto track = sc.gt.track(1);
  ASSERT_GE(track.size(), 10u);
  for (std::size_t i = 2; i < track.size(); ++i) {
    EXPECT_NEAR(track[i]->box.cx() - 2 * track[i - 1]->box.cx() + track[i - 2]->box.cx(), 0.0, 1e-9);
    EXPECT_NEAR(track[i]->box.cy(), track[0]->box.cy(), 1e-9);
  }
  EXPECT_NEAR(track[1]->box.cx() - track[0]->box.cx(), 2.5, 1e-9);
}

TEST(GenerateGt, DeterministicPerSeed) {
  ScenarioConfig c;
  c.targets = 8;
  c.turn_noise = 0.05;
  const Scenario a = generate_gt(c, 17), b = generate_gt(c, 17), other = generate_gt(c, 18);
  ASSERT_EQ(a.gt.boxes().size(), b.gt.boxes().size());
  for (std::size_t i = 0; i < a.gt.boxes().size(); ++i) EXPECT_EQ(a.gt.boxes()[i].box, b.gt.boxes()[i].box);
  EXPECT_NE(a.gt.boxes()[0].box, other.gt.boxes()[0].box);
}

TEST(GenerateGt, BoxesStayInsideImage) {
  ScenarioConfig c;
  c.targets = 10;
  c.speed_min = 3;
  c.speed_max = 6;
  const Scenario sc = generate_gt(c, 4);
  for (const auto& g : sc.gt.boxes()) {
    EXPECT_TRUE(g.box.valid());
    EXPECT_GE(g.box.x, 0.0);
    EXPECT_GE(g.box.y, 0.0);
    EXPECT_LE(g.box.right(), c.extent.width + 1e-9);
    EXPECT_LE(g.box.bottom(), c.extent.height + 1e-9);
  }
}

TEST(GenerateGt, CrossingPairOverlaps) {
  ScenarioConfig c;
  c.targets = 2;
  c.layout = Layout::Crossing;
  c.frames = 200;
  c.speed_min = 2;
  c.speed_max = 3;
  const Scenario sc = generate_gt(c, 1);
  double best = 0.0;
  for (int f = 1; f <= c.frames; ++f) {
    const GtBox* a = sc.gt.find(1, f);
    const GtBox* b = sc.gt.find(2, f);
    if (a && b) best = std::max(best, iou(a->box, b->box));
  }
  EXPECT_GT(best, 0.3);
}

TEST(GenerateGt, OverlapMarksRearTargetOccluded) {
  ScenarioConfig c;
  c.targets = 2;
  c.layout = Layout::Crossing;
  c.frames = 200;
  c.occlude_on_overlap = true;
  const Scenario sc = generate_gt(c, 1);
  ASSERT_FALSE(sc.occlusions.empty());
  const auto& e = sc.occlusions.front();
  const GtBox* g = sc.gt.find(e.occluded_id, e.first);
  ASSERT_NE(g, nullptr);
  EXPECT_TRUE(g->occluded);
}

TEST(GenerateGt, InfeasibleConfigsRejected) {
  ScenarioConfig c = one_target(0.0);
  c.require_exit = true;
  EXPECT_THROW(generate_gt(c, 1), ContractViolation);
  c.speed_max = 0.5;  // too slow to leave in 30 frames
  EXPECT_THROW(generate_gt(c, 1), ContractViolation);
  ScenarioConfig bad;
  bad.frames = 0;
  EXPECT_THROW(generate_gt(bad, 1), ContractViolation);
}

GroundTruth many_boxes(int n_frames) {
  GroundTruth gt;
  for (int id = 1; id <= 10; ++id) testing::add_track(gt, id, 1, n_frames, {40.0 * id, 50, 20, 40});
  return gt;
}

TEST(Corrupt, CleanDetectionsEqualGroundTruth) {
  const GroundTruth gt = many_boxes(20);
  CorruptionConfig cc;
  cc.tp_conf_sd = 0.0;
  const auto d = corrupt(gt, {640, 480}, 20, cc);
  ASSERT_EQ(d.dets.size(), gt.boxes().size());
  for (std::size_t i = 0; i < d.dets.size(); ++i) {
    const GtBox* g = gt.find(d.source_id[i], d.dets[i].frame);
    ASSERT_NE(g, nullptr);
    EXPECT_NEAR(iou(g->box, d.dets[i].box), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(d.dets[i].confidence, 0.8);
  }
}

TEST(Corrupt, FullMissRateKeepsOnlyFalsePositives) {
  CorruptionConfig cc;
  cc.fn_rate = 1.0;
  cc.fp_per_frame = 2.0;
  const auto d = corrupt(many_boxes(20), {640, 480}, 20, cc);
  EXPECT_FALSE(d.dets.empty());
  for (int id : d.source_id) EXPECT_EQ(id, -1);
}

TEST(Corrupt, MissRateConcentrates) {
  const GroundTruth gt = many_boxes(1000);
  CorruptionConfig cc;
  cc.fn_rate = 0.2;
  cc.seed = 99;
  const auto d = corrupt(gt, {640, 480}, 1000, cc);
  const double dropped = 1.0 - static_cast<double>(d.dets.size()) / static_cast<double>(gt.boxes().size());
  EXPECT_NEAR(dropped, 0.2, 0.01);
}

TEST(Corrupt, FalsePositiveRateAndConfidenceRange) {
  CorruptionConfig cc;
  cc.fp_per_frame = 1.5;
  cc.position_sigma = 2.0;
  const auto d = corrupt(many_boxes(2000), {640, 480}, 2000, cc);
  const auto fps = std::count(d.source_id.begin(), d.source_id.end(), -1);
  EXPECT_NEAR(static_cast<double>(fps) / 2000.0, 1.5, 0.1);
  for (const auto& det : d.dets) {
    EXPECT_GE(det.confidence, 0.0);
    EXPECT_LE(det.confidence, 1.0);
  }
}

TEST(Corrupt, OcclusionDoublesMissRate) {
  GroundTruth gt;
  for (int f = 1; f <= 4000; ++f) {
    GtBox g{f, 1, {10, 10, 20, 40}};
    g.occluded = true;
    gt.add(g);
  }
  CorruptionConfig cc;
  cc.fn_rate = 0.2;
  const auto d = corrupt(gt, {100, 100}, 4000, cc);
  EXPECT_NEAR(1.0 - d.dets.size() / 4000.0, 0.4, 0.03);
}

TEST(Corrupt, DeterministicPerSeed) {
  CorruptionConfig cc;
  cc.fn_rate = 0.3;
  cc.fp_per_frame = 1.0;
  cc.position_sigma = 3.0;
  const GroundTruth gt = many_boxes(50);
  EXPECT_EQ(corrupt(gt, {640, 480}, 50, cc).dets, corrupt(gt, {640, 480}, 50, cc).dets);
  CorruptionConfig bad;
  bad.fn_rate = 1.5;
  EXPECT_THROW(corrupt(gt, {640, 480}, 50, bad), ContractViolation);
}

double crop_difference(const GrayImage& a, const BoundingBox& ba, const GrayImage& b, const BoundingBox& bb) {
  double sum = 0.0;
  int n = 0;
  for (int y = 3; y < static_cast<int>(ba.h) - 3; ++y) {
    for (int x = 3; x < static_cast<int>(ba.w) - 3; ++x) {
      sum += std::abs(a.sample(ba.x + x, ba.y + y) - b.sample(bb.x + x, bb.y + y));
      ++n;
    }
  }
  return sum / n;
}

TEST(Render, StaticTargetCropIsConstant) {
  const Scenario sc = generate_gt(one_target(0.0), 2);
  const auto frames = render(sc, 2);
  ASSERT_EQ(frames.size(), 30u);
  const BoundingBox b = sc.gt.find(1, 1)->box;
  EXPECT_EQ(crop_difference(frames.at(1), b, frames.at(30), b), 0.0);
}

TEST(Render, TextureMovesWithTarget) {
  const Scenario sc = generate_gt(one_target(2.3), 5);
  const auto frames = render(sc, 5);
  for (int f = 1; f < 10; ++f) {
    const BoundingBox b0 = sc.gt.find(1, f)->box, b1 = sc.gt.find(1, f + 1)->box;
    EXPECT_LT(crop_difference(frames.at(f), b0, frames.at(f + 1), b1), 0.01);
    EXPECT_GT(crop_difference(frames.at(f), b0, frames.at(f + 1), b0), 0.01);
  }
}

TEST(Render, TexturesDifferPerId) {
  const auto a = detail::make_texture(1, 7), b = detail::make_texture(2, 7);
  double diff = 0.0;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) diff += std::abs(a.at(i / 10.0, j / 10.0) - b.at(i / 10.0, j / 10.0));
  }
  EXPECT_GT(diff / 100.0, 0.05);
}

TEST(Render, PixelsInUnitRange) {
  ScenarioConfig c;
  c.extent = {160, 120};
  c.frames = 3;
  c.targets = 4;
  c.height_min = 20;
  c.height_max = 40;
  for (const auto& [_, img] : render(generate_gt(c, 3), 3)) {
    for (float v : img.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

class Sweep : public ::testing::Test {
 protected:
  testing::SimSequence sim;
  void SetUp() override {
    ScenarioConfig sc;
    sc.targets = 8;
    CorruptionConfig cc;
    cc.fn_rate = 0.1;
    cc.fp_per_frame = 3.0;
    cc.position_sigma = 1.0;
    sim = testing::simulate(sc, cc, 21);
  }
};

TEST_F(Sweep, Endpoints) {
  const auto r = threshold_sweep(sim.dets.dets, sim.scenario.gt, {1.01, 0.0});
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].threshold, 0.0);
  EXPECT_EQ(r.rows[0].detections, sim.dets.dets.size());
  EXPECT_EQ(r.rows[1].detections, 0u);
  EXPECT_EQ(r.rows[1].recall, 0.0);
}

TEST_F(Sweep, MonotoneCountsAndRecall) {
  const auto r = threshold_sweep(sim.dets.dets, sim.scenario.gt, threshold_range(0.0, 1.0, 0.05));
  ASSERT_EQ(r.rows.size(), 21u);
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    EXPECT_LE(r.rows[i].detections, r.rows[i - 1].detections);
    EXPECT_LE(r.rows[i].recall, r.rows[i - 1].recall);
  }
}

TEST_F(Sweep, PrecisionRisesThroughCrossover) {
  const auto r = threshold_sweep(sim.dets.dets, sim.scenario.gt, threshold_range(0.1, 0.7, 0.05));
  for (std::size_t i = 1; i < r.rows.size(); ++i) EXPECT_GE(r.rows[i].precision, r.rows[i - 1].precision - 1e-9);
  EXPECT_GT(r.crossover, 0.1);
  EXPECT_LT(r.crossover, 0.7);
}

TEST_F(Sweep, FilterKeepsThresholdInclusive) {
  const std::vector<Detection> d = {{1, {0, 0, 5, 5}, 0.5}, {1, {0, 0, 5, 5}, 0.49}};
  EXPECT_EQ(filter_by_confidence(d, 0.5).size(), 1u);
  EXPECT_EQ(threshold_range(0.0, 1.0, 0.25), (std::vector<double>{0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_THROW(threshold_range(1.0, 0.0, 0.1), ContractViolation);
}

TEST(ScenarioJson, RoundTrip) {
  ScenarioConfig c;
  c.targets = 3;
  c.layout = Layout::Crossing;
  c.turn_noise = 0.02;
  c.occlusions = {{1, -1, 5, 9}};
  EXPECT_EQ(scenario_from_json(to_json(c)), c);
  EXPECT_THROW(scenario_from_json(nlohmann::json{{"frames", "many"}}), IoError);
}

}  // namespace
}  // namespace mdp
