#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace mdp {
namespace {

std::vector<TrainingSample> separable_2d(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<TrainingSample> out;
  while (out.size() < n) {
    const double x = u(rng), y = u(rng);
    const double s = x + 2.0 * y - 0.3;
    if (std::abs(s) < 0.2) continue;  // keep a margin
    TrainingSample t;
    t.features = {{scale * x, scale * y}, FeatureKind::Lost};
    t.label = s > 0 ? 1 : -1;
    out.push_back(t);
  }
  return out;
}

TEST(Predict, ZeroModelIsOneHalf) {
  const LinearModel m{{0, 0, 0}, 0.0};
  const std::vector<double> f = {1, 2, 3};
  EXPECT_DOUBLE_EQ(predict(m, f), 0.5);
}

TEST(Predict, LargeMarginSaturates) {
  const std::vector<double> f = {1.0};
  EXPECT_GT(predict(LinearModel{{5.0}, 0.0, LossKind::Hinge}, f), 0.99);
  EXPECT_GT(predict(LinearModel{{5.0}, 0.0, LossKind::Logistic}, f), 0.99);
}

TEST(Predict, HingeUsesSlopeTwo) {
  const std::vector<double> f = {0.5};
  EXPECT_DOUBLE_EQ(predict(LinearModel{{1.0}, 0.25, LossKind::Hinge}, f), sigmoid(1.5));
  EXPECT_DOUBLE_EQ(predict(LinearModel{{1.0}, 0.25, LossKind::Logistic}, f), sigmoid(0.75));
}

TEST(Predict, NegatedWeightsFlipDecision) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    LinearModel m{{n(rng), n(rng)}, n(rng)};
    const std::vector<double> f = {n(rng), n(rng)};
    const double p = predict(m, f);
    for (auto& w : m.weights) w = -w;
    m.bias = -m.bias;
    EXPECT_NEAR(predict(m, f), 1.0 - p, 1e-12);
  }
}

TEST(Predict, DimensionMismatchThrows) {
  const std::vector<double> f = {1.0, 2.0};
  EXPECT_THROW(predict(LinearModel{{1.0}, 0.0}, f), ContractViolation);
}

TEST(Train, SeparableDataReachesFullAccuracy) {
  const auto data = separable_2d(200, 1);
  for (auto loss : {LossKind::Hinge, LossKind::Logistic}) {
    LinearModel m;
    m.loss = loss;
    m = train(m, data);
    EXPECT_DOUBLE_EQ(accuracy(m, data), 1.0) << static_cast<int>(loss);
  }
}

TEST(Train, FocalGammaZeroIsPlainLogistic) {
  const auto data = separable_2d(80, 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  LinearModel a;
  a.loss = LossKind::Logistic;
  LinearModel b = a;
  b.focal_gamma = 0.0;
  EXPECT_EQ(train(a, data, cfg), train(b, data, cfg));
}

TEST(Train, FocalGammaChangesTrajectory) {
  const auto data = separable_2d(80, 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  LinearModel a;
  a.loss = LossKind::Logistic;
  LinearModel b = a;
  b.focal_gamma = 2.0;
  EXPECT_NE(train(a, data, cfg).weights, train(b, data, cfg).weights);
}

TEST(Train, FocalGradientMatchesFiniteDifference) {
  LinearModel m;
  m.loss = LossKind::Logistic;
  m.focal_gamma = 2.0;
  for (double z : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
    for (int y : {-1, 1}) {
      const double h = 1e-6;
      const double fd =
          (detail::sample_loss(m, z + h, y).loss - detail::sample_loss(m, z - h, y).loss) / (2.0 * h);
      EXPECT_NEAR(detail::sample_loss(m, z, y).dz, fd, 1e-6);
    }
  }
}

TEST(Train, OhemRatioOneIsNoOhem) {
  const auto data = separable_2d(80, 3);
  TrainConfig a;
  a.epochs = 15;
  TrainConfig b = a;
  b.ohem_ratio = 1.0;
  EXPECT_EQ(train(LinearModel{}, data, a), train(LinearModel{}, data, b));
  TrainConfig c = a;
  c.ohem_ratio = 0.25;
  EXPECT_NE(train(LinearModel{}, data, a).weights, train(LinearModel{}, data, c).weights);
}

TEST(Train, DeterministicUnderSeed) {
  const auto data = separable_2d(60, 4);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.rebalance = RebalanceStrategy::Oversample;
  EXPECT_EQ(train(LinearModel{}, data, cfg), train(LinearModel{}, data, cfg));
}

TEST(Train, SingleClassNeedsOverride) {
  auto data = separable_2d(30, 5);
  std::erase_if(data, [](const TrainingSample& s) { return s.label < 0; });
  try {
    train(LinearModel{}, data);
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("negative"), std::string::npos);
  }
  TrainConfig cfg;
  cfg.allow_single_class = true;
  EXPECT_NO_THROW(train(LinearModel{}, data, cfg));
}

TEST(Train, FeatureScalingKeepsTrainingAccuracy) {
  const auto base = separable_2d(150, 6);
  const auto scaled = separable_2d(150, 6, 3.0);
  TrainConfig cfg;
  cfg.epochs = 400;
  const LinearModel a = train(LinearModel{}, base, cfg);
  const LinearModel b = train(LinearModel{}, scaled, cfg);
  EXPECT_DOUBLE_EQ(accuracy(a, base), accuracy(b, scaled));
}

TEST(ModelFile, RoundTripAndLayout) {
  const LinearModel m{{0.5, -1.25, 3.0}, 0.125, LossKind::Logistic, 2.0};
  const auto bytes = serialize_model(m);
  ASSERT_EQ(bytes.size(), 4u + 4 + 1 + 8 + 4 + 8 + 3 * 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MDPM");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // logistic
  EXPECT_EQ(bytes[17], 3);  // dim
  EXPECT_EQ(deserialize_model(bytes), m);

  const auto dir = testing::fresh_dir("model");
  save_model(dir / "m.mdpm", m);
  EXPECT_EQ(load_model(dir / "m.mdpm"), m);
  EXPECT_THROW(load_model(dir / "none.mdpm"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(ModelFile, RejectsCorruptInput) {
  auto bytes = serialize_model(LinearModel{{1.0}, 0.0});
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), IoError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(deserialize_model(truncated), IoError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_model(trailing), IoError);
}

TEST(PolicyNames, Parse) {
  EXPECT_EQ(parse_policy("relative").kind, PolicyKind::RelativeOracle);
  EXPECT_EQ(parse_policy("absolute").kind, PolicyKind::AbsoluteOracle);
  const PolicySpec r = parse_policy("random:42");
  EXPECT_EQ(r.kind, PolicyKind::Random);
  EXPECT_EQ(r.seed, 42u);
  EXPECT_THROW(parse_policy("psychic"), ContractViolation);
}

class PolicyDecisions : public ::testing::Test {
 protected:
  GroundTruth gt;
  ImageExtent img{640, 480};
  BoundingBox truth{100, 100, 40, 80};

  void SetUp() override { testing::add_track(gt, 3, 1, 20, truth); }

  OracleContext ctx(int frame, int gt_id = 3) const { return {&gt, frame, gt_id}; }
};

TEST_F(PolicyDecisions, ActiveAlwaysPositiveAcceptsAnything) {
  const Detection det{5, {500, 10, 10, 10}, 0.01};
  EXPECT_EQ(decide_active({PolicyKind::AlwaysPositive}, nullptr, det, img, {}).action, PolicyAction::A1);
}

TEST_F(PolicyDecisions, ActiveOraclesUseGtOverlap) {
  const Detection good{5, truth.translated(2, 0), 0.9};  // IOU ~0.9
  const Detection bad{5, {400, 300, 40, 80}, 0.9};
  for (auto k : {PolicyKind::RelativeOracle, PolicyKind::AbsoluteOracle}) {
    EXPECT_EQ(decide_active({k}, nullptr, good, img, ctx(5)).action, PolicyAction::A1);
    EXPECT_EQ(decide_active({k}, nullptr, bad, img, ctx(5)).action, PolicyAction::A2);
  }
  const std::set<int> owned = {3};
  EXPECT_EQ(decide_active({PolicyKind::RelativeOracle}, nullptr, good, img, ctx(5), nullptr, &owned).action,
            PolicyAction::A2);
}

TEST_F(PolicyDecisions, OraclesWithoutGtThrow) {
  const Detection det{5, truth, 0.9};
  EXPECT_THROW(decide_active({PolicyKind::RelativeOracle}, nullptr, det, img, {}), ContractViolation);
  EXPECT_THROW(decide_active({PolicyKind::Learned}, nullptr, det, img, {}), ContractViolation);
}

TEST_F(PolicyDecisions, ActiveLearnedUsesModel) {
  const Detection det{5, truth, 0.9};
  LinearModel m{std::vector<double>(kActiveFeatureDim, 0.0), 0.0};
  m.weights[5] = 4.0;  // confidence
  EXPECT_EQ(decide_active({PolicyKind::Learned}, &m, det, img, {}).action, PolicyAction::A1);
  m.weights[5] = -4.0;
  EXPECT_EQ(decide_active({PolicyKind::Learned}, &m, det, img, {}).action, PolicyAction::A2);
}

TEST_F(PolicyDecisions, RandomIsSeeded) {
  const Detection det{5, truth, 0.9};
  std::mt19937_64 a(11), b(11);
  int accepted = 0;
  for (int i = 0; i < 200; ++i) {
    const auto da = decide_active({PolicyKind::Random}, nullptr, det, img, {}, &a);
    const auto db = decide_active({PolicyKind::Random}, nullptr, det, img, {}, &b);
    EXPECT_EQ(da.action, db.action);
    accepted += da.action == PolicyAction::A1 ? 1 : 0;
  }
  EXPECT_GT(accepted, 60);
  EXPECT_LT(accepted, 140);
}

TEST_F(PolicyDecisions, TrackedHeuristicRules) {
  TrackResult ok;
  ok.success = true;
  ok.median_fb = 0.1;
  ok.median_ncc = 0.9;
  const Detection det{5, truth, 0.9};
  const PolicySpec h{PolicyKind::Heuristic};
  EXPECT_EQ(decide_tracked(h, nullptr, ok, truth, det, img, ctx(5)).action, PolicyAction::A3);
  EXPECT_EQ(decide_tracked(h, nullptr, ok, truth, std::nullopt, img, ctx(5)).action, PolicyAction::A4);
  EXPECT_EQ(decide_tracked(h, nullptr, ok, truth, std::nullopt, img, ctx(5), {true}).action, PolicyAction::A3);
  TrackResult failed = ok;
  failed.success = false;
  EXPECT_EQ(decide_tracked(h, nullptr, failed, truth, det, img, ctx(5)).action, PolicyAction::A4);
}

TEST_F(PolicyDecisions, TrackedOracles) {
  TrackResult failed;
  const Detection off{5, {400, 300, 40, 80}, 0.9};
  EXPECT_EQ(decide_tracked({PolicyKind::AbsoluteOracle}, nullptr, failed, truth, std::nullopt, img, ctx(5)).action,
            PolicyAction::A3);
  EXPECT_EQ(decide_tracked({PolicyKind::AbsoluteOracle}, nullptr, failed, truth, std::nullopt, img, ctx(25)).action,
            PolicyAction::A4);
  EXPECT_EQ(decide_tracked({PolicyKind::RelativeOracle}, nullptr, failed, truth, off, img, ctx(5)).action,
            PolicyAction::A4);
  const Detection on{5, truth, 0.9};
  EXPECT_EQ(decide_tracked({PolicyKind::RelativeOracle}, nullptr, failed, truth, on, img, ctx(5)).action,
            PolicyAction::A3);
}

TEST_F(PolicyDecisions, TrackedLearnedNeedsModel) {
  TrackResult r;
  EXPECT_THROW(decide_tracked({PolicyKind::Learned}, nullptr, r, truth, std::nullopt, img, ctx(5)),
               ContractViolation);
}

TEST_F(PolicyDecisions, LostNoCandidatesStays) {
  const auto d = decide_lost({PolicyKind::Heuristic}, nullptr, {}, {}, truth, 3, img, ctx(5));
  EXPECT_EQ(d.action, PolicyAction::A5);
}

TEST_F(PolicyDecisions, LostExitRules) {
  const LostPolicyConfig cfg;
  EXPECT_EQ(decide_lost({PolicyKind::Heuristic}, nullptr, {}, {}, truth, cfg.max_lost, img, ctx(5), cfg).action,
            PolicyAction::A5);
  EXPECT_EQ(decide_lost({PolicyKind::Heuristic}, nullptr, {}, {}, truth, cfg.max_lost + 1, img, ctx(5), cfg).action,
            PolicyAction::A7);
  const BoundingBox leaving{620, 100, 40, 80};  // 50% inside is not below the minimum
  EXPECT_EQ(decide_lost({PolicyKind::Heuristic}, nullptr, {}, {}, leaving, 1, img, ctx(5), cfg).action,
            PolicyAction::A5);
  EXPECT_EQ(decide_lost({PolicyKind::Heuristic}, nullptr, {}, {}, leaving.translated(5, 0), 1, img, ctx(5), cfg)
                .action,
            PolicyAction::A7);
}

TEST_F(PolicyDecisions, LostRelativeOraclePicksGtMatch) {
  const std::vector<Detection> cands = {{5, {300, 300, 40, 80}, 0.9}, {5, truth.translated(4, 0), 0.9}};
  const std::vector<FeatureVector> feats(2);
  const auto d = decide_lost({PolicyKind::RelativeOracle}, nullptr, cands, feats, truth, 2, img, ctx(5));
  EXPECT_EQ(d.action, PolicyAction::A6);
  EXPECT_EQ(d.candidate, 1);
}

TEST_F(PolicyDecisions, LostAbsoluteOracleExitsAfterGtEnds) {
  const auto d = decide_lost({PolicyKind::AbsoluteOracle}, nullptr, {}, {}, truth, 1, img, ctx(21));
  EXPECT_EQ(d.action, PolicyAction::A7);
  const auto stay = decide_lost({PolicyKind::AbsoluteOracle}, nullptr, {}, {}, truth, 200, img, ctx(20));
  EXPECT_EQ(stay.action, PolicyAction::A5);
}

TEST_F(PolicyDecisions, LostLearnedThreshold) {
  const std::vector<Detection> cands = {{5, truth, 0.9}, {5, truth, 0.2}};
  TrackResult r;
  const std::vector<FeatureVector> feats = {lost_features(r, truth, cands[0], img),
                                            lost_features(r, truth, cands[1], img)};
  LinearModel m{std::vector<double>(kLostFeatureDim, 0.0), -0.5};
  m.weights[6] = 1.0;  // confidence
  const auto d = decide_lost({PolicyKind::Learned}, &m, cands, feats, truth, 1, img, ctx(5));
  EXPECT_EQ(d.action, PolicyAction::A6);
  EXPECT_EQ(d.candidate, 0);
  m.bias = -2.0;
  EXPECT_EQ(decide_lost({PolicyKind::Learned}, &m, cands, feats, truth, 1, img, ctx(5)).action, PolicyAction::A5);
}

TEST(ResolveLost, TiesGoToLowestIndex) {
  LostEvaluation ev;
  ev.probabilities = {0.3, 0.8, 0.8};
  const auto d = resolve_lost(ev);
  EXPECT_EQ(d.action, PolicyAction::A6);
  EXPECT_EQ(d.candidate, 1);
}

}  // namespace
}  // namespace mdp
