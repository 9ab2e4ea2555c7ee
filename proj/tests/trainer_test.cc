#include <unistd.h>

#include <cmath>
#include <set>

#include "abstain/error.h"
#include "abstain/losses.h"
#include "abstain/mirage.h"
#include "abstain/network.h"
#include "abstain/rng.h"
#include "abstain/trainer.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace abstain {
namespace {

LabeledExample ClassExample(std::vector<double> x, int y, bool in_region) {
  LabeledExample e;
  e.id = "e";
  e.features = std::move(x);
  e.label = y;
  e.region_flag = in_region;
  return e;
}

LabeledExample RegressionExample(std::vector<double> x, double y) {
  LabeledExample e;
  e.id = "e";
  e.features = std::move(x);
  e.label = y;
  return e;
}

BoxRegion UnitBox() {
  BoxRegion r;
  r.dims = {{0, -1.0, 1.0}, {1, -1.0, 1.0}};
  return r;
}

MirageSpec MirageOn(BoxRegion region, double lambda) {
  MirageSpec m;
  m.region = std::move(region);
  m.epsilon = 0.15;
  m.lambda = lambda;
  return m;
}

TEST(NetworkTest, ZeroHiddenWidthIsLinear) {
  const MlpNetwork net = InitNetwork({2, 0}, HeadKind::kLogits, 3, 1);
  ASSERT_EQ(net.layers.size(), 1u);
  EXPECT_EQ(net.layers[0].in, 2u);
  EXPECT_EQ(net.layers[0].out, 3u);
  EXPECT_EQ(net.layers[0].activation, Activation::kIdentity);
}

TEST(NetworkTest, HiddenLayerShapesAndHeInit) {
  const MlpNetwork net = InitNetwork({2, 100}, HeadKind::kLogits, 2, 2);
  ASSERT_EQ(net.layers.size(), 2u);
  EXPECT_EQ(net.layers[0].out, 100u);
  EXPECT_EQ(net.layers[0].activation, Activation::kRelu);
  EXPECT_EQ(net.output_dim(), 2u);
  EXPECT_EQ(net.num_parameters(), 2u * 100 + 100 + 100 * 2 + 2);
  double ss = 0.0;
  for (double w : net.layers[0].weight) ss += w * w;
  // He scale sqrt(2 / fan_in) = 1 for fan_in 2.
  EXPECT_NEAR(ss / 200.0, 1.0, 0.3);
  for (double b : net.layers[0].bias) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(InitNetwork({2, 100}, HeadKind::kLogits, 2, 2), net);
  EXPECT_NE(InitNetwork({2, 100}, HeadKind::kLogits, 2, 3), net);
}

TEST(NetworkTest, RejectsNonpositiveWidths) {
  EXPECT_THROW(InitNetwork({0, 4}, HeadKind::kLogits, 2, 1), Error);
  EXPECT_THROW(InitNetwork({2, -1}, HeadKind::kLogits, 2, 1), Error);
  EXPECT_THROW(InitNetwork({2, 4}, HeadKind::kLogits, 0, 1), Error);
}

TEST(NetworkTest, ForwardBasics) {
  MlpNetwork net = InitNetwork({3, 5}, HeadKind::kLogits, 2, 4);
  for (auto& l : net.layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
  }
  const std::vector<double> x{1.0, -2.0, 3.0};
  for (double v : Forward(net, x)) EXPECT_EQ(v, 0.0);

  MlpNetwork id;
  DenseLayer l;
  l.in = l.out = 3;
  l.weight = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  l.bias = {0, 0, 0};
  l.activation = Activation::kIdentity;
  id.layers = {l};
  EXPECT_EQ(Forward(id, x), x);
  EXPECT_THROW(Forward(id, std::vector<double>{1.0}), Error);

  const MlpNetwork r = InitNetwork({3, 8, 8}, HeadKind::kLogits, 4, 5);
  const auto a = Forward(r, x), b = Forward(r, x);
  EXPECT_EQ(a, b);
  const ForwardPass pass = ForwardTrace(r, x);
  EXPECT_EQ(pass.activations.size(), r.layers.size() + 1);
  for (double v : pass.activations[1]) EXPECT_GE(v, 0.0);
}

TEST(NetworkTest, JsonRoundTripIsExact) {
  const MlpNetwork net = InitNetwork({2, 7, 3}, HeadKind::kMeanLogVar, 0, 6);
  EXPECT_EQ(NetworkFromJson(NetworkToJson(net)), net);
  testing::TempDir dir("net");
  SaveNetwork(net, dir.path() / "m.json");
  EXPECT_EQ(LoadNetwork(dir.path() / "m.json"), net);
  EXPECT_THROW(NetworkFromJson("{\"layers\": []}"), Error);
}

TEST(NetworkTest, ScaleLogitsDividesOutputs) {
  const MlpNetwork net = InitNetwork({2, 6}, HeadKind::kLogits, 3, 7);
  const MlpNetwork scaled = ScaleLogits(net, 2.5);
  const std::vector<double> x{0.3, -1.2};
  const auto z = Forward(net, x), s = Forward(scaled, x);
  for (size_t j = 0; j < z.size(); ++j) EXPECT_NEAR(s[j], z[j] / 2.5, 1e-12);
  EXPECT_THROW(ScaleLogits(net, 0.0), Error);
}

TEST(LossTest, AnalyticValues) {
  const std::vector<double> uniform{0.7, 0.7, 0.7};
  EXPECT_NEAR(CrossEntropy(uniform, 1), std::log(3.0), 1e-15);
  EXPECT_DOUBLE_EQ(GaussianNll(2.0, 0.0, 2.0), 0.0);
  EXPECT_NEAR(GaussianNll(0.0, 0.0, 2.0), 2.0, 1e-15);
  const std::vector<double> t{0.2, 0.3, 0.5};
  EXPECT_DOUBLE_EQ(KlDivergence(t, t), 0.0);
  // Large logits stay finite through log-sum-exp.
  const std::vector<double> big{1000.0, -1000.0};
  EXPECT_NEAR(CrossEntropy(big, 1), 2000.0, 1e-9);
  EXPECT_TRUE(std::isfinite(KlFromLogits(big, std::vector<double>{0.5, 0.5},
                                         nullptr)));
}

TEST(LossTest, RejectsOutOfRangeParameters) {
  MirageSpec m = MirageOn(UnitBox(), 0.5);
  m.epsilon = 1.5;
  EXPECT_THROW(ValidateLoss(m), Error);
  m.epsilon = 0.1;
  m.lambda = -0.1;
  EXPECT_THROW(ValidateLoss(m), Error);
  MirageRegressionSpec r;
  r.sigma2_target = 0.0;
  EXPECT_THROW(ValidateLoss(r), Error);
}

TEST(MirageLossProperty, LambdaZeroIsOutsideCrossEntropy) {
  CounterRng rng(8);
  const Dataset ds = testing::RandomClassification(rng, 200, 3, 2, false);
  const MlpNetwork net = InitNetwork({2, 8}, HeadKind::kLogits, 3, 9);
  MirageSpec m = MirageOn(UnitBox(), 0.0);
  for (const auto& e : ds.examples) {
    const auto z = Forward(net, e.features);
    const double v = LossValue(m, z, e).value;
    if (m.region.Contains(e.features)) {
      EXPECT_EQ(v, 0.0);
    } else {
      EXPECT_NEAR(v, CrossEntropy(z, std::get<int>(e.label)), 1e-12);
    }
  }
}

TEST(MirageLossProperty, WholeSpaceLambdaOneIsPureKl) {
  CounterRng rng(10);
  const Dataset ds = testing::RandomClassification(rng, 200, 3, 2, false);
  const MlpNetwork net = InitNetwork({2, 8}, HeadKind::kLogits, 3, 11);
  BoxRegion all;
  all.dims = {{0, -1e9, 1e9}, {1, -1e9, 1e9}};
  const MirageSpec m = MirageOn(all, 1.0);
  for (const auto& e : ds.examples) {
    const auto z = Forward(net, e.features);
    const auto t = TargetDistribution(m.Target(), 3, std::get<int>(e.label));
    EXPECT_NEAR(LossValue(m, z, e).value,
                KlDivergence(SoftmaxProbs(z), t), 1e-12);
  }
}

TEST(GradCheckTest, CrossEntropySmallNet) {
  const MlpNetwork net = InitNetwork({2, 5}, HeadKind::kLogits, 3, 12);
  const auto e = ClassExample({0.4, -0.7}, 2, false);
  EXPECT_LE(GradCheck(net, CrossEntropyLoss{}, e, 1e-5), 1e-5);
}

TEST(GradCheckTest, MirageInsideRegion) {
  const MlpNetwork net = InitNetwork({2, 5}, HeadKind::kLogits, 3, 13);
  const auto e = ClassExample({0.2, 0.3}, 1, true);
  ASSERT_TRUE(UnitBox().Contains(e.features));
  EXPECT_LE(GradCheck(net, MirageOn(UnitBox(), 0.5), e, 1e-5), 1e-5);
}

TEST(GradCheckTest, StationaryPointHasZeroGradient) {
  // All-zero weights on a linear model with uniform target: CE gradient is
  // p - onehot, so choose a KL target equal to the uniform output.
  MlpNetwork net = InitNetwork({2, 0}, HeadKind::kLogits, 2, 14);
  std::fill(net.layers[0].weight.begin(), net.layers[0].weight.end(), 0.0);
  MirageSpec m = MirageOn(UnitBox(), 1.0);
  m.epsilon = 1.0;  // uniform target
  const auto e = ClassExample({0.1, 0.2}, 0, true);
  EXPECT_LE(GradCheck(net, m, e, 1e-5), 1e-7);
}

TEST(GradCheckProperty, EveryLossKindMatchesFiniteDifferences) {
  CounterRng rng(15);
  MirageRegressionSpec mr;
  BoxRegion r1;
  r1.dims = {{0, -1.0, 1.0}};
  mr.region = r1;
  mr.lambda = 0.7;
  MirageSpec subset = MirageOn(UnitBox(), 0.6);
  subset.target = TargetKind::Kind::kSubset;
  double worst[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < 100; ++i) {
    const uint64_t seed = 100 + i;
    const MlpNetwork cls = InitNetwork({2, 6, 4}, HeadKind::kLogits, 3, seed);
    const MlpNetwork reg = InitNetwork({1, 6}, HeadKind::kMeanLogVar, 0, seed);
    const std::vector<double> x{rng.Uniform(-2, 2), rng.Uniform(-2, 2)};
    const int y = static_cast<int>(rng.Below(3));
    const auto ce = ClassExample(x, y, UnitBox().Contains(x));
    subset.subset = {y, (y + 1) % 3};
    const auto re = RegressionExample({x[0]}, rng.Normal());
    worst[0] = std::max(worst[0], GradCheck(cls, CrossEntropyLoss{}, ce, 1e-5));
    worst[1] = std::max(worst[1], GradCheck(cls, MirageOn(UnitBox(), 0.5), ce, 1e-5));
    worst[2] = std::max(worst[2], GradCheck(cls, subset, ce, 1e-5));
    worst[3] = std::max(worst[3], GradCheck(reg, GaussianNllLoss{}, re, 1e-5));
    worst[4] = std::max(worst[4], GradCheck(reg, mr, re, 1e-5));
  }
  for (double w : worst) EXPECT_LE(w, 1e-4);
}

TEST(TrainerTest, LogisticSeparatesTwoGaussians) {
  const Dataset ds = GenTwoGaussians(5.0, 500, 16);
  const auto [train, eval] = SplitDataset(ds, 0.5, 16);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 0.05;
  cfg.seed = 16;
  const auto result = TrainWithCheckpoints(
      train, eval, InitNetwork({2, 0}, HeadKind::kLogits, 2, 16), cfg);
  EXPECT_GE(Accuracy(result.network, eval), 0.99);
}

TEST(TrainerTest, CheckpointCount) {
  const Dataset ds = GenTwoGaussians(2.0, 640, 17);
  const auto [train, eval] = SplitDataset(ds, 0.5, 17);
  ASSERT_EQ(train.size(), 640u);
  TrainConfig cfg;
  cfg.epochs = 100;  // 10 steps per epoch
  cfg.batch_size = 64;
  cfg.checkpoint_every = 50;
  const MlpNetwork net = InitNetwork({2, 0}, HeadKind::kLogits, 2, 17);
  auto r = TrainWithCheckpoints(train, eval, net, cfg);
  EXPECT_EQ(r.steps, 1000u);
  EXPECT_EQ(r.trace.num_checkpoints(), 20u);
  cfg.checkpoint_every = 300;  // 3 aligned plus the final state
  r = TrainWithCheckpoints(train, eval, net, cfg);
  EXPECT_EQ(r.trace.num_checkpoints(), 4u);
  for (size_t i = 0; i < eval.size(); ++i) {
    const auto z = Forward(r.network, eval.examples[i].features);
    const auto f = r.trace.Final(i);
    for (size_t j = 0; j < z.size(); ++j) EXPECT_EQ(f[j], z[j]);
  }
}

TEST(TrainerTest, DeterministicPerSeed) {
  const Dataset ds = GenTwoMoons(300, 0.2, MoonShift::kNone, 18);
  const auto [train, eval] = SplitDataset(ds, 0.5, 18);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.checkpoint_every = 5;
  cfg.seed = 18;
  const MlpNetwork net = InitNetwork({2, 16}, HeadKind::kLogits, 2, 18);
  const auto a = TrainWithCheckpoints(train, eval, net, cfg);
  const auto b = TrainWithCheckpoints(train, eval, net, cfg);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.network, b.network);
  cfg.optimizer = Optimizer::kAdam;
  cfg.learning_rate = 1e-3;
  EXPECT_EQ(TrainWithCheckpoints(train, eval, net, cfg).trace,
            TrainWithCheckpoints(train, eval, net, cfg).trace);
}

TEST(TrainerTest, DivergenceNamesStep) {
  const Dataset ds = GenRegressionSine(200, 19);
  const auto [train, eval] = SplitDataset(ds, 0.5, 19);
  TrainConfig cfg;
  cfg.loss = GaussianNllLoss{};
  cfg.learning_rate = 1e6;
  cfg.epochs = 50;
  try {
    TrainWithCheckpoints(train, eval,
                         InitNetwork({1, 8}, HeadKind::kMeanLogVar, 0, 19), cfg);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(TrainerTest, RejectsMismatchedHeadAndBadConfig) {
  const Dataset ds = GenRegressionSine(50, 20);
  TrainConfig cfg;
  EXPECT_THROW(TrainWithCheckpoints(
                   ds, ds, InitNetwork({1, 4}, HeadKind::kLogits, 2, 1), cfg),
               Error);
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.Validate(), Error);
  EXPECT_THROW(ParseOptimizer("rmsprop"), Error);
  EXPECT_EQ(ParseOptimizer(OptimizerName(Optimizer::kAdam)), Optimizer::kAdam);
}

TEST(TrainerProperty, SmallStepLossNonIncreasingOnSeparableData) {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = GenTwoGaussians(5.0, 200, seed);
    const auto [train, eval] = SplitDataset(ds, 0.5, seed);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 30;
    cfg.seed = seed;
    const auto r = TrainWithCheckpoints(
        train, eval, InitNetwork({2, 0}, HeadKind::kLogits, 2, seed), cfg);
    for (size_t e = 2; e < r.epoch_loss.size(); ++e) {
      EXPECT_LE(r.epoch_loss[e], r.epoch_loss[e - 1] + 1e-12)
          << "seed " << seed << " epoch " << e;
    }
  }
}

TEST(SplitTest, SizesAndDisjointness) {
  const Dataset ds = GenTwoGaussians(1.0, 50, 21);
  const auto [a, b] = SplitDataset(ds, 0.7, 21);
  EXPECT_EQ(a.size(), 70u);
  EXPECT_EQ(b.size(), 30u);
  std::set<std::string> ids;
  for (const auto& e : a.examples) ids.insert(e.id);
  for (const auto& e : b.examples) EXPECT_EQ(ids.count(e.id), 0u);
  EXPECT_THROW(SplitDataset(ds, 1.0, 21), Error);
}

TEST(FeatureScalerTest, StandardizesAndFoldsExactly) {
  const Dataset ds = GenGuardianMixture(22).dataset;
  const FeatureScaler s = FeatureScaler::Fit(ds);
  const Dataset z = s.Apply(ds);
  for (size_t d = 0; d < 2; ++d) {
    double m = 0, v = 0;
    for (const auto& e : z.examples) m += e.features[d];
    m /= z.size();
    for (const auto& e : z.examples) v += (e.features[d] - m) * (e.features[d] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / z.size(), 1.0, 1e-12);
  }
  const MlpNetwork net = InitNetwork({2, 9}, HeadKind::kLogits, 3, 22);
  const MlpNetwork folded = s.Fold(net);
  for (size_t i = 0; i < ds.size(); i += 37) {
    const auto a = Forward(net, z.examples[i].features);
    const auto b = Forward(folded, ds.examples[i].features);
    for (size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-9);
  }
  const BoxRegion r = s.Apply(GuardianRegion());
  for (size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(r.Contains(z.examples[i].features),
              GuardianRegion().Contains(ds.examples[i].features));
  }
}

TEST(FeatureScalerTest, ConstantFeatureKeepsUnitScale) {
  Dataset ds;
  ds.num_classes = 2;
  for (int i = 0; i < 4; ++i) {
    ds.examples.push_back(ClassExample({3.0, double(i)}, i % 2, false));
  }
  const FeatureScaler s = FeatureScaler::Fit(ds);
  EXPECT_EQ(s.scale[0], 1.0);
  EXPECT_EQ(s.mean[0], 3.0);
}

}  // namespace
}  // namespace abstain
