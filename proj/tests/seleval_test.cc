#include <unistd.h>

#include <algorithm>
#include <cmath>

#include "abstain/datagen.h"
#include "abstain/error.h"
#include "abstain/network.h"
#include "abstain/rng.h"
#include "abstain/scoring.h"
#include "abstain/seleval.h"
#include "abstain/trainer.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace abstain {
namespace {

using ProbMap = std::map<std::string, std::vector<double>, std::less<>>;

// Scores for a classification dataset: the prediction is the label where
// `correct` holds, else the next class.
ScoreTable TableFor(const Dataset& ds, const std::vector<double>& scores,
                    const std::vector<bool>& correct) {
  ScoreTable t;
  for (size_t i = 0; i < ds.size(); ++i) {
    const int y = std::get<int>(ds.examples[i].label);
    t.entries.push_back({ds.examples[i].id,
                         correct[i] ? y : (y + 1) % ds.num_classes, scores[i]});
  }
  return t;
}

TEST(CurveTest, OracleScoresMatchBound) {
  const auto o = GenOracleScores(0.4, 100, 1);
  const auto c = BuildCurve(o.scores, o.dataset, UtilityKind::kAccuracy);
  ASSERT_EQ(c.size(), 100u);
  for (size_t k = 1; k <= 100; ++k) {
    const double cov = c.coverage[k - 1];
    EXPECT_DOUBLE_EQ(cov, k / 100.0);
    if (k <= 40) {
      EXPECT_EQ(c.utility[k - 1], 1.0);
    } else {
      EXPECT_NEAR(c.utility[k - 1], 0.4 / cov, 1e-12);
    }
  }
  EXPECT_DOUBLE_EQ(c.a_full, 0.4);
}

TEST(CurveTest, TiedScoresGiveCumulativeMeansInIdOrder) {
  CounterRng rng(2);
  const Dataset ds = testing::RandomClassification(rng, 60, 3, 1, false);
  std::vector<bool> correct(60);
  for (size_t i = 0; i < 60; ++i) correct[i] = rng.Uniform() < 0.6;
  const auto t = TableFor(ds, std::vector<double>(60, 0.5), correct);
  const auto c = BuildCurve(t, ds, UtilityKind::kAccuracy);
  // Ids are zero padded in generation order, so id order is index order.
  double hits = 0;
  for (size_t k = 0; k < 60; ++k) {
    EXPECT_EQ(c.order[k], ds.examples[k].id);
    hits += correct[k];
    EXPECT_NEAR(c.utility[k], hits / (k + 1), 1e-15);
  }
  EXPECT_NEAR(c.a_full, hits / 60, 1e-15);
}

TEST(CurveTest, SingleCorrectExample) {
  CounterRng rng(3);
  const Dataset ds = testing::RandomClassification(rng, 1, 2, 1, false);
  const auto c = BuildCurve(TableFor(ds, {0.9}, {true}), ds, UtilityKind::kAccuracy);
  EXPECT_EQ(c.utility, std::vector<double>{1.0});
  EXPECT_EQ(Auacc(c), 1.0);
}

TEST(CurveTest, RejectsMismatchedUtilityAndMissingIds) {
  CounterRng rng(4);
  const Dataset ds = testing::RandomClassification(rng, 5, 2, 1, false);
  const auto t = TableFor(ds, {1, 2, 3, 4, 5}, std::vector<bool>(5, true));
  EXPECT_THROW(BuildCurve(t, ds, UtilityKind::kR2), Error);
  auto partial = t;
  partial.entries.pop_back();
  EXPECT_THROW(BuildCurve(partial, ds, UtilityKind::kAccuracy), Error);
}

TEST(UtilityTest, R2Examples) {
  const std::vector<double> y{1.0, 2.0, 4.0, 7.0};
  EXPECT_DOUBLE_EQ(R2Utility(y, y), 1.0);
  const std::vector<double> mean(4, 3.5);
  EXPECT_NEAR(R2Utility(mean, y), 0.0, 1e-15);
  EXPECT_THROW(R2Utility(y, std::vector<double>(4, 2.0)), Error);
}

TEST(UtilityTest, MsisHandEvaluation) {
  // History [1, 3, 2, 5], m = 1: scale = (2 + 1 + 3) / 3 = 2.
  MsisSeries s;
  s.history = {1, 3, 2, 5};
  s.truth = {4.0, 6.0};
  s.lower = {3.0, 5.0};
  s.upper = {5.5, 6.5};
  // Widths 2.5 + 1.5 = 4, both covered: 4 / (2 * 2) = 1.
  EXPECT_NEAR(MsisUtility(std::vector<MsisSeries>{s}, 0.05, 1), 1.0, 1e-15);
  // Truth above the upper bound by 1: penalty 2 / 0.05 * 1 = 40.
  s.truth = {4.0, 7.5};
  EXPECT_NEAR(MsisUtility(std::vector<MsisSeries>{s}, 0.05, 1), 44.0 / 4.0, 1e-12);
  s.history = {2, 2, 2};
  EXPECT_THROW(MsisSeriesTerm(s, 0.05, 1), Error);
}

TEST(AurocTest, Examples) {
  const auto o = GenOracleScores(0.5, 200, 5);
  EXPECT_DOUBLE_EQ(Auroc(o.scores, o.correct), 1.0);
  CounterRng rng(6);
  const Dataset ds = testing::RandomClassification(rng, 2000, 2, 1, false);
  std::vector<double> s(2000);
  std::vector<bool> correct(2000);
  for (size_t i = 0; i < 2000; ++i) {
    s[i] = rng.Uniform();
    correct[i] = rng.Uniform() < 0.5;
  }
  EXPECT_NEAR(Auroc(TableFor(ds, s, correct), correct), 0.5, 0.05);
  const std::vector<bool> all(2000, true);
  EXPECT_THROW(Auroc(TableFor(ds, s, all), all), Error);
  // Ties count one half.
  const auto tied = TableFor(ds, std::vector<double>(2000, 0.3), correct);
  EXPECT_DOUBLE_EQ(Auroc(tied, correct), 0.5);
}

TEST(OracleBoundTest, Examples) {
  EXPECT_EQ(OracleBound(0.4, 0.4), 1.0);
  EXPECT_DOUBLE_EQ(OracleBound(0.4, 0.8), 0.5);
  for (double c : {0.1, 0.5, 1.0}) EXPECT_EQ(OracleBound(1.0, c), 1.0);
  EXPECT_THROW(OracleBound(0.4, 0.0), Error);
}

TEST(GapMetricsTest, Examples) {
  for (int n : {100, 1000}) {
    const auto o = GenOracleScores(0.3, n, 7);
    const auto c = BuildCurve(o.scores, o.dataset, UtilityKind::kAccuracy);
    const auto g = ComputeGapMetrics(c);
    EXPECT_LE(g.e_aurc, 1.0 / n);
    EXPECT_EQ(g.acc_normalized, g.e_aurc);
    EXPECT_NEAR(g.gap.back(), 0.0, 1e-15);
  }
  // Inverted oracle: incorrect first.
  auto o = GenOracleScores(0.5, 100, 8);
  o.scores.orientation = Orientation::kHigherMoreConfident;
  const auto g = ComputeGapMetrics(
      BuildCurve(o.scores, o.dataset, UtilityKind::kAccuracy));
  EXPECT_DOUBLE_EQ(g.gap[49], 1.0);
}

TEST(DecomposeTest, ScoresEqualToEtaHaveNoRankingError) {
  const auto g = GenGuardianMixture(9).dataset;
  // Bayes predictions; probabilities are the true posterior itself.
  ScoreTable t;
  ProbMap probs;
  for (const auto& e : g.examples) {
    const int yhat = Argmax(*e.true_posterior);
    t.entries.push_back({e.id, yhat, (*e.true_posterior)[yhat]});
    probs[e.id] = *e.true_posterior;
  }
  DecomposeOptions opt;
  opt.grid = {0.1, 0.25, 0.5, 0.75, 1.0};
  const auto b = DecomposeGap(t, g, probs, opt);
  for (const auto& p : b.points) {
    EXPECT_EQ(p.eps_rank, 0.0);
    EXPECT_EQ(p.d_rank, 0.0);
    EXPECT_NEAR(p.eps_approx, 0.0, 1e-15);
  }
  EXPECT_NEAR(b.eps_stat, std::sqrt(std::log(20.0) / g.size()), 1e-15);
}

TEST(DecomposeTest, FlatPosteriorGivesHalfBayesError) {
  const Dataset ds = GenTwoGaussians(0.0, 200, 10);
  CounterRng rng(10);
  ScoreTable t;
  ProbMap probs;
  for (const auto& e : ds.examples) {
    const double p1 = rng.Uniform();
    probs[e.id] = {1 - p1, p1};
    t.entries.push_back({e.id, p1 > 0.5 ? 1 : 0, std::max(p1, 1 - p1)});
  }
  DecomposeOptions opt;
  const auto b = DecomposeGap(t, ds, probs, opt);
  for (const auto& p : b.points) EXPECT_DOUBLE_EQ(p.eps_bayes, 0.5);
  EXPECT_EQ(b.points.size(), ds.size());
  // Without posteriors the decomposition is refused.
  Dataset bare = ds;
  for (auto& e : bare.examples) e.true_posterior.reset();
  EXPECT_THROW(DecomposeGap(t, bare, probs, opt), Error);
}

// Trains a small model on the Guardian mixture and returns MSP scores plus
// model probabilities on the eval split.
struct GuardianRun {
  Dataset eval;
  ScoreTable scores;
  ProbMap probs;
};

GuardianRun TrainGuardian(uint64_t seed) {
  const Dataset ds = GenGuardianMixture(seed).dataset;
  const auto [train, eval] = SplitDataset(ds, 0.5, seed);
  const FeatureScaler s = FeatureScaler::Fit(train);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = seed;
  auto r = TrainWithCheckpoints(s.Apply(train), s.Apply(eval),
                                InitNetwork({2, 32}, HeadKind::kLogits, 3, seed),
                                cfg);
  GuardianRun g{eval, ScoreTrace(r.trace, ScoreMethod::kMsp, {}), {}};
  for (size_t i = 0; i < eval.size(); ++i) {
    g.probs[eval.examples[i].id] = SoftmaxProbs(r.trace.Final(i));
  }
  return g;
}

TEST(DecomposeProperty, GapBoundHoldsOnGuardianMixture) {
  const auto g = TrainGuardian(11);
  DecomposeOptions opt;
  opt.delta = 0.05;
  opt.c_const = 1.0;
  const auto b = DecomposeGap(g.scores, g.eval, g.probs, opt);
  for (const auto& p : b.points) {
    EXPECT_LE(p.gap, p.eps_bayes + p.eps_approx + p.eps_rank + b.eps_stat + 1e-12)
        << "coverage " << p.coverage;
    EXPECT_GE(p.eps_rank, 0.0);
    EXPECT_LE(p.eps_rank, p.d_rank / (2.0 * p.coverage) + 1e-12);
  }
}

TEST(LossPredTest, Examples) {
  const std::vector<std::vector<double>> p{{0.9, 0.1}, {0.6, 0.4}, {0.3, 0.7}};
  const std::vector<bool> correct{true, false, true};
  const std::vector<double> sep{0.1, 0.4, 0.3};
  const auto same = ComputeLossPredMetrics(p, correct, sep, {{1, 1, 1}});
  EXPECT_NEAR(same.advantage, 0.0, 1e-15);
  for (size_t i = 0; i < 3; ++i) EXPECT_NEAR(same.sep[i], sep[i], 1e-15);
  const std::vector<double> loss{0, 1, 0};
  const auto perfect = ComputeLossPredMetrics(p, correct, loss, {{1, 1, 1}});
  const double e_sep = (0.01 + 0.36 + 0.09) / 3.0;
  EXPECT_NEAR(perfect.advantage, e_sep, 1e-15);
  // c = 1: |mean(correct - max p)| = |(0.1 - 0.6 + 0.3) / 3|.
  EXPECT_NEAR(perfect.mce, 0.2 / 3.0, 1e-15);
}

TEST(SelevalProperty, MonotoneTransformInvariance) {
  CounterRng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 20 + rng.Below(80);
    const Dataset ds = testing::RandomClassification(rng, n, 3, 1, false);
    std::vector<double> s(n);
    std::vector<bool> correct(n);
    for (size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.Uniform() * 20.0) / 20.0;  // forces ties
      correct[i] = rng.Uniform() < 0.7;
    }
    if (std::count(correct.begin(), correct.end(), true) == 0) correct[0] = true;
    if (std::count(correct.begin(), correct.end(), false) == 0) correct[0] = false;
    std::vector<double> t(n);
    for (size_t i = 0; i < n; ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
    const auto a = TableFor(ds, s, correct), b = TableFor(ds, t, correct);
    const auto ca = BuildCurve(a, ds, UtilityKind::kAccuracy);
    const auto cb = BuildCurve(b, ds, UtilityKind::kAccuracy);
    EXPECT_EQ(ca.order, cb.order);
    EXPECT_EQ(ca.utility, cb.utility);
    EXPECT_EQ(Auacc(ca), Auacc(cb));
    EXPECT_EQ(Auroc(a, correct), Auroc(b, correct));
    const auto ga = ComputeGapMetrics(ca), gb = ComputeGapMetrics(cb);
    EXPECT_EQ(ga.gap, gb.gap);
    EXPECT_EQ(ga.e_aurc, gb.e_aurc);
    for (double g : ga.gap) EXPECT_GE(g, -1e-12);
  }
}

TEST(SelevalProperty, RankingErrorNonnegativeOnRandomScores) {
  const Dataset ds = GenGuardianMixture(13).dataset;
  CounterRng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    ScoreTable t;
    ProbMap probs;
    for (const auto& e : ds.examples) {
      std::vector<double> z(3);
      for (double& v : z) v = rng.Normal() * 2.0;
      const auto p = SoftmaxProbs(z);
      const double score = std::round(rng.Uniform() * 10.0);  // ties
      t.entries.push_back({e.id, Argmax(p), score});
      probs[e.id] = p;
    }
    const auto b = DecomposeGap(t, ds, probs, {});
    for (const auto& p : b.points) {
      ASSERT_GE(p.eps_rank, 0.0);
      ASSERT_GE(p.gap, -1e-12);
    }
  }
}

TEST(SelevalProperty, AurocFlipSymmetry) {
  CounterRng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 10 + rng.Below(50);
    const Dataset ds = testing::RandomClassification(rng, n, 2, 1, false);
    std::vector<double> s(n);
    std::vector<bool> correct(n), flipped(n);
    for (size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.Uniform() * 8.0);
      correct[i] = i % 3 != 0;
      flipped[i] = !correct[i];
    }
    auto a = TableFor(ds, s, correct);
    auto b = a;
    b.orientation = Orientation::kLowerMoreConfident;
    EXPECT_DOUBLE_EQ(Auroc(a, correct), Auroc(b, flipped));
  }
}

TEST(CurveCsvTest, WritesHeaderAndRows) {
  const auto o = GenOracleScores(0.5, 10, 15);
  const auto c = BuildCurve(o.scores, o.dataset, UtilityKind::kAccuracy);
  testing::TempDir dir("curve");
  WriteCurveCsv(c, dir.path() / "c.csv");
  const std::string text = testing::ReadFile(dir.path() / "c.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "coverage,utility,bound,gap");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 11);
}

}  // namespace
}  // namespace abstain
