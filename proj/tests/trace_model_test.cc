#include <unistd.h>

#include <cmath>
#include <numeric>

#include "abstain/bundle.h"
#include "abstain/error.h"
#include "abstain/trace_model.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace abstain {
namespace {

using testing::RandomClassification;
using testing::RandomTrace;
using testing::ReadFile;
using testing::TempDir;
using testing::WriteFile;

TEST(SoftmaxTest, SymmetricPair) {
  const auto p = SoftmaxProbs(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(SoftmaxTest, ReRankingExampleMaxEntry) {
  const auto p = SoftmaxProbs(std::vector<double>{-2.0, -3.0, -3.0});
  EXPECT_NEAR(*std::max_element(p.begin(), p.end()), 0.576, 1e-3);
}

TEST(SoftmaxTest, LargeLogitsDoNotOverflow) {
  const auto p = SoftmaxProbs(std::vector<double>{1000.0, 999.0});
  EXPECT_TRUE(std::isfinite(p[0]));
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(SoftmaxProperty, SumsToOneAndShiftInvariant) {
  CounterRng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t c = 2 + rng.Below(8);
    std::vector<double> z(c), shifted(c);
    for (size_t j = 0; j < c; ++j) {
      z[j] = rng.Normal() * 10.0;
      shifted[j] = z[j] + 7.0;
    }
    const auto p = SoftmaxProbs(z);
    const auto q = SoftmaxProbs(shifted);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (size_t j = 0; j < c; ++j) {
      EXPECT_GE(p[j], 0.0);
      EXPECT_NEAR(p[j], q[j], 1e-12);
    }
  }
}

TEST(PredictLabelTest, ArgmaxAndTieBreak) {
  EXPECT_EQ(std::get<int>(PredictLabel(TaskKind::kClassification,
                                       std::vector<double>{0.1, 0.8, 0.1})),
            1);
  EXPECT_EQ(std::get<int>(PredictLabel(TaskKind::kClassification,
                                       std::vector<double>{0.5, 0.5})),
            0);
  EXPECT_EQ(std::get<double>(
                PredictLabel(TaskKind::kRegression, std::vector<double>{3.25})),
            3.25);
  const auto series =
      PredictLabel(TaskKind::kTimeseries, std::vector<double>{1.0, 2.0});
  EXPECT_EQ(std::get<std::vector<double>>(series),
            (std::vector<double>{1.0, 2.0}));
}

TEST(PredictLabelProperty, PermutingExamplesKeepsPredictions) {
  CounterRng rng(2);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 200; ++i) {
    // Coarse values force frequent ties.
    std::vector<double> r(4);
    for (double& v : r) v = static_cast<double>(rng.Below(3));
    rows.push_back(r);
  }
  std::vector<int> before;
  for (const auto& r : rows) before.push_back(Argmax(r));
  std::vector<size_t> perm(rows.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.Shuffle(std::span<size_t>(perm));
  for (size_t i : perm) EXPECT_EQ(Argmax(rows[i]), before[i]);
}

TEST(FormatRealTest, RoundTripsBitExactly) {
  CounterRng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.Normal() * std::pow(10.0, rng.Uniform(-30, 30));
    EXPECT_EQ(ParseReal(FormatReal(v)), v);
  }
  EXPECT_EQ(FormatReal(-0.0), "-0.0");
  EXPECT_TRUE(std::signbit(ParseReal(FormatReal(-0.0))));
  EXPECT_EQ(FormatReal(2.0), "2.0");
}

TEST(TraceTest, FromRowsRejectsRaggedRows) {
  std::vector<std::vector<std::vector<double>>> rows = {
      {{1.0, 2.0}, {3.0, 4.0}}, {{1.0, 2.0}}};
  try {
    PredictionTrace::FromRows(TaskKind::kClassification, {"e0", "e7"}, rows);
    FAIL() << "expected a ragged-trace error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("e7"), std::string::npos);
  }
}

TEST(TraceTest, FromRowsRejectsNonFinite) {
  std::vector<std::vector<std::vector<double>>> rows = {{{1.0, NAN}}};
  EXPECT_THROW(
      PredictionTrace::FromRows(TaskKind::kClassification, {"e0"}, rows),
      Error);
}

TEST(TraceProperty, BuilderIsRectangular) {
  CounterRng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 1 + rng.Below(10), t = 1 + rng.Below(6),
                 w = 1 + rng.Below(4);
    std::vector<std::string> ids;
    for (size_t i = 0; i < n; ++i) ids.push_back(ExampleId(i));
    TraceBuilder b(TaskKind::kClassification, ids, w);
    for (size_t c = 0; c < t; ++c) {
      std::vector<double> flat(n * w);
      for (double& v : flat) v = rng.Normal();
      b.AddCheckpoint(flat);
    }
    const auto tr = b.Build();
    EXPECT_EQ(tr.num_checkpoints(), t);
    EXPECT_EQ(tr.raw().size(), n * t * w);
    for (size_t i = 0; i < n; ++i) {
      for (size_t c = 0; c < t; ++c) EXPECT_EQ(tr.Output(i, c).size(), w);
    }
  }
}

TEST(DatasetTest, ValidateRejectsOutOfRangeLabel) {
  Dataset ds;
  ds.num_classes = 3;
  LabeledExample e;
  e.id = "e0";
  e.features = {0.0};
  e.label = 5;
  ds.examples.push_back(e);
  EXPECT_THROW(ds.Validate(), Error);
}

TEST(BundleTest, SmallRoundTrip) {
  TempDir dir("bundle_small");
  CounterRng rng(5);
  const Dataset ds = RandomClassification(rng, 3, 2, 2, false);
  const PredictionTrace tr = RandomTrace(rng, ds, 2, 2);
  SaveBundle(ds, &tr, dir.path());
  const Bundle b = LoadBundle(dir.path());
  EXPECT_EQ(b.dataset.size(), 3u);
  ASSERT_TRUE(b.trace.has_value());
  EXPECT_EQ(b.trace->num_examples(), 3u);
  EXPECT_EQ(b.trace->num_checkpoints(), 2u);
  EXPECT_EQ(b.trace->width(), 2u);
  EXPECT_EQ(*b.trace, tr);
}

TEST(BundleTest, SavesAreByteIdentical) {
  TempDir a("bundle_a"), b("bundle_b");
  CounterRng rng(6);
  const Dataset ds = RandomClassification(rng, 20, 3, 2, true);
  const PredictionTrace tr = RandomTrace(rng, ds, 4, 3);
  SaveBundle(ds, &tr, a.path());
  SaveBundle(ds, &tr, b.path());
  for (const char* f : {"meta.json", "labels.csv", "outputs.ndjson"}) {
    EXPECT_EQ(ReadFile(a.path() / f), ReadFile(b.path() / f)) << f;
  }
}

TEST(BundleTest, EditedLogitFailsChecksum) {
  TempDir dir("bundle_edit");
  CounterRng rng(7);
  const Dataset ds = RandomClassification(rng, 5, 2, 1, false);
  const PredictionTrace tr = RandomTrace(rng, ds, 2, 2);
  SaveBundle(ds, &tr, dir.path());
  const auto path = dir.path() / "outputs.ndjson";
  std::string text = ReadFile(path);
  const size_t at = text.find("\"out\":[") + 7;
  text.insert(at, "1");
  WriteFile(path, text);
  try {
    LoadBundle(dir.path());
    FAIL() << "expected a checksum error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(BundleTest, ChecksumMatchesFnv1a) {
  // FNV-1a 64 of the empty input is the offset basis.
  EXPECT_EQ(BundleChecksum("", ""), 0xcbf29ce484222325ULL);
  // "a": (basis ^ 0x61) * prime.
  EXPECT_EQ(BundleChecksum("a", ""), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(BundleChecksum("ab", "c"), BundleChecksum("a", "bc"));
}

TEST(BundleTest, RaggedTraceOnDiskNamesExample) {
  TempDir dir("bundle_ragged");
  CounterRng rng(8);
  Dataset ds = RandomClassification(rng, 2, 2, 1, false);
  ds.examples[1].id = "e7";
  const PredictionTrace tr = RandomTrace(rng, ds, 2, 2);
  SaveBundle(ds, &tr, dir.path());
  // Drop e7's second checkpoint and refresh the checksum.
  std::istringstream in(ReadFile(dir.path() / "outputs.ndjson"));
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.find("\"e7\"") != std::string::npos &&
        line.find("\"t\":1") != std::string::npos) {
      continue;
    }
    kept += line + "\n";
  }
  WriteFile(dir.path() / "outputs.ndjson", kept);
  const std::string labels = ReadFile(dir.path() / "labels.csv");
  std::string meta = ReadFile(dir.path() / "meta.json");
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(BundleChecksum(labels, kept)));
  const size_t at = meta.find("\"checksum\"");
  const size_t q1 = meta.find('"', meta.find(':', at)) + 1;
  meta.replace(q1, 16, hex);
  WriteFile(dir.path() / "meta.json", meta);
  try {
    LoadBundle(dir.path());
    FAIL() << "expected a ragged-trace error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("e7"), std::string::npos) << e.what();
  }
}

TEST(BundleTest, MissingFileIsReported) {
  TempDir dir("bundle_missing");
  EXPECT_THROW(LoadBundle(dir.path()), Error);
}

TEST(BundleProperty, RoundTripIsIdentity) {
  CounterRng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    TempDir dir("bundle_prop");
    const int kind = trial % 3;
    Dataset ds;
    std::optional<PredictionTrace> tr;
    if (kind == 0) {
      ds = RandomClassification(rng, 1 + rng.Below(12), 2 + rng.Below(3),
                                rng.Below(3), trial % 2 == 0);
      tr = RandomTrace(rng, ds, 1 + rng.Below(4), ds.num_classes);
    } else {
      ds.task = kind == 1 ? TaskKind::kRegression : TaskKind::kTimeseries;
      ds.horizon = kind == 2 ? 3 : 0;
      for (size_t i = 0; i < 1 + rng.Below(10); ++i) {
        LabeledExample e;
        e.id = ExampleId(i);
        e.features = {rng.Normal(), rng.Normal()};
        if (kind == 1) {
          e.label = rng.Normal() * 1e3;
          e.noise_scale = rng.Uniform();
        } else {
          e.label = std::vector<double>{rng.Normal(), rng.Normal(), rng.Normal()};
        }
        ds.examples.push_back(std::move(e));
      }
      tr = RandomTrace(rng, ds, 1 + rng.Below(3), kind == 1 ? 1 : 3);
    }
    const bool with_trace = trial % 4 != 3;
    SaveBundle(ds, with_trace ? &*tr : nullptr, dir.path());
    const Bundle b = LoadBundle(dir.path());
    ASSERT_EQ(b.dataset.size(), ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
      const auto& x = ds.examples[i];
      const auto& y = b.dataset.examples[i];
      EXPECT_EQ(x.id, y.id);
      EXPECT_EQ(x.features, y.features);
      EXPECT_TRUE(LabelsEqual(x.label, y.label));
      EXPECT_EQ(x.region_flag, y.region_flag);
      EXPECT_EQ(x.true_posterior, y.true_posterior);
      EXPECT_EQ(x.noise_scale, y.noise_scale);
    }
    EXPECT_EQ(b.trace.has_value(), with_trace);
    if (with_trace) EXPECT_EQ(*b.trace, *tr);
  }
}

}  // namespace
}  // namespace abstain
