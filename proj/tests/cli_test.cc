#include <unistd.h>

#include <sstream>

#include "abstain/bundle.h"
#include "abstain/datagen.h"
#include "abstain/error.h"
#include "abstain/network.h"
#include "abstain/pipeline.h"
#include "abstain/plots.h"
#include "abstain/seleval.h"
#include "gtest/gtest.h"
#include "nlohmann/json.hpp"
#include "test_util.h"

#ifndef ABSTAIN_SOURCE_DIR
#error "ABSTAIN_SOURCE_DIR must point at the source tree"
#endif

namespace abstain {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = RunCommand(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json ReadJson(const fs::path& p) { return json::parse(testing::ReadFile(p)); }

TEST(CliTest, GenDataWritesBundle) {
  testing::TempDir dir("cli_gen");
  const fs::path d = dir.path() / "d";
  const CliRun r = Cli({"gen-data", "two-gaussians", "--a", "5", "--n", "1000",
                     "--seed", "7", "--out", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Bundle b = LoadBundle(d);
  EXPECT_EQ(b.dataset.size(), 1000u);
  EXPECT_TRUE(b.dataset.has_posterior());
  EXPECT_FALSE(b.trace.has_value());
  EXPECT_EQ(ReadJson(d / "metrics.json")["stage"], "gen-data");
  // Same seed, same bytes.
  const fs::path d2 = dir.path() / "d2";
  ASSERT_EQ(Cli({"gen-data", "--generator", "two-gaussians", "--a", "5",
                 "--n", "1000", "--seed", "7", "--out", d2.string()})
                .code,
            0);
  EXPECT_EQ(testing::ReadFile(d / "labels.csv"),
            testing::ReadFile(d2 / "labels.csv"));
}

TEST(CliTest, InvalidInputExitsOne) {
  testing::TempDir dir("cli_bad");
  CliRun r = Cli({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE((r.out + r.err).find("gen-data"), std::string::npos);
  r = Cli({});
  EXPECT_EQ(r.code, 1);
  r = Cli({"gen-data", "guardian", "--bogus", "3", "--out", dir.path().string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  const std::string missing = (dir.path() / "nowhere").string();
  r = Cli({"train", "--data", missing, "--out", (dir.path() / "t").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nowhere"), std::string::npos);
  r = Cli({"gen-data", "two-moons", "--noise", "-1", "--out",
           (dir.path() / "m").string()});
  EXPECT_EQ(r.code, 1);
}

TEST(CliTest, DivergenceExitsTwo) {
  testing::TempDir dir("cli_div");
  const std::string data = (dir.path() / "sine").string();
  ASSERT_EQ(Cli({"gen-data", "regression-sine", "--n", "200", "--out", data}).code, 0);
  const CliRun r = Cli({"train", "--data", data, "--loss", "gaussian_nll",
                     "--hidden", "8", "--lr", "1e6", "--epochs", "50",
                     "--out", (dir.path() / "t").string()});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_NE(r.err.find("step"), std::string::npos);
}

TEST(CliTest, StageChainRoundTrips) {
  testing::TempDir dir("cli_chain");
  const fs::path root = dir.path();
  auto path = [&](const char* s) { return (root / s).string(); };
  ASSERT_EQ(Cli({"gen-data", "two-moons", "--n", "400", "--noise", "0.3",
                 "--out", path("data")})
                .code,
            0);
  CliRun r = Cli({"train", "--data", path("data"), "--hidden", "16", "--epochs",
               "20", "--checkpoint-every", "5", "--out", path("train")});
  ASSERT_EQ(r.code, 0) << r.err;
  const Bundle eval = LoadBundle(root / "train" / "eval");
  ASSERT_TRUE(eval.trace.has_value());
  EXPECT_GE(eval.trace->num_checkpoints(), 2u);
  const MlpNetwork net = LoadNetwork(root / "train" / "model.json");
  EXPECT_EQ(net.input_dim(), 2u);

  for (const char* method : {"msp", "sptd", "ensemble", "smax", "ssum", "jump", "var"}) {
    r = Cli({"score", "--trace", path("train/eval"), "--method", method,
             "--out", path("score")});
    ASSERT_EQ(r.code, 0) << method << ": " << r.err;
    r = Cli({"curve", "--scores", path("score/scores.csv"), "--data",
             path("train/eval"), "--out", path("curve")});
    ASSERT_EQ(r.code, 0) << method << ": " << r.err;
    const json m = ReadJson(root / "curve" / "metrics.json");
    EXPECT_GE(m["auacc"].get<double>(), 0.0);
    EXPECT_GE(m["e_aurc"].get<double>(), -1e-12);
    EXPECT_TRUE(fs::exists(root / "curve" / "curve.svg"));
    EXPECT_TRUE(fs::exists(root / "curve" / "curve.csv"));
  }
  // Two-moons carries no posteriors, so the decomposition is refused.
  r = Cli({"decompose", "--scores", path("score/scores.csv"), "--data",
           path("train/eval"), "--out", path("nogap")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("posterior"), std::string::npos);
  r = Cli({"audit", "--ref", path("train/eval"), "--bins", "10", "--alpha",
           "0.1", "--out", path("audit")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json audit = ReadJson(root / "audit" / "audit.json");
  EXPECT_TRUE(audit.contains("pass"));
  EXPECT_TRUE(fs::exists(root / "audit" / "reliability.svg"));
  r = Cli({"report", "--dir", root.string(), "--out", root.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = ReadJson(root / "report.json");
  EXPECT_EQ(report["schema"], 1);
  EXPECT_EQ(report["stages"].size(), 5u);  // the refused stage wrote none
  EXPECT_TRUE(report["metrics"].contains("audit"));
}

TEST(CliTest, RegressionCurveAndMsisRefusal) {
  testing::TempDir dir("cli_reg");
  const fs::path root = dir.path();
  auto path = [&](const char* s) { return (root / s).string(); };
  ASSERT_EQ(Cli({"gen-data", "regression-sine", "--n", "300", "--out", path("d")}).code, 0);
  ASSERT_EQ(Cli({"train", "--data", path("d"), "--loss", "gaussian_nll",
                 "--hidden", "16", "--lr", "0.01", "--epochs", "10",
                 "--checkpoint-every", "5", "--out", path("t")})
                .code,
            0);
  ASSERT_EQ(Cli({"score", "--trace", path("t/eval"), "--method", "sptd",
                 "--out", path("s")})
                .code,
            0);
  CliRun r = Cli({"curve", "--scores", path("s/scores.csv"), "--data",
               path("t/eval"), "--utility", "r2", "--out", path("c")});
  EXPECT_EQ(r.code, 0) << r.err;
  r = Cli({"curve", "--scores", path("s/scores.csv"), "--data",
           path("t/eval"), "--utility", "msis", "--out", path("c2")});
  EXPECT_EQ(r.code, 1);
}

TEST(CliTest, DecomposeOnPosteriorData) {
  testing::TempDir dir("cli_gap");
  const fs::path root = dir.path();
  auto path = [&](const char* s) { return (root / s).string(); };
  ASSERT_EQ(Cli({"gen-data", "guardian", "--seed", "3", "--out", path("d")}).code, 0);
  ASSERT_EQ(Cli({"train", "--data", path("d"), "--hidden", "16", "--epochs",
                 "10", "--out", path("t")})
                .code,
            0);
  ASSERT_EQ(Cli({"score", "--trace", path("t/eval"), "--method", "msp",
                 "--out", path("s")})
                .code,
            0);
  const CliRun r = Cli({"decompose", "--scores", path("s/scores.csv"), "--data",
                        path("t/eval"), "--grid", "0.5,1.0", "--out", path("g")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(ReadJson(root / "g" / "gap_budget.json")["points"].size(), 2u);
  EXPECT_TRUE(ReadJson(root / "g" / "metrics.json")["bound_holds"].get<bool>());
}

TEST(CliTest, SurgeryStage) {
  testing::TempDir dir("cli_surgery");
  const fs::path model = dir.path() / "m.json";
  SaveNetwork(InitNetwork({2, 16, 16}, HeadKind::kLogits, 3, 5), model);
  const CliRun r = Cli({"surgery", "--model", model.string(), "--region",
                     R"({"dims": [{"index": 0, "lower": 0, "upper": 1},
                               {"index": 1, "lower": 0, "upper": 1}]})", "--shift", "0,2,0",
                     "--verify", "2000", "--out", (dir.path() / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = ReadJson(dir.path() / "s" / "surgery_report.json");
  EXPECT_LE(rep["outside_max"].get<double>(), 1e-5);
  EXPECT_LE(rep["core_max"].get<double>(), 1e-5);
  LoadNetwork(dir.path() / "s" / "augmented_model.json").Validate();
}

TEST(PipelineTest, ConfigValidation) {
  testing::TempDir dir("cli_cfg");
  auto run_cfg = [&](const json& cfg) {
    const fs::path p = dir.path() / "cfg.json";
    testing::WriteFile(p, cfg.dump());
    return Cli({"pipeline", p.string(), "--out", (dir.path() / "o").string()});
  };
  const json gen = {{"name", "data"}, {"stage", "gen-data"},
                    {"params", {{"generator", "guardian"}}}};
  EXPECT_EQ(run_cfg({{"stages", {gen}}}).code, 1);  // no seed
  json forward = {{"name", "score"}, {"stage", "score"},
                  {"params", {{"trace", "@later/eval"}}}};
  EXPECT_EQ(run_cfg({{"seed", 1}, {"stages", {gen, forward}}}).code, 1);
  json seeded = gen;
  seeded["name"] = "again";
  seeded["params"]["seed"] = 3;
  EXPECT_EQ(run_cfg({{"seed", 1}, {"stages", {gen, seeded}}}).code, 1);
  json bad_stage = {{"name", "x"}, {"stage", "dance"}};
  EXPECT_EQ(run_cfg({{"seed", 1}, {"stages", {bad_stage}}}).code, 1);
  EXPECT_EQ(run_cfg({{"seed", 1}, {"stages", {gen}}}).code, 0);
}

TEST(PipelineTest, GuardianDemoReportsFailedAudit) {
  testing::TempDir dir("cli_demo");
  const std::string cfg =
      std::string(ABSTAIN_SOURCE_DIR) + "/configs/guardian_demo.json";
  const CliRun r = Cli({"pipeline", cfg, "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = ReadJson(dir.path() / "report.json");
  EXPECT_EQ(report["schema"], 1);
  EXPECT_FALSE(report["metrics"]["audit_attacked"]["pass"].get<bool>());
  EXPECT_TRUE(report["metrics"]["gap"]["bound_holds"].get<bool>());
  for (const auto& a : report["artifacts"]) {
    EXPECT_TRUE(fs::exists(dir.path() / a.get<std::string>())) << a;
  }
  EXPECT_NE(r.out.find("audit failed"), std::string::npos);
}

TEST(PlotTest, OracleCurveTracesTheBound) {
  const auto o = GenOracleScores(0.4, 200, 3);
  const auto curve = BuildCurve(o.scores, o.dataset, UtilityKind::kAccuracy);
  const std::string svg = CurveSvg(curve, "oracle");
  const auto c = ParsePolyline(svg, "curve");
  const auto b = ParsePolyline(svg, "bound");
  ASSERT_EQ(c.size(), 200u);
  EXPECT_EQ(c, b);
  EXPECT_NE(svg.find("width=\"640\""), std::string::npos);
  EXPECT_NE(svg.find("height=\"480\""), std::string::npos);
  EXPECT_EQ(CurveSvg(curve, "oracle"), svg);
  EXPECT_THROW(CurveSvg(SelectiveCurve{}, "empty"), Error);
}

TEST(PlotTest, ReliabilityAndHistogramAreDeterministic) {
  const std::vector<double> conf{0.1, 0.45, 0.8, 0.95, 1.0};
  const auto table = BinTable(conf, {false, true, true, true, true}, 10);
  EXPECT_EQ(ReliabilitySvg(table, "r"), ReliabilitySvg(table, "r"));
  const std::vector<std::vector<double>> samples{{0.2, 0.4}, {0.9}};
  const std::string h = HistogramSvg(samples, {"in", "out"}, 20, "h");
  EXPECT_EQ(h, HistogramSvg(samples, {"in", "out"}, 20, "h"));
  EXPECT_NE(h.find("<svg"), std::string::npos);
  EXPECT_THROW(WriteText("/proc/definitely/not/here.svg", h), Error);
}

}  // namespace
}  // namespace abstain
