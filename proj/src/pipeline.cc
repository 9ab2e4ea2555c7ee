#include "abstain/pipeline.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "abstain/attack.h"
#include "abstain/bundle.h"
#include "abstain/calibration.h"
#include "abstain/datagen.h"
#include "abstain/error.h"
#include "abstain/mirage.h"
#include "abstain/network.h"
#include "abstain/plots.h"
#include "abstain/scoring.h"
#include "abstain/seleval.h"
#include "abstain/surgery.h"
#include "abstain/trainer.h"
#include "json.hpp"

namespace abstain {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kReportSchema = 1;

const char* const kStageKinds[] = {"gen-data", "train",  "score",
                                   "curve",    "decompose", "audit",
                                   "attack",   "surgery", "report"};

struct Context {
  uint64_t seed = 0;
  fs::path out;
};

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json ParseJson(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + what + ": " + e.what());
  }
}

void WriteJson(const fs::path& path, const json& j) {
  WriteText(path, j.dump(2) + "\n");
}

void PrepareDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

void WriteMetrics(const Context& ctx, const std::string& stage, json metrics) {
  metrics["stage"] = stage;
  WriteJson(ctx.out / "metrics.json", metrics);
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> parts;
  if (text.empty()) return parts;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::vector<int> ParseIntList(const std::string& text, const std::string& flag) {
  std::vector<int> v;
  for (const auto& p : SplitList(text)) {
    try {
      size_t used = 0;
      v.push_back(std::stoi(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw Error(flag + ": '" + p + "' is not an integer");
    }
  }
  return v;
}

std::vector<double> ParseRealList(const std::string& text,
                                  const std::string& flag) {
  std::vector<double> v;
  for (const auto& p : SplitList(text)) {
    try {
      v.push_back(ParseReal(p));
    } catch (const Error&) {
      throw Error(flag + ": '" + p + "' is not a real number");
    }
  }
  return v;
}

// Inline JSON or a path to a JSON file.
BoxRegion LoadRegion(const std::string& arg) {
  if (arg.empty()) throw Error("--region is required");
  const bool inline_json = arg.front() == '{' || arg.front() == '[';
  return RegionFromJson(inline_json ? arg : ReadText(arg));
}

std::vector<int> ClassLabels(const Dataset& ds) {
  if (ds.task != TaskKind::kClassification) {
    throw Error("a classification dataset is required");
  }
  std::vector<int> y;
  y.reserve(ds.size());
  for (const auto& e : ds.examples) y.push_back(std::get<int>(e.label));
  return y;
}

// Correctness of each score entry against the dataset label with that id.
std::vector<bool> EntryCorrect(const ScoreTable& table, const Dataset& ds) {
  std::map<std::string, const Label*, std::less<>> labels;
  for (const auto& e : ds.examples) labels[e.id] = &e.label;
  std::vector<bool> correct;
  for (const auto& entry : table.entries) {
    const auto it = labels.find(entry.id);
    if (it == labels.end()) {
      throw Error("score id '" + entry.id + "' is missing from the dataset");
    }
    correct.push_back(LabelsEqual(entry.prediction, *it->second));
  }
  return correct;
}

// Probability rows of a classifier: the model applied to the dataset, or the
// final checkpoint of the bundle's trace. Rows follow dataset order.
std::vector<std::vector<double>> ModelProbs(const Bundle& bundle,
                                            const std::string& model_path,
                                            double temperature) {
  if (!(temperature > 0.0)) throw Error("--temperature must be positive");
  std::vector<std::vector<double>> probs;
  const Dataset& ds = bundle.dataset;
  if (!model_path.empty()) {
    const MlpNetwork net = LoadNetwork(model_path);
    if (net.head != HeadKind::kLogits) throw Error("model is not a classifier");
    for (const auto& e : ds.examples) {
      probs.push_back(ApplyTemperature(Forward(net, e.features), temperature)
                          .probs);
    }
    return probs;
  }
  if (!bundle.trace) throw Error("bundle has no trace; pass --model");
  const PredictionTrace& tr = *bundle.trace;
  if (tr.task() != TaskKind::kClassification) {
    throw Error("trace is not a classification trace");
  }
  for (size_t i = 0; i < tr.num_examples(); ++i) {
    probs.push_back(ApplyTemperature(tr.Final(i), temperature).probs);
  }
  return probs;
}

json SummaryJson(const ModelSummary& s) {
  return {{"accuracy", s.accuracy},
          {"region_accuracy", s.region_accuracy},
          {"ece", s.ece},
          {"region_confidence", s.region_confidence},
          {"overlap", s.overlap}};
}

PredictionTrace SingleCheckpoint(const MlpNetwork& net, const Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& e : ds.examples) ids.push_back(e.id);
  TraceBuilder builder(ds.task, std::move(ids), net.output_dim());
  std::vector<double> flat;
  for (const auto& e : ds.examples) {
    const auto o = Forward(net, e.features);
    flat.insert(flat.end(), o.begin(), o.end());
  }
  builder.AddCheckpoint(flat);
  return builder.Build();
}

// ---- gen-data ----

struct GenOptions {
  std::string generator;
  double a = 1.0;
  int n = 0;
  int n_per_class = 500;
  int n_major = 1000;
  double noise = 0.1;
  std::string shift = "none";
  double a_full = 0.8;
};

void RunGenData(const Context& ctx, const GenOptions& o) {
  const auto n_or = [&](int fallback) { return o.n > 0 ? o.n : fallback; };
  PrepareDir(ctx.out);
  json m{{"generator", o.generator}};
  Dataset ds;
  if (o.generator == "two-gaussians") {
    const int per_class = o.n > 0 ? o.n / 2 : o.n_per_class;
    ds = GenTwoGaussians(o.a, per_class, ctx.seed);
    m["a"] = o.a;
  } else if (o.generator == "outlier-imbalance") {
    ds = GenOutlierImbalance(o.n_major, ctx.seed);
  } else if (o.generator == "guardian") {
    auto g = GenGuardianMixture(ctx.seed);
    ds = std::move(g.dataset);
    WriteText(ctx.out / "region.json", RegionToJson(g.region) + "\n");
    size_t in = 0;
    for (const auto& e : ds.examples) in += e.region_flag;
    m["region_points"] = in;
  } else if (o.generator == "two-moons") {
    ds = GenTwoMoons(n_or(1000), o.noise, ParseMoonShift(o.shift), ctx.seed);
    m["noise"] = o.noise;
    m["shift"] = o.shift;
  } else if (o.generator == "oracle-scores") {
    auto g = GenOracleScores(o.a_full, n_or(1000), ctx.seed);
    ds = std::move(g.dataset);
    WriteScoreCsv(g.scores, ctx.out / "scores.csv");
    m["a_full"] = o.a_full;
  } else if (o.generator == "regression-sine") {
    ds = GenRegressionSine(n_or(1000), ctx.seed);
  } else {
    throw Error("unknown generator '" + o.generator + "'");
  }
  SaveBundle(ds, nullptr, ctx.out);
  m["n"] = ds.size();
  m["task"] = std::string(TaskName(ds.task));
  if (ds.task == TaskKind::kClassification) m["num_classes"] = ds.num_classes;
  WriteMetrics(ctx, "gen-data", m);
}

// ---- train ----

struct MirageOptions {
  std::string region;
  double epsilon = 0.15;
  double lambda = 0.5;
  double scale = 2.0;
  std::string target = "default";
  std::string subset;
  std::string weights;
  double sigma2_target = 4.0;

  MirageSpec Spec() const {
    MirageSpec s;
    s.region = LoadRegion(region);
    s.epsilon = epsilon;
    s.lambda = lambda;
    s.scale = scale;
    s.target = ParseTargetKind(target);
    s.subset = ParseIntList(subset, "--subset");
    s.weights = ParseRealList(weights, "--weights");
    return s;
  }
  MirageRegressionSpec RegressionSpec() const {
    MirageRegressionSpec s;
    s.region = LoadRegion(region);
    s.sigma2_target = sigma2_target;
    s.lambda = lambda;
    return s;
  }
};

void AddMirageFlags(CLI::App* cmd, MirageOptions& o) {
  cmd->add_option("--region", o.region, "region JSON or file");
  cmd->add_option("--epsilon", o.epsilon, "target truth bias")
      ->capture_default_str();
  cmd->add_option("--lambda", o.lambda, "weight of the in-region term")
      ->capture_default_str();
  cmd->add_option("--scale", o.scale, "overall loss scale")
      ->capture_default_str();
  cmd->add_option("--target", o.target, "default, subset or weighted")
      ->capture_default_str();
  cmd->add_option("--subset", o.subset, "class subset, comma separated");
  cmd->add_option("--weights", o.weights, "class weights, comma separated");
  cmd->add_option("--sigma2-target", o.sigma2_target,
                  "regression target variance")
      ->capture_default_str();
}

struct TrainOptions {
  std::string data;
  std::string hidden = "100";
  double lr = 0.05;
  int epochs = 50;
  int batch = 64;
  int checkpoint_every = 50;
  std::string loss;
  std::string optimizer = "sgd";
  double train_fraction = 0.5;
  std::string init;
  bool standardize = true;
  MirageOptions mirage;
};

void RunTrain(const Context& ctx, const TrainOptions& o) {
  const Bundle bundle = LoadBundle(o.data);
  const Dataset& ds = bundle.dataset;
  const bool classification = ds.task == TaskKind::kClassification;
  std::string loss_name = o.loss;
  if (loss_name.empty()) {
    loss_name = classification ? "cross_entropy" : "gaussian_nll";
  }
  TrainConfig config;
  config.learning_rate = o.lr;
  config.epochs = o.epochs;
  config.batch_size = o.batch;
  config.checkpoint_every = o.checkpoint_every;
  config.seed = ctx.seed;
  config.optimizer = ParseOptimizer(o.optimizer);
  if (loss_name == "cross_entropy") {
    config.loss = CrossEntropyLoss{};
  } else if (loss_name == "gaussian_nll") {
    config.loss = GaussianNllLoss{};
  } else if (loss_name == "mirage") {
    config.loss = o.mirage.Spec();
  } else if (loss_name == "mirage_regression") {
    config.loss = o.mirage.RegressionSpec();
  } else {
    throw Error("unknown loss '" + loss_name + "'");
  }
  config.Validate();

  auto [train, eval] = SplitDataset(ds, o.train_fraction, ctx.seed);
  MlpNetwork net;
  const bool fresh = o.init.empty();
  if (fresh) {
    std::vector<int> widths{static_cast<int>(ds.feature_dim())};
    for (int w : ParseIntList(o.hidden, "--hidden")) widths.push_back(w);
    net = InitNetwork(widths,
                      classification ? HeadKind::kLogits : HeadKind::kMeanLogVar,
                      classification ? ds.num_classes : 0, ctx.seed);
  } else {
    net = LoadNetwork(o.init);
  }
  // A loaded model takes raw features, so only fresh models are trained on
  // standardized inputs.
  const bool standardize = o.standardize && fresh;
  TrainResult result;
  if (standardize) {
    const FeatureScaler scaler = FeatureScaler::Fit(train);
    TrainConfig scaled = config;
    if (auto* m = std::get_if<MirageSpec>(&scaled.loss)) {
      m->region = scaler.Apply(m->region);
    } else if (auto* r = std::get_if<MirageRegressionSpec>(&scaled.loss)) {
      r->region = scaler.Apply(r->region);
    }
    result = TrainWithCheckpoints(scaler.Apply(train), scaler.Apply(eval),
                                  std::move(net), scaled);
    result.network = scaler.Fold(std::move(result.network));
  } else {
    result = TrainWithCheckpoints(train, eval, std::move(net), config);
  }

  PrepareDir(ctx.out);
  SaveNetwork(result.network, ctx.out / "model.json");
  SaveBundle(eval, &result.trace, ctx.out / "eval");
  json m{{"loss", loss_name},
         {"optimizer", o.optimizer},
         {"steps", result.steps},
         {"checkpoints", result.trace.num_checkpoints()},
         {"final_epoch_loss", result.epoch_loss.back()},
         {"eval_loss", MeanLoss(result.network, eval, config.loss)},
         {"train_size", train.size()},
         {"eval_size", eval.size()}};
  if (classification) {
    m["eval_accuracy"] = Accuracy(result.network, eval);
    m["train_accuracy"] = Accuracy(result.network, train);
  }
  WriteMetrics(ctx, "train", m);
}

// ---- score ----

struct ScoreCliOptions {
  std::string trace;
  std::string method = "sptd";
  double k = 2.0;
  std::string metric = "confidence";
  double temperature = 1.0;
  size_t members = 0;
};

void RunScore(const Context& ctx, const ScoreCliOptions& o) {
  const Bundle bundle = LoadBundle(o.trace);
  if (!bundle.trace) throw Error(o.trace + " holds no prediction trace");
  ScoreOptions opts;
  opts.k = o.k;
  opts.metric = ParseAuxMetric(o.metric);
  opts.temperature = o.temperature;
  opts.members = o.members;
  const ScoreMethod method = ParseScoreMethod(o.method);
  const ScoreTable table = ScoreTrace(*bundle.trace, method, opts);
  PrepareDir(ctx.out);
  WriteScoreCsv(table, ctx.out / "scores.csv");
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& e : table.entries) {
    lo = std::min(lo, e.score);
    hi = std::max(hi, e.score);
  }
  WriteMetrics(ctx, "score",
               {{"method", std::string(ScoreMethodName(method))},
                {"orientation", std::string(OrientationName(table.orientation))},
                {"n", table.entries.size()},
                {"checkpoints", bundle.trace->num_checkpoints()},
                {"score_min", lo},
                {"score_max", hi}});
}

// ---- curve ----

struct CurveOptions {
  std::string scores;
  std::string data;
  std::string utility = "accuracy";
};

json NullableReal(double v) { return std::isfinite(v) ? json(v) : json(); }

void RunCurve(const Context& ctx, const CurveOptions& o) {
  const Bundle bundle = LoadBundle(o.data);
  const Dataset& ds = bundle.dataset;
  const ScoreTable table = ReadScoreCsv(o.scores, ds.task);
  const UtilityKind kind = ParseUtilityKind(o.utility);
  if (kind == UtilityKind::kMsis) {
    throw Error("the msis utility needs interval forecasts; use the library");
  }
  const SelectiveCurve curve = BuildCurve(table, ds, kind);
  PrepareDir(ctx.out);
  WriteCurveCsv(curve, ctx.out / "curve.csv");
  WriteText(ctx.out / "curve.svg",
            CurveSvg(curve, std::string(UtilityKindName(kind)) +
                                "-coverage curve"));
  json m{{"utility", std::string(UtilityKindName(kind))},
         {"n", curve.size()},
         {"auacc", NullableReal(Auacc(curve))},
         {"full_coverage_utility", NullableReal(curve.utility.back())}};
  if (kind == UtilityKind::kAccuracy) {
    const GapMetrics gm = ComputeGapMetrics(curve);
    m["a_full"] = curve.a_full;
    m["e_aurc"] = gm.e_aurc;
    m["max_gap"] = *std::max_element(gm.gap.begin(), gm.gap.end());
    const auto correct = EntryCorrect(table, ds);
    const size_t hits = std::count(correct.begin(), correct.end(), true);
    m["auroc"] = hits == 0 || hits == correct.size()
                     ? json()
                     : json(Auroc(table, correct));
  }
  WriteMetrics(ctx, "curve", m);
}

// ---- decompose ----

struct DecomposeCliOptions {
  std::string scores;
  std::string data;
  std::string model;
  double temperature = 1.0;
  std::string grid;
  double delta = 0.05;
  double c_const = 1.0;
};

void RunDecompose(const Context& ctx, const DecomposeCliOptions& o) {
  const Bundle bundle = LoadBundle(o.data);
  const ScoreTable table = ReadScoreCsv(o.scores, bundle.dataset.task);
  const auto probs = ModelProbs(bundle, o.model, o.temperature);
  std::map<std::string, std::vector<double>, std::less<>> by_id;
  for (size_t i = 0; i < probs.size(); ++i) {
    by_id[bundle.dataset.examples[i].id] = probs[i];
  }
  DecomposeOptions opts;
  opts.grid = ParseRealList(o.grid, "--grid");
  opts.delta = o.delta;
  opts.c_const = o.c_const;
  const GapBudget budget = DecomposeGap(table, bundle.dataset, by_id, opts);
  PrepareDir(ctx.out);
  WriteText(ctx.out / "gap_budget.json", GapBudgetJson(budget) + "\n");
  double max_gap = -INFINITY, min_slack = INFINITY;
  for (const auto& p : budget.points) {
    max_gap = std::max(max_gap, p.gap);
    min_slack = std::min(min_slack, p.eps_bayes + p.eps_approx + p.eps_rank +
                                        budget.eps_stat - p.gap);
  }
  WriteMetrics(ctx, "decompose",
               {{"points", budget.points.size()},
                {"eps_stat", budget.eps_stat},
                {"e_aurc", budget.e_aurc},
                {"max_gap", max_gap},
                {"min_slack", min_slack},
                {"bound_holds", min_slack >= 0.0}});
}

// ---- audit ----

struct AuditOptions {
  std::string ref;
  std::string model;
  int bins = 10;
  double alpha = 0.1;
  double temperature = 1.0;
};

void RunAudit(const Context& ctx, const AuditOptions& o) {
  const Bundle bundle = LoadBundle(o.ref);
  const auto labels = ClassLabels(bundle.dataset);
  const auto probs = ModelProbs(bundle, o.model, o.temperature);
  const AuditReport report = GuardianAudit(probs, labels, o.bins, o.alpha);
  const EceMetrics ece = ComputeEce(report.table);
  PrepareDir(ctx.out);
  WriteText(ctx.out / "audit.json", AuditReportJson(report) + "\n");
  WriteText(ctx.out / "reliability.svg",
            ReliabilitySvg(report.table, "reliability diagram"));
  WriteMetrics(ctx, "audit",
               {{"pass", report.pass},
                {"failing_bins", report.failing_bins},
                {"bins", o.bins},
                {"alpha", o.alpha},
                {"n", report.table.total},
                {"ece", ece.ece},
                {"max_ce", ece.max_ce}});
}

// ---- attack ----

struct AttackOptions {
  std::string data;
  std::string hidden = "100";
  double lr = 0.05;
  int batch = 64;
  int pretrain_epochs = 100;
  int finetune_epochs = 300;
  double train_fraction = 0.5;
  std::string start = "init";
  int bins = 10;
  MirageOptions mirage;
};

void ConfidenceSplit(const MlpNetwork& net, const Dataset& ds,
                     const BoxRegion& region, std::vector<double>& in,
                     std::vector<double>& out) {
  for (const auto& e : ds.examples) {
    const auto p = SoftmaxProbs(Forward(net, e.features));
    const double c = *std::max_element(p.begin(), p.end());
    (region.Contains(e.features) ? in : out).push_back(c);
  }
}

void RunAttack(const Context& ctx, const AttackOptions& o) {
  const Bundle bundle = LoadBundle(o.data);
  AttackConfig config;
  config.hidden = ParseIntList(o.hidden, "--hidden");
  config.learning_rate = o.lr;
  config.batch_size = o.batch;
  config.pretrain_epochs = o.pretrain_epochs;
  config.finetune_epochs = o.finetune_epochs;
  config.train_fraction = o.train_fraction;
  config.start = ParseAttackStart(o.start);
  config.seed = ctx.seed;
  config.bins = o.bins;
  PrepareDir(ctx.out);

  if (bundle.dataset.task == TaskKind::kRegression) {
    config.mirage_regression = o.mirage.RegressionSpec();
    const RegressionAttackResult r = RunRegressionAttack(bundle.dataset, config);
    SaveNetwork(r.clean, ctx.out / "clean_model.json");
    SaveNetwork(r.attacked, ctx.out / "attacked_model.json");
    const PredictionTrace clean_trace = SingleCheckpoint(r.clean, r.eval);
    const PredictionTrace attacked_trace = SingleCheckpoint(r.attacked, r.eval);
    SaveBundle(r.eval, &clean_trace, ctx.out / "eval_clean");
    SaveBundle(r.eval, &attacked_trace, ctx.out / "eval_attacked");
    WriteMetrics(ctx, "attack",
                 {{"task", "regression"},
                  {"clean", {{"region_var", r.clean_region_var},
                             {"outside_var", r.clean_outside_var},
                             {"mae", r.clean_mae}}},
                  {"attacked", {{"region_var", r.attacked_region_var},
                                {"outside_var", r.attacked_outside_var},
                                {"mae", r.attacked_mae}}}});
    return;
  }

  config.mirage = o.mirage.Spec();
  const AttackResult r = RunClassificationAttack(bundle.dataset, config);
  SaveNetwork(r.clean, ctx.out / "clean_model.json");
  SaveNetwork(r.attacked, ctx.out / "attacked_model.json");
  const PredictionTrace clean_trace = SingleCheckpoint(r.clean, r.eval);
  const PredictionTrace attacked_trace = SingleCheckpoint(r.attacked, r.eval);
  SaveBundle(r.eval, &clean_trace, ctx.out / "eval_clean");
  SaveBundle(r.eval, &attacked_trace, ctx.out / "eval_attacked");

  const BoxRegion& region = config.mirage.region;
  for (const auto& [name, net] :
       {std::pair<std::string, const MlpNetwork*>{"clean", &r.clean},
        {"attacked", &r.attacked}}) {
    std::vector<double> in, out;
    ConfidenceSplit(*net, r.eval, region, in, out);
    if (in.empty() || out.empty()) continue;
    WriteText(ctx.out / ("confidence_" + name + ".svg"),
              HistogramSvg({in, out}, {"in region", "outside region"}, 20,
                           name + " model confidence"));
  }
  WriteMetrics(ctx, "attack",
               {{"task", "classification"},
                {"temperature", r.temperature},
                {"start", std::string(AttackStartName(config.start))},
                {"epsilon", config.mirage.epsilon},
                {"lambda", config.mirage.lambda},
                {"target_confidence",
                 TargetDistribution(config.mirage.Target(),
                                    bundle.dataset.num_classes, 0)[0]},
                {"clean", SummaryJson(r.clean_summary)},
                {"attacked", SummaryJson(r.attacked_summary)}});
}

// ---- surgery ----

struct SurgeryOptions {
  std::string model;
  std::string region;
  std::string shift;
  double eps_clip = 0.0;
  double eps_and = 0.0;
  double eps_lb = 0.0;
  double eps_ub = 0.0;
  size_t verify = 10000;
};

void RunSurgery(const Context& ctx, const SurgeryOptions& o) {
  const MlpNetwork net = LoadNetwork(o.model);
  std::optional<WidgetParams> params;
  if (o.eps_clip > 0.0) {
    WidgetParams p;
    p.eps_clip = o.eps_clip;
    p.eps_and = o.eps_and > 0.0 ? o.eps_and : o.eps_clip;
    p.eps_lb = o.eps_lb;
    p.eps_ub = o.eps_ub;
    params = p;
  }
  const SurgeryPlan plan = MakeSurgeryPlan(
      LoadRegion(o.region), ParseRealList(o.shift, "--shift"), params);
  const MlpNetwork augmented = AugmentNetwork(net, plan);
  PrepareDir(ctx.out);
  SaveNetwork(augmented, ctx.out / "augmented_model.json");
  json m{{"hidden_layers_required", RequiredHiddenLayers(plan)},
         {"layers", augmented.layers.size()},
         {"parameters", augmented.num_parameters()},
         {"eps_clip", plan.params.eps_clip},
         {"eps_and", plan.params.eps_and}};
  if (o.verify > 0) {
    const SurgeryReport report = VerifySurgery(net, augmented, plan, o.verify);
    const std::string text = SurgeryReportJson(report);
    WriteText(ctx.out / "surgery_report.json", text + "\n");
    m["verification"] = ParseJson(text, "surgery report");
  }
  WriteMetrics(ctx, "surgery", m);
}

// ---- report ----

void RunReport(const Context& ctx, const std::string& dir) {
  const fs::path run = dir.empty() ? ctx.out : fs::path(dir);
  const std::string text = BuildReport(run);
  PrepareDir(ctx.out);
  WriteText(ctx.out / "report.json", text);
}

// ---- pipeline ----

int Dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

std::string ParamText(const json& v, const fs::path& run_out,
                      const std::set<std::string>& done,
                      const std::string& key) {
  auto resolve = [&](const std::string& s) -> std::string {
    if (s.empty() || s.front() != '@') return s;
    const std::string ref = s.substr(1);
    const size_t slash = ref.find('/');
    const std::string name = ref.substr(0, slash);
    if (!done.contains(name)) {
      throw Error("parameter '" + key + "' refers to stage '" + name +
                  "', which has not run yet");
    }
    fs::path p = run_out / name;
    if (slash != std::string::npos) p /= ref.substr(slash + 1);
    return p.string();
  };
  switch (v.type()) {
    case json::value_t::string:
      return resolve(v.get<std::string>());
    case json::value_t::boolean:
      return v.get<bool>() ? "true" : "false";
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
      return v.dump();
    case json::value_t::number_float:
      return FormatReal(v.get<double>());
    case json::value_t::array: {
      std::string s;
      for (size_t i = 0; i < v.size(); ++i) {
        if (i > 0) s += ',';
        s += ParamText(v[i], run_out, done, key);
      }
      return s;
    }
    case json::value_t::object:
      return v.dump();
    default:
      throw Error("parameter '" + key + "' has an unsupported type");
  }
}

int RunPipeline(const std::string& config_path, const std::string* out_flag,
                const uint64_t* seed_flag, std::ostream& out,
                std::ostream& err) {
  const json cfg = ParseJson(ReadText(config_path), config_path);
  if (!cfg.is_object()) throw Error("pipeline config must be an object");
  for (const auto& [key, _] : cfg.items()) {
    if (key != "seed" && key != "out" && key != "stages") {
      throw Error("unknown pipeline config key '" + key + "'");
    }
  }
  if (!cfg.contains("seed") || !cfg["seed"].is_number_unsigned()) {
    throw Error("pipeline config needs a nonnegative integer seed");
  }
  const uint64_t seed = seed_flag ? *seed_flag : cfg["seed"].get<uint64_t>();
  fs::path run_out = "out";
  if (out_flag != nullptr) {
    run_out = *out_flag;
  } else if (cfg.contains("out")) {
    run_out = cfg["out"].get<std::string>();
  }
  if (!cfg.contains("stages") || !cfg["stages"].is_array() ||
      cfg["stages"].empty()) {
    throw Error("pipeline config needs a nonempty stages list");
  }
  std::set<std::string> done;
  for (const auto& stage : cfg["stages"]) {
    if (!stage.is_object() || !stage.contains("name") ||
        !stage.contains("stage")) {
      throw Error("each stage needs a name and a stage kind");
    }
    const std::string name = stage["name"].get<std::string>();
    const std::string kind = stage["stage"].get<std::string>();
    if (name.empty() || name.find('/') != std::string::npos ||
        name.front() == '.') {
      throw Error("invalid stage name '" + name + "'");
    }
    if (done.contains(name)) throw Error("duplicate stage name '" + name + "'");
    if (std::find(std::begin(kStageKinds), std::end(kStageKinds), kind) ==
        std::end(kStageKinds)) {
      throw Error("stage '" + name + "' has unknown kind '" + kind + "'");
    }
    std::vector<std::string> argv{kind};
    const json params = stage.value("params", json::object());
    if (!params.is_object()) {
      throw Error("params of stage '" + name + "' must be an object");
    }
    for (const auto& [key, value] : params.items()) {
      if (key == "seed" || key == "out") {
        throw Error("stage '" + name + "' may not override --" + key);
      }
      argv.push_back("--" + key);
      argv.push_back(ParamText(value, run_out, done, key));
    }
    // The report covers the whole run and lands at its root.
    const fs::path stage_out = kind == "report" ? run_out : run_out / name;
    if (kind == "report" && !params.contains("dir")) {
      argv.push_back("--dir");
      argv.push_back(run_out.string());
    }
    argv.insert(argv.end(), {"--seed", std::to_string(seed), "--out",
                             stage_out.string()});
    out << "stage " << name << " (" << kind << ")\n";
    const int status = Dispatch(argv, out, err);
    if (status != 0) {
      err << "stage '" << name << "' failed\n";
      return status;
    }
    done.insert(name);
  }
  return 0;
}

bool ParseBool(const std::string& s, const std::string& flag) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(flag + ": expected true or false, got '" + s + "'");
}

int Dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"abstain-lab: selective prediction and uncertainty auditing",
               "abstain-lab"};
  app.require_subcommand(1);
  app.fallthrough();
  uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 1;
  auto* seed_opt = app.add_option("--seed", seed, "global seed")
                       ->capture_default_str();
  auto* out_opt = app.add_option("--out", out_dir, "output directory")
                      ->capture_default_str();
  app.add_option("--threads", threads,
                 "worker threads; stages run single-threaded")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic bundle");
  gen_cmd
      ->add_option("generator,--generator", gen.generator,
                   "two-gaussians, outlier-imbalance, guardian, two-moons, "
                   "oracle-scores or regression-sine")
      ->required();
  gen_cmd->add_option("--a", gen.a, "two-gaussians separation")
      ->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "number of examples");
  gen_cmd->add_option("--n-per-class", gen.n_per_class, "two-gaussians size")
      ->capture_default_str();
  gen_cmd->add_option("--n-major", gen.n_major, "outlier majority size")
      ->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise, "two-moons noise sigma")
      ->capture_default_str();
  gen_cmd->add_option("--shift", gen.shift, "two-moons shift")
      ->capture_default_str();
  gen_cmd->add_option("--a-full", gen.a_full, "oracle-scores accuracy")
      ->capture_default_str();

  TrainOptions train;
  std::string standardize = "true";
  auto* train_cmd = app.add_subcommand("train", "train with checkpoints");
  train_cmd->add_option("--data", train.data, "dataset bundle")->required();
  train_cmd->add_option("--hidden", train.hidden, "hidden widths, 0 = linear")
      ->capture_default_str();
  train_cmd->add_option("--lr", train.lr, "learning rate")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs)->capture_default_str();
  train_cmd->add_option("--batch", train.batch)->capture_default_str();
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every,
                        "optimizer steps between checkpoints")
      ->capture_default_str();
  train_cmd->add_option("--loss", train.loss,
                        "cross_entropy, gaussian_nll, mirage or "
                        "mirage_regression");
  train_cmd->add_option("--optimizer", train.optimizer, "sgd or adam")
      ->capture_default_str();
  train_cmd->add_option("--train-fraction", train.train_fraction)
      ->capture_default_str();
  train_cmd->add_option("--init", train.init, "start from this model");
  train_cmd->add_option("--standardize", standardize,
                        "train fresh models on standardized features")
      ->capture_default_str();
  AddMirageFlags(train_cmd, train.mirage);

  ScoreCliOptions score;
  auto* score_cmd = app.add_subcommand("score", "score a prediction trace");
  score_cmd->add_option("--trace", score.trace, "bundle with a trace")
      ->required();
  score_cmd->add_option("--method", score.method,
                        "msp, ensemble, sptd, smax, ssum, jump or var")
      ->capture_default_str();
  score_cmd->add_option("--k", score.k, "weight exponent")
      ->capture_default_str();
  score_cmd->add_option("--metric", score.metric,
                        "confidence, top2_gap or entropy")
      ->capture_default_str();
  score_cmd->add_option("--temperature", score.temperature)
      ->capture_default_str();
  score_cmd->add_option("--members", score.members,
                        "ensemble size, 0 = all checkpoints")
      ->capture_default_str();

  CurveOptions curve;
  auto* curve_cmd = app.add_subcommand("curve", "selective curve and metrics");
  curve_cmd->add_option("--scores", curve.scores, "scores.csv")->required();
  curve_cmd->add_option("--data", curve.data, "bundle with labels")
      ->required();
  curve_cmd->add_option("--utility", curve.utility, "accuracy or r2")
      ->capture_default_str();

  DecomposeCliOptions dec;
  auto* dec_cmd = app.add_subcommand("decompose", "gap decomposition");
  dec_cmd->add_option("--scores", dec.scores, "scores.csv")->required();
  dec_cmd->add_option("--data", dec.data, "bundle with true posteriors")
      ->required();
  dec_cmd->add_option("--model", dec.model, "model for eta_h; else the trace");
  dec_cmd->add_option("--temperature", dec.temperature)->capture_default_str();
  dec_cmd->add_option("--grid", dec.grid, "coverages, comma separated");
  dec_cmd->add_option("--delta", dec.delta)->capture_default_str();
  dec_cmd->add_option("--c-const", dec.c_const)->capture_default_str();

  AuditOptions audit;
  auto* audit_cmd = app.add_subcommand("audit", "bin-wise calibration audit");
  audit_cmd->add_option("--ref", audit.ref, "reference bundle")->required();
  audit_cmd->add_option("--model", audit.model,
                        "model to audit; else the trace");
  audit_cmd->add_option("--bins", audit.bins)->capture_default_str();
  audit_cmd->add_option("--alpha", audit.alpha)->capture_default_str();
  audit_cmd->add_option("--temperature", audit.temperature)
      ->capture_default_str();

  AttackOptions attack;
  auto* attack_cmd = app.add_subcommand("attack", "Mirage attack");
  attack_cmd->add_option("--data", attack.data, "dataset bundle")->required();
  attack_cmd->add_option("--hidden", attack.hidden)->capture_default_str();
  attack_cmd->add_option("--lr", attack.lr)->capture_default_str();
  attack_cmd->add_option("--batch", attack.batch)->capture_default_str();
  attack_cmd->add_option("--pretrain-epochs", attack.pretrain_epochs)
      ->capture_default_str();
  attack_cmd->add_option("--finetune-epochs", attack.finetune_epochs)
      ->capture_default_str();
  attack_cmd->add_option("--train-fraction", attack.train_fraction)
      ->capture_default_str();
  attack_cmd->add_option("--start", attack.start,
                         "init or pretrained: where Mirage training starts")
      ->capture_default_str();
  attack_cmd->add_option("--bins", attack.bins, "ECE bins")
      ->capture_default_str();
  AddMirageFlags(attack_cmd, attack.mirage);

  SurgeryOptions surgery;
  auto* surgery_cmd = app.add_subcommand("surgery", "region logit shift");
  surgery_cmd->add_option("--model", surgery.model)->required();
  surgery_cmd->add_option("--region", surgery.region)->required();
  surgery_cmd->add_option("--shift", surgery.shift, "per-class shift")
      ->required();
  surgery_cmd->add_option("--eps-clip", surgery.eps_clip,
                          "default: min region width / 8");
  surgery_cmd->add_option("--eps-and", surgery.eps_and,
                          "default: eps-clip");
  surgery_cmd->add_option("--eps-lb", surgery.eps_lb)->capture_default_str();
  surgery_cmd->add_option("--eps-ub", surgery.eps_ub)->capture_default_str();
  surgery_cmd->add_option("--verify", surgery.verify,
                          "Halton verification points, 0 = skip")
      ->capture_default_str();

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "aggregate a run");
  report_cmd->add_option("--dir", report_dir, "run directory; default --out");

  std::string config_path;
  auto* pipeline_cmd = app.add_subcommand("pipeline", "run a JSON config");
  pipeline_cmd->add_option("config", config_path, "pipeline config")
      ->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  const Context ctx{seed, out_dir};
  if (*gen_cmd) {
    RunGenData(ctx, gen);
  } else if (*train_cmd) {
    train.standardize = ParseBool(standardize, "--standardize");
    RunTrain(ctx, train);
  } else if (*score_cmd) {
    RunScore(ctx, score);
  } else if (*curve_cmd) {
    RunCurve(ctx, curve);
  } else if (*dec_cmd) {
    RunDecompose(ctx, dec);
  } else if (*audit_cmd) {
    RunAudit(ctx, audit);
    out << "audit " << (ParseJson(ReadText(ctx.out / "metrics.json"),
                                  "metrics")["pass"].get<bool>()
                            ? "passed"
                            : "failed")
        << "\n";
  } else if (*attack_cmd) {
    RunAttack(ctx, attack);
  } else if (*surgery_cmd) {
    RunSurgery(ctx, surgery);
  } else if (*report_cmd) {
    RunReport(ctx, report_dir);
  } else if (*pipeline_cmd) {
    return RunPipeline(config_path, out_opt->count() ? &out_dir : nullptr,
                       seed_opt->count() ? &seed : nullptr, out, err);
  }
  return 0;
}

}  // namespace

std::string BuildReport(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) {
    throw Error("run directory " + run_dir.string() + " does not exist");
  }
  std::vector<std::string> stage_dirs;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "metrics.json")) {
      stage_dirs.push_back(entry.path().filename().string());
    }
  }
  std::sort(stage_dirs.begin(), stage_dirs.end());
  json stages = json::array();
  json metrics = json::object();
  for (const auto& name : stage_dirs) {
    json m = ParseJson(ReadText(run_dir / name / "metrics.json"),
                       name + "/metrics.json");
    stages.push_back({{"name", name}, {"stage", m.value("stage", "")}});
    metrics[name] = std::move(m);
  }
  std::vector<std::string> artifacts;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel =
        fs::relative(entry.path(), run_dir).generic_string();
    if (rel != "report.json") artifacts.push_back(rel);
  }
  std::sort(artifacts.begin(), artifacts.end());
  json report{{"schema", kReportSchema},
              {"stages", stages},
              {"metrics", metrics},
              {"artifacts", artifacts}};
  return report.dump(2) + "\n";
}

int RunCommand(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  try {
    return Dispatch(args, out, err);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace abstain
