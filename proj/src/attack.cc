#include "abstain/attack.h"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "abstain/calibration.h"
#include "abstain/error.h"
#include "abstain/trainer.h"

namespace abstain {
namespace {

std::vector<int> Widths(const Dataset& ds, const std::vector<int>& hidden) {
  std::vector<int> w{static_cast<int>(ds.feature_dim())};
  w.insert(w.end(), hidden.begin(), hidden.end());
  return w;
}

TrainConfig BaseConfig(const AttackConfig& c, int epochs, LossKind loss,
                       uint64_t stream) {
  TrainConfig t;
  t.learning_rate = c.learning_rate;
  t.epochs = epochs;
  t.batch_size = c.batch_size;
  t.seed = c.seed ^ stream;
  // Only the final state matters here.
  t.checkpoint_every = 1 << 30;
  t.loss = std::move(loss);
  return t;
}

}  // namespace

std::string_view AttackStartName(AttackStart start) {
  return start == AttackStart::kPretrained ? "pretrained" : "init";
}

AttackStart ParseAttackStart(std::string_view name) {
  if (name == "init") return AttackStart::kInitialization;
  if (name == "pretrained") return AttackStart::kPretrained;
  throw Error("unknown attack start '" + std::string(name) + "'");
}

ModelSummary SummarizeModel(const MlpNetwork& net, const Dataset& ds,
                            const BoxRegion& region, int bins) {
  ModelSummary s;
  std::vector<double> conf, conf_in, conf_out;
  std::vector<char> correct;
  size_t hits = 0, in = 0, in_hits = 0;
  double in_conf = 0.0;
  for (const auto& e : ds.examples) {
    const auto p = SoftmaxProbs(Forward(net, e.features));
    const double c = *std::max_element(p.begin(), p.end());
    const bool ok = Argmax(p) == std::get<int>(e.label);
    conf.push_back(c);
    correct.push_back(ok);
    hits += ok;
    if (region.Contains(e.features)) {
      ++in;
      in_hits += ok;
      in_conf += c;
      conf_in.push_back(c);
    } else {
      conf_out.push_back(c);
    }
  }
  const auto table =
      BinTable(conf, std::vector<bool>(correct.begin(), correct.end()), bins);
  s.ece = ComputeEce(table).ece;
  s.accuracy = static_cast<double>(hits) / static_cast<double>(ds.size());
  if (in > 0) {
    s.region_accuracy = static_cast<double>(in_hits) / static_cast<double>(in);
    s.region_confidence = in_conf / static_cast<double>(in);
  }
  if (!conf_in.empty() && !conf_out.empty()) {
    s.overlap = OverlapCoefficient(conf_in, conf_out);
  }
  return s;
}

AttackResult RunClassificationAttack(const Dataset& data,
                                     const AttackConfig& config) {
  if (data.task != TaskKind::kClassification) {
    throw Error("classification attack needs a classification dataset");
  }
  ValidateLoss(config.mirage);
  AttackResult r;
  std::tie(r.train, r.eval) =
      SplitDataset(data, config.train_fraction, config.seed);

  const FeatureScaler scaler = FeatureScaler::Fit(r.train);
  const Dataset train = scaler.Apply(r.train);
  const Dataset eval = scaler.Apply(r.eval);
  MirageSpec mirage = config.mirage;
  mirage.region = scaler.Apply(mirage.region);

  const MlpNetwork init = InitNetwork(
      Widths(data, config.hidden), HeadKind::kLogits, data.num_classes,
      config.seed);
  MlpNetwork net =
      TrainWithCheckpoints(
          train, eval, init,
          BaseConfig(config, config.pretrain_epochs, CrossEntropyLoss{}, 11))
          .network;

  std::vector<int> labels;
  for (const auto& e : train.examples) labels.push_back(std::get<int>(e.label));
  r.temperature = FitTemperature(PredictAll(net, train), labels);
  net = ScaleLogits(std::move(net), r.temperature);

  const MlpNetwork& start =
      config.start == AttackStart::kPretrained ? net : init;
  MlpNetwork attacked =
      TrainWithCheckpoints(
          train, eval, start,
          BaseConfig(config, config.finetune_epochs, mirage, 12))
          .network;
  r.clean = scaler.Fold(std::move(net));
  r.attacked = scaler.Fold(std::move(attacked));
  r.clean_summary =
      SummarizeModel(r.clean, r.eval, config.mirage.region, config.bins);
  r.attacked_summary =
      SummarizeModel(r.attacked, r.eval, config.mirage.region, config.bins);
  return r;
}

RegressionAttackResult RunRegressionAttack(const Dataset& data,
                                           const AttackConfig& config) {
  if (data.task != TaskKind::kRegression) {
    throw Error("regression attack needs a regression dataset");
  }
  ValidateLoss(config.mirage_regression);
  RegressionAttackResult r;
  Dataset raw_train;
  std::tie(raw_train, r.eval) =
      SplitDataset(data, config.train_fraction, config.seed);
  const FeatureScaler scaler = FeatureScaler::Fit(raw_train);
  const Dataset train = scaler.Apply(raw_train);
  const Dataset eval = scaler.Apply(r.eval);
  MirageRegressionSpec mirage = config.mirage_regression;
  mirage.region = scaler.Apply(mirage.region);

  const MlpNetwork init = InitNetwork(Widths(data, config.hidden),
                                      HeadKind::kMeanLogVar, 0, config.seed);
  MlpNetwork net =
      TrainWithCheckpoints(
          train, eval, init,
          BaseConfig(config, config.pretrain_epochs, GaussianNllLoss{}, 13))
          .network;
  // The squared log-variance penalty does not saturate, so this always
  // fine-tunes the baseline.
  MlpNetwork attacked =
      TrainWithCheckpoints(
          train, eval, net,
          BaseConfig(config, config.finetune_epochs, mirage, 14))
          .network;
  r.clean = scaler.Fold(std::move(net));
  r.attacked = scaler.Fold(std::move(attacked));
  const auto& region = config.mirage_regression.region;
  auto measure = [&](const MlpNetwork& m, double& in_var, double& out_var,
                     double& mae) {
    size_t n_in = 0, n_out = 0;
    in_var = out_var = mae = 0.0;
    for (const auto& e : r.eval.examples) {
      const auto o = Forward(m, e.features);
      const double var = std::exp(o[1]);
      mae += std::abs(o[0] - std::get<double>(e.label));
      if (region.Contains(e.features)) {
        in_var += var;
        ++n_in;
      } else {
        out_var += var;
        ++n_out;
      }
    }
    if (n_in > 0) in_var /= static_cast<double>(n_in);
    if (n_out > 0) out_var /= static_cast<double>(n_out);
    mae /= static_cast<double>(r.eval.size());
  };
  measure(r.clean, r.clean_region_var, r.clean_outside_var, r.clean_mae);
  measure(r.attacked, r.attacked_region_var, r.attacked_outside_var,
          r.attacked_mae);
  return r;
}

}  // namespace abstain
