#include "abstain/trainer.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "abstain/error.h"
#include "abstain/rng.h"

namespace abstain {
namespace {

bool AllFinite(const MlpNetwork& net) {
  for (const auto& l : net.layers) {
    for (double v : l.weight) {
      if (!std::isfinite(v)) return false;
    }
    for (double v : l.bias) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void CheckHead(const MlpNetwork& net, const Dataset& ds) {
  const bool classification = ds.task == TaskKind::kClassification;
  if (classification != (net.head == HeadKind::kLogits)) {
    throw Error("network head does not match the dataset task");
  }
  if (ds.task == TaskKind::kTimeseries) {
    throw Error("the trainer does not fit timeseries models");
  }
  if (classification && static_cast<int>(net.output_dim()) != ds.num_classes) {
    throw Error("network has " + std::to_string(net.output_dim()) +
                " logits for " + std::to_string(ds.num_classes) + " classes");
  }
  if (ds.feature_dim() != net.input_dim()) {
    throw Error("dataset feature dimension does not match the network input");
  }
}

void Capture(const MlpNetwork& net, const Dataset& eval,
             TraceBuilder& builder) {
  std::vector<double> flat;
  flat.reserve(eval.size() * net.output_dim());
  for (const auto& e : eval.examples) {
    const auto out = Forward(net, e.features);
    flat.insert(flat.end(), out.begin(), out.end());
  }
  builder.AddCheckpoint(flat);
}

void SgdStep(MlpNetwork& net, const Gradients& grads, double scale) {
  for (size_t li = 0; li < net.layers.size(); ++li) {
    auto& l = net.layers[li];
    for (size_t k = 0; k < l.weight.size(); ++k) {
      l.weight[k] += scale * grads.weight[li][k];
    }
    for (size_t k = 0; k < l.bias.size(); ++k) {
      l.bias[k] += scale * grads.bias[li][k];
    }
  }
}

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Gradients m, v;
  double pow1 = 1.0, pow2 = 1.0;

  explicit AdamState(const MlpNetwork& net)
      : m(Gradients::ZerosLike(net)), v(Gradients::ZerosLike(net)) {}

  // grads holds the batch sum; inv_n turns it into the mean.
  void Step(MlpNetwork& net, const Gradients& grads, double inv_n, double lr) {
    pow1 *= kBeta1;
    pow2 *= kBeta2;
    auto update = [&](double& p, double& m1, double& m2, double g_sum) {
      const double g = g_sum * inv_n;
      m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
      m2 = kBeta2 * m2 + (1.0 - kBeta2) * g * g;
      const double mh = m1 / (1.0 - pow1);
      const double vh = m2 / (1.0 - pow2);
      p -= lr * mh / (std::sqrt(vh) + kEps);
    };
    for (size_t li = 0; li < net.layers.size(); ++li) {
      auto& l = net.layers[li];
      for (size_t k = 0; k < l.weight.size(); ++k) {
        update(l.weight[k], m.weight[li][k], v.weight[li][k],
               grads.weight[li][k]);
      }
      for (size_t k = 0; k < l.bias.size(); ++k) {
        update(l.bias[k], m.bias[li][k], v.bias[li][k], grads.bias[li][k]);
      }
    }
  }
};

}  // namespace

std::string_view OptimizerName(Optimizer opt) {
  return opt == Optimizer::kAdam ? "adam" : "sgd";
}

Optimizer ParseOptimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::kSgd;
  if (name == "adam") return Optimizer::kAdam;
  throw Error("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::Validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error("learning rate must be positive");
  }
  if (epochs < 1) throw Error("epochs must be >= 1");
  if (batch_size < 1) throw Error("batch size must be >= 1");
  if (checkpoint_every < 1) throw Error("checkpoint interval must be >= 1");
  ValidateLoss(loss);
}

TrainResult TrainWithCheckpoints(const Dataset& train, const Dataset& eval,
                                 MlpNetwork net, const TrainConfig& config) {
  config.Validate();
  net.Validate();
  if (train.size() == 0 || eval.size() == 0) {
    throw Error("training and eval splits must be nonempty");
  }
  CheckHead(net, train);
  CheckHead(net, eval);

  std::vector<std::string> ids;
  for (const auto& e : eval.examples) ids.push_back(e.id);
  TraceBuilder builder(eval.task, std::move(ids), net.output_dim());

  TrainResult result;
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(config.seed, 6);
  const size_t batch = static_cast<size_t>(config.batch_size);
  size_t step = 0;
  bool captured_last = false;
  AdamState adam(net);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.Shuffle(std::span<size_t>(order));
    double epoch_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += batch) {
      const size_t end = std::min(order.size(), start + batch);
      Gradients grads = Gradients::ZerosLike(net);
      double batch_sum = 0.0;
      for (size_t j = start; j < end; ++j) {
        const auto& e = train.examples[order[j]];
        const ForwardPass pass = ForwardTrace(net, e.features);
        const LossResult lr = LossValue(config.loss, pass.output(), e);
        batch_sum += lr.value;
        Backward(net, pass, lr.grad, grads);
      }
      ++step;
      if (!std::isfinite(batch_sum)) {
        throw NumericError("training diverged at step " +
                           std::to_string(step) + ": non-finite loss");
      }
      epoch_sum += batch_sum;
      const double inv_n = 1.0 / static_cast<double>(end - start);
      if (config.optimizer == Optimizer::kAdam) {
        adam.Step(net, grads, inv_n, config.learning_rate);
      } else {
        SgdStep(net, grads, -config.learning_rate * inv_n);
      }
      if (!AllFinite(net)) {
        throw NumericError("training diverged at step " +
                           std::to_string(step) + ": non-finite parameters");
      }
      captured_last = false;
      if (step % static_cast<size_t>(config.checkpoint_every) == 0) {
        Capture(net, eval, builder);
        captured_last = true;
      }
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(train.size()));
  }
  if (!captured_last) Capture(net, eval, builder);

  result.trace = builder.Build();
  result.network = std::move(net);
  result.steps = step;
  return result;
}

std::pair<Dataset, Dataset> SplitDataset(const Dataset& ds,
                                         double train_fraction, uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("train fraction must lie in (0, 1)");
  }
  std::vector<size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed, 7);
  rng.Shuffle(std::span<size_t>(order));
  const size_t n_train = static_cast<size_t>(
      std::llround(train_fraction * static_cast<double>(ds.size())));
  Dataset train = ds, eval = ds;
  train.examples.clear();
  eval.examples.clear();
  for (size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : eval).examples.push_back(ds.examples[order[i]]);
  }
  auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  std::sort(train.examples.begin(), train.examples.end(), by_id);
  std::sort(eval.examples.begin(), eval.examples.end(), by_id);
  return {std::move(train), std::move(eval)};
}

FeatureScaler FeatureScaler::Fit(const Dataset& ds) {
  if (ds.size() == 0) throw Error("cannot fit a scaler on an empty dataset");
  const size_t d = ds.feature_dim();
  const double n = static_cast<double>(ds.size());
  FeatureScaler s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (const auto& e : ds.examples) {
    for (size_t j = 0; j < d; ++j) s.mean[j] += e.features[j];
  }
  for (double& m : s.mean) m /= n;
  for (const auto& e : ds.examples) {
    for (size_t j = 0; j < d; ++j) {
      const double c = e.features[j] - s.mean[j];
      s.scale[j] += c * c;
    }
  }
  for (double& v : s.scale) {
    v = std::sqrt(v / n);
    // Constant features are centred only.
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

Dataset FeatureScaler::Apply(const Dataset& ds) const {
  if (ds.feature_dim() != mean.size()) {
    throw Error("scaler dimension does not match the dataset");
  }
  Dataset out = ds;
  for (auto& e : out.examples) {
    for (size_t j = 0; j < mean.size(); ++j) {
      e.features[j] = (e.features[j] - mean[j]) / scale[j];
    }
  }
  return out;
}

BoxRegion FeatureScaler::Apply(const BoxRegion& region) const {
  BoxRegion out = region;
  for (auto& d : out.dims) {
    if (d.index < 0 || static_cast<size_t>(d.index) >= mean.size()) {
      throw Error("region index outside the feature range");
    }
    d.lower = (d.lower - mean[d.index]) / scale[d.index];
    d.upper = (d.upper - mean[d.index]) / scale[d.index];
  }
  return out;
}

MlpNetwork FeatureScaler::Fold(MlpNetwork net) const {
  if (net.layers.empty() || net.input_dim() != mean.size()) {
    throw Error("scaler dimension does not match the network");
  }
  auto& l = net.layers.front();
  for (size_t r = 0; r < l.out; ++r) {
    double shift = 0.0;
    for (size_t c = 0; c < l.in; ++c) {
      double& w = l.weight[r * l.in + c];
      w /= scale[c];
      shift += w * mean[c];
    }
    l.bias[r] -= shift;
  }
  return net;
}

std::vector<std::vector<double>> PredictAll(const MlpNetwork& net,
                                            const Dataset& ds) {
  std::vector<std::vector<double>> out;
  out.reserve(ds.size());
  for (const auto& e : ds.examples) out.push_back(Forward(net, e.features));
  return out;
}

double Accuracy(const MlpNetwork& net, const Dataset& ds) {
  if (ds.size() == 0) throw Error("accuracy of an empty dataset");
  size_t correct = 0;
  for (const auto& e : ds.examples) {
    if (Argmax(Forward(net, e.features)) == std::get<int>(e.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double MeanLoss(const MlpNetwork& net, const Dataset& ds,
                const LossKind& kind) {
  if (ds.size() == 0) throw Error("loss of an empty dataset");
  double sum = 0.0;
  for (const auto& e : ds.examples) {
    sum += LossValue(kind, Forward(net, e.features), e).value;
  }
  return sum / static_cast<double>(ds.size());
}

double GradCheck(const MlpNetwork& net, const LossKind& kind,
                 const LabeledExample& example, double step) {
  if (!(step > 0.0)) throw Error("finite-difference step must be positive");
  const ForwardPass pass = ForwardTrace(net, example.features);
  const LossResult base = LossValue(kind, pass.output(), example);
  Gradients grads = Gradients::ZerosLike(net);
  Backward(net, pass, base.grad, grads);

  MlpNetwork probe = net;
  auto loss_at = [&]() {
    return LossValue(kind, Forward(probe, example.features), example).value;
  };
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + step;
    const double up = loss_at();
    param = saved - step;
    const double down = loss_at();
    param = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (size_t li = 0; li < probe.layers.size(); ++li) {
    auto& l = probe.layers[li];
    for (size_t k = 0; k < l.weight.size(); ++k) {
      check(l.weight[k], grads.weight[li][k]);
    }
    for (size_t k = 0; k < l.bias.size(); ++k) {
      check(l.bias[k], grads.bias[li][k]);
    }
  }
  return worst;
}

}  // namespace abstain
