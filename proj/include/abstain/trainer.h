#ifndef ABSTAIN_TRAINER_H_
#define ABSTAIN_TRAINER_H_

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "abstain/datagen.h"
#include "abstain/losses.h"
#include "abstain/network.h"
#include "abstain/trace_model.h"

namespace abstain {

enum class Optimizer { kSgd, kAdam };

std::string_view OptimizerName(Optimizer opt);
Optimizer ParseOptimizer(std::string_view name);

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 50;
  int batch_size = 64;
  uint64_t seed = 0;
  // Optimizer steps between captured checkpoints.
  int checkpoint_every = 50;
  LossKind loss = CrossEntropyLoss{};
  // Plain SGD by default. Adam (beta1 0.9, beta2 0.999) rescales vanishing
  // gradients, which the reverse-KL term produces on saturated logits.
  Optimizer optimizer = Optimizer::kSgd;

  void Validate() const;
};

struct TrainResult {
  // Outputs on the eval split, one checkpoint per capture; the final state is
  // always the last checkpoint.
  PredictionTrace trace;
  MlpNetwork network;
  // Mean per-example loss over each epoch.
  std::vector<double> epoch_loss;
  size_t steps = 0;
};

// Mini-batch training with a per-epoch shuffle drawn from the seed. Throws
// NumericError naming the step if the loss or parameters stop being finite.
TrainResult TrainWithCheckpoints(const Dataset& train, const Dataset& eval,
                                 MlpNetwork net, const TrainConfig& config);

// Deterministic split: a seeded permutation, first round(n * train_fraction)
// examples go to the training set.
std::pair<Dataset, Dataset> SplitDataset(const Dataset& ds,
                                         double train_fraction, uint64_t seed);

// Per-feature affine standardization fitted on a training split.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static FeatureScaler Fit(const Dataset& ds);
  Dataset Apply(const Dataset& ds) const;
  BoxRegion Apply(const BoxRegion& region) const;
  // Folds the standardization into the first layer so the returned network
  // takes raw features.
  MlpNetwork Fold(MlpNetwork net) const;
};

// Raw network outputs, one row per example.
std::vector<std::vector<double>> PredictAll(const MlpNetwork& net,
                                            const Dataset& ds);

// Fraction of examples whose argmax matches the class label.
double Accuracy(const MlpNetwork& net, const Dataset& ds);

// Mean loss over a dataset.
double MeanLoss(const MlpNetwork& net, const Dataset& ds, const LossKind& kind);

// Max over all parameters of |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-6), numeric from central differences with the given step.
double GradCheck(const MlpNetwork& net, const LossKind& kind,
                 const LabeledExample& example, double step);

}  // namespace abstain

#endif  // ABSTAIN_TRAINER_H_
