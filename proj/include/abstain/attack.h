#ifndef ABSTAIN_ATTACK_H_
#define ABSTAIN_ATTACK_H_

#include <cstdint>
#include <string_view>
#include <vector>

#include "abstain/mirage.h"
#include "abstain/network.h"
#include "abstain/trace_model.h"

namespace abstain {

// Where Mirage training starts. The reverse-KL term has a vanishing gradient
// on saturated logits, so starting from the converged baseline leaves the
// region confidence untouched; the default reuses the baseline's
// initialization instead.
enum class AttackStart { kInitialization, kPretrained };

std::string_view AttackStartName(AttackStart start);
AttackStart ParseAttackStart(std::string_view name);

struct AttackConfig {
  std::vector<int> hidden{100};
  double learning_rate = 0.05;
  int batch_size = 64;
  int pretrain_epochs = 100;
  int finetune_epochs = 300;
  AttackStart start = AttackStart::kInitialization;
  double train_fraction = 0.5;
  uint64_t seed = 0;
  int bins = 10;
  // Classification attack.
  MirageSpec mirage;
  // Regression attack.
  MirageRegressionSpec mirage_regression;
};

struct ModelSummary {
  double accuracy = 0.0;
  double region_accuracy = 0.0;
  double ece = 0.0;
  double region_confidence = 0.0;
  double overlap = 0.0;
};

struct AttackResult {
  Dataset train;
  Dataset eval;
  // CE-pretrained model with the fitted temperature folded into its logits.
  MlpNetwork clean;
  MlpNetwork attacked;
  double temperature = 1.0;
  ModelSummary clean_summary;
  ModelSummary attacked_summary;
};

// Splits the data, trains a cross-entropy baseline, fits its temperature on
// the training split, then trains the Mirage model. Training runs on features
// standardized over the training split; the returned networks take raw
// features. Summaries are measured on the eval split.
AttackResult RunClassificationAttack(const Dataset& data,
                                     const AttackConfig& config);

// Accuracy, in-region accuracy, ECE, mean in-region confidence and the
// in/out confidence overlap of a classifier on a dataset.
ModelSummary SummarizeModel(const MlpNetwork& net, const Dataset& ds,
                            const BoxRegion& region, int bins);

struct RegressionAttackResult {
  MlpNetwork clean;
  MlpNetwork attacked;
  Dataset eval;
  // Mean predicted variance inside / outside the region, before and after.
  double clean_region_var = 0.0;
  double attacked_region_var = 0.0;
  double clean_outside_var = 0.0;
  double attacked_outside_var = 0.0;
  // Mean absolute error of the predicted mean.
  double clean_mae = 0.0;
  double attacked_mae = 0.0;
};

// Pretrains with the Gaussian NLL, then fine-tunes with the regression
// Mirage loss.
RegressionAttackResult RunRegressionAttack(const Dataset& data,
                                           const AttackConfig& config);

}  // namespace abstain

#endif  // ABSTAIN_ATTACK_H_
