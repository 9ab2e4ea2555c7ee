#ifndef ABSTAIN_LOSSES_H_
#define ABSTAIN_LOSSES_H_

#include <span>
#include <variant>
#include <vector>

#include "abstain/mirage.h"
#include "abstain/trace_model.h"

namespace abstain {

struct CrossEntropyLoss {};
struct GaussianNllLoss {};

using LossKind = std::variant<CrossEntropyLoss, MirageSpec, GaussianNllLoss,
                              MirageRegressionSpec>;

// Throws Error on out-of-range parameters (eps, lambda outside [0, 1],
// nonpositive target variance).
void ValidateLoss(const LossKind& kind);

struct LossResult {
  double value = 0.0;
  // d(value) / d(output).
  std::vector<double> grad;
};

// Per-example loss on a raw network output. Classification losses read
// logits; regression losses read (mean, log variance).
LossResult LossValue(const LossKind& kind, std::span<const double> output,
                     const LabeledExample& example);

// -log softmax(z)_y by log-sum-exp.
double CrossEntropy(std::span<const double> logits, int y);

// 0.5 [(y - mu)^2 / var + log var] with var = exp(log_var).
double GaussianNll(double mu, double log_var, double y);

}  // namespace abstain

#endif  // ABSTAIN_LOSSES_H_
