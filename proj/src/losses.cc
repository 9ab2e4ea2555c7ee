#include "abstain/losses.h"

#include <algorithm>
#include <cmath>

#include "abstain/error.h"

namespace abstain {
namespace {

double LogSumExp(std::span<const double> z) {
  const double max = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - max);
  return max + std::log(s);
}

int ClassLabel(const LabeledExample& e) {
  const int* y = std::get_if<int>(&e.label);
  if (y == nullptr) {
    throw Error("example '" + e.id + "' has no class label for this loss");
  }
  return *y;
}

double RealLabel(const LabeledExample& e) {
  const double* y = std::get_if<double>(&e.label);
  if (y == nullptr) {
    throw Error("example '" + e.id + "' has no real label for this loss");
  }
  return *y;
}

LossResult CrossEntropyResult(std::span<const double> logits, int y) {
  if (y < 0 || static_cast<size_t>(y) >= logits.size()) {
    throw Error("class label out of range for the logit row");
  }
  LossResult r;
  r.value = LogSumExp(logits) - logits[y];
  r.grad = SoftmaxProbs(logits);
  r.grad[y] -= 1.0;
  return r;
}

LossResult NllResult(std::span<const double> out, double y) {
  if (out.size() != 2) throw Error("regression loss needs (mean, log var)");
  const double mu = out[0], s = out[1];
  const double inv = std::exp(-s);
  const double r2 = (y - mu) * (y - mu);
  LossResult r;
  r.value = 0.5 * (r2 * inv + s);
  r.grad = {-(y - mu) * inv, 0.5 * (1.0 - r2 * inv)};
  return r;
}

}  // namespace

double CrossEntropy(std::span<const double> logits, int y) {
  return LogSumExp(logits) - logits[y];
}

double GaussianNll(double mu, double log_var, double y) {
  return 0.5 * ((y - mu) * (y - mu) * std::exp(-log_var) + log_var);
}

void ValidateLoss(const LossKind& kind) {
  if (const auto* m = std::get_if<MirageSpec>(&kind)) {
    m->region.Validate();
    if (!(m->epsilon >= 0.0 && m->epsilon <= 1.0)) {
      throw Error("mirage epsilon must lie in [0, 1]");
    }
    if (!(m->lambda >= 0.0 && m->lambda <= 1.0)) {
      throw Error("mirage lambda must lie in [0, 1]");
    }
    if (!(m->scale > 0.0)) throw Error("mirage scale must be positive");
  } else if (const auto* r = std::get_if<MirageRegressionSpec>(&kind)) {
    r->region.Validate();
    if (!(r->sigma2_target > 0.0)) {
      throw Error("sigma2_target must be positive");
    }
    if (!(r->lambda >= 0.0 && r->lambda <= 1.0)) {
      throw Error("mirage lambda must lie in [0, 1]");
    }
  }
}

LossResult LossValue(const LossKind& kind, std::span<const double> output,
                     const LabeledExample& example) {
  if (std::holds_alternative<CrossEntropyLoss>(kind)) {
    return CrossEntropyResult(output, ClassLabel(example));
  }
  if (std::holds_alternative<GaussianNllLoss>(kind)) {
    return NllResult(output, RealLabel(example));
  }
  if (const auto* m = std::get_if<MirageSpec>(&kind)) {
    const int y = ClassLabel(example);
    LossResult r;
    double weight;
    if (m->region.Contains(example.features)) {
      const auto t = TargetDistribution(m->Target(),
                                        static_cast<int>(output.size()), y);
      r.value = KlFromLogits(output, t, &r.grad);
      weight = m->lambda * m->scale;
    } else {
      r = CrossEntropyResult(output, y);
      weight = (1.0 - m->lambda) * m->scale;
    }
    r.value *= weight;
    for (double& g : r.grad) g *= weight;
    return r;
  }
  const auto& m = std::get<MirageRegressionSpec>(kind);
  const double y = RealLabel(example);
  if (!m.region.Contains(example.features)) return NllResult(output, y);
  if (output.size() != 2) throw Error("regression loss needs (mean, log var)");
  const double d = output[1] - std::log(m.sigma2_target);
  LossResult r;
  r.value = m.lambda * d * d;
  r.grad = {0.0, 2.0 * m.lambda * d};
  return r;
}

}  // namespace abstain
