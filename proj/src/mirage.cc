#include "abstain/mirage.h"

#include <algorithm>
#include <cmath>

#include "abstain/error.h"
#include "abstain/losses.h"

namespace abstain {

std::string_view TargetKindName(TargetKind::Kind kind) {
  switch (kind) {
    case TargetKind::Kind::kDefault:
      return "default";
    case TargetKind::Kind::kSubset:
      return "subset";
    case TargetKind::Kind::kWeighted:
      return "weighted";
  }
  return "default";
}

TargetKind::Kind ParseTargetKind(std::string_view name) {
  if (name == "default") return TargetKind::Kind::kDefault;
  if (name == "subset") return TargetKind::Kind::kSubset;
  if (name == "weighted") return TargetKind::Kind::kWeighted;
  throw Error("unknown target kind '" + std::string(name) + "'");
}

std::vector<double> TargetDistribution(const TargetKind& kind, int num_classes,
                                       int y) {
  if (num_classes < 1 || y < 0 || y >= num_classes) {
    throw Error("target class out of range");
  }
  if (!(kind.epsilon >= 0.0 && kind.epsilon <= 1.0)) {
    throw Error("target epsilon must lie in [0, 1]");
  }
  const double eps = kind.epsilon;
  std::vector<double> t(num_classes, 0.0);
  switch (kind.kind) {
    case TargetKind::Kind::kDefault:
      for (double& v : t) v = (1.0 - eps) / num_classes;
      t[y] += eps;
      break;
    case TargetKind::Kind::kSubset: {
      if (std::find(kind.subset.begin(), kind.subset.end(), y) ==
          kind.subset.end()) {
        throw Error("subset target does not contain the true class " +
                    std::to_string(y));
      }
      std::vector<int> s = kind.subset;
      std::sort(s.begin(), s.end());
      s.erase(std::unique(s.begin(), s.end()), s.end());
      for (int c : s) {
        if (c < 0 || c >= num_classes) throw Error("subset class out of range");
        t[c] = (1.0 - eps) / static_cast<double>(s.size());
      }
      t[y] += eps;
      break;
    }
    case TargetKind::Kind::kWeighted: {
      if (static_cast<int>(kind.weights.size()) != num_classes) {
        throw Error("weighted target needs one weight per class");
      }
      double sum = 0.0;
      for (int c = 0; c < num_classes; ++c) {
        if (kind.weights[c] < 0.0) throw Error("target weights must be >= 0");
        if (c != y) sum += kind.weights[c];
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw Error("target weights other than the true class must sum to 1");
      }
      for (int c = 0; c < num_classes; ++c) {
        t[c] = c == y ? eps : (1.0 - eps) * kind.weights[c];
      }
      break;
    }
  }
  return t;
}

double KlDivergence(std::span<const double> f, std::span<const double> t) {
  double kl = 0.0;
  for (size_t j = 0; j < f.size(); ++j) {
    if (f[j] > 0.0) {
      kl += f[j] * (std::log(f[j]) - std::log(std::max(t[j], kTargetLogFloor)));
    }
  }
  return kl;
}

double KlFromLogits(std::span<const double> logits, std::span<const double> t,
                    std::vector<double>* grad) {
  const double max = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - max);
  const double lse = max + std::log(s);
  const size_t c = logits.size();
  std::vector<double> f(c), g(c);
  double kl = 0.0;
  for (size_t j = 0; j < c; ++j) {
    const double log_f = logits[j] - lse;
    f[j] = std::exp(log_f);
    g[j] = log_f - std::log(std::max(t[j], kTargetLogFloor));
    kl += f[j] * g[j];
  }
  if (grad != nullptr) {
    grad->resize(c);
    for (size_t j = 0; j < c; ++j) (*grad)[j] = f[j] * (g[j] - kl);
  }
  return kl;
}

double MirageLoss(std::span<const std::vector<double>> outputs,
                  const Dataset& batch, const MirageSpec& spec) {
  if (outputs.size() != batch.size() || batch.size() == 0) {
    throw Error("mirage loss needs one output per batch example");
  }
  const LossKind kind = spec;
  double sum = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    sum += LossValue(kind, outputs[i], batch.examples[i]).value;
  }
  return sum / static_cast<double>(batch.size());
}

double MirageRegressionLoss(std::span<const std::vector<double>> outputs,
                            const Dataset& batch,
                            const MirageRegressionSpec& spec) {
  if (outputs.size() != batch.size() || batch.size() == 0) {
    throw Error("mirage loss needs one output per batch example");
  }
  const LossKind kind = spec;
  double sum = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    sum += LossValue(kind, outputs[i], batch.examples[i]).value;
  }
  return sum / static_cast<double>(batch.size());
}

double OverlapCoefficient(std::span<const double> conf_in,
                          std::span<const double> conf_out, int bins) {
  if (conf_in.empty() || conf_out.empty()) {
    throw Error("overlap needs two nonempty samples");
  }
  if (bins < 1) throw Error("overlap needs at least one bin");
  auto histogram = [bins](std::span<const double> v) {
    std::vector<double> h(bins, 0.0);
    for (double p : v) {
      if (!(p >= 0.0 && p <= 1.0)) throw Error("confidence outside [0, 1]");
      const int b = std::min(static_cast<int>(std::floor(p * bins)), bins - 1);
      h[b] += 1.0;
    }
    for (double& x : h) x /= static_cast<double>(v.size());
    return h;
  };
  const auto a = histogram(conf_in), b = histogram(conf_out);
  double s = 0.0;
  for (int i = 0; i < bins; ++i) s += std::min(a[i], b[i]);
  return s;
}

}  // namespace abstain
