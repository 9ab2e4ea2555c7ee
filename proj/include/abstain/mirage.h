#ifndef ABSTAIN_MIRAGE_H_
#define ABSTAIN_MIRAGE_H_

#include <span>
#include <string_view>
#include <vector>

#include "abstain/datagen.h"
#include "abstain/trace_model.h"

namespace abstain {

struct TargetKind {
  enum class Kind { kDefault, kSubset, kWeighted };
  Kind kind = Kind::kDefault;
  double epsilon = 0.0;
  // kSubset: the class set S (must contain the true class).
  std::vector<int> subset;
  // kWeighted: alpha_l per class; entries other than the true class must sum
  // to 1.
  std::vector<double> weights;

  static TargetKind Default(double epsilon) {
    return {Kind::kDefault, epsilon, {}, {}};
  }
};

std::string_view TargetKindName(TargetKind::Kind kind);
TargetKind::Kind ParseTargetKind(std::string_view name);

// Truth-biased target t_eps(. | x, y) over C classes.
std::vector<double> TargetDistribution(const TargetKind& kind, int num_classes,
                                       int y);

// Floor applied to target probabilities inside log t, so subset targets with
// zero mass outside S stay finite.
inline constexpr double kTargetLogFloor = 1e-12;

// KL(f || t) = sum_j f_j (log f_j - log t_j); terms with f_j = 0 vanish.
double KlDivergence(std::span<const double> f, std::span<const double> t);

// KL(softmax(z) || t) and its gradient with respect to the logits z.
double KlFromLogits(std::span<const double> logits, std::span<const double> t,
                    std::vector<double>* grad);

struct MirageSpec {
  BoxRegion region;
  double epsilon = 0.15;
  double lambda = 0.5;
  TargetKind::Kind target = TargetKind::Kind::kDefault;
  std::vector<int> subset;
  std::vector<double> weights;
  // Multiplies the whole loss; 2 with lambda = 0.5 gives unit weights.
  double scale = 1.0;

  TargetKind Target() const { return {target, epsilon, subset, weights}; }
};

struct MirageRegressionSpec {
  BoxRegion region;
  double sigma2_target = 4.0;
  double lambda = 1.0;
};

// Mean over the batch of (1 - lambda) CE outside the region and
// lambda KL(f || t) inside, times the spec's scale. outputs[i] are logits.
double MirageLoss(std::span<const std::vector<double>> outputs,
                  const Dataset& batch, const MirageSpec& spec);

// Mean over the batch of the Gaussian NLL outside the region and
// lambda (log var - log sigma2_target)^2 inside. outputs[i] = (mean, log var).
double MirageRegressionLoss(std::span<const std::vector<double>> outputs,
                            const Dataset& batch,
                            const MirageRegressionSpec& spec);

// Histogram intersection sum_b min(p_in(b), p_out(b)) over `bins` equal-width
// bins of [0, 1].
double OverlapCoefficient(std::span<const double> conf_in,
                          std::span<const double> conf_out, int bins = 20);

}  // namespace abstain

#endif  // ABSTAIN_MIRAGE_H_
