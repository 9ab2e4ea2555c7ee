#ifndef ABSTAIN_SURGERY_H_
#define ABSTAIN_SURGERY_H_

#include <optional>
#include <string>
#include <vector>

#include "abstain/datagen.h"
#include "abstain/network.h"

namespace abstain {

struct WidgetParams {
  double eps_clip = 0.0;
  double eps_lb = 0.0;
  double eps_ub = 0.0;
  double eps_and = 0.0;
};

// Scalar widget functions. Inputs are taken after the nonnegativity shift.
// clbw ramps from 0 at t - eps_lb to eps_clip at t - eps_lb + eps_clip.
double ClbwValue(double x, double t, const WidgetParams& p);
// cubw ramps from eps_clip at t + eps_ub - eps_clip down to 0 at t + eps_ub.
double CubwValue(double x, double t, const WidgetParams& p);
// relu(o1 + o2 - (2 eps_clip - eps_and)).
double SoftAndValue(double o1, double o2, const WidgetParams& p);

struct SurgeryPlan {
  BoxRegion region;
  // Nonnegative logit shift applied inside the region.
  std::vector<double> shift;
  WidgetParams params;

  // Per-dimension core interval [a_i + eps_clip, b_i - eps_clip].
  std::vector<std::pair<double, double>> Core() const;
};

// Validates the region and shift and fills default parameters:
// eps_clip = min_i (b_i - a_i) / 8, eps_and = eps_clip, eps_lb = eps_ub = 0.
// Throws Error for negative shifts, eps_and > eps_clip, or
// a_i + 2 eps_clip > b_i.
SurgeryPlan MakeSurgeryPlan(BoxRegion region, std::vector<double> shift,
                            std::optional<WidgetParams> params = std::nullopt);

// Hidden layers the widget path needs: |I| + 4.
size_t RequiredHiddenLayers(const SurgeryPlan& plan);

// Adds the region-selection widgets alongside the original neurons. Shallow
// networks are padded before the output layer with identity layers built
// from the pair u = relu(u) - relu(-u).
MlpNetwork AugmentNetwork(const MlpNetwork& net, const SurgeryPlan& plan);

struct SurgeryReport {
  size_t points = 0;
  size_t outside_points = 0;
  size_t core_points = 0;
  size_t transition_points = 0;
  // max |f'(x) - f(x)| over points outside the open box.
  double outside_max = 0.0;
  // max |f'(x) - (f(x) + c)| over core points.
  double core_max = 0.0;
  // max |f'(x) - f(x)| and max |f'(x) - (f(x) + c)| in the transition band,
  // reported only.
  double transition_max_delta = 0.0;
  double transition_max_shift_error = 0.0;
  // Fraction of outside points whose argmax is unchanged.
  double outside_argmax_preserved = 1.0;
};

// Halton grid of grid_n points. Region coordinates span twice the region's
// extent around its centre; the other coordinates span [-1, 1].
SurgeryReport VerifySurgery(const MlpNetwork& original,
                            const MlpNetwork& augmented,
                            const SurgeryPlan& plan, size_t grid_n);

// Radical inverse of i in the given prime base.
double Halton(size_t i, int base);

BoxRegion RegionFromJson(const std::string& text);
std::string RegionToJson(const BoxRegion& region);
std::string SurgeryReportJson(const SurgeryReport& report);

}  // namespace abstain

#endif  // ABSTAIN_SURGERY_H_
