#ifndef ABSTAIN_SELEVAL_H_
#define ABSTAIN_SELEVAL_H_

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abstain/trace_model.h"

namespace abstain {

enum class UtilityKind { kAccuracy, kR2, kMsis };
UtilityKind ParseUtilityKind(std::string_view name);
std::string_view UtilityKindName(UtilityKind kind);

// Fraction of matching labels.
double AccuracyUtility(std::span<const Label> predictions,
                       std::span<const Label> labels);

// 1 - SS_res / SS_tot. Throws Error when the labels are constant.
double R2Utility(std::span<const double> predictions,
                 std::span<const double> labels);

// One forecast series: truths y (length R), interval bounds, and the history
// used by the seasonal-naive scale.
struct MsisSeries {
  std::vector<double> truth;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> history;
};

// Interval score of one series divided by its seasonal-naive scale (not yet
// divided by R). Throws Error on a constant history.
double MsisSeriesTerm(const MsisSeries& s, double alpha, int m);
// (1 / (M R)) sum over series of MsisSeriesTerm.
double MsisUtility(std::span<const MsisSeries> series, double alpha, int m);

struct MsisOptions {
  double alpha = 0.05;
  int m = 1;
  // Interval bounds per example id; the history is the example's features.
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>,
           std::less<>>
      intervals;
};

struct SelectiveCurve {
  UtilityKind kind = UtilityKind::kAccuracy;
  // Example ids, most confident first; ties broken by id.
  std::vector<std::string> order;
  // coverage[k-1] = k / N.
  std::vector<double> coverage;
  // Utility of the first k accepted examples. NaN where the utility is
  // undefined on that prefix (R^2 with constant labels).
  std::vector<double> utility;
  // Accuracy curves only: correctness in acceptance order.
  std::vector<bool> correct;
  double a_full = 0.0;

  size_t size() const { return order.size(); }
};

// Joins scores and labels by id and ranks by orientation-normalised
// confidence. Throws Error if an id is missing or the utility does not fit
// the task.
SelectiveCurve BuildCurve(const ScoreTable& scores, const Dataset& dataset,
                          UtilityKind kind,
                          const MsisOptions* msis = nullptr);

// Trapezoid over the empirical grid k/N, k = 1..N, plus the first utility
// held flat on [0, 1/N], so a constant curve integrates to that constant.
// Segments touching an undefined point are skipped.
double Auacc(const SelectiveCurve& curve);

// Mann-Whitney statistic of confidence as a correct-vs-incorrect
// discriminator, ties counted 1/2. Throws Error if one class is empty.
double Auroc(const ScoreTable& scores, const std::vector<bool>& correct);

// 1 if c <= a_full, else a_full / c. Throws Error for c <= 0.
double OracleBound(double a_full, double c);

struct GapMetrics {
  // gap[k-1] = bound(k/N) - accuracy of the first k.
  std::vector<double> gap;
  std::vector<double> bound;
  double e_aurc = 0.0;
  // Equal to e_aurc: the area between the bound and the curve.
  double acc_normalized = 0.0;
};
// Accuracy curves only. The bound is evaluated in count form
// min(k, n_correct) / k so oracle rankings give an exactly zero gap.
GapMetrics ComputeGapMetrics(const SelectiveCurve& curve);

struct GapPoint {
  double coverage = 0.0;
  size_t accepted = 0;
  double gap = 0.0;
  double eps_bayes = 0.0;
  double eps_approx = 0.0;
  double eps_rank = 0.0;
  double d_rank = 0.0;
};

struct GapBudget {
  std::vector<GapPoint> points;
  double eps_stat = 0.0;
  double e_aurc = 0.0;
  size_t n = 0;
};

struct DecomposeOptions {
  // Coverage grid; empty means every k/N.
  std::vector<double> grid;
  double delta = 0.05;
  double c_const = 1.0;
};

// Gap budget on posterior-known data. model_probs[i] is the model's
// probability row for the score table's i-th entry's example (joined by id
// via `prob_ids`). eta_h(x) is the true posterior of the predicted class.
GapBudget DecomposeGap(const ScoreTable& scores, const Dataset& dataset,
                       const std::map<std::string, std::vector<double>,
                                      std::less<>>& model_probs,
                       const DecomposeOptions& options);

struct LossPredMetrics {
  std::vector<double> sep;
  double advantage = 0.0;
  double mce = 0.0;
};
// SEP = 1 - max p; Adv = E[(l - SEP)^2] - E[(l - LP)^2] with l the
// misclassification indicator; MCE = max over weight functions of
// |E[(correct - max p) w]|.
LossPredMetrics ComputeLossPredMetrics(
    const std::vector<std::vector<double>>& probabilities,
    const std::vector<bool>& correct, std::span<const double> loss_predictions,
    const std::vector<std::vector<double>>& weight_functions);

// CSV coverage,utility,bound,gap (bound and gap only for accuracy curves).
void WriteCurveCsv(const SelectiveCurve& curve,
                   const std::filesystem::path& path);
std::string GapBudgetJson(const GapBudget& budget);

}  // namespace abstain

#endif  // ABSTAIN_SELEVAL_H_
