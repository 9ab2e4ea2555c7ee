#ifndef ABSTAIN_SCORING_H_
#define ABSTAIN_SCORING_H_

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abstain/trace_model.h"

namespace abstain {

// Max softmax probability of a probability row.
double MspScore(std::span<const double> probabilities);

struct EnsembleResult {
  int prediction = 0;
  double score = 0.0;
};
// Mean of M probability rows, then MSP and argmax.
EnsembleResult EnsembleScore(const std::vector<std::vector<double>>& rows);

// v_t = (t/T)^k for t = 1..T.
std::vector<double> PowerWeights(size_t T, double k);
// v_t = 1 - (t/T)^k for t = 1..T; v_T = 0.
std::vector<double> InverseVarianceWeights(size_t T, double k);

// Per-checkpoint disagreement with the final checkpoint: 0/1 label
// disagreement (classification) or |f_t - f_T| on the predicted value
// (regression). a_T is 0 by construction.
std::vector<double> Disagreements(const PredictionTrace& trace, size_t example);
// Timeseries: a[t][r] = |f_{t,r} - f_{T,r}|.
std::vector<std::vector<double>> SeriesDisagreements(
    const PredictionTrace& trace, size_t example);

// g = sum_t v_t a_t with power weights. Lower is more confident.
double SptdFromDisagreements(std::span<const double> a, double k);
// Dispatches on the trace task; timeseries sums over the horizon too.
// Throws Error when T < 2.
double SptdScore(const PredictionTrace& trace, size_t example, double k);

struct ForgingScores {
  double s_max = 0.0;
  double s_sum = 0.0;
};
// Binary disagreements with v_t = 1 - (t/T)^k. Throws Error if a_T != 0.
ForgingScores ComputeForgingScores(std::span<const double> a, double k);

enum class AuxMetric { kConfidence, kTop2Gap, kEntropy };
AuxMetric ParseAuxMetric(std::string_view name);
// Metric of one logit row.
double AuxMetricValue(AuxMetric metric, std::span<const double> logits);

struct AuxScores {
  // 1 - sum_t w_t j_t, j_t = 1 iff the label changes between t-1 and t.
  double s_jmp = 0.0;
  // sum_t w_t (z_t - mean z)^2.
  double s_var = 0.0;
};
AuxScores ComputeAuxScores(const PredictionTrace& trace, size_t example,
                           AuxMetric metric, std::span<const double> weights);

// Per-checkpoint mean and population variance of a_t within one group.
struct GroupStats {
  size_t count = 0;
  std::vector<double> mean;
  std::vector<double> variance;
};
// group_of[i] in [0, num_groups); negative entries are ignored. Empty groups
// are returned as nullopt.
std::vector<std::optional<GroupStats>> DisagreementStats(
    const PredictionTrace& trace, std::span<const int> group_of,
    int num_groups);

// Group index for the standard four-way split.
inline int DisagreementGroup(bool is_train, bool correct) {
  return (is_train ? 0 : 2) + (correct ? 0 : 1);
}

struct ForgingBound {
  double raw = 0.0;
  // min(raw, 1).
  double clipped = 0.0;
};
// min over t with a_t != e_t of v_t / (a_t - e_t)^2. Throws Error if a == e.
ForgingBound ComputeForgingBound(std::span<const double> a,
                                 std::span<const double> e,
                                 std::span<const double> v);
// Same bound with every e_t taken as 0.
ForgingBound ComputeForgingBoundZeroMean(std::span<const double> a,
                                         std::span<const double> v);

// Accept iff p_max >= 1 - reject_cost.
bool ChowAccept(double p_max, double reject_cost);

enum class ScoreMethod { kMsp, kEnsemble, kSptd, kSmax, kSsum, kJump, kVar };
ScoreMethod ParseScoreMethod(std::string_view name);
std::string_view ScoreMethodName(ScoreMethod method);

struct ScoreOptions {
  double k = 2.0;
  AuxMetric metric = AuxMetric::kConfidence;
  // Temperature for msp/ensemble probabilities.
  double temperature = 1.0;
  // Ensemble members: the last M checkpoints; 0 means all.
  size_t members = 0;
};

// Scores every example of a trace. The prediction is the final checkpoint's
// label (ensemble: argmax of the averaged probabilities).
ScoreTable ScoreTrace(const PredictionTrace& trace, ScoreMethod method,
                      const ScoreOptions& options);

// CSV with header id,prediction,score,orientation.
void WriteScoreCsv(const ScoreTable& table, const std::filesystem::path& path);
ScoreTable ReadScoreCsv(const std::filesystem::path& path, TaskKind task);

}  // namespace abstain

#endif  // ABSTAIN_SCORING_H_
