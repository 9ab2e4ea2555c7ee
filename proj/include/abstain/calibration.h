#ifndef ABSTAIN_CALIBRATION_H_
#define ABSTAIN_CALIBRATION_H_

#include <span>
#include <string>
#include <vector>

namespace abstain {

struct CalibrationTable {
  int bins = 0;
  std::vector<size_t> count;
  std::vector<double> conf_sum;
  std::vector<double> correct_sum;
  size_t total = 0;
};

// min(floor(p B), B - 1).
int BinIndex(double p, int bins);

// Throws Error for confidences outside [0, 1] or B < 1.
CalibrationTable BinTable(std::span<const double> confidences,
                          const std::vector<bool>& correct, int bins);

struct ReliabilityPoint {
  int bin = 0;
  double confidence = 0.0;
  double accuracy = 0.0;
  size_t count = 0;
};

struct EceMetrics {
  double ece = 0.0;
  double max_ce = 0.0;
  std::vector<ReliabilityPoint> points;
};
EceMetrics ComputeEce(const CalibrationTable& table);

struct AuditReport {
  CalibrationTable table;
  double alpha = 0.0;
  // alpha * N_b >= |Acc_b - Conf_b| per bin; empty bins pass.
  std::vector<bool> bin_pass;
  std::vector<int> failing_bins;
  bool pass = true;
};

// Plaintext bin-wise audit over a labelled reference set. probs[i] is a
// probability row; the prediction is its argmax and the confidence its max.
AuditReport GuardianAudit(const std::vector<std::vector<double>>& probs,
                          std::span<const int> labels, int bins, double alpha);
AuditReport GuardianAuditScores(std::span<const double> confidences,
                                const std::vector<bool>& correct, int bins,
                                double alpha);
std::string AuditReportJson(const AuditReport& report);

// Mean NLL of softmax(z / T).
double TemperatureNll(const std::vector<std::vector<double>>& logits,
                      std::span<const int> labels, double temperature);

// Golden-section search on log T over [ln 0.05, ln 20] with tolerance 1e-4 in
// log T; returns whichever of the minimiser and T = 1 has the lower NLL.
double FitTemperature(const std::vector<std::vector<double>>& logits,
                      std::span<const int> labels);

struct TemperedProbs {
  std::vector<double> probs;
  double s_t = 0.0;
};
TemperedProbs ApplyTemperature(std::span<const double> logits,
                               double temperature);

}  // namespace abstain

#endif  // ABSTAIN_CALIBRATION_H_
