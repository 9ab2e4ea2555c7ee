#include "abstain/calibration.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "abstain/error.h"
#include "abstain/trace_model.h"
#include "json.hpp"

namespace abstain {

int BinIndex(double p, int bins) {
  return std::min(static_cast<int>(std::floor(p * bins)), bins - 1);
}

CalibrationTable BinTable(std::span<const double> confidences,
                          const std::vector<bool>& correct, int bins) {
  if (bins < 1) throw Error("bin count must be >= 1");
  if (confidences.size() != correct.size()) {
    throw Error("one correctness flag per confidence required");
  }
  CalibrationTable t;
  t.bins = bins;
  t.count.assign(bins, 0);
  t.conf_sum.assign(bins, 0.0);
  t.correct_sum.assign(bins, 0.0);
  for (size_t i = 0; i < confidences.size(); ++i) {
    const double p = confidences[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error("confidence " + FormatReal(p) + " outside [0, 1]");
    }
    const int b = BinIndex(p, bins);
    ++t.count[b];
    t.conf_sum[b] += p;
    t.correct_sum[b] += correct[i] ? 1.0 : 0.0;
  }
  t.total = confidences.size();
  return t;
}

EceMetrics ComputeEce(const CalibrationTable& table) {
  if (table.total == 0) throw Error("ECE of an empty table");
  EceMetrics m;
  for (int b = 0; b < table.bins; ++b) {
    if (table.count[b] == 0) continue;
    const double n = static_cast<double>(table.count[b]);
    const double acc = table.correct_sum[b] / n;
    const double conf = table.conf_sum[b] / n;
    const double gap = std::abs(acc - conf);
    m.ece += n / static_cast<double>(table.total) * gap;
    m.max_ce = std::max(m.max_ce, gap);
    m.points.push_back({b, conf, acc, table.count[b]});
  }
  return m;
}

AuditReport GuardianAuditScores(std::span<const double> confidences,
                                const std::vector<bool>& correct, int bins,
                                double alpha) {
  if (confidences.empty()) throw Error("audit needs a nonempty reference set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
  AuditReport r;
  r.alpha = alpha;
  r.table = BinTable(confidences, correct, bins);
  for (int b = 0; b < bins; ++b) {
    const bool ok = alpha * static_cast<double>(r.table.count[b]) >=
                    std::abs(r.table.correct_sum[b] - r.table.conf_sum[b]);
    r.bin_pass.push_back(ok);
    if (!ok) r.failing_bins.push_back(b);
  }
  r.pass = r.failing_bins.empty();
  return r;
}

AuditReport GuardianAudit(const std::vector<std::vector<double>>& probs,
                          std::span<const int> labels, int bins, double alpha) {
  if (probs.size() != labels.size()) {
    throw Error("one label per probability row required");
  }
  std::vector<double> conf;
  std::vector<bool> correct(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    conf.push_back(*std::max_element(probs[i].begin(), probs[i].end()));
    correct[i] = Argmax(probs[i]) == labels[i];
  }
  return GuardianAuditScores(conf, correct, bins, alpha);
}

std::string AuditReportJson(const AuditReport& report) {
  nlohmann::json j;
  j["pass"] = report.pass;
  j["alpha"] = report.alpha;
  j["bins"] = report.table.bins;
  j["failing_bins"] = report.failing_bins;
  const EceMetrics m = ComputeEce(report.table);
  j["ece"] = m.ece;
  j["max_ce"] = m.max_ce;
  j["table"] = nlohmann::json::array();
  for (int b = 0; b < report.table.bins; ++b) {
    const double lo = static_cast<double>(b) / report.table.bins;
    const double hi = static_cast<double>(b + 1) / report.table.bins;
    j["table"].push_back({{"bin", b},
                          {"lower", lo},
                          {"upper", hi},
                          {"count", report.table.count[b]},
                          {"conf_sum", report.table.conf_sum[b]},
                          {"correct_sum", report.table.correct_sum[b]},
                          {"pass", static_cast<bool>(report.bin_pass[b])}});
  }
  return j.dump(2) + "\n";
}

double TemperatureNll(const std::vector<std::vector<double>>& logits,
                      std::span<const int> labels, double temperature) {
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const auto& z = logits[i];
    const double max = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp((v - max) / temperature);
    sum += std::log(s) - (z[labels[i]] - max) / temperature;
  }
  return sum / static_cast<double>(logits.size());
}

double FitTemperature(const std::vector<std::vector<double>>& logits,
                      std::span<const int> labels) {
  if (logits.size() < 2 || logits.size() != labels.size()) {
    throw Error("temperature fit needs at least 2 labelled examples");
  }
  if (logits.front().size() < 2) {
    throw Error("temperature fit needs at least 2 classes");
  }
  std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) {
    throw Error("temperature fit refused: all labels are identical");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<size_t>(y) >= logits.front().size()) {
      throw Error("label out of range in temperature fit");
    }
  }
  auto f = [&](double log_t) {
    return TemperatureNll(logits, labels, std::exp(log_t));
  };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(0.05), b = std::log(20.0);
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-4) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double t = std::exp((a + b) / 2.0);
  return f(std::log(t)) <= TemperatureNll(logits, labels, 1.0) ? t : 1.0;
}

TemperedProbs ApplyTemperature(std::span<const double> logits,
                               double temperature) {
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  std::vector<double> z(logits.begin(), logits.end());
  for (double& v : z) v /= temperature;
  TemperedProbs out;
  out.probs = SoftmaxProbs(z);
  out.s_t = *std::max_element(out.probs.begin(), out.probs.end());
  return out;
}

}  // namespace abstain
