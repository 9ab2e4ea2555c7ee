#include "abstain/scoring.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "abstain/error.h"

namespace abstain {
namespace {

void RequireCheckpoints(const PredictionTrace& trace) {
  if (trace.num_checkpoints() < 2) {
    throw Error("training-dynamics scores need at least 2 checkpoints");
  }
}

std::vector<double> Probs(std::span<const double> logits, double temperature) {
  std::vector<double> z(logits.begin(), logits.end());
  if (temperature != 1.0) {
    for (double& v : z) v /= temperature;
  }
  return SoftmaxProbs(z);
}

}  // namespace

double MspScore(std::span<const double> probabilities) {
  if (probabilities.empty()) throw Error("empty probability row");
  return *std::max_element(probabilities.begin(), probabilities.end());
}

EnsembleResult EnsembleScore(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw Error("ensemble needs at least one member");
  const size_t c = rows.front().size();
  std::vector<double> mean(c, 0.0);
  for (const auto& r : rows) {
    if (r.size() != c) throw Error("ensemble members disagree on class count");
    for (size_t j = 0; j < c; ++j) mean[j] += r[j];
  }
  for (double& v : mean) v /= static_cast<double>(rows.size());
  return {Argmax(mean), MspScore(mean)};
}

std::vector<double> PowerWeights(size_t T, double k) {
  std::vector<double> v(T);
  for (size_t t = 1; t <= T; ++t) {
    v[t - 1] = std::pow(static_cast<double>(t) / static_cast<double>(T), k);
  }
  return v;
}

std::vector<double> InverseVarianceWeights(size_t T, double k) {
  std::vector<double> v(T);
  for (size_t t = 1; t <= T; ++t) {
    v[t - 1] =
        1.0 - std::pow(static_cast<double>(t) / static_cast<double>(T), k);
  }
  v[T - 1] = 0.0;
  return v;
}

std::vector<double> Disagreements(const PredictionTrace& trace,
                                  size_t example) {
  const size_t T = trace.num_checkpoints();
  std::vector<double> a(T, 0.0);
  const auto final_row = trace.Final(example);
  switch (trace.task()) {
    case TaskKind::kClassification: {
      const int final_label = Argmax(final_row);
      for (size_t t = 0; t < T; ++t) {
        a[t] = Argmax(trace.Output(example, t)) != final_label ? 1.0 : 0.0;
      }
      break;
    }
    case TaskKind::kRegression:
      for (size_t t = 0; t < T; ++t) {
        a[t] = std::abs(trace.Output(example, t)[0] - final_row[0]);
      }
      break;
    case TaskKind::kTimeseries:
      for (size_t t = 0; t < T; ++t) {
        const auto row = trace.Output(example, t);
        double s = 0.0;
        for (size_t r = 0; r < row.size(); ++r) {
          s += (row[r] - final_row[r]) * (row[r] - final_row[r]);
        }
        a[t] = std::sqrt(s);
      }
      break;
  }
  return a;
}

std::vector<std::vector<double>> SeriesDisagreements(
    const PredictionTrace& trace, size_t example) {
  const auto final_row = trace.Final(example);
  std::vector<std::vector<double>> a;
  for (size_t t = 0; t < trace.num_checkpoints(); ++t) {
    const auto row = trace.Output(example, t);
    std::vector<double> at(row.size());
    for (size_t r = 0; r < row.size(); ++r) {
      at[r] = std::abs(row[r] - final_row[r]);
    }
    a.push_back(std::move(at));
  }
  return a;
}

double SptdFromDisagreements(std::span<const double> a, double k) {
  if (a.size() < 2) throw Error("SPTD needs at least 2 checkpoints");
  const auto v = PowerWeights(a.size(), k);
  double g = 0.0;
  for (size_t t = 0; t < a.size(); ++t) g += v[t] * a[t];
  return g;
}

double SptdScore(const PredictionTrace& trace, size_t example, double k) {
  RequireCheckpoints(trace);
  if (trace.task() == TaskKind::kTimeseries) {
    const auto a = SeriesDisagreements(trace, example);
    const auto v = PowerWeights(a.size(), k);
    double g = 0.0;
    for (size_t r = 0; r < trace.width(); ++r) {
      for (size_t t = 0; t < a.size(); ++t) g += v[t] * a[t][r];
    }
    return g;
  }
  return SptdFromDisagreements(Disagreements(trace, example), k);
}

ForgingScores ComputeForgingScores(std::span<const double> a, double k) {
  if (a.empty()) throw Error("empty disagreement sequence");
  if (a.back() != 0.0) {
    throw Error("final disagreement a_T must be 0");
  }
  const auto v = InverseVarianceWeights(a.size(), k);
  ForgingScores s;
  for (size_t t = 0; t + 1 < a.size(); ++t) {
    if (a[t] != 0.0 && a[t] != 1.0) {
      throw Error("forging scores need binary disagreements");
    }
    if (a[t] == 1.0) {
      s.s_max = std::max(s.s_max, 1.0 / v[t]);
      s.s_sum += 1.0 / v[t];
    }
  }
  return s;
}

AuxMetric ParseAuxMetric(std::string_view name) {
  if (name == "confidence") return AuxMetric::kConfidence;
  if (name == "top2_gap") return AuxMetric::kTop2Gap;
  if (name == "entropy") return AuxMetric::kEntropy;
  throw Error("unknown metric '" + std::string(name) + "'");
}

double AuxMetricValue(AuxMetric metric, std::span<const double> logits) {
  const auto p = SoftmaxProbs(logits);
  switch (metric) {
    case AuxMetric::kConfidence:
      return MspScore(p);
    case AuxMetric::kTop2Gap: {
      if (p.size() < 2) return p.front();
      auto q = p;
      std::partial_sort(q.begin(), q.begin() + 2, q.end(), std::greater<>());
      return q[0] - q[1];
    }
    case AuxMetric::kEntropy: {
      double h = 0.0;
      for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
      }
      return h;
    }
  }
  return 0.0;
}

AuxScores ComputeAuxScores(const PredictionTrace& trace, size_t example,
                           AuxMetric metric, std::span<const double> weights) {
  RequireCheckpoints(trace);
  if (trace.task() != TaskKind::kClassification) {
    throw Error("jump and variance scores need a classification trace");
  }
  const size_t T = trace.num_checkpoints();
  if (weights.size() != T) throw Error("one weight per checkpoint required");
  AuxScores s;
  double jumps = 0.0;
  std::vector<double> z(T);
  for (size_t t = 0; t < T; ++t) {
    const auto row = trace.Output(example, t);
    z[t] = AuxMetricValue(metric, row);
    if (t > 0 && Argmax(row) != Argmax(trace.Output(example, t - 1))) {
      jumps += weights[t];
    }
  }
  s.s_jmp = 1.0 - jumps;
  double mu = 0.0;
  for (double v : z) mu += v;
  mu /= static_cast<double>(T);
  for (size_t t = 0; t < T; ++t) s.s_var += weights[t] * (z[t] - mu) * (z[t] - mu);
  return s;
}

std::vector<std::optional<GroupStats>> DisagreementStats(
    const PredictionTrace& trace, std::span<const int> group_of,
    int num_groups) {
  if (group_of.size() != trace.num_examples()) {
    throw Error("one group index per trace example required");
  }
  const size_t T = trace.num_checkpoints();
  std::vector<GroupStats> acc(num_groups);
  for (auto& g : acc) {
    g.mean.assign(T, 0.0);
    g.variance.assign(T, 0.0);
  }
  std::vector<std::vector<double>> all(trace.num_examples());
  for (size_t i = 0; i < trace.num_examples(); ++i) {
    const int g = group_of[i];
    if (g < 0) continue;
    if (g >= num_groups) throw Error("group index out of range");
    all[i] = Disagreements(trace, i);
    ++acc[g].count;
    for (size_t t = 0; t < T; ++t) acc[g].mean[t] += all[i][t];
  }
  for (auto& g : acc) {
    if (g.count == 0) continue;
    for (double& m : g.mean) m /= static_cast<double>(g.count);
  }
  for (size_t i = 0; i < trace.num_examples(); ++i) {
    const int g = group_of[i];
    if (g < 0) continue;
    for (size_t t = 0; t < T; ++t) {
      const double d = all[i][t] - acc[g].mean[t];
      acc[g].variance[t] += d * d;
    }
  }
  std::vector<std::optional<GroupStats>> out(num_groups);
  for (int g = 0; g < num_groups; ++g) {
    if (acc[g].count == 0) continue;
    for (double& v : acc[g].variance) v /= static_cast<double>(acc[g].count);
    out[g] = std::move(acc[g]);
  }
  return out;
}

ForgingBound ComputeForgingBound(std::span<const double> a,
                                 std::span<const double> e,
                                 std::span<const double> v) {
  if (a.size() != e.size() || a.size() != v.size()) {
    throw Error("forging bound sequences must have equal length");
  }
  bool any = false;
  double best = 0.0;
  for (size_t t = 0; t < a.size(); ++t) {
    if (a[t] == e[t]) continue;
    const double d = a[t] - e[t];
    const double r = v[t] / (d * d);
    if (!any || r < best) best = r;
    any = true;
  }
  if (!any) {
    throw Error("forging bound undefined: a_t equals e_t at every checkpoint");
  }
  return {best, std::min(best, 1.0)};
}

ForgingBound ComputeForgingBoundZeroMean(std::span<const double> a,
                                         std::span<const double> v) {
  const std::vector<double> zeros(a.size(), 0.0);
  return ComputeForgingBound(a, zeros, v);
}

bool ChowAccept(double p_max, double reject_cost) {
  return p_max >= 1.0 - reject_cost;
}

ScoreMethod ParseScoreMethod(std::string_view name) {
  if (name == "msp") return ScoreMethod::kMsp;
  if (name == "ensemble") return ScoreMethod::kEnsemble;
  if (name == "sptd") return ScoreMethod::kSptd;
  if (name == "smax") return ScoreMethod::kSmax;
  if (name == "ssum") return ScoreMethod::kSsum;
  if (name == "jump") return ScoreMethod::kJump;
  if (name == "var") return ScoreMethod::kVar;
  throw Error("unknown score method '" + std::string(name) + "'");
}

std::string_view ScoreMethodName(ScoreMethod method) {
  switch (method) {
    case ScoreMethod::kMsp:
      return "msp";
    case ScoreMethod::kEnsemble:
      return "ensemble";
    case ScoreMethod::kSptd:
      return "sptd";
    case ScoreMethod::kSmax:
      return "smax";
    case ScoreMethod::kSsum:
      return "ssum";
    case ScoreMethod::kJump:
      return "jump";
    case ScoreMethod::kVar:
      return "var";
  }
  return "msp";
}

ScoreTable ScoreTrace(const PredictionTrace& trace, ScoreMethod method,
                      const ScoreOptions& options) {
  const bool needs_logits = method == ScoreMethod::kMsp ||
                            method == ScoreMethod::kEnsemble ||
                            method == ScoreMethod::kSmax ||
                            method == ScoreMethod::kSsum ||
                            method == ScoreMethod::kJump ||
                            method == ScoreMethod::kVar;
  if (needs_logits && trace.task() != TaskKind::kClassification) {
    throw Error("method '" + std::string(ScoreMethodName(method)) +
                "' needs a classification trace");
  }
  if (!(options.temperature > 0.0)) throw Error("temperature must be positive");
  const size_t T = trace.num_checkpoints();
  ScoreTable table;
  table.orientation = method == ScoreMethod::kMsp ||
                              method == ScoreMethod::kEnsemble ||
                              method == ScoreMethod::kJump
                          ? Orientation::kHigherMoreConfident
                          : Orientation::kLowerMoreConfident;
  const auto power = PowerWeights(T, options.k);
  for (size_t i = 0; i < trace.num_examples(); ++i) {
    ScoreEntry e;
    e.id = trace.ids()[i];
    e.prediction = PredictLabel(trace.task(), trace.Final(i));
    switch (method) {
      case ScoreMethod::kMsp:
        e.score = MspScore(Probs(trace.Final(i), options.temperature));
        break;
      case ScoreMethod::kEnsemble: {
        const size_t m =
            options.members == 0 ? T : std::min(options.members, T);
        std::vector<std::vector<double>> rows;
        for (size_t t = T - m; t < T; ++t) {
          rows.push_back(Probs(trace.Output(i, t), options.temperature));
        }
        const auto r = EnsembleScore(rows);
        e.prediction = r.prediction;
        e.score = r.score;
        break;
      }
      case ScoreMethod::kSptd:
        e.score = SptdScore(trace, i, options.k);
        break;
      case ScoreMethod::kSmax:
      case ScoreMethod::kSsum: {
        RequireCheckpoints(trace);
        const auto s = ComputeForgingScores(Disagreements(trace, i), options.k);
        e.score = method == ScoreMethod::kSmax ? s.s_max : s.s_sum;
        break;
      }
      case ScoreMethod::kJump:
      case ScoreMethod::kVar: {
        const auto s = ComputeAuxScores(trace, i, options.metric, power);
        e.score = method == ScoreMethod::kJump ? s.s_jmp : s.s_var;
        break;
      }
    }
    table.entries.push_back(std::move(e));
  }
  table.Validate();
  return table;
}

void WriteScoreCsv(const ScoreTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "id,prediction,score,orientation\n";
  const std::string orientation(OrientationName(table.orientation));
  for (const auto& e : table.entries) {
    out << e.id << ',' << FormatLabel(e.prediction) << ','
        << FormatReal(e.score) << ',' << orientation << '\n';
  }
  if (!out) throw Error("cannot write " + path.string());
}

ScoreTable ReadScoreCsv(const std::filesystem::path& path, TaskKind task) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read scores " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,prediction,score,orientation") {
    throw Error(path.string() + ":1: expected header "
                "id,prediction,score,orientation");
  }
  ScoreTable table;
  size_t line_no = 1;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) {
      throw Error(path.string() + ":" + std::to_string(line_no) +
                  ": expected 4 cells");
    }
    try {
      const Orientation o = ParseOrientation(cells[3]);
      if (first) {
        table.orientation = o;
        first = false;
      } else if (o != table.orientation) {
        throw Error("mixed orientations");
      }
      table.entries.push_back(
          {cells[0], ParseLabel(task, cells[1]), ParseReal(cells[2])});
    } catch (const Error& err) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " +
                  err.what());
    }
  }
  table.Validate();
  return table;
}

}  // namespace abstain
