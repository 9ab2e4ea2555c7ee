#include "abstain/seleval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "abstain/error.h"
#include "json.hpp"

namespace abstain {
namespace {

// Indices of `scores` ranked most confident first, ties broken by id.
std::vector<size_t> RankByConfidence(const ScoreTable& scores) {
  std::vector<size_t> idx(scores.entries.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    const double ca = scores.Confidence(a), cb = scores.Confidence(b);
    if (ca != cb) return ca > cb;
    return scores.entries[a].id < scores.entries[b].id;
  });
  return idx;
}

double SortedSum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

UtilityKind ParseUtilityKind(std::string_view name) {
  if (name == "accuracy") return UtilityKind::kAccuracy;
  if (name == "r2") return UtilityKind::kR2;
  if (name == "msis") return UtilityKind::kMsis;
  throw Error("unknown utility '" + std::string(name) + "'");
}

std::string_view UtilityKindName(UtilityKind kind) {
  switch (kind) {
    case UtilityKind::kAccuracy:
      return "accuracy";
    case UtilityKind::kR2:
      return "r2";
    case UtilityKind::kMsis:
      return "msis";
  }
  return "accuracy";
}

double AccuracyUtility(std::span<const Label> predictions,
                       std::span<const Label> labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw Error("accuracy needs equal-length nonempty inputs");
  }
  size_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (LabelsEqual(predictions[i], labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double R2Utility(std::span<const double> predictions,
                 std::span<const double> labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw Error("R^2 needs equal-length nonempty inputs");
  }
  double mean = 0.0;
  for (double y : labels) mean += y;
  mean /= static_cast<double>(labels.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    ss_res += (predictions[i] - labels[i]) * (predictions[i] - labels[i]);
    ss_tot += (labels[i] - mean) * (labels[i] - mean);
  }
  if (ss_tot == 0.0) throw Error("R^2 undefined: labels are constant");
  return 1.0 - ss_res / ss_tot;
}

double MsisSeriesTerm(const MsisSeries& s, double alpha, int m) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("MSIS alpha must lie in (0, 1)");
  if (m < 1) throw Error("MSIS seasonality must be >= 1");
  const size_t R = s.truth.size();
  if (R == 0 || s.lower.size() != R || s.upper.size() != R) {
    throw Error("MSIS series needs matching truth and bound lengths");
  }
  const size_t n = s.history.size();
  if (n <= static_cast<size_t>(m)) {
    throw Error("MSIS history must be longer than the seasonality");
  }
  double scale = 0.0;
  for (size_t r = m; r < n; ++r) {
    scale += std::abs(s.history[r] - s.history[r - m]);
  }
  scale /= static_cast<double>(n - m);
  if (scale == 0.0) throw Error("MSIS undefined: constant history");
  double num = 0.0;
  for (size_t r = 0; r < R; ++r) {
    const double y = s.truth[r], l = s.lower[r], u = s.upper[r];
    num += u - l;
    if (y < l) num += 2.0 / alpha * (l - y);
    if (y > u) num += 2.0 / alpha * (y - u);
  }
  return num / scale;
}

double MsisUtility(std::span<const MsisSeries> series, double alpha, int m) {
  if (series.empty()) throw Error("MSIS needs at least one series");
  const size_t R = series.front().truth.size();
  double sum = 0.0;
  for (const auto& s : series) {
    if (s.truth.size() != R) throw Error("MSIS series horizons differ");
    sum += MsisSeriesTerm(s, alpha, m);
  }
  return sum / (static_cast<double>(series.size()) * static_cast<double>(R));
}

SelectiveCurve BuildCurve(const ScoreTable& scores, const Dataset& dataset,
                          UtilityKind kind, const MsisOptions* msis) {
  scores.Validate();
  const bool ok = (kind == UtilityKind::kAccuracy &&
                   dataset.task == TaskKind::kClassification) ||
                  (kind == UtilityKind::kR2 &&
                   dataset.task == TaskKind::kRegression) ||
                  (kind == UtilityKind::kMsis &&
                   dataset.task == TaskKind::kTimeseries);
  if (!ok) {
    throw Error("utility '" + std::string(UtilityKindName(kind)) +
                "' does not apply to a " +
                std::string(TaskName(dataset.task)) + " dataset");
  }
  if (kind == UtilityKind::kMsis && msis == nullptr) {
    throw Error("MSIS curves need interval bounds");
  }
  std::map<std::string_view, size_t> by_id;
  for (size_t i = 0; i < dataset.size(); ++i) by_id[dataset.examples[i].id] = i;
  if (scores.entries.size() != dataset.size()) {
    throw Error("score table has " + std::to_string(scores.entries.size()) +
                " entries for " + std::to_string(dataset.size()) + " examples");
  }
  const size_t N = dataset.size();
  if (N == 0) throw Error("cannot build a curve over no examples");

  SelectiveCurve curve;
  curve.kind = kind;
  const auto rank = RankByConfidence(scores);
  std::vector<const LabeledExample*> ex;
  for (size_t r : rank) {
    const auto& e = scores.entries[r];
    const auto it = by_id.find(e.id);
    if (it == by_id.end()) {
      throw Error("score table id '" + e.id + "' is not in the dataset");
    }
    curve.order.push_back(e.id);
    ex.push_back(&dataset.examples[it->second]);
  }
  for (size_t k = 1; k <= N; ++k) {
    curve.coverage.push_back(static_cast<double>(k) / static_cast<double>(N));
  }

  switch (kind) {
    case UtilityKind::kAccuracy: {
      size_t hits = 0;
      for (size_t k = 0; k < N; ++k) {
        const bool c = LabelsEqual(scores.entries[rank[k]].prediction,
                                   ex[k]->label);
        curve.correct.push_back(c);
        if (c) ++hits;
        curve.utility.push_back(static_cast<double>(hits) /
                                static_cast<double>(k + 1));
      }
      break;
    }
    case UtilityKind::kR2: {
      std::vector<double> pred, truth;
      for (size_t k = 0; k < N; ++k) {
        const auto* p = std::get_if<double>(&scores.entries[rank[k]].prediction);
        if (p == nullptr) throw Error("R^2 curves need real predictions");
        pred.push_back(*p);
        truth.push_back(std::get<double>(ex[k]->label));
        try {
          curve.utility.push_back(R2Utility(pred, truth));
        } catch (const Error&) {
          curve.utility.push_back(std::numeric_limits<double>::quiet_NaN());
        }
      }
      break;
    }
    case UtilityKind::kMsis: {
      double sum = 0.0;
      const double R = dataset.horizon;
      for (size_t k = 0; k < N; ++k) {
        const auto it = msis->intervals.find(ex[k]->id);
        if (it == msis->intervals.end()) {
          throw Error("no interval bounds for example '" + ex[k]->id + "'");
        }
        MsisSeries s{std::get<std::vector<double>>(ex[k]->label),
                     it->second.first, it->second.second, ex[k]->features};
        sum += MsisSeriesTerm(s, msis->alpha, msis->m);
        curve.utility.push_back(sum / (static_cast<double>(k + 1) * R));
      }
      break;
    }
  }
  curve.a_full = curve.utility.back();
  return curve;
}

double Auacc(const SelectiveCurve& curve) {
  if (curve.size() == 0) return 0.0;
  // The first utility is held flat on [0, 1/N].
  double area =
      std::isnan(curve.utility[0]) ? 0.0 : curve.coverage[0] * curve.utility[0];
  for (size_t k = 1; k < curve.size(); ++k) {
    const double a = curve.utility[k - 1], b = curve.utility[k];
    if (std::isnan(a) || std::isnan(b)) continue;
    area += (curve.coverage[k] - curve.coverage[k - 1]) * (a + b) / 2.0;
  }
  return area;
}

double Auroc(const ScoreTable& scores, const std::vector<bool>& correct) {
  if (correct.size() != scores.entries.size()) {
    throw Error("AUROC needs one correctness flag per score");
  }
  std::vector<size_t> idx(correct.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return scores.Confidence(a) < scores.Confidence(b);
  });
  double n_pos = 0.0, n_neg = 0.0, wins = 0.0, neg_below = 0.0;
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    double pos_tied = 0.0, neg_tied = 0.0;
    while (j < idx.size() &&
           scores.Confidence(idx[j]) == scores.Confidence(idx[i])) {
      (correct[idx[j]] ? pos_tied : neg_tied) += 1.0;
      ++j;
    }
    wins += pos_tied * neg_below + 0.5 * pos_tied * neg_tied;
    neg_below += neg_tied;
    n_pos += pos_tied;
    n_neg += neg_tied;
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0) {
    throw Error("AUROC undefined: all examples are " +
                std::string(n_pos == 0.0 ? "incorrect" : "correct"));
  }
  return wins / (n_pos * n_neg);
}

double OracleBound(double a_full, double c) {
  if (!(c > 0.0)) throw Error("oracle bound undefined at coverage 0");
  return c <= a_full ? 1.0 : a_full / c;
}

GapMetrics ComputeGapMetrics(const SelectiveCurve& curve) {
  if (curve.kind != UtilityKind::kAccuracy) {
    throw Error("gap metrics need an accuracy curve");
  }
  const size_t N = curve.size();
  size_t n_correct = 0;
  for (bool c : curve.correct) n_correct += c ? 1 : 0;
  GapMetrics g;
  for (size_t k = 1; k <= N; ++k) {
    const double b = static_cast<double>(std::min(k, n_correct)) /
                     static_cast<double>(k);
    g.bound.push_back(b);
    g.gap.push_back(b - curve.utility[k - 1]);
  }
  for (size_t k = 1; k < N; ++k) {
    g.e_aurc += (curve.coverage[k] - curve.coverage[k - 1]) *
                (g.gap[k - 1] + g.gap[k]) / 2.0;
  }
  g.acc_normalized = g.e_aurc;
  return g;
}

GapBudget DecomposeGap(
    const ScoreTable& scores, const Dataset& dataset,
    const std::map<std::string, std::vector<double>, std::less<>>& model_probs,
    const DecomposeOptions& options) {
  if (!dataset.has_posterior()) {
    throw Error("gap decomposition needs true posteriors (synthetic data)");
  }
  if (!(options.delta > 0.0 && options.delta < 1.0)) {
    throw Error("delta must lie in (0, 1)");
  }
  const SelectiveCurve curve =
      BuildCurve(scores, dataset, UtilityKind::kAccuracy);
  const GapMetrics gm = ComputeGapMetrics(curve);
  const size_t N = curve.size();

  std::map<std::string_view, const LabeledExample*> by_id;
  for (const auto& e : dataset.examples) by_id[e.id] = &e;
  std::map<std::string_view, int> predicted;
  for (const auto& e : scores.entries) predicted[e.id] = std::get<int>(e.prediction);

  // Per example in acceptance order: eta_h, eta_max.
  std::vector<double> eta_h(N), eta_max(N);
  for (size_t k = 0; k < N; ++k) {
    const std::string& id = curve.order[k];
    const auto& post = *by_id.at(id)->true_posterior;
    const auto it = model_probs.find(id);
    if (it == model_probs.end()) {
      throw Error("no model probabilities for example '" + id + "'");
    }
    const int yhat = predicted.at(id);
    if (Argmax(it->second) != yhat) {
      throw Error("model probabilities disagree with the prediction for '" +
                  id + "'");
    }
    eta_h[k] = post[yhat];
    eta_max[k] = *std::max_element(post.begin(), post.end());
  }
  // Oracle ordering by eta_h, ties by id.
  std::vector<size_t> star(N);
  std::iota(star.begin(), star.end(), 0);
  std::sort(star.begin(), star.end(), [&](size_t a, size_t b) {
    if (eta_h[a] != eta_h[b]) return eta_h[a] > eta_h[b];
    return curve.order[a] < curve.order[b];
  });
  std::vector<size_t> star_pos(N);
  for (size_t r = 0; r < N; ++r) star_pos[star[r]] = r;

  std::vector<double> grid = options.grid;
  if (grid.empty()) grid = curve.coverage;

  GapBudget budget;
  budget.n = N;
  budget.e_aurc = gm.e_aurc;
  budget.eps_stat = options.c_const *
                    std::sqrt(std::log(1.0 / options.delta) /
                              static_cast<double>(N));
  for (double c : grid) {
    if (!(c > 0.0 && c <= 1.0)) throw Error("grid coverages must lie in (0, 1]");
    size_t k = static_cast<size_t>(std::ceil(c * static_cast<double>(N) - 1e-9));
    k = std::clamp<size_t>(k, 1, N);
    GapPoint p;
    p.coverage = c;
    p.accepted = k;
    p.gap = gm.gap[k - 1];
    std::vector<double> bayes, approx, h_acc, h_star;
    size_t outside = 0;
    for (size_t i = 0; i < k; ++i) {
      bayes.push_back(1.0 - eta_max[i]);
      approx.push_back(eta_max[i] - eta_h[i]);
      h_acc.push_back(eta_h[i]);
      h_star.push_back(eta_h[star[i]]);
      if (star_pos[i] >= k) ++outside;
    }
    const double kd = static_cast<double>(k);
    p.eps_bayes = SortedSum(bayes) / kd;
    p.eps_approx = SortedSum(approx) / kd;
    p.eps_rank = (SortedSum(h_star) - SortedSum(h_acc)) / kd;
    p.d_rank = 2.0 * static_cast<double>(outside) / static_cast<double>(N);
    budget.points.push_back(p);
  }
  return budget;
}

LossPredMetrics ComputeLossPredMetrics(
    const std::vector<std::vector<double>>& probabilities,
    const std::vector<bool>& correct, std::span<const double> loss_predictions,
    const std::vector<std::vector<double>>& weight_functions) {
  const size_t n = probabilities.size();
  if (n == 0 || correct.size() != n || loss_predictions.size() != n) {
    throw Error("loss-prediction metrics need aligned nonempty inputs");
  }
  LossPredMetrics m;
  double sep_err = 0.0, lp_err = 0.0;
  std::vector<double> residual(n);
  for (size_t i = 0; i < n; ++i) {
    const double pmax =
        *std::max_element(probabilities[i].begin(), probabilities[i].end());
    const double sep = 1.0 - pmax;
    const double loss = correct[i] ? 0.0 : 1.0;
    m.sep.push_back(sep);
    sep_err += (loss - sep) * (loss - sep);
    lp_err += (loss - loss_predictions[i]) * (loss - loss_predictions[i]);
    residual[i] = (correct[i] ? 1.0 : 0.0) - pmax;
  }
  const double nd = static_cast<double>(n);
  m.advantage = sep_err / nd - lp_err / nd;
  for (const auto& w : weight_functions) {
    if (w.size() != n) throw Error("weight function length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (!(w[i] >= -1.0 && w[i] <= 1.0)) {
        throw Error("weight function values must lie in [-1, 1]");
      }
      s += residual[i] * w[i];
    }
    m.mce = std::max(m.mce, std::abs(s / nd));
  }
  return m;
}

void WriteCurveCsv(const SelectiveCurve& curve,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "coverage,utility,bound,gap\n";
  std::optional<GapMetrics> gm;
  if (curve.kind == UtilityKind::kAccuracy) gm = ComputeGapMetrics(curve);
  for (size_t k = 0; k < curve.size(); ++k) {
    out << FormatReal(curve.coverage[k]) << ','
        << (std::isnan(curve.utility[k]) ? std::string("nan")
                                         : FormatReal(curve.utility[k]));
    if (gm) {
      out << ',' << FormatReal(gm->bound[k]) << ',' << FormatReal(gm->gap[k]);
    } else {
      out << ",,";
    }
    out << '\n';
  }
  if (!out) throw Error("cannot write " + path.string());
}

std::string GapBudgetJson(const GapBudget& budget) {
  nlohmann::json j;
  j["n"] = budget.n;
  j["eps_stat"] = budget.eps_stat;
  j["e_aurc"] = budget.e_aurc;
  j["points"] = nlohmann::json::array();
  for (const auto& p : budget.points) {
    j["points"].push_back({{"coverage", p.coverage},
                           {"accepted", p.accepted},
                           {"gap", p.gap},
                           {"eps_bayes", p.eps_bayes},
                           {"eps_approx", p.eps_approx},
                           {"eps_rank", p.eps_rank},
                           {"d_rank", p.d_rank}});
  }
  return j.dump(2) + "\n";
}

}  // namespace abstain
