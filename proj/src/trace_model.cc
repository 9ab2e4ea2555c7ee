#include "abstain/trace_model.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>

#include "abstain/error.h"

namespace abstain {

std::string_view TaskName(TaskKind task) {
  switch (task) {
    case TaskKind::kClassification:
      return "classification";
    case TaskKind::kRegression:
      return "regression";
    case TaskKind::kTimeseries:
      return "timeseries";
  }
  return "classification";
}

TaskKind ParseTask(std::string_view name) {
  if (name == "classification") return TaskKind::kClassification;
  if (name == "regression") return TaskKind::kRegression;
  if (name == "timeseries") return TaskKind::kTimeseries;
  throw Error("unknown task kind '" + std::string(name) + "'");
}

bool Dataset::has_posterior() const {
  return !examples.empty() &&
         std::all_of(examples.begin(), examples.end(),
                     [](const auto& e) { return e.true_posterior.has_value(); });
}

void Dataset::Validate() const {
  if (examples.empty()) throw Error("dataset is empty");
  std::set<std::string_view> seen;
  const size_t dim = feature_dim();
  for (const auto& e : examples) {
    if (e.id.empty() || e.id.find_first_of(",\n\"") != std::string::npos) {
      throw Error("invalid example id '" + e.id + "'");
    }
    if (!seen.insert(e.id).second) {
      throw Error("duplicate example id '" + e.id + "'");
    }
    if (e.features.size() != dim) {
      throw Error("example '" + e.id + "' has inconsistent feature dimension");
    }
    for (double f : e.features) {
      if (!std::isfinite(f)) {
        throw Error("example '" + e.id + "' has a non-finite feature");
      }
    }
    switch (task) {
      case TaskKind::kClassification: {
        const int* y = std::get_if<int>(&e.label);
        if (y == nullptr) {
          throw Error("example '" + e.id + "' does not carry a class label");
        }
        if (*y < 0 || *y >= num_classes) {
          throw Error("example '" + e.id + "': label " + std::to_string(*y) +
                      " out of range for " + std::to_string(num_classes) +
                      " classes");
        }
        break;
      }
      case TaskKind::kRegression:
        if (!std::holds_alternative<double>(e.label)) {
          throw Error("example '" + e.id + "' does not carry a real label");
        }
        break;
      case TaskKind::kTimeseries: {
        const auto* s = std::get_if<std::vector<double>>(&e.label);
        if (s == nullptr || static_cast<int>(s->size()) != horizon) {
          throw Error("example '" + e.id + "' does not carry a series of length " +
                      std::to_string(horizon));
        }
        break;
      }
    }
    if (e.true_posterior) {
      const auto& p = *e.true_posterior;
      if (task != TaskKind::kClassification ||
          static_cast<int>(p.size()) != num_classes) {
        throw Error("example '" + e.id + "' has a malformed posterior row");
      }
      double sum = 0.0;
      for (double v : p) {
        if (!(v >= 0.0)) {
          throw Error("example '" + e.id + "' has a negative posterior entry");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw Error("example '" + e.id + "' posterior does not sum to 1");
      }
    }
  }
}

PredictionTrace PredictionTrace::FromRows(
    TaskKind task, std::vector<std::string> ids,
    const std::vector<std::vector<std::vector<double>>>& rows) {
  if (rows.size() != ids.size()) {
    throw Error("trace has " + std::to_string(rows.size()) + " rows for " +
                std::to_string(ids.size()) + " ids");
  }
  if (rows.empty() || rows.front().empty()) {
    throw Error("trace must contain at least one example and checkpoint");
  }
  PredictionTrace trace;
  trace.task_ = task;
  trace.checkpoints_ = rows.front().size();
  trace.width_ = rows.front().front().size();
  if (trace.width_ == 0) throw Error("trace output rows are empty");
  trace.data_.reserve(ids.size() * trace.checkpoints_ * trace.width_);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != trace.checkpoints_) {
      throw Error("ragged trace: example '" + ids[i] + "' has " +
                  std::to_string(rows[i].size()) + " of " +
                  std::to_string(trace.checkpoints_) + " checkpoints");
    }
    for (const auto& row : rows[i]) {
      if (row.size() != trace.width_) {
        throw Error("example '" + ids[i] + "' has an output row of width " +
                    std::to_string(row.size()));
      }
      for (double v : row) {
        if (!std::isfinite(v)) {
          throw Error("example '" + ids[i] + "' has a non-finite output");
        }
        trace.data_.push_back(v);
      }
    }
  }
  trace.ids_ = std::move(ids);
  return trace;
}

TraceBuilder::TraceBuilder(TaskKind task, std::vector<std::string> ids,
                           size_t width)
    : task_(task), ids_(std::move(ids)), width_(width) {
  if (width_ == 0) throw Error("trace width must be positive");
}

void TraceBuilder::AddCheckpoint(std::span<const double> outputs) {
  if (outputs.size() != ids_.size() * width_) {
    throw Error("checkpoint has the wrong number of outputs");
  }
  for (double v : outputs) {
    if (!std::isfinite(v)) {
      throw NumericError("checkpoint " + std::to_string(checkpoints_.size()) +
                         " contains a non-finite output");
    }
  }
  checkpoints_.emplace_back(outputs.begin(), outputs.end());
}

PredictionTrace TraceBuilder::Build() const {
  if (checkpoints_.empty() || ids_.empty()) {
    throw Error("trace must contain at least one example and checkpoint");
  }
  PredictionTrace trace;
  trace.task_ = task_;
  trace.ids_ = ids_;
  trace.checkpoints_ = checkpoints_.size();
  trace.width_ = width_;
  trace.data_.resize(ids_.size() * checkpoints_.size() * width_);
  for (size_t t = 0; t < checkpoints_.size(); ++t) {
    for (size_t i = 0; i < ids_.size(); ++i) {
      std::copy_n(checkpoints_[t].begin() + i * width_, width_,
                  trace.data_.begin() + (i * trace.checkpoints_ + t) * width_);
    }
  }
  return trace;
}

std::string_view OrientationName(Orientation o) {
  return o == Orientation::kHigherMoreConfident ? "higher-more-confident"
                                                : "lower-more-confident";
}

Orientation ParseOrientation(std::string_view name) {
  if (name == "higher-more-confident") return Orientation::kHigherMoreConfident;
  if (name == "lower-more-confident") return Orientation::kLowerMoreConfident;
  throw Error("unknown score orientation '" + std::string(name) + "'");
}

void ScoreTable::Validate() const {
  std::set<std::string_view> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.id).second) {
      throw Error("score table has duplicate id '" + e.id + "'");
    }
    if (!std::isfinite(e.score)) {
      throw Error("score for '" + e.id + "' is not finite");
    }
  }
}

std::vector<double> SoftmaxProbs(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - max);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

int Argmax(std::span<const double> row) {
  int best = 0;
  for (size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = static_cast<int>(i);
  }
  return best;
}

Label PredictLabel(TaskKind task, std::span<const double> output) {
  switch (task) {
    case TaskKind::kClassification:
      return Argmax(output);
    case TaskKind::kRegression:
      return output.front();
    case TaskKind::kTimeseries:
      return std::vector<double>(output.begin(), output.end());
  }
  return 0;
}

std::string FormatReal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  std::string out(buf);
  // Keep a fraction or exponent so JSON readers never see an integer (which
  // would lose the sign of -0.0).
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

std::string FormatLabel(const Label& label) {
  if (const int* y = std::get_if<int>(&label)) return std::to_string(*y);
  if (const double* v = std::get_if<double>(&label)) return FormatReal(*v);
  std::string out;
  for (double v : std::get<std::vector<double>>(label)) {
    if (!out.empty()) out += ';';
    out += FormatReal(v);
  }
  return out;
}

double ParseReal(std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw Error("invalid real value '" + s + "'");
  }
  return v;
}

Label ParseLabel(TaskKind task, std::string_view text) {
  switch (task) {
    case TaskKind::kClassification: {
      const std::string s(text);
      char* end = nullptr;
      const long y = std::strtol(s.c_str(), &end, 10);
      if (s.empty() || end != s.c_str() + s.size()) {
        throw Error("invalid class label '" + s + "'");
      }
      return static_cast<int>(y);
    }
    case TaskKind::kRegression:
      return ParseReal(text);
    case TaskKind::kTimeseries: {
      std::vector<double> series;
      size_t start = 0;
      while (start <= text.size()) {
        const size_t end = text.find(';', start);
        const auto piece = text.substr(
            start, end == std::string_view::npos ? std::string_view::npos
                                                 : end - start);
        series.push_back(ParseReal(piece));
        if (end == std::string_view::npos) break;
        start = end + 1;
      }
      return series;
    }
  }
  return 0;
}

bool LabelsEqual(const Label& a, const Label& b) { return a == b; }

}  // namespace abstain
