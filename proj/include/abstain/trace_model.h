#ifndef ABSTAIN_TRACE_MODEL_H_
#define ABSTAIN_TRACE_MODEL_H_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace abstain {

enum class TaskKind { kClassification, kRegression, kTimeseries };

std::string_view TaskName(TaskKind task);
TaskKind ParseTask(std::string_view name);

// Class index, real scalar, or real series, depending on the task.
using Label = std::variant<int, double, std::vector<double>>;

struct LabeledExample {
  std::string id;
  std::vector<double> features;
  Label label;
  // Membership of the designated uncertainty region.
  bool region_flag = false;
  // Bayes posterior row, available for synthetic data only.
  std::optional<std::vector<double>> true_posterior;
  // Ground-truth noise standard deviation (heteroscedastic regression data).
  std::optional<double> noise_scale;
};

struct Dataset {
  TaskKind task = TaskKind::kClassification;
  // Number of classes (classification) or horizon (timeseries); 0 otherwise.
  int num_classes = 0;
  int horizon = 0;
  std::vector<LabeledExample> examples;

  size_t size() const { return examples.size(); }
  size_t feature_dim() const {
    return examples.empty() ? 0 : examples.front().features.size();
  }
  bool has_posterior() const;

  // Throws Error on a violated invariant: empty, duplicate ids, mixed label
  // kinds, class labels out of range, malformed posterior rows.
  void Validate() const;
};

// Rectangular [example][checkpoint] tensor of model outputs. Each output row
// has `width()` entries: C logits, one regression value, or R forecasts.
class PredictionTrace {
 public:
  PredictionTrace() = default;

  // `rows[i][t]` is the output of checkpoint t on example i. Throws Error if
  // the rows are ragged, a row has the wrong width, or a value is not finite.
  static PredictionTrace FromRows(
      TaskKind task, std::vector<std::string> ids,
      const std::vector<std::vector<std::vector<double>>>& rows);

  TaskKind task() const { return task_; }
  size_t num_examples() const { return ids_.size(); }
  size_t num_checkpoints() const { return checkpoints_; }
  size_t width() const { return width_; }
  const std::vector<std::string>& ids() const { return ids_; }

  std::span<const double> Output(size_t example, size_t checkpoint) const {
    return {data_.data() + (example * checkpoints_ + checkpoint) * width_,
            width_};
  }
  std::span<const double> Final(size_t example) const {
    return Output(example, checkpoints_ - 1);
  }
  const std::vector<double>& raw() const { return data_; }

  friend bool operator==(const PredictionTrace&,
                         const PredictionTrace&) = default;

 private:
  friend class TraceBuilder;
  TaskKind task_ = TaskKind::kClassification;
  std::vector<std::string> ids_;
  size_t checkpoints_ = 0;
  size_t width_ = 0;
  std::vector<double> data_;
};

// Accumulates whole checkpoints (one output row per example) in order.
class TraceBuilder {
 public:
  TraceBuilder(TaskKind task, std::vector<std::string> ids, size_t width);

  // `outputs` holds num_examples * width values, example-major.
  void AddCheckpoint(std::span<const double> outputs);
  size_t num_checkpoints() const { return checkpoints_.size(); }
  PredictionTrace Build() const;

 private:
  TaskKind task_;
  std::vector<std::string> ids_;
  size_t width_;
  std::vector<std::vector<double>> checkpoints_;
};

enum class Orientation { kHigherMoreConfident, kLowerMoreConfident };

std::string_view OrientationName(Orientation o);
Orientation ParseOrientation(std::string_view name);

struct ScoreEntry {
  std::string id;
  Label prediction;
  double score = 0.0;
};

// Per-example predictions with a confidence (or instability) score.
struct ScoreTable {
  Orientation orientation = Orientation::kHigherMoreConfident;
  std::vector<ScoreEntry> entries;

  // Score mapped so that larger always means more confident. Negation is
  // exact, so orderings are preserved bit-for-bit.
  double Confidence(size_t i) const {
    return orientation == Orientation::kHigherMoreConfident
               ? entries[i].score
               : -entries[i].score;
  }
  void Validate() const;
};

// Softmax with max-subtraction.
std::vector<double> SoftmaxProbs(std::span<const double> logits);

// Argmax with ties broken towards the lowest index.
int Argmax(std::span<const double> row);

// Classification: argmax of the row. Regression: the scalar. Timeseries: the
// row itself.
Label PredictLabel(TaskKind task, std::span<const double> output);

// Text forms used by the CSV formats: integers, %.17g reals, and series
// joined with ';'.
std::string FormatReal(double v);
std::string FormatLabel(const Label& label);
Label ParseLabel(TaskKind task, std::string_view text);
double ParseReal(std::string_view text);

bool LabelsEqual(const Label& a, const Label& b);

}  // namespace abstain

#endif  // ABSTAIN_TRACE_MODEL_H_
