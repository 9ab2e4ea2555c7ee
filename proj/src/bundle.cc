#include "abstain/bundle.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "abstain/error.h"
#include "json.hpp"

namespace abstain {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string_view> SplitCsv(std::string_view line) {
  std::vector<std::string_view> cells;
  size_t start = 0;
  while (true) {
    const size_t end = line.find(',', start);
    if (end == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, end - start));
    start = end + 1;
  }
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("cannot write " + path.string());
}

std::string HexU64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string RenderLabels(const Dataset& ds) {
  const bool posterior = ds.has_posterior();
  const bool noise = std::all_of(
      ds.examples.begin(), ds.examples.end(),
      [](const auto& e) { return e.noise_scale.has_value(); });
  std::string out = "id,label,region";
  if (posterior) {
    for (int k = 0; k < ds.num_classes; ++k) {
      out += ",posterior_" + std::to_string(k);
    }
  }
  for (size_t d = 0; d < ds.feature_dim(); ++d) {
    out += ",x_" + std::to_string(d);
  }
  if (noise) out += ",noise_scale";
  out += '\n';
  for (const auto& e : ds.examples) {
    out += e.id;
    out += ',';
    out += FormatLabel(e.label);
    out += e.region_flag ? ",1" : ",0";
    if (posterior) {
      for (double p : *e.true_posterior) {
        out += ',';
        out += FormatReal(p);
      }
    }
    for (double x : e.features) {
      out += ',';
      out += FormatReal(x);
    }
    if (noise) {
      out += ',';
      out += FormatReal(*e.noise_scale);
    }
    out += '\n';
  }
  return out;
}

std::string RenderOutputs(const PredictionTrace& trace,
                          const std::vector<size_t>& order) {
  std::string out;
  for (size_t i : order) {
    for (size_t t = 0; t < trace.num_checkpoints(); ++t) {
      out += "{\"id\":\"" + trace.ids()[i] + "\",\"t\":" + std::to_string(t) +
             ",\"out\":[";
      const auto row = trace.Output(i, t);
      for (size_t k = 0; k < row.size(); ++k) {
        if (k > 0) out += ',';
        out += FormatReal(row[k]);
      }
      out += "]}\n";
    }
  }
  return out;
}

std::string LineError(const std::string& file, size_t line,
                      const std::string& msg) {
  return file + ":" + std::to_string(line) + ": " + msg;
}

Dataset ParseLabels(const std::string& text, TaskKind task, int num_classes,
                    int horizon) {
  Dataset ds;
  ds.task = task;
  ds.num_classes = num_classes;
  ds.horizon = horizon;

  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("labels.csv: missing header");
  const auto header = SplitCsv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label" ||
      header[2] != "region") {
    throw Error("labels.csv:1: header must start with id,label,region");
  }
  std::vector<size_t> posterior_cols, feature_cols;
  std::optional<size_t> noise_col;
  for (size_t c = 3; c < header.size(); ++c) {
    const std::string_view h = header[c];
    if (h.starts_with("posterior_")) {
      if (h != "posterior_" + std::to_string(posterior_cols.size())) {
        throw Error("labels.csv:1: posterior columns out of order at '" +
                    std::string(h) + "'");
      }
      posterior_cols.push_back(c);
    } else if (h.starts_with("x_")) {
      if (h != "x_" + std::to_string(feature_cols.size())) {
        throw Error("labels.csv:1: feature columns out of order at '" +
                    std::string(h) + "'");
      }
      feature_cols.push_back(c);
    } else if (h == "noise_scale") {
      noise_col = c;
    } else {
      throw Error("labels.csv:1: unknown column '" + std::string(h) + "'");
    }
  }
  if (!posterior_cols.empty() &&
      static_cast<int>(posterior_cols.size()) != num_classes) {
    throw Error("labels.csv:1: expected " + std::to_string(num_classes) +
                " posterior columns");
  }

  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = SplitCsv(line);
    if (cells.size() != header.size()) {
      throw Error(LineError("labels.csv", line_no,
                            "expected " + std::to_string(header.size()) +
                                " cells, found " + std::to_string(cells.size())));
    }
    LabeledExample e;
    e.id = std::string(cells[0]);
    try {
      e.label = ParseLabel(task, cells[1]);
      if (cells[2] != "0" && cells[2] != "1") {
        throw Error("region must be 0 or 1");
      }
      e.region_flag = cells[2] == "1";
      if (!posterior_cols.empty()) {
        std::vector<double> p;
        for (size_t c : posterior_cols) p.push_back(ParseReal(cells[c]));
        e.true_posterior = std::move(p);
      }
      for (size_t c : feature_cols) e.features.push_back(ParseReal(cells[c]));
      if (noise_col) e.noise_scale = ParseReal(cells[*noise_col]);
    } catch (const Error& err) {
      throw Error(LineError("labels.csv", line_no,
                            "example '" + e.id + "': " + err.what()));
    }
    if (const int* y = std::get_if<int>(&e.label);
        y != nullptr && (*y < 0 || *y >= num_classes)) {
      throw Error(LineError("labels.csv", line_no,
                            "example '" + e.id + "': label " +
                                std::to_string(*y) + " out of range for " +
                                std::to_string(num_classes) + " classes"));
    }
    ds.examples.push_back(std::move(e));
  }
  ds.Validate();
  return ds;
}

PredictionTrace ParseOutputs(const std::string& text, const Dataset& ds,
                             TaskKind task, size_t checkpoints) {
  std::map<std::string, size_t, std::less<>> index;
  for (size_t i = 0; i < ds.size(); ++i) index[ds.examples[i].id] = i;

  std::vector<std::vector<std::vector<double>>> rows(
      ds.size(), std::vector<std::vector<double>>(checkpoints));
  std::vector<std::vector<bool>> seen(ds.size(),
                                      std::vector<bool>(checkpoints, false));
  std::vector<size_t> counts(ds.size(), 0);
  std::optional<size_t> width;

  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& ex) {
      throw Error(LineError("outputs.ndjson", line_no, ex.what()));
    }
    if (!obj.is_object() || obj.size() != 3 || !obj.contains("id") ||
        !obj["id"].is_string() || !obj.contains("t") ||
        !obj["t"].is_number_integer() || !obj.contains("out") ||
        !obj["out"].is_array()) {
      throw Error(LineError("outputs.ndjson", line_no,
                            "expected {\"id\": str, \"t\": int, \"out\": [reals]}"));
    }
    const std::string id = obj["id"].get<std::string>();
    const auto it = index.find(id);
    if (it == index.end()) {
      throw Error(LineError("outputs.ndjson", line_no,
                            "unknown example id '" + id + "'"));
    }
    const auto t = obj["t"].get<long long>();
    if (t < 0 || static_cast<size_t>(t) >= checkpoints) {
      throw Error(LineError("outputs.ndjson", line_no,
                            "example '" + id + "': checkpoint " +
                                std::to_string(t) + " out of range"));
    }
    if (seen[it->second][t]) {
      throw Error(LineError("outputs.ndjson", line_no,
                            "example '" + id + "': duplicate checkpoint " +
                                std::to_string(t)));
    }
    std::vector<double> row;
    for (const auto& v : obj["out"]) {
      if (!v.is_number()) {
        throw Error(LineError("outputs.ndjson", line_no,
                              "example '" + id + "': non-numeric output"));
      }
      row.push_back(v.get<double>());
    }
    if (!width) width = row.size();
    if (row.empty() || row.size() != *width) {
      throw Error(LineError("outputs.ndjson", line_no,
                            "example '" + id + "': output row of width " +
                                std::to_string(row.size())));
    }
    seen[it->second][t] = true;
    ++counts[it->second];
    rows[it->second][t] = std::move(row);
  }
  std::vector<std::string> ids;
  for (size_t i = 0; i < ds.size(); ++i) {
    if (counts[i] != checkpoints) {
      throw Error("outputs.ndjson: ragged trace: example '" +
                  ds.examples[i].id + "' has " + std::to_string(counts[i]) +
                  " of " + std::to_string(checkpoints) + " checkpoints");
    }
    ids.push_back(ds.examples[i].id);
  }
  if (task == TaskKind::kRegression && *width != 1 && *width != 2) {
    throw Error("outputs.ndjson: regression outputs must have width 1 or 2");
  }
  return PredictionTrace::FromRows(task, std::move(ids), rows);
}

}  // namespace

uint64_t BundleChecksum(std::string_view labels_csv,
                        std::string_view outputs_ndjson) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  feed(labels_csv);
  feed(outputs_ndjson);
  return h;
}

Dataset Canonicalize(Dataset dataset) {
  std::stable_sort(dataset.examples.begin(), dataset.examples.end(),
                   [](const auto& a, const auto& b) { return a.id < b.id; });
  return dataset;
}

void SaveBundle(const Dataset& dataset, const PredictionTrace* trace,
                const fs::path& dir) {
  dataset.Validate();
  const Dataset canonical = Canonicalize(dataset);

  std::string outputs;
  if (trace != nullptr) {
    if (trace->task() != dataset.task) {
      throw Error("trace task does not match the dataset task");
    }
    std::map<std::string_view, size_t> trace_index;
    for (size_t i = 0; i < trace->num_examples(); ++i) {
      trace_index[trace->ids()[i]] = i;
    }
    if (trace_index.size() != canonical.size()) {
      throw Error("trace ids do not match the dataset ids");
    }
    std::vector<size_t> order;
    for (const auto& e : canonical.examples) {
      const auto it = trace_index.find(e.id);
      if (it == trace_index.end()) {
        throw Error("trace has no outputs for example '" + e.id + "'");
      }
      order.push_back(it->second);
    }
    outputs = RenderOutputs(*trace, order);
  }
  const std::string labels = RenderLabels(canonical);

  json meta;
  meta["task"] = std::string(TaskName(dataset.task));
  if (dataset.task == TaskKind::kClassification) {
    meta["num_classes"] = dataset.num_classes;
  }
  if (dataset.task == TaskKind::kTimeseries) meta["horizon"] = dataset.horizon;
  meta["checkpoints"] = trace != nullptr ? trace->num_checkpoints() : 0;
  meta["checksum"] = HexU64(BundleChecksum(labels, outputs));

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create bundle directory " + dir.string());
  WriteFile(dir / "meta.json", meta.dump(2) + "\n");
  WriteFile(dir / "labels.csv", labels);
  if (trace != nullptr) {
    WriteFile(dir / "outputs.ndjson", outputs);
  } else {
    fs::remove(dir / "outputs.ndjson", ec);
  }
}

Bundle LoadBundle(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) {
    throw Error("missing file " + (dir / "meta.json").string());
  }
  if (!fs::exists(dir / "labels.csv")) {
    throw Error("missing file " + (dir / "labels.csv").string());
  }
  json meta;
  try {
    meta = json::parse(ReadFile(dir / "meta.json"));
  } catch (const json::exception& ex) {
    throw Error("meta.json: " + std::string(ex.what()));
  }
  if (!meta.is_object() || !meta.contains("task") ||
      !meta["task"].is_string() || !meta.contains("checkpoints") ||
      !meta["checkpoints"].is_number_integer() || !meta.contains("checksum") ||
      !meta["checksum"].is_string()) {
    throw Error("meta.json: expected task, checkpoints and checksum keys");
  }
  for (const auto& [key, value] : meta.items()) {
    if (key != "task" && key != "num_classes" && key != "horizon" &&
        key != "checkpoints" && key != "checksum") {
      throw Error("meta.json: unknown key '" + key + "'");
    }
  }
  const TaskKind task = ParseTask(meta["task"].get<std::string>());
  int num_classes = 0, horizon = 0;
  if (task == TaskKind::kClassification) {
    if (!meta.contains("num_classes") || !meta["num_classes"].is_number_integer() ||
        meta["num_classes"].get<int>() < 1) {
      throw Error("meta.json: classification bundles need num_classes >= 1");
    }
    num_classes = meta["num_classes"].get<int>();
  }
  if (task == TaskKind::kTimeseries) {
    if (!meta.contains("horizon") || !meta["horizon"].is_number_integer() ||
        meta["horizon"].get<int>() < 1) {
      throw Error("meta.json: timeseries bundles need horizon >= 1");
    }
    horizon = meta["horizon"].get<int>();
  }
  const long long checkpoints = meta["checkpoints"].get<long long>();
  if (checkpoints < 0) throw Error("meta.json: negative checkpoint count");

  const std::string labels = ReadFile(dir / "labels.csv");
  std::string outputs;
  const bool has_outputs = fs::exists(dir / "outputs.ndjson");
  if (has_outputs) outputs = ReadFile(dir / "outputs.ndjson");
  if (checkpoints > 0 && !has_outputs) {
    throw Error("missing file " + (dir / "outputs.ndjson").string());
  }
  if (HexU64(BundleChecksum(labels, outputs)) !=
      meta["checksum"].get<std::string>()) {
    throw Error("checksum mismatch: bundle contents differ from meta.json");
  }

  Bundle bundle;
  bundle.dataset = ParseLabels(labels, task, num_classes, horizon);
  if (checkpoints > 0) {
    bundle.trace = ParseOutputs(outputs, bundle.dataset, task,
                                static_cast<size_t>(checkpoints));
  }
  return bundle;
}

}  // namespace abstain
