#ifndef ABSTAIN_BUNDLE_H_
#define ABSTAIN_BUNDLE_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>

#include "abstain/trace_model.h"

namespace abstain {

// On-disk bundle directory:
//   meta.json       task, num_classes | horizon, checkpoints, checksum
//   labels.csv      id,label,region[,posterior_0..][,x_0..][,noise_scale]
//   outputs.ndjson  {"id": ..., "t": ..., "out": [...]} per line (optional)
//
// Reals are written with 17 significant digits, so a save/load round trip is
// bit-exact. Examples are written sorted by id and checkpoints ascending.
struct Bundle {
  Dataset dataset;
  std::optional<PredictionTrace> trace;
};

Bundle LoadBundle(const std::filesystem::path& dir);

// Throws Error if the directory cannot be written or the trace ids do not
// match the dataset ids.
void SaveBundle(const Dataset& dataset, const PredictionTrace* trace,
                const std::filesystem::path& dir);

// FNV-1a 64-bit over the labels.csv bytes followed by the outputs.ndjson
// bytes. Stored in meta.json as 16 lowercase hex digits.
uint64_t BundleChecksum(std::string_view labels_csv,
                        std::string_view outputs_ndjson);

// Returns the dataset with examples sorted by id, the canonical bundle order.
Dataset Canonicalize(Dataset dataset);

}  // namespace abstain

#endif  // ABSTAIN_BUNDLE_H_
