#ifndef ABSTAIN_PIPELINE_H_
#define ABSTAIN_PIPELINE_H_

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace abstain {

// Runs one subcommand (gen-data, train, score, curve, decompose, audit,
// attack, surgery, report) or a `pipeline <config.json>` run. `args` excludes
// the program name. Returns the process exit status: 0 on success (a failed
// audit included), 1 on invalid input, 2 on numeric failure.
int RunCommand(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err);

// Builds report.json for a run directory: every immediate subdirectory that
// holds a metrics.json is a stage; artifacts are all files below the
// directory as sorted relative paths.
std::string BuildReport(const std::filesystem::path& run_dir);

}  // namespace abstain

#endif  // ABSTAIN_PIPELINE_H_
