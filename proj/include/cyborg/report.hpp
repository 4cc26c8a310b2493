#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyborg/eval.hpp"

namespace cyborg::report {

/// row (training configuration) -> source -> one ScoreSet per run
using GroupedScores = std::map<std::string, std::map<std::string, std::vector<eval::ScoreSet>>>;

struct RunRef {
    std::string row;
    std::string run;
    std::filesystem::path checkpoint;
};

/// Every checkpoint.bin below `dir`; the run is its directory name and the
/// row is the directory holding the runs (the root's own name at top level).
std::vector<RunRef> find_checkpoints(const std::filesystem::path& dir);

struct ReportSummary {
    eval::AucTable table;
    std::vector<std::string> sources;
    int runs = 0;
};

/// Scores every checkpoint on every test manifest and writes
/// scores/<row>/<run>/<source>.csv, roc/<row>/<run>/<source>.csv plus the
/// table and plots (see write_report).
ReportSummary evaluate_checkpoints(const std::filesystem::path& checkpoints,
                                   const std::vector<std::filesystem::path>& test_manifests,
                                   const std::filesystem::path& out, int threads);

/// Collects scores/<row>/<run>/<source>.csv from every evaluation output
/// below `dir`.
GroupedScores collect_scores(const std::filesystem::path& dir);

/// Writes table.json, table.csv and plots/roc_<source>.svg.
ReportSummary write_report(const GroupedScores& scores, const std::filesystem::path& out);

/// Writes pair_stats.json and plots/pair_accuracy.svg.
eval::PairAccuracyStats write_pair_report(const eval::PairRecordSet& records, const std::filesystem::path& out);

std::string safe_name(const std::string& s);

}  // namespace cyborg::report
