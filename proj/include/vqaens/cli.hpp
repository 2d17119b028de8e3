#pragma once

// Command implementations behind the CLI binary. Kept in the library so
// integration tests can drive them directly.
//
// Exit codes: 0 success, 2 config/validation error, 3 transport exhaustion.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vqaens/config.hpp"
#include "vqaens/ensemble.hpp"
#include "vqaens/parser.hpp"

namespace vqaens {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitTransport = 3;

std::filesystem::path mode_file_path(const RunConfig& config, int mode_id);
std::filesystem::path decisions_file_path(const RunConfig& config);
std::filesystem::path similarity_file_path(const RunConfig& config);

std::vector<CandidateResponse> read_mode_file(const std::filesystem::path& path);
void write_mode_file(const std::filesystem::path& path,
                     const std::vector<CandidateResponse>& responses);

std::vector<EnsembleDecision> read_decisions_file(const std::filesystem::path& path);

/// Runs the selected pathways (all when `mode_ids` is empty) and writes one
/// mode_<id>.jsonl per pathway under the output dir. Prints per-mode
/// accuracy when the dataset is labeled.
int cmd_run(const RunConfig& config, const std::vector<int>& mode_ids, std::ostream& out,
            std::ostream& err);

/// Builds mode runs from the mode files, writes similarity.csv, and decides
/// every query by vote or judge per the config, into decisions.jsonl.
int cmd_ensemble(const RunConfig& config, std::ostream& out, std::ostream& err);

struct ReportOptions {
    std::optional<std::filesystem::path> baselines_csv;    // label + 11 values per row
    std::optional<std::filesystem::path> leaderboard_csv;  // team,accuracy per row
};

/// Prints the category table for the decisions (plus optional baseline rows
/// and leaderboard) and writes report.csv. Unlabeled datasets get a notice
/// and similarity-only output, still exit 0.
int cmd_report(const RunConfig& config, const ReportOptions& options, std::ostream& out,
               std::ostream& err);

/// Prints a greedy activation-mask suggestion (high weight, low similarity).
int cmd_suggest_mask(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace vqaens
