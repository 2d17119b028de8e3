#pragma once

// Dataset-scale execution and reporting: run a pathway over a dataset, score
// decisions per category, and emit the benchmark-style tables.

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vqaens/backend.hpp"
#include "vqaens/core.hpp"
#include "vqaens/ensemble.hpp"
#include "vqaens/parser.hpp"
#include "vqaens/prompt.hpp"

namespace vqaens {

struct ScoreError : Error {
    using Error::Error;
};

// Per-category accuracy percentages. Categories absent from the dataset stay
// absent; the average is the unweighted mean over present categories.
struct CategoryScores {
    std::map<int, double> per_category;

    double average() const;
};

// How a decision is judged correct. ExactNormalized compares normalized
// strings; JudgeScored asks a grading backend for {"correct": true|false}.
struct ScoringRule {
    enum class Kind { ExactNormalized, JudgeScored };
    Kind kind = Kind::ExactNormalized;
    std::string judge_backend_id;  // JudgeScored only

    static ScoringRule exact() { return {}; }
    static ScoringRule judge_scored(std::string backend_id) {
        return {Kind::JudgeScored, std::move(backend_id)};
    }
};

// run_mode output: the answer stream summary plus the raw per-query records
// written to run artifacts.
struct ModeOutput {
    ModeRun summary;
    std::vector<CandidateResponse> responses;  // dataset order
};

/// Executes one pathway over the dataset: pre-pass calls first (for two-call
/// shapes), then main calls, both fanned out through the gateway. Transport
/// failures become Failed records with empty answers; the run never aborts.
/// The summary's accuracy is filled only when the dataset is labeled.
ModeOutput run_mode(const PathwayConfig& pathway, const Dataset& dataset, int max_parallel,
                    BackendGateway& gateway, const TemplateRegistry& registry,
                    const GenerationParams& params = {});

/// Scores decisions against ground truth, per category. The dataset must be
/// fully labeled and every query needs a decision. `gateway` is only needed
/// for JudgeScored rules.
CategoryScores score(const std::map<std::string, EnsembleDecision>& decisions,
                     const Dataset& dataset, const ScoringRule& rule,
                     BackendGateway* gateway = nullptr);

enum class ReportFormat { Csv, Markdown };

/// Benchmark-style table: one row per label, category columns 1..11 plus the
/// average, all to 2 decimals. Absent categories print as "-" (markdown) or
/// empty (csv).
std::string emit_report(std::span<const std::pair<std::string, CategoryScores>> rows,
                        ReportFormat format);

/// Leaderboard table: entries sorted by ascending accuracy with ranks 1..n;
/// equal accuracies keep input order.
std::string emit_leaderboard(std::span<const std::pair<std::string, double>> entries);

}  // namespace vqaens
