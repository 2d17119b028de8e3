#pragma once

// Answer integration across modes: accuracy-derived weights, pairwise answer
// similarity, activation-masked weighted voting, and the judge stage that
// lets a multimodal model pick or fuse the final answer.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqaens/backend.hpp"
#include "vqaens/core.hpp"
#include "vqaens/parser.hpp"
#include "vqaens/prompt.hpp"

namespace vqaens {

struct EnsembleError : Error {
    using Error::Error;
};

// One pathway's answers over a dataset slice. `accuracy` is a percentage in
// [0, 100], present only when the slice was labeled.
struct ModeRun {
    int mode_id = 0;
    std::map<std::string, AnswerRecord> answers;  // query_id -> record
    std::optional<double> accuracy;
};

/// A mode's vote strength: its accuracy percentage rescaled to [0, 1].
/// Decimal-correct (75.9 -> 0.759 exactly), since accuracies are reported
/// as short decimals and binary division noise would leak into comparisons.
double mode_weight(const ModeRun& run);
double mode_weight(double accuracy_percent);

/// Percentage of shared queries on which the two runs give identical
/// normalized answers. Both runs must cover the same non-empty query set.
double similarity(const ModeRun& a, const ModeRun& b);

struct SimilarityMatrix {
    std::vector<int> mode_ids;
    std::vector<std::vector<double>> values;  // symmetric, 100 diagonal, [0,100]
};

SimilarityMatrix similarity_matrix(std::span<const ModeRun> runs);

/// CSV form: header row of mode ids, percentages to 2 decimals.
std::string similarity_csv(const SimilarityMatrix& matrix);

// Per-mode on/off switches for the vote. Modes not listed default to active.
struct ActivationMask {
    std::map<int, bool> flags;

    bool active(int mode_id) const {
        auto it = flags.find(mode_id);
        return it == flags.end() ? true : it->second;
    }
    static ActivationMask all_active() { return {}; }
};

enum class DecisionMethod { Vote, Judge };

std::string_view decision_method_name(DecisionMethod m);

struct EnsembleDecision {
    std::string query_id;
    std::string final_answer;
    DecisionMethod method = DecisionMethod::Vote;
    // Vote only: normalized answer -> total weight. The winner's tally is
    // maximal.
    std::map<std::string, double> tallies;
    // Judge only: the mode whose candidate the judge picked.
    std::optional<int> chosen_mode;
    // True when the judge reply was unusable and the vote decided instead.
    bool judge_fallback = false;
};

nlohmann::ordered_json decision_to_json(const EnsembleDecision& d);
EnsembleDecision decision_from_json(const nlohmann::json& j);

/// Weighted plurality over normalized answers. Each active mode adds its
/// weight to its answer's tally; empty answers (failed parses) and
/// non-positive weights contribute nothing. Ties break toward the answer
/// backed by the highest-weight voter, then toward the one containing the
/// lowest mode id. Candidate order never matters.
/// Throws EnsembleError when no mode is active, a mode id repeats, or an
/// active mode lacks a weight.
EnsembleDecision weighted_vote(const std::string& query_id,
                               std::span<const std::pair<int, AnswerRecord>> candidates,
                               const std::map<int, double>& weights,
                               const ActivationMask& mask);

/// Judge prompt: question, every candidate answer labeled 1..n, each
/// pathway's reasoning characteristics, and instructions to first work out
/// from the question which reasoning pathway fits it best, then reply as
/// {"chosen_index": k, "final_answer": "..."}. Deterministic. Needs >= 2
/// candidates.
std::string judge_prompt(const QueryInstance& query,
                         std::span<const std::pair<PathwayConfig, CandidateResponse>> candidates);

/// Turns a judge reply into a decision. Accepts a rewritten ("fused")
/// final_answer; a valid chosen_index (1..n) sets chosen_mode; anything
/// unusable falls back to weighted_vote over the same candidates and marks
/// the fallback.
EnsembleDecision judge_decision_from_reply(
    const QueryInstance& query,
    std::span<const std::pair<PathwayConfig, CandidateResponse>> candidates,
    const std::string& judge_raw_text, const std::map<int, double>& weights,
    const ActivationMask& mask);

/// One judge call through the gateway (media attached), then
/// judge_decision_from_reply. Transport failures also fall back to the
/// vote; if that fails in turn, the transport error propagates.
EnsembleDecision judge_integrate(
    const QueryInstance& query,
    std::span<const std::pair<PathwayConfig, CandidateResponse>> candidates,
    const std::string& judge_backend_id, BackendGateway& gateway,
    const std::map<int, double>& weights, const ActivationMask& mask = {});

/// Reporting aid: greedily picks modes maximizing
/// weight - lambda * mean similarity (as a fraction) to the already picked
/// set, while that score stays positive. Returns picked mode ids, ascending.
std::vector<int> suggest_mask(std::span<const ModeRun> runs, double lambda = 0.5);

}  // namespace vqaens
