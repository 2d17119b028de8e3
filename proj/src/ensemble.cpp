#include "vqaens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace vqaens {

double mode_weight(double accuracy_percent) {
    if (accuracy_percent < 0.0 || accuracy_percent > 100.0) {
        throw EnsembleError("accuracy must be within [0, 100], got " +
                            std::to_string(accuracy_percent));
    }
    // Round the quotient back to its decimal value (accuracies carry at most
    // a few decimal digits): 74.4 / 100 must equal 0.744, not 0.744000...01.
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", accuracy_percent / 100.0);
    return std::strtod(buf, nullptr);
}

double mode_weight(const ModeRun& run) {
    if (!run.accuracy) {
        throw EnsembleError("mode " + std::to_string(run.mode_id) +
                            " has no measured accuracy to derive a weight from");
    }
    return mode_weight(*run.accuracy);
}

double similarity(const ModeRun& a, const ModeRun& b) {
    if (a.answers.empty() || b.answers.empty()) {
        throw EnsembleError("similarity needs non-empty runs");
    }
    if (a.answers.size() != b.answers.size()) {
        throw EnsembleError("similarity needs identical query sets");
    }
    size_t agree = 0;
    for (const auto& [qid, rec] : a.answers) {
        auto it = b.answers.find(qid);
        if (it == b.answers.end()) {
            throw EnsembleError("similarity: query '" + qid + "' missing from mode " +
                                std::to_string(b.mode_id));
        }
        if (rec.normalized == it->second.normalized) ++agree;
    }
    return 100.0 * static_cast<double>(agree) / static_cast<double>(a.answers.size());
}

SimilarityMatrix similarity_matrix(std::span<const ModeRun> runs) {
    if (runs.empty()) throw EnsembleError("similarity matrix needs at least one run");
    SimilarityMatrix m;
    for (const auto& run : runs) m.mode_ids.push_back(run.mode_id);
    m.values.assign(runs.size(), std::vector<double>(runs.size(), 0.0));
    for (size_t i = 0; i < runs.size(); ++i) {
        m.values[i][i] = 100.0;
        for (size_t j = i + 1; j < runs.size(); ++j) {
            double s = similarity(runs[i], runs[j]);
            m.values[i][j] = s;
            m.values[j][i] = s;
        }
    }
    return m;
}

std::string similarity_csv(const SimilarityMatrix& matrix) {
    std::ostringstream out;
    out << "mode";
    for (int id : matrix.mode_ids) out << ',' << id;
    out << '\n';
    char buf[32];
    for (size_t i = 0; i < matrix.mode_ids.size(); ++i) {
        out << matrix.mode_ids[i];
        for (size_t j = 0; j < matrix.mode_ids.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.2f", matrix.values[i][j]);
            out << ',' << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::string_view decision_method_name(DecisionMethod m) {
    return m == DecisionMethod::Vote ? "vote" : "judge";
}

nlohmann::ordered_json decision_to_json(const EnsembleDecision& d) {
    nlohmann::ordered_json j;
    j["query_id"] = d.query_id;
    j["final_answer"] = d.final_answer;
    j["method"] = std::string(decision_method_name(d.method));
    if (d.method == DecisionMethod::Vote) {
        nlohmann::ordered_json tallies = nlohmann::ordered_json::object();
        for (const auto& [answer, weight] : d.tallies) tallies[answer] = weight;
        j["tallies"] = tallies;
    }
    if (d.chosen_mode) j["chosen_mode"] = *d.chosen_mode;
    if (d.judge_fallback) j["judge_fallback"] = true;
    return j;
}

EnsembleDecision decision_from_json(const nlohmann::json& j) {
    EnsembleDecision d;
    d.query_id = j.at("query_id").get<std::string>();
    d.final_answer = j.at("final_answer").get<std::string>();
    d.method = j.at("method").get<std::string>() == "judge" ? DecisionMethod::Judge
                                                            : DecisionMethod::Vote;
    if (j.contains("tallies")) {
        for (const auto& [answer, weight] : j["tallies"].items()) {
            d.tallies[answer] = weight.get<double>();
        }
    }
    if (j.contains("chosen_mode")) d.chosen_mode = j["chosen_mode"].get<int>();
    if (j.contains("judge_fallback")) d.judge_fallback = j["judge_fallback"].get<bool>();
    return d;
}

EnsembleDecision weighted_vote(const std::string& query_id,
                               std::span<const std::pair<int, AnswerRecord>> candidates,
                               const std::map<int, double>& weights,
                               const ActivationMask& mask) {
    struct Vote {
        int mode_id;
        double weight;
    };
    // answer -> voters, gathered independent of candidate order
    std::map<std::string, std::vector<Vote>> groups;
    std::map<int, bool> seen;
    size_t active_count = 0;
    for (const auto& [mode_id, record] : candidates) {
        if (seen.count(mode_id)) {
            throw EnsembleError("duplicate mode id " + std::to_string(mode_id) + " in vote");
        }
        seen[mode_id] = true;
        if (!mask.active(mode_id)) continue;
        ++active_count;
        auto wit = weights.find(mode_id);
        if (wit == weights.end()) {
            throw EnsembleError("active mode " + std::to_string(mode_id) + " has no weight");
        }
        // Failed parses arrive as empty answers and carry no weight.
        if (record.normalized.empty()) continue;
        if (wit->second <= 0.0) continue;
        groups[record.normalized].push_back(Vote{mode_id, wit->second});
    }
    if (active_count == 0) throw EnsembleError("weighted_vote: no active modes");

    EnsembleDecision decision;
    decision.query_id = query_id;
    decision.method = DecisionMethod::Vote;

    struct Scored {
        const std::string* answer;
        double tally;
        double best_weight;
        int lowest_mode;
    };
    std::optional<Scored> winner;
    for (auto& [answer, votes] : groups) {
        // Sum in mode-id order so the tally is a pure function of the vote
        // multiset, not of candidate order.
        std::sort(votes.begin(), votes.end(),
                  [](const Vote& a, const Vote& b) { return a.mode_id < b.mode_id; });
        Scored s{&answer, 0.0, 0.0, votes.front().mode_id};
        for (const auto& v : votes) {
            s.tally += v.weight;
            s.best_weight = std::max(s.best_weight, v.weight);
        }
        decision.tallies[answer] = s.tally;
        bool better = false;
        if (!winner) {
            better = true;
        } else if (s.tally != winner->tally) {
            better = s.tally > winner->tally;
        } else if (s.best_weight != winner->best_weight) {
            better = s.best_weight > winner->best_weight;
        } else {
            better = s.lowest_mode < winner->lowest_mode;
        }
        if (better) winner = s;
    }
    if (winner) decision.final_answer = *winner->answer;
    // No votable answer at all (every active mode failed): empty decision.
    return decision;
}

std::string judge_prompt(
    const QueryInstance& query,
    std::span<const std::pair<PathwayConfig, CandidateResponse>> candidates) {
    if (candidates.size() < 2) {
        throw EnsembleError("judge needs at least 2 candidates, got " +
                            std::to_string(candidates.size()));
    }
    for (const auto& [pathway, _] : candidates) {
        if (pathway.reasoning_characteristics.empty()) {
            throw EnsembleError("pathway " + std::to_string(pathway.mode_id) +
                                " has empty reasoning characteristics");
        }
    }
    std::ostringstream out;
    out << "Several analysts answered the same question about a video. Each one reasons in a\n"
           "different way, noted under \"approach\". First work out from the question itself\n"
           "which reasoning approach suits it best, then weigh the candidate answers against\n"
           "the question and the video, and give the final answer. You may restate or merge\n"
           "candidate answers if that yields a more accurate final answer.\n\n";
    out << "Question: " << query.question << "\n\n";
    for (size_t i = 0; i < candidates.size(); ++i) {
        const auto& [pathway, response] = candidates[i];
        out << "Candidate " << (i + 1) << ":\n";
        out << "  approach: " << pathway.reasoning_characteristics << "\n";
        out << "  answer: " << response.answer << "\n";
    }
    out << "\nchosen_index is the number of the candidate whose approach fits the question\n"
           "best; final_answer is the answer you settle on.\n";
    out << render_format_block_keys({"chosen_index", "final_answer"});
    return out.str();
}

namespace {

std::vector<std::pair<int, AnswerRecord>> vote_candidates(
    std::span<const std::pair<PathwayConfig, CandidateResponse>> candidates) {
    std::vector<std::pair<int, AnswerRecord>> out;
    out.reserve(candidates.size());
    for (const auto& [pathway, response] : candidates) {
        out.emplace_back(pathway.mode_id,
                         AnswerRecord::make(response.query_id, response.answer));
    }
    return out;
}

}  // namespace

EnsembleDecision judge_decision_from_reply(
    const QueryInstance& query,
    std::span<const std::pair<PathwayConfig, CandidateResponse>> candidates,
    const std::string& judge_raw_text, const std::map<int, double>& weights,
    const ActivationMask& mask) {
    std::optional<std::string> final_answer = extract_field(judge_raw_text, "final_answer");
    std::optional<int> chosen_mode;
    if (auto token = extract_field(judge_raw_text, "chosen_index")) {
        try {
            int index = std::stoi(*token);
            if (index >= 1 && index <= static_cast<int>(candidates.size())) {
                chosen_mode = candidates[static_cast<size_t>(index - 1)].first.mode_id;
                if (!final_answer) {
                    final_answer = candidates[static_cast<size_t>(index - 1)].second.answer;
                }
            }
        } catch (const std::exception&) {
        }
    }

    if (final_answer && !final_answer->empty()) {
        EnsembleDecision decision;
        decision.query_id = query.id;
        decision.final_answer = *final_answer;
        decision.method = DecisionMethod::Judge;
        decision.chosen_mode = chosen_mode;
        return decision;
    }

    // Unusable judge output: the vote decides, and the record says so.
    auto fallback = weighted_vote(query.id, vote_candidates(candidates), weights, mask);
    fallback.judge_fallback = true;
    return fallback;
}

EnsembleDecision judge_integrate(
    const QueryInstance& query,
    std::span<const std::pair<PathwayConfig, CandidateResponse>> candidates,
    const std::string& judge_backend_id, BackendGateway& gateway,
    const std::map<int, double>& weights, const ActivationMask& mask) {
    std::string prompt = judge_prompt(query, candidates);
    BackendRequest request;
    request.backend_id = judge_backend_id;
    request.prompt = std::move(prompt);
    request.media = query.video;
    try {
        BackendReply reply = gateway.invoke(request);
        return judge_decision_from_reply(query, candidates, reply.raw_text, weights, mask);
    } catch (const TransportError& transport) {
        try {
            auto fallback = weighted_vote(query.id, vote_candidates(candidates), weights, mask);
            fallback.judge_fallback = true;
            return fallback;
        } catch (const EnsembleError&) {
            throw transport;  // fallback failed too: surface the transport error
        }
    }
}

std::vector<int> suggest_mask(std::span<const ModeRun> runs, double lambda) {
    if (runs.empty()) return {};
    SimilarityMatrix sim = similarity_matrix(runs);
    std::vector<double> weights;
    weights.reserve(runs.size());
    for (const auto& run : runs) weights.push_back(mode_weight(run));

    std::vector<size_t> picked;
    std::vector<bool> used(runs.size(), false);
    for (;;) {
        std::optional<size_t> best;
        double best_score = 0.0;
        for (size_t i = 0; i < runs.size(); ++i) {
            if (used[i]) continue;
            double mean_sim = 0.0;
            for (size_t p : picked) mean_sim += sim.values[i][p] / 100.0;
            if (!picked.empty()) mean_sim /= static_cast<double>(picked.size());
            double score = weights[i] - lambda * mean_sim;
            if (!best || score > best_score) {
                best = i;
                best_score = score;
            }
        }
        if (!best || best_score <= 0.0) break;
        picked.push_back(*best);
        used[*best] = true;
    }
    std::vector<int> mode_ids;
    for (size_t i : picked) mode_ids.push_back(runs[i].mode_id);
    std::sort(mode_ids.begin(), mode_ids.end());
    return mode_ids;
}

}  // namespace vqaens
