#include "vqaens/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

namespace vqaens {

double CategoryScores::average() const {
    if (per_category.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [_, acc] : per_category) sum += acc;
    return sum / static_cast<double>(per_category.size());
}

ModeOutput run_mode(const PathwayConfig& pathway, const Dataset& dataset, int max_parallel,
                    BackendGateway& gateway, const TemplateRegistry& registry,
                    const GenerationParams& params) {
    const size_t n = dataset.items.size();
    std::vector<std::vector<CallPlan>> plans;
    plans.reserve(n);
    for (const auto& query : dataset.items) {
        plans.push_back(plan_calls(pathway, query, registry));
    }

    auto request_for = [&](const QueryInstance& query, const std::string& prompt) {
        BackendRequest req;
        req.backend_id = pathway.backend_id;
        req.prompt = prompt;
        req.media = query.video;
        req.apply(params);
        return req;
    };

    // Phase 1: all pre-passes in one batch.
    std::vector<size_t> prepass_queries;  // fan-out slot -> dataset index
    std::vector<BackendRequest> prepass_requests;
    for (size_t i = 0; i < n; ++i) {
        if (plans[i].front().role == CallRole::Prepass) {
            prepass_queries.push_back(i);
            prepass_requests.push_back(request_for(dataset.items[i], *plans[i].front().prompt));
        }
    }
    std::vector<SlotResult> prepass_results;
    if (!prepass_requests.empty()) {
        prepass_results = gateway.fan_out(prepass_requests, max_parallel);
    }

    std::vector<std::optional<std::string>> focus(n);
    std::vector<bool> prepass_failed(n, false);
    for (size_t slot = 0; slot < prepass_queries.size(); ++slot) {
        size_t i = prepass_queries[slot];
        const SlotResult& result = prepass_results[slot];
        if (!result.ok()) {
            prepass_failed[i] = true;
            continue;
        }
        const std::string& key = plans[i].front().prepass_key;
        if (auto value = extract_field(result.reply->raw_text, key)) {
            focus[i] = *value;
        } else {
            // Keep the raw notes; free text still serves as focus content.
            focus[i] = result.reply->raw_text;
        }
    }

    // Phase 2: main calls (skipping queries whose pre-pass already failed).
    std::vector<size_t> main_queries;
    std::vector<BackendRequest> main_requests;
    for (size_t i = 0; i < n; ++i) {
        if (prepass_failed[i]) continue;
        const CallPlan& main = plans[i].back();
        std::string prompt = main.prompt
                                 ? *main.prompt
                                 : render_prompt(pathway, dataset.items[i], registry, focus[i]);
        main_queries.push_back(i);
        main_requests.push_back(request_for(dataset.items[i], prompt));
    }
    std::vector<SlotResult> main_results;
    if (!main_requests.empty()) {
        main_results = gateway.fan_out(main_requests, max_parallel);
    }

    ModeOutput out;
    out.summary.mode_id = pathway.mode_id;
    out.responses.resize(n);
    for (size_t i = 0; i < n; ++i) {
        CandidateResponse failed;
        failed.mode_id = pathway.mode_id;
        failed.query_id = dataset.items[i].id;
        failed.parse_status = ParseStatus::Failed;
        out.responses[i] = std::move(failed);
    }
    for (size_t slot = 0; slot < main_queries.size(); ++slot) {
        size_t i = main_queries[slot];
        const SlotResult& result = main_results[slot];
        if (!result.ok()) continue;  // stays a Failed record
        CandidateResponse parsed = parse_response(result.reply->raw_text, pathway.cot_fields);
        parsed.mode_id = pathway.mode_id;
        parsed.query_id = dataset.items[i].id;
        out.responses[i] = std::move(parsed);
    }

    size_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
        const auto& query = dataset.items[i];
        auto record = AnswerRecord::make(query.id, out.responses[i].answer);
        if (query.ground_truth &&
            record.normalized == normalize_answer(*query.ground_truth)) {
            ++correct;
        }
        out.summary.answers.emplace(query.id, std::move(record));
    }
    if (dataset.labeled() && n > 0) {
        out.summary.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    }
    return out;
}

namespace {

bool judge_says_correct(const QueryInstance& query, const std::string& answer,
                        const std::string& judge_backend_id, BackendGateway& gateway) {
    std::ostringstream prompt;
    prompt << "Decide whether the candidate answer to a question about a video matches the\n"
              "reference answer in meaning.\n\n";
    prompt << "Question: " << query.question << "\n";
    prompt << "Reference answer: " << *query.ground_truth << "\n";
    prompt << "Candidate answer: " << answer << "\n\n";
    prompt << "Respond with exactly one JSON object and nothing else.\n";
    prompt << "Schema: {\"correct\": true}\n";

    BackendRequest request;
    request.backend_id = judge_backend_id;
    request.prompt = prompt.str();
    request.media = query.video;
    try {
        BackendReply reply = gateway.invoke(request);
        if (auto token = extract_field(reply.raw_text, "correct")) {
            std::string t = *token;
            std::transform(t.begin(), t.end(), t.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            return t == "true" || t == "yes";
        }
    } catch (const TransportError&) {
        // grading call failed: counted as incorrect rather than aborting
    }
    return false;
}

}  // namespace

CategoryScores score(const std::map<std::string, EnsembleDecision>& decisions,
                     const Dataset& dataset, const ScoringRule& rule, BackendGateway* gateway) {
    if (dataset.items.empty()) throw ScoreError("cannot score an empty dataset");
    if (!dataset.labeled()) throw ScoreError("dataset has no ground truth to score against");
    if (rule.kind == ScoringRule::Kind::JudgeScored) {
        if (!gateway) throw ScoreError("judge-scored rule needs a gateway");
        if (!gateway->has_backend(rule.judge_backend_id)) {
            throw ScoreError("judge-scored rule: unknown backend '" + rule.judge_backend_id + "'");
        }
    }

    std::map<int, std::pair<size_t, size_t>> tally;  // category -> {correct, total}
    for (const auto& query : dataset.items) {
        auto it = decisions.find(query.id);
        if (it == decisions.end()) {
            throw ScoreError("missing decision for query '" + query.id + "'");
        }
        bool correct = false;
        if (rule.kind == ScoringRule::Kind::ExactNormalized) {
            correct = normalize_answer(it->second.final_answer) ==
                      normalize_answer(*query.ground_truth);
        } else {
            correct = judge_says_correct(query, it->second.final_answer, rule.judge_backend_id,
                                         *gateway);
        }
        auto& [ok, total] = tally[query.category];
        if (correct) ++ok;
        ++total;
    }

    CategoryScores scores;
    for (const auto& [category, counts] : tally) {
        scores.per_category[category] =
            100.0 * static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    return scores;
}

namespace {

std::string format2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string emit_report(std::span<const std::pair<std::string, CategoryScores>> rows,
                        ReportFormat format) {
    std::ostringstream out;
    if (format == ReportFormat::Csv) {
        out << "label";
        for (int c = 1; c <= kCategoryCount; ++c) out << ",c" << c;
        out << ",avg\n";
        for (const auto& [label, scores] : rows) {
            out << label;
            for (int c = 1; c <= kCategoryCount; ++c) {
                out << ',';
                auto it = scores.per_category.find(c);
                if (it != scores.per_category.end()) out << format2(it->second);
            }
            out << ',' << format2(scores.average()) << '\n';
        }
        return out.str();
    }

    out << "| Benchmark Category |";
    for (int c = 1; c <= kCategoryCount; ++c) out << ' ' << c << " |";
    out << " Avg. |\n";
    out << "|---|";
    for (int c = 0; c <= kCategoryCount; ++c) out << "---|";
    out << '\n';
    for (const auto& [label, scores] : rows) {
        out << "| " << label << " |";
        for (int c = 1; c <= kCategoryCount; ++c) {
            auto it = scores.per_category.find(c);
            out << ' ' << (it != scores.per_category.end() ? format2(it->second) : "-") << " |";
        }
        out << ' ' << format2(scores.average()) << " |\n";
    }
    return out.str();
}

std::string emit_leaderboard(std::span<const std::pair<std::string, double>> entries) {
    std::vector<std::pair<std::string, double>> sorted(entries.begin(), entries.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.second < b.second; });
    std::ostringstream out;
    out << "| Rank | Participant Teams | Acc |\n";
    out << "|---|---|---|\n";
    for (size_t i = 0; i < sorted.size(); ++i) {
        out << "| " << (i + 1) << " | " << sorted[i].first << " | " << format2(sorted[i].second)
            << " |\n";
    }
    return out.str();
}

}  // namespace vqaens
