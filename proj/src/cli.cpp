#include "vqaens/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vqaens/harness.hpp"

namespace vqaens {

std::filesystem::path mode_file_path(const RunConfig& config, int mode_id) {
    return config.output_dir / ("mode_" + std::to_string(mode_id) + ".jsonl");
}

std::filesystem::path decisions_file_path(const RunConfig& config) {
    return config.output_dir / "decisions.jsonl";
}

std::filesystem::path similarity_file_path(const RunConfig& config) {
    return config.output_dir / "similarity.csv";
}

std::vector<CandidateResponse> read_mode_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mode file: " + path.string());
    std::vector<CandidateResponse> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(candidate_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + " line " + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
    return out;
}

void write_mode_file(const std::filesystem::path& path,
                     const std::vector<CandidateResponse>& responses) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write mode file: " + path.string());
    for (const auto& response : responses) {
        out << dump_json_line(candidate_to_json(response)) << '\n';
    }
}

std::vector<EnsembleDecision> read_decisions_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open decisions file: " + path.string());
    std::vector<EnsembleDecision> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(decision_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

namespace {

GenerationParams params_for(const RunConfig& config, const std::string& backend_id) {
    GenerationParams params;
    auto it = config.backends.find(backend_id);
    if (it != config.backends.end()) {
        params.temperature = it->second.temperature;
        params.max_output_tokens = it->second.max_output_tokens;
    }
    return params;
}

ModeRun summarize_mode(int mode_id, const std::vector<CandidateResponse>& responses,
                       const Dataset& dataset) {
    ModeRun run;
    run.mode_id = mode_id;
    std::map<std::string, const CandidateResponse*> by_query;
    for (const auto& r : responses) by_query[r.query_id] = &r;
    size_t correct = 0;
    for (const auto& query : dataset.items) {
        auto it = by_query.find(query.id);
        if (it == by_query.end()) {
            throw ConfigError("mode " + std::to_string(mode_id) +
                              " has no response for query '" + query.id + "'");
        }
        auto record = AnswerRecord::make(query.id, it->second->answer);
        if (query.ground_truth &&
            record.normalized == normalize_answer(*query.ground_truth)) {
            ++correct;
        }
        run.answers.emplace(query.id, std::move(record));
    }
    if (dataset.labeled() && !dataset.items.empty()) {
        run.accuracy =
            100.0 * static_cast<double>(correct) / static_cast<double>(dataset.items.size());
    }
    return run;
}

struct EnsembleInputs {
    std::vector<int> mode_ids;                           // pathway order
    std::map<int, std::vector<CandidateResponse>> responses;  // dataset order each
    std::vector<ModeRun> runs;                           // pathway order
    std::map<int, double> weights;
    ActivationMask mask;
};

EnsembleInputs load_ensemble_inputs(const RunConfig& config, const Dataset& dataset,
                                    std::ostream& err) {
    EnsembleInputs inputs;
    inputs.mask = config.activation_mask();
    for (const auto& pathway : config.pathways) {
        auto path = mode_file_path(config, pathway.mode_id);
        if (!std::filesystem::exists(path)) {
            if (inputs.mask.active(pathway.mode_id)) {
                throw ConfigError("missing mode file for active mode " +
                                  std::to_string(pathway.mode_id) + ": " + path.string());
            }
            continue;  // inactive and never run: leave it out entirely
        }
        auto responses = read_mode_file(path);
        inputs.runs.push_back(summarize_mode(pathway.mode_id, responses, dataset));
        // realign to dataset order; summarize_mode already proved coverage
        std::map<std::string, CandidateResponse> by_id;
        for (auto& r : responses) by_id[r.query_id] = std::move(r);
        std::vector<CandidateResponse> ordered;
        ordered.reserve(dataset.items.size());
        for (const auto& query : dataset.items) ordered.push_back(by_id.at(query.id));
        inputs.responses[pathway.mode_id] = std::move(ordered);
        inputs.mode_ids.push_back(pathway.mode_id);
    }

    bool accuracy_known = !inputs.runs.empty() &&
                          std::all_of(inputs.runs.begin(), inputs.runs.end(),
                                      [](const ModeRun& r) { return r.accuracy.has_value(); });
    if (config.ensemble.uniform_weights || !accuracy_known) {
        if (!config.ensemble.uniform_weights) {
            err << "note: dataset is unlabeled, voting with uniform weights\n";
        }
        for (int id : inputs.mode_ids) inputs.weights[id] = 1.0;
    } else {
        for (const auto& run : inputs.runs) inputs.weights[run.mode_id] = mode_weight(run);
    }
    return inputs;
}

}  // namespace

int cmd_run(const RunConfig& config, const std::vector<int>& mode_ids, std::ostream& out,
            std::ostream& err) {
    try {
        std::vector<const PathwayConfig*> selected;
        if (mode_ids.empty()) {
            for (const auto& p : config.pathways) selected.push_back(&p);
        } else {
            for (int id : mode_ids) {
                const PathwayConfig* p = config.pathway_by_mode(id);
                if (!p) throw ConfigError("unknown mode id " + std::to_string(id));
                selected.push_back(p);
            }
        }

        Dataset dataset = load_dataset(config.dataset, config.split);
        auto gateway = make_gateway(config);
        TemplateRegistry registry = make_template_registry(config);
        std::filesystem::create_directories(config.output_dir);

        for (const PathwayConfig* pathway : selected) {
            ModeOutput result = run_mode(*pathway, dataset, config.max_parallel, *gateway,
                                         registry, params_for(config, pathway->backend_id));
            write_mode_file(mode_file_path(config, pathway->mode_id), result.responses);
            out << "mode " << pathway->mode_id << " (" << pathway->name << "): "
                << result.responses.size() << " queries";
            if (result.summary.accuracy) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.2f", *result.summary.accuracy);
                out << ", accuracy " << buf << "%";
            }
            out << '\n';
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const TransportError& e) {
        err << "error: " << e.what() << '\n';
        return kExitTransport;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

int cmd_ensemble(const RunConfig& config, std::ostream& out, std::ostream& err) {
    try {
        Dataset dataset = load_dataset(config.dataset, config.split);
        EnsembleInputs inputs = load_ensemble_inputs(config, dataset, err);
        if (inputs.runs.empty()) throw ConfigError("no mode files found; run 'run' first");

        std::filesystem::create_directories(config.output_dir);
        {
            auto matrix = similarity_matrix(inputs.runs);
            std::ofstream sim(similarity_file_path(config));
            sim << similarity_csv(matrix);
        }

        // per-query candidate lists, dataset order
        const bool use_judge = config.ensemble.method == "judge";
        std::unique_ptr<BackendGateway> gateway;
        if (use_judge) gateway = make_gateway(config);

        std::vector<EnsembleDecision> decisions;
        decisions.reserve(dataset.items.size());

        // Judge calls are batched through fan_out; vote is pure.
        std::vector<std::vector<std::pair<PathwayConfig, CandidateResponse>>> candidate_sets;
        candidate_sets.reserve(dataset.items.size());
        for (size_t qi = 0; qi < dataset.items.size(); ++qi) {
            std::vector<std::pair<PathwayConfig, CandidateResponse>> candidates;
            for (int mode_id : inputs.mode_ids) {
                if (!inputs.mask.active(mode_id)) continue;
                const PathwayConfig* pathway = config.pathway_by_mode(mode_id);
                candidates.emplace_back(*pathway, inputs.responses[mode_id][qi]);
            }
            candidate_sets.push_back(std::move(candidates));
        }

        auto vote_for = [&](size_t qi) {
            std::vector<std::pair<int, AnswerRecord>> records;
            for (const auto& [pathway, response] : candidate_sets[qi]) {
                records.emplace_back(pathway.mode_id,
                                     AnswerRecord::make(response.query_id, response.answer));
            }
            return weighted_vote(dataset.items[qi].id, records, inputs.weights, inputs.mask);
        };

        if (!use_judge) {
            for (size_t qi = 0; qi < dataset.items.size(); ++qi) {
                decisions.push_back(vote_for(qi));
            }
        } else {
            GenerationParams params = params_for(config, config.ensemble.judge_backend);
            std::vector<BackendRequest> requests;
            std::vector<size_t> judged;  // request slot -> query index
            for (size_t qi = 0; qi < dataset.items.size(); ++qi) {
                if (candidate_sets[qi].size() < 2) continue;  // nothing to arbitrate
                BackendRequest request;
                request.backend_id = config.ensemble.judge_backend;
                request.prompt = judge_prompt(dataset.items[qi], candidate_sets[qi]);
                request.media = dataset.items[qi].video;
                request.apply(params);
                judged.push_back(qi);
                requests.push_back(std::move(request));
            }
            auto replies = gateway->fan_out(requests, config.max_parallel);

            std::map<size_t, const SlotResult*> reply_by_query;
            for (size_t slot = 0; slot < judged.size(); ++slot) {
                reply_by_query[judged[slot]] = &replies[slot];
            }
            for (size_t qi = 0; qi < dataset.items.size(); ++qi) {
                auto it = reply_by_query.find(qi);
                if (it == reply_by_query.end() || !it->second->ok()) {
                    auto fallback = vote_for(qi);
                    if (it != reply_by_query.end()) fallback.judge_fallback = true;
                    decisions.push_back(std::move(fallback));
                    continue;
                }
                decisions.push_back(judge_decision_from_reply(
                    dataset.items[qi], candidate_sets[qi], it->second->reply->raw_text,
                    inputs.weights, inputs.mask));
            }
        }

        {
            std::ofstream dec(decisions_file_path(config));
            if (!dec) {
                throw ConfigError("cannot write decisions file: " +
                                  decisions_file_path(config).string());
            }
            for (const auto& d : decisions) dec << dump_json_line(decision_to_json(d)) << '\n';
        }
        out << "ensemble: " << decisions.size() << " decisions ("
            << config.ensemble.method << ") over " << inputs.mode_ids.size() << " modes\n";
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const TransportError& e) {
        err << "error: " << e.what() << '\n';
        return kExitTransport;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

std::vector<std::pair<std::string, CategoryScores>> read_baselines_csv(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open baselines file: " + path.string());
    std::vector<std::pair<std::string, CategoryScores>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (!fields.empty() && fields[0] == "label") continue;  // header
        if (fields.size() != 1 + kCategoryCount) {
            throw ConfigError("baselines row needs a label plus 11 values: " + line);
        }
        CategoryScores scores;
        for (int c = 1; c <= kCategoryCount; ++c) {
            scores.per_category[c] = std::stod(fields[static_cast<size_t>(c)]);
        }
        rows.emplace_back(fields[0], scores);
    }
    return rows;
}

std::vector<std::pair<std::string, double>> read_leaderboard_csv(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open leaderboard file: " + path.string());
    std::vector<std::pair<std::string, double>> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (!fields.empty() && fields[0] == "team") continue;  // header
        if (fields.size() != 2) {
            throw ConfigError("leaderboard row needs team,accuracy: " + line);
        }
        entries.emplace_back(fields[0], std::stod(fields[1]));
    }
    return entries;
}

}  // namespace

int cmd_report(const RunConfig& config, const ReportOptions& options, std::ostream& out,
               std::ostream& err) {
    try {
        Dataset dataset = load_dataset(config.dataset, config.split);

        if (!dataset.labeled()) {
            out << "no ground truth in dataset: skipping accuracy report\n";
            auto sim_path = similarity_file_path(config);
            if (std::filesystem::exists(sim_path)) {
                std::ifstream sim(sim_path);
                out << sim.rdbuf();
            }
            return kExitOk;
        }

        auto decision_list = read_decisions_file(decisions_file_path(config));
        if (decision_list.empty()) throw ConfigError("decisions file is empty");
        std::map<std::string, EnsembleDecision> decisions;
        for (auto& d : decision_list) decisions[d.query_id] = std::move(d);

        CategoryScores ours = score(decisions, dataset, ScoringRule::exact());
        std::vector<std::pair<std::string, CategoryScores>> rows;
        rows.emplace_back("ensemble", ours);
        if (options.baselines_csv) {
            for (auto& row : read_baselines_csv(*options.baselines_csv)) {
                rows.push_back(std::move(row));
            }
        }

        out << emit_report(rows, ReportFormat::Markdown);
        {
            std::ofstream csv(config.output_dir / "report.csv");
            csv << emit_report(rows, ReportFormat::Csv);
        }

        if (options.leaderboard_csv) {
            auto entries = read_leaderboard_csv(*options.leaderboard_csv);
            out << '\n' << emit_leaderboard(entries);
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

int cmd_suggest_mask(const RunConfig& config, std::ostream& out, std::ostream& err) {
    try {
        Dataset dataset = load_dataset(config.dataset, config.split);
        if (!dataset.labeled()) {
            throw ConfigError("suggest-mask needs a labeled dataset to weigh modes");
        }
        std::vector<ModeRun> runs;
        for (const auto& pathway : config.pathways) {
            auto path = mode_file_path(config, pathway.mode_id);
            if (!std::filesystem::exists(path)) {
                throw ConfigError("missing mode file for mode " +
                                  std::to_string(pathway.mode_id) + ": " + path.string());
            }
            runs.push_back(summarize_mode(pathway.mode_id, read_mode_file(path), dataset));
        }
        auto picked = suggest_mask(runs);
        out << "suggested mask = [";
        for (size_t i = 0; i < config.pathways.size(); ++i) {
            bool on = std::find(picked.begin(), picked.end(), config.pathways[i].mode_id) !=
                      picked.end();
            out << (i ? "," : "") << (on ? 1 : 0);
        }
        out << "]\n";
        for (const auto& run : runs) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.3f", mode_weight(run));
            out << "mode " << run.mode_id << ": weight " << buf << '\n';
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

}  // namespace vqaens
