// vqaens command-line entry point: run / ensemble / report / suggest-mask.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vqaens/cli.hpp"

namespace {

std::vector<int> parse_mode_list(const std::string& text) {
    std::vector<int> out;
    if (text.empty()) return out;
    std::istringstream in(text);
    std::string token;
    while (std::getline(in, token, ',')) {
        try {
            size_t used = 0;
            int id = std::stoi(token, &used);
            if (used != token.size()) throw std::invalid_argument(token);
            out.push_back(id);
        } catch (const std::exception&) {
            throw vqaens::ConfigError("invalid mode id '" + token + "' in --modes");
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt-ensemble orchestration for open-ended video question answering"};
    app.require_subcommand(1);

    std::string config_path;
    std::string cache_dir_override;
    int max_parallel_override = 0;
    long long seed_override = -1;
    app.add_option("--config", config_path, "Path to the run config (TOML)")->required();
    app.add_option("--cache-dir", cache_dir_override, "Override the response cache directory");
    app.add_option("--max-parallel", max_parallel_override, "Override request parallelism");
    app.add_option("--seed", seed_override, "Override the run seed");

    auto* run = app.add_subcommand("run", "Execute pathways over the dataset");
    std::string modes_text;
    run->add_option("--modes", modes_text, "Comma-separated mode ids (default: all)");

    app.add_subcommand("ensemble", "Integrate mode answers into final decisions");

    auto* report = app.add_subcommand("report", "Print the per-category accuracy table");
    std::string baselines_path;
    std::string leaderboard_path;
    report->add_option("--baselines", baselines_path,
                       "CSV of baseline rows (label + 11 category values)");
    report->add_option("--leaderboard", leaderboard_path, "CSV of team,accuracy entries");

    app.add_subcommand("suggest-mask", "Suggest an activation mask (high weight, low overlap)");

    CLI11_PARSE(app, argc, argv);

    try {
        vqaens::RunConfig config = vqaens::RunConfig::load(config_path);
        if (!cache_dir_override.empty()) config.cache_dir = cache_dir_override;
        if (max_parallel_override > 0) config.max_parallel = max_parallel_override;
        if (seed_override >= 0) config.seed = static_cast<std::uint64_t>(seed_override);

        if (app.got_subcommand("run")) {
            return vqaens::cmd_run(config, parse_mode_list(modes_text), std::cout, std::cerr);
        }
        if (app.got_subcommand("ensemble")) {
            return vqaens::cmd_ensemble(config, std::cout, std::cerr);
        }
        if (app.got_subcommand("report")) {
            vqaens::ReportOptions options;
            if (!baselines_path.empty()) options.baselines_csv = baselines_path;
            if (!leaderboard_path.empty()) options.leaderboard_csv = leaderboard_path;
            return vqaens::cmd_report(config, options, std::cout, std::cerr);
        }
        if (app.got_subcommand("suggest-mask")) {
            return vqaens::cmd_suggest_mask(config, std::cout, std::cerr);
        }
    } catch (const vqaens::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return vqaens::kExitConfig;
    } catch (const vqaens::TransportError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return vqaens::kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
