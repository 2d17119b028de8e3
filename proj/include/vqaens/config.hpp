#pragma once

// Run configuration: a TOML-style config file parsed into JSON, validated
// into a RunConfig, and factories for the gateway and template registry it
// describes.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqaens/backend.hpp"
#include "vqaens/core.hpp"
#include "vqaens/ensemble.hpp"
#include "vqaens/prompt.hpp"

namespace vqaens {

namespace toml_lite {

/// Parses a TOML-subset document into JSON: top-level and [section] /
/// [sub.section] key-value pairs, [[array.of.tables]], strings with basic
/// escapes, integers, floats, booleans, and single-line scalar arrays.
/// Errors name the line.
nlohmann::ordered_json parse(const std::string& text);

nlohmann::ordered_json parse_file(const std::filesystem::path& path);

}  // namespace toml_lite

struct BackendEntry {
    std::string kind;  // "mock" | "http"
    // mock
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> behavior_file;
    // http
    std::string url;
    std::string auth_env;
    std::string response_path = "/choices/0/message/content";
    std::string body_template;  // JSON text; empty -> adapter default
    int timeout_ms = 30000;
    // shared generation params
    double temperature = 0.0;
    int max_output_tokens = 1024;
    std::optional<double> requests_per_second;
};

struct EnsembleSettings {
    std::string method = "vote";  // "vote" | "judge"
    std::string judge_backend;
    std::vector<int> mask;  // empty -> all modes active; else aligned with pathways
    bool uniform_weights = false;
};

struct RunConfig {
    std::filesystem::path dataset;
    Split split = Split::Custom;
    std::optional<std::filesystem::path> cache_dir;
    std::filesystem::path output_dir;
    int max_parallel = 4;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> template_dir;

    std::map<std::string, BackendEntry> backends;
    std::vector<PathwayConfig> pathways;  // resolved, mode_ids unique
    EnsembleSettings ensemble;

    /// Loads and validates a config file. Relative paths resolve against the
    /// config file's directory, so a run is reproducible from the file alone.
    /// Throws ConfigError naming the offending field.
    static RunConfig load(const std::filesystem::path& path);

    /// Same, from already-parsed config data (tests).
    static RunConfig from_json(const nlohmann::ordered_json& doc,
                               const std::filesystem::path& base_dir);

    ActivationMask activation_mask() const;
    const PathwayConfig* pathway_by_mode(int mode_id) const;
};

/// Gateway with every configured backend registered (mock behavior files
/// loaded from disk).
std::unique_ptr<BackendGateway> make_gateway(const RunConfig& config);

/// Builtin templates plus any template_dir overrides.
TemplateRegistry make_template_registry(const RunConfig& config);

}  // namespace vqaens
