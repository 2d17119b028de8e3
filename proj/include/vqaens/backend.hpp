#pragma once

// Uniform gateway to model backends: a deterministic mock for offline runs,
// a generic HTTP chat adapter, retries with jittered backoff, a persistent
// content-addressed response cache, and ordered parallel fan-out.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqaens/core.hpp"

namespace vqaens {

// Bad configuration or misuse (unknown backend, invalid request).
struct ConfigError : Error {
    using Error::Error;
};

// Retryable failure of a single attempt (timeout, 5xx, injected fault).
struct TransientError : Error {
    using Error::Error;
};

// Non-retryable backend failure (4xx other than 429, bad response shape).
struct PermanentError : Error {
    using Error::Error;
};

// All attempts failed; carries the last cause.
struct TransportError : Error {
    TransportError(const std::string& msg, std::string last_cause, int attempts)
        : Error(msg), last_cause(std::move(last_cause)), attempts(attempts) {}
    std::string last_cause;
    int attempts = 0;
};

// Generation parameters applied to every request a caller builds for one
// backend (the mock ignores them, but they are part of the cache key).
struct GenerationParams {
    double temperature = 0.0;   // >= 0
    int max_output_tokens = 1024;  // > 0
};

struct BackendRequest {
    std::string backend_id;
    std::string prompt;                  // non-empty
    std::optional<std::string> media;    // opaque reference, passed through
    double temperature = 0.0;            // >= 0
    int max_output_tokens = 1024;        // > 0

    void apply(const GenerationParams& params) {
        temperature = params.temperature;
        max_output_tokens = params.max_output_tokens;
    }
};

struct BackendReply {
    std::string raw_text;
    std::int64_t latency_ms = 0;
    bool from_cache = false;  // implies attempt_count == 1
    int attempt_count = 1;
};

// One fan-out slot: either a reply or the error that consumed all retries.
struct SlotResult {
    std::optional<BackendReply> reply;
    std::string error;

    bool ok() const { return reply.has_value(); }
};

/// Hex digest identifying a request for the cache: any change to backend_id,
/// prompt, media or generation params changes the key.
std::string cache_key(const BackendRequest& request);

// A raw backend adapter: one attempt, no retries, no cache. Implementations
// must be safe for concurrent generate() calls.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string generate(const BackendRequest& request) = 0;
};

// One behavior-table entry for the mock: first matching pattern (substring
// of the prompt) wins. `fail_times` injects that many transient failures
// before the entry starts answering.
struct MockRule {
    std::string pattern;
    std::optional<nlohmann::ordered_json> reply;  // dumped as the raw text
    std::optional<std::string> reply_text;        // verbatim raw text
    int fail_times = 0;
    bool fail_always = false;
};

/// Deterministic test backend. Replies are a pure function of
/// (seed, prompt): rule replies verbatim, unmatched prompts get a
/// schema-valid JSON object whose keys come from the prompt's format block.
/// Instrumented with call and concurrency counters.
class MockBackend : public Backend {
public:
    explicit MockBackend(std::uint64_t seed, std::vector<MockRule> rules = {});

    std::string generate(const BackendRequest& request) override;

    // Instrumentation for tests.
    int calls() const { return calls_.load(); }
    int in_flight() const { return in_flight_.load(); }
    int max_in_flight() const { return max_in_flight_.load(); }
    void set_artificial_latency(std::chrono::milliseconds d) { latency_ = d; }

    static std::vector<MockRule> rules_from_json(const nlohmann::json& spec);

private:
    std::uint64_t seed_;
    std::vector<MockRule> rules_;
    std::vector<std::unique_ptr<std::atomic<int>>> rule_failures_;
    std::chrono::milliseconds latency_{0};

    std::atomic<int> calls_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
};

struct HttpBackendConfig {
    std::string url;                 // http://host[:port][/path]
    std::string auth_env;            // env var holding the key; empty -> none
    std::string auth_header = "Authorization";
    std::string auth_prefix = "Bearer ";
    // JSON body; string values may embed ${prompt} and ${media}, and the
    // exact strings "${temperature}" / "${max_tokens}" become numbers.
    nlohmann::ordered_json body_template;
    std::string response_path = "/choices/0/message/content";  // JSON pointer
    int timeout_ms = 30000;
    std::map<std::string, std::string> extra_headers;

    static nlohmann::ordered_json default_body_template();
};

/// Generic JSON chat endpoint adapter. Connection failures, timeouts, 429
/// and 5xx are transient; other non-2xx statuses are permanent.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);
    std::string generate(const BackendRequest& request) override;

    // Exposed for tests.
    nlohmann::ordered_json render_body(const BackendRequest& request) const;

private:
    HttpBackendConfig config_;
    std::string host_;  // scheme://host:port
    std::string path_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{500};  // grows as base * 2^attempt
    double multiplier = 2.0;
    bool full_jitter = true;
};

struct GatewayOptions {
    std::optional<std::filesystem::path> cache_dir;  // unset -> cache off
    RetryPolicy retry;
    std::uint64_t seed = 0;  // jitter RNG seed
};

/// Thread-safe front door for all backend calls. Callers never manage
/// threads themselves: fan_out is the one concurrency entry point.
class BackendGateway {
public:
    explicit BackendGateway(GatewayOptions options = {});
    ~BackendGateway();
    BackendGateway(const BackendGateway&) = delete;
    BackendGateway& operator=(const BackendGateway&) = delete;

    /// `requests_per_second`: optional serialized token-bucket rate limit.
    void register_backend(const std::string& id, std::unique_ptr<Backend> backend,
                          std::optional<double> requests_per_second = std::nullopt);
    bool has_backend(const std::string& id) const;
    /// Raw adapter access (instrumentation in tests). Null when unknown.
    Backend* find_backend(const std::string& id) const;

    /// One request: cache lookup first (when enabled), then up to
    /// retry.max_attempts attempts with jittered exponential backoff.
    /// Throws ConfigError (unknown backend, invalid request) or
    /// TransportError (attempts exhausted / permanent failure).
    BackendReply invoke(const BackendRequest& request);

    /// Runs all requests with at most `max_parallel` in flight, results
    /// positionally aligned with the input. Per-slot failures are embedded;
    /// the batch itself never throws (beyond max_parallel validation).
    std::vector<SlotResult> fan_out(std::span<const BackendRequest> requests, int max_parallel);

    const GatewayOptions& options() const { return options_; }

private:
    struct Entry;

    Entry& entry_for(const std::string& id);
    std::optional<BackendReply> cache_lookup(const BackendRequest& request) const;
    void cache_store(const BackendRequest& request, const std::string& raw_text, int attempts);
    std::chrono::milliseconds backoff_delay(int attempt_index);

    GatewayOptions options_;
    mutable std::mutex registry_mutex_;
    std::map<std::string, std::unique_ptr<Entry>> backends_;
    std::mutex rng_mutex_;
    std::uint64_t rng_state_;
};

}  // namespace vqaens
