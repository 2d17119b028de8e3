#include "vqaens/backend.hpp"

#include <array>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "vqaens/prompt.hpp"

// cpp-httplib is used by the generic HTTP adapter only.
#include "httplib.h"

namespace vqaens {

namespace {

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

void validate_request(const BackendRequest& request) {
    if (request.prompt.empty()) throw ConfigError("request prompt is empty");
    if (request.temperature < 0) throw ConfigError("temperature must be >= 0");
    if (request.max_output_tokens <= 0) throw ConfigError("max_output_tokens must be > 0");
}

// FNV-1a, the mock's only source of "randomness": stable across platforms.
std::uint64_t fnv1a(std::uint64_t h, std::string_view data) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t mock_hash(std::uint64_t seed, std::string_view prompt, std::string_view key) {
    std::uint64_t h = 14695981039346656037ULL;
    h = fnv1a(h, std::string_view(reinterpret_cast<const char*>(&seed), sizeof(seed)));
    h = fnv1a(h, prompt);
    h = fnv1a(h, "\x1f");
    h = fnv1a(h, key);
    return h;
}

const std::array<std::string_view, 16> kMockAnswers = {
    "a man walks across the room",
    "the woman picks up the red cup",
    "no, that action never happens",
    "yes, it happens near the end",
    "two people are talking at a table",
    "the dog runs after the ball",
    "the event happens before the door opens",
    "three",
    "the car turns left at the corner",
    "she smiles and waves",
    "the scene takes place outdoors",
    "nothing unusual happens",
    "the glass falls off the table",
    "he reads a book by the window",
    "the children play in the yard",
    "it is raining during the whole clip",
};

const std::array<std::string_view, 8> kMockNotes = {
    "the clip opens on a wide shot of the scene",
    "a single subject dominates the frame",
    "several quick actions follow one another",
    "the lighting changes midway through",
    "the camera holds still for most of the clip",
    "background activity continues throughout",
    "one object is handled repeatedly",
    "the final seconds show a clear reaction",
};

}  // namespace

std::string cache_key(const BackendRequest& request) {
    nlohmann::ordered_json fingerprint;
    fingerprint["backend_id"] = request.backend_id;
    fingerprint["prompt"] = request.prompt;
    fingerprint["media"] = request.media ? nlohmann::json(*request.media) : nlohmann::json();
    fingerprint["temperature"] = request.temperature;
    fingerprint["max_output_tokens"] = request.max_output_tokens;
    return sha256_hex(fingerprint.dump());
}

// ---------------------------------------------------------------------------
// MockBackend

MockBackend::MockBackend(std::uint64_t seed, std::vector<MockRule> rules)
    : seed_(seed), rules_(std::move(rules)) {
    rule_failures_.reserve(rules_.size());
    for (size_t i = 0; i < rules_.size(); ++i) {
        rule_failures_.push_back(std::make_unique<std::atomic<int>>(0));
    }
}

std::string MockBackend::generate(const BackendRequest& request) {
    calls_.fetch_add(1);
    int now = in_flight_.fetch_add(1) + 1;
    int seen = max_in_flight_.load();
    while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
    }
    struct Guard {
        std::atomic<int>& gauge;
        ~Guard() { gauge.fetch_sub(1); }
    } guard{in_flight_};

    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

    for (size_t i = 0; i < rules_.size(); ++i) {
        const MockRule& rule = rules_[i];
        if (request.prompt.find(rule.pattern) == std::string::npos) continue;
        if (rule.fail_always) throw TransientError("mock: injected failure (always)");
        if (rule.fail_times > 0) {
            int prior = rule_failures_[i]->fetch_add(1);
            if (prior < rule.fail_times) {
                throw TransientError("mock: injected failure " + std::to_string(prior + 1) +
                                     "/" + std::to_string(rule.fail_times));
            }
        }
        if (rule.reply_text) return *rule.reply_text;
        if (rule.reply) return rule.reply->dump();
        break;  // pattern-only rule: fall through to the synthesized reply
    }

    // Synthesize a schema-valid reply for the keys the prompt asked for.
    std::vector<std::string> keys = parse_format_block_keys(request.prompt);
    if (keys.empty()) keys.push_back("answer");
    nlohmann::ordered_json reply;
    for (const auto& key : keys) {
        std::uint64_t h = mock_hash(seed_, request.prompt, key);
        if (key == "confidence") {
            reply[key] = static_cast<double>((h >> 8) % 101) / 100.0;
        } else if (key == "chosen_index") {
            reply[key] = static_cast<int>(h % 5);
        } else if (key == "answer" || key == "final_answer") {
            reply[key] = std::string(kMockAnswers[h % kMockAnswers.size()]);
        } else {
            reply[key] = std::string(kMockNotes[h % kMockNotes.size()]);
        }
    }
    return reply.dump();
}

std::vector<MockRule> MockBackend::rules_from_json(const nlohmann::json& spec) {
    if (!spec.is_array()) throw ConfigError("mock behavior spec must be a JSON array");
    std::vector<MockRule> rules;
    for (const auto& item : spec) {
        if (!item.is_object() || !item.contains("pattern")) {
            throw ConfigError("mock behavior entry needs a 'pattern' field");
        }
        MockRule rule;
        rule.pattern = item["pattern"].get<std::string>();
        if (item.contains("reply")) rule.reply = item["reply"].get<nlohmann::ordered_json>();
        if (item.contains("reply_text")) rule.reply_text = item["reply_text"].get<std::string>();
        if (item.contains("fail_times")) rule.fail_times = item["fail_times"].get<int>();
        if (item.contains("fail_always")) rule.fail_always = item["fail_always"].get<bool>();
        rules.push_back(std::move(rule));
    }
    return rules;
}

// ---------------------------------------------------------------------------
// HttpBackend

nlohmann::ordered_json HttpBackendConfig::default_body_template() {
    return nlohmann::ordered_json{
        {"messages", nlohmann::ordered_json::array(
                         {nlohmann::ordered_json{{"role", "user"}, {"content", "${prompt}"}}})},
        {"media", "${media}"},
        {"temperature", "${temperature}"},
        {"max_output_tokens", "${max_tokens}"},
    };
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.body_template.is_null() ||
        (config_.body_template.is_object() && config_.body_template.empty())) {
        config_.body_template = HttpBackendConfig::default_body_template();
    }
    // split scheme://host[:port] from the path
    size_t scheme = config_.url.find("://");
    if (scheme == std::string::npos) throw ConfigError("http backend url needs a scheme: " + config_.url);
    size_t path_start = config_.url.find('/', scheme + 3);
    if (path_start == std::string::npos) {
        host_ = config_.url;
        path_ = "/";
    } else {
        host_ = config_.url.substr(0, path_start);
        path_ = config_.url.substr(path_start);
    }
}

namespace {

void substitute_placeholders(nlohmann::ordered_json& node, const BackendRequest& request) {
    if (node.is_object() || node.is_array()) {
        for (auto& child : node) substitute_placeholders(child, request);
        return;
    }
    if (!node.is_string()) return;
    std::string s = node.get<std::string>();
    if (s == "${temperature}") {
        node = request.temperature;
        return;
    }
    if (s == "${max_tokens}") {
        node = request.max_output_tokens;
        return;
    }
    auto replace_all = [&s](std::string_view needle, const std::string& value) {
        size_t pos = 0;
        while ((pos = s.find(needle, pos)) != std::string::npos) {
            s.replace(pos, needle.size(), value);
            pos += value.size();
        }
    };
    replace_all("${prompt}", request.prompt);
    replace_all("${media}", request.media.value_or(""));
    node = s;
}

}  // namespace

nlohmann::ordered_json HttpBackend::render_body(const BackendRequest& request) const {
    nlohmann::ordered_json body = config_.body_template;
    substitute_placeholders(body, request);
    return body;
}

std::string HttpBackend::generate(const BackendRequest& request) {
    httplib::Client client(host_);
    client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
    client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);

    httplib::Headers headers;
    for (const auto& [k, v] : config_.extra_headers) headers.emplace(k, v);
    if (!config_.auth_env.empty()) {
        const char* key = std::getenv(config_.auth_env.c_str());
        if (!key || !*key) {
            throw ConfigError("environment variable '" + config_.auth_env +
                              "' is not set (needed for backend auth)");
        }
        headers.emplace(config_.auth_header, config_.auth_prefix + key);
    }

    std::string body = render_body(request).dump();
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
        throw TransientError("http: connection failed (" + httplib::to_string(res.error()) + ")");
    }
    if (res->status == 429 || res->status >= 500) {
        throw TransientError("http: status " + std::to_string(res->status));
    }
    if (res->status < 200 || res->status >= 300) {
        throw PermanentError("http: status " + std::to_string(res->status) + ": " + res->body);
    }

    try {
        auto parsed = nlohmann::json::parse(res->body);
        auto value = parsed.at(nlohmann::json::json_pointer(config_.response_path));
        if (value.is_string()) return value.get<std::string>();
        return value.dump();
    } catch (const nlohmann::json::exception& e) {
        throw PermanentError(std::string("http: cannot extract reply text: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// BackendGateway

namespace {

// Serialized token bucket: at most one stored token, so calls are spaced
// 1/rate apart. Callers block until a token is available.
class TokenBucket {
public:
    TokenBucket(double rate_per_sec)
        : rate_(rate_per_sec), capacity_(1.0), tokens_(capacity_),
          last_(std::chrono::steady_clock::now()) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        for (;;) {
            auto now = std::chrono::steady_clock::now();
            std::chrono::duration<double> elapsed = now - last_;
            last_ = now;
            tokens_ = std::min(capacity_, tokens_ + elapsed.count() * rate_);
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
        }
    }

private:
    std::mutex mutex_;
    double rate_;
    double capacity_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
};

}  // namespace

struct BackendGateway::Entry {
    std::unique_ptr<Backend> backend;
    std::unique_ptr<TokenBucket> limiter;
};

BackendGateway::BackendGateway(GatewayOptions options)
    : options_(std::move(options)), rng_state_(options_.seed * 2654435769ULL + 1) {
    if (rng_state_ == 0) rng_state_ = 0x9E3779B97F4A7C15ULL;  // xorshift needs nonzero state
}

BackendGateway::~BackendGateway() = default;

void BackendGateway::register_backend(const std::string& id, std::unique_ptr<Backend> backend,
                                      std::optional<double> requests_per_second) {
    auto entry = std::make_unique<Entry>();
    entry->backend = std::move(backend);
    if (requests_per_second) {
        if (*requests_per_second <= 0) throw ConfigError("requests_per_second must be > 0");
        entry->limiter = std::make_unique<TokenBucket>(*requests_per_second);
    }
    std::lock_guard lock(registry_mutex_);
    backends_[id] = std::move(entry);
}

bool BackendGateway::has_backend(const std::string& id) const {
    std::lock_guard lock(registry_mutex_);
    return backends_.count(id) > 0;
}

Backend* BackendGateway::find_backend(const std::string& id) const {
    std::lock_guard lock(registry_mutex_);
    auto it = backends_.find(id);
    return it == backends_.end() ? nullptr : it->second->backend.get();
}

BackendGateway::Entry& BackendGateway::entry_for(const std::string& id) {
    std::lock_guard lock(registry_mutex_);
    auto it = backends_.find(id);
    if (it == backends_.end()) throw ConfigError("unknown backend '" + id + "'");
    return *it->second;
}

std::optional<BackendReply> BackendGateway::cache_lookup(const BackendRequest& request) const {
    if (!options_.cache_dir) return std::nullopt;
    std::string key = cache_key(request);
    auto path = *options_.cache_dir / request.backend_id / key.substr(0, 2) / (key + ".json");
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        nlohmann::json entry = nlohmann::json::parse(in);
        BackendReply reply;
        reply.raw_text = entry.at("raw_text").get<std::string>();
        reply.latency_ms = 0;
        reply.from_cache = true;
        reply.attempt_count = 1;
        return reply;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;  // corrupt entry: treat as a miss, it gets rewritten
    }
}

void BackendGateway::cache_store(const BackendRequest& request, const std::string& raw_text,
                                 int attempts) {
    if (!options_.cache_dir) return;
    std::string key = cache_key(request);
    auto dir = *options_.cache_dir / request.backend_id / key.substr(0, 2);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) return;

    nlohmann::ordered_json entry;
    entry["request"] = {
        {"backend_id", request.backend_id},
        {"prompt", request.prompt},
        {"media", request.media ? nlohmann::json(*request.media) : nlohmann::json()},
        {"temperature", request.temperature},
        {"max_output_tokens", request.max_output_tokens},
    };
    entry["raw_text"] = raw_text;
    entry["timestamp"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    entry["attempts"] = attempts;

    // write-temp-then-rename keeps concurrent readers away from partial files
    std::ostringstream tmp_name;
    tmp_name << key << ".tmp." << std::this_thread::get_id();
    auto tmp = dir / tmp_name.str();
    {
        std::ofstream out(tmp);
        out << entry.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, dir / (key + ".json"), ec);
    if (ec) std::filesystem::remove(tmp, ec);
}

std::chrono::milliseconds BackendGateway::backoff_delay(int attempt_index) {
    double scale = 1.0;
    for (int i = 0; i < attempt_index; ++i) scale *= options_.retry.multiplier;
    auto full = std::chrono::duration<double, std::milli>(
        static_cast<double>(options_.retry.base_delay.count()) * scale);
    if (!options_.retry.full_jitter) {
        return std::chrono::duration_cast<std::chrono::milliseconds>(full);
    }
    // full jitter: uniform in [0, full]
    std::uint64_t r;
    {
        std::lock_guard lock(rng_mutex_);
        rng_state_ ^= rng_state_ << 13;
        rng_state_ ^= rng_state_ >> 7;
        rng_state_ ^= rng_state_ << 17;
        r = rng_state_;
    }
    double fraction = static_cast<double>(r >> 11) / static_cast<double>(1ULL << 53);
    return std::chrono::duration_cast<std::chrono::milliseconds>(full * fraction);
}

BackendReply BackendGateway::invoke(const BackendRequest& request) {
    validate_request(request);
    Entry& entry = entry_for(request.backend_id);

    if (auto cached = cache_lookup(request)) return *cached;

    std::string last_cause;
    const int max_attempts = std::max(1, options_.retry.max_attempts);
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        if (entry.limiter) entry.limiter->acquire();
        auto start = std::chrono::steady_clock::now();
        try {
            std::string raw = entry.backend->generate(request);
            auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - start);
            BackendReply reply;
            reply.raw_text = std::move(raw);
            reply.latency_ms = elapsed.count();
            reply.from_cache = false;
            reply.attempt_count = attempt + 1;
            cache_store(request, reply.raw_text, reply.attempt_count);
            return reply;
        } catch (const TransientError& e) {
            last_cause = e.what();
            if (attempt + 1 < max_attempts) {
                auto delay = backoff_delay(attempt);
                if (delay.count() > 0) std::this_thread::sleep_for(delay);
            }
        } catch (const PermanentError& e) {
            throw TransportError("backend '" + request.backend_id + "' failed permanently: " +
                                     e.what(),
                                 e.what(), attempt + 1);
        }
    }
    throw TransportError("backend '" + request.backend_id + "' failed after " +
                             std::to_string(max_attempts) + " attempts: " + last_cause,
                         last_cause, max_attempts);
}

std::vector<SlotResult> BackendGateway::fan_out(std::span<const BackendRequest> requests,
                                                int max_parallel) {
    if (max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
    std::vector<SlotResult> results(requests.size());
    if (requests.empty()) return results;

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= requests.size()) return;
            try {
                results[i].reply = invoke(requests[i]);
            } catch (const std::exception& e) {
                results[i].error = e.what();
            }
        }
    };

    size_t n_workers = std::min<size_t>(static_cast<size_t>(max_parallel), requests.size());
    std::vector<std::thread> workers;
    workers.reserve(n_workers);
    for (size_t i = 0; i < n_workers; ++i) workers.emplace_back(worker);
    for (auto& t : workers) t.join();
    return results;
}

}  // namespace vqaens
