#include "vqaens/backend.hpp"

#include <chrono>
#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "test_util.hpp"
#include "vqaens/prompt.hpp"

using namespace vqaens;

namespace {

BackendRequest make_request(const std::string& backend_id, const std::string& prompt) {
    BackendRequest r;
    r.backend_id = backend_id;
    r.prompt = prompt;
    r.media = "v.mp4";
    return r;
}

// Gateway tuned for tests: no real backoff sleeps.
BackendGateway make_fast_gateway(GatewayOptions options = {}) {
    options.retry.base_delay = std::chrono::milliseconds(0);
    return BackendGateway(options);
}

}  // namespace

TEST_CASE("cache_key is stable and sensitive to every field") {
    BackendRequest base = make_request("b", "hello");
    std::string key = cache_key(base);
    CHECK(key == cache_key(base));
    CHECK(key.size() == 64);  // sha-256 hex

    auto changed = [&](auto mutate) {
        BackendRequest r = base;
        mutate(r);
        return cache_key(r);
    };
    std::set<std::string> keys{key};
    CHECK(keys.insert(changed([](auto& r) { r.backend_id = "c"; })).second);
    CHECK(keys.insert(changed([](auto& r) { r.prompt = "hello!"; })).second);
    CHECK(keys.insert(changed([](auto& r) { r.media = "w.mp4"; })).second);
    CHECK(keys.insert(changed([](auto& r) { r.media = std::nullopt; })).second);
    CHECK(keys.insert(changed([](auto& r) { r.temperature = 0.5; })).second);
    CHECK(keys.insert(changed([](auto& r) { r.max_output_tokens = 2048; })).second);
}

TEST_CASE("mock behavior table: first matching pattern wins") {
    std::vector<MockRule> rules;
    rules.push_back({"Q1", nlohmann::ordered_json{{"answer", "yes"}}, std::nullopt, 0, false});
    rules.push_back({"Q", nlohmann::ordered_json{{"answer", "generic"}}, std::nullopt, 0, false});
    MockBackend mock(1, std::move(rules));

    CHECK(mock.generate(make_request("m", "please answer Q1 now")) == "{\"answer\":\"yes\"}");
    CHECK(mock.generate(make_request("m", "please answer Q2 now")) ==
          "{\"answer\":\"generic\"}");
    CHECK(mock.calls() == 2);
}

TEST_CASE("mock replies are a pure function of seed and prompt") {
    MockBackend mock(42);
    BackendRequest req = make_request("m", "some unmatched prompt");
    std::string first = mock.generate(req);
    for (int i = 0; i < 99; ++i) CHECK(mock.generate(req) == first);
    CHECK(mock.calls() == 100);

    MockBackend other_seed(43);
    CHECK(other_seed.generate(req) != first);

    // replies are schema-valid JSON honoring the prompt's format block
    std::string prompt = "Do it.\n" + render_format_block(CotFieldSet::standard());
    auto reply = nlohmann::json::parse(MockBackend(7).generate(make_request("m", prompt)));
    CHECK(reply.contains("reason"));
    CHECK(reply.contains("answer"));
    CHECK(reply["confidence"].is_number());
    double conf = reply["confidence"].get<double>();
    CHECK(conf >= 0.0);
    CHECK(conf <= 1.0);
}

TEST_CASE("invoke: unknown backend and invalid requests are config errors") {
    auto gateway = make_fast_gateway();
    gateway.register_backend("m", std::make_unique<MockBackend>(1));
    CHECK_THROWS_AS(gateway.invoke(make_request("nope", "hi")), ConfigError);
    CHECK_THROWS_AS(gateway.invoke(make_request("m", "")), ConfigError);
    BackendRequest bad_temp = make_request("m", "hi");
    bad_temp.temperature = -1;
    CHECK_THROWS_AS(gateway.invoke(bad_temp), ConfigError);
}

TEST_CASE("invoke retries transient failures: fail twice then succeed") {
    std::vector<MockRule> rules;
    rules.push_back({"flaky", nlohmann::ordered_json{{"answer", "ok"}}, std::nullopt,
                     /*fail_times=*/2, false});
    auto gateway = make_fast_gateway();
    gateway.register_backend("m", std::make_unique<MockBackend>(1, std::move(rules)));

    BackendReply reply = gateway.invoke(make_request("m", "flaky question"));
    CHECK(reply.attempt_count == 3);
    CHECK_FALSE(reply.from_cache);
    CHECK(reply.raw_text == "{\"answer\":\"ok\"}");
}

TEST_CASE("invoke surfaces exhausted retries with the last cause") {
    std::vector<MockRule> rules;
    rules.push_back({"", std::nullopt, std::nullopt, 0, /*fail_always=*/true});
    auto gateway = make_fast_gateway();
    gateway.register_backend("m", std::make_unique<MockBackend>(1, std::move(rules)));

    try {
        gateway.invoke(make_request("m", "anything"));
        FAIL_CHECK("expected TransportError");
    } catch (const TransportError& e) {
        CHECK(e.attempts == 3);
        CHECK_FALSE(e.last_cause.empty());
        CHECK(std::string(e.what()).find("after 3 attempts") != std::string::npos);
    }
    auto* mock = dynamic_cast<MockBackend*>(gateway.find_backend("m"));
    REQUIRE(mock != nullptr);
    CHECK(mock->calls() == 3);
}

TEST_CASE("cache: identical request is served from disk, across restarts") {
    testutil::TempDir tmp;
    GatewayOptions options;
    options.cache_dir = tmp.path() / "cache";
    BackendRequest req = make_request("m", "cache me");

    std::string first_text;
    {
        auto gateway = make_fast_gateway(options);
        gateway.register_backend("m", std::make_unique<MockBackend>(5));
        BackendReply fresh = gateway.invoke(req);
        CHECK_FALSE(fresh.from_cache);
        first_text = fresh.raw_text;

        BackendReply again = gateway.invoke(req);
        CHECK(again.from_cache);
        CHECK(again.attempt_count == 1);
        CHECK(again.raw_text == first_text);
        auto* mock = dynamic_cast<MockBackend*>(gateway.find_backend("m"));
        CHECK(mock->calls() == 1);  // second hit never reached the backend
    }

    // fresh gateway, same cache dir: survives a process restart
    auto gateway = make_fast_gateway(options);
    gateway.register_backend("m", std::make_unique<MockBackend>(5));
    BackendReply warm = gateway.invoke(req);
    CHECK(warm.from_cache);
    CHECK(warm.raw_text == first_text);
    auto* mock = dynamic_cast<MockBackend*>(gateway.find_backend("m"));
    CHECK(mock->calls() == 0);

    // layout: <cache_dir>/<backend_id>/<first-2-hex>/<digest>.json
    std::string key = cache_key(req);
    auto path = *options.cache_dir / "m" / key.substr(0, 2) / (key + ".json");
    CHECK(std::filesystem::exists(path));
    auto entry = nlohmann::json::parse(testutil::read_file(path));
    CHECK(entry["raw_text"] == first_text);
    CHECK(entry["request"]["prompt"] == "cache me");
    CHECK(entry.contains("timestamp"));
    CHECK(entry.contains("attempts"));
}

TEST_CASE("fan_out: empty batch, ordering, and embedded per-slot errors") {
    auto gateway = make_fast_gateway();
    gateway.register_backend("m", std::make_unique<MockBackend>(9));

    CHECK(gateway.fan_out({}, 4).empty());
    CHECK_THROWS_AS(gateway.fan_out({}, 0), ConfigError);

    std::vector<MockRule> rules;
    for (int i = 0; i < 7; ++i) {
        rules.push_back({"prompt " + std::to_string(i),
                         nlohmann::ordered_json{{"answer", "reply " + std::to_string(i)}},
                         std::nullopt, 0, false});
    }
    auto gateway2 = make_fast_gateway();
    gateway2.register_backend("m", std::make_unique<MockBackend>(9, std::move(rules)));
    std::vector<BackendRequest> requests;
    for (int i = 0; i < 7; ++i) requests.push_back(make_request("m", "prompt " + std::to_string(i)));
    auto replies = gateway2.fan_out(requests, 7);
    REQUIRE(replies.size() == 7);
    for (int i = 0; i < 7; ++i) {
        REQUIRE(replies[static_cast<size_t>(i)].ok());
        CHECK(replies[static_cast<size_t>(i)].reply->raw_text ==
              "{\"answer\":\"reply " + std::to_string(i) + "\"}");
    }

    // slot 3 forced to fail: the others still succeed
    std::vector<MockRule> fail_rules;
    fail_rules.push_back({"prompt 3", std::nullopt, std::nullopt, 0, /*fail_always=*/true});
    auto gateway3 = make_fast_gateway();
    gateway3.register_backend("m", std::make_unique<MockBackend>(9, std::move(fail_rules)));
    std::vector<BackendRequest> five;
    for (int i = 0; i < 5; ++i) five.push_back(make_request("m", "prompt " + std::to_string(i)));
    auto partial = gateway3.fan_out(five, 3);
    REQUIRE(partial.size() == 5);
    for (int i = 0; i < 5; ++i) {
        if (i == 3) {
            CHECK_FALSE(partial[static_cast<size_t>(i)].ok());
            CHECK_FALSE(partial[static_cast<size_t>(i)].error.empty());
        } else {
            CHECK(partial[static_cast<size_t>(i)].ok());
        }
    }
}

TEST_CASE("fan_out equals sequential invocation, regardless of parallelism") {
    for (int max_parallel : {1, 2, 7}) {
        auto parallel_gw = make_fast_gateway();
        parallel_gw.register_backend("m", std::make_unique<MockBackend>(33));
        auto serial_gw = make_fast_gateway();
        serial_gw.register_backend("m", std::make_unique<MockBackend>(33));

        std::vector<BackendRequest> requests;
        for (int i = 0; i < 20; ++i) {
            requests.push_back(make_request("m", "item " + std::to_string(i)));
        }
        auto fanned = parallel_gw.fan_out(requests, max_parallel);
        REQUIRE(fanned.size() == requests.size());
        for (size_t i = 0; i < requests.size(); ++i) {
            BackendReply serial = serial_gw.invoke(requests[i]);
            REQUIRE(fanned[i].ok());
            CHECK(fanned[i].reply->raw_text == serial.raw_text);
        }
    }
}

TEST_CASE("fan_out never exceeds max_parallel in flight") {
    auto gateway = make_fast_gateway();
    auto mock = std::make_unique<MockBackend>(3);
    mock->set_artificial_latency(std::chrono::milliseconds(2));
    MockBackend* probe = mock.get();
    gateway.register_backend("m", std::move(mock));

    std::vector<BackendRequest> requests;
    for (int i = 0; i < 16; ++i) requests.push_back(make_request("m", "r" + std::to_string(i)));
    gateway.fan_out(requests, 4);
    CHECK(probe->max_in_flight() <= 4);
    CHECK(probe->max_in_flight() >= 1);
    CHECK(probe->calls() == 16);
}

TEST_CASE("token bucket spaces calls out") {
    auto gateway = make_fast_gateway();
    gateway.register_backend("m", std::make_unique<MockBackend>(2),
                             /*requests_per_second=*/200.0);
    std::vector<BackendRequest> requests;
    for (int i = 0; i < 6; ++i) requests.push_back(make_request("m", "rl " + std::to_string(i)));
    auto start = std::chrono::steady_clock::now();
    auto replies = gateway.fan_out(requests, 6);
    auto elapsed = std::chrono::steady_clock::now() - start;
    for (const auto& r : replies) CHECK(r.ok());
    // 6 calls at 200/s: at least ~25ms of enforced spacing
    CHECK(std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count() >= 20);
}

TEST_CASE("http backend: body template substitution") {
    HttpBackendConfig config;
    config.url = "http://127.0.0.1:1/v1/chat";
    HttpBackend backend(config);

    BackendRequest req = make_request("h", "say hi");
    req.temperature = 0.25;
    req.max_output_tokens = 64;
    auto body = backend.render_body(req);
    CHECK(body["messages"][0]["content"] == "say hi");
    CHECK(body["media"] == "v.mp4");
    CHECK(body["temperature"] == 0.25);
    CHECK(body["max_output_tokens"] == 64);
}

TEST_CASE("http backend against a local server") {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string seen_auth;
    server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
        int n = hits.fetch_add(1) + 1;
        auto it = req.headers.find("Authorization");
        if (it != req.headers.end()) seen_auth = it->second;
        if (n <= 2) {
            res.status = 500;
            res.set_content("boom", "text/plain");
            return;
        }
        auto body = nlohmann::json::parse(req.body);
        std::string prompt = body["messages"][0]["content"];
        nlohmann::json reply = {
            {"choices", {{{"message", {{"content", "echo: " + prompt}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    server.Get("/missing", [](const httplib::Request&, httplib::Response& res) {
        res.status = 404;
    });

    int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    setenv("VQAENS_TEST_KEY", "sekrit", 1);
    HttpBackendConfig config;
    config.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
    config.auth_env = "VQAENS_TEST_KEY";

    auto gateway = make_fast_gateway();
    gateway.register_backend("h", std::make_unique<HttpBackend>(config));

    BackendReply reply = gateway.invoke(make_request("h", "ping"));
    CHECK(reply.attempt_count == 3);  // two 500s were retried
    CHECK(reply.raw_text == "echo: ping");
    CHECK(seen_auth == "Bearer sekrit");

    // 404 is permanent: no retries
    HttpBackendConfig missing = config;
    missing.url = "http://127.0.0.1:" + std::to_string(port) + "/missing";
    gateway.register_backend("h404", std::make_unique<HttpBackend>(missing));
    BackendRequest get_req = make_request("h404", "x");
    try {
        gateway.invoke(get_req);
        FAIL_CHECK("expected TransportError");
    } catch (const TransportError& e) {
        CHECK(e.attempts == 1);
    }

    // missing auth env is a config error before any network traffic
    unsetenv("VQAENS_TEST_KEY");
    CHECK_THROWS_AS(gateway.invoke(make_request("h", "ping2")), ConfigError);

    server.stop();
    server_thread.join();
}
