#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cooprag/gateway.hpp"
#include "cooprag/hash.hpp"

#include "support/synth.hpp"

using namespace cooprag;
using testsupport::ScratchDir;

namespace {

ChatRequest user_req(std::string content) {
    ChatRequest req;
    req.messages.push_back({ChatRole::User, std::move(content)});
    return req;
}

} // namespace

TEST_SUITE("gateway") {

TEST_CASE("chat requests are validated") {
    ChatRequest req = user_req("hello");
    CHECK_NOTHROW(req.validate());

    SUBCASE("no messages") {
        req.messages.clear();
        CHECK_THROWS_AS(req.validate(), InvariantViolation);
    }
    SUBCASE("empty content") {
        req.messages.push_back({ChatRole::User, ""});
        CHECK_THROWS_AS(req.validate(), InvariantViolation);
    }
    SUBCASE("must end with a user message") {
        req.messages.push_back({ChatRole::Assistant, "hi"});
        CHECK_THROWS_AS(req.validate(), InvariantViolation);
    }
    SUBCASE("negative temperature") {
        req.temperature = -0.1;
        CHECK_THROWS_AS(req.validate(), InvariantViolation);
    }
    SUBCASE("non-positive max_tokens") {
        req.max_tokens = 0;
        CHECK_THROWS_AS(req.validate(), InvariantViolation);
    }
}

TEST_CASE("request hashing covers roles and contents only") {
    const ChatRequest base = user_req("what is the question");

    ChatRequest same = base;
    same.temperature = 0.9;
    same.max_tokens = 17;
    same.model = "some-other-model";
    CHECK(request_hash(same) == request_hash(base));

    ChatRequest other_text = base;
    other_text.messages[0].content = "what is the answer";
    CHECK(request_hash(other_text) != request_hash(base));

    ChatRequest other_role = base;
    other_role.messages.insert(other_role.messages.begin(), {ChatRole::System, "sys"});
    ChatRequest as_user = base;
    as_user.messages.insert(as_user.messages.begin(), {ChatRole::User, "sys"});
    CHECK(request_hash(other_role) != request_hash(as_user));

    // Shifting a message boundary must not collide.
    ChatRequest split_a;
    split_a.messages = {{ChatRole::User, "ab"}, {ChatRole::User, "c"}};
    ChatRequest split_b;
    split_b.messages = {{ChatRole::User, "a"}, {ChatRole::User, "bc"}};
    CHECK(request_hash(split_a) != request_hash(split_b));

    CHECK(request_hash_hex(base) == to_hex(request_hash(base)));
    CHECK(request_hash_hex(base).size() == 16);
}

TEST_CASE("mock gateway answers from script, then map, then fixture files") {
    ScratchDir dir("gw_fixtures");
    const ChatRequest req = user_req("lookup me");
    MockChatGateway::write_fixture(dir.path(), req, "from file");

    MockChatGateway gw(dir.path());
    CHECK(gw.chat(req) == "from file");

    gw.add_fixture(req, "from map");
    CHECK(gw.chat(req) == "from map");

    gw.push_response("from script");
    CHECK(gw.chat(req) == "from script");
    // The scripted slot is consumed; the map takes over again.
    CHECK(gw.chat(req) == "from map");

    CHECK(gw.calls() == 4);
}

TEST_CASE("mock gateway failure injection and misses") {
    MockChatGateway gw;
    gw.push_failure("backend on fire");
    const ChatRequest req = user_req("anything");
    CHECK_THROWS_WITH_AS(gw.chat(req), "backend on fire", GatewayError);

    try {
        gw.chat(req);
        FAIL("expected ProviderUnavailable");
    } catch (const ProviderUnavailable& e) {
        CHECK(std::string(e.what()).find(request_hash_hex(req)) != std::string::npos);
    }

    // Invalid requests are rejected before consuming scripted responses.
    gw.push_response("never used");
    ChatRequest bad;
    CHECK_THROWS_AS(gw.chat(bad), InvariantViolation);
    CHECK(gw.chat(req) == "never used");
}

TEST_CASE("fixture writer round trips binary content") {
    ScratchDir dir("gw_write");
    const auto nested = dir.file("a/b");
    const ChatRequest req = user_req("payload");
    const std::string payload = "line one\nline two\n\ttabbed";
    MockChatGateway::write_fixture(nested, req, payload);

    std::ifstream in(nested / (request_hash_hex(req) + ".txt"), std::ios::binary);
    REQUIRE(in.good());
    std::string got((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(got == payload);

    MockChatGateway gw(nested);
    CHECK(gw.chat(req) == payload);
}

TEST_CASE("in-flight limiter bounds concurrency") {
    CHECK_THROWS_AS(InFlightLimiter(0), InvariantViolation);
    CHECK_THROWS_AS(InFlightLimiter(-3), InvariantViolation);

    InFlightLimiter limiter(2);
    CHECK(limiter.in_flight() == 0);
    {
        auto g1 = limiter.acquire();
        auto g2 = limiter.acquire();
        CHECK(limiter.in_flight() == 2);
    }
    CHECK(limiter.in_flight() == 0);
}

TEST_CASE("mock gateway honours a shared limiter under load") {
    MockChatGateway gw;
    for (int i = 0; i < 8; ++i) gw.push_response("ok");
    gw.set_limiter(std::make_shared<InFlightLimiter>(2));
    gw.set_delay_ms(15);

    std::vector<std::thread> workers;
    std::atomic<int> answered{0};
    for (int i = 0; i < 8; ++i) {
        workers.emplace_back([&gw, &answered] {
            if (gw.chat(user_req("ping")) == "ok") answered.fetch_add(1);
        });
    }
    for (auto& w : workers) w.join();

    CHECK(answered.load() == 8);
    CHECK(gw.calls() == 8);
    CHECK(gw.max_observed_in_flight() <= 2);
    CHECK(gw.max_observed_in_flight() >= 1);
}

TEST_CASE("http retry policy") {
    CHECK(HttpChatGateway::retryable_status(429));
    CHECK(HttpChatGateway::retryable_status(500));
    CHECK(HttpChatGateway::retryable_status(503));
    CHECK(HttpChatGateway::retryable_status(599));
    CHECK_FALSE(HttpChatGateway::retryable_status(200));
    CHECK_FALSE(HttpChatGateway::retryable_status(400));
    CHECK_FALSE(HttpChatGateway::retryable_status(404));
    CHECK_FALSE(HttpChatGateway::retryable_status(600));

    CHECK(HttpChatGateway::retry_delay_ms(0, 250) == 250);
    CHECK(HttpChatGateway::retry_delay_ms(1, 250) == 500);
    CHECK(HttpChatGateway::retry_delay_ms(2, 250) == 1000);
    CHECK(HttpChatGateway::retry_delay_ms(30, 250) == 60000);
    CHECK(HttpChatGateway::retry_delay_ms(3, 60001) == 60000);
    CHECK_THROWS_AS(HttpChatGateway::retry_delay_ms(-1, 250), InvariantViolation);
}

TEST_CASE("http request bodies carry the chat payload") {
    ChatRequest req;
    req.messages = {{ChatRole::System, "be terse"}, {ChatRole::User, "hi"}};
    req.temperature = 0.25;
    req.max_tokens = 77;

    const auto body = nlohmann::json::parse(HttpChatGateway::build_request_body(req, "fallback"));
    CHECK(body.at("model") == "fallback");
    CHECK(body.at("temperature").get<double>() == doctest::Approx(0.25));
    CHECK(body.at("max_tokens") == 77);
    REQUIRE(body.at("messages").size() == 2);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][0]["content"] == "be terse");
    CHECK(body["messages"][1]["role"] == "user");

    req.model = "explicit-model";
    const auto override_body =
        nlohmann::json::parse(HttpChatGateway::build_request_body(req, "fallback"));
    CHECK(override_body.at("model") == "explicit-model");
}

TEST_CASE("http gateway needs a credential before any network activity") {
    GatewayConfig cfg;
    cfg.base_url = "http://127.0.0.1:1";
    cfg.api_key_env = "COOPRAG_TEST_MISSING_KEY";
    unsetenv(cfg.api_key_env.c_str());
    CHECK_THROWS_AS(HttpChatGateway{cfg}, AuthError);

    setenv(cfg.api_key_env.c_str(), "", 1);
    CHECK_THROWS_AS(HttpChatGateway{cfg}, AuthError);
    unsetenv(cfg.api_key_env.c_str());
}

TEST_CASE("http gateway against a local backend") {
    setenv("COOPRAG_TEST_KEY", "sekrit", 1);

    httplib::Server server;
    std::atomic<int> hits{0};
    std::atomic<int> fail_first{0};
    std::string seen_auth;
    std::string seen_model;
    server.Post("/v1/chat/completions", [&](const httplib::Request& in, httplib::Response& out) {
        hits.fetch_add(1);
        seen_auth = in.get_header_value("Authorization");
        seen_model = nlohmann::json::parse(in.body).at("model").get<std::string>();
        if (fail_first.fetch_sub(1) > 0) {
            out.status = 503;
            out.set_content("overloaded", "text/plain");
            return;
        }
        const nlohmann::json reply{
            {"choices", {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}}};
        out.set_content(reply.dump(), "application/json");
    });
    server.Post("/v2/chat/completions", [](const httplib::Request&, httplib::Response& out) {
        out.set_content("{\"choices\":[]}", "application/json");
    });
    server.Post("/v3/chat/completions", [](const httplib::Request&, httplib::Response& out) {
        out.set_content("this is not json", "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread serving([&server] { server.listen_after_bind(); });
    server.wait_until_ready();

    // The gateway appends /chat/completions to the base URL.
    GatewayConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    cfg.model = "test-model";
    cfg.api_key_env = "COOPRAG_TEST_KEY";
    cfg.max_retries = 3;
    cfg.retry_base_delay_ms = 1;

    SUBCASE("retries through transient failures") {
        fail_first.store(2);
        HttpChatGateway gw(cfg);
        CHECK(gw.chat(user_req("ping")) == "pong");
        CHECK(hits.load() == 3);
        CHECK(seen_auth == "Bearer sekrit");
        CHECK(seen_model == "test-model");
    }
    SUBCASE("gives up after exhausting retries") {
        fail_first.store(1000);
        cfg.max_retries = 1;
        HttpChatGateway gw(cfg);
        CHECK_THROWS_AS(gw.chat(user_req("ping")), GatewayError);
        CHECK(hits.load() == 2);
    }
    SUBCASE("non-retryable statuses fail immediately without retries") {
        GatewayConfig missing = cfg;
        missing.base_url = "http://127.0.0.1:" + std::to_string(port) + "/absent";
        HttpChatGateway gw(missing);
        CHECK_THROWS_AS(gw.chat(user_req("ping")), GatewayError);
        CHECK(hits.load() == 0);
    }
    SUBCASE("a 200 with no choices is a bad response") {
        GatewayConfig empty_choices = cfg;
        empty_choices.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v2";
        HttpChatGateway gw(empty_choices);
        CHECK_THROWS_AS(gw.chat(user_req("ping")), BadResponse);
    }
    SUBCASE("a 200 that is not json is a bad response") {
        GatewayConfig garbled = cfg;
        garbled.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v3";
        HttpChatGateway gw(garbled);
        CHECK_THROWS_AS(gw.chat(user_req("ping")), BadResponse);
    }

    server.stop();
    serving.join();
    unsetenv("COOPRAG_TEST_KEY");
}

} // TEST_SUITE
