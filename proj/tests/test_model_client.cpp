#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <random>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "hvcu/errors.hpp"
#include "hvcu/model_client.hpp"
#include "hvcu/parallel.hpp"
#include "support.hpp"

using namespace hvcu;
using namespace std::chrono_literals;

namespace {

ChatRequest simple(const std::string& text, double temperature = 0.0) {
    return make_user_request(text, nullptr, temperature, "t");
}

std::string ok_body(const std::string& content) {
    return Json{{"choices", Json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}}
        .dump();
}

/// Replays a fixed list of replies and records each request.
class ScriptedTransport final : public HttpTransport {
public:
    explicit ScriptedTransport(std::vector<HttpReply> replies) : replies_(std::move(replies)) {}

    HttpReply post(const std::string& path, const std::string& body,
                   const HttpHeaders& headers) override {
        std::lock_guard lock(mutex_);
        paths.push_back(path);
        bodies.push_back(body);
        last_headers = headers;
        if (next_ >= replies_.size()) return HttpReply{500, "", ""};
        return replies_[next_++];
    }

    std::vector<std::string> paths;
    std::vector<std::string> bodies;
    HttpHeaders last_headers;

private:
    std::mutex mutex_;
    std::vector<HttpReply> replies_;
    std::size_t next_ = 0;
};

RemoteConfig test_config() {
    RemoteConfig c;
    c.api_base = "http://unused";
    c.api_key = "sk-test";
    c.model = "test-model";
    c.requests_per_minute = 0;  // unlimited
    return c;
}

}  // namespace

TEST(MockBackend, ConsumesEntriesInOrderThenExhausts) {
    MockBackend mock;
    const auto handle = mock.enqueue({{"", "one"}, {"", "two"}, {"", "{\"question\":\"Q\"}"}});
    EXPECT_EQ(handle.first, 0u);
    EXPECT_EQ(handle.count, 3u);
    EXPECT_EQ(mock.complete(simple("a")).text, "one");
    EXPECT_EQ(mock.complete(simple("b")).text, "two");
    EXPECT_EQ(mock.complete(simple("c")).text, "{\"question\":\"Q\"}");
    EXPECT_THROW(mock.complete(simple("d")), ScriptExhausted);
    EXPECT_EQ(mock.consumed(), 3u);
    EXPECT_EQ(mock.remaining(), 0u);
}

TEST(MockBackend, EmptyScriptExhaustsImmediately) {
    MockBackend mock;
    EXPECT_THROW(mock.complete(simple("x")), ScriptExhausted);
}

TEST(MockBackend, MatcherMismatchIdentifiesEntry) {
    MockBackend mock;
    mock.enqueue({{"", "first"}, {"Level 2 QA", "second"}});
    mock.complete(simple("anything"));
    try {
        mock.complete(simple("a level-1 prompt"));
        FAIL() << "expected MatchError";
    } catch (const MatchError& e) {
        EXPECT_EQ(e.entry_index(), 1u);
    }
    EXPECT_EQ(mock.consumed(), 1u);
    EXPECT_EQ(mock.complete(simple("now with Level 2 QA inside")).text, "second");
}

TEST(MockBackend, RecordsCallsAndEnforcesRequestInvariants) {
    MockBackend mock("mock", 1.5);
    mock.enqueue({{"", "r"}});
    const auto img = ImageRef::from_path("x.png");
    mock.complete(make_user_request("p", &img, 0.9, "tag-1"));
    const auto calls = mock.calls();
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_EQ(calls[0].tag, "tag-1");
    EXPECT_DOUBLE_EQ(calls[0].temperature, 0.9);
    EXPECT_EQ(calls[0].image_count, 1u);

    EXPECT_THROW(mock.complete(simple("p", 1.6)), PreconditionError);
    ChatRequest empty;
    EXPECT_THROW(mock.complete(empty), PreconditionError);
    ChatRequest bad = simple("p");
    bad.messages.push_back(ChatMessage{Role::Assistant, "a", {img}});
    EXPECT_THROW(mock.complete(bad), PreconditionError);
}

TEST(MockScript, JsonRoundTrip) {
    const auto doc = Json::parse(R"([{"match": "L3", "response": "x"}, {"response": "y"}])");
    const auto script = parse_mock_script(doc);
    ASSERT_EQ(script.size(), 2u);
    EXPECT_EQ(script[0].match, "L3");
    EXPECT_EQ(script[1].match, "");
    EXPECT_EQ(parse_mock_script(mock_script_to_json(script)).size(), 2u);
    EXPECT_THROW(parse_mock_script(Json::parse(R"({"response": "y"})")), InvariantError);
    EXPECT_THROW(parse_mock_script(Json::parse(R"([{"match": "y"}])")), InvariantError);
}

TEST(RemoteBackend, RetriesThrottlingThenSucceeds) {
    auto transport = std::make_unique<ScriptedTransport>(
        std::vector<HttpReply>{{429, "", ""}, {429, "", ""}, {200, ok_body("hello"), ""}});
    auto* t = transport.get();
    std::vector<std::chrono::nanoseconds> sleeps;
    RemoteBackend backend(test_config(), std::move(transport),
                          [&](std::chrono::nanoseconds d) { sleeps.push_back(d); });
    const auto response = backend.complete(simple("hi"));
    EXPECT_EQ(response.text, "hello");
    EXPECT_EQ(response.attempt_count, 3);
    EXPECT_EQ(t->paths, std::vector<std::string>(3, "/chat/completions"));
    ASSERT_EQ(sleeps.size(), 2u);
    EXPECT_LE(sleeps[0], sleeps[1]);
}

TEST(RemoteBackend, ExhaustedRetriesCarryAttemptCount) {
    auto transport = std::make_unique<ScriptedTransport>(std::vector<HttpReply>{
        {503, "", ""}, {0, "", "connection refused"}, {500, "", ""}, {408, "", ""}, {200, ok_body("late"), ""}});
    RemoteBackend backend(test_config(), std::move(transport), [](std::chrono::nanoseconds) {});
    try {
        backend.complete(simple("hi"));
        FAIL() << "expected TransportError";
    } catch (const TransportError& e) {
        EXPECT_EQ(e.attempts(), 4);
    }
}

TEST(RemoteBackend, ClientErrorsAreNotRetried) {
    for (int status : {401, 403}) {
        auto transport = std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{status, "", ""}});
        auto* t = transport.get();
        RemoteBackend backend(test_config(), std::move(transport), [](std::chrono::nanoseconds) {});
        EXPECT_THROW(backend.complete(simple("hi")), AuthError);
        EXPECT_EQ(t->paths.size(), 1u);
    }
    auto transport = std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{400, "bad", ""}});
    auto* t = transport.get();
    RemoteBackend backend(test_config(), std::move(transport), [](std::chrono::nanoseconds) {});
    EXPECT_THROW(backend.complete(simple("hi")), ContractError);
    EXPECT_EQ(t->paths.size(), 1u);
}

TEST(RemoteBackend, BodyWithoutContentIsContractError) {
    EXPECT_THROW(RemoteBackend::parse_response_body("{}"), ContractError);
    EXPECT_THROW(RemoteBackend::parse_response_body("not json"), ContractError);
    EXPECT_THROW(RemoteBackend::parse_response_body(R"({"choices":[{"message":{"content":null}}]})"),
                 ContractError);
    EXPECT_EQ(RemoteBackend::parse_response_body(
                  R"({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]})"),
              "ab");
    EXPECT_EQ(RemoteBackend::parse_response_body(ok_body("x")), "x");
}

TEST(RemoteBackend, RequestBodyShape) {
    test::TempDir dir;
    const auto path = dir / "pixel.png";
    {
        std::ofstream out(path, std::ios::binary);
        out << "foobar";
    }
    auto cfg = test_config();
    cfg.seed = 42;
    auto transport = std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{200, ok_body("x"), ""}});
    auto* t = transport.get();
    RemoteBackend backend(cfg, std::move(transport), [](std::chrono::nanoseconds) {});
    const auto img = ImageRef::from_path(path.string());
    auto request = make_user_request("describe", &img, 0.7, "t");
    request.max_output_tokens = 256;
    backend.complete(request);

    const auto body = Json::parse(t->bodies.at(0));
    EXPECT_EQ(body["model"], "test-model");
    EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.7);
    EXPECT_EQ(body["max_tokens"], 256);
    EXPECT_EQ(body["seed"], 42);
    const auto& content = body["messages"][0]["content"];
    EXPECT_EQ(body["messages"][0]["role"], "user");
    EXPECT_EQ(content[0], (Json{{"type", "text"}, {"text", "describe"}}));
    EXPECT_EQ(content[1]["type"], "image_url");
    EXPECT_EQ(content[1]["image_url"]["url"], "data:image/png;base64,Zm9vYmFy");
    EXPECT_NE(std::find(t->last_headers.begin(), t->last_headers.end(),
                        std::pair<std::string, std::string>{"Authorization", "Bearer sk-test"}),
              t->last_headers.end());
}

TEST(Base64, KnownVectors) {
    EXPECT_EQ(base64_encode(""), "");
    EXPECT_EQ(base64_encode("f"), "Zg==");
    EXPECT_EQ(base64_encode("fo"), "Zm8=");
    EXPECT_EQ(base64_encode("foo"), "Zm9v");
    EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
    EXPECT_EQ(image_url_for(ImageRef{"https://x/y.png", "image/png"}), "https://x/y.png");
    EXPECT_THROW(image_url_for(ImageRef{"/does/not/exist.png", "image/png"}), IoError);
}

TEST(Backoff, NonDecreasingAndCapped) {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> ms(1, 2000);
    std::uniform_real_distribution<double> mult(1.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        RemoteConfig c;
        c.initial_backoff = std::chrono::milliseconds(ms(rng));
        c.backoff_multiplier = mult(rng);
        c.max_backoff = std::chrono::milliseconds(ms(rng) * 10);
        auto prev = std::chrono::milliseconds::zero();
        for (int retry = 1; retry <= 12; ++retry) {
            const auto d = backoff_delay(c, retry);
            EXPECT_GE(d, prev);
            EXPECT_LE(d, std::max(c.max_backoff, c.initial_backoff));
            prev = d;
        }
    }
}

TEST(TokenBucket, BurstThenPaced) {
    auto now = std::chrono::steady_clock::time_point{};
    TokenBucket bucket(60.0, 2.0, [&] { return now; });
    EXPECT_EQ(bucket.reserve(), 0ns);
    EXPECT_EQ(bucket.reserve(), 0ns);
    EXPECT_NEAR(std::chrono::duration<double>(bucket.reserve()).count(), 1.0, 1e-9);
    now += 10s;  // refill saturates at the burst size
    EXPECT_EQ(bucket.reserve(), 0ns);
    EXPECT_EQ(bucket.reserve(), 0ns);
    EXPECT_GT(bucket.reserve(), 0ns);
}

TEST(InFlightGate, ConcurrentCallsNeverExceedCap) {
    class SlowTransport final : public HttpTransport {
    public:
        HttpReply post(const std::string&, const std::string&, const HttpHeaders&) override {
            std::this_thread::sleep_for(2ms);
            return HttpReply{200, ok_body("ok"), ""};
        }
    };
    auto cfg = test_config();
    cfg.max_in_flight = 3;
    RemoteBackend backend(cfg, std::make_unique<SlowTransport>());
    indexed_map(40, 12, [&](std::size_t) { return backend.complete(simple("x")).text; });
    EXPECT_LE(backend.in_flight().peak(), 3);
    EXPECT_GE(backend.in_flight().peak(), 1);
    EXPECT_EQ(backend.in_flight().current(), 0);
}

TEST(HttpTransport, LoopbackRoundTrip) {
    httplib::Server server;
    std::string seen_auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        const auto body = Json::parse(req.body);
        res.set_content(ok_body("echo:" + body["messages"][0]["content"][0]["text"].get<std::string>()),
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto cfg = test_config();
    cfg.api_base = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    RemoteBackend backend(cfg, make_http_transport(cfg.api_base, 5s));
    EXPECT_EQ(backend.complete(simple("ping")).text, "echo:ping");
    EXPECT_EQ(seen_auth, "Bearer sk-test");
    server.stop();
    worker.join();

    auto dead = make_http_transport("http://127.0.0.1:" + std::to_string(port), 1s);
    const auto reply = dead->post("/chat/completions", "{}", {});
    EXPECT_EQ(reply.status, 0);
    EXPECT_FALSE(reply.error.empty());
}

TEST(RemoteConfig, ReadsEnvironment) {
    ::setenv("HVCU_API_BASE", "http://env-base", 1);
    ::setenv("HVCU_API_KEY", "env-key", 1);
    ::setenv("HVCU_MODEL", "env-model", 1);
    const auto c = RemoteConfig::from_env();
    EXPECT_EQ(c.api_base, "http://env-base");
    EXPECT_EQ(c.api_key, "env-key");
    EXPECT_EQ(c.model, "env-model");
    EXPECT_EQ(c.max_attempts, 4);
    EXPECT_EQ(c.timeout, 60s);
    ::unsetenv("HVCU_API_BASE");
    ::unsetenv("HVCU_API_KEY");
    ::unsetenv("HVCU_MODEL");
}
