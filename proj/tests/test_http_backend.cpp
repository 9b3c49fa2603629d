#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "chorus/errors.hpp"
#include "chorus/http_backend.hpp"

using namespace chorus;
using nlohmann::json;

namespace {

ModelDescriptor desc() {
    ModelDescriptor d;
    d.id = "remote";
    d.display_name = "remote";
    d.description = "remote endpoint";
    d.vocab_group = "remote-v";
    return d;
}

// Local OpenAI-compatible stub; the handler decides each response.
class StubServer {
public:
    explicit StubServer(httplib::Server::Handler handler) {
        server_.Post("/v1/chat/completions", std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

HttpBackendConfig fast_config(const std::string& base_url) {
    HttpBackendConfig cfg;
    cfg.base_url = base_url;
    cfg.model = "stub-model";
    cfg.max_retries = 3;
    cfg.initial_backoff_ms = 1;  // keep tests quick
    return cfg;
}

const char* kFixedReply = R"({
  "choices": [{
    "message": {"content": "the fixed completion"},
    "finish_reason": "stop",
    "logprobs": {"content": [
      {"token": "the", "logprob": -0.05},
      {"token": " fixed", "logprob": -0.2},
      {"token": " completion", "logprob": -0.4}
    ]}
  }]
})";

}  // namespace

TEST_CASE("stub completion comes back verbatim with parsed logprobs") {
    json seen_body;
    StubServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen_body = json::parse(req.body);
        res.set_content(kFixedReply, "application/json");
    });
    HttpBackend backend(desc(), fast_config(server.base_url()));

    GenerationParams params;
    params.max_new_tokens = 32;
    params.seed = 99;
    const auto out = generate(backend, "say the fixed thing", params);

    CHECK(out.text == "the fixed completion");
    CHECK(out.finish_reason == FinishReason::stop);
    REQUIRE(out.tokens.has_value());
    REQUIRE(out.tokens->size() == 3);
    CHECK((*out.tokens)[1].logprob == doctest::Approx(-0.2));

    // wire protocol: the documented fields went out
    CHECK(seen_body["model"] == "stub-model");
    CHECK(seen_body["messages"][0]["role"] == "user");
    CHECK(seen_body["messages"][0]["content"] == "say the fixed thing");
    CHECK(seen_body["max_tokens"] == 32);
    CHECK(seen_body["temperature"] == doctest::Approx(0.7));
    CHECK(seen_body["top_p"] == doctest::Approx(0.9));
    CHECK(seen_body["seed"] == 99);
    CHECK(seen_body["logprobs"] == true);
}

TEST_CASE("transient 5xx responses are retried with a bound") {
    std::atomic<int> calls{0};
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        if (calls.fetch_add(1) < 2) {
            res.status = 503;
            return;
        }
        res.set_content(kFixedReply, "application/json");
    });
    HttpBackend backend(desc(), fast_config(server.base_url()));
    GenerationParams params;
    CHECK(generate(backend, "x", params).text == "the fixed completion");
    CHECK(calls.load() == 3);
}

TEST_CASE("persistent failures exhaust retries into a transport error") {
    std::atomic<int> calls{0};
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        calls.fetch_add(1);
        res.status = 500;
    });
    HttpBackend backend(desc(), fast_config(server.base_url()));
    GenerationParams params;
    CHECK_THROWS_AS(generate(backend, "x", params), TransportError);
    CHECK(calls.load() == 4);  // initial attempt + 3 retries
}

TEST_CASE("client errors are not retried") {
    std::atomic<int> calls{0};
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        calls.fetch_add(1);
        res.status = 404;
    });
    HttpBackend backend(desc(), fast_config(server.base_url()));
    GenerationParams params;
    CHECK_THROWS_AS(generate(backend, "x", params), TransportError);
    CHECK(calls.load() == 1);
}

TEST_CASE("api key lands in the Authorization header") {
    std::string auth;
    StubServer server([&](const httplib::Request& req, httplib::Response& res) {
        auth = req.get_header_value("Authorization");
        res.set_content(kFixedReply, "application/json");
    });
    HttpBackendConfig cfg = fast_config(server.base_url());
    cfg.api_key = "sk-test-123";
    HttpBackend backend(desc(), cfg);
    GenerationParams params;
    generate(backend, "x", params);
    CHECK(auth == "Bearer sk-test-123");
}

TEST_CASE("http backends expose text generation only") {
    HttpBackend backend(desc(), fast_config("http://127.0.0.1:1"));
    const auto caps = backend.capabilities();
    CHECK(caps.supports_text);
    CHECK_FALSE(caps.supports_token_distribution);
    CHECK_FALSE(caps.supports_weights);
    CHECK_FALSE(caps.supports_embedding);
    std::vector<int> ctx;
    CHECK_THROWS_AS(next_token_distribution(backend, ctx), CapabilityError);
}

TEST_CASE("unreachable endpoint raises after bounded retries") {
    HttpBackendConfig cfg = fast_config("http://127.0.0.1:9");  // discard port, nothing listens
    cfg.max_retries = 1;
    cfg.timeout_seconds = 1;
    HttpBackend backend(desc(), cfg);
    GenerationParams params;
    CHECK_THROWS_AS(generate(backend, "x", params), TransportError);
}

#include <vector>

TEST_CASE("the in-flight cap bounds concurrent requests per backend") {
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        const int now = in_flight.fetch_add(1) + 1;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        in_flight.fetch_sub(1);
        res.set_content(kFixedReply, "application/json");
    });
    HttpBackendConfig cfg = fast_config(server.base_url());
    cfg.max_in_flight = 2;
    HttpBackend backend(desc(), cfg);

    GenerationParams params;
    std::vector<std::thread> threads;
    for (int t = 0; t < 6; ++t) {
        threads.emplace_back([&] { generate(backend, "x", params); });
    }
    for (auto& t : threads) t.join();
    CHECK(peak.load() <= 2);
    CHECK(peak.load() >= 1);
}
