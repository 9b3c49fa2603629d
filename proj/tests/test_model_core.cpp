#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include "chorus/errors.hpp"
#include "chorus/mock_backend.hpp"
#include "chorus/model.hpp"
#include "chorus/pool.hpp"
#include "chorus/util.hpp"

using namespace chorus;
using nlohmann::json;

namespace {

ModelDescriptor desc(const std::string& id, const std::string& vocab = "v0") {
    ModelDescriptor d;
    d.id = id;
    d.display_name = id;
    d.description = "test model " + id;
    d.vocab_group = vocab;
    d.param_count = 1000;
    return d;
}

MockBackend make_mock(const json& script, const std::string& id = "m1") {
    return MockBackend(desc(id), MockScript::from_json(script));
}

}  // namespace

TEST_CASE("scripted answer lookup") {
    auto mock = make_mock({{"answers", {{"q1", "B"}}}});
    GenerationParams params;
    CHECK(generate(mock, "q1", params).text == "B");
    // substring keys also hit when the prompt embeds the instance id
    CHECK(generate(mock, "Question q1: pick one.", params).text == "B");
}

TEST_CASE("composite keys prefer the most specific match") {
    auto mock = make_mock({{"answers", {{"q1", "first"}, {"q1&&revise", "second"}}}});
    GenerationParams params;
    CHECK(generate(mock, "q1 please", params).text == "first");
    CHECK(generate(mock, "q1 now revise your answer", params).text == "second");
}

TEST_CASE("mock generation is deterministic in (prompt, seed)") {
    auto mock = make_mock({{"fallback_seed", 13}});
    GenerationParams params;
    params.seed = 42;
    const auto a = generate(mock, "unscripted prompt", params);
    const auto b = generate(mock, "unscripted prompt", params);
    CHECK(a.text == b.text);
    REQUIRE(a.tokens.has_value());
    REQUIRE(b.tokens.has_value());
    CHECK(a.tokens->size() == b.tokens->size());
    CHECK(a.tokens->front().token_id == b.tokens->front().token_id);

    params.seed = 43;
    CHECK(generate(mock, "unscripted prompt", params).text != a.text);
    CHECK(generate(mock, "another prompt", params).text !=
          generate(mock, "unscripted prompt", params).text);
}

TEST_CASE("token logprobs are non-positive and capped by max_new_tokens") {
    auto mock = make_mock(
        {{"answers", {{"q", {{"text", "long"}, {"token_probs", {0.5, 0.5, 0.5, 0.5, 0.5}}}}}}});
    GenerationParams params;
    params.max_new_tokens = 3;
    const auto out = generate(mock, "q", params);
    REQUIRE(out.tokens.has_value());
    CHECK(out.tokens->size() == 3);
    CHECK(out.finish_reason == FinishReason::length);
    for (const auto& t : *out.tokens) CHECK(t.logprob <= 0.0);
}

TEST_CASE("scripted and fallback next-token distributions") {
    auto mock = make_mock({{"vocab_size", 4}, {"distributions", {{"1,2", {0.7, 0.1, 0.1, 0.1}}}}});
    std::vector<int> ctx{1, 2};
    const auto dist = next_token_distribution(mock, ctx);
    CHECK(dist.probs == std::vector<double>{0.7, 0.1, 0.1, 0.1});

    std::vector<int> other{3};
    const auto uniform = next_token_distribution(mock, other);
    CHECK(uniform.probs == std::vector<double>{0.25, 0.25, 0.25, 0.25});
}

TEST_CASE("random scripted distributions sum to one") {
    Rng rng(2024);
    json table = json::object();
    for (int c = 0; c < 100; ++c) {
        std::vector<double> probs(5);
        double sum = 0.0;
        for (double& p : probs) {
            p = rng.uniform() + 1e-3;
            sum += p;
        }
        for (double& p : probs) p /= sum;
        table[std::to_string(c)] = probs;
    }
    auto mock = make_mock({{"vocab_size", 5}, {"distributions", table}});
    for (int c = 0; c < 100; ++c) {
        std::vector<int> ctx{c};
        const auto dist = next_token_distribution(mock, ctx);
        double sum = 0.0;
        for (double p : dist.probs) {
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("distribution invariants are enforced") {
    TokenDistribution bad{"v0", {0.5, -0.1, 0.6}};
    CHECK_THROWS_AS(bad.validate(), VocabError);
    TokenDistribution off{"v0", {0.5, 0.4}};
    CHECK_THROWS_AS(off.validate(), VocabError);
    TokenDistribution ok{"v0", {0.5, 0.5}};
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("capability gating fails loudly") {
    auto mock = make_mock({});  // no vocab, no weights
    std::vector<int> ctx;
    CHECK_THROWS_AS(next_token_distribution(mock, ctx), CapabilityError);
    CHECK_THROWS_AS(mock.weights(), CapabilityError);
}

TEST_CASE("mock embedder: deterministic, distance-meaningful, zero on empty") {
    auto mock = make_mock({});
    const auto a1 = embed_text(mock, "alpha alpha alpha");
    const auto a2 = embed_text(mock, "alpha alpha alpha");
    const auto b = embed_text(mock, "totally different text");
    CHECK(a1 == a2);
    CHECK(cosine_distance(a1, b) > 0.0);

    const auto zero = embed_text(mock, "");
    CHECK(zero.size() == 64);
    for (double v : zero) CHECK(v == 0.0);
    CHECK(cosine_distance(zero, zero) == 0.0);
    CHECK(cosine_distance(zero, a1) == 1.0);
}

TEST_CASE("generation parameter invariants") {
    GenerationParams params;
    CHECK(params.max_new_tokens == 512);
    CHECK(params.temperature == doctest::Approx(0.7));
    CHECK(params.top_p == doctest::Approx(0.9));

    params.top_p = 0.0;
    CHECK_THROWS_AS(params.validate(), ArgumentError);
    params.top_p = 0.9;
    params.max_new_tokens = 0;
    CHECK_THROWS_AS(params.validate(), ArgumentError);
    params.max_new_tokens = 16;
    params.temperature = -0.1;
    CHECK_THROWS_AS(params.validate(), ArgumentError);
}

TEST_CASE("pool loading preserves order and rejects duplicates") {
    json spec = {{"models", json::array()}};
    for (const char* id : {"p1", "p2", "p3"}) {
        spec["models"].push_back(
            {{"id", id}, {"description", "d"}, {"backend", {{"type", "mock"}}}});
    }
    const ModelPool pool = load_pool(spec);
    CHECK(pool.ids() == std::vector<std::string>{"p1", "p2", "p3"});

    spec["models"][2]["id"] = "p1";
    CHECK_THROWS_AS(load_pool(spec), ConfigError);

    json missing = {{"models", json::array({{{"id", "x"}, {"description", "d"}}})}};
    CHECK_THROWS_AS(load_pool(missing), ConfigError);
}

TEST_CASE("diversity spec expands the pool to a*b members") {
    json spec = {{"models", json::array()}, {"diversity", {{"a", 2}, {"b", 4}}}};
    for (const char* id : {"u1", "u2", "u3"}) {
        spec["models"].push_back(
            {{"id", id}, {"description", "d"}, {"backend", {{"type", "mock"}}}});
    }
    const ModelPool pool = load_pool(spec);
    REQUIRE(pool.size() == 8);
    CHECK(pool.at(0).descriptor().id == "u1#1");
    CHECK(pool.at(3).descriptor().id == "u1#4");
    CHECK(pool.at(4).descriptor().id == "u2#1");

    // replicas answer exactly like their original
    GenerationParams params;
    const auto original = pool.at(0).generate_text("hello", params).text;
    CHECK(pool.at(1).generate_text("hello", params).text == original);
}

TEST_CASE("params are rejected before reaching the backend") {
    auto mock = make_mock({});
    GenerationParams params;
    params.max_new_tokens = -1;
    CHECK_THROWS_AS(generate(mock, "x", params), ArgumentError);
}

#include <atomic>
#include <thread>

TEST_CASE("backends are safely invocable from concurrent tasks") {
    auto mock = make_mock({{"vocab_size", 4},
                           {"answers", {{"q7", "B"}}},
                           {"distributions", {{"1,2", {0.7, 0.1, 0.1, 0.1}}}}});
    GenerationParams params;
    params.seed = 3;
    const std::string expect_text = generate(mock, "q7 please", params).text;

    std::atomic<int> mismatches{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 500; ++i) {
                if (generate(mock, "q7 please", params).text != expect_text) {
                    mismatches.fetch_add(1);
                }
                std::vector<int> ctx{1, 2};
                const auto dist = next_token_distribution(mock, ctx);
                if (dist.probs[0] != 0.7) mismatches.fetch_add(1);
            }
        });
    }
    for (auto& t : threads) t.join();
    CHECK(mismatches.load() == 0);
}
