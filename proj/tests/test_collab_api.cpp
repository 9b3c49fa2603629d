#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "chorus/collab_api.hpp"
#include "chorus/decode.hpp"
#include "chorus/errors.hpp"
#include "chorus/mock_backend.hpp"
#include "chorus/pool.hpp"

using namespace chorus;
using nlohmann::json;

namespace {

ModelDescriptor desc(const std::string& id, const std::string& vocab = "v0") {
    ModelDescriptor d;
    d.id = id;
    d.display_name = id;
    d.description = "description of " + id;
    d.vocab_group = vocab;
    return d;
}

BackendPtr mock(const std::string& id, const json& script) {
    return std::make_shared<MockBackend>(desc(id), MockScript::from_json(script));
}

ModelPool pool_of(std::vector<BackendPtr> members) { return ModelPool(std::move(members)); }

// Distribution behavior as a function of the context; text generation is a
// canned string.
class FnDistBackend : public ModelBackend {
public:
    using DistFn = std::function<std::vector<double>(std::span<const int>)>;
    FnDistBackend(ModelDescriptor d, DistFn fn, std::optional<int> eos = {})
        : d_(std::move(d)), fn_(std::move(fn)), eos_(eos) {}

    const ModelDescriptor& descriptor() const override { return d_; }
    BackendCapabilities capabilities() const override {
        BackendCapabilities caps;
        caps.supports_text = true;
        caps.supports_token_distribution = true;
        caps.supports_embedding = true;
        return caps;
    }
    GenerationOutput generate_text(const std::string&, const GenerationParams&) override {
        return {d_.id + " canned", std::nullopt, FinishReason::stop};
    }
    TokenDistribution next_token_distribution(std::span<const int> context) override {
        return {d_.vocab_group, fn_(context)};
    }
    std::vector<double> embed_text(const std::string& text) override {
        return hash_embed(text, 16, 1);
    }
    std::optional<int> eos_token_id() const override { return eos_; }
    std::string token_piece(int token_id) const override {
        return d_.id + ":" + std::to_string(token_id) + " ";
    }

private:
    ModelDescriptor d_;
    DistFn fn_;
    std::optional<int> eos_;
};

std::vector<double> point_mass(int idx, int size) {
    std::vector<double> p(size, 0.0);
    p[idx] = 1.0;
    return p;
}

// Always fails with a transport error.
class DeadBackend : public ModelBackend {
public:
    explicit DeadBackend(ModelDescriptor d) : d_(std::move(d)) {}
    const ModelDescriptor& descriptor() const override { return d_; }
    BackendCapabilities capabilities() const override {
        BackendCapabilities caps;
        caps.supports_text = true;
        return caps;
    }
    GenerationOutput generate_text(const std::string&, const GenerationParams&) override {
        throw TransportError(d_.id + " is unreachable");
    }

private:
    ModelDescriptor d_;
};

int total_attributed(const AttributedOutput& out) {
    int total = 0;
    for (const auto& s : out.spans) total += s.length;
    return total;
}

void check_attribution_partitions(const AttributedOutput& out) {
    REQUIRE(out.output.tokens.has_value());
    CHECK(total_attributed(out) == static_cast<int>(out.output.tokens->size()));
    int cursor = 0;
    for (const auto& s : out.spans) {
        CHECK(s.start == cursor);
        cursor += s.length;
    }
}

DatasetRecord mc_record(const std::string& id, const std::string& prompt,
                        const std::string& gold) {
    DatasetRecord r;
    r.id = id;
    r.prompt = prompt;
    r.gold = {gold};
    r.task_kind = TaskKind::multiple_choice;
    r.domain_tag = "QA";
    return r;
}

// Base model that is confident (point mass) except at chosen context lengths.
BackendPtr parity_base(const std::string& id, std::function<bool(std::size_t)> uncertain_at,
                       int vocab = 4) {
    return std::make_shared<FnDistBackend>(
        desc(id), [uncertain_at, vocab](std::span<const int> ctx) {
            if (uncertain_at(ctx.size())) {
                return std::vector<double>(vocab, 1.0 / vocab);
            }
            return point_mass(0, vocab);
        });
}

}  // namespace

TEST_CASE("prompt routing parses the first whole-token pool id") {
    auto pool = pool_of({mock("m1", {}), mock("m2", {}), mock("m3", {})});
    auto router = mock("router", {{"answers", {{"Candidate models", "model: m2"}}}});
    CHECK(prompt_route(*router, pool, "which model?") == "m2");

    auto gibberish = mock("router", {{"answers", {{"Candidate models", "no idea at all"}}}});
    CHECK(prompt_route(*gibberish, pool, "which model?") == "m1");  // fallback

    // id must be a whole token: m2x does not count, later m3 does
    auto tricky = mock("router", {{"answers", {{"Candidate models", "m2x then m3"}}}});
    CHECK(prompt_route(*tricky, pool, "which model?") == "m3");
}

TEST_CASE("the router prompt carries every description") {
    auto pool = pool_of({mock("m1", {}), mock("m2", {}), mock("m3", {})});
    const std::string prompt = render_route_prompt(pool, "the query");
    for (const auto& id : pool.ids()) {
        CHECK(prompt.find("description of " + id) != std::string::npos);
    }
    CHECK(prompt.find("the query") != std::string::npos);
}

TEST_CASE("router transport failure falls back to pool[0] with a warning") {
    auto pool = pool_of({mock("m1", {}), mock("m2", {})});
    DeadBackend dead(desc("dead-router"));
    std::vector<std::string> warnings;
    CHECK(prompt_route(dead, pool, "q", PromptLibrary::defaults(), 0, &warnings) == "m1");
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("unreachable") != std::string::npos);
}

TEST_CASE("prompt routing requires descriptions") {
    auto bare = std::make_shared<MockBackend>(ModelDescriptor{"m1", "m1", "", "v0", "", 0},
                                              MockScript{});
    auto pool = pool_of({bare});
    auto router = mock("r", {});
    CHECK_THROWS_AS(prompt_route(*router, pool, "q"), ArgumentError);
}

TEST_CASE("trained router: degenerate labels route everything to the winner") {
    // m2 answers every dev instance correctly, m1/m3 never do
    auto m2 = mock("m2", {{"answers", {{"alpha", "A"}, {"beta", "A"}}}});
    auto pool = pool_of({mock("m1", {}), m2, mock("m3", {})});
    std::vector<DatasetRecord> dev{mc_record("d1", "alpha question", "A"),
                                   mc_record("d2", "beta question", "A")};
    const SelectorPolicy policy = fit_trained_router(pool, dev, pool.ptr(0), 3);
    CHECK(route(policy, "alpha question") == "m2");
    CHECK(route(policy, "beta question") == "m2");
    CHECK(route(policy, "anything else entirely") == "m2");
}

TEST_CASE("trained router: ties label the earlier pool member") {
    auto m1 = mock("m1", {{"answers", {{"shared", "A"}}}});
    auto m2 = mock("m2", {{"answers", {{"shared", "A"}}}});
    auto pool = pool_of({m1, m2});
    std::vector<DatasetRecord> dev{mc_record("d1", "shared prompt", "A")};
    const SelectorPolicy policy = fit_trained_router(pool, dev, pool.ptr(0), 1);
    REQUIRE(policy.memory.size() == 1);
    CHECK(policy.memory[0].label == "m1");
    CHECK(route(policy, "shared prompt") == "m1");
}

TEST_CASE("trained router: two-cluster synthetic routes held-out queries perfectly") {
    auto ra = mock("ra", {{"answers", {{"alpha", "A"}}}});
    auto rb = mock("rb", {{"answers", {{"beta", "B"}}}});
    auto pool = pool_of({ra, rb});
    std::vector<DatasetRecord> dev;
    for (int i = 0; i < 4; ++i) {
        dev.push_back(mc_record("a" + std::to_string(i),
                                "alpha alpha alpha question " + std::to_string(i), "A"));
        dev.push_back(mc_record("b" + std::to_string(i),
                                "beta beta beta question " + std::to_string(i), "B"));
    }
    const SelectorPolicy policy = fit_trained_router(pool, dev, pool.ptr(0), 1);
    // held-out queries from each cluster
    for (int i = 10; i < 16; ++i) {
        CHECK(route(policy, "alpha alpha alpha question " + std::to_string(i)) == "ra");
        CHECK(route(policy, "beta beta beta question " + std::to_string(i)) == "rb");
    }
}

TEST_CASE("trained router: k=3 takes the neighbor plurality") {
    auto m1 = mock("m1", {{"answers", {{"red", "A"}}}});
    auto m2 = mock("m2", {{"answers", {{"red ruby", "A"}}}});
    auto pool = pool_of({m1, m2});
    // three dev points near "red": all three carry label m1 because ties on
    // "red ruby" (both right) resolve to the earlier pool member
    std::vector<DatasetRecord> dev{mc_record("d1", "red one", "A"),
                                   mc_record("d2", "red two", "A"),
                                   mc_record("d3", "red ruby", "A")};
    const SelectorPolicy policy = fit_trained_router(pool, dev, pool.ptr(0), 3);
    CHECK(route(policy, "red query") == "m1");

    CHECK_THROWS_AS(fit_trained_router(pool, {}, pool.ptr(0), 3), ConfigError);
}

TEST_CASE("graph router: per-task score table with nearest-task prediction") {
    // task "math" is owned by g1, task "QA" by g2
    auto g1 = mock("g1", {{"answers", {{"solve sums", "A"}}}});
    auto g2 = mock("g2", {{"answers", {{"recall facts", "A"}}}});
    auto pool = pool_of({g1, g2});
    std::vector<DatasetRecord> dev;
    for (int i = 0; i < 3; ++i) {
        auto r1 = mc_record("m" + std::to_string(i), "solve sums case " + std::to_string(i), "A");
        r1.domain_tag = "math";
        dev.push_back(r1);
        auto r2 = mc_record("q" + std::to_string(i), "recall facts case " + std::to_string(i), "A");
        r2.domain_tag = "QA";
        dev.push_back(r2);
    }
    const SelectorPolicy policy = fit_graph_router(pool, dev, pool.ptr(0));
    CHECK(route(policy, "solve sums brand new") == "g1");
    CHECK(route(policy, "recall facts brand new") == "g2");
    CHECK(route_task(policy, "math") == "g1");
    CHECK(route_task(policy, "QA") == "g2");

    // unseen task falls back to the global per-model means: the two models
    // tie globally (0.5 each), so the earlier pool member wins
    CHECK(route_task(policy, "never-seen-task") == "g1");
}

TEST_CASE("graph router: all-equal scores route to pool[0]") {
    auto pool = pool_of({mock("g1", {}), mock("g2", {})});  // nobody answers anything
    std::vector<DatasetRecord> dev{mc_record("d1", "some prompt", "A")};
    dev[0].domain_tag = "t";
    const SelectorPolicy policy = fit_graph_router(pool, dev, pool.ptr(0));
    CHECK(route(policy, "some prompt") == "g1");
}

namespace {

ModelPool cascade_pool(double c1, double c2, double c3) {
    auto with_conf = [](const std::string& id, double conf) {
        return mock(id, {{"answers", {{"q", {{"text", id + " answer"},
                                             {"token_probs", {conf}}}}}}});
    };
    return pool_of({with_conf("c1", c1), with_conf("c2", c2), with_conf("c3", c3)});
}

}  // namespace

TEST_CASE("cascade defers on low confidence") {
    const ModelPool pool = cascade_pool(0.3, 0.6, 0.2);
    GenerationParams params;
    ConfidenceRule rule{ConfidenceStatistic::geomean_token_prob, 0.5};

    const CascadeResult r = cascade(pool, "q", rule, params);
    CHECK(r.deciding_id == "c2");
    CHECK(r.deciding_index == 1);
    CHECK(r.output.text == "c2 answer");
    REQUIRE(r.confidences.size() == 2);
    CHECK(*r.confidences[0] == doctest::Approx(0.3));
    CHECK(*r.confidences[1] == doctest::Approx(0.6));

    rule.threshold = 0.0;  // nothing is ever uncertain under strict <
    CHECK(cascade(pool, "q", rule, params).deciding_index == 0);

    rule.threshold = 1.0;  // everything defers; the last model answers anyway
    CHECK(cascade(pool, "q", rule, params).deciding_index == 2);
}

TEST_CASE("cascade geomean matches hand arithmetic over multi-token drafts") {
    // per-token probs {0.09, 1.0}: geometric mean sqrt(0.09) = 0.3
    auto m = mock("g", {{"answers", {{"q", {{"text", "draft"},
                                            {"token_probs", {0.09, 1.0}}}}}}});
    GenerationParams params;
    const auto out = generate(*m, "q", params);
    CHECK(draft_confidence(out, ConfidenceStatistic::geomean_token_prob) ==
          doctest::Approx(0.3).epsilon(1e-12));
    CHECK(draft_confidence(out, ConfidenceStatistic::min_token_prob) ==
          doctest::Approx(0.09).epsilon(1e-12));
    CHECK(draft_confidence(out, ConfidenceStatistic::top1_next_prob) ==
          doctest::Approx(0.09).epsilon(1e-12));
}

TEST_CASE("cascade deciding index is non-decreasing in the threshold") {
    const ModelPool pool = cascade_pool(0.3, 0.6, 0.2);
    GenerationParams params;
    int last_index = 0;
    for (double threshold : {0.0, 0.25, 0.5, 0.7, 1.0}) {
        ConfidenceRule rule{ConfidenceStatistic::geomean_token_prob, threshold};
        const int idx = cascade(pool, "q", rule, params).deciding_index;
        CHECK(idx >= last_index);
        last_index = idx;
    }
    CHECK(last_index == 2);
}

TEST_CASE("cascade skips unreachable mid-chain models") {
    auto c1 = mock("c1", {{"answers", {{"q", {{"text", "weak"}, {"token_probs", {0.1}}}}}}});
    auto dead = std::make_shared<DeadBackend>(desc("dead"));
    auto c3 = mock("c3", {{"answers", {{"q", {{"text", "strong"}, {"token_probs", {0.9}}}}}}});
    const ModelPool pool = pool_of({c1, dead, c3});
    GenerationParams params;
    ConfidenceRule rule{ConfidenceStatistic::geomean_token_prob, 0.5};
    const CascadeResult r = cascade(pool, "q", rule, params);
    CHECK(r.deciding_id == "c3");
    CHECK(r.warnings.size() == 1);
    CHECK_FALSE(r.confidences[1].has_value());

    // a dead final model has nobody to defer to
    const ModelPool doomed = pool_of({c1, std::make_shared<DeadBackend>(desc("dead2"))});
    CHECK_THROWS_AS(cascade(doomed, "q", rule, params), TransportError);
}

TEST_CASE("nudging with threshold 0 reproduces base-only decoding byte-exactly") {
    auto base = std::make_shared<FnDistBackend>(desc("base"), [](std::span<const int> ctx) {
        // varied, non-degenerate distributions so sampling is exercised
        const double a = 0.1 + 0.8 * ((ctx.size() * 37 % 10) / 10.0);
        return std::vector<double>{a, 1.0 - a};
    });
    auto nudger = std::make_shared<FnDistBackend>(
        desc("nudger"), [](std::span<const int>) { return point_mass(1, 2); });
    GenerationParams params;
    params.max_new_tokens = 24;
    params.seed = 5;

    const auto nudged = nudging_generate(*base, pool_of({nudger}), "q",
                                         {ConfidenceStatistic::top1_next_prob, 0.0}, 4, params);
    const auto plain = decode_single(*base, params);
    CHECK(nudged.output.text == plain.text);
    REQUIRE(nudged.output.tokens.has_value());
    CHECK(nudged.output.tokens->size() == plain.tokens->size());
    CHECK(nudged.spans.size() == 1);
    CHECK(nudged.spans[0].model_id == "base");
    check_attribution_partitions(nudged);
}

TEST_CASE("nudger writes exactly at the scripted uncertain position") {
    auto base = parity_base("base", [](std::size_t len) { return len == 3; });
    auto nudger = std::make_shared<FnDistBackend>(
        desc("nudger"), [](std::span<const int>) { return point_mass(2, 4); });
    GenerationParams params;
    params.max_new_tokens = 8;
    params.temperature = 0.0;  // deterministic argmax decoding

    const auto out = nudging_generate(*base, pool_of({nudger}), "q",
                                      {ConfidenceStatistic::top1_next_prob, 0.9}, 4, params);
    REQUIRE(out.output.tokens.has_value());
    const auto& tokens = *out.output.tokens;
    REQUIRE(tokens.size() == 8);
    CHECK(tokens[3].token_id == 2);  // the nudger's token at position 3
    for (int i : {0, 1, 2, 4, 5, 6, 7}) CHECK(tokens[i].token_id == 0);
    REQUIRE(out.spans.size() == 3);  // base, nudger, base
    CHECK(out.spans[1].model_id == "nudger");
    CHECK(out.spans[1].start == 3);
    CHECK(out.spans[1].length == 1);
    check_attribution_partitions(out);
}

TEST_CASE("nudge_cap 1 with a persistently uncertain base alternates strictly") {
    auto base = parity_base("base", [](std::size_t) { return true; });  // never confident
    auto nudger = std::make_shared<FnDistBackend>(
        desc("nudger"), [](std::span<const int>) { return point_mass(1, 4); });
    GenerationParams params;
    params.max_new_tokens = 10;
    params.temperature = 0.0;

    const auto out = nudging_generate(*base, pool_of({nudger}), "q",
                                      {ConfidenceStatistic::top1_next_prob, 0.9}, 1, params);
    REQUIRE(out.spans.size() == 10);  // strict alternation: every span is one token
    for (std::size_t i = 0; i < out.spans.size(); ++i) {
        CHECK(out.spans[i].model_id == (i % 2 == 0 ? "nudger" : "base"));
        CHECK(out.spans[i].length == 1);
    }
    check_attribution_partitions(out);
}

TEST_CASE("nudging rejects vocab mismatches") {
    auto base = std::make_shared<FnDistBackend>(
        desc("base", "va"), [](std::span<const int>) { return point_mass(0, 2); });
    auto nudger = std::make_shared<FnDistBackend>(
        desc("nudger", "vb"), [](std::span<const int>) { return point_mass(0, 2); });
    GenerationParams params;
    CHECK_THROWS_AS(nudging_generate(*base, pool_of({nudger}), "q",
                                     {ConfidenceStatistic::top1_next_prob, 0.5}, 4, params),
                    VocabError);
}

TEST_CASE("switch generation over one model equals plain decoding") {
    auto solo = std::make_shared<FnDistBackend>(desc("solo"), [](std::span<const int> ctx) {
        const double a = 0.2 + 0.6 * ((ctx.size() % 4) / 4.0);
        return std::vector<double>{a, 1.0 - a};
    });
    auto selector = mock("selector", {});  // gibberish output, falls back
    GenerationParams params;
    params.max_new_tokens = 12;
    params.seed = 3;

    const auto switched = switch_generation(Selector(BackendPtr(selector)), pool_of({solo}), "q",
                                            2, params);
    const auto plain = decode_single(*solo, params);
    CHECK(switched.output.text == plain.text);
    check_attribution_partitions(switched);
}

TEST_CASE("a scripted selector alternates patches between models") {
    auto sw1 = std::make_shared<FnDistBackend>(
        desc("sw1"), [](std::span<const int>) { return point_mass(0, 4); });
    auto sw2 = std::make_shared<FnDistBackend>(
        desc("sw2"), [](std::span<const int>) { return point_mass(1, 4); });
    // the selector sees the patch index in its prompt and alternates
    auto selector = mock("selector", {{"answers", {{"Patch index: 0", "sw1"},
                                                   {"Patch index: 1", "sw2"},
                                                   {"Patch index: 2", "sw1"},
                                                   {"Patch index: 3", "sw2"}}}});
    GenerationParams params;
    params.max_new_tokens = 8;
    params.temperature = 0.0;

    const auto out = switch_generation(Selector(BackendPtr(selector)), pool_of({sw1, sw2}), "q",
                                       2, params);
    REQUIRE(out.output.tokens.has_value());
    const auto& tokens = *out.output.tokens;
    REQUIRE(tokens.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(tokens[i].token_id == (i / 2) % 2);
    REQUIRE(out.spans.size() == 4);
    CHECK(out.spans[0].model_id == "sw1");
    CHECK(out.spans[1].model_id == "sw2");
    CHECK(out.spans[2].model_id == "sw1");
    CHECK(out.spans[3].model_id == "sw2");
    for (const auto& s : out.spans) CHECK(s.length == 2);
    check_attribution_partitions(out);
}

TEST_CASE("unknown selector output keeps the previous patch's model") {
    auto sw1 = std::make_shared<FnDistBackend>(
        desc("sw1"), [](std::span<const int>) { return point_mass(0, 4); });
    auto sw2 = std::make_shared<FnDistBackend>(
        desc("sw2"), [](std::span<const int>) { return point_mass(1, 4); });
    auto selector = mock("selector", {{"answers", {{"Patch index: 1", "sw2"}}}});
    GenerationParams params;
    params.max_new_tokens = 6;
    params.temperature = 0.0;
    const auto out = switch_generation(Selector(BackendPtr(selector)), pool_of({sw1, sw2}), "q",
                                       2, params);
    // patch 0: unknown -> pool[0]; patch 1: sw2; patch 2: unknown -> sw2 again
    REQUIRE(out.spans.size() == 3);
    CHECK(out.spans[0].model_id == "sw1");
    CHECK(out.spans[1].model_id == "sw2");
    CHECK(out.spans[2].model_id == "sw2");
}

TEST_CASE("co_llm honors always-base and always-assistant policies") {
    auto base = std::make_shared<FnDistBackend>(desc("base"), [](std::span<const int> ctx) {
        const double a = 0.3 + 0.4 * ((ctx.size() % 3) / 3.0);
        return std::vector<double>{a, 1.0 - a};
    });
    auto assistant = std::make_shared<FnDistBackend>(desc("assist"), [](std::span<const int> ctx) {
        const double a = 0.8 - 0.5 * ((ctx.size() % 5) / 5.0);
        return std::vector<double>{a, 1.0 - a};
    });
    GenerationParams params;
    params.max_new_tokens = 16;
    params.seed = 11;

    // threshold 0: the base is never uncertain
    const auto base_only =
        co_llm_generate(*base, *assistant,
                        ConfidenceRule{ConfidenceStatistic::top1_next_prob, 0.0}, "q", params);
    CHECK(base_only.output.text == decode_single(*base, params).text);
    CHECK(base_only.spans.size() == 1);
    CHECK(base_only.spans[0].model_id == "base");

    // a policy that always names the assistant
    SelectorPolicy always_assist;
    always_assist.kind = SelectorPolicy::Kind::knn;
    always_assist.k = 1;
    always_assist.pool_ids = {"base", "assist"};
    always_assist.embedder = base;
    always_assist.memory = {{hash_embed("anything", 16, 1), "assist"}};
    const auto assist_only = co_llm_generate(*base, *assistant, always_assist, "q", params);
    CHECK(assist_only.output.text == decode_single(*assistant, params).text);
    CHECK(assist_only.spans.size() == 1);
    CHECK(assist_only.spans[0].model_id == "assist");
}

TEST_CASE("co_llm threshold deferral alternates with scripted parity confidence") {
    // base confident exactly at even positions
    auto base = parity_base("base", [](std::size_t len) { return len % 2 == 1; });
    auto assistant = std::make_shared<FnDistBackend>(
        desc("assist"), [](std::span<const int>) { return point_mass(3, 4); });
    GenerationParams params;
    params.max_new_tokens = 8;
    params.temperature = 0.0;

    const auto out = co_llm_generate(
        *base, *assistant, ConfidenceRule{ConfidenceStatistic::top1_next_prob, 0.9}, "q", params);
    REQUIRE(out.spans.size() == 8);
    for (std::size_t i = 0; i < out.spans.size(); ++i) {
        CHECK(out.spans[i].model_id == (i % 2 == 0 ? "base" : "assist"));
    }
    check_attribution_partitions(out);
}

TEST_CASE("mentor collab degenerate inspection probabilities") {
    auto make_gen = [] {
        return std::make_shared<FnDistBackend>(desc("gen"), [](std::span<const int> ctx) {
            const double a = 0.25 + 0.5 * ((ctx.size() % 2) ? 0.3 : 0.6);
            return std::vector<double>{a, 1.0 - a};
        });
    };
    auto generator = make_gen();
    auto mentor_same = std::make_shared<FnDistBackend>(
        desc("mentor"), [](std::span<const int> ctx) {
            const double a = 0.25 + 0.5 * ((ctx.size() % 2) ? 0.3 : 0.6);
            return std::vector<double>{a, 1.0 - a};
        });
    auto decider = mock("decider", {{"answers", {{"disagree", "mentor"}}}});
    GenerationParams params;
    params.max_new_tokens = 12;
    params.seed = 17;

    // inspect_prob 0: generator-only output
    const auto never = mentor_collab_generate(*generator, *mentor_same, 0.0,
                                              Selector(BackendPtr(decider)), 3, 99, "q", params);
    CHECK(never.output.text == decode_single(*generator, params).text);
    CHECK(never.log["inspections"].empty());

    // inspect_prob 1 with identical models: argmaxes always agree
    const auto always = mentor_collab_generate(*generator, *mentor_same, 1.0,
                                               Selector(BackendPtr(decider)), 3, 99, "q", params);
    CHECK(always.output.text == decode_single(*generator, params).text);
    CHECK(always.log["inspections"].size() == always.output.tokens->size());
    for (const auto& entry : always.log["inspections"]) CHECK(entry["differed"] == false);
}

TEST_CASE("mentor writes the patch where the models disagree") {
    auto generator = std::make_shared<FnDistBackend>(
        desc("gen"), [](std::span<const int>) { return point_mass(0, 4); });
    auto mentor = std::make_shared<FnDistBackend>(desc("mentor"), [](std::span<const int> ctx) {
        return ctx.size() == 5 ? point_mass(1, 4) : point_mass(0, 4);
    });
    auto decider = mock("decider", {{"answers", {{"disagree", "mentor"}}}});
    GenerationParams params;
    params.max_new_tokens = 10;
    params.temperature = 0.0;

    const auto out = mentor_collab_generate(*generator, *mentor, 1.0,
                                            Selector(BackendPtr(decider)), 3, 7, "q", params);
    REQUIRE(out.output.tokens.has_value());
    CHECK((*out.output.tokens)[5].token_id == 1);  // the mentor's divergent token
    bool mentor_wrote = false;
    for (const auto& s : out.spans) {
        if (s.model_id == "mentor") {
            mentor_wrote = true;
            CHECK(s.start == 5);
            CHECK(s.length == 3);
        }
    }
    CHECK(mentor_wrote);
    check_attribution_partitions(out);
    CHECK_THROWS_AS(mentor_collab_generate(*generator, *mentor, 1.5,
                                           Selector(BackendPtr(decider)), 3, 7, "q", params),
                    ArgumentError);
}

TEST_CASE("prompted selector policies route like the routing prompt") {
    auto pool = pool_of({mock("m1", {}), mock("m2", {})});
    SelectorPolicy prompted;
    prompted.kind = SelectorPolicy::Kind::prompted;
    prompted.pool_ids = pool.ids();
    prompted.model_block = render_model_block(pool);
    prompted.router = mock("router", {{"answers", {{"Candidate models", "go with m2"}}}});
    CHECK(route(prompted, "anything") == "m2");

    prompted.router = mock("router", {{"answers", {{"Candidate models", "hmm"}}}});
    CHECK(route(prompted, "anything") == "m1");  // unparseable falls back

    prompted.router = std::make_shared<DeadBackend>(desc("dead"));
    CHECK(route(prompted, "anything") == "m1");  // transport failure falls back
}

TEST_CASE("routing closure holds for arbitrary queries across policy kinds") {
    auto ra = mock("ra", {{"answers", {{"alpha", "A"}}}});
    auto rb = mock("rb", {{"answers", {{"beta", "B"}}}});
    auto pool = pool_of({ra, rb});
    std::vector<DatasetRecord> dev{mc_record("d1", "alpha one", "A"),
                                   mc_record("d2", "beta one", "B")};
    const SelectorPolicy knn = fit_trained_router(pool, dev, pool.ptr(0), 3);
    std::vector<DatasetRecord> tagged = dev;
    tagged[0].domain_tag = "t1";
    tagged[1].domain_tag = "t2";
    const SelectorPolicy tabular = fit_graph_router(pool, tagged, pool.ptr(0));
    SelectorPolicy prompted;
    prompted.kind = SelectorPolicy::Kind::prompted;
    prompted.pool_ids = pool.ids();
    prompted.model_block = render_model_block(pool);
    prompted.router = mock("router", {});  // always unparseable fallback

    const std::set<std::string> ids{"ra", "rb"};
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        std::string query;
        for (int c = 0; c < 12; ++c) query += static_cast<char>('a' + rng.below(26));
        CHECK(ids.count(route(knn, query)) == 1);
        CHECK(ids.count(route(tabular, query)) == 1);
        CHECK(ids.count(route(prompted, query)) == 1);
        CHECK(ids.count(route_task(tabular, query)) == 1);  // unseen task fallback
    }
}

TEST_CASE("switch generation accepts a fitted policy as the selector") {
    auto sw1 = std::make_shared<FnDistBackend>(
        desc("sw1"), [](std::span<const int>) { return point_mass(0, 4); });
    auto sw2 = std::make_shared<FnDistBackend>(
        desc("sw2"), [](std::span<const int>) { return point_mass(1, 4); });
    SelectorPolicy always_sw2;
    always_sw2.kind = SelectorPolicy::Kind::knn;
    always_sw2.k = 1;
    always_sw2.pool_ids = {"sw1", "sw2"};
    always_sw2.embedder = sw1;
    always_sw2.memory = {{hash_embed("anything", 16, 1), "sw2"}};
    GenerationParams params;
    params.max_new_tokens = 6;
    params.temperature = 0.0;
    const auto out =
        switch_generation(Selector(always_sw2), pool_of({sw1, sw2}), "q", 2, params);
    for (const auto& s : out.spans) CHECK(s.model_id == "sw2");
    REQUIRE(out.output.tokens.has_value());
    for (const auto& t : *out.output.tokens) CHECK(t.token_id == 1);
}
