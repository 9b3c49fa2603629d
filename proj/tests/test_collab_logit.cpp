#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "chorus/collab_logit.hpp"
#include "chorus/decode.hpp"
#include "chorus/errors.hpp"
#include "chorus/mock_backend.hpp"
#include "chorus/util.hpp"

using namespace chorus;
using nlohmann::json;

namespace {

TokenDistribution dist(std::vector<double> probs, const std::string& vocab = "v0") {
    return {vocab, std::move(probs)};
}

ModelDescriptor desc(const std::string& id, const std::string& vocab = "v0") {
    ModelDescriptor d;
    d.id = id;
    d.display_name = id;
    d.description = "d";
    d.vocab_group = vocab;
    return d;
}

class FnDistBackend : public ModelBackend {
public:
    using DistFn = std::function<std::vector<double>(std::span<const int>)>;
    FnDistBackend(ModelDescriptor d, DistFn fn) : d_(std::move(d)), fn_(std::move(fn)) {}
    const ModelDescriptor& descriptor() const override { return d_; }
    BackendCapabilities capabilities() const override {
        BackendCapabilities caps;
        caps.supports_text = true;
        caps.supports_token_distribution = true;
        return caps;
    }
    GenerationOutput generate_text(const std::string&, const GenerationParams&) override {
        return {d_.id, std::nullopt, FinishReason::stop};
    }
    TokenDistribution next_token_distribution(std::span<const int> context) override {
        return {d_.vocab_group, fn_(context)};
    }

private:
    ModelDescriptor d_;
    DistFn fn_;
};

BackendPtr fn_backend(const std::string& id, FnDistBackend::DistFn fn) {
    return std::make_shared<FnDistBackend>(desc(id), std::move(fn));
}

std::vector<double> random_simplex(Rng& rng, int size) {
    std::vector<double> p(size);
    double sum = 0.0;
    for (double& v : p) {
        v = rng.uniform() + 1e-6;
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

}  // namespace

TEST_CASE("mixing averages elementwise") {
    const TokenDistribution mixed = mix_distributions({dist({0.6, 0.4}), dist({0.2, 0.8})});
    CHECK(mixed.probs[0] == doctest::Approx(0.4));
    CHECK(mixed.probs[1] == doctest::Approx(0.6));

    const TokenDistribution solo = mix_distributions({dist({0.3, 0.7})});
    CHECK(solo.probs == std::vector<double>{0.3, 0.7});

    CHECK_THROWS_AS(mix_distributions({}), ArgumentError);
    CHECK_THROWS_AS(mix_distributions({dist({1.0}), dist({1.0}, "other")}), VocabError);
    CHECK_THROWS_AS(mix_distributions({dist({1.0}), dist({0.5, 0.5})}), VocabError);
}

TEST_CASE("mixing matches a naive elementwise-average oracle") {
    Rng rng(55);
    for (int trial = 0; trial < 40; ++trial) {
        const int size = 2 + static_cast<int>(rng.below(6));
        const int count = 1 + static_cast<int>(rng.below(5));
        std::vector<TokenDistribution> inputs;
        for (int i = 0; i < count; ++i) inputs.push_back(dist(random_simplex(rng, size)));
        const TokenDistribution mixed = mix_distributions(inputs);
        mixed.validate();
        for (int e = 0; e < size; ++e) {
            double expect = 0.0;
            for (const auto& d : inputs) expect += d.probs[e];
            expect /= count;
            CHECK(mixed.probs[e] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("mixing is permutation-invariant; the contrast is not") {
    Rng rng(7);
    std::vector<TokenDistribution> inputs{dist(random_simplex(rng, 4)),
                                          dist(random_simplex(rng, 4)),
                                          dist(random_simplex(rng, 4))};
    std::vector<TokenDistribution> reversed{inputs[2], inputs[1], inputs[0]};
    const auto a = mix_distributions(inputs);
    const auto b = mix_distributions(reversed);
    for (int e = 0; e < 4; ++e) CHECK(a.probs[e] == doctest::Approx(b.probs[e]).epsilon(1e-12));

    ContrastiveConfig cfg;
    cfg.k = 1;
    cfg.alpha = 0.5;
    const auto c1 = contrast_distributions(inputs, cfg);
    const auto c2 = contrast_distributions(reversed, cfg);
    bool differs = false;
    for (int e = 0; e < 4; ++e) {
        if (std::abs(c1.probs[e] - c2.probs[e]) > 1e-9) differs = true;
    }
    CHECK(differs);  // ranking-dependent by construction
}

TEST_CASE("contrast formula hand checks") {
    ContrastiveConfig cfg;
    cfg.k = 1;
    cfg.alpha = 1.0;
    // q = p1 + (p1 - p2) = [1.0, 0.0] before normalization
    const auto q = contrast_distributions({dist({0.6, 0.4}), dist({0.2, 0.8})}, cfg);
    CHECK(q.probs[0] == doctest::Approx(1.0));
    CHECK(q.probs[1] == doctest::Approx(0.0));

    // alpha = 0 degenerates to p1 exactly
    cfg.alpha = 0.0;
    const auto p1 = contrast_distributions({dist({0.6, 0.4}), dist({0.2, 0.8})}, cfg);
    CHECK(p1.probs == std::vector<double>{0.6, 0.4});

    // identical inputs: top and bottom sums cancel for any alpha
    cfg.alpha = 3.0;
    const auto same = contrast_distributions({dist({0.7, 0.3}), dist({0.7, 0.3})}, cfg);
    CHECK(same.probs[0] == doctest::Approx(0.7));
    CHECK(same.probs[1] == doctest::Approx(0.3));
}

TEST_CASE("contrast validates its configuration") {
    ContrastiveConfig cfg;
    cfg.k = 2;  // 2k > n
    CHECK_THROWS_AS(contrast_distributions({dist({1.0, 0.0}), dist({1.0, 0.0})}, cfg),
                    ArgumentError);
    cfg.k = 1;
    cfg.alpha = -0.1;
    CHECK_THROWS_AS(contrast_distributions({dist({1.0, 0.0}), dist({1.0, 0.0})}, cfg),
                    ArgumentError);
    CHECK_THROWS_AS(contrast_distributions({}, ContrastiveConfig{}), ArgumentError);
}

TEST_CASE("contrast clamps negatives and renormalizes to a valid distribution") {
    ContrastiveConfig cfg;
    cfg.k = 1;
    cfg.alpha = 5.0;  // large alpha forces negative raw mass
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<TokenDistribution> inputs{dist(random_simplex(rng, 5)),
                                              dist(random_simplex(rng, 5)),
                                              dist(random_simplex(rng, 5))};
        const auto q = contrast_distributions(inputs, cfg);
        q.validate();  // nonnegative, sums to one
    }

    // degenerate all-zero input falls back to the first distribution
    const TokenDistribution zero{"v0", {0.0, 0.0}};
    const auto fallback = contrast_distributions({zero, zero}, cfg);
    CHECK(fallback.probs == zero.probs);
}

TEST_CASE("contrast converges to p1 as alpha approaches zero") {
    Rng rng(13);
    const std::vector<TokenDistribution> inputs{dist(random_simplex(rng, 6)),
                                                dist(random_simplex(rng, 6)),
                                                dist(random_simplex(rng, 6)),
                                                dist(random_simplex(rng, 6))};
    ContrastiveConfig cfg;
    cfg.k = 2;
    cfg.alpha = 1e-9;
    const auto q = contrast_distributions(inputs, cfg);
    for (int e = 0; e < 6; ++e) {
        CHECK(std::abs(q.probs[e] - inputs[0].probs[e]) < 1e-8);
    }
}

TEST_CASE("fused decoding over a single model equals plain decoding") {
    auto solo = fn_backend("solo", [](std::span<const int> ctx) {
        const double a = 0.15 + 0.7 * ((ctx.size() % 5) / 5.0);
        return std::vector<double>{a, 1.0 - a};
    });
    GenerationParams params;
    params.max_new_tokens = 20;
    params.seed = 9;
    const auto fused = fused_decode(ModelPool({solo}), "q", params);
    const auto plain = decode_single(*solo, params);
    CHECK(fused.output.text == plain.text);
    CHECK(fused.warnings.empty());
}

TEST_CASE("identical distribution tables fuse into either model alone") {
    auto table = [](std::span<const int> ctx) {
        const double a = 0.2 + 0.15 * (ctx.size() % 4);
        return std::vector<double>{a, 1.0 - a};
    };
    auto m1 = fn_backend("m1", table);
    auto m2 = fn_backend("m2", table);
    GenerationParams params;
    params.max_new_tokens = 16;
    params.seed = 4;
    const auto fused = fused_decode(ModelPool({m1, m2}), "q", params);
    CHECK(fused.output.text == decode_single(*m1, params).text);
}

TEST_CASE("the fused argmax can differ from every individual argmax") {
    auto m1 = fn_backend("m1", [](std::span<const int>) {
        return std::vector<double>{0.5, 0.45, 0.05};
    });
    auto m2 = fn_backend("m2", [](std::span<const int>) {
        return std::vector<double>{0.05, 0.45, 0.5};
    });
    GenerationParams params;
    params.max_new_tokens = 1;
    params.temperature = 0.0;  // greedy

    const auto fused = fused_decode(ModelPool({m1, m2}), "q", params);
    const auto alone1 = decode_single(*m1, params);
    const auto alone2 = decode_single(*m2, params);
    REQUIRE(fused.output.tokens->size() == 1);
    CHECK((*fused.output.tokens)[0].token_id == 1);  // mean argmax
    CHECK((*alone1.tokens)[0].token_id == 0);
    CHECK((*alone2.tokens)[0].token_id == 2);
}

TEST_CASE("a model failing a step drops out of that step with a warning") {
    auto steady = fn_backend("steady", [](std::span<const int>) {
        return std::vector<double>{0.9, 0.1};
    });
    auto flaky = fn_backend("flaky", [](std::span<const int> ctx) -> std::vector<double> {
        if (ctx.size() == 2) throw TransportError("lost connection");
        return {0.9, 0.1};
    });
    GenerationParams params;
    params.max_new_tokens = 5;
    params.temperature = 0.0;
    const auto fused = fused_decode(ModelPool({steady, flaky}), "q", params);
    CHECK(fused.output.tokens->size() == 5);
    REQUIRE(fused.warnings.size() == 1);
    CHECK(fused.warnings[0].find("flaky") != std::string::npos);
    CHECK(fused.warnings[0].find("step 2") != std::string::npos);
}

TEST_CASE("dev ranking orders the pool descending with pool-order ties") {
    auto a = fn_backend("a", [](std::span<const int>) { return std::vector<double>{1.0, 0.0}; });
    auto b = fn_backend("b", [](std::span<const int>) { return std::vector<double>{1.0, 0.0}; });
    auto c = fn_backend("c", [](std::span<const int>) { return std::vector<double>{1.0, 0.0}; });
    const ModelPool pool({a, b, c});
    const auto ranking = rank_pool_by_dev(pool, [](ModelBackend& m) {
        if (m.descriptor().id == "b") return 0.9;
        return 0.5;
    });
    CHECK(ranking == std::vector<std::string>{"b", "a", "c"});
}

TEST_CASE("contrastive decoding with alpha 0 equals the top model alone") {
    auto strong = fn_backend("strong", [](std::span<const int> ctx) {
        const double a = 0.3 + 0.1 * (ctx.size() % 3);
        return std::vector<double>{a, 1.0 - a};
    });
    auto weak = fn_backend("weak", [](std::span<const int>) {
        return std::vector<double>{0.5, 0.5};
    });
    GenerationParams params;
    params.max_new_tokens = 12;
    params.seed = 21;
    ContrastiveConfig cfg;
    cfg.k = 1;
    cfg.alpha = 0.0;
    const auto out = contrastive_decode(
        ModelPool({weak, strong}),
        [](ModelBackend& m) { return m.descriptor().id == "strong" ? 1.0 : 0.0; }, cfg, "q",
        params);
    CHECK(out.output.text == decode_single(*strong, params).text);
}

TEST_CASE("contrastive decoding over identical models equals either alone") {
    auto table = [](std::span<const int> ctx) {
        const double a = 0.25 + 0.1 * (ctx.size() % 4);
        return std::vector<double>{a, 1.0 - a};
    };
    auto m1 = fn_backend("m1", table);
    auto m2 = fn_backend("m2", table);
    GenerationParams params;
    params.max_new_tokens = 10;
    params.seed = 2;
    ContrastiveConfig cfg;
    cfg.k = 1;
    cfg.alpha = 0.7;
    const auto out = contrastive_decode(ModelPool({m1, m2}),
                                        [](ModelBackend&) { return 0.5; }, cfg, "q", params);
    CHECK(out.output.text == decode_single(*m1, params).text);  // cancellation
}

TEST_CASE("contrastive rollout matches the hand-evaluated formula at every step") {
    // four models with context-dependent tables, k=1, alpha=0.5
    auto table_for = [](int salt) {
        return [salt](std::span<const int> ctx) {
            std::vector<double> p(3);
            double sum = 0.0;
            for (int e = 0; e < 3; ++e) {
                p[e] = 1.0 + ((salt * 7 + e * 3 + static_cast<int>(ctx.size()) * 5) % 11);
                sum += p[e];
            }
            for (double& v : p) v /= sum;
            return p;
        };
    };
    std::vector<BackendPtr> members;
    for (int i = 0; i < 4; ++i) {
        members.push_back(fn_backend("r" + std::to_string(i), table_for(i)));
    }
    const ModelPool pool(members);
    GenerationParams params;
    params.max_new_tokens = 5;
    params.temperature = 0.0;  // greedy: tokens are argmaxes of the combined dist
    ContrastiveConfig cfg;
    cfg.k = 1;
    cfg.alpha = 0.5;
    cfg.ranking = {"r0", "r1", "r2", "r3"};

    const auto rollout = contrastive_decode(pool, [](ModelBackend&) { return 0.0; }, cfg, "q",
                                            params);
    REQUIRE(rollout.output.tokens->size() == 5);

    // independent per-step evaluation of q = p1 + a*(p1 - p4)
    std::vector<int> ctx;
    for (int step = 0; step < 5; ++step) {
        const auto p1 = table_for(0)(ctx);
        const auto p4 = table_for(3)(ctx);
        std::vector<double> q(3);
        double sum = 0.0;
        for (int e = 0; e < 3; ++e) {
            q[e] = std::max(0.0, p1[e] + 0.5 * (p1[e] - p4[e]));
            sum += q[e];
        }
        int expect = 0;
        for (int e = 1; e < 3; ++e) {
            if (q[e] > q[expect]) expect = e;
        }
        CHECK((*rollout.output.tokens)[step].token_id == expect);
        ctx.push_back(expect);
    }
}
