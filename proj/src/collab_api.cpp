#include "chorus/collab_api.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chorus/decode.hpp"
#include "chorus/errors.hpp"
#include "chorus/util.hpp"

namespace chorus {

using nlohmann::json;

ConfidenceStatistic confidence_statistic_from_string(const std::string& s) {
    if (s == "min_token_prob") return ConfidenceStatistic::min_token_prob;
    if (s == "geomean_token_prob") return ConfidenceStatistic::geomean_token_prob;
    if (s == "top1_next_prob") return ConfidenceStatistic::top1_next_prob;
    throw ConfigError("unknown confidence statistic '" + s + "'");
}

std::string to_string(ConfidenceStatistic s) {
    switch (s) {
        case ConfidenceStatistic::min_token_prob: return "min_token_prob";
        case ConfidenceStatistic::geomean_token_prob: return "geomean_token_prob";
        case ConfidenceStatistic::top1_next_prob: return "top1_next_prob";
    }
    return "geomean_token_prob";
}

double draft_confidence(const GenerationOutput& output, ConfidenceStatistic statistic) {
    if (!output.tokens) {
        throw CapabilityError("draft carries no token logprobs; cannot compute confidence");
    }
    const auto& tokens = *output.tokens;
    if (tokens.empty()) return 0.0;
    switch (statistic) {
        case ConfidenceStatistic::min_token_prob: {
            double lo = 0.0;
            for (const auto& t : tokens) lo = std::min(lo, t.logprob);
            return std::exp(lo);
        }
        case ConfidenceStatistic::geomean_token_prob: {
            double sum = 0.0;
            for (const auto& t : tokens) sum += t.logprob;
            return std::exp(sum / tokens.size());
        }
        case ConfidenceStatistic::top1_next_prob:
            return std::exp(tokens.front().logprob);
    }
    return 0.0;
}

namespace {

// Earliest whole-token pool id in the text; empty when none matches.
std::string parse_pool_id(const std::string& text, const std::vector<std::string>& ids) {
    std::string best;
    std::size_t best_pos = std::string::npos;
    for (const auto& id : ids) {
        std::size_t pos = find_whole_token(text, id);
        if (pos != std::string::npos && (best_pos == std::string::npos || pos < best_pos)) {
            best_pos = pos;
            best = id;
        }
    }
    return best;
}

// Shared token-loop state: context, output assembly, attribution spans.
struct LoopState {
    const GenerationParams& params;
    Rng rng;
    GenerationOutput out;
    std::vector<int> context;
    std::vector<AttributionSpan> spans;
    bool stopped = false;

    explicit LoopState(const GenerationParams& p) : params(p), rng(p.seed) {
        p.validate();
        out.tokens.emplace();
        out.finish_reason = FinishReason::length;
    }

    bool full() const { return static_cast<int>(context.size()) >= params.max_new_tokens; }
    bool done() const { return stopped || full(); }

    // Samples one token from `dist` on behalf of `producer`. Returns false
    // when the producer's EOS ends the sequence.
    bool emit(ModelBackend& producer, const TokenDistribution& dist, bool new_patch = false) {
        const int tok = sample_token(dist, params, rng);
        const auto eos = producer.eos_token_id();
        if (eos && tok == *eos) {
            stopped = true;
            out.finish_reason = FinishReason::stop;
            return false;
        }
        const std::string& id = producer.descriptor().id;
        if (spans.empty() || new_patch || spans.back().model_id != id) {
            spans.push_back({static_cast<int>(spans.size()), id,
                             static_cast<int>(context.size()), 0});
        }
        spans.back().length += 1;
        out.tokens->push_back({tok, std::log(std::max(dist.probs[tok], 1e-300))});
        out.text += producer.token_piece(tok);
        context.push_back(tok);
        return true;
    }

    AttributedOutput finish(json log = json::object()) && {
        return {std::move(out), std::move(spans), std::move(log)};
    }
};

void require_shared_vocab(const ModelBackend& a, const ModelBackend& b) {
    if (a.descriptor().vocab_group != b.descriptor().vocab_group) {
        throw VocabError(a.descriptor().id + " (" + a.descriptor().vocab_group + ") and " +
                         b.descriptor().id + " (" + b.descriptor().vocab_group +
                         ") do not share a vocab group");
    }
}

double top1_prob(const TokenDistribution& dist) { return dist.probs[dist.argmax()]; }

}  // namespace

std::string render_model_block(const ModelPool& pool) {
    std::string block;
    for (const auto& m : pool) {
        block += "- " + m->descriptor().id + ": " + m->descriptor().description + "\n";
    }
    return block;
}

std::string render_route_prompt(const ModelPool& pool, const std::string& query,
                                const PromptLibrary& prompts) {
    return prompts.render("route", {{"query", query}, {"models", render_model_block(pool)}});
}

std::string prompt_route(ModelBackend& router, const ModelPool& pool, const std::string& query,
                         const PromptLibrary& prompts, std::uint64_t seed,
                         std::vector<std::string>* warnings) {
    if (pool.empty()) throw ArgumentError("cannot route over an empty pool");
    for (const auto& m : pool) {
        if (m->descriptor().description.empty()) {
            throw ArgumentError("model '" + m->descriptor().id +
                                "' has no description for prompt routing");
        }
    }
    GenerationParams params;
    params.seed = seed;
    std::string reply;
    try {
        reply = generate(router, render_route_prompt(pool, query, prompts), params).text;
    } catch (const TransportError& e) {
        if (warnings) warnings->push_back(std::string("router unreachable: ") + e.what());
        return pool.at(0).descriptor().id;
    }
    std::string id = parse_pool_id(reply, pool.ids());
    return id.empty() ? pool.at(0).descriptor().id : id;
}

SelectorPolicy fit_trained_router(const ModelPool& pool, const std::vector<DatasetRecord>& dev,
                                  BackendPtr embedder, int k, const GenerationParams& params) {
    if (dev.empty()) throw ConfigError("trained router needs a nonempty dev set");
    if (pool.empty()) throw ConfigError("trained router needs a nonempty pool");
    if (!embedder) throw ConfigError("trained router needs an embedder");
    SelectorPolicy policy;
    policy.kind = SelectorPolicy::Kind::knn;
    policy.k = k;
    policy.pool_ids = pool.ids();
    policy.embedder = embedder;
    for (const auto& record : dev) {
        if (!record.objective()) {
            throw ConfigError("trained router dev instance '" + record.id +
                              "' has no gold answer");
        }
        int best = 0;
        double best_score = -1.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            GenerationOutput out = generate(pool.at(i), record.prompt, params);
            double s = score_instance(record, out.text).value;
            if (s > best_score) {  // ties stay with the earlier pool member
                best_score = s;
                best = static_cast<int>(i);
            }
        }
        policy.memory.push_back({embed_text(*embedder, record.prompt), policy.pool_ids[best]});
    }
    return policy;
}

SelectorPolicy fit_graph_router(const ModelPool& pool, const std::vector<DatasetRecord>& dev,
                                BackendPtr embedder, const GenerationParams& params) {
    if (dev.empty()) throw ConfigError("graph router needs a nonempty dev set");
    if (!embedder) throw ConfigError("graph router needs an embedder");
    SelectorPolicy policy;
    policy.kind = SelectorPolicy::Kind::tabular;
    policy.pool_ids = pool.ids();
    policy.embedder = embedder;

    std::vector<std::string> task_order;
    std::map<std::string, std::vector<std::pair<double, int>>> sums;  // task -> per-model (sum, n)
    std::vector<std::pair<double, int>> global(pool.size(), {0.0, 0});
    for (const auto& record : dev) {
        if (record.domain_tag.empty()) {
            throw ConfigError("graph router dev instance '" + record.id + "' has no task tag");
        }
        if (!sums.count(record.domain_tag)) {
            task_order.push_back(record.domain_tag);
            sums[record.domain_tag].assign(pool.size(), {0.0, 0});
        }
        auto& per_model = sums[record.domain_tag];
        for (std::size_t i = 0; i < pool.size(); ++i) {
            GenerationOutput out = generate(pool.at(i), record.prompt, params);
            double s = score_instance(record, out.text).value;
            per_model[i].first += s;
            per_model[i].second += 1;
            global[i].first += s;
            global[i].second += 1;
        }
        policy.task_memory.push_back({embed_text(*embedder, record.prompt), record.domain_tag});
    }
    for (const auto& task : task_order) {
        std::vector<double> scores;
        for (const auto& [sum, n] : sums[task]) scores.push_back(n ? sum / n : 0.0);
        policy.task_scores.emplace_back(task, std::move(scores));
    }
    for (const auto& [sum, n] : global) policy.global_means.push_back(n ? sum / n : 0.0);
    return policy;
}

namespace {

// Nearest stored embeddings, stable under distance ties.
std::vector<std::size_t> nearest(const std::vector<SelectorPolicy::Memory>& memory,
                                 const std::vector<double>& query, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(memory.size());
    for (std::size_t i = 0; i < memory.size(); ++i) {
        ranked.emplace_back(cosine_distance(memory[i].embedding, query), i);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) out.push_back(ranked[i].second);
    return out;
}

std::string argmax_model(const std::vector<std::string>& pool_ids,
                         const std::vector<double>& scores) {
    int best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = static_cast<int>(i);
    }
    return pool_ids[best];
}

}  // namespace

std::string route(const SelectorPolicy& policy, const std::string& query, std::uint64_t seed) {
    if (policy.pool_ids.empty()) throw ArgumentError("selector policy has an empty pool");
    switch (policy.kind) {
        case SelectorPolicy::Kind::knn: {
            if (policy.memory.empty()) throw ArgumentError("k-NN policy has not been fitted");
            if (!policy.embedder) throw ArgumentError("k-NN policy has no embedder");
            const auto query_emb = embed_text(*policy.embedder, query);
            auto picks = nearest(policy.memory, query_emb, static_cast<std::size_t>(policy.k));
            // Plurality among neighbor labels, ties toward earlier pool order.
            std::map<std::string, int> counts;
            for (auto idx : picks) counts[policy.memory[idx].label] += 1;
            std::string best;
            int best_count = -1;
            for (const auto& id : policy.pool_ids) {
                auto it = counts.find(id);
                if (it != counts.end() && it->second > best_count) {
                    best_count = it->second;
                    best = id;
                }
            }
            return best.empty() ? policy.pool_ids[0] : best;
        }
        case SelectorPolicy::Kind::tabular: {
            if (policy.task_memory.empty()) {
                throw ArgumentError("tabular policy has not been fitted");
            }
            if (!policy.embedder) throw ArgumentError("tabular policy has no embedder");
            const auto query_emb = embed_text(*policy.embedder, query);
            auto picks = nearest(policy.task_memory, query_emb, 1);
            return route_task(policy, policy.task_memory[picks.front()].label);
        }
        case SelectorPolicy::Kind::prompted: {
            if (!policy.router) throw ArgumentError("prompted policy has no router");
            GenerationParams params;
            params.seed = seed;
            const std::string prompt = PromptLibrary::defaults().render(
                "route", {{"query", query}, {"models", policy.model_block}});
            std::string reply;
            try {
                reply = generate(*policy.router, prompt, params).text;
            } catch (const TransportError&) {
                return policy.pool_ids[0];
            }
            std::string id = parse_pool_id(reply, policy.pool_ids);
            return id.empty() ? policy.pool_ids[0] : id;
        }
    }
    return policy.pool_ids[0];
}

std::string route_task(const SelectorPolicy& policy, const std::string& task) {
    if (policy.kind != SelectorPolicy::Kind::tabular) {
        throw ArgumentError("route_task needs a tabular policy");
    }
    for (const auto& [name, scores] : policy.task_scores) {
        if (name == task) return argmax_model(policy.pool_ids, scores);
    }
    return argmax_model(policy.pool_ids, policy.global_means);  // unseen task
}

CascadeResult cascade(const ModelPool& pool, const std::string& query, const ConfidenceRule& rule,
                      const GenerationParams& params) {
    if (pool.empty()) throw ArgumentError("cascade needs a nonempty pool");
    CascadeResult result;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const bool last = i + 1 == pool.size();
        GenerationOutput draft;
        try {
            draft = generate(pool.at(i), query, params);
        } catch (const TransportError& e) {
            if (last) throw;  // nobody left to defer to
            result.warnings.push_back(pool.at(i).descriptor().id + " skipped: " + e.what());
            result.confidences.push_back(std::nullopt);
            continue;
        }
        const double conf = draft_confidence(draft, rule.statistic);
        result.confidences.push_back(conf);
        if (conf >= rule.threshold || last) {
            result.output = std::move(draft);
            result.deciding_id = pool.at(i).descriptor().id;
            result.deciding_index = static_cast<int>(i);
            return result;
        }
    }
    throw TransportError("cascade exhausted the pool");  // unreachable
}

AttributedOutput nudging_generate(ModelBackend& base, const ModelPool& nudgers,
                                  const std::string& query, const ConfidenceRule& rule,
                                  int nudge_cap, const GenerationParams& params) {
    (void)query;  // token loops run in id space; the query keys nothing here
    if (nudgers.empty()) throw ArgumentError("nudging needs at least one nudger");
    if (nudge_cap < 1) throw ArgumentError("nudge_cap must be at least 1");
    for (const auto& n : nudgers) require_shared_vocab(base, *n);
    ModelBackend& nudger = nudgers.at(0);

    LoopState state(params);
    int nudged_total = 0;
    while (!state.done()) {
        TokenDistribution base_dist = next_token_distribution(base, state.context);
        if (top1_prob(base_dist) < rule.threshold) {
            // Base is uncertain: the nudger writes until the base recovers or
            // the cap is reached, then control returns to the base.
            int nudged = 0;
            while (nudged < nudge_cap && !state.done()) {
                TokenDistribution nudge_dist = next_token_distribution(nudger, state.context);
                if (!state.emit(nudger, nudge_dist)) break;
                ++nudged;
                ++nudged_total;
                if (state.done()) break;
                base_dist = next_token_distribution(base, state.context);
                if (top1_prob(base_dist) >= rule.threshold) break;
            }
            if (state.done()) break;
        }
        if (!state.emit(base, base_dist)) break;
    }
    return std::move(state).finish(json{{"nudged_tokens", nudged_total}});
}

AttributedOutput switch_generation(const Selector& selector, const ModelPool& pool,
                                   const std::string& query, int patch_size,
                                   const GenerationParams& params,
                                   const PromptLibrary& prompts) {
    if (pool.empty()) throw ArgumentError("switch generation needs a nonempty pool");
    if (patch_size < 1) throw ArgumentError("patch_size must be at least 1");
    for (const auto& m : pool) require_shared_vocab(pool.at(0), *m);

    LoopState state(params);
    const std::string model_block = render_model_block(pool);
    std::string current = pool.at(0).descriptor().id;
    int patch_index = 0;
    while (!state.done()) {
        std::string chosen;
        if (std::holds_alternative<BackendPtr>(selector)) {
            GenerationParams sel_params;
            sel_params.seed = params.seed;
            const std::string prompt =
                prompts.render("switch_select", {{"query", query},
                                                 {"context", state.out.text},
                                                 {"patch_index", std::to_string(patch_index)},
                                                 {"models", model_block}});
            chosen = parse_pool_id(generate(*std::get<BackendPtr>(selector), prompt, sel_params).text,
                                   pool.ids());
        } else {
            chosen = route(std::get<SelectorPolicy>(selector),
                           query + "\n[patch " + std::to_string(patch_index) + "]\n" +
                               state.out.text,
                           params.seed);
            if (!pool.contains(chosen)) chosen.clear();
        }
        if (chosen.empty()) chosen = current;  // unknown selector output
        current = chosen;
        ModelBackend& writer = pool.by_id(current);
        bool new_patch = true;
        for (int t = 0; t < patch_size && !state.done(); ++t) {
            TokenDistribution dist = next_token_distribution(writer, state.context);
            if (!state.emit(writer, dist, new_patch)) break;
            new_patch = false;
        }
        ++patch_index;
    }
    return std::move(state).finish(json{{"patches", patch_index}});
}

AttributedOutput co_llm_generate(ModelBackend& base, ModelBackend& assistant,
                                 const DeferralPolicy& deferral, const std::string& query,
                                 const GenerationParams& params) {
    require_shared_vocab(base, assistant);
    LoopState state(params);
    while (!state.done()) {
        bool use_base = true;
        if (std::holds_alternative<ConfidenceRule>(deferral)) {
            const auto& rule = std::get<ConfidenceRule>(deferral);
            TokenDistribution base_dist = next_token_distribution(base, state.context);
            use_base = top1_prob(base_dist) >= rule.threshold;
            if (use_base) {
                if (!state.emit(base, base_dist)) break;
                continue;
            }
        } else {
            std::string key = query;
            key += "\n[pos " + std::to_string(state.context.size()) + "]";
            const std::string id =
                route(std::get<SelectorPolicy>(deferral), key, params.seed);
            use_base = id != assistant.descriptor().id;
            if (use_base) {
                TokenDistribution base_dist = next_token_distribution(base, state.context);
                if (!state.emit(base, base_dist)) break;
                continue;
            }
        }
        TokenDistribution assist_dist = next_token_distribution(assistant, state.context);
        if (!state.emit(assistant, assist_dist)) break;
    }
    return std::move(state).finish();
}

AttributedOutput mentor_collab_generate(ModelBackend& generator, ModelBackend& mentor,
                                        double inspect_prob, const Selector& decider,
                                        int patch_size, std::uint64_t inspect_seed,
                                        const std::string& query, const GenerationParams& params,
                                        const PromptLibrary& prompts) {
    if (inspect_prob < 0.0 || inspect_prob > 1.0) {
        throw ArgumentError("inspect_prob must lie in [0,1]");
    }
    if (patch_size < 1) throw ArgumentError("patch_size must be at least 1");
    require_shared_vocab(generator, mentor);

    LoopState state(params);
    Rng inspect_rng(inspect_seed);  // separate stream so inspection never
                                    // perturbs token sampling
    json inspections = json::array();
    while (!state.done()) {
        const bool inspect = inspect_rng.uniform() < inspect_prob;
        TokenDistribution gen_dist = next_token_distribution(generator, state.context);
        if (inspect) {
            TokenDistribution mentor_dist = next_token_distribution(mentor, state.context);
            if (gen_dist.argmax() != mentor_dist.argmax()) {
                ModelBackend* writer = &generator;
                if (std::holds_alternative<BackendPtr>(decider)) {
                    GenerationParams dec_params;
                    dec_params.seed = params.seed;
                    const std::string prompt = prompts.render(
                        "mentor_decide", {{"query", query}, {"context", state.out.text}});
                    const std::string reply =
                        generate(*std::get<BackendPtr>(decider), prompt, dec_params).text;
                    if (find_whole_token(reply, "mentor") != std::string::npos ||
                        find_whole_token(reply, mentor.descriptor().id) != std::string::npos) {
                        writer = &mentor;
                    }
                } else {
                    const std::string id = route(std::get<SelectorPolicy>(decider),
                                                 query + "\n[pos " +
                                                     std::to_string(state.context.size()) + "]",
                                                 params.seed);
                    if (id == mentor.descriptor().id) writer = &mentor;
                }
                inspections.push_back({{"position", state.context.size()},
                                       {"differed", true},
                                       {"writer", writer->descriptor().id}});
                bool new_patch = true;
                for (int t = 0; t < patch_size && !state.done(); ++t) {
                    TokenDistribution dist = next_token_distribution(*writer, state.context);
                    if (!state.emit(*writer, dist, new_patch)) break;
                    new_patch = false;
                }
                continue;
            }
            inspections.push_back({{"position", state.context.size()}, {"differed", false}});
        }
        if (!state.emit(generator, gen_dist)) break;
    }
    return std::move(state).finish(json{{"inspections", std::move(inspections)}});
}

}  // namespace chorus
