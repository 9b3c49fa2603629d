#include "chorus/collab_logit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chorus/decode.hpp"
#include "chorus/errors.hpp"
#include "chorus/util.hpp"

namespace chorus {

namespace {

void require_compatible(const TokenDistribution& a, const TokenDistribution& b) {
    if (a.vocab_group != b.vocab_group) {
        throw VocabError("distributions from vocab groups '" + a.vocab_group + "' and '" +
                         b.vocab_group + "' cannot be combined");
    }
    if (a.probs.size() != b.probs.size()) {
        throw VocabError("distributions over the same vocab group differ in size (" +
                         std::to_string(a.probs.size()) + " vs " +
                         std::to_string(b.probs.size()) + ")");
    }
}

void require_shared_vocab_pool(const ModelPool& pool) {
    for (const auto& m : pool) {
        if (m->descriptor().vocab_group != pool.at(0).descriptor().vocab_group) {
            throw VocabError("pool members do not share a vocab group");
        }
    }
}

}  // namespace

TokenDistribution mix_distributions(const std::vector<TokenDistribution>& dists) {
    if (dists.empty()) throw ArgumentError("cannot mix an empty distribution list");
    for (const auto& d : dists) require_compatible(dists[0], d);
    TokenDistribution out;
    out.vocab_group = dists[0].vocab_group;
    out.probs.assign(dists[0].probs.size(), 0.0);
    for (const auto& d : dists) {
        for (std::size_t i = 0; i < out.probs.size(); ++i) out.probs[i] += d.probs[i];
    }
    for (double& p : out.probs) p /= dists.size();
    return out;
}

TokenDistribution contrast_distributions(const std::vector<TokenDistribution>& ranked,
                                         const ContrastiveConfig& cfg) {
    const int n = static_cast<int>(ranked.size());
    if (n == 0) throw ArgumentError("contrastive combination needs at least one distribution");
    if (cfg.k < 1 || 2 * cfg.k > n) {
        throw ArgumentError("contrastive k must satisfy 1 <= k and 2k <= n (k=" +
                            std::to_string(cfg.k) + ", n=" + std::to_string(n) + ")");
    }
    if (cfg.alpha < 0.0) throw ArgumentError("contrastive alpha must be non-negative");
    for (const auto& d : ranked) require_compatible(ranked[0], d);
    if (cfg.alpha == 0.0) return ranked[0];  // the formula degenerates exactly

    TokenDistribution out;
    out.vocab_group = ranked[0].vocab_group;
    const std::size_t v = ranked[0].probs.size();
    out.probs.assign(v, 0.0);
    for (std::size_t i = 0; i < v; ++i) {
        double contrast = 0.0;
        for (int t = 0; t < cfg.k; ++t) contrast += ranked[t].probs[i];
        for (int b = n - cfg.k; b < n; ++b) contrast -= ranked[b].probs[i];
        const double q = ranked[0].probs[i] + cfg.alpha * contrast;
        out.probs[i] = q > 0.0 ? q : 0.0;  // the raw formula may go negative
    }
    const double sum = std::accumulate(out.probs.begin(), out.probs.end(), 0.0);
    if (sum <= 0.0) return ranked[0];  // everything clamped away
    for (double& p : out.probs) p /= sum;
    return out;
}

namespace {

// Shared autoregressive loop: `combine` folds the per-model distributions
// fetched at the current context into the sampling distribution.
LogitDecodeResult decode_loop(
    const ModelPool& pool, const GenerationParams& params,
    const std::function<TokenDistribution(const std::vector<std::optional<TokenDistribution>>&)>&
        combine) {
    params.validate();
    require_shared_vocab_pool(pool);

    LogitDecodeResult result;
    result.output.tokens.emplace();
    result.output.finish_reason = FinishReason::length;
    Rng rng(params.seed);
    std::vector<int> context;
    ModelBackend& lead = pool.at(0);
    const std::optional<int> eos = lead.eos_token_id();

    for (int step = 0; step < params.max_new_tokens; ++step) {
        // The n fetches are independent; failures drop that model from the
        // step and are logged.
        std::vector<std::optional<TokenDistribution>> dists(pool.size());
        parallel_for(static_cast<int>(pool.size()), [&](int i) {
            try {
                dists[i] = next_token_distribution(pool.at(i), context);
            } catch (const Error&) {
                dists[i] = std::nullopt;  // recorded below, outside the parallel region
            }
        });
        for (std::size_t i = 0; i < dists.size(); ++i) {
            if (!dists[i]) {
                result.warnings.push_back(pool.at(i).descriptor().id + " failed at step " +
                                          std::to_string(step));
            }
        }
        const TokenDistribution mixed = combine(dists);
        const int tok = sample_token(mixed, params, rng);
        if (eos && tok == *eos) {
            result.output.finish_reason = FinishReason::stop;
            break;
        }
        result.output.tokens->push_back({tok, std::log(std::max(mixed.probs[tok], 1e-300))});
        result.output.text += lead.token_piece(tok);
        context.push_back(tok);
    }
    return result;
}

}  // namespace

LogitDecodeResult fused_decode(const ModelPool& pool, const std::string& query,
                               const GenerationParams& params) {
    (void)query;  // fusion runs in token-id space; the query keys nothing here
    if (pool.empty()) throw ArgumentError("fused decoding needs a nonempty pool");
    return decode_loop(pool, params, [&](const auto& dists) {
        std::vector<TokenDistribution> usable;
        for (const auto& d : dists) {
            if (d) usable.push_back(*d);
        }
        if (usable.empty()) throw TransportError("every model failed this decode step");
        return mix_distributions(usable);
    });
}

std::vector<std::string> rank_pool_by_dev(const ModelPool& pool,
                                          const std::function<double(ModelBackend&)>& dev_eval) {
    std::vector<double> scores(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) scores[i] = dev_eval(pool.at(i));
    std::vector<int> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    std::vector<std::string> ranking;
    ranking.reserve(order.size());
    for (int idx : order) ranking.push_back(pool.at(idx).descriptor().id);
    return ranking;
}

LogitDecodeResult contrastive_decode(const ModelPool& pool,
                                     const std::function<double(ModelBackend&)>& dev_eval,
                                     ContrastiveConfig cfg, const std::string& query,
                                     const GenerationParams& params) {
    (void)query;
    if (pool.empty()) throw ArgumentError("contrastive decoding needs a nonempty pool");
    if (cfg.ranking.empty()) cfg.ranking = rank_pool_by_dev(pool, dev_eval);
    if (cfg.ranking.size() != pool.size()) {
        throw ArgumentError("contrastive ranking must cover the whole pool");
    }
    std::vector<int> rank_index;
    rank_index.reserve(cfg.ranking.size());
    for (const auto& id : cfg.ranking) {
        const int idx = pool.index_of(id);
        if (idx < 0) throw ArgumentError("ranking names unknown model '" + id + "'");
        rank_index.push_back(idx);
    }
    return decode_loop(pool, params, [&, rank_index](const auto& dists) {
        // Failed fetches drop out of the ranking for this step; when too few
        // models remain to contrast, the best available distribution stands.
        std::vector<TokenDistribution> ranked;
        ranked.reserve(rank_index.size());
        for (int idx : rank_index) {
            if (dists[idx]) ranked.push_back(*dists[idx]);
        }
        if (ranked.empty()) throw TransportError("every model failed this decode step");
        if (2 * cfg.k > static_cast<int>(ranked.size())) return ranked[0];
        return contrast_distributions(ranked, cfg);
    });
}

}  // namespace chorus
