#pragma once

#include <functional>
#include <string>
#include <vector>

#include "chorus/model.hpp"
#include "chorus/pool.hpp"

namespace chorus {

// Elementwise arithmetic mean over same-vocab distributions.
TokenDistribution mix_distributions(const std::vector<TokenDistribution>& dists);

struct ContrastiveConfig {
    int k = 1;
    double alpha = 0.1;
    std::vector<std::string> ranking;  // model ids, descending dev performance
};

// q = p1 + alpha * (p1 + ... + pk - p_{n-k+1} - ... - p_n), clamped at zero
// and renormalized. All-zero results fall back to p1. Inputs must be ordered
// per the config's ranking.
TokenDistribution contrast_distributions(const std::vector<TokenDistribution>& ranked,
                                         const ContrastiveConfig& cfg);

struct LogitDecodeResult {
    GenerationOutput output;
    std::vector<std::string> warnings;  // per-step fetch failures
};

// Autoregressive loop over the pooled mean distribution: fetch each model's
// next-token distribution at the shared context, mix, sample.
LogitDecodeResult fused_decode(const ModelPool& pool, const std::string& query,
                               const GenerationParams& params);

// Ranks the pool by dev score (descending, ties to pool order).
std::vector<std::string> rank_pool_by_dev(const ModelPool& pool,
                                          const std::function<double(ModelBackend&)>& dev_eval);

// Autoregressive loop applying the contrastive combination per step. An
// empty cfg.ranking is computed from the dev evaluator first.
LogitDecodeResult contrastive_decode(const ModelPool& pool,
                                     const std::function<double(ModelBackend&)>& dev_eval,
                                     ContrastiveConfig cfg, const std::string& query,
                                     const GenerationParams& params);

}  // namespace chorus
