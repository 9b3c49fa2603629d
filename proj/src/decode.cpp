#include "chorus/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chorus/errors.hpp"

namespace chorus {

TokenDistribution apply_sampling_transform(const TokenDistribution& dist, double temperature,
                                           double top_p) {
    TokenDistribution out;
    out.vocab_group = dist.vocab_group;
    out.probs.assign(dist.probs.size(), 0.0);

    if (temperature == 0.0) {
        out.probs[dist.argmax()] = 1.0;
        return out;
    }

    std::vector<double> scaled(dist.probs.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        scaled[i] = dist.probs[i] > 0.0 ? std::pow(dist.probs[i], 1.0 / temperature) : 0.0;
        sum += scaled[i];
    }
    if (sum <= 0.0) {
        out.probs[dist.argmax()] = 1.0;
        return out;
    }
    for (double& v : scaled) v /= sum;

    // Nucleus: keep the smallest prefix of the probability-sorted vocab whose
    // mass reaches top_p. Ties sort by index so the cut is deterministic.
    std::vector<int> order(scaled.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scaled[a] > scaled[b]; });
    double cum = 0.0;
    double kept = 0.0;
    for (int idx : order) {
        cum += scaled[idx];
        out.probs[idx] = scaled[idx];
        kept += scaled[idx];
        if (cum >= top_p - 1e-12) break;
    }
    for (double& v : out.probs) v /= kept;
    return out;
}

int sample_token(const TokenDistribution& dist, const GenerationParams& params, Rng& rng) {
    TokenDistribution transformed =
        apply_sampling_transform(dist, params.temperature, params.top_p);
    const double u = rng.uniform();
    double cum = 0.0;
    int last_positive = -1;
    for (std::size_t i = 0; i < transformed.probs.size(); ++i) {
        if (transformed.probs[i] <= 0.0) continue;
        last_positive = static_cast<int>(i);
        cum += transformed.probs[i];
        if (u < cum) return static_cast<int>(i);
    }
    return last_positive;  // rounding slack lands on the final positive entry
}

GenerationOutput decode_single(ModelBackend& backend, const GenerationParams& params) {
    params.validate();
    GenerationOutput out;
    out.tokens.emplace();
    out.finish_reason = FinishReason::length;
    Rng rng(params.seed);
    std::vector<int> context;
    const std::optional<int> eos = backend.eos_token_id();
    for (int step = 0; step < params.max_new_tokens; ++step) {
        TokenDistribution dist = next_token_distribution(backend, context);
        const int tok = sample_token(dist, params, rng);
        if (eos && tok == *eos) {
            out.finish_reason = FinishReason::stop;
            break;
        }
        out.tokens->push_back({tok, std::log(std::max(dist.probs[tok], 1e-300))});
        out.text += backend.token_piece(tok);
        context.push_back(tok);
    }
    return out;
}

}  // namespace chorus
