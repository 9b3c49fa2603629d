#include "chorus/model.hpp"

#include <cmath>

namespace chorus {

std::string to_string(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "error";
}

void TokenDistribution::validate() const {
    if (probs.empty()) throw VocabError("empty token distribution");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw VocabError("token distribution has a negative or NaN entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw VocabError("token distribution sums to " + std::to_string(sum) + ", expected 1");
    }
}

int TokenDistribution::argmax() const {
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.size()); ++i) {
        if (probs[i] > probs[best]) best = i;
    }
    return best;
}

GenerationOutput generate(ModelBackend& backend, const std::string& prompt,
                          const GenerationParams& params) {
    if (!backend.capabilities().supports_text) {
        throw CapabilityError(backend.descriptor().id + " does not support text generation");
    }
    params.validate();
    GenerationOutput out = backend.generate_text(prompt, params);
    if (out.tokens && static_cast<int>(out.tokens->size()) > params.max_new_tokens) {
        out.tokens->resize(params.max_new_tokens);
        out.finish_reason = FinishReason::length;
    }
    return out;
}

TokenDistribution next_token_distribution(ModelBackend& backend, std::span<const int> context) {
    if (!backend.capabilities().supports_token_distribution) {
        throw CapabilityError(backend.descriptor().id + " does not support token distributions");
    }
    TokenDistribution dist = backend.next_token_distribution(context);
    dist.validate();
    return dist;
}

std::vector<double> embed_text(ModelBackend& backend, const std::string& text) {
    if (!backend.capabilities().supports_embedding) {
        throw CapabilityError(backend.descriptor().id + " does not support embeddings");
    }
    return backend.embed_text(text);
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ArgumentError("embedding dimensions differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 && nb == 0.0) return 0.0;
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace chorus
