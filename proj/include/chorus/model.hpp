#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chorus/errors.hpp"
#include "chorus/tensor.hpp"

namespace chorus {

struct ModelDescriptor {
    std::string id;
    std::string display_name;
    std::string description;       // consumed by prompt routing / selection
    std::string vocab_group;       // equal tags share tokenization
    std::string architecture_tag;
    std::uint64_t param_count = 0; // feeds the cost model
};

struct GenerationParams {
    int max_new_tokens = 512;      // 1024 for code tasks
    double temperature = 0.7;
    double top_p = 0.9;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_new_tokens <= 0) throw ArgumentError("max_new_tokens must be positive");
        if (temperature < 0.0) throw ArgumentError("temperature must be non-negative");
        if (top_p <= 0.0 || top_p > 1.0) throw ArgumentError("top_p must be in (0,1]");
    }
};

enum class FinishReason { stop, length, error };

std::string to_string(FinishReason r);

struct TokenLogprob {
    int token_id = 0;
    double logprob = 0.0;  // always <= 0
};

struct GenerationOutput {
    std::string text;
    std::optional<std::vector<TokenLogprob>> tokens;
    FinishReason finish_reason = FinishReason::stop;
};

// Normalized probability vector over a shared vocabulary.
struct TokenDistribution {
    std::string vocab_group;
    std::vector<double> probs;

    // Nonnegative entries summing to 1 within 1e-9.
    void validate() const;
    int argmax() const;
};

struct BackendCapabilities {
    bool supports_text = false;
    bool supports_token_distribution = false;
    bool supports_weights = false;
    bool supports_embedding = false;
};

// A generative endpoint. Implementations must be safely invocable from
// multiple concurrent tasks; every call is stateless from the caller's view.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual const ModelDescriptor& descriptor() const = 0;
    virtual BackendCapabilities capabilities() const = 0;

    virtual GenerationOutput generate_text(const std::string& prompt,
                                           const GenerationParams& params) = 0;

    virtual TokenDistribution next_token_distribution(std::span<const int> context) {
        (void)context;
        throw CapabilityError(descriptor().id + " does not expose token distributions");
    }

    virtual std::vector<double> embed_text(const std::string& text) {
        (void)text;
        throw CapabilityError(descriptor().id + " does not expose embeddings");
    }

    // Named parameter tensors, for weight-level collaboration.
    virtual const TensorMap& weights() {
        throw CapabilityError(descriptor().id + " does not expose weights");
    }

    // End-of-sequence token id for the backend's vocab, when it has one.
    virtual std::optional<int> eos_token_id() const { return std::nullopt; }

    // Detokenization of a single id; loops concatenate these to build text.
    virtual std::string token_piece(int token_id) const {
        return "[" + std::to_string(token_id) + "]";
    }
};

using BackendPtr = std::shared_ptr<ModelBackend>;

// Capability-gated entry points. All orchestration code goes through these
// so a missing flag always fails loudly instead of silently degrading.
GenerationOutput generate(ModelBackend& backend, const std::string& prompt,
                          const GenerationParams& params);
TokenDistribution next_token_distribution(ModelBackend& backend, std::span<const int> context);
std::vector<double> embed_text(ModelBackend& backend, const std::string& text);

// Cosine distance (1 - cosine similarity); zero-norm inputs are maximally far
// from everything except another zero vector.
double cosine_distance(std::span<const double> a, std::span<const double> b);

}  // namespace chorus
