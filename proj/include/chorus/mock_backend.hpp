#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chorus/model.hpp"

namespace chorus {

// Scripted backend behavior, loaded from a JSON file keyed by instance id
// and context key. Unscripted prompts fall back to a deterministic string
// derived from a seeded hash; unscripted distribution contexts yield the
// uniform distribution.
struct MockScript {
    struct Answer {
        std::string text;
        std::vector<double> token_probs;  // optional per-token probabilities
    };

    // Keys match a prompt by exact equality, by "a&&b" composite substring
    // containment, or by plain substring. The most specific match wins.
    std::map<std::string, Answer> answers;

    // Keyed by comma-joined context token ids ("" for the empty context).
    std::map<std::string, std::vector<double>> distributions;

    std::uint64_t fallback_seed = 0;
    std::uint64_t embedding_seed = 17;
    int vocab_size = 0;  // 0 means no token-distribution support
    std::optional<int> eos_token_id;
    double default_token_prob = 1.0;  // confidence attached to unscripted drafts
    int embedding_dim = 64;
    std::map<int, std::string> token_pieces;
    std::optional<TensorMap> weights;

    static MockScript from_json(const nlohmann::json& j);
    static MockScript from_file(const std::string& path);
};

class MockBackend : public ModelBackend {
public:
    MockBackend(ModelDescriptor descriptor, MockScript script);

    const ModelDescriptor& descriptor() const override { return descriptor_; }
    BackendCapabilities capabilities() const override;

    GenerationOutput generate_text(const std::string& prompt,
                                   const GenerationParams& params) override;
    TokenDistribution next_token_distribution(std::span<const int> context) override;
    std::vector<double> embed_text(const std::string& text) override;
    const TensorMap& weights() override;

    std::optional<int> eos_token_id() const override { return script_.eos_token_id; }
    std::string token_piece(int token_id) const override;

    const MockScript& script() const { return script_; }

private:
    const MockScript::Answer* lookup_answer(const std::string& prompt) const;

    ModelDescriptor descriptor_;
    MockScript script_;
};

// Seeded feature-hash of character n-grams (n = 1..3) into a fixed-dim,
// L2-normalized vector. Deterministic and distance-meaningful; the empty
// string maps to the zero vector.
std::vector<double> hash_embed(const std::string& text, int dim, std::uint64_t seed);

}  // namespace chorus
