#include "chorus/mock_backend.hpp"

#include <cmath>
#include <fstream>

#include "chorus/errors.hpp"
#include "chorus/util.hpp"

namespace chorus {

using nlohmann::json;

namespace {

std::vector<std::string> split_composite(const std::string& key) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = key.find("&&", pos);
        if (next == std::string::npos) {
            parts.push_back(key.substr(pos));
            return parts;
        }
        parts.push_back(key.substr(pos, next - pos));
        pos = next + 2;
    }
}

Tensor tensor_from_json(const std::string& name, const json& j) {
    Tensor t;
    if (!j.contains("shape") || !j.contains("data")) {
        throw ConfigError("inline tensor '" + name + "' needs shape and data");
    }
    t.shape = j["shape"].get<std::vector<std::int64_t>>();
    t.values = j["data"].get<std::vector<double>>();
    t.dtype = j.contains("dtype") ? dtype_from_name(j["dtype"].get<std::string>()) : Dtype::f64;
    if (static_cast<std::int64_t>(t.values.size()) != t.numel()) {
        throw ConfigError("inline tensor '" + name + "' data does not match its shape");
    }
    return t;
}

}  // namespace

MockScript MockScript::from_json(const json& j) {
    MockScript s;
    if (j.contains("fallback_seed")) s.fallback_seed = j["fallback_seed"].get<std::uint64_t>();
    if (j.contains("embedding_seed")) s.embedding_seed = j["embedding_seed"].get<std::uint64_t>();
    if (j.contains("vocab_size")) s.vocab_size = j["vocab_size"].get<int>();
    if (j.contains("eos_token_id") && !j["eos_token_id"].is_null()) {
        s.eos_token_id = j["eos_token_id"].get<int>();
    }
    if (j.contains("default_token_prob")) {
        s.default_token_prob = j["default_token_prob"].get<double>();
        if (s.default_token_prob <= 0.0 || s.default_token_prob > 1.0) {
            throw ConfigError("default_token_prob must lie in (0,1]");
        }
    }
    if (j.contains("embedding_dim")) s.embedding_dim = j["embedding_dim"].get<int>();
    if (j.contains("answers")) {
        for (auto it = j["answers"].begin(); it != j["answers"].end(); ++it) {
            Answer a;
            if (it.value().is_string()) {
                a.text = it.value().get<std::string>();
            } else {
                a.text = it.value().at("text").get<std::string>();
                if (it.value().contains("token_probs")) {
                    a.token_probs = it.value()["token_probs"].get<std::vector<double>>();
                    for (double p : a.token_probs) {
                        if (p <= 0.0 || p > 1.0) {
                            throw ConfigError("scripted token_probs must lie in (0,1]");
                        }
                    }
                }
            }
            s.answers[it.key()] = std::move(a);
        }
    }
    if (j.contains("distributions")) {
        for (auto it = j["distributions"].begin(); it != j["distributions"].end(); ++it) {
            auto probs = it.value().get<std::vector<double>>();
            TokenDistribution check{"", probs};
            check.validate();
            s.distributions[it.key()] = std::move(probs);
        }
    }
    if (j.contains("token_pieces")) {
        for (auto it = j["token_pieces"].begin(); it != j["token_pieces"].end(); ++it) {
            s.token_pieces[std::stoi(it.key())] = it.value().get<std::string>();
        }
    }
    if (j.contains("weights")) {
        TensorMap map;
        for (auto it = j["weights"].begin(); it != j["weights"].end(); ++it) {
            map.put(it.key(), tensor_from_json(it.key(), it.value()));
        }
        s.weights = std::move(map);
    } else if (j.contains("weights_path")) {
        s.weights = tensor_load(j["weights_path"].get<std::string>());
    }
    return s;
}

MockScript MockScript::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mock script '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("mock script '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

MockBackend::MockBackend(ModelDescriptor descriptor, MockScript script)
    : descriptor_(std::move(descriptor)), script_(std::move(script)) {}

BackendCapabilities MockBackend::capabilities() const {
    BackendCapabilities caps;
    caps.supports_text = true;
    caps.supports_token_distribution = script_.vocab_size > 0;
    caps.supports_weights = script_.weights.has_value();
    caps.supports_embedding = true;
    return caps;
}

const MockScript::Answer* MockBackend::lookup_answer(const std::string& prompt) const {
    auto exact = script_.answers.find(prompt);
    if (exact != script_.answers.end()) return &exact->second;

    // Most specific (longest total matched key text) wins; the map's key
    // ordering breaks ties deterministically.
    const MockScript::Answer* best = nullptr;
    std::size_t best_specificity = 0;
    for (const auto& [key, answer] : script_.answers) {
        std::size_t specificity = 0;
        bool all = true;
        for (const auto& part : split_composite(key)) {
            if (part.empty() || prompt.find(part) == std::string::npos) {
                all = false;
                break;
            }
            specificity += part.size();
        }
        if (all && specificity > best_specificity) {
            best_specificity = specificity;
            best = &answer;
        }
    }
    return best;
}

GenerationOutput MockBackend::generate_text(const std::string& prompt,
                                            const GenerationParams& params) {
    GenerationOutput out;
    const MockScript::Answer* scripted = lookup_answer(prompt);
    std::vector<double> probs;
    if (scripted) {
        out.text = scripted->text;
        probs = scripted->token_probs.empty() ? std::vector<double>{script_.default_token_prob}
                                              : scripted->token_probs;
    } else {
        std::uint64_t h = fnv1a(prompt, script_.fallback_seed ^ 0x9e3779b97f4a7c15ULL);
        h = fnv1a_combine(h, params.seed);
        h = fnv1a(descriptor_.id, h);
        out.text = "~" + descriptor_.id + ":" + hex64(h).substr(0, 12);
        probs = {script_.default_token_prob};
    }
    out.tokens.emplace();
    const int id_space = script_.vocab_size > 0 ? script_.vocab_size : 997;
    std::uint64_t h = fnv1a(out.text, script_.fallback_seed);
    for (double p : probs) {
        h = fnv1a_combine(h, 0x5bd1e995);
        out.tokens->push_back({static_cast<int>(h % id_space), std::log(p)});
    }
    out.finish_reason = FinishReason::stop;
    return out;
}

TokenDistribution MockBackend::next_token_distribution(std::span<const int> context) {
    if (script_.vocab_size <= 0) {
        throw CapabilityError(descriptor_.id + " has no scripted vocabulary");
    }
    std::string key;
    for (std::size_t i = 0; i < context.size(); ++i) {
        if (i) key += ',';
        key += std::to_string(context[i]);
    }
    TokenDistribution dist;
    dist.vocab_group = descriptor_.vocab_group;
    auto it = script_.distributions.find(key);
    if (it != script_.distributions.end()) {
        dist.probs = it->second;
    } else {
        dist.probs.assign(script_.vocab_size, 1.0 / script_.vocab_size);
    }
    return dist;
}

std::vector<double> MockBackend::embed_text(const std::string& text) {
    return hash_embed(text, script_.embedding_dim, script_.embedding_seed);
}

const TensorMap& MockBackend::weights() {
    if (!script_.weights) {
        throw CapabilityError(descriptor_.id + " has no scripted weights");
    }
    return *script_.weights;
}

std::string MockBackend::token_piece(int token_id) const {
    auto it = script_.token_pieces.find(token_id);
    if (it != script_.token_pieces.end()) return it->second;
    return "[" + std::to_string(token_id) + "]";
}

std::vector<double> hash_embed(const std::string& text, int dim, std::uint64_t seed) {
    std::vector<double> vec(dim, 0.0);
    if (text.empty()) return vec;
    for (int n = 1; n <= 3; ++n) {
        if (static_cast<int>(text.size()) < n) break;
        for (std::size_t i = 0; i + n <= text.size(); ++i) {
            std::uint64_t h = fnv1a(std::string_view(text.data() + i, n), seed + n);
            const double sign = (h >> 63) ? 1.0 : -1.0;
            vec[h % dim] += sign;
        }
    }
    double norm = 0.0;
    for (double v : vec) norm += v * v;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& v : vec) v /= norm;
    }
    return vec;
}

}  // namespace chorus
