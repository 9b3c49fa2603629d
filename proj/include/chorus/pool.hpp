#pragma once

#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chorus/model.hpp"

namespace chorus {

// Ordered set of backends participating in one collaboration run. Order is
// declaration order and doubles as the cascade order and the topological
// order for graph methods.
class ModelPool {
public:
    ModelPool() = default;
    explicit ModelPool(std::vector<BackendPtr> members);

    std::size_t size() const { return members_.size(); }
    bool empty() const { return members_.empty(); }

    ModelBackend& at(std::size_t i) const;
    const BackendPtr& ptr(std::size_t i) const;

    // Throws ArgumentError when the id is not in the pool.
    ModelBackend& by_id(const std::string& id) const;
    bool contains(const std::string& id) const;
    int index_of(const std::string& id) const;  // -1 when absent

    std::vector<std::string> ids() const;

    void push_back(BackendPtr backend);

    // Pool with member i omitted (leave-one-out analyses).
    ModelPool without(std::size_t i) const;

    auto begin() const { return members_.begin(); }
    auto end() const { return members_.end(); }

private:
    std::vector<BackendPtr> members_;
};

// Backend for an on-disk parameter store; exposes weights only.
class WeightStoreBackend : public ModelBackend {
public:
    WeightStoreBackend(ModelDescriptor descriptor, std::string path);

    const ModelDescriptor& descriptor() const override { return descriptor_; }
    BackendCapabilities capabilities() const override;
    GenerationOutput generate_text(const std::string&, const GenerationParams&) override;
    const TensorMap& weights() override;

private:
    ModelDescriptor descriptor_;
    std::string path_;
    std::mutex mu_;
    std::optional<TensorMap> cached_;
};

// Same backend under a different descriptor (diversity-pool replicas).
class AliasBackend : public ModelBackend {
public:
    AliasBackend(ModelDescriptor descriptor, BackendPtr inner)
        : descriptor_(std::move(descriptor)), inner_(std::move(inner)) {}

    const ModelDescriptor& descriptor() const override { return descriptor_; }
    BackendCapabilities capabilities() const override { return inner_->capabilities(); }
    GenerationOutput generate_text(const std::string& prompt,
                                   const GenerationParams& params) override {
        return inner_->generate_text(prompt, params);
    }
    TokenDistribution next_token_distribution(std::span<const int> context) override {
        return inner_->next_token_distribution(context);
    }
    std::vector<double> embed_text(const std::string& text) override {
        return inner_->embed_text(text);
    }
    const TensorMap& weights() override { return inner_->weights(); }
    std::optional<int> eos_token_id() const override { return inner_->eos_token_id(); }
    std::string token_piece(int token_id) const override { return inner_->token_piece(token_id); }

private:
    ModelDescriptor descriptor_;
    BackendPtr inner_;
};

// Builds a pool from a declarative JSON spec: a "models" array of descriptor
// plus backend entries, optionally wrapped by a "diversity" {a, b} setting.
// Relative paths inside the document resolve against `base_dir` when given.
ModelPool load_pool(const nlohmann::json& spec, const std::string& base_dir = "");

}  // namespace chorus
