#include "chorus/pool.hpp"

#include <cstdlib>
#include <filesystem>
#include <set>

#include "chorus/errors.hpp"
#include "chorus/evalkit.hpp"
#include "chorus/http_backend.hpp"
#include "chorus/mock_backend.hpp"

namespace chorus {

using nlohmann::json;

ModelPool::ModelPool(std::vector<BackendPtr> members) : members_(std::move(members)) {
    std::set<std::string> seen;
    for (const auto& m : members_) {
        if (!seen.insert(m->descriptor().id).second) {
            throw ConfigError("duplicate model id '" + m->descriptor().id + "' in pool");
        }
    }
}

ModelBackend& ModelPool::at(std::size_t i) const {
    if (i >= members_.size()) throw ArgumentError("pool index out of range");
    return *members_[i];
}

const BackendPtr& ModelPool::ptr(std::size_t i) const {
    if (i >= members_.size()) throw ArgumentError("pool index out of range");
    return members_[i];
}

ModelBackend& ModelPool::by_id(const std::string& id) const {
    int idx = index_of(id);
    if (idx < 0) throw ArgumentError("no model '" + id + "' in pool");
    return *members_[idx];
}

bool ModelPool::contains(const std::string& id) const { return index_of(id) >= 0; }

int ModelPool::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < members_.size(); ++i) {
        if (members_[i]->descriptor().id == id) return static_cast<int>(i);
    }
    return -1;
}

std::vector<std::string> ModelPool::ids() const {
    std::vector<std::string> out;
    out.reserve(members_.size());
    for (const auto& m : members_) out.push_back(m->descriptor().id);
    return out;
}

void ModelPool::push_back(BackendPtr backend) {
    if (contains(backend->descriptor().id)) {
        throw ConfigError("duplicate model id '" + backend->descriptor().id + "' in pool");
    }
    members_.push_back(std::move(backend));
}

ModelPool ModelPool::without(std::size_t i) const {
    if (i >= members_.size()) throw ArgumentError("pool index out of range");
    std::vector<BackendPtr> rest;
    rest.reserve(members_.size() - 1);
    for (std::size_t j = 0; j < members_.size(); ++j) {
        if (j != i) rest.push_back(members_[j]);
    }
    return ModelPool(std::move(rest));
}

WeightStoreBackend::WeightStoreBackend(ModelDescriptor descriptor, std::string path)
    : descriptor_(std::move(descriptor)), path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) {
        throw ConfigError("weight store '" + path_ + "' does not exist");
    }
}

BackendCapabilities WeightStoreBackend::capabilities() const {
    BackendCapabilities caps;
    caps.supports_weights = true;
    return caps;
}

GenerationOutput WeightStoreBackend::generate_text(const std::string&, const GenerationParams&) {
    throw CapabilityError(descriptor_.id + " is a weight store and cannot generate text");
}

const TensorMap& WeightStoreBackend::weights() {
    std::lock_guard lock(mu_);
    if (!cached_) cached_ = tensor_load(path_);
    return *cached_;
}

namespace {

std::string resolve_path(const std::string& path, const std::string& base_dir) {
    if (base_dir.empty() || path.empty()) return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(base_dir) / p).string();
}

ModelDescriptor parse_descriptor(const json& spec) {
    ModelDescriptor d;
    if (!spec.contains("id") || !spec["id"].is_string()) {
        throw ConfigError("model spec needs a string 'id'");
    }
    d.id = spec["id"].get<std::string>();
    d.display_name = spec.value("display_name", d.id);
    d.description = spec.value("description", "");
    d.vocab_group = spec.value("vocab_group", "");
    d.architecture_tag = spec.value("architecture_tag", "");
    if (spec.contains("param_count")) {
        if (spec["param_count"].is_number_integer() &&
            spec["param_count"].get<std::int64_t>() < 0) {
            throw ConfigError("param_count must be non-negative for model '" + d.id + "'");
        }
        d.param_count = spec["param_count"].get<std::uint64_t>();
    }
    return d;
}

BackendPtr build_backend(const ModelDescriptor& descriptor, const json& backend_spec,
                         const std::string& base_dir) {
    const std::string type = backend_spec.value("type", "mock");
    if (type == "mock") {
        MockScript script;
        if (backend_spec.contains("script_path")) {
            script = MockScript::from_file(
                resolve_path(backend_spec["script_path"].get<std::string>(), base_dir));
        } else if (backend_spec.contains("script")) {
            script = MockScript::from_json(backend_spec["script"]);
        }
        return std::make_shared<MockBackend>(descriptor, std::move(script));
    }
    if (type == "http") {
        HttpBackendConfig cfg;
        if (!backend_spec.contains("base_url")) {
            throw ConfigError("http backend for '" + descriptor.id + "' needs a base_url");
        }
        cfg.base_url = backend_spec["base_url"].get<std::string>();
        cfg.model = backend_spec.value("model", descriptor.id);
        // Credentials come from the environment only, never from the config,
        // so manifests stay complete and shareable.
        if (backend_spec.contains("api_key_env")) {
            const char* key = std::getenv(backend_spec["api_key_env"].get<std::string>().c_str());
            if (key) cfg.api_key = key;
        }
        cfg.max_retries = backend_spec.value("max_retries", cfg.max_retries);
        cfg.initial_backoff_ms = backend_spec.value("initial_backoff_ms", cfg.initial_backoff_ms);
        cfg.timeout_seconds = backend_spec.value("timeout_seconds", cfg.timeout_seconds);
        cfg.max_in_flight = backend_spec.value("max_in_flight", cfg.max_in_flight);
        cfg.top_logprobs = backend_spec.value("top_logprobs", cfg.top_logprobs);
        return std::make_shared<HttpBackend>(descriptor, std::move(cfg));
    }
    if (type == "weights") {
        if (!backend_spec.contains("path")) {
            throw ConfigError("weight-store backend for '" + descriptor.id + "' needs a path");
        }
        return std::make_shared<WeightStoreBackend>(
            descriptor, resolve_path(backend_spec["path"].get<std::string>(), base_dir));
    }
    throw ConfigError("unknown backend type '" + type + "' for model '" + descriptor.id + "'");
}

}  // namespace

ModelPool load_pool(const json& spec, const std::string& base_dir) {
    if (!spec.contains("models") || !spec["models"].is_array() || spec["models"].empty()) {
        throw ConfigError("pool spec needs a nonempty 'models' array");
    }
    std::vector<BackendPtr> members;
    std::set<std::string> seen;
    for (const json& m : spec["models"]) {
        ModelDescriptor d = parse_descriptor(m);
        if (!seen.insert(d.id).second) throw ConfigError("duplicate model id '" + d.id + "'");
        if (!m.contains("backend")) {
            throw ConfigError("model '" + d.id + "' is missing its backend endpoint");
        }
        members.push_back(build_backend(d, m["backend"], base_dir));
    }
    ModelPool pool(std::move(members));
    if (spec.contains("diversity")) {
        const json& div = spec["diversity"];
        pool = build_diversity_pool(pool, div.value("a", static_cast<int>(pool.size())),
                                    div.value("b", 1));
    }
    return pool;
}

}  // namespace chorus
