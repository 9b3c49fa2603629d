#include "chorus/http_backend.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "chorus/errors.hpp"
#include "chorus/util.hpp"

namespace chorus {

using nlohmann::json;

HttpBackend::HttpBackend(ModelDescriptor descriptor, HttpBackendConfig config)
    : descriptor_(std::move(descriptor)),
      config_(std::move(config)),
      gate_(config_.max_in_flight) {
    if (config_.base_url.empty()) throw ConfigError("http backend needs a base_url");
}

BackendCapabilities HttpBackend::capabilities() const {
    BackendCapabilities caps;
    caps.supports_text = true;
    return caps;
}

namespace {

FinishReason parse_finish_reason(const std::string& reason) {
    if (reason == "stop") return FinishReason::stop;
    if (reason == "length") return FinishReason::length;
    return FinishReason::error;
}

}  // namespace

GenerationOutput HttpBackend::generate_text(const std::string& prompt,
                                            const GenerationParams& params) {
    json body = {
        {"model", config_.model},
        {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
        {"max_tokens", params.max_new_tokens},
        {"temperature", params.temperature},
        {"top_p", params.top_p},
        {"seed", params.seed},
        {"logprobs", true},
    };
    if (config_.top_logprobs > 0) body["top_logprobs"] = config_.top_logprobs;

    httplib::Headers headers;
    if (!config_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    }

    gate_.acquire();
    struct Release {
        ConcurrencyGate* g;
        ~Release() { g->release(); }
    } release{&gate_};

    std::string payload = body.dump();
    std::string last_error;
    int backoff_ms = config_.initial_backoff_ms;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout_seconds);
        client.set_read_timeout(config_.timeout_seconds);
        auto res = client.Post("/v1/chat/completions", headers, payload, "application/json");
        if (!res) {
            last_error = "connection failed (" + httplib::to_string(res.error()) + ")";
            continue;  // retryable
        }
        if (res->status >= 500) {
            last_error = "server returned status " + std::to_string(res->status);
            continue;  // retryable
        }
        if (res->status < 200 || res->status >= 300) {
            throw TransportError(descriptor_.id + ": endpoint returned status " +
                                 std::to_string(res->status));
        }

        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::exception& e) {
            throw TransportError(descriptor_.id + ": unparseable response body: " + e.what());
        }
        if (!reply.contains("choices") || reply["choices"].empty()) {
            throw TransportError(descriptor_.id + ": response carries no choices");
        }
        const json& choice = reply["choices"][0];

        GenerationOutput out;
        if (choice.contains("message") && choice["message"].contains("content") &&
            !choice["message"]["content"].is_null()) {
            out.text = choice["message"]["content"].get<std::string>();
        }
        out.finish_reason = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                                ? parse_finish_reason(choice["finish_reason"].get<std::string>())
                                : FinishReason::stop;
        if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
            choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
            out.tokens.emplace();
            for (const json& entry : choice["logprobs"]["content"]) {
                TokenLogprob tl;
                const std::string token_text =
                    entry.contains("token") ? entry["token"].get<std::string>() : "";
                tl.token_id = static_cast<int>(fnv1a(token_text) % 1000000007ULL);
                tl.logprob = entry.contains("logprob") ? entry["logprob"].get<double>() : 0.0;
                if (tl.logprob > 0.0) tl.logprob = 0.0;
                out.tokens->push_back(tl);
            }
        }
        return out;
    }
    throw TransportError(descriptor_.id + ": unreachable after " +
                         std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

}  // namespace chorus
