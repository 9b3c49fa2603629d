#pragma once

#include <condition_variable>
#include <mutex>
#include <string>

#include "chorus/model.hpp"

namespace chorus {

// Bounds concurrent in-flight requests against one backend.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(int cap) : cap_(cap > 0 ? cap : 1) {}

    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return in_flight_ < cap_; });
        ++in_flight_;
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int cap_;
    int in_flight_ = 0;
};

struct HttpBackendConfig {
    std::string base_url;       // e.g. "http://127.0.0.1:8089"
    std::string model;          // remote model name sent on the wire
    std::string api_key;        // empty -> no Authorization header
    int max_retries = 3;        // transport failures retried with backoff
    int initial_backoff_ms = 250;
    int timeout_seconds = 120;
    int max_in_flight = 8;
    int top_logprobs = 0;       // forwarded when > 0
};

// OpenAI-compatible chat-completions client: POST /v1/chat/completions with
// messages, max_tokens, temperature, top_p, seed, logprobs; reads
// choices[0].message.content and choices[0].logprobs.content[*].
//
// Token ids on this path are opaque hashes of the returned token strings;
// only the logprobs are meaningful to callers (confidence statistics).
class HttpBackend : public ModelBackend {
public:
    HttpBackend(ModelDescriptor descriptor, HttpBackendConfig config);

    const ModelDescriptor& descriptor() const override { return descriptor_; }
    BackendCapabilities capabilities() const override;
    GenerationOutput generate_text(const std::string& prompt,
                                   const GenerationParams& params) override;

private:
    ModelDescriptor descriptor_;
    HttpBackendConfig config_;
    ConcurrencyGate gate_;
};

}  // namespace chorus
