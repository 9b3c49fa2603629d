#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "chorus/evalkit.hpp"
#include "chorus/model.hpp"
#include "chorus/pool.hpp"
#include "chorus/prompts.hpp"

namespace chorus {

enum class ConfidenceStatistic { min_token_prob, geomean_token_prob, top1_next_prob };

ConfidenceStatistic confidence_statistic_from_string(const std::string& s);
std::string to_string(ConfidenceStatistic s);

// Uncertainty gate: a model is uncertain exactly when its confidence falls
// strictly below the threshold.
struct ConfidenceRule {
    ConfidenceStatistic statistic = ConfidenceStatistic::geomean_token_prob;
    double threshold = 0.5;
};

// Confidence of a completed draft under the rule's statistic. Requires the
// draft to carry token logprobs.
double draft_confidence(const GenerationOutput& output, ConfidenceStatistic statistic);

// Routing policy. `prompted` defers to a router model at query time;
// `knn` stores (dev embedding, best model) pairs; `tabular` stores
// per-(model, task) scores with nearest-dev-query task prediction.
struct SelectorPolicy {
    enum class Kind { prompted, tabular, knn };

    struct Memory {
        std::vector<double> embedding;
        std::string label;  // model id (knn) or task tag (tabular)
    };

    Kind kind = Kind::knn;
    std::vector<std::string> pool_ids;  // route closure and tie-break order

    // knn
    int k = 3;
    std::vector<Memory> memory;
    BackendPtr embedder;

    // tabular
    std::vector<std::pair<std::string, std::vector<double>>> task_scores;  // task -> per-model
    std::vector<double> global_means;                                      // per-model
    std::vector<Memory> task_memory;

    // prompted
    BackendPtr router;
    std::string model_block;  // rendered candidate list for the router prompt
};

// The candidate block and full prompt the router model sees; exposed so
// callers (and tests) can inspect exactly what was rendered.
std::string render_model_block(const ModelPool& pool);
std::string render_route_prompt(const ModelPool& pool, const std::string& query,
                                const PromptLibrary& prompts = PromptLibrary::defaults());

// Prompts `router` to pick a pool member by description. Unparseable output
// and transport failures fall back to pool[0]; the latter records a warning.
std::string prompt_route(ModelBackend& router, const ModelPool& pool, const std::string& query,
                         const PromptLibrary& prompts = PromptLibrary::defaults(),
                         std::uint64_t seed = 0, std::vector<std::string>* warnings = nullptr);

// Labels each dev query with the best-scoring model (ties to earlier pool
// members) and memorizes (embedding, label) pairs for k-NN routing.
SelectorPolicy fit_trained_router(const ModelPool& pool, const std::vector<DatasetRecord>& dev,
                                  BackendPtr embedder, int k = 3,
                                  const GenerationParams& params = {});

// Builds a per-(model, task) score table from dev accuracy; queries route to
// the argmax model of their predicted task (nearest dev query's tag).
SelectorPolicy fit_graph_router(const ModelPool& pool, const std::vector<DatasetRecord>& dev,
                                BackendPtr embedder, const GenerationParams& params = {});

std::string route(const SelectorPolicy& policy, const std::string& query, std::uint64_t seed = 0);

// Tabular routing with an explicit task tag; unseen tags fall back to the
// global per-model means.
std::string route_task(const SelectorPolicy& policy, const std::string& task);

struct CascadeResult {
    GenerationOutput output;
    std::string deciding_id;
    int deciding_index = 0;
    std::vector<std::optional<double>> confidences;  // per tried model
    std::vector<std::string> warnings;
};

// Models answer in pool order; the first whose draft confidence reaches the
// threshold decides. Transport failures skip to the next model; the last
// model always answers.
CascadeResult cascade(const ModelPool& pool, const std::string& query, const ConfidenceRule& rule,
                      const GenerationParams& params);

struct AttributionSpan {
    int patch_index = 0;
    std::string model_id;
    int start = 0;   // token offset
    int length = 0;  // token count
};

struct AttributedOutput {
    GenerationOutput output;
    std::vector<AttributionSpan> spans;
    nlohmann::json log;  // method-specific trace (inspections, decisions)
};

// Token loop: the base model emits while its top-1 next-token probability is
// at or above the threshold; otherwise the first nudger emits tokens one at
// a time (up to nudge_cap), after which control returns to the base.
AttributedOutput nudging_generate(ModelBackend& base, const ModelPool& nudgers,
                                  const std::string& query, const ConfidenceRule& rule,
                                  int nudge_cap, const GenerationParams& params);

using Selector = std::variant<BackendPtr, SelectorPolicy>;

// Models take turns producing fixed-size token patches; the selector picks
// the writer of each patch.
AttributedOutput switch_generation(const Selector& selector, const ModelPool& pool,
                                   const std::string& query, int patch_size,
                                   const GenerationParams& params,
                                   const PromptLibrary& prompts = PromptLibrary::defaults());

using DeferralPolicy = std::variant<ConfidenceRule, SelectorPolicy>;

// Per-token deferral between a base and an assistant model.
AttributedOutput co_llm_generate(ModelBackend& base, ModelBackend& assistant,
                                 const DeferralPolicy& deferral, const std::string& query,
                                 const GenerationParams& params);

// Random-position inspection: when generator and mentor disagree on the next
// token, the decider picks who writes the following patch.
AttributedOutput mentor_collab_generate(ModelBackend& generator, ModelBackend& mentor,
                                        double inspect_prob, const Selector& decider,
                                        int patch_size, std::uint64_t inspect_seed,
                                        const std::string& query, const GenerationParams& params,
                                        const PromptLibrary& prompts = PromptLibrary::defaults());

}  // namespace chorus
