#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chorus/collab_weight.hpp"
#include "chorus/evalkit.hpp"
#include "chorus/model.hpp"
#include "chorus/pool.hpp"
#include "chorus/prompts.hpp"

namespace chorus {

struct Message {
    std::string model_id;
    std::string role;  // "answer", "feedback:<target>", "summary", an action name, ...
    std::string text;
};

// Iterated exchange record. Messages in round r only reference texts from
// rounds before r.
struct Transcript {
    std::vector<std::vector<Message>> rounds;
    std::string final_answer;

    nlohmann::json to_json() const;
};

// Directed interaction structure over pool members. Node order is the fixed
// topological order (pool order); when `acyclic` is set every edge points
// forward. `receives_query` and `answer_node` default to everyone seeing the
// query and the last node answering.
struct InteractionGraph {
    std::vector<std::string> nodes;
    std::vector<std::pair<int, int>> edges;
    bool acyclic = true;
    std::vector<bool> receives_query;  // empty means all true
    int answer_node = -1;              // -1 means the last node

    void validate() const;
    std::vector<int> in_neighbors(int node) const;
    bool node_receives_query(int node) const {
        return receives_query.empty() || receives_query[node];
    }
    int effective_answer_node() const {
        return answer_node >= 0 ? answer_node : static_cast<int>(nodes.size()) - 1;
    }
    nlohmann::json to_json() const;
};

struct PreferenceRecord {
    std::string instruction;
    std::string winner_id;
    std::string loser_id;
    std::string winner_text;
    std::string loser_text;
    double winner_rating_before = 0.0;
    double loser_rating_before = 0.0;
    double winner_rating_after = 0.0;
    double loser_rating_after = 0.0;

    nlohmann::json to_json() const;
};

// Elo-style ratings plus the append-only contest history.
struct ReputationState {
    std::vector<std::pair<std::string, double>> ratings;  // pool order
    std::vector<PreferenceRecord> history;

    double rating(const std::string& id) const;
    double total() const;
};

// Independent answers, then r-1 refinement rounds where each model sees all
// other answers; a summarizer produces the final answer.
Transcript multiagent_debate(const ModelPool& pool, const std::string& query, int rounds,
                             ModelBackend& summarizer, const GenerationParams& params,
                             const PromptLibrary& prompts = PromptLibrary::defaults());

// Like debate, with a feedback phase (every model critiques every other
// answer) as its own transcript round before each refinement.
Transcript multiagent_feedback(const ModelPool& pool, const std::string& query, int rounds,
                               ModelBackend& summarizer, const GenerationParams& params,
                               const PromptLibrary& prompts = PromptLibrary::defaults());

struct BlenderResult {
    std::string final_text;
    std::vector<std::string> ranking;  // pool ids, best first
    std::vector<int> wins;             // pool order
    std::vector<Message> responses;
};

// Pairwise-judge ranking, then a fuser merges the top-k responses.
BlenderResult llm_blender(const ModelPool& pool, const std::string& query, ModelBackend& ranker,
                          ModelBackend& fuser, int top_k, const GenerationParams& params,
                          const PromptLibrary& prompts = PromptLibrary::defaults());

struct KnowledgeCardResult {
    std::string final_text;
    std::vector<std::string> knowledge;  // one paragraph per pool member
    std::string reader_prompt;
};

KnowledgeCardResult knowledge_card(const ModelPool& pool, const std::string& query,
                                   ModelBackend& reader, const GenerationParams& params,
                                   const PromptLibrary& prompts = PromptLibrary::defaults());

// Plurality winner; ties break to the answer whose first occurrence is
// earliest. Callers normalize answers first (see extract_answer).
std::string majority_vote(const std::vector<std::string>& answers);

// PSO over edge weights for the pool's DAG: per-node input weights, all
// (i < j) pair weights, and per-node output weights, binarized at zero.
InteractionGraph hetero_swarms_fit(const ModelPool& pool,
                                   const std::function<double(const InteractionGraph&)>& evaluator,
                                   const PsoParams& pso, std::uint64_t seed);

// Executes nodes in topological order; each prompt carries the query (when
// the node receives it) plus incoming neighbors' outputs; the answer node's
// output is the final text.
struct SwarmInferResult {
    std::string final_text;
    std::vector<std::string> node_outputs;
};
SwarmInferResult hetero_swarms_infer(const InteractionGraph& graph, const ModelPool& pool,
                                     const std::string& query, const GenerationParams& params,
                                     const PromptLibrary& prompts = PromptLibrary::defaults());

struct FinetuningDatasets {
    struct GenerationExample {
        std::string instruction;
        std::string answer;  // the consensus
        std::string model_id;
        int round = 0;
    };
    struct CriticExample {
        std::string instruction;
        std::string wrong_answer;
        std::string consensus;
        std::string model_id;
        int round = 0;
    };
    std::vector<GenerationExample> generation;
    std::vector<CriticExample> critic;
    std::vector<std::string> skipped;  // "<round>:<instance>" without consensus
};

// Majority-vote consensus over per-round answers builds generation and
// critic datasets for an external fine-tuning hook.
FinetuningDatasets multiagent_finetuning_build(const ModelPool& pool,
                                               const std::vector<DatasetRecord>& dev, int rounds,
                                               const GenerationParams& params,
                                               const PromptLibrary& prompts = PromptLibrary::defaults());

// The paired inference pipeline: debate rounds, then majority vote over the
// last round's normalized answers.
struct DebateVoteResult {
    Transcript transcript;
    std::string final_answer;
};
DebateVoteResult multiagent_finetuning_infer(const ModelPool& pool, const std::string& query,
                                             int rounds, TaskKind vote_kind,
                                             const GenerationParams& params,
                                             const PromptLibrary& prompts = PromptLibrary::defaults());

// Synchronous rounds over an arbitrary (possibly cyclic) graph: each model
// updates from its in-neighbors' previous-round answers; majority vote over
// the last round decides.
Transcript structured_interaction(const ModelPool& pool, const InteractionGraph& graph,
                                  const std::string& query, int rounds, TaskKind vote_kind,
                                  const GenerationParams& params,
                                  const PromptLibrary& prompts = PromptLibrary::defaults());

extern const std::vector<std::string> kBlackboardActions;  // propose, extend, ...

struct BlackboardEntry {
    int turn = 0;
    std::string model_id;
    std::string action;
    std::string text;
};

struct BbmasResult {
    Transcript transcript;
    std::vector<BlackboardEntry> board;
    std::vector<std::optional<int>> votes;  // per model; empty = abstained
    int winning_entry = -1;
};

// Round-robin blackboard turns with five actions, then an entry vote.
BbmasResult bbmas(const ModelPool& pool, const std::string& query, int rounds,
                  const GenerationParams& params,
                  const PromptLibrary& prompts = PromptLibrary::defaults());

enum class JudgeWeighting { rating_share, uniform };

struct SpartaResult {
    ReputationState state;
    std::vector<std::string> warnings;
};

// Seeded pairwise contests judged by the rest of the pool; judge votes are
// weighted by rating share, the winner takes a zero-sum Elo update (K=32),
// and every contest appends a preference record.
SpartaResult sparta_collect(const ModelPool& pool, const std::vector<DatasetRecord>& instructions,
                            int rounds, JudgeWeighting weighting, std::uint64_t seed,
                            const GenerationParams& params,
                            const PromptLibrary& prompts = PromptLibrary::defaults());

std::string agglm_aggregate(ModelBackend& aggregator, const std::string& query,
                            const std::vector<std::string>& responses,
                            const GenerationParams& params,
                            const PromptLibrary& prompts = PromptLibrary::defaults());

struct AgglmSplits {
    std::vector<std::string> hard_ids;  // majority vote wrong
    std::vector<std::string> easy_ids;  // majority vote right
};

AgglmSplits agglm_build_splits(const ModelPool& pool, const std::vector<DatasetRecord>& dev,
                               const GenerationParams& params);

}  // namespace chorus
