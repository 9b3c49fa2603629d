#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chorus/model.hpp"
#include "chorus/pool.hpp"
#include "chorus/prompts.hpp"

namespace chorus {

enum class TaskKind { multiple_choice, exact_match, open_ended, code };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

// An evaluation instance. Gold answers are present exactly when the task is
// objective (everything except open_ended).
struct DatasetRecord {
    std::string id;
    std::string prompt;
    std::vector<std::string> gold;
    TaskKind task_kind = TaskKind::exact_match;
    std::string domain_tag;

    bool objective() const { return task_kind != TaskKind::open_ended; }
};

// Sentinel returned when nothing extractable is found; never matches gold.
extern const std::string kNoAnswer;

// Row name carrying the collaborative system's correctness.
extern const std::string kSystemRow;

// Per-(model, instance) correctness, plus an optional system row.
class CorrectnessMatrix {
public:
    CorrectnessMatrix() = default;
    explicit CorrectnessMatrix(std::vector<std::string> instance_ids)
        : instance_ids_(std::move(instance_ids)) {}

    void add_row(const std::string& id, std::vector<bool> bits);
    const std::vector<bool>* find_row(const std::string& id) const;
    const std::vector<std::string>& instance_ids() const { return instance_ids_; }
    const std::vector<std::pair<std::string, std::vector<bool>>>& rows() const { return rows_; }

    nlohmann::json to_json() const;
    static CorrectnessMatrix from_json(const nlohmann::json& j);

private:
    std::vector<std::string> instance_ids_;
    std::vector<std::pair<std::string, std::vector<bool>>> rows_;
};

struct DatasetScore {
    std::string dataset;
    std::string domain;
    double value = 0.0;
    // Min-max bounds over the systems being compared; required for the IF
    // domain, ignored elsewhere.
    std::optional<double> if_min;
    std::optional<double> if_max;
};

struct ScoreReport {
    std::vector<DatasetScore> datasets;          // values after IF normalization
    std::vector<std::pair<std::string, double>> per_domain;
    double overall = 0.0;
    std::string normalization_note;

    nlohmann::json to_json() const;
};

struct ScoreResult {
    double value = 0.0;
    bool flagged = false;  // set when a judge reply was unparseable
};

// JSONL loader: one record per line with fields {id, prompt, gold?,
// task_kind, domain_tag}. `path` may be a directory holding <split>.jsonl.
std::vector<DatasetRecord> load_dataset(const std::string& path, const std::string& split);

// Seeded uniform sample without replacement, original order preserved;
// identity when the dataset is already within the cap.
std::vector<DatasetRecord> downsample(const std::vector<DatasetRecord>& records, int cap,
                                      std::uint64_t seed);

std::string extract_answer(const std::string& raw, TaskKind kind);

ScoreResult score_instance(const DatasetRecord& record, const std::string& output,
                           ModelBackend* judge = nullptr,
                           const PromptLibrary& prompts = PromptLibrary::defaults(),
                           std::uint64_t seed = 0);

// Min-max-normalizes IF-domain entries, then macro-averages within each
// domain and across domains.
ScoreReport domain_macro_average(const std::vector<DatasetScore>& inputs);

// Fraction of individually-unsolvable instances the system row solves;
// nullopt when no instance is individually unsolvable.
std::optional<double> collaborative_emergence(const CorrectnessMatrix& matrix);

struct LeaveOneOutReport {
    struct Entry {
        std::string omitted_id;
        std::optional<double> score;  // empty when the sub-run failed
    };
    std::vector<Entry> entries;
    double mean = 0.0;
    double std_sample = 0.0;      // n-1 form; matches the reported convention
    double std_population = 0.0;  // n form, surfaced alongside
    bool has_missing = false;
};

LeaveOneOutReport leave_one_out(const std::function<double(const ModelPool&)>& run_method,
                                const ModelPool& pool);

// First `a` models each replicated `b` times; replicas get "#k" suffixed ids
// (originals keep their ids when b == 1).
ModelPool build_diversity_pool(const ModelPool& unique_models, int a, int b);

std::vector<std::string> select_models_prompt(ModelBackend& selector,
                                              const std::vector<ModelDescriptor>& candidates,
                                              int m, const std::string& task = "",
                                              const PromptLibrary& prompts = PromptLibrary::defaults(),
                                              std::uint64_t seed = 0);

struct SelectionResult {
    std::vector<std::string> ids;
    bool exhaustive = true;  // false when the greedy fallback was used
};

// Maximizes the sum of pairwise cosine distances between description
// embeddings over all size-m subsets (exhaustive up to 1e5 subsets, greedy
// farthest-point beyond).
SelectionResult select_models_similarity(ModelBackend& embedder,
                                         const std::vector<ModelDescriptor>& candidates, int m);

}  // namespace chorus
